#include "textad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace textad {

ParameterSet::ParameterSet(const ParameterSet& other) {
    entries_.reserve(other.entries_.size());
    for (const auto& e : other.entries_) entries_.push_back({e.name, e.tensor.clone()});
}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
    if (this != &other) {
        ParameterSet tmp(other);
        *this = std::move(tmp);
    }
    return *this;
}

Tensor& ParameterSet::add(std::string name, Tensor tensor) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    entries_.push_back({std::move(name), std::move(tensor)});
    return entries_.back().tensor;
}

const Tensor& ParameterSet::get(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return e.tensor;
    }
    throw std::out_of_range("no parameter named " + name);
}

Tensor& ParameterSet::get(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).get(name));
}

bool ParameterSet::contains(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return true;
    }
    return false;
}

std::size_t ParameterSet::total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

void ParameterSet::assign_values(const ParameterSet& other) {
    if (other.size() != size()) throw std::invalid_argument("assign_values: parameter count mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto& dst = entries_[i];
        const auto& src = other.entries_[i];
        if (dst.name != src.name || dst.tensor.shape() != src.tensor.shape()) {
            throw std::invalid_argument("assign_values: mismatch at " + dst.name);
        }
        auto d = dst.tensor.data();
        std::copy(src.tensor.data().begin(), src.tensor.data().end(), d.begin());
    }
}

bool ParameterSet::bit_equal(const ParameterSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& a = entries_[i];
        const auto& b = other.entries_[i];
        if (a.name != b.name || a.tensor.shape() != b.tensor.shape()) return false;
        if (std::memcmp(a.tensor.data().data(), b.tensor.data().data(), a.tensor.numel() * sizeof(double)) != 0) {
            return false;
        }
    }
    return true;
}

namespace {

constexpr char kMagic[8] = {'T', 'X', 'A', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_bytes(std::string& out, const std::string& s) {
    put_u64(out, s.size());
    out += s;
}

class Reader {
public:
    explicit Reader(const std::string& b) : buf_(b) {}

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string bytes() {
        const auto n = u64();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string raw(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == buf_.size(); }

private:
    void need(std::uint64_t n) const {
        if (pos_ + n > buf_.size()) throw std::runtime_error("checkpoint truncated");
    }
    const std::string& buf_;
    std::size_t pos_ = 0;
};

} // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, kVersion);
    put_bytes(out, ckpt.metadata);
    put_u64(out, ckpt.parameters.size());
    for (const auto& e : ckpt.parameters.entries()) {
        put_bytes(out, e.name);
        put_u64(out, e.tensor.rank());
        for (auto d : e.tensor.shape()) put_u64(out, d);
        for (double v : e.tensor.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    if (r.raw(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw std::runtime_error("not a checkpoint file");
    if (const auto v = r.u32(); v != kVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(v));
    }
    Checkpoint ckpt;
    ckpt.metadata = r.bytes();
    const auto count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.bytes();
        const auto rank = r.u64();
        Shape shape(rank);
        for (auto& d : shape) d = r.u64();
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) v = std::bit_cast<double>(r.u64());
        ckpt.parameters.add(std::move(name), Tensor::from(std::move(shape), std::move(values), true));
    }
    if (!r.done()) throw std::runtime_error("trailing bytes in checkpoint");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
    const std::string bytes = serialize_checkpoint(ckpt);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return deserialize_checkpoint(ss.str());
}

} // namespace textad
