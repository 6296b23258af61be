#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace textad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Reference-counted handle to a dense row-major float64 array. Copies of a
// Tensor alias the same storage; use clone() for an independent copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor filled(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const double> data() const { return impl_->data; }
    std::span<double> data() { return impl_->data; }
    double item() const;
    double operator[](std::size_t i) const { return impl_->data[i]; }
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on);
    // Zero-filled buffer when the tensor requires grad; empty otherwise.
    std::span<const double> grad() const { return impl_->grad; }
    std::span<double> mutable_grad() const { return impl_->grad; }
    void zero_grad();

    Tensor clone() const;
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

struct CrossEntropyResult {
    Tensor loss;          // scalar, mean over positions
    Tensor per_position;  // [n]
};

// Ordered record of primitive operations for one forward pass. Ops are
// members so every intermediate lands on exactly one tape. A tape built with
// record=false computes values only (inference).
class Tape {
public:
    explicit Tape(bool record = true) : recording_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays backward rules in reverse order.
    // Gradients accumulate into leaf grad buffers.
    void backward(const Tensor& loss);
    void reset();

    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, double c);
    // x[..., n] + bias[n]
    Tensor add_bias(const Tensor& x, const Tensor& bias);
    // [m,k]x[k,n] or batched [B,m,k]x[B,k,n]; transpose_b uses b as [.., n,k].
    Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
    Tensor transpose(const Tensor& x, std::size_t dim0, std::size_t dim1);
    Tensor reshape(const Tensor& x, Shape shape);
    Tensor softmax(const Tensor& x);  // over last dim
    Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-12);
    Tensor gelu(const Tensor& x);
    Tensor tanh(const Tensor& x);
    Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);
    // Inverted dropout; element i kept when counter_uniform(mix(key, i)) >= p.
    Tensor dropout(const Tensor& x, double p, std::uint64_t key);
    Tensor mean(const Tensor& x);
    Tensor sum(const Tensor& x);
    Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
    Tensor concat_rows(std::span<const Tensor> parts);
    Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);
    // Per-position -log softmax(logits)[target], shape [n].
    Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);
    CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

private:
    struct Node {
        std::vector<Tensor> inputs;
        Tensor output;
        std::function<void()> backward;
    };

    bool any_requires_grad(std::initializer_list<const Tensor*> inputs) const;
    Tensor make_output(Shape shape, bool requires_grad) const;
    void record(const Tensor& output, std::vector<Tensor> inputs, std::function<void()> backward);

    std::vector<Node> nodes_;
    bool recording_;
    bool consumed_ = false;
};

} // namespace textad
