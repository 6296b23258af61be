#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "textad/tensor.hpp"

namespace textad {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Ordered collection of named trainable tensors. Copying deep-copies the
// storage so a snapshot never aliases the live parameters.
class ParameterSet {
public:
    ParameterSet() = default;
    ParameterSet(const ParameterSet& other);
    ParameterSet& operator=(const ParameterSet& other);
    ParameterSet(ParameterSet&&) noexcept = default;
    ParameterSet& operator=(ParameterSet&&) noexcept = default;

    Tensor& add(std::string name, Tensor tensor);
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    bool contains(const std::string& name) const;

    std::size_t size() const { return entries_.size(); }
    std::size_t total_elements() const;
    const std::vector<NamedTensor>& entries() const { return entries_; }
    std::vector<NamedTensor>& entries() { return entries_; }

    void zero_grad();
    // Copies values from `other` (same names and shapes) without reallocating.
    void assign_values(const ParameterSet& other);
    bool bit_equal(const ParameterSet& other) const;

private:
    std::vector<NamedTensor> entries_;
};

// Binary container: magic, format version, metadata blob (the model
// configuration as JSON), then each tensor as name, rank, extents and raw
// little-endian IEEE-754 doubles. Round-trips bit-exactly.
struct Checkpoint {
    std::string metadata;
    ParameterSet parameters;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

} // namespace textad
