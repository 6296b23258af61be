#pragma once

#include <span>
#include <vector>

#include "textad/checkpoint.hpp"
#include "textad/tensor.hpp"

namespace textad {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t step = 0;
};

// One bias-corrected Adam update of `param` in place.
void adam_step(Tensor& param, std::span<const double> grad, AdamState& state, const AdamConfig& cfg, double lr);

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    // Applies one update to every parameter using its accumulated grad.
    void step(ParameterSet& params, double lr);
    std::size_t steps() const { return steps_; }

private:
    AdamConfig cfg_;
    std::vector<AdamState> states_;
    std::size_t steps_ = 0;
};

// Scales all grads so their global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(ParameterSet& params, double max_norm);

} // namespace textad
