#include "textad/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace textad {

void adam_step(Tensor& param, std::span<const double> grad, AdamState& state, const AdamConfig& cfg, double lr) {
    if (grad.size() != param.numel()) {
        throw ShapeError("adam_step: gradient has " + std::to_string(grad.size()) + " elements, parameter " +
                         shape_str(param.shape()));
    }
    if (state.m.empty()) {
        state.m.assign(param.numel(), 0.0);
        state.v.assign(param.numel(), 0.0);
    } else if (state.m.size() != param.numel()) {
        throw ShapeError("adam_step: optimizer state does not match parameter " + shape_str(param.shape()));
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    auto w = param.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

void Adam::step(ParameterSet& params, double lr) {
    if (states_.empty()) states_.resize(params.size());
    if (states_.size() != params.size()) throw std::invalid_argument("Adam: parameter set changed size");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params.entries()[i].tensor;
        adam_step(p, p.grad(), states_[i], cfg_, lr);
    }
    ++steps_;
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
    double sq = 0.0;
    for (const auto& e : params.entries()) {
        for (double g : e.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& e : params.entries()) {
            for (auto& g : e.tensor.mutable_grad()) g *= s;
        }
    }
    return norm;
}

} // namespace textad
