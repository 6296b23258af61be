#pragma once

// Central finite differences against the tape's gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>


#include "textad/tensor.hpp"

namespace textad::testing {

using LossFn = std::function<Tensor(Tape&)>;

inline double loss_value(const LossFn& f) {
    Tape t(false);
    return f(t).item();
}

// Max relative error over all elements of `leaves`, with denominator
// max(|analytic|, |numeric|, floor). The floor keeps analytically zero
// gradients (attention key biases) from being compared against round-off.
struct FdWorst {
    std::size_t leaf = 0, index = 0;
    double analytic = 0.0, numeric = 0.0;
};

inline double max_relative_error(const LossFn& f, std::vector<Tensor> leaves, double h = 1e-5,
                                 double floor = 1e-5, FdWorst* where = nullptr) {
    for (auto& leaf : leaves) leaf.zero_grad();
    {
        Tape t;
        Tensor loss = f(t);
        t.backward(loss);
    }
    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
        auto x = leaf.data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double orig = x[i];
            x[i] = orig + h;
            const double up = loss_value(f);
            x[i] = orig - h;
            const double down = loss_value(f);
            x[i] = orig;
            const double numeric = (up - down) / (2 * h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
            const double err = std::abs(analytic[i] - numeric) / denom;
            if (err > worst) {
                worst = err;
                if (where) *where = {li, i, analytic[i], numeric};
            }
        }
    }
    return worst;
}

} // namespace textad::testing
