#include "textad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "textad/rng.hpp"

namespace textad {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

namespace {

void check_shape(const Shape& s) {
    for (auto e : s) {
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(s));
    }
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// C[m,n] += op(A) * op(B), op(A) is m x k, op(B) is k x n.
void gemm_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
              std::size_t k, bool ta, bool tb) {
    if (!ta && !tb) {
        for (std::size_t i = 0; i < m; ++i) {
            double* c = C + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double a = A[i * k + p];
                const double* b = B + p * n;
                for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
            }
        }
    } else if (!ta && tb) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* a = A + i * k;
            for (std::size_t j = 0; j < n; ++j) {
                const double* b = B + j * k;
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += a[p] * b[p];
                C[i * n + j] += s;
            }
        }
    } else if (ta && !tb) {
        for (std::size_t p = 0; p < k; ++p) {
            const double* b = B + p * n;
            for (std::size_t i = 0; i < m; ++i) {
                const double a = A[p * m + i];
                double* c = C + i * n;
                for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += A[p * m + i] * B[j * k + p];
                C[i * n + j] += s;
            }
        }
    }
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

} // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return filled(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
    check_shape(shape);
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->data.assign(shape_numel(shape), value);
    t.impl_->shape = std::move(shape);
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape);
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("Tensor::from: shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    return impl_->data.at(row * last_dim(*this) + col);
}

void Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (on) {
        impl_->grad.assign(impl_->data.size(), 0.0);
    } else {
        impl_->grad.clear();
    }
}

void Tensor::zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    Tensor t;
    t.impl_ = std::make_shared<Impl>(*impl_);
    return t;
}

// ---------------------------------------------------------------------------
// Tape plumbing

bool Tape::any_requires_grad(std::initializer_list<const Tensor*> inputs) const {
    if (!recording_) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor Tape::make_output(Shape shape, bool requires_grad) const {
    return Tensor::zeros(std::move(shape), requires_grad);
}

void Tape::record(const Tensor& output, std::vector<Tensor> inputs, std::function<void()> backward) {
    if (consumed_) throw TapeError("tape already replayed; call reset() before recording");
    nodes_.push_back(Node{std::move(inputs), output, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw TapeError("backward called twice without reset()");
    if (loss.numel() != 1) throw TapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    consumed_ = true;
    if (!loss.requires_grad()) return;
    Tensor seed = loss;
    seed.mutable_grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

void Tape::reset() {
    nodes_.clear();
    consumed_ = false;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) mismatch("add", a.shape(), b.shape());
    const bool rg = any_requires_grad({&a, &b});
    Tensor out = make_output(a.shape(), rg);
    auto o = out.data();
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
    if (rg) {
        record(out, {a, b}, [a, b, out]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.mutable_grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.mutable_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) mismatch("sub", a.shape(), b.shape());
    const bool rg = any_requires_grad({&a, &b});
    Tensor out = make_output(a.shape(), rg);
    auto o = out.data();
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
    if (rg) {
        record(out, {a, b}, [a, b, out]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.mutable_grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.mutable_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) mismatch("mul", a.shape(), b.shape());
    const bool rg = any_requires_grad({&a, &b});
    Tensor out = make_output(a.shape(), rg);
    auto o = out.data();
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
    if (rg) {
        record(out, {a, b}, [a, b, out]() mutable {
            auto g = out.grad();
            auto x = a.data(), y = b.data();
            if (a.requires_grad()) {
                auto ga = a.mutable_grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
            }
            if (b.requires_grad()) {
                auto gb = b.mutable_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
            }
        });
    }
    return out;
}

Tensor Tape::scale(const Tensor& a, double c) {
    const bool rg = any_requires_grad({&a});
    Tensor out = make_output(a.shape(), rg);
    auto o = out.data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * x[i];
    if (rg) {
        record(out, {a}, [a, out, c]() mutable {
            auto g = out.grad();
            auto ga = a.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
        });
    }
    return out;
}

Tensor Tape::add_bias(const Tensor& x, const Tensor& bias) {
    if (bias.rank() != 1 || bias.dim(0) != last_dim(x)) mismatch("add_bias", x.shape(), bias.shape());
    const bool rg = any_requires_grad({&x, &bias});
    const std::size_t n = bias.numel();
    Tensor out = make_output(x.shape(), rg);
    auto o = out.data();
    auto xv = x.data(), bv = bias.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] + bv[i % n];
    if (rg) {
        record(out, {x, bias}, [x, bias, out, n]() mutable {
            auto g = out.grad();
            if (x.requires_grad()) {
                auto gx = x.mutable_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (bias.requires_grad()) {
                auto gb = bias.mutable_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor Tape::matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
    if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) mismatch("matmul", a.shape(), b.shape());
    const bool batched = a.rank() == 3;
    const std::size_t batch = batched ? a.dim(0) : 1;
    if (batched && b.dim(0) != batch) mismatch("matmul", a.shape(), b.shape());
    const std::size_t off = batched ? 1 : 0;
    const std::size_t m = a.dim(off), k = a.dim(off + 1);
    const std::size_t bk = transpose_b ? b.dim(off + 1) : b.dim(off);
    const std::size_t n = transpose_b ? b.dim(off) : b.dim(off + 1);
    if (bk != k) mismatch("matmul", a.shape(), b.shape());

    const bool rg = any_requires_grad({&a, &b});
    Shape os = batched ? Shape{batch, m, n} : Shape{m, n};
    Tensor out = make_output(os, rg);
    {
        const double* A = a.data().data();
        const double* B = b.data().data();
        double* C = out.data().data();
        for (std::size_t s = 0; s < batch; ++s) {
            gemm_acc(A + s * m * k, B + s * k * n, C + s * m * n, m, n, k, false, transpose_b);
        }
    }
    if (rg) {
        record(out, {a, b}, [a, b, out, batch, m, n, k, transpose_b]() mutable {
            const double* G = out.grad().data();
            const double* A = a.data().data();
            const double* B = b.data().data();
            for (std::size_t s = 0; s < batch; ++s) {
                const double* g = G + s * m * n;
                if (a.requires_grad()) {
                    // dA = G * op(B)^T
                    double* ga = a.mutable_grad().data() + s * m * k;
                    gemm_acc(g, B + s * k * n, ga, m, k, n, false, !transpose_b);
                }
                if (b.requires_grad()) {
                    double* gb = b.mutable_grad().data() + s * k * n;
                    if (transpose_b) {
                        // dB (n x k) = G^T * A
                        gemm_acc(g, A + s * m * k, gb, n, k, m, true, false);
                    } else {
                        // dB (k x n) = A^T * G
                        gemm_acc(A + s * m * k, g, gb, k, n, m, true, false);
                    }
                }
            }
        });
    }
    return out;
}

Tensor Tape::transpose(const Tensor& x, std::size_t dim0, std::size_t dim1) {
    const std::size_t r = x.rank();
    if (dim0 >= r || dim1 >= r) {
        throw ShapeError("transpose: dims " + std::to_string(dim0) + "," + std::to_string(dim1) +
                         " out of range for " + shape_str(x.shape()));
    }
    Shape os = x.shape();
    std::swap(os[dim0], os[dim1]);
    std::vector<std::size_t> in_stride(r), out_stride(r);
    for (std::size_t i = r, s1 = 1, s2 = 1; i-- > 0;) {
        in_stride[i] = s1;
        out_stride[i] = s2;
        s1 *= x.dim(i);
        s2 *= os[i];
    }
    // source offset for each destination element
    std::vector<std::size_t> perm_stride = in_stride;
    std::swap(perm_stride[dim0], perm_stride[dim1]);
    const std::size_t total = x.numel();
    std::vector<std::size_t> src(total);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat, off = 0;
        for (std::size_t i = 0; i < r; ++i) {
            const std::size_t idx = rem / out_stride[i];
            rem %= out_stride[i];
            off += idx * perm_stride[i];
        }
        src[flat] = off;
    }
    const bool rg = any_requires_grad({&x});
    Tensor out = make_output(os, rg);
    auto o = out.data();
    auto xv = x.data();
    for (std::size_t i = 0; i < total; ++i) o[i] = xv[src[i]];
    if (rg) {
        record(out, {x}, [x, out, src = std::move(src)]() mutable {
            auto g = out.grad();
            auto gx = x.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[src[i]] += g[i];
        });
    }
    return out;
}

Tensor Tape::reshape(const Tensor& x, Shape shape) {
    check_shape(shape);
    if (shape_numel(shape) != x.numel()) mismatch("reshape", x.shape(), shape);
    const bool rg = any_requires_grad({&x});
    Tensor out = Tensor::from(shape, std::vector<double>(x.data().begin(), x.data().end()), rg);
    if (rg) {
        record(out, {x}, [x, out]() mutable {
            auto g = out.grad();
            auto gx = x.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

Tensor Tape::gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    if (x.rank() != 2) throw ShapeError("gather_rows expects a matrix, got " + shape_str(x.shape()));
    if (rows.empty()) throw ShapeError("gather_rows: empty row set");
    const std::size_t n = x.dim(1);
    for (auto r : rows) {
        if (r >= x.dim(0)) {
            throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for " + shape_str(x.shape()));
        }
    }
    const bool rg = any_requires_grad({&x});
    Tensor out = make_output({rows.size(), n}, rg);
    auto o = out.data();
    auto xv = x.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(xv.begin() + rows[i] * n, n, o.begin() + i * n);
    }
    if (rg) {
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        record(out, {x}, [x, out, n, idx = std::move(idx)]() mutable {
            auto g = out.grad();
            auto gx = x.mutable_grad();
            for (std::size_t i = 0; i < idx.size(); ++i) {
                for (std::size_t j = 0; j < n; ++j) gx[idx[i] * n + j] += g[i * n + j];
            }
        });
    }
    return out;
}

Tensor Tape::concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t n = last_dim(parts[0]);
    std::size_t rows = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != n) mismatch("concat_rows", parts[0].shape(), p.shape());
        rows += p.dim(0);
        rg = rg || (recording_ && p.requires_grad());
    }
    Tensor out = make_output({rows, n}, rg);
    auto o = out.data();
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), o.begin() + off);
        off += p.numel();
    }
    if (rg) {
        std::vector<Tensor> inputs(parts.begin(), parts.end());
        record(out, inputs, [inputs, out]() mutable {
            auto g = out.grad();
            std::size_t off = 0;
            for (auto& p : inputs) {
                if (p.requires_grad()) {
                    auto gp = p.mutable_grad();
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                }
                off += p.numel();
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

Tensor Tape::softmax(const Tensor& x) {
    const std::size_t n = last_dim(x);
    const std::size_t rows = x.numel() / n;
    const bool rg = any_requires_grad({&x});
    Tensor out = make_output(x.shape(), rg);
    auto o = out.data();
    auto xv = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * n;
        double* y = o.data() + r * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[j]);
        if (!std::isfinite(mx)) mx = 0.0;
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(in[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) y[j] /= z;
    }
    if (rg) {
        record(out, {x}, [x, out, n, rows]() mutable {
            auto g = out.grad();
            auto y = out.data();
            auto gx = x.mutable_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
                for (std::size_t j = 0; j < n; ++j) {
                    gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
                }
            }
        });
    }
    return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t n = last_dim(x);
    if (gamma.rank() != 1 || gamma.dim(0) != n) mismatch("layer_norm", x.shape(), gamma.shape());
    if (beta.rank() != 1 || beta.dim(0) != n) mismatch("layer_norm", x.shape(), beta.shape());
    const std::size_t rows = x.numel() / n;
    const bool rg = any_requires_grad({&x, &gamma, &beta});
    Tensor out = make_output(x.shape(), rg);
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    auto xv = x.data();
    auto o = out.data();
    auto gv = gamma.data(), bv = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += in[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (in[j] - mu) * is;
            xhat[r * n + j] = h;
            o[r * n + j] = h * gv[j] + bv[j];
        }
    }
    if (rg) {
        record(out, {x, gamma, beta},
               [x, gamma, beta, out, n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
                   auto g = out.grad();
                   auto gv = gamma.data();
                   if (gamma.requires_grad()) {
                       auto gg = gamma.mutable_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) gg[i % n] += g[i] * xhat[i];
                   }
                   if (beta.requires_grad()) {
                       auto gb = beta.mutable_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                   }
                   if (x.requires_grad()) {
                       auto gx = x.mutable_grad();
                       const double inv_n = 1.0 / static_cast<double>(n);
                       for (std::size_t r = 0; r < rows; ++r) {
                           double mean_d = 0.0, mean_dx = 0.0;
                           for (std::size_t j = 0; j < n; ++j) {
                               const double d = g[r * n + j] * gv[j];
                               mean_d += d;
                               mean_dx += d * xhat[r * n + j];
                           }
                           mean_d *= inv_n;
                           mean_dx *= inv_n;
                           for (std::size_t j = 0; j < n; ++j) {
                               const double d = g[r * n + j] * gv[j];
                               gx[r * n + j] += inv_std[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
                           }
                       }
                   }
               });
    }
    return out;
}

Tensor Tape::gelu(const Tensor& x) {
    const bool rg = any_requires_grad({&x});
    Tensor out = make_output(x.shape(), rg);
    auto o = out.data();
    auto xv = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 * 0.5));
    }
    if (rg) {
        record(out, {x}, [x, out]() mutable {
            auto g = out.grad();
            auto xv = x.data();
            auto gx = x.mutable_grad();
            const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = xv[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                gx[i] += g[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

Tensor Tape::tanh(const Tensor& x) {
    const bool rg = any_requires_grad({&x});
    Tensor out = make_output(x.shape(), rg);
    auto o = out.data();
    auto xv = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(xv[i]);
    if (rg) {
        record(out, {x}, [x, out]() mutable {
            auto g = out.grad();
            auto y = out.data();
            auto gx = x.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
        });
    }
    return out;
}

Tensor Tape::l2_normalize_rows(const Tensor& x, double eps) {
    if (x.rank() != 2) throw ShapeError("l2_normalize_rows expects a matrix, got " + shape_str(x.shape()));
    const std::size_t rows = x.dim(0), n = x.dim(1);
    const bool rg = any_requires_grad({&x});
    Tensor out = make_output(x.shape(), rg);
    std::vector<double> norms(rows);
    auto xv = x.data();
    auto o = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += xv[r * n + j] * xv[r * n + j];
        norms[r] = std::max(std::sqrt(s), eps);
        for (std::size_t j = 0; j < n; ++j) o[r * n + j] = xv[r * n + j] / norms[r];
    }
    if (rg) {
        record(out, {x}, [x, out, rows, n, norms = std::move(norms)]() mutable {
            auto g = out.grad();
            auto y = out.data();
            auto gx = x.mutable_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += y[r * n + j] * g[r * n + j];
                for (std::size_t j = 0; j < n; ++j) {
                    gx[r * n + j] += (g[r * n + j] - y[r * n + j] * dot) / norms[r];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Lookups, dropout, reductions

Tensor Tape::embedding(const Tensor& table, std::span<const std::size_t> ids) {
    if (table.rank() != 2) throw ShapeError("embedding table must be a matrix, got " + shape_str(table.shape()));
    if (ids.empty()) throw ShapeError("embedding: empty id list");
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    for (auto id : ids) {
        if (id >= vocab) {
            throw ShapeError("embedding: id " + std::to_string(id) + " out of range for table " +
                             shape_str(table.shape()));
        }
    }
    const bool rg = any_requires_grad({&table});
    Tensor out = make_output({ids.size(), d}, rg);
    auto o = out.data();
    auto tv = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(tv.begin() + ids[i] * d, d, o.begin() + i * d);
    }
    if (rg) {
        std::vector<std::size_t> idx(ids.begin(), ids.end());
        record(out, {table}, [table, out, d, idx = std::move(idx)]() mutable {
            auto g = out.grad();
            auto gt = table.mutable_grad();
            for (std::size_t i = 0; i < idx.size(); ++i) {
                for (std::size_t j = 0; j < d; ++j) gt[idx[i] * d + j] += g[i * d + j];
            }
        });
    }
    return out;
}

Tensor Tape::dropout(const Tensor& x, double p, std::uint64_t key) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout probability must be in [0,1)");
    if (p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = counter_uniform(mix_seed(key, i)) >= p ? keep_scale : 0.0;
    }
    const bool rg = any_requires_grad({&x});
    Tensor out = make_output(x.shape(), rg);
    auto o = out.data();
    auto xv = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * mask[i];
    if (rg) {
        record(out, {x}, [x, out, mask = std::move(mask)]() mutable {
            auto g = out.grad();
            auto gx = x.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
        });
    }
    return out;
}

Tensor Tape::sum(const Tensor& x) {
    const bool rg = any_requires_grad({&x});
    Tensor out = make_output({1}, rg);
    double s = 0.0;
    for (double v : x.data()) s += v;
    out.data()[0] = s;
    if (rg) {
        record(out, {x}, [x, out]() mutable {
            const double g = out.grad()[0];
            for (auto& gx : x.mutable_grad()) gx += g;
        });
    }
    return out;
}

Tensor Tape::mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor Tape::cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy expects [n,V] logits, got " + shape_str(logits.shape()));
    const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
    if (targets.size() != rows) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
    }
    for (auto t : targets) {
        if (t >= vocab) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " >= " + std::to_string(vocab));
        }
    }
    const bool rg = any_requires_grad({&logits});
    Tensor out = make_output({rows}, rg);
    std::vector<double> probs(logits.numel());
    auto z = logits.data();
    auto o = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = z.data() + r * vocab;
        double mx = row[0];
        for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) {
            probs[r * vocab + j] = std::exp(row[j] - mx);
            s += probs[r * vocab + j];
        }
        for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] /= s;
        o[r] = std::log(s) + mx - row[targets[r]];
    }
    if (rg) {
        std::vector<std::size_t> tg(targets.begin(), targets.end());
        record(out, {logits},
               [logits, out, rows, vocab, tg = std::move(tg), probs = std::move(probs)]() mutable {
                   auto g = out.grad();
                   auto gz = logits.mutable_grad();
                   for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t j = 0; j < vocab; ++j) {
                           gz[r * vocab + j] += g[r] * probs[r * vocab + j];
                       }
                       gz[r * vocab + tg[r]] -= g[r];
                   }
               });
    }
    return out;
}

CrossEntropyResult Tape::softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
    Tensor per = cross_entropy(logits, targets);
    return {mean(per), per};
}

} // namespace textad
