#include "textad/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

#include "textad/rng.hpp"

namespace textad {

// ---------------------------------------------------------------------------
// Separability probe

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat to_matrix(const std::vector<const std::vector<double>*>& rows) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto d = static_cast<Eigen::Index>(rows[0]->size());
    Mat m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = (*rows[static_cast<std::size_t>(i)])[static_cast<std::size_t>(j)];
    }
    return m;
}

double sigmoid(double z) {
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

} // namespace

ProbeReport separability_probe(std::span<const std::vector<double>> inliers,
                               std::span<const std::vector<double>> anomalies, const ProbeConfig& cfg,
                               std::string source) {
    if (inliers.empty() || anomalies.empty()) throw std::invalid_argument("separability_probe: a class is empty");
    if (cfg.folds < 2) throw std::invalid_argument("separability_probe: folds must be >= 2");
    if (inliers.size() < cfg.folds || anomalies.size() < cfg.folds) {
        throw std::invalid_argument("separability_probe: each class needs at least `folds` samples");
    }
    const std::size_t d = inliers[0].size();
    for (auto set : {inliers, anomalies}) {
        for (const auto& v : set) {
            if (v.size() != d) throw std::invalid_argument("separability_probe: inconsistent dimension");
        }
    }

    // stratified fold assignment
    struct Sample {
        const std::vector<double>* x;
        double y;
        std::size_t fold;
    };
    std::vector<Sample> samples;
    Rng rng(mix_seed(cfg.seed, 0x9B0));
    for (int cls = 0; cls < 2; ++cls) {
        const auto set = cls == 0 ? inliers : anomalies;
        std::vector<std::size_t> idx(set.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        rng.shuffle(idx);
        for (std::size_t r = 0; r < idx.size(); ++r) samples.push_back({&set[idx[r]], double(cls), r % cfg.folds});
    }

    ProbeReport report;
    report.folds = cfg.folds;
    report.source = std::move(source);
    for (std::size_t f = 0; f < cfg.folds; ++f) {
        std::vector<const std::vector<double>*> tr, te;
        std::vector<double> ytr, yte;
        for (const auto& s : samples) {
            (s.fold == f ? te : tr).push_back(s.x);
            (s.fold == f ? yte : ytr).push_back(s.y);
        }
        Mat X = to_matrix(tr);
        const Vec mu = X.colwise().mean();
        X.rowwise() -= mu.transpose();
        Mat cov = (X.transpose() * X) / static_cast<double>(X.rows());
        const double ridge = 1e-9 * std::max(cov.trace() / static_cast<double>(d), 1e-300);
        cov.diagonal().array() += ridge;
        const Eigen::LLT<Mat> llt(cov);
        if (llt.info() != Eigen::Success) throw std::runtime_error("separability_probe: covariance factorization failed");
        // Z = X L^{-T}, so Z^T Z / n = I
        const Mat Z = llt.matrixL().solve(X.transpose()).transpose();

        const auto n = static_cast<double>(Z.rows());
        Vec w = Vec::Zero(static_cast<Eigen::Index>(d));
        double b = 0.0;
        const Eigen::Map<const Vec> y(ytr.data(), static_cast<Eigen::Index>(ytr.size()));
        for (std::size_t step = 0; step < cfg.steps; ++step) {
            Vec z = Z * w;
            z.array() += b;
            Vec r(z.size());
            for (Eigen::Index i = 0; i < z.size(); ++i) r(i) = sigmoid(z(i)) - y(i);
            const Vec gw = Z.transpose() * r / n + cfg.l2 * w;
            const double gb = r.sum() / n;
            w -= cfg.learning_rate * gw;
            b -= cfg.learning_rate * gb;
        }

        Mat Xt = to_matrix(te);
        Xt.rowwise() -= mu.transpose();
        const Mat Zt = llt.matrixL().solve(Xt.transpose()).transpose();
        Vec zt = Zt * w;
        std::size_t correct = 0;
        for (Eigen::Index i = 0; i < zt.size(); ++i) {
            const double pred = zt(i) + b > 0.0 ? 1.0 : 0.0;
            if (pred == yte[static_cast<std::size_t>(i)]) ++correct;
        }
        report.fold_accuracies.push_back(static_cast<double>(correct) / static_cast<double>(zt.size()));
    }
    double total = 0.0;
    for (double a : report.fold_accuracies) total += a;
    report.accuracy = total / static_cast<double>(cfg.folds);
    return report;
}

// ---------------------------------------------------------------------------
// Brittleness

InputLoss objective_input_loss(const Objective& objective, const EncoderModel& model,
                               std::span<const std::uint64_t> keys) {
    std::vector<std::uint64_t> k(keys.begin(), keys.end());
    return [&objective, &model, k = std::move(k)](Tape& tape, const Tensor& rows, const TokenSequence& seq,
                                                  std::size_t index) {
        return objective.example_loss(tape, model, seq, k.at(index), &rows);
    };
}

double input_gradient_norm(const EncoderModel& model, const InputLoss& loss, const TokenSequence& seq,
                           std::size_t index, std::vector<double>* gradient_out) {
    const auto layout = make_layout(std::span(&seq, 1), true);
    Tensor rows;
    {
        Tape lookup(false);
        rows = lookup_token_embeddings(lookup, model, layout).clone();
    }
    rows.set_requires_grad(true);
    Tape tape;
    Tensor l = loss(tape, rows, seq, index);
    tape.backward(l);
    double sq = 0.0;
    for (double g : rows.grad()) sq += g * g;
    if (gradient_out) gradient_out->assign(rows.grad().begin(), rows.grad().end());
    return std::sqrt(sq);
}

double covariance_trace(std::span<const std::vector<double>> vectors) {
    if (vectors.size() < 2) throw std::invalid_argument("covariance_trace: need at least 2 vectors");
    const std::size_t d = vectors[0].size();
    std::vector<double> mean(d, 0.0);
    for (const auto& v : vectors) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += v[j];
    }
    for (auto& m : mean) m /= static_cast<double>(vectors.size());
    double trace = 0.0;
    for (const auto& v : vectors) {
        for (std::size_t j = 0; j < d; ++j) trace += (v[j] - mean[j]) * (v[j] - mean[j]);
    }
    return trace / static_cast<double>(vectors.size() - 1);
}

BrittlenessReport brittleness(const EncoderModel& model, const InputLoss& loss, std::span<const TokenSequence> docs) {
    if (docs.size() < 2) throw std::invalid_argument("brittleness: need at least 2 documents");
    BrittlenessReport r;
    r.documents = docs.size();
    double total = 0.0;
    for (std::size_t i = 0; i < docs.size(); ++i) total += input_gradient_norm(model, loss, docs[i], i);
    r.mean_grad_norm = total / static_cast<double>(docs.size());
    const auto emb = extract_embeddings(model, docs);
    r.covariance_trace = covariance_trace(emb);
    if (!(r.covariance_trace > 0.0)) throw std::domain_error("brittleness: embedding covariance trace is zero");
    r.ratio = r.mean_grad_norm / r.covariance_trace;
    r.log_ratio = r.ratio > 0.0 ? std::log(r.ratio) : -std::numeric_limits<double>::infinity();
    return r;
}

BrittlenessReport brittleness(const EncoderModel& model, const Objective& objective,
                              std::span<const TokenSequence> docs, std::span<const std::uint64_t> keys) {
    if (keys.size() != docs.size()) throw std::invalid_argument("brittleness: one key per document required");
    return brittleness(model, objective_input_loss(objective, model, keys), docs);
}

} // namespace textad
