#include "textad/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "textad/rng.hpp"

namespace textad {

// ---------------------------------------------------------------------------
// Word vectors

void WordVectorTable::add(const std::string& token, std::vector<double> vec) {
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_ || dim_ == 0) {
        throw std::invalid_argument("word vector for \"" + token + "\" has dimension " + std::to_string(vec.size()) +
                                    ", table dimension " + std::to_string(dim_));
    }
    table_[token] = std::move(vec);
}

const std::vector<double>* WordVectorTable::find(const std::string& token) const {
    auto it = table_.find(token);
    return it == table_.end() ? nullptr : &it->second;
}

WordVectorTable WordVectorTable::parse(const std::string& text) {
    WordVectorTable t;
    std::istringstream is(text);
    std::size_t lineno = 0;
    for (std::string line; std::getline(is, line);) {
        ++lineno;
        std::istringstream ls(line);
        std::vector<std::string> fields;
        for (std::string f; ls >> f;) fields.push_back(f);
        if (fields.empty()) continue;
        if (lineno == 1 && fields.size() == 2) {
            // "count dim" header: both fields integral
            try {
                std::size_t a = 0, b = 0;
                const std::size_t dim = std::stoul(fields[1], &b);
                std::stoul(fields[0], &a);
                if (a == fields[0].size() && b == fields[1].size()) {
                    t.dim_ = dim;
                    continue;
                }
            } catch (const std::exception&) {
            }
        }
        std::vector<double> vec;
        vec.reserve(fields.size() - 1);
        for (std::size_t i = 1; i < fields.size(); ++i) {
            try {
                vec.push_back(std::stod(fields[i]));
            } catch (const std::exception&) {
                throw std::runtime_error("word vector line " + std::to_string(lineno) + ": bad value " + fields[i]);
            }
        }
        t.add(fields[0], std::move(vec));
    }
    return t;
}

WordVectorTable WordVectorTable::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open word vectors " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
}

BowEmbedding bow_embed(std::span<const std::string> tokens, const WordVectorTable& table) {
    BowEmbedding e;
    e.vector.assign(table.dim(), 0.0);
    for (const auto& t : tokens) {
        if (const auto* v = table.find(t)) {
            for (std::size_t j = 0; j < v->size(); ++j) e.vector[j] += (*v)[j];
            ++e.in_table;
        }
    }
    if (e.in_table > 0) {
        for (auto& x : e.vector) x /= static_cast<double>(e.in_table);
    }
    return e;
}

// ---------------------------------------------------------------------------
// OC-SVM

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::size_t quantile_rank(double nu, std::size_t n) {
    const auto m = static_cast<std::size_t>(std::ceil(nu * static_cast<double>(n) - 1e-9));
    return std::clamp<std::size_t>(m, 1, n);
}

} // namespace

OcSvmModel ocsvm_fit(std::span<const std::vector<double>> x, const OcSvmConfig& cfg) {
    if (x.empty()) throw std::invalid_argument("ocsvm_fit: empty training set");
    if (x.size() < 2) throw std::invalid_argument("ocsvm_fit: need at least 2 training embeddings");
    if (!(cfg.nu > 0.0 && cfg.nu <= 1.0)) throw std::invalid_argument("ocsvm_fit: nu must be in (0,1]");
    if (cfg.steps == 0) throw std::invalid_argument("ocsvm_fit: steps must be >= 1");
    const std::size_t n = x.size(), d = x[0].size();
    for (const auto& xi : x) {
        if (xi.size() != d) throw std::invalid_argument("ocsvm_fit: inconsistent embedding dimension");
    }
    const std::size_t bs = (cfg.batch_size == 0 || cfg.batch_size >= n) ? n : cfg.batch_size;
    Rng rng(mix_seed(cfg.seed, 0x05C));

    // rho is profiled out: for fixed w the objective equals
    //   1/2 |w|^2 - (1/(nu m)) * (nu m)-weighted sum of the smallest projections,
    // so each step sorts the batch projections and steps in w alone.
    std::vector<double> w(d, 0.0), w_avg(d, 0.0), gw(d), proj(bs);
    std::size_t averaged = 0;
    const std::size_t avg_from = cfg.steps / 2;
    const double mass = cfg.nu * static_cast<double>(bs);
    const std::size_t batch_rank = quantile_rank(cfg.nu, bs);
    const double tail_weight = mass - static_cast<double>(batch_rank - 1);
    std::vector<std::size_t> batch(bs), order(bs);
    for (std::size_t t = 1; t <= cfg.steps; ++t) {
        if (bs == n) {
            for (std::size_t i = 0; i < n; ++i) batch[i] = i;
        } else {
            for (auto& b : batch) b = rng.uniform_index(n);
        }
        for (std::size_t i = 0; i < bs; ++i) {
            proj[i] = dot(w, x[batch[i]]);
            order[i] = i;
        }
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(batch_rank), order.end(),
                          [&](std::size_t a, std::size_t b) { return proj[a] < proj[b] || (proj[a] == proj[b] && a < b); });
        gw = w;
        for (std::size_t r = 0; r < batch_rank; ++r) {
            const double c = (r + 1 < batch_rank ? 1.0 : tail_weight) / mass;
            const auto& xi = x[batch[order[r]]];
            for (std::size_t j = 0; j < d; ++j) gw[j] -= c * xi[j];
        }
        const double eta = 1.0 / static_cast<double>(t);
        for (std::size_t j = 0; j < d; ++j) w[j] -= eta * gw[j];
        if (t > avg_from) {
            ++averaged;
            for (std::size_t j = 0; j < d; ++j) w_avg[j] += (w[j] - w_avg[j]) / static_cast<double>(averaged);
        }
    }

    // Exact rho for fixed w: the ceil(nu n)-th smallest projection.
    std::vector<double> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = dot(w_avg, x[i]);
    const std::size_t m = quantile_rank(cfg.nu, n);
    std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m - 1), all.end());
    return OcSvmModel{std::move(w_avg), all[m - 1], cfg.nu};
}

double ocsvm_score(const OcSvmModel& model, std::span<const double> x) {
    if (x.size() != model.w.size()) throw std::invalid_argument("ocsvm_score: dimension mismatch");
    return model.rho - dot(model.w, x);
}

double ocsvm_objective(const OcSvmModel& model, std::span<const std::vector<double>> x) {
    double hinge = 0.0;
    for (const auto& xi : x) hinge += std::max(0.0, model.rho - dot(model.w, xi));
    return 0.5 * dot(model.w, model.w) + hinge / (model.nu * static_cast<double>(x.size())) - model.rho;
}

// ---------------------------------------------------------------------------
// kNN

double knn_score(std::span<const double> query, std::span<const std::vector<double>> train, std::size_t k) {
    if (k == 0) throw std::invalid_argument("knn_score: k must be >= 1");
    if (k > train.size()) {
        throw std::invalid_argument("knn_score: k=" + std::to_string(k) + " exceeds " + std::to_string(train.size()) +
                                    " training embeddings");
    }
    std::vector<double> dist(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train[i].size() != query.size()) throw std::invalid_argument("knn_score: dimension mismatch");
        double s = 0.0;
        for (std::size_t j = 0; j < query.size(); ++j) {
            const double diff = query[j] - train[i][j];
            s += diff * diff;
        }
        dist[i] = std::sqrt(s);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) total += dist[i];
    return total / static_cast<double>(k);
}

std::vector<double> knn_scores(std::span<const std::vector<double>> queries,
                               std::span<const std::vector<double>> train, std::size_t k) {
    std::vector<double> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(knn_score(q, train, k));
    return out;
}

} // namespace textad
