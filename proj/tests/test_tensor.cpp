#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "fd.hpp"
#include "textad/rng.hpp"
#include "textad/tensor.hpp"

using namespace textad;
using textad::testing::max_relative_error;

namespace {

Tensor randn(Shape shape, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), true);
}

// Weighted sum, so every output element gets a distinct upstream gradient.
Tensor probe(Tape& t, const Tensor& y, std::uint64_t seed) {
    Tensor w = randn(y.shape(), seed);
    w.set_requires_grad(false);
    return t.sum(t.mul(y, w));
}

} // namespace

TEST(Tensor, FactoriesAndShape) {
    auto z = Tensor::zeros({2, 3});
    EXPECT_EQ(z.numel(), 6u);
    EXPECT_EQ(z.rank(), 2u);
    EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
    EXPECT_DOUBLE_EQ(Tensor::scalar(2.5).item(), 2.5);
    EXPECT_THROW(z.item(), ShapeError);
}

TEST(Tensor, MatmulKnownValues) {
    Tape t(false);
    auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
    auto c = t.matmul(a, b);
    EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{19, 22, 43, 50}));
    auto ct = t.matmul(a, b, true);
    EXPECT_EQ(std::vector<double>(ct.data().begin(), ct.data().end()), (std::vector<double>{17, 23, 39, 53}));
    EXPECT_THROW(t.matmul(a, Tensor::zeros({3, 2})), ShapeError);
}

TEST(Tensor, SoftmaxRowsSumToOne) {
    Tape t(false);
    auto x = randn({4, 7}, 3, 5.0);
    auto s = t.softmax(x);
    for (std::size_t r = 0; r < 4; ++r) {
        double sum = 0;
        for (std::size_t c = 0; c < 7; ++c) sum += s.at(r, c);
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Tensor, CrossEntropyUniformIsLogV) {
    Tape t(false);
    auto logits = Tensor::filled({3, 11}, 0.25);
    std::vector<std::size_t> targets{0, 5, 10};
    auto ce = t.softmax_cross_entropy(logits, targets);
    EXPECT_NEAR(ce.loss.item(), std::log(11.0), 1e-12);
    std::vector<std::size_t> bad{0, 11, 1};
    EXPECT_THROW(t.cross_entropy(logits, bad), std::out_of_range);
}

TEST(Tensor, BackwardTwiceWithoutResetThrows) {
    Tape t;
    auto x = randn({3}, 1);
    auto l = t.sum(t.mul(x, x));
    t.backward(l);
    EXPECT_THROW(t.backward(l), TapeError);
    t.reset();
    auto l2 = t.sum(x);
    EXPECT_NO_THROW(t.backward(l2));
}

TEST(Tensor, BackwardRequiresScalar) {
    Tape t;
    auto x = randn({3}, 1);
    auto y = t.scale(x, 2.0);
    EXPECT_THROW(t.backward(y), TapeError);
}

TEST(Tensor, GradientAccumulatesAcrossUses) {
    Tape t;
    auto x = Tensor::from({2}, {1.5, -2.0}, true);
    auto l = t.sum(t.add(t.mul(x, x), x));  // d/dx = 2x + 1
    t.backward(l);
    EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], -3.0);
}

TEST(Tensor, InferenceTapeRecordsNothing) {
    Tape t(false);
    auto x = randn({3, 3}, 2);
    auto y = t.gelu(t.matmul(x, x));
    EXPECT_EQ(t.size(), 0u);
    EXPECT_EQ(y.numel(), 9u);
}

// ---------------------------------------------------------------------------
// Finite-difference checks per primitive

struct OpCase {
    const char* name;
    std::function<Tensor(Tape&, const std::vector<Tensor>&)> op;
    std::vector<Shape> shapes;
};

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
    const auto& c = GetParam();
    std::vector<Tensor> in;
    for (std::size_t i = 0; i < c.shapes.size(); ++i) in.push_back(randn(c.shapes[i], 100 + i));
    auto f = [&](Tape& t) { return probe(t, c.op(t, in), 999); };
    EXPECT_LT(max_relative_error(f, in), 1e-6) << c.name;
}

namespace {
const std::vector<std::size_t> kIds{2, 0, 2, 1};
const std::vector<std::size_t> kTargets{1, 0, 3};
}

INSTANTIATE_TEST_SUITE_P(
    Primitives, OpGradient,
    ::testing::Values(
        OpCase{"add", [](Tape& t, const auto& x) { return t.add(x[0], x[1]); }, {{3, 4}, {3, 4}}},
        OpCase{"sub", [](Tape& t, const auto& x) { return t.sub(x[0], x[1]); }, {{3, 4}, {3, 4}}},
        OpCase{"mul", [](Tape& t, const auto& x) { return t.mul(x[0], x[1]); }, {{3, 4}, {3, 4}}},
        OpCase{"scale", [](Tape& t, const auto& x) { return t.scale(x[0], -1.7); }, {{5}}},
        OpCase{"add_bias", [](Tape& t, const auto& x) { return t.add_bias(x[0], x[1]); }, {{2, 3, 4}, {4}}},
        OpCase{"matmul", [](Tape& t, const auto& x) { return t.matmul(x[0], x[1]); }, {{3, 4}, {4, 2}}},
        OpCase{"matmul_tb", [](Tape& t, const auto& x) { return t.matmul(x[0], x[1], true); }, {{3, 4}, {2, 4}}},
        OpCase{"bmm", [](Tape& t, const auto& x) { return t.matmul(x[0], x[1]); }, {{2, 3, 4}, {2, 4, 5}}},
        OpCase{"bmm_tb", [](Tape& t, const auto& x) { return t.matmul(x[0], x[1], true); }, {{2, 3, 4}, {2, 5, 4}}},
        OpCase{"transpose", [](Tape& t, const auto& x) { return t.transpose(x[0], 0, 2); }, {{2, 3, 4}}},
        OpCase{"reshape", [](Tape& t, const auto& x) { return t.reshape(x[0], {4, 6}); }, {{2, 3, 4}}},
        OpCase{"softmax", [](Tape& t, const auto& x) { return t.softmax(x[0]); }, {{3, 5}}},
        OpCase{"layer_norm", [](Tape& t, const auto& x) { return t.layer_norm(x[0], x[1], x[2], 1e-5); },
               {{3, 6}, {6}, {6}}},
        OpCase{"gelu", [](Tape& t, const auto& x) { return t.gelu(x[0]); }, {{4, 4}}},
        OpCase{"tanh", [](Tape& t, const auto& x) { return t.tanh(x[0]); }, {{4, 4}}},
        OpCase{"embedding", [](Tape& t, const auto& x) { return t.embedding(x[0], kIds); }, {{3, 5}}},
        OpCase{"mean", [](Tape& t, const auto& x) { return t.mean(x[0]); }, {{3, 5}}},
        OpCase{"gather_rows", [](Tape& t, const auto& x) { return t.gather_rows(x[0], kIds); }, {{3, 2}}},
        OpCase{"concat_rows", [](Tape& t, const auto& x) { return t.concat_rows(std::span(x)); }, {{2, 3}, {1, 3}}},
        OpCase{"l2_normalize", [](Tape& t, const auto& x) { return t.l2_normalize_rows(x[0]); }, {{3, 4}}},
        OpCase{"cross_entropy", [](Tape& t, const auto& x) { return t.cross_entropy(x[0], kTargets); }, {{3, 4}}},
        OpCase{"dropout", [](Tape& t, const auto& x) { return t.dropout(x[0], 0.3, 77); }, {{6, 6}}}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Tensor, DropoutDeterministicAndScaled) {
    Tape t(false);
    auto x = Tensor::filled({1000}, 1.0);
    auto a = t.dropout(x, 0.25, 5);
    auto b = t.dropout(x, 0.25, 5);
    auto c = t.dropout(x, 0.25, 6);
    double kept = 0;
    bool differs = false;
    for (std::size_t i = 0; i < 1000; ++i) {
        EXPECT_EQ(a[i], b[i]);
        if (a[i] != c[i]) differs = true;
        if (a[i] != 0.0) {
            EXPECT_DOUBLE_EQ(a[i], 1.0 / 0.75);
            ++kept;
        }
    }
    EXPECT_TRUE(differs);
    EXPECT_NEAR(kept / 1000.0, 0.75, 0.05);
    EXPECT_TRUE(t.dropout(x, 0.0, 1).same_storage(x));
}

TEST(Tensor, ShapeErrorsName) {
    Tape t;
    try {
        t.add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
    }
}
