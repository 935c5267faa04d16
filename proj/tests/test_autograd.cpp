#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>

#include "mslm/autograd.hpp"
#include "mslm/error.hpp"
#include "mslm/gradcheck.hpp"
#include "test_support.hpp"

using namespace mslm;
using mslm::testing::random_tensor;
using mslm::testing::weighted_sum;

namespace {

constexpr double kStep = 1e-4;

Tensor matmul_value(const Tensor& a, const Tensor& b) {
    Tape tape;
    return ops::matmul(tape.constant(a), tape.constant(b)).value();
}

}  // namespace

TEST(Matmul, IdentityAndHandArithmetic) {
    const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
    EXPECT_EQ(matmul_value(Tensor::matrix({{1, 0}, {0, 1}}), m), m);
    EXPECT_EQ(matmul_value(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}})), Tensor::matrix({{11}}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Tape tape;
    try {
        ops::matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({4, 2})));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos);
        EXPECT_NE(msg.find("[4x2]"), std::string::npos);
    }
}

TEST(Matmul, BackwardMatchesFiniteDifferences) {
    Rng rng(1);
    const Tensor a = random_tensor({5, 7}, rng);
    const Tensor b = random_tensor({7, 3}, rng);
    const Tensor w = random_tensor({5, 3}, rng, 0.5, 1.5);
    const double err_a = finite_diff_check(
        [&](Tape& t, const Var& x) { return weighted_sum(ops::matmul(x, t.constant(b)), w); }, a, kStep);
    const double err_b = finite_diff_check(
        [&](Tape& t, const Var& x) { return weighted_sum(ops::matmul(t.constant(a), x), w); }, b, kStep);
    EXPECT_LT(err_a, 1e-5);
    EXPECT_LT(err_b, 1e-5);
}

TEST(Elementwise, ActivationsAtZero) {
    Tape tape;
    const Var zero = tape.constant(Tensor::vector({0.0}));
    EXPECT_EQ(ops::sigmoid(zero).value()[0], 0.5);
    EXPECT_EQ(ops::tanh(zero).value()[0], 0.0);
}

TEST(Elementwise, SigmoidBackwardMatchesFiniteDifferences) {
    Rng rng(2);
    const Tensor x = random_tensor({4, 6}, rng, -3, 3);
    const Tensor w = random_tensor({4, 6}, rng, 0.5, 1.5);
    EXPECT_LT(finite_diff_check([&](Tape&, const Var& v) { return weighted_sum(ops::sigmoid(v), w); }, x, kStep),
              1e-5);
}

TEST(Elementwise, BinaryShapeMismatch) {
    Tape tape;
    const Var a = tape.constant(Tensor({2, 3}));
    const Var b = tape.constant(Tensor({3, 2}));
    EXPECT_THROW(ops::add(a, b), DimensionError);
    EXPECT_THROW(ops::mul(a, b), DimensionError);
    EXPECT_THROW(ops::sub(a, b), DimensionError);
}

TEST(Backward, SumGivesOnes) {
    Parameter w("w", Tensor::matrix({{1, -2, 3}, {0.5, 7, 9}}));
    Tape tape;
    backward(tape, ops::sum(tape.param(w)));
    for (double g : w.grad.data()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, ZeroTimesFunctionGivesZeros) {
    Parameter w("w", Tensor::matrix({{1, -2}, {3, 4}}));
    Tape tape;
    const Var f = ops::sum(ops::tanh(ops::mul(tape.param(w), tape.param(w))));
    backward(tape, ops::scale(f, 0.0));
    for (double g : w.grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, NonScalarLossIsContractError) {
    Parameter w("w", Tensor({2, 2}, 1.0));
    Tape tape;
    EXPECT_THROW(backward(tape, ops::tanh(tape.param(w))), ContractError);
}

TEST(Backward, TapeIsConsumedOnce) {
    Parameter w("w", Tensor({2}, 1.0));
    Tape tape;
    const Var loss = ops::sum(tape.param(w));
    backward(tape, loss);
    EXPECT_TRUE(tape.consumed());
    EXPECT_THROW(backward(tape, loss), TapeReuseError);
}

TEST(Backward, VisitsInReverseExecutionOrder) {
    Parameter w("w", Tensor({3, 3}, 0.3));
    Tape tape;
    const Var p = tape.param(w);
    const Var y = ops::sum(ops::sigmoid(ops::matmul(ops::tanh(p), p)));
    backward(tape, y);
    const auto& order = tape.backward_order();
    ASSERT_GE(order.size(), 4u);
    for (std::size_t i = 1; i < order.size(); ++i) EXPECT_GT(order[i - 1], order[i]);
    EXPECT_EQ(order.front(), y.id());
    EXPECT_EQ(order.back(), p.id());
}

TEST(Backward, TwoPassesDoubleGradientsExactly) {
    Rng rng(3);
    Parameter w("w", random_tensor({4, 4}, rng));
    Parameter b("b", random_tensor({4}, rng));
    const Tensor x = random_tensor({3, 4}, rng);
    auto run = [&] {
        Tape tape;
        const Var h = ops::tanh(ops::add_bias(ops::matmul_nt(tape.constant(x), tape.param(w)), tape.param(b)));
        backward(tape, ops::sum(ops::square(ops::matmul(h, tape.param(w)))));
    };
    run();
    const Tensor gw = w.grad;
    const Tensor gb = b.grad;
    run();
    for (std::size_t i = 0; i < gw.size(); ++i) EXPECT_EQ(w.grad[i], 2.0 * gw[i]);
    for (std::size_t i = 0; i < gb.size(); ++i) EXPECT_EQ(b.grad[i], 2.0 * gb[i]);
}

TEST(FiniteDiffCheck, ExactQuadratic) {
    Rng rng(4);
    const Tensor x = random_tensor({6, 5}, rng, -2, 2);
    EXPECT_LT(finite_diff_check([](Tape&, const Var& v) { return ops::sum(ops::square(v)); }, x, kStep), 1e-7);
}

TEST(FiniteDiffCheck, SineAgainstClosedFormCosine) {
    Rng rng(5);
    const Tensor x = random_tensor({50}, rng, -3, 3);
    Tensor cosine = x;
    for (auto& v : cosine.data()) v = std::cos(v);
    auto f = [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.data()) s += std::sin(v);
        return s;
    };
    EXPECT_LT(finite_diff_check(f, x, cosine, kStep), 1e-6);
}

TEST(FiniteDiffCheck, PlantedGradientFaultIsDetected) {
    Rng rng(6);
    const Tensor x = random_tensor({20}, rng, 0.5, 2);
    Tensor corrupted = x;
    for (auto& v : corrupted.data()) v = 2.0 * v * 1.01;
    auto f = [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.data()) s += v * v;
        return s;
    };
    const double err = finite_diff_check(f, x, corrupted, kStep);
    // |1.01g - g| / (1.01|g| + |g|) = 0.01 / 2.01
    EXPECT_NEAR(err, 0.01 / 2.01, 1e-6);
    EXPECT_GT(err, 1e-4);
}

TEST(FiniteDiffCheck, NonDeterministicFunctionIsRejected) {
    int calls = 0;
    auto f = [&calls](const Tensor&) { return static_cast<double>(++calls); };
    EXPECT_THROW(finite_diff_check(f, Tensor({3}), Tensor({3}), kStep), OracleError);
    EXPECT_THROW(finite_diff_check(f, Tensor({3}), Tensor({3}), 0.0), DomainError);
}

// Randomized shapes up to 8x8x8 (rank-3 data is viewed as a stack of rows).
class OpGradientProperty : public ::testing::TestWithParam<int> {};

TEST_P(OpGradientProperty, EveryOpPassesFiniteDifferences) {
    Rng rng(1000 + GetParam());
    auto extent = [&] { return static_cast<std::size_t>(rng.uniform_int(1, 8)); };
    const std::size_t d0 = extent(), d1 = extent(), d2 = extent();
    const std::size_t rows = d0 * d1;
    const Tensor x = random_tensor({d0, d1, d2}, rng, -2, 2);
    const Tensor other = random_tensor({rows, d2}, rng, -2, 2);
    const Tensor w_rows = random_tensor({rows, d2}, rng, 0.5, 1.5);

    auto mat = [&](const Var& v) { return ops::reshape(v, {rows, d2}); };
    struct Case {
        const char* name;
        TapeFn fn;
    };
    const Tensor right = random_tensor({d2, 3}, rng);
    const Tensor w_mm = random_tensor({rows, 3}, rng, 0.5, 1.5);
    const Tensor bias = random_tensor({d2}, rng);
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < 2 * rows; ++i) ids.push_back(static_cast<std::size_t>(rng.uniform_int(0, rows - 1)));
    const Tensor w_ids = random_tensor({2 * rows, d2}, rng, 0.5, 1.5);
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < rows; ++i) cols.push_back(static_cast<std::size_t>(rng.uniform_int(0, d2 - 1)));
    const Tensor w_pick = random_tensor({rows}, rng, 0.5, 1.5);
    std::vector<double> factors;
    for (std::size_t i = 0; i < rows; ++i) factors.push_back(rng.uniform(-2, 2));

    const std::vector<Case> cases = {
        {"matmul", [&](Tape& t, const Var& v) { return weighted_sum(ops::matmul(mat(v), t.constant(right)), w_mm); }},
        {"matmul_nt",
         [&](Tape& t, const Var& v) {
             return weighted_sum(ops::matmul_nt(mat(v), t.constant(right.reshaped({3, d2}))), w_mm);
         }},
        {"add", [&](Tape& t, const Var& v) { return weighted_sum(ops::add(mat(v), t.constant(other)), w_rows); }},
        {"sub", [&](Tape& t, const Var& v) { return weighted_sum(ops::sub(t.constant(other), mat(v)), w_rows); }},
        {"mul", [&](Tape& t, const Var& v) { return weighted_sum(ops::mul(mat(v), t.constant(other)), w_rows); }},
        {"mul_self", [&](Tape&, const Var& v) { return weighted_sum(ops::mul(mat(v), mat(v)), w_rows); }},
        {"sigmoid", [&](Tape&, const Var& v) { return weighted_sum(ops::sigmoid(mat(v)), w_rows); }},
        {"tanh", [&](Tape&, const Var& v) { return weighted_sum(ops::tanh(mat(v)), w_rows); }},
        {"square", [&](Tape&, const Var& v) { return weighted_sum(ops::square(mat(v)), w_rows); }},
        {"add_bias",
         [&](Tape& t, const Var& v) {
             return weighted_sum(ops::tanh(ops::add_bias(t.constant(other), ops::reshape(ops::slice_rows(mat(v), 0, 1), {d2}))), w_rows);
         }},
        {"scale_rows", [&](Tape&, const Var& v) { return weighted_sum(ops::scale_rows(mat(v), factors), w_rows); }},
        {"mean", [&](Tape&, const Var& v) { return ops::mean(ops::square(v)); }},
        {"slice_rows",
         [&](Tape&, const Var& v) {
             return ops::sum(ops::square(ops::slice_rows(mat(v), rows / 2, rows)));
         }},
        {"slice_cols",
         [&](Tape&, const Var& v) { return ops::sum(ops::square(ops::slice_cols(mat(v), d2 / 2, d2))); }},
        {"concat_rows",
         [&](Tape&, const Var& v) {
             const Var parts[] = {ops::tanh(mat(v)), mat(v)};
             return ops::sum(ops::square(ops::concat_rows(parts)));
         }},
        {"concat_cols",
         [&](Tape& t, const Var& v) {
             return ops::sum(ops::square(ops::concat_cols(t.constant(other), ops::sigmoid(mat(v)))));
         }},
        {"shift_rows",
         [&](Tape&, const Var& v) { return weighted_sum(ops::tanh(ops::shift_rows(mat(v), d1)), w_rows); }},
        {"gather_rows",
         [&](Tape&, const Var& v) { return weighted_sum(ops::gather_rows(mat(v), ids), w_ids); }},
        {"log_softmax_rows",
         [&](Tape&, const Var& v) { return weighted_sum(ops::log_softmax_rows(mat(v)), w_rows); }},
        {"pick", [&](Tape&, const Var& v) { return weighted_sum(ops::pick(ops::tanh(mat(v)), cols), w_pick); }},
        {"scatter",
         [&](Tape&, const Var& v) {
             std::vector<std::size_t> index(rows);
             for (std::size_t i = 0; i < rows; ++i) index[i] = (i * 7) % (rows + 1);
             const Var values = ops::pick(mat(v), cols);
             return ops::sum(ops::square(ops::scatter(values, index, rows + 1)));
         }},
    };
    for (const auto& c : cases) {
        const double err = finite_diff_check(c.fn, x, kStep);
        EXPECT_LT(err, 1e-4) << c.name << " shape " << to_string(x.shape());
    }
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, OpGradientProperty, ::testing::Range(0, 12));

TEST(FusedOps, FoPoolGradients) {
    Rng rng(7);
    const std::size_t steps = 5, batch = 2, hidden = 3;
    const Tensor f = random_tensor({steps * batch, hidden}, rng, 0.1, 0.9);
    const Tensor z = random_tensor({steps * batch, hidden}, rng);
    const Tensor c0 = random_tensor({batch, hidden}, rng);
    const Tensor w = random_tensor({steps * batch, hidden}, rng, 0.5, 1.5);
    EXPECT_LT(finite_diff_check(
                  [&](Tape& t, const Var& v) { return weighted_sum(ops::fo_pool(v, t.constant(z), t.constant(c0)), w); },
                  f, kStep),
              1e-4);
    EXPECT_LT(finite_diff_check(
                  [&](Tape& t, const Var& v) { return weighted_sum(ops::fo_pool(t.constant(f), v, t.constant(c0)), w); },
                  z, kStep),
              1e-4);
    EXPECT_LT(finite_diff_check(
                  [&](Tape& t, const Var& v) { return weighted_sum(ops::fo_pool(t.constant(f), t.constant(z), v), w); },
                  c0, kStep),
              1e-4);
}

TEST(FusedOps, FoPoolMatchesRecurrence) {
    Tape tape;
    const Tensor f = Tensor::matrix({{0.5}, {0.25}});
    const Tensor z = Tensor::matrix({{2.0}, {4.0}});
    const Var c = ops::fo_pool(tape.constant(f), tape.constant(z), tape.constant(Tensor::matrix({{1.0}})));
    EXPECT_DOUBLE_EQ(c.value()[0], 0.5 * 1.0 + 0.5 * 2.0);
    EXPECT_DOUBLE_EQ(c.value()[1], 0.25 * 1.5 + 0.75 * 4.0);
}

TEST(FusedOps, LstmPointwiseGradients) {
    Rng rng(8);
    const std::size_t batch = 3, hidden = 4;
    const Tensor gates = random_tensor({batch, 4 * hidden}, rng, -2, 2);
    const Tensor c = random_tensor({batch, hidden}, rng);
    const Tensor w = random_tensor({batch, hidden}, rng, 0.5, 1.5);
    auto both = [&](const Var& g, const Var& cp) {
        const Var c_next = ops::lstm_memory(g, cp);
        return ops::add(weighted_sum(c_next, w), weighted_sum(ops::lstm_output(g, c_next), w));
    };
    EXPECT_LT(finite_diff_check([&](Tape& t, const Var& v) { return both(v, t.constant(c)); }, gates, kStep), 1e-4);
    EXPECT_LT(finite_diff_check([&](Tape& t, const Var& v) { return both(t.constant(gates), v); }, c, kStep), 1e-4);
}
