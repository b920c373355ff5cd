#include <amlora/errors.hpp>
#include <amlora/gradcheck.hpp>
#include <amlora/ops.hpp>
#include <amlora/optim.hpp>
#include <amlora/random.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

using namespace amlora;

namespace {

// Plain triple loop kept independent of the library's gemm kernels.
Tensor reference_matmul(const Tensor &a, const Tensor &b)
{
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                acc += a.at(i, p) * b.at(p, j);
            out.at(i, j) = acc;
        }
    return out;
}

Tensor eval(const std::function<Var(Graph &)> &fn)
{
    Graph g;
    return fn(g).value();
}

} // namespace

TEST(Tensor, RejectsInconsistentBuffers)
{
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    EXPECT_THROW(Tensor({0, 2}), DimensionError);
    Tensor t({2, 3});
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.cols(), 3u);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged)
{
    const Tensor m = Tensor::matrix({{0.3, -1.2}, {4.0, 2.5}});
    const Tensor out = eval([&](Graph &g) { return ops::matmul(g.constant(Tensor::identity(2)), g.constant(m)); });
    EXPECT_TRUE(out.bit_equal(m));
}

TEST(Matmul, HandEvaluatedProduct)
{
    const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
    const Tensor b = Tensor::matrix({{5}, {6}});
    const Tensor expected = reference_matmul(a, b);
    EXPECT_DOUBLE_EQ(expected.at(0, 0), 17.0);
    EXPECT_DOUBLE_EQ(expected.at(1, 0), 39.0);
    const Tensor out = eval([&](Graph &g) { return ops::matmul(g.constant(a), g.constant(b)); });
    EXPECT_TRUE(out.bit_equal(expected));
}

TEST(Matmul, ZeroAnnihilates)
{
    const Tensor m = gaussian({3, 4}, 1.0, 7);
    const Tensor out = eval([&](Graph &g) { return ops::matmul(g.constant(Tensor::zeros({2, 3})), g.constant(m)); });
    for (double v : out.data())
        EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes)
{
    Graph g;
    try {
        ops::matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({2, 3})));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError &e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3] x [2x3]"), std::string::npos) << msg;
    }
}

TEST(Matmul, MatchesReferenceOnRandomShapes)
{
    Rng rng(11);
    for (std::size_t m : {1u, 3u, 7u})
        for (std::size_t k : {1u, 4u})
            for (std::size_t n : {2u, 5u}) {
                const Tensor a = gaussian({m, k}, 1.0, rng);
                const Tensor b = gaussian({k, n}, 1.0, rng);
                const Tensor out = eval([&](Graph &g) { return ops::matmul(g.constant(a), g.constant(b)); });
                EXPECT_LT(max_abs_diff(out, reference_matmul(a, b)), 1e-12);
            }
}

TEST(Softmax, EqualLogitsAreUniform)
{
    for (double c : {-5.0, 0.0, 3.7}) {
        const Tensor out = eval([&](Graph &g) { return ops::softmax(g.constant(Tensor::vector({c, c, c}))); });
        for (double v : out.data())
            EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    }
}

TEST(Softmax, SingleElementIsOne)
{
    const Tensor out = eval([](Graph &g) { return ops::softmax(g.constant(Tensor::vector({42.0}))); });
    EXPECT_EQ(out[0], 1.0);
}

TEST(Softmax, ExtendedPrecisionOracle)
{
    const long double e0 = std::exp(0.0L), e1 = std::exp(std::log(3.0L));
    const long double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    const Tensor out =
        eval([](Graph &g) { return ops::softmax(g.constant(Tensor::vector({0.0, std::log(3.0)}))); });
    EXPECT_NEAR(out[0], static_cast<double>(p0), 1e-15);
    EXPECT_NEAR(out[1], static_cast<double>(p1), 1e-15);
    EXPECT_NEAR(out[0], 0.25, 1e-15);
    EXPECT_NEAR(out[1], 0.75, 1e-15);
}

TEST(Softmax, FuzzedRowsSumToOne)
{
    Rng rng(2024);
    std::uniform_int_distribution<std::size_t> len(1, 40);
    std::uniform_real_distribution<double> scale(0.01, 300.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = len(rng);
        const Tensor logits = gaussian({n}, scale(rng), rng);
        const Tensor out = eval([&](Graph &g) { return ops::softmax(g.constant(logits)); });
        double total = 0.0;
        for (double v : out.data()) {
            EXPECT_GE(v, 0.0);
            total += v;
        }
        ASSERT_NEAR(total, 1.0, 1e-12) << "trial " << trial;
    }
}

TEST(CrossEntropy, UniformLogits)
{
    const std::vector<std::uint32_t> labels{2};
    const Tensor out = eval([&](Graph &g) { return ops::cross_entropy(g.constant(Tensor({1, 4}, 0.7)), labels); });
    EXPECT_NEAR(out[0], std::log(4.0), 1e-12);
}

TEST(CrossEntropy, CertaintyLimit)
{
    const std::vector<std::uint32_t> labels{1, 3};
    Tensor logits({2, 4});
    logits.at(0, 1) = 1e6;
    logits.at(1, 3) = 1e6;
    const Tensor out = eval([&](Graph &g) { return ops::cross_entropy(g.constant(logits), labels); });
    EXPECT_NEAR(out[0], 0.0, 1e-9);
}

TEST(CrossEntropy, MatchesSoftmaxOracle)
{
    const std::vector<std::uint32_t> labels{1};
    const Tensor out = eval(
        [&](Graph &g) { return ops::cross_entropy(g.constant(Tensor::matrix({{0.0, std::log(3.0)}})), labels); });
    EXPECT_NEAR(out[0], -std::log(0.75), 1e-12);
    EXPECT_NEAR(out[0], 0.2877, 1e-4);
}

TEST(CrossEntropy, LabelOutOfRange)
{
    Graph g;
    const std::vector<std::uint32_t> labels{4};
    EXPECT_THROW(ops::cross_entropy(g.constant(Tensor({1, 4})), labels), ValidationError);
}

TEST(L1Norm, Examples)
{
    EXPECT_EQ(eval([](Graph &g) { return ops::l1_norm(g.constant(Tensor({3, 3}))); })[0], 0.0);
    EXPECT_EQ(eval([](Graph &g) { return ops::l1_norm(g.constant(Tensor::vector({1, -2, 3}))); })[0], 6.0);
    Rng rng(5);
    std::bernoulli_distribution coin(0.5);
    Tensor t({4, 4});
    double oracle = 0.0;
    for (auto &v : t.data()) {
        v = coin(rng) ? 0.5 : -0.5;
        oracle += std::abs(v);
    }
    EXPECT_EQ(oracle, 8.0);
    EXPECT_EQ(eval([&](Graph &g) { return ops::l1_norm(g.constant(t)); })[0], oracle);
}

TEST(Backward, LinearMapGradient)
{
    Parameter w("w", Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
    const Tensor x = Tensor::matrix({{0.5}, {-1.0}, {2.0}});
    Graph g;
    Var loss = ops::sum(ops::matmul(g.param(w), g.constant(x)));
    g.backward(loss);
    ASSERT_TRUE(w.grad.has_value());
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 3; ++c)
            EXPECT_EQ(w.grad->at(r, c), x[c]);
}

TEST(Backward, L1SignSubgradient)
{
    Parameter w("w", Tensor::vector({1, -2, 0}));
    Graph g;
    g.backward(ops::l1_norm(g.param(w)));
    EXPECT_EQ(w.grad->buffer(), (std::vector<double>{1, -1, 0}));
}

TEST(Backward, NonScalarLossIsUsageError)
{
    Parameter w("w", Tensor({2, 2}, 1.0));
    Graph g;
    EXPECT_THROW(g.backward(g.param(w)), UsageError);
}

TEST(Backward, FrozenAndUnreachableParametersGetNoGradient)
{
    Parameter used("used", Tensor({2}, 1.0));
    Parameter frozen("frozen", Tensor({2}, 1.0), false);
    Parameter unused("unused", Tensor({2}, 1.0));
    Graph g;
    g.param(unused);
    g.backward(ops::sum(ops::mul(g.param(used), g.param(frozen))));
    EXPECT_TRUE(used.grad.has_value());
    EXPECT_FALSE(frozen.grad.has_value());
    EXPECT_FALSE(unused.grad.has_value());
}

TEST(Backward, DeterministicAcrossRuns)
{
    auto run = [] {
        Parameter w("w", gaussian({6, 5}, 1.0, 3));
        const Tensor x = gaussian({4, 5}, 1.0, 4);
        Graph g;
        Var h = ops::softmax(ops::linear(g.constant(x), g.param(w)));
        g.backward(ops::sum(ops::mul(h, h)));
        return *w.grad;
    };
    EXPECT_TRUE(run().bit_equal(run()));
}

TEST(Optimizer, SgdStep)
{
    Parameter w("w", Tensor::scalar(1.0));
    w.grad = Tensor::scalar(2.0);
    Optimizer opt(OptimizerKind::sgd, 0.1);
    Parameter *params[] = {&w};
    opt.step(params);
    EXPECT_NEAR(w.value[0], 0.8, 1e-15);
    EXPECT_FALSE(w.grad.has_value());
    EXPECT_EQ(opt.step_count(), 1u);
}

TEST(Optimizer, ZeroGradientIsNoOp)
{
    Parameter w("w", gaussian({3, 3}, 1.0, 1));
    const Tensor before = w.value;
    w.grad = Tensor::zeros({3, 3});
    Optimizer opt(OptimizerKind::sgd, 0.5);
    Parameter *params[] = {&w};
    opt.step(params);
    EXPECT_TRUE(w.value.bit_equal(before));
}

TEST(Optimizer, AdamFirstStepHasMagnitudeLr)
{
    // Step 1: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
    for (double g0 : {1e-3, 0.7, 250.0, -12.0}) {
        Parameter w("w", Tensor::scalar(0.0));
        w.grad = Tensor::scalar(g0);
        Optimizer opt(OptimizerKind::adam, 1e-2);
        Parameter *params[] = {&w};
        opt.step(params);
        const double closed_form = -1e-2 * g0 / (std::abs(g0) + Optimizer::epsilon);
        EXPECT_NEAR(w.value[0], closed_form, 1e-15);
        EXPECT_NEAR(std::abs(w.value[0]), 1e-2, 1e-7);
    }
}

TEST(Optimizer, MissingGradientIsUsageError)
{
    Parameter w("w", Tensor::scalar(1.0));
    Optimizer opt(OptimizerKind::adam, 0.1);
    Parameter *params[] = {&w};
    EXPECT_THROW(opt.step(params), UsageError);
}

TEST(Optimizer, FrozenParametersUntouched)
{
    Parameter live("live", gaussian({4}, 1.0, 9));
    Parameter frozen("frozen", gaussian({4}, 1.0, 10), false);
    frozen.grad = Tensor({4}, 3.0);
    live.grad = Tensor({4}, 1.0);
    const Tensor snapshot = frozen.value;
    Optimizer opt(OptimizerKind::adam, 0.1);
    Parameter *params[] = {&live, &frozen};
    for (int i = 0; i < 3; ++i) {
        live.grad = Tensor({4}, 1.0);
        opt.step(params);
        EXPECT_EQ(opt.step_count(), static_cast<std::uint64_t>(i + 1));
    }
    EXPECT_TRUE(frozen.value.bit_equal(snapshot));
    EXPECT_TRUE(opt.has_moments(live));
    EXPECT_FALSE(opt.has_moments(frozen));
}

TEST(FiniteDiff, SquareAtThree)
{
    Parameter w("w", Tensor::scalar(3.0));
    Parameter *params[] = {&w};
    const double err = finite_diff_check([&](Graph &g) {
        Var v = g.param(w);
        return ops::mul(v, v);
    }, params);
    EXPECT_LT(err, 1e-9);
}

TEST(FiniteDiff, FrozenCoordinatesSkipped)
{
    Parameter w("w", Tensor::vector({1.0, 2.0}));
    Parameter frozen("frozen", Tensor::vector({3.0, 4.0, 5.0}), false);
    Parameter *params[] = {&w, &frozen};
    const auto report = finite_diff_report([&](Graph &g) { return ops::sum(ops::mul(g.param(w), g.param(w))); },
                                           params);
    EXPECT_EQ(report.probed, 2u);
    EXPECT_EQ(report.skipped, 3u);
}

TEST(FiniteDiff, NonFiniteProbeNamesCoordinate)
{
    Parameter w("w", Tensor::vector({1.0, 0.0}));
    Parameter *params[] = {&w};
    try {
        finite_diff_check([&](Graph &g) {
            Var v = g.param(w);
            const double second = v.value()[1];
            // The loss turns NaN once the second coordinate is probed below zero.
            Tensor t = Tensor::scalar(second < 0 ? std::nan("") : second);
            return ops::add(ops::sum(v), g.constant(t));
        }, params);
        FAIL() << "expected NumericError";
    } catch (const NumericError &e) {
        EXPECT_NE(std::string(e.what()).find("w[1]"), std::string::npos) << e.what();
    }
}

// Every differentiable op, probed at random points.
TEST(FiniteDiff, EveryOpAgreesWithBackward)
{
    Rng rng(77);
    Parameter a("a", gaussian({6, 4}, 0.7, rng));
    Parameter b("b", gaussian({4, 4}, 0.7, rng));
    Parameter c("c", gaussian({6, 4}, 0.7, rng));
    Parameter bias("bias", gaussian({4}, 0.7, rng));
    Parameter s("s", gaussian({6, 1}, 0.7, rng));
    Parameter table("table", gaussian({10, 4}, 0.7, rng));
    Parameter pos("pos", gaussian({3, 4}, 0.7, rng));
    const std::vector<std::uint32_t> ids{1, 4, 4, 9, 0, 2};
    const std::vector<std::uint32_t> labels{0, 3, 1, 2, 2, 1};

    using Builder = std::function<Var(Graph &)>;
    const std::vector<std::pair<std::string, Builder>> cases = {
        {"matmul", [&](Graph &g) { return ops::sum(ops::matmul(g.param(a), g.param(b))); }},
        {"linear", [&](Graph &g) { return ops::sum(ops::mul(ops::linear(g.param(a), g.param(b)), g.param(c))); }},
        {"add_sub", [&](Graph &g) {
             return ops::sum(ops::mul(ops::sub(g.param(a), g.param(c)), ops::add(g.param(a), g.param(c))));
         }},
        {"bias", [&](Graph &g) {
             Var y = ops::add_bias(g.param(a), g.param(bias));
             return ops::sum(ops::mul(y, y));
         }},
        {"row_scale", [&](Graph &g) { return ops::sum(ops::mul(ops::row_scale(g.param(a), g.param(s)), g.param(c))); }},
        {"select_concat", [&](Graph &g) {
             Var x = g.param(a);
             Var blocks[] = {ops::select_column(x, 2), g.param(s), ops::select_column(x, 0)};
             Var cat = ops::concat_cols(blocks);
             return ops::sum(ops::mul(cat, cat));
         }},
        {"relu", [&](Graph &g) { return ops::sum(ops::mul(ops::relu(g.param(a)), g.param(c))); }},
        {"softmax", [&](Graph &g) { return ops::sum(ops::mul(ops::softmax(g.param(a)), g.param(c))); }},
        {"cross_entropy", [&](Graph &g) { return ops::cross_entropy(g.param(a), labels); }},
        {"l1", [&](Graph &g) { return ops::l1_norm(g.param(a)); }},
        {"scale", [&](Graph &g) { return ops::sum(ops::mul(ops::scale(g.param(a), -2.5), g.param(c))); }},
        {"layer_norm", [&](Graph &g) { return ops::sum(ops::mul(ops::layer_norm(g.param(a)), g.param(c))); }},
        {"embedding_positional_pool", [&](Graph &g) {
             Var x = ops::add_positional(ops::embedding(g.param(table), ids), g.param(pos), 3);
             Var pooled = ops::mean_pool(x, 3);
             return ops::sum(ops::mul(pooled, pooled));
         }},
        {"attention", [&](Graph &g) {
             Var q = g.param(a);
             Var k = ops::linear(g.param(c), g.param(b));
             Var v = ops::add(g.param(c), g.param(a));
             return ops::sum(ops::mul(ops::attention(q, k, v, 3, 2), g.param(c)));
         }},
    };
    Parameter *params[] = {&a, &b, &c, &bias, &s, &table, &pos};
    for (const auto &[name, build] : cases) {
        const auto report = finite_diff_report(build, params);
        EXPECT_LT(report.max_relative_error, 1e-6) << name << " worst " << report.worst_coordinate;
    }
}

TEST(Dropout, TrainMaskIsDeterministicAndScaled)
{
    Parameter x("x", Tensor({50, 4}, 1.0));
    auto run = [&] {
        Rng rng(99);
        Graph g;
        return ops::dropout(g.param(x), 0.1, rng).value();
    };
    const Tensor a = run();
    EXPECT_TRUE(a.bit_equal(run()));
    for (double v : a.data())
        EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.9) < 1e-15);
    Rng rng(1);
    Graph g;
    Var same = ops::dropout(g.param(x), 0.0, rng);
    EXPECT_TRUE(same.value().bit_equal(x.value));
}
