#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "pam/errors.hpp"
#include "pam/model.hpp"
#include "test_util.hpp"

using namespace pam;
using namespace pam::testing;

TEST(Forward, LogisticZeroWeightsGiveZeroLogits) {
    const ModelSpec spec = logistic(3, 4);
    Engine eng(1);
    const Batch b = random_batch(eng, 5, 3, 4);
    const Matrix z = forward(spec, ParamVector(spec.dim()), b.inputs);
    for (double v : z.data) EXPECT_EQ(v, 0.0);
}

TEST(Forward, LogisticLogitIsDotProduct) {
    const ModelSpec spec = logistic(3, 2);
    ParamVector theta(spec.dim());
    // Row of class 1: w = (0.5, -2, 3), biases zero.
    theta[3] = 0.5;
    theta[4] = -2.0;
    theta[5] = 3.0;
    Matrix x(1, 3);
    x(0, 0) = 2.0;
    x(0, 1) = 1.0;
    x(0, 2) = -1.0;
    const Matrix z = forward(spec, theta, x);
    EXPECT_DOUBLE_EQ(z(0, 1), 0.5 * 2.0 - 2.0 * 1.0 + 3.0 * -1.0);
    EXPECT_EQ(z(0, 0), 0.0);
}

TEST(Forward, ZeroAdapterLeavesBaseLogits) {
    const ModelSpec spec = mlp(4, 6, 3, 2);
    Engine eng(2);
    const ParamVector base = random_vector(eng, spec.dim(), 0.7);
    LowRankAdapter ad(spec.hidden_site(), 2);
    for (auto& v : ad.a.data) v = 0.3;  // b stays zero
    const ParamVector adapted = axpy(base, 1.0, materialize(ad, spec.dim()));
    const Batch b = random_batch(eng, 7, 4, 3);
    EXPECT_EQ(forward(spec, adapted, b.inputs), forward(spec, base, b.inputs));
}

TEST(Forward, DimensionMismatchThrows) {
    const ModelSpec spec = mlp(4, 6, 3);
    EXPECT_THROW(forward(spec, ParamVector(spec.dim() + 1), Matrix(1, 4)), DimensionError);
    EXPECT_THROW(forward(spec, ParamVector(spec.dim()), Matrix(1, 5)), DimensionError);
}

TEST(CeLoss, UniformLogitsGiveLogC) {
    const ModelSpec spec = logistic(2, 4);
    Batch b;
    b.inputs = Matrix(3, 2, 1.0);
    b.labels = {0, 2, 3};
    EXPECT_NEAR(ce_loss(spec, ParamVector(spec.dim()), b), std::log(4.0), 1e-15);
    EXPECT_NEAR(ce_loss(spec, ParamVector(spec.dim()), b), 1.3862943611198906, 1e-15);
}

TEST(CeLoss, TwoClassHandValue) {
    // Bias-only logits (1, 0), true class 0.
    const ModelSpec spec = logistic(1, 2);
    ParamVector theta(spec.dim());
    theta[2] = 1.0;
    Batch b;
    b.inputs = Matrix(1, 1, 0.0);
    b.labels = {0};
    EXPECT_NEAR(ce_loss(spec, theta, b), 0.31326168751822286, 1e-15);
}

TEST(CeLoss, MonotoneSaturationWithMargin) {
    const ModelSpec spec = logistic(1, 2);
    Batch b;
    b.inputs = Matrix(1, 1, 0.0);
    b.labels = {0};
    double prev = 1e300;
    for (double margin : {5.0, 10.0, 20.0}) {
        ParamVector theta(spec.dim());
        theta[2] = margin;
        const double l = ce_loss(spec, theta, b);
        EXPECT_GE(l, 0.0);
        EXPECT_LT(l, prev);
        prev = l;
    }
    EXPECT_LT(prev, 1e-8);
}

TEST(CeLoss, LargeLogitsStayFinite) {
    const ModelSpec spec = logistic(1, 3);
    ParamVector theta(spec.dim());
    theta[3] = 800.0;
    theta[4] = -800.0;
    Batch b;
    b.inputs = Matrix(2, 1, 0.0);
    b.labels = {0, 1};
    const double l = ce_loss(spec, theta, b);
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_NEAR(l, 0.5 * 1600.0, 1e-9);
}

TEST(CeLoss, MatchesLonghandLogistic) {
    Engine eng(4);
    const ModelSpec spec = logistic(5, 4);
    const ParamVector theta = random_vector(eng, spec.dim(), 1.0);
    const Batch b = random_batch(eng, 33, 5, 4);
    EXPECT_NEAR(ce_loss(spec, theta, b), logistic_loss_longhand(theta, b, 5, 4), 1e-12);
}

TEST(CeLoss, ShiftInvariance) {
    Engine eng(5);
    for (ModelSpec spec : {logistic(3, 4), mlp(3, 5, 4)}) {
        const ParamVector theta = random_vector(eng, spec.dim(), 0.8);
        const Batch b = random_batch(eng, 12, 3, 4);
        ParamVector shifted = theta;
        // Adding c to every class bias adds c to every logit of every row.
        for (std::size_t c = 0; c < spec.num_classes; ++c) shifted[spec.head_bias_offset() + c] += 3.7;
        EXPECT_NEAR(ce_loss(spec, shifted, b), ce_loss(spec, theta, b), 1e-10);
    }
}

TEST(CeLoss, LabelOutsideWindowThrows) {
    const ModelSpec spec = logistic(2, 4).with_window(2, 4);
    Batch b;
    b.inputs = Matrix(1, 2);
    b.labels = {1};
    EXPECT_THROW(ce_loss(spec, ParamVector(spec.dim()), b), LabelError);
    b.labels = {4};
    EXPECT_THROW(ce_loss(logistic(2, 4), ParamVector(spec.dim()), b), LabelError);
}

TEST(CeLoss, EmptyBatchThrows) {
    const ModelSpec spec = logistic(2, 2);
    Batch b;
    b.inputs = Matrix(0, 2);
    EXPECT_THROW(ce_loss(spec, ParamVector(spec.dim()), b), EmptyDataError);
}

TEST(CeLoss, WindowIgnoresOutsideLogits) {
    Engine eng(6);
    const ModelSpec full = logistic(3, 5);
    const ModelSpec win = full.with_window(2, 4);
    ParamVector theta = random_vector(eng, full.dim(), 1.0);
    const Batch b = random_batch(eng, 9, 3, 2, 2);
    const double before = ce_loss(win, theta, b);
    // Rows of classes 0, 1 and 4 are outside the window.
    for (int c : {0, 1, 4}) theta[full.head_bias_offset() + static_cast<std::size_t>(c)] += 50.0;
    EXPECT_EQ(ce_loss(win, theta, b), before);
}

TEST(Grad, MatchesFiniteDifferences) {
    Engine eng(7);
    for (ModelSpec spec : {logistic(4, 3), mlp(4, 5, 3), mlp(3, 4, 4).with_window(1, 3)}) {
        for (Activation act : {Activation::tanh, Activation::sigmoid, Activation::softplus}) {
            spec.activation = act;
            const ParamVector theta = random_vector(eng, spec.dim(), 0.6);
            const Batch b = random_batch(eng, 10, spec.input_dim, spec.window_end() - spec.window_begin(),
                                         spec.window_begin());
            const ParamVector g = grad(spec, theta, b);
            std::uniform_int_distribution<std::size_t> pick(0, spec.dim() - 1);
            for (int k = 0; k < 20; ++k) {
                const std::size_t j = pick(eng);
                const double fd = fd_partial([&](const ParamVector& t) { return ce_loss(spec, t, b); }, theta, j);
                EXPECT_LT(std::abs(g[j] - fd) / (std::abs(fd) + 1e-8), 1e-5) << "coordinate " << j;
            }
        }
    }
}

TEST(Grad, LossAndGradAgree) {
    Engine eng(8);
    const ModelSpec spec = mlp(3, 4, 3);
    const ParamVector theta = random_vector(eng, spec.dim(), 0.5);
    const Batch b = random_batch(eng, 6, 3, 3);
    const LossGrad lg = loss_and_grad(spec, theta, b);
    EXPECT_NEAR(lg.loss, ce_loss(spec, theta, b), 1e-14);
    EXPECT_EQ(lg.grad, grad(spec, theta, b));
}

TEST(Grad, FrozenCoordinatesAreZero) {
    Engine eng(9);
    const ModelSpec spec = mlp(3, 4, 3);
    const ParamVector theta = random_vector(eng, spec.dim(), 0.5);
    const Batch b = random_batch(eng, 6, 3, 3);
    const CoordMask mask = spec.adapter_mask();
    const ParamVector g = grad(spec, theta, b, &mask);
    const ParamVector full = grad(spec, theta, b);
    for (std::size_t j = 0; j < spec.dim(); ++j) {
        if (mask[j]) {
            EXPECT_EQ(g[j], full[j]);
        } else {
            EXPECT_EQ(g[j], 0.0);
        }
    }
}

TEST(Grad, VanishesAtSeparableMinimizer) {
    // Two points on a line, one per class; long plain gradient descent
    // stands in for the minimizer.
    const ModelSpec spec = logistic(1, 2);
    Batch b;
    b.inputs = Matrix(2, 1);
    b.inputs(0, 0) = 1.0;
    b.inputs(1, 0) = -1.0;
    b.labels = {0, 1};
    ParamVector theta(spec.dim());
    double gnorm = 1.0;
    for (int it = 0; it < 2'000'000 && gnorm >= 1e-6; ++it) {
        const ParamVector g = grad(spec, theta, b);
        gnorm = norm(g);
        theta = axpy(theta, -20.0, g);
    }
    EXPECT_LT(norm(grad(spec, theta, b)), 1e-6);
    EXPECT_LT(ce_loss(spec, theta, b), 1e-5);
}

TEST(Accuracy, SeparableTrainedModelIsPerfect) {
    const ModelSpec spec = logistic(2, 2);
    Batch b;
    b.inputs = Matrix(40, 2);
    for (std::size_t i = 0; i < 40; ++i) {
        const double side = i < 20 ? 1.0 : -1.0;
        b.inputs(i, 0) = side * (1.0 + 0.05 * static_cast<double>(i % 7));
        b.inputs(i, 1) = 0.3 * static_cast<double>(i % 5) - 0.6;
        b.labels.push_back(i < 20 ? 0 : 1);
    }
    ParamVector theta(spec.dim());
    for (int it = 0; it < 2000; ++it) theta = axpy(theta, -1.0, grad(spec, theta, b));
    EXPECT_EQ(accuracy(spec, theta, b), 1.0);
}

TEST(Accuracy, TieBreakPicksLowestClass) {
    const ModelSpec spec = logistic(2, 2);
    Engine eng(10);
    Batch b = random_batch(eng, 50, 2, 2);
    const double zeros = static_cast<double>(std::count(b.labels.begin(), b.labels.end(), 0));
    EXPECT_DOUBLE_EQ(accuracy(spec, ParamVector(spec.dim()), b), zeros / 50.0);
}

TEST(Accuracy, SingleCorrectSample) {
    const ModelSpec spec = logistic(1, 3);
    ParamVector theta(spec.dim());
    theta[3 + 2] = 1.0;
    Batch b;
    b.inputs = Matrix(1, 1);
    b.labels = {2};
    EXPECT_EQ(accuracy(spec, theta, b), 1.0);
}

TEST(Accuracy, RestrictedToClassSubset) {
    const ModelSpec spec = logistic(1, 3);
    ParamVector theta(spec.dim());
    theta[3 + 2] = 5.0;  // class 2 dominates but is unseen
    theta[3 + 1] = 1.0;
    Batch b;
    b.inputs = Matrix(1, 1);
    b.labels = {1};
    const std::vector<int> seen{0, 1};
    EXPECT_EQ(accuracy(spec, theta, b, seen), 1.0);
    EXPECT_EQ(accuracy(spec, theta, b), 0.0);
}

TEST(Accuracy, EmptyDatasetThrows) {
    const ModelSpec spec = logistic(1, 2);
    Batch b;
    b.inputs = Matrix(0, 1);
    EXPECT_THROW(accuracy(spec, ParamVector(spec.dim()), b), EmptyDataError);
}

TEST(Determinism, RepeatedCallsAreBitIdentical) {
    Engine eng(11);
    const ModelSpec spec = mlp(5, 7, 4);
    const ParamVector theta = random_vector(eng, spec.dim(), 0.5);
    const Batch b = random_batch(eng, 100, 5, 4);
    EXPECT_EQ(forward(spec, theta, b.inputs), forward(spec, theta, b.inputs));
    EXPECT_EQ(ce_loss(spec, theta, b), ce_loss(spec, theta, b));
    EXPECT_EQ(grad(spec, theta, b), grad(spec, theta, b));
}

TEST(ModelSpec, LayoutAndMasks) {
    const ModelSpec spec = mlp(3, 4, 5, 2);
    EXPECT_EQ(spec.dim(), 4U * 3 + 4 + 5 * 4 + 5);
    EXPECT_EQ(spec.adapter_mask().count(), 12U);
    const std::vector<int> cls{1, 3};
    EXPECT_EQ(spec.head_mask(cls).count(), 2U * (4 + 1));
    EXPECT_THROW(logistic(3, 2).hidden_site(), UnsupportedModelError);
    EXPECT_EQ(logistic(3, 2).adapter_mask().count(), 0U);
}

TEST(PairwiseSum, MatchesAccumulateOnSmallIntegers) {
    std::vector<double> xs(1000);
    std::iota(xs.begin(), xs.end(), 1.0);
    EXPECT_EQ(pairwise_sum(xs), 500500.0);
    EXPECT_EQ(pairwise_sum({}), 0.0);
}
