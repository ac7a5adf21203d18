#include <cmath>
#include <iostream>

#include <gtest/gtest.h>

#include "pam/errors.hpp"
#include "pam/fisher.hpp"
#include "test_util.hpp"

using namespace pam;
using namespace pam::testing;

namespace {

// Per-sample squared-gradient loop built on the batch gradient of single rows.
std::vector<double> fisher_loop(const ModelSpec& spec, const ParamVector& theta, const Batch& data) {
    std::vector<double> f(theta.dim(), 0.0);
    for (std::size_t n = 0; n < data.size(); ++n) {
        Batch one;
        one.inputs = Matrix(1, data.inputs.cols);
        for (std::size_t k = 0; k < data.inputs.cols; ++k) one.inputs(0, k) = data.inputs(n, k);
        one.labels = {data.labels[n]};
        const ParamVector g = grad(spec, theta, one);
        for (std::size_t j = 0; j < f.size(); ++j) f[j] += g[j] * g[j];
    }
    for (auto& v : f) v /= static_cast<double>(data.size());
    return f;
}

// ΔᵀHΔ as the central difference of the analytic gradient along Δ.
double hessian_quad_from_grad(const ModelSpec& spec, const ParamVector& theta, const ParamVector& delta,
                              const Batch& b, double h = 1e-5) {
    const ParamVector gp = grad(spec, axpy(theta, h, delta), b);
    const ParamVector gm = grad(spec, axpy(theta, -h, delta), b);
    double s = 0.0;
    for (std::size_t j = 0; j < delta.dim(); ++j) s += (gp[j] - gm[j]) / (2.0 * h) * delta[j];
    return s;
}

Batch separable_line() {
    Batch b;
    b.inputs = Matrix(4, 1);
    b.inputs(0, 0) = 1.0;
    b.inputs(1, 0) = 2.0;
    b.inputs(2, 0) = -1.0;
    b.inputs(3, 0) = -1.5;
    b.labels = {0, 0, 1, 1};
    return b;
}

}  // namespace

TEST(FisherDiag, SingleSampleIsSquaredGradient) {
    Engine eng(1);
    const ModelSpec spec = mlp(3, 4, 3);
    const ParamVector theta = random_vector(eng, spec.dim(), 0.5);
    const Batch b = random_batch(eng, 1, 3, 3);
    const ParamVector g = grad(spec, theta, b);
    const FisherDiag f = fisher_diag(spec, theta, b);
    EXPECT_EQ(f.n_samples(), 1U);
    for (std::size_t j = 0; j < spec.dim(); ++j) EXPECT_NEAR(f[j], g[j] * g[j], 1e-15 + 1e-13 * g[j] * g[j]);
}

TEST(FisherDiag, MatchesPerSampleLoop) {
    Engine eng(2);
    for (const ModelSpec& spec : {logistic(4, 3), mlp(4, 5, 3)}) {
        const ParamVector theta = random_vector(eng, spec.dim(), 0.7);
        const Batch b = random_batch(eng, 57, 4, 3);
        const FisherDiag f = fisher_diag(spec, theta, b);
        const auto oracle = fisher_loop(spec, theta, b);
        for (std::size_t j = 0; j < spec.dim(); ++j) EXPECT_NEAR(f[j], oracle[j], 1e-12);
    }
}

TEST(FisherDiag, MaskedCoordinatesAreZero) {
    Engine eng(3);
    const ModelSpec spec = mlp(3, 4, 3);
    const ParamVector theta = random_vector(eng, spec.dim(), 0.7);
    const Batch b = random_batch(eng, 20, 3, 3);
    const CoordMask mask = spec.adapter_mask();
    const FisherDiag f = fisher_diag(spec, theta, b, &mask);
    const FisherDiag full = fisher_diag(spec, theta, b);
    for (std::size_t j = 0; j < spec.dim(); ++j) {
        EXPECT_GE(f[j], 0.0);
        EXPECT_EQ(f[j], mask[j] ? full[j] : 0.0);
    }
}

TEST(FisherDiag, VanishesAtConfidentOptimum) {
    const ModelSpec spec = logistic(1, 2);
    const Batch b = separable_line();
    ParamVector theta(spec.dim());
    for (int it = 0; it < 200000; ++it) theta = axpy(theta, -20.0, grad(spec, theta, b));
    const FisherDiag f = fisher_diag(spec, theta, b);
    for (std::size_t j = 0; j < spec.dim(); ++j) EXPECT_LT(f[j], 1e-6);
}

TEST(FisherDiag, EmptyDatasetThrows) {
    const ModelSpec spec = logistic(2, 2);
    Batch b;
    b.inputs = Matrix(0, 2);
    EXPECT_THROW(fisher_diag(spec, ParamVector(spec.dim()), b), EmptyDataError);
}

TEST(FisherDiag, RejectsNegativeEntries) {
    EXPECT_THROW(FisherDiag({1.0, -0.1}, 3), NumericalError);
    EXPECT_THROW(FisherDiag({1.0}, 0), EmptyDataError);
}

TEST(QuadForm, HandValues) {
    EXPECT_EQ(quad_form(FisherDiag({1, 1}, 1), {3, 4}), 25.0);
    EXPECT_EQ(quad_form(FisherDiag({1, 1}, 1), {0, 0}), 0.0);
    EXPECT_EQ(quad_form(FisherDiag({2, 4}, 1), {1, 1}), 6.0);
    EXPECT_THROW(quad_form(FisherDiag({1, 1}, 1), {1, 1, 1}), DimensionError);
}

TEST(CrossForm, HandValuesAndSymmetry) {
    EXPECT_EQ(cross_form(FisherDiag({1, 2}, 1), {1, 1}, {1, -1}), -1.0);
    EXPECT_EQ(cross_form(FisherDiag({1, 2}, 1), {1, 0}, {0, 5}), 0.0);
    Engine eng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const ParamVector u = random_vector(eng, 9);
        const ParamVector v = random_vector(eng, 9);
        std::vector<double> d(9);
        for (auto& x : d) x = std::abs(std::normal_distribution<double>(0.0, 1.0)(eng));
        const FisherDiag f(d, 1);
        EXPECT_EQ(cross_form(f, u, v), cross_form(f, v, u));
        EXPECT_EQ(cross_form(f, u, u), quad_form(f, u));
    }
    EXPECT_THROW(cross_form(FisherDiag({1}, 1), {1}, {1, 2}), DimensionError);
}

TEST(QuadFormFd, QuadraticIsExact) {
    const LossFn quad = [](const ParamVector& t) { return 0.5 * (2.0 * t[0] * t[0] + 4.0 * t[1] * t[1]); };
    for (double eps : {1.0, 0.5, 0.25}) EXPECT_DOUBLE_EQ(quad_form_fd(quad, {0.0, 0.0}, {1.0, 1.0}, eps), 6.0);
    EXPECT_EQ(quad_form_fd(quad, {0.3, -0.2}, {0.0, 0.0}, 1e-3), 0.0);
}

TEST(QuadFormFd, RejectsBadInputs) {
    const LossFn quad = [](const ParamVector& t) { return t[0] * t[0]; };
    EXPECT_THROW(quad_form_fd(quad, {0.0}, {1.0}, 0.0), ConfigError);
    EXPECT_THROW(quad_form_fd(quad, {0.0}, {1.0, 2.0}, 1e-3), DimensionError);
    const LossFn blowup = [](const ParamVector& t) { return t[0] > 0.0 ? INFINITY : 0.0; };
    EXPECT_THROW(quad_form_fd(blowup, {0.0}, {1.0}, 1e-3), NumericalError);
}

TEST(HessianOracle, BinaryUniformHandValue) {
    const ModelSpec spec = logistic(2, 2);
    const ParamVector theta(spec.dim());  // uniform p
    Batch b;
    b.inputs = Matrix(1, 2);
    b.inputs(0, 0) = 1.5;
    b.inputs(0, 1) = -0.5;
    b.labels = {1};
    // W rows (w0, w1), then biases.
    const ParamVector delta{0.2, -0.4, 1.0, 0.3, 0.1, -0.2};
    const double u = (1.0 - 0.2) * 1.5 + (0.3 - -0.4) * -0.5 + (-0.2 - 0.1);
    const double expect = 0.25 * u * u;
    EXPECT_NEAR(logistic_hessian_quad_oracle(spec, theta, delta, b), expect, 1e-14);
    EXPECT_NEAR(quad_form_fd(spec, theta, delta, 1e-4, b), expect, 1e-6);
}

TEST(HessianOracle, MatchesGradientDifferences) {
    Engine eng(5);
    const ModelSpec spec = logistic(4, 3);
    for (int trial = 0; trial < 10; ++trial) {
        const ParamVector theta = random_vector(eng, spec.dim(), 0.8);
        const ParamVector delta = random_vector(eng, spec.dim(), 1.0);
        const Batch b = random_batch(eng, 30, 4, 3);
        const double oracle = hessian_quad_from_grad(spec, theta, delta, b);
        EXPECT_NEAR(logistic_hessian_quad_oracle(spec, theta, delta, b), oracle, 1e-7 * std::max(1.0, oracle));
    }
}

TEST(HessianOracle, ZeroDirectionAndPsd) {
    Engine eng(6);
    const ModelSpec spec = logistic(3, 4);
    const ParamVector theta = random_vector(eng, spec.dim(), 1.0);
    const Batch b = random_batch(eng, 20, 3, 4);
    EXPECT_EQ(logistic_hessian_quad_oracle(spec, theta, ParamVector(spec.dim()), b), 0.0);
    for (int trial = 0; trial < 100; ++trial) {
        EXPECT_GE(logistic_hessian_quad_oracle(spec, theta, random_vector(eng, spec.dim(), 2.0), b), -1e-12);
    }
}

TEST(HessianOracle, RejectsMlp) {
    const ModelSpec spec = mlp(2, 3, 2);
    Engine eng(7);
    EXPECT_THROW(logistic_hessian_quad_oracle(spec, ParamVector(spec.dim()), ParamVector(spec.dim()),
                                              random_batch(eng, 3, 2, 2)),
                 UnsupportedModelError);
}

TEST(HessianOracle, DiagonalMatchesQuadOnBasisVectors) {
    Engine eng(8);
    const ModelSpec spec = logistic(3, 3);
    const ParamVector theta = random_vector(eng, spec.dim(), 0.5);
    const Batch b = random_batch(eng, 25, 3, 3);
    const auto diag = logistic_hessian_diag(spec, theta, b);
    for (std::size_t j = 0; j < spec.dim(); ++j) {
        ParamVector e(spec.dim());
        e[j] = 1.0;
        EXPECT_NEAR(diag[j], logistic_hessian_quad_oracle(spec, theta, e, b), 1e-13);
    }
}

TEST(QuadFormFd, MatchesLogisticHessianAtSmallEps) {
    Engine eng(9);
    const ModelSpec spec = logistic(3, 2);
    for (int trial = 0; trial < 10; ++trial) {
        const ParamVector theta = random_vector(eng, spec.dim(), 0.5);
        const ParamVector delta = random_vector(eng, spec.dim(), 1.0);
        const Batch b = random_batch(eng, 40, 3, 2);
        const double exact = logistic_hessian_quad_oracle(spec, theta, delta, b);
        EXPECT_NEAR(quad_form_fd(spec, theta, delta, 1e-3, b), exact, 1e-4 * exact);
    }
}

TEST(QuadFormFd, ErrorShrinksQuadratically) {
    Engine eng(10);
    const ModelSpec spec = logistic(3, 3);
    for (int trial = 0; trial < 10; ++trial) {
        const ParamVector theta = random_vector(eng, spec.dim(), 0.5);
        const ParamVector delta = random_vector(eng, spec.dim(), 1.0);
        const Batch b = random_batch(eng, 40, 3, 3);
        const double exact = logistic_hessian_quad_oracle(spec, theta, delta, b);
        const double e1 = std::abs(quad_form_fd(spec, theta, delta, 0.2, b) - exact);
        const double e2 = std::abs(quad_form_fd(spec, theta, delta, 0.1, b) - exact);
        const double ratio = e1 / e2;
        EXPECT_GE(ratio, 3.0);
        EXPECT_LE(ratio, 5.0);
    }
}

TEST(FisherDiag, HessianDiagonalGapIsReported) {
    // Well-specified logistic task: labels drawn from the model itself.
    Engine eng(11);
    const ModelSpec spec = logistic(3, 2);
    const ParamVector truth{0.6, -0.3, 0.2, -0.6, 0.3, -0.2, 0.1, -0.1};
    Batch b;
    b.inputs = Matrix(3000, 3);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : b.inputs.data) v = nd(eng);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    const Matrix z = forward(spec, truth, b.inputs);
    for (std::size_t n = 0; n < b.inputs.rows; ++n) {
        b.labels.push_back(ud(eng) < 1.0 / (1.0 + std::exp(z(n, 1) - z(n, 0))) ? 0 : 1);
    }
    ParamVector theta(spec.dim());
    for (int it = 0; it < 3000; ++it) theta = axpy(theta, -2.0, grad(spec, theta, b));
    const FisherDiag f = fisher_diag(spec, theta, b);
    const auto h = logistic_hessian_diag(spec, theta, b);
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < h.size(); ++j) {
        num += (f[j] - h[j]) * (f[j] - h[j]);
        den += h[j] * h[j];
    }
    const double gap = std::sqrt(num / den);
    RecordProperty("fisher_hessian_relative_gap", std::to_string(gap));
    std::cout << "fisher vs hessian diagonal relative L2 gap: " << gap << "\n";
    EXPECT_TRUE(std::isfinite(gap));
}
