#include <cmath>

#include <gtest/gtest.h>

#include "pam/errors.hpp"
#include "pam/merge.hpp"
#include "test_util.hpp"

using namespace pam;
using namespace pam::testing;

namespace {

FisherDiag random_fisher(Engine& eng, std::size_t dim) {
    std::uniform_real_distribution<double> ud(0.05, 3.0);
    std::vector<double> v(dim);
    for (auto& x : v) x = ud(eng);
    return FisherDiag(v, 10);
}

struct Instance {
    MergeState state;
    ParamVector theta_star;
    FisherDiag fisher;
};

// t−1 random merges followed by a random candidate for task t.
Instance random_instance(Engine& eng, std::size_t dim, int t) {
    MergeState s(random_vector(eng, dim, 1.0));
    for (int i = 1; i < t; ++i) s = merge(s, random_vector(eng, dim, 1.5), random_fisher(eng, dim));
    return {s, random_vector(eng, dim, 1.5), random_fisher(eng, dim)};
}

// J(α) written directly from the per-task quadratic surrogate.
double j_longhand(const Instance& in, double alpha) {
    const ParamVector& prev = in.state.theta_hat;
    double total = 0.0;
    auto term = [&](const ParamVector& star, std::span<const double> f) {
        for (std::size_t j = 0; j < prev.dim(); ++j) {
            const double merged = prev[j] + alpha * (in.theta_star[j] - prev[j]);
            total += 0.5 * f[j] * (merged - star[j]) * (merged - star[j]);
        }
    };
    for (const auto& c : in.state.history) term(c.theta_star, c.fisher);
    term(in.theta_star, in.fisher.values());
    return total;
}

template <typename F>
double golden_min(F&& f, double lo, double hi) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > 1e-11) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace

TEST(OptimalAlpha, FirstTaskIsOne) {
    Engine eng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Instance in = random_instance(eng, 12, 1);
        const AlphaResult r = optimal_alpha(in.state, in.theta_star, in.fisher);
        EXPECT_NEAR(r.raw, 1.0, 1e-9);
        EXPECT_EQ(r.used, 1.0);
    }
}

TEST(OptimalAlpha, SymmetricTwoTaskMidpoint) {
    MergeState s(ParamVector{0.0});
    s = merge(s, ParamVector{0.0}, FisherDiag({1.0}, 1));  // degenerate: falls back to α = 1
    EXPECT_EQ(s.theta_hat, ParamVector{0.0});
    EXPECT_TRUE(s.log.back().degenerate);
    const AlphaResult r = optimal_alpha(s, ParamVector{1.0}, FisherDiag({1.0}, 1));
    EXPECT_DOUBLE_EQ(r.raw, 0.5);
    EXPECT_DOUBLE_EQ(r.used, 0.5);
}

TEST(OptimalAlpha, MatchesGoldenSectionMinimizer) {
    Engine eng(2);
    std::uniform_int_distribution<std::size_t> dims(1, 32);
    std::uniform_int_distribution<int> tasks(1, 8);
    int checked = 0;
    while (checked < 100) {
        const Instance in = random_instance(eng, dims(eng), tasks(eng));
        const AlphaResult r = optimal_alpha(in.state, in.theta_star, in.fisher);
        if (r.raw < -1.9 || r.raw > 2.9) continue;  // minimizer outside the search bracket
        const double oracle = golden_min([&](double a) { return j_longhand(in, a); }, -2.0, 3.0);
        EXPECT_NEAR(r.raw, oracle, 1e-5);
        EXPECT_EQ(r.used, std::clamp(r.raw, 0.0, 1.0));
        ++checked;
    }
}

TEST(OptimalAlpha, DegenerateThrows) {
    MergeState s(ParamVector{1.0, 2.0});
    EXPECT_THROW(optimal_alpha(s, ParamVector{1.0, 2.0}, FisherDiag({1.0, 1.0}, 1)), DegenerateTaskVector);
    // Δ lies entirely in the zero-Fisher coordinate.
    EXPECT_THROW(optimal_alpha(s, ParamVector{1.0, 5.0}, FisherDiag({1.0, 0.0}, 1)), DegenerateTaskVector);
}

TEST(ObjectiveJ, MatchesLonghandAndEndpoints) {
    Engine eng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const Instance in = random_instance(eng, 7, 4);
        for (double a : {-0.5, 0.0, 0.3, 1.0, 2.0}) {
            EXPECT_NEAR(objective_J(in.state, in.theta_star, in.fisher, a), j_longhand(in, a),
                        1e-10 * std::max(1.0, j_longhand(in, a)));
        }
        double constant = 0.0;
        for (const auto& c : in.state.history) {
            constant += 0.5 * quad_form(fisher_of(c), subtract(in.state.theta_hat, c.theta_star));
        }
        constant += 0.5 * quad_form(in.fisher, subtract(in.state.theta_hat, in.theta_star));
        EXPECT_NEAR(objective_J(in.state, in.theta_star, in.fisher, 0.0), constant, 1e-10 * std::max(1.0, constant));
    }
    const Instance first = random_instance(eng, 5, 1);
    EXPECT_NEAR(objective_J(first.state, first.theta_star, first.fisher, 1.0), 0.0, 1e-12);
}

TEST(ObjectiveJ, ClosedFormIsGlobalMinimum) {
    Engine eng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const Instance in = random_instance(eng, 10, 3);
        const double a = optimal_alpha(in.state, in.theta_star, in.fisher).raw;
        const double ja = objective_J(in.state, in.theta_star, in.fisher, a);
        for (double h : {-0.5, -0.1, 0.1, 0.5}) {
            EXPECT_GE(objective_J(in.state, in.theta_star, in.fisher, a + h), ja);
        }
    }
}

TEST(Merge, Endpoints) {
    MergeState s(ParamVector{0.0, 2.0});
    const ParamVector star{2.0, 0.0};
    const FisherDiag f({1.0, 1.0}, 1);
    EXPECT_EQ(merge(s, star, f, {}, 0.0).theta_hat, s.theta_hat);
    EXPECT_EQ(merge(s, star, f, {}, 1.0).theta_hat, star);
    EXPECT_EQ(merge(s, star, f, {}, 0.5).theta_hat, (ParamVector{1.0, 1.0}));
    EXPECT_EQ(convex_merge(s, star, 0.5), (ParamVector{1.0, 1.0}));
}

TEST(Merge, RecordsCheckpointAndLog) {
    Engine eng(5);
    const Instance in = random_instance(eng, 6, 3);
    const MergeState next = merge(in.state, in.theta_star, in.fisher, {4, 5});
    ASSERT_EQ(next.t, 3);
    ASSERT_EQ(next.history.size(), 3U);
    const TaskCheckpoint& c = next.history.back();
    EXPECT_EQ(c.task_id, 3);
    EXPECT_EQ(c.theta_star, in.theta_star);
    EXPECT_EQ(c.fisher, in.fisher.raw());
    EXPECT_EQ(c.classes, (std::vector<int>{4, 5}));
    const AlphaResult r = optimal_alpha(in.state, in.theta_star, in.fisher);
    EXPECT_EQ(c.alpha_raw, r.raw);
    EXPECT_EQ(c.alpha_used, r.used);
    EXPECT_EQ(next.log.back().alpha_raw, r.raw);
    EXPECT_EQ(next.log.back().denominator, r.denominator);
}

TEST(Merge, ComponentwiseConvex) {
    Engine eng(6);
    for (int trial = 0; trial < 200; ++trial) {
        const Instance in = random_instance(eng, 8, 3);
        const MergeState next = merge(in.state, in.theta_star, in.fisher);
        for (std::size_t j = 0; j < 8; ++j) {
            const double lo = std::min(in.state.theta_hat[j], in.theta_star[j]);
            const double hi = std::max(in.state.theta_hat[j], in.theta_star[j]);
            EXPECT_GE(next.theta_hat[j], lo);
            EXPECT_LE(next.theta_hat[j], hi);
        }
    }
}

TEST(Merge, NonMergeableCoordinatesCopiedFromOptimum) {
    CoordMask mask(4);
    mask.set_range(0, 2);
    MergeState s(ParamVector{0.0, 0.0, 0.0, 0.0}, mask);
    const ParamVector star{2.0, 4.0, 7.0, -3.0};
    const MergeState next = merge(s, star, FisherDiag({1.0, 1.0, 1.0, 1.0}, 1), {}, 0.25);
    EXPECT_EQ(next.theta_hat, (ParamVector{0.5, 1.0, 7.0, -3.0}));
    EXPECT_EQ(task_vector(s, star), (ParamVector{2.0, 4.0, 0.0, 0.0}));
}

TEST(Merge, DegenerateFallsBackToOne) {
    MergeState s(ParamVector{1.0, 1.0});
    const MergeState next = merge(s, ParamVector{1.0, 3.0}, FisherDiag({1.0, 0.0}, 1));
    EXPECT_TRUE(next.log.back().degenerate);
    EXPECT_EQ(next.log.back().alpha_used, 1.0);
    EXPECT_EQ(next.theta_hat, (ParamVector{1.0, 3.0}));
}

TEST(DeltaEstimate, HandValues) {
    const TaskCheckpoint c = make_checkpoint(1, ParamVector{0.0, 0.0}, FisherDiag({2.0, 2.0}, 1), {0}, 1.0);
    EXPECT_EQ(delta_estimate(c, ParamVector{0.0, 0.0}), 0.0);
    EXPECT_EQ(delta_estimate(c, ParamVector{1.0, 0.0}), 1.0);
    EXPECT_THROW(delta_estimate(c, ParamVector{1.0}), DimensionError);
}

TEST(DeltaEstimate, SumEqualsJAtUsedAlpha) {
    Engine eng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const Instance in = random_instance(eng, 9, 1 + trial % 6);
        const MergeState next = merge(in.state, in.theta_star, in.fisher);
        double sum = 0.0;
        for (const auto& c : next.history) sum += delta_estimate(c, next.theta_hat);
        const double j = objective_J(in.state, in.theta_star, in.fisher, next.log.back().alpha_used);
        EXPECT_NEAR(sum, j, 1e-9);
        EXPECT_NEAR(next.log.back().j_at_alpha, j, 1e-9);
    }
}

TEST(DeltaEstimate, TracksTrueLossGapOnLogisticTask) {
    // Labels drawn from a logistic model, so the empirical Fisher at the
    // optimum approximates the Hessian.
    Engine eng(8);
    const ModelSpec spec = logistic(2, 2);
    const ParamVector truth{0.8, -0.5, -0.8, 0.5, 0.2, -0.2};
    Batch b;
    b.inputs = Matrix(4000, 2);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : b.inputs.data) v = nd(eng);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    const Matrix z = forward(spec, truth, b.inputs);
    for (std::size_t n = 0; n < 4000; ++n) {
        const double p0 = 1.0 / (1.0 + std::exp(z(n, 1) - z(n, 0)));
        b.labels.push_back(ud(eng) < p0 ? 0 : 1);
    }
    ParamVector theta(spec.dim());
    for (int it = 0; it < 3000; ++it) theta = axpy(theta, -2.0, grad(spec, theta, b));
    const FisherDiag f = fisher_diag(spec, theta, b);
    const TaskCheckpoint c = make_checkpoint(1, theta, f, {0, 1}, 1.0);
    const double base = ce_loss(spec, theta, b);
    for (std::size_t j = 0; j < spec.dim(); ++j) {
        ParamVector moved = theta;
        moved[j] += 0.2;
        const double gap = ce_loss(spec, moved, b) - base;
        EXPECT_NEAR(delta_estimate(c, moved), gap, 0.3 * gap) << "coordinate " << j;
    }
}

TEST(BoundCheck, HoldsOnRandomInstances) {
    Engine eng(9);
    for (int trial = 0; trial < 1000; ++trial) {
        const Instance in = random_instance(eng, 5, 1 + trial % 5);
        const BoundCheck b = bound_check(in.state, in.theta_star, in.fisher);
        EXPECT_TRUE(b.holds);
        EXPECT_LE(b.second_term, b.first_term + 1e-9);
    }
}

TEST(BoundCheck, TightWhenParallel) {
    Engine eng(10);
    const Instance in = random_instance(eng, 6, 1);
    const BoundCheck b = bound_check(in.state, in.theta_star, in.fisher);
    EXPECT_NEAR(b.second_term, b.first_term, 1e-9);
}

TEST(BoundCheck, ZeroCrossTermsGiveZeroSecondTerm) {
    // e_1 moves only coordinate 0 and Δ only coordinate 1; the current
    // task's Fisher is blind to coordinate 1.
    MergeState s(ParamVector{0.0, 0.0});
    s = merge(s, ParamVector{1.0, 0.0}, FisherDiag({1.0, 1.0}, 1), {}, 0.0);
    const BoundCheck b = bound_check(s, ParamVector{0.0, 1.0}, FisherDiag({1.0, 0.0}, 1));
    EXPECT_EQ(b.second_term, 0.0);
    EXPECT_GT(b.first_term, 0.0);
}
