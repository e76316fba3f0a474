#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "dbmsv/boson.hpp"

using namespace dbmsv;

namespace {

VarSpace small_space(int k_max = 4, int steps = 3, double dt = 0.1) { return {k_max, TimeGrid(dt, steps)}; }

// Naive engine: dense exponent vectors, one derivative unit at a time.
using Dense = std::map<std::vector<int>, double>;

struct NaiveTerm {
    double c;
    std::vector<int> mult;
    std::vector<int> deriv;
};

Dense naive_apply(const std::vector<NaiveTerm>& op, const Dense& f) {
    Dense out;
    for (const auto& t : op)
        for (auto [e, c] : f) {
            std::vector<int> cur = e;
            double w = t.c * c;
            for (std::size_t v = 0; v < cur.size() && w != 0.0; ++v)
                for (int r = 0; r < t.deriv[v]; ++r) {
                    w *= cur[v];
                    if (cur[v] > 0) --cur[v];
                }
            if (w == 0.0) continue;
            for (std::size_t v = 0; v < cur.size(); ++v) cur[v] += t.mult[v];
            out[cur] += w;
        }
    return out;
}

Monomial to_mono(const std::vector<int>& e) {
    Monomial m;
    for (std::size_t v = 0; v < e.size(); ++v)
        if (e[v] > 0) m.emplace_back(static_cast<int>(v), e[v]);
    return m;
}

std::vector<int> random_exps(std::mt19937& rng, int nv, int max_deg) {
    std::uniform_int_distribution<int> var(0, nv - 1), deg(0, max_deg);
    std::vector<int> e(static_cast<std::size_t>(nv), 0);
    const int d = deg(rng);
    for (int i = 0; i < d; ++i) ++e[static_cast<std::size_t>(var(rng))];
    return e;
}

BosonOperator random_op(std::mt19937& rng, const VarSpace& s, int nv, int terms, int max_deg) {
    std::uniform_real_distribution<double> u(-1, 1);
    BosonOperator o(s);
    for (int t = 0; t < terms; ++t) o.add(to_mono(random_exps(rng, nv, max_deg)), to_mono(random_exps(rng, nv, max_deg)), u(rng));
    return o;
}

PolyFunctional random_poly(std::mt19937& rng, const VarSpace& s, int nv, int terms, int max_deg) {
    std::uniform_real_distribution<double> u(-1, 1);
    PolyFunctional f(s);
    for (int t = 0; t < terms; ++t) f.add(to_mono(random_exps(rng, nv, max_deg)), u(rng));
    return f;
}

double max_diff(const PolyFunctional& a, const PolyFunctional& b) { return (a - b).max_abs(); }

double max_diff(const BosonOperator& a, const BosonOperator& b) { return (a - b).max_abs(); }

}  // namespace

TEST(Boson, ApplyBasics) {
    const VarSpace s = small_space();
    const int x10 = s.index(1, 0), x23 = s.index(2, 3);
    auto r = BosonOperator::multiplier(s, x10).apply(PolyFunctional::constant(s, 1.0));
    EXPECT_EQ(r.coeff({{x10, 1}}), 1.0);
    EXPECT_EQ(r.terms().size(), 1u);
    PolyFunctional sq(s);
    sq.add({{x23, 2}}, 1.0);
    auto d = BosonOperator::derivative(s, x23).apply(sq);
    EXPECT_EQ(d.coeff({{x23, 1}}), 2.0);
    EXPECT_EQ(d.terms().size(), 1u);
    // derivative of an absent variable
    EXPECT_TRUE(BosonOperator::derivative(s, x10).apply(sq).terms().empty());
}

TEST(Boson, ApplyMatchesNaiveEngine) {
    std::mt19937 rng(21);
    const VarSpace s = small_space(2, 2);
    const int nv = 5;
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 200; ++trial) {
        Dense fd;
        PolyFunctional f(s);
        for (int t = 0; t < 4; ++t) {
            auto e = random_exps(rng, nv, 2);
            const double c = u(rng);
            fd[e] += c;
            f.add(to_mono(e), c);
        }
        std::vector<NaiveTerm> nop;
        BosonOperator op(s);
        for (int t = 0; t < 2; ++t) {
            NaiveTerm nt{u(rng), random_exps(rng, nv, 2), random_exps(rng, nv, 2)};
            nop.push_back(nt);
            op.add(to_mono(nt.mult), to_mono(nt.deriv), nt.c);
        }
        const Dense ref = naive_apply(nop, fd);
        const PolyFunctional got = op.apply(f);
        PolyFunctional refp(s);
        for (auto [e, c] : ref) refp.add(to_mono(e), c);
        EXPECT_LT(max_diff(got, refp), 1e-13) << trial;
    }
}

TEST(Boson, ComposeIsSuccessiveApplication) {
    std::mt19937 rng(4);
    const VarSpace s = small_space(2, 2);
    for (int trial = 0; trial < 100; ++trial) {
        auto a = random_op(rng, s, 4, 3, 2);
        auto b = random_op(rng, s, 4, 3, 2);
        auto f = random_poly(rng, s, 4, 5, 3);
        EXPECT_LT(max_diff(compose(a, b).apply(f), a.apply(b.apply(f))), 1e-12);
        EXPECT_LT(max_diff(commutator(a, b).apply(f), a.apply(b.apply(f)) - b.apply(a.apply(f))), 1e-12);
    }
}

TEST(Boson, CanonicalPair) {
    const VarSpace s = small_space();
    const int v = s.index(3, 1);
    auto c = commutator(BosonOperator::derivative(s, v), BosonOperator::multiplier(s, v));
    EXPECT_EQ(c.terms().size(), 1u);
    EXPECT_EQ(c.coeff({}, {}), 1.0);
}

TEST(Boson, ApplyIsLinear) {
    std::mt19937 rng(8);
    const VarSpace s = small_space(2, 2);
    for (int trial = 0; trial < 50; ++trial) {
        auto op = random_op(rng, s, 5, 4, 2);
        auto f = random_poly(rng, s, 5, 6, 2);
        auto g = random_poly(rng, s, 5, 6, 2);
        const double x = 0.7, y = -1.3;
        EXPECT_LT(max_diff(op.apply(x * f + y * g), x * op.apply(f) + y * op.apply(g)), 1e-14);
    }
}

TEST(Boson, NormalProductIsIdempotentOnNormalForms) {
    std::mt19937 rng(10);
    const VarSpace s = small_space(2, 2);
    auto a = random_op(rng, s, 5, 6, 2);
    auto one = BosonOperator::scalar(s, 1.0);
    EXPECT_EQ(max_diff(normal_product(one, a), a), 0.0);
    EXPECT_EQ(max_diff(normal_product(a, one), a), 0.0);
    // term order of the input does not matter
    BosonOperator rev(s);
    std::vector<std::pair<BosonOperator::Key, double>> ts(a.terms().rbegin(), a.terms().rend());
    for (auto& [k, c] : ts) rev.add(k.first, k.second, c);
    auto b = random_op(rng, s, 5, 6, 2);
    EXPECT_EQ(max_diff(commutator(a, b), commutator(rev, b)), 0.0);
}

TEST(Boson, StaticBosonDefinition) {
    const VarSpace s = small_space(4, 3, 0.1);
    const double beta = 1.5;
    BosonContext ctx(Potential{beta, {{1, 1.0}}}, 3, s);
    EXPECT_TRUE(ctx.static_boson(0, 1).empty());
    auto m2 = ctx.static_boson(-2, 1);
    EXPECT_DOUBLE_EQ(m2.coeff({{s.index(2, 1), 1}}, {}), 2.0 / std::sqrt(beta));
    auto p1 = ctx.static_boson(1, 2);
    EXPECT_DOUBLE_EQ(p1.coeff({}, {{s.index(1, 2), 1}}), std::sqrt(beta) / 0.1);

    std::mt19937 rng(2);
    auto f = random_poly(rng, s, s.size(), 6, 2);
    for (int j = 0; j <= 3; ++j)
        for (int jp = 0; jp <= 3; ++jp)
            for (int k = 1; k <= 4; ++k)
                for (int l = 1; l <= 4; ++l) {
                    auto c = commutator(ctx.static_boson(k, j), ctx.static_boson(-l, jp));
                    const double expect = (j == jp && k == l) ? k / 0.1 : 0.0;
                    EXPECT_NEAR(max_diff(c.apply(f), expect * f), 0.0, 1e-12);
                }
}

TEST(Boson, DynamicZeroModeAndPlusPart) {
    const VarSpace s = small_space(4, 3, 0.1);
    BosonContext ctx(Potential{1.0, {{1, 0.5}, {2, 0.3}}}, 5, s);
    auto z = ctx.dynamic_boson(0, 2);
    EXPECT_EQ(z.terms().size(), 1u);
    EXPECT_DOUBLE_EQ(z.coeff({}, {}), -5.0);
    for (int j = 0; j <= 3; ++j)
        for (int k = 1; k <= 4; ++k) EXPECT_EQ(max_diff(ctx.dynamic_boson(-k, j), ctx.static_boson(-k, j)), 0.0);
}

TEST(Boson, RetardedCommutatorIsPropagator) {
    const double dt = 0.05;
    for (const Potential& pot : {Potential{1.0, {{1, 0.5}, {2, 0.3}}}, Potential::hermite(0.8, 2.0),
                                 Potential{4.0, {{1, 1.0}}}}) {
        const VarSpace s{5, TimeGrid(dt, 6)};
        BosonContext ctx(pot, 3, s);
        for (int j = 0; j <= 6; ++j)
            for (int jp = 0; jp <= 6; ++jp) {
                const auto g = retarded_propagator_modes(pot, std::max(0, j - jp) * dt, 5);
                for (int k = 1; k <= 5; ++k)
                    for (int l = 1; l <= 5; ++l) {
                        auto c = commutator(ctx.dynamic_boson(k, j), ctx.dynamic_boson(-l, jp));
                        ASSERT_LE(c.terms().size(), 1u);
                        const double got = c.coeff({}, {});
                        const double expect = j >= jp ? g(k, l) : 0.0;
                        EXPECT_NEAR(got, expect, 1e-12) << k << " " << l << " " << j << " " << jp;
                        // static negative mode gives the same retarded part
                        auto cs = commutator(ctx.dynamic_boson(k, j), ctx.static_boson(-l, jp));
                        EXPECT_EQ(cs.coeff({}, {}), got);
                    }
            }
    }
}

TEST(Boson, EqualTimeTermCarriesInverseStep) {
    // [psi_{-l}(t_j), phi_k(t_j')] = -delta_{jj'} l delta_{kl} / dt: the advanced equal-time term.
    const double dt = 0.02;
    const VarSpace s{4, TimeGrid(dt, 3)};
    BosonContext ctx(Potential{1.0, {{1, 0.5}}}, 2, s);
    for (int j = 0; j <= 3; ++j)
        for (int jp = 0; jp <= 3; ++jp)
            for (int k = 1; k <= 4; ++k)
                for (int l = 1; l <= 4; ++l) {
                    auto c = commutator(ctx.dynamic_boson(-l, j), ctx.static_boson(k, jp));
                    const double expect = (j == jp && k == l) ? -l / dt : 0.0;
                    EXPECT_NEAR(c.coeff({}, {}), expect, 1e-9);
                }
}

TEST(Boson, HermiteDynamicBoson) {
    const double sigma = 0.9, dt = 0.1;
    const VarSpace s{4, TimeGrid(dt, 4)};
    BosonContext ctx(Potential::hermite(sigma, 2.0), 3, s);
    for (int k = 1; k <= 4; ++k)
        for (int j = 0; j <= 4; ++j) {
            auto op = ctx.dynamic_boson(k, j);
            int count = 0;
            for (auto& [key, c] : op.terms()) {
                const int v = key.second.front().first;
                EXPECT_EQ(s.mode(v), k);
                const int jp = s.slot(v);
                EXPECT_LE(jp, j);
                EXPECT_NEAR(c, std::sqrt(2.0) * std::exp(-k * (j - jp) * dt / (sigma * sigma)), 1e-13);
                ++count;
            }
            EXPECT_EQ(count, j + 1);
        }
}

TEST(Boson, StaticQuadraticDisplay) {
    const double dt = 0.1;
    const VarSpace s{5, TimeGrid(dt, 3)};
    BosonContext ctx(Potential{1.3, {{1, 1.0}}}, 4, s);
    const TruncSeries one = TruncSeries::monomial(0);
    for (int j = 0; j <= 3; ++j) {
        auto q = 0.5 * ctx.quadratic_sparse(Field::Static, one, j);
        BosonOperator expect(s);
        for (int k = 2; k <= 5; ++k) expect.add({{s.index(k, j), 1}}, {{s.index(k - 1, j), 1}}, k / dt);
        EXPECT_LT(max_diff(q, expect), 1e-12);
    }
}

TEST(Boson, DynamicQuadraticHermiteDisplay) {
    const double dt = 0.1, sigma = 1.2;
    const double n = 3;
    const VarSpace s{5, TimeGrid(dt, 4)};
    BosonContext ctx(Potential::hermite(sigma, 2.0), n, s);
    const TruncSeries one = TruncSeries::monomial(0);
    for (int j = 0; j <= 4; ++j) {
        auto q = 0.5 * ctx.quadratic_sparse(Field::Dynamic, one, j);
        BosonOperator expect(s);
        expect.add({{s.index(1, j), 1}}, {}, -n);
        for (int k = 2; k <= 5; ++k)
            for (int jp = 0; jp <= j; ++jp)
                expect.add({{s.index(k, j), 1}}, {{s.index(k - 1, jp), 1}},
                           k * std::exp(-(k - 1) * (j - jp) * dt / (sigma * sigma)));
        EXPECT_LT(max_diff(q, expect), 1e-12);
        // normal ordering: acting on 1 leaves only the multiplier part
        auto on_one = q.apply(PolyFunctional::constant(s, 1.0));
        EXPECT_EQ(on_one.terms().size(), 1u);
        EXPECT_NEAR(on_one.coeff({{s.index(1, j), 1}}), -n, 1e-14);
    }
}

TEST(Boson, DenseAndSparseQuadraticsAgree) {
    const VarSpace s{4, TimeGrid(0.1, 3)};
    BosonContext ctx(Potential{1.0, {{1, 0.5}, {2, 0.3}}}, 3, s);
    std::vector<TruncSeries> weights{TruncSeries::monomial(0), TruncSeries::monomial(1),
                                     TruncSeries(0, std::vector<double>{0.5, 0.6}), TruncSeries::monomial(3)};
    for (Field f : {Field::Static, Field::Dynamic})
        for (const auto& u : weights)
            for (int j = 0; j <= 3; ++j) {
                SecondOrderOp dense(s.size());
                ctx.add_quadratic(dense, f, u, j, 1.0);
                EXPECT_LT(max_diff(to_sparse(dense, s), ctx.quadratic_sparse(f, u, j)), 1e-12);
            }
}

TEST(Boson, DenseCommutatorMatchesSparse) {
    const VarSpace s{3, TimeGrid(0.1, 3)};
    BosonContext ctx(Potential{1.0, {{1, 0.5}, {2, 0.3}}}, 2, s);
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> u(-1, 1);
    auto random_dense = [&](bool with_q) {
        SecondOrderOp op(s.size());
        const int j = static_cast<int>(rng() % 4);
        ctx.add_quadratic(op, Field::Dynamic, TruncSeries(0, std::vector<double>{u(rng), u(rng)}), j, 1.0);
        ctx.add_quadratic(op, Field::Static, TruncSeries::monomial(1), (j + 1) % 4, u(rng));
        if (with_q) ctx.add_quadratic(op, Field::Dynamic, TruncSeries::monomial(3), j, u(rng));
        add_linear(op, ctx.linear_mode_sum(Field::Dynamic, TruncSeries::monomial(2), j), u(rng));
        std::vector<double> f(4);
        for (auto& v : f) v = u(rng);
        op += u(rng) * ctx.time_derivation(f);
        return op;
    };
    for (int trial = 0; trial < 10; ++trial) {
        const auto a = random_dense(trial % 2 == 0);
        const auto b = random_dense(trial % 3 == 0);
        const auto dense = to_sparse(commutator(a, b), s);
        const auto sparse = commutator(to_sparse(a, s), to_sparse(b, s));
        EXPECT_LT(max_diff(dense, sparse), 1e-11 * std::max(1.0, sparse.max_abs()));
    }
}

TEST(Boson, ProjectedCommutatorMatchesFull) {
    const VarSpace s{4, TimeGrid(0.05, 8)};
    BosonContext ctx(Potential{2.0, {{1, 0.5}, {2, 0.3}}}, 2, s);
    const Profiles pr = make_profiles(s, 3, 2);
    SecondOrderOp a(s.size()), b(s.size());
    for (int j = 0; j <= 8; ++j) {
        ctx.add_quadratic(a, Field::Dynamic, TruncSeries::monomial(0), j, 0.05 * std::sin(j));
        ctx.add_quadratic(a, Field::Dynamic, TruncSeries::monomial(3), j, 0.05);
        ctx.add_quadratic(b, Field::Static, TruncSeries::monomial(1), j, 0.05 * j);
        add_linear(b, ctx.linear_mode_sum(Field::Dynamic, TruncSeries::monomial(2), j), 0.05);
    }
    b += ctx.time_derivation(TimePoly{0.0, 1.0, -1.0});
    const ProjectedOp full = project(commutator(a, b), pr);
    const ProjectedOp fast = projected_commutator(a, b, pr);
    EXPECT_LT((full - fast).max_abs(), 1e-10 * std::max(1.0, full.max_abs()));
}

TEST(Boson, TimeDerivationOnLinearFunctionals) {
    const TimeGrid g(0.01, 100);
    const VarSpace s{2, g};
    BosonContext ctx(Potential{2.0, {{1, 1.0}}}, 1, s);
    const TimePoly gpoly{0.3, 1.0, -2.0, 1.5};
    const Vector y = linear_functional(s, 2, g.sample(gpoly));
    // f = 1: integration by parts; slots next to the ends also see the one-sided rows
    const Vector r1 = ctx.time_derivation(TimePoly::constant(1.0)).p * y;
    for (int j = 3; j <= g.steps - 3; ++j)
        EXPECT_NEAR(r1(s.index(2, j)) / g.dt, -gpoly.derivative()(g.t(j)), 1e-3);
    // f = t, g = 1: -int tau
    const Vector ones = linear_functional(s, 1, g.sample(TimePoly::constant(1.0)));
    const Vector r2 = ctx.time_derivation(TimePoly{0.0, 1.0}).p * ones;
    for (int j = 3; j <= g.steps - 3; ++j) EXPECT_NEAR(r2(s.index(1, j)) / g.dt, -1.0, 1e-12);
}

TEST(Boson, TimeDerivationOnDerivativeGenerators) {
    const TimeGrid g(0.05, 20);
    const VarSpace s{2, g};
    BosonContext ctx(Potential{2.0, {{1, 1.0}}}, 1, s);
    const TimePoly f{0.5, 0.2, 1.0};
    const auto fs = g.sample(f);
    const SecondOrderOp e = ctx.time_derivation(f);
    std::vector<double> gam(static_cast<std::size_t>(g.points()));
    for (int j = 0; j <= g.steps; ++j) gam[static_cast<std::size_t>(j)] = std::cos(3 * g.t(j));
    SecondOrderOp gen(s.size());
    for (int j = 0; j <= g.steps; ++j) gen.d(s.index(1, j)) = gam[static_cast<std::size_t>(j)];
    const SecondOrderOp c = commutator(e, gen);
    const Matrix dm = difference_matrix(g);
    for (int j = 0; j <= g.steps; ++j) {
        double dg = 0.0;
        for (int i = 0; i <= g.steps; ++i) dg += dm(j, i) * gam[static_cast<std::size_t>(i)];
        EXPECT_NEAR(c.d(s.index(1, j)), -fs[static_cast<std::size_t>(j)] * dg, 1e-12);
        EXPECT_EQ(c.d(s.index(2, j)), 0.0);
    }
    EXPECT_EQ(c.c, 0.0);
}

TEST(Boson, TimeDerivativeOfDynamicBoson) {
    // d/dt acting on psi_n(t_j), paired with smooth linear functionals, against
    // beta^1/2 { g(t_j) e_n + sum_{j'<=j} dt dK/dt(t_j - t_j') g(t_j') }.
    const double dt = 0.005;
    const int steps = 200;
    const Potential pot{1.0, {{1, 0.7}, {2, 0.2}}};
    const VarSpace s{6, TimeGrid(dt, steps)};
    BosonContext ctx(pot, 2, s);
    const SecondOrderOp e = ctx.time_derivation(TimePoly::constant(1.0));
    const TimePoly gpoly{1.0, -0.5, 0.8};
    const auto gs = s.grid.sample(gpoly);
    const double h = 1e-5;
    for (int j : {60, 120, 180}) {
        for (int n = 1; n <= 3; ++n) {
            SecondOrderOp psi(s.size());
            add_linear(psi, ctx.dynamic_mode(n, j), 1.0);
            const SecondOrderOp c = commutator(e, psi);
            for (int l = 1; l <= 4; ++l) {
                const Vector y = linear_functional(s, l, gs);
                const double got = c.d.dot(y);
                double ref = n == l ? gs[static_cast<std::size_t>(j)] : 0.0;
                for (int jp = 0; jp <= j; ++jp) {
                    const double tau = (j - jp) * dt;
                    const double dk = (propagator(pot, tau + h, 6)(n, l) - propagator(pot, std::max(0.0, tau - h), 6)(n, l)) /
                                      (tau + h - std::max(0.0, tau - h));
                    ref += dt * dk * gs[static_cast<std::size_t>(jp)];
                }
                ref *= std::sqrt(pot.beta);
                EXPECT_NEAR(got, ref, 0.02 * std::max(1.0, std::abs(ref))) << j << " " << n << " " << l;
            }
        }
    }
}
