#pragma once
// Equilibrium Virasoro operators, dynamical constraint operators L^a_{-1},
// L^a_0 on the grid, Schroedinger-Virasoro relation checks, and Monte Carlo
// residuals of the constraints.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "boson.hpp"
#include "timepoly.hpp"

namespace dbmsv {

class SupportViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Test functions

// (4 t (T - t) / T^2)^4: peak 1 at T/2, vanishing to third order at 0 and T.
[[nodiscard]] inline TimePoly unit_bump(double t_end) {
    const double s = 4.0 / (t_end * t_end);
    return TimePoly::bump(4, t_end) * TimePoly::constant(s * s * s * s);
}

[[nodiscard]] inline TimePoly test_function(const TimePoly& p, double t_end) { return p * unit_bump(t_end); }

inline void check_support(const TimePoly& a, double t_end) {
    double scale = 1.0;
    for (int i = 0; i <= 64; ++i) scale = std::max(scale, std::abs(a(t_end * i / 64.0)));
    for (int order = 0; order <= 3; ++order) {
        const TimePoly d = a.derivative(order);
        if (std::abs(d(0.0)) > 1e-10 * scale || std::abs(d(t_end)) > 1e-10 * scale)
            throw SupportViolation("test function or its derivative of order " + std::to_string(order) +
                                   " does not vanish at the grid ends");
    }
}

// ---------------------------------------------------------------------------
// Equilibrium operators on one time slot

[[nodiscard]] inline VarSpace equilibrium_space(int k_max) {
    VarSpace s;
    s.k_max = k_max;
    s.grid.dt = 1.0;
    s.grid.steps = 0;
    return s;
}

// d/dtau_n on Z[tau]; Z depends on tau_0 only through exp(-N tau_0), so d/dtau_0 = -N.
namespace detail {
inline BosonOperator eq_derivative(const VarSpace& s, int n, double particles) {
    if (n == 0) return BosonOperator::scalar(s, -particles);
    if (n < 0 || n > s.k_max) return BosonOperator(s);
    return BosonOperator::derivative(s, s.index(n, 0));
}
}  // namespace detail

// sum_k k tau_k d_{k+n} + (beta/2) sum_{k=0}^{n} d_k d_{n-k}; modes past the cutoff are dropped.
[[nodiscard]] inline BosonOperator equilibrium_lhat(int n, double beta, double particles, const VarSpace& s) {
    if (n < -1) throw std::invalid_argument("equilibrium_lhat: n >= -1 required");
    BosonOperator out(s);
    for (int k = 1; k <= s.k_max; ++k) {
        const int m = k + n;
        if (m > s.k_max) break;
        const BosonOperator x = BosonOperator::multiplier(s, s.index(k, 0), k);
        out += normal_product(x, detail::eq_derivative(s, m, particles));
    }
    for (int k = 0; k <= n; ++k)
        out += 0.5 * beta *
               normal_product(detail::eq_derivative(s, k, particles), detail::eq_derivative(s, n - k, particles));
    return out;
}

// L_n^eq = Lhat_n + sum_k b_k d_{n+k+1} + (beta/2 - 1)(n+1) d_n.
[[nodiscard]] inline BosonOperator equilibrium_virasoro_op(int n, const Potential& pot, double particles,
                                                           const VarSpace& s) {
    BosonOperator out = equilibrium_lhat(n, pot.beta, particles, s);
    for (auto [k, bk] : pot.b) out += bk * detail::eq_derivative(s, n + k + 1, particles);
    out += (0.5 * pot.beta - 1.0) * (n + 1) * detail::eq_derivative(s, n, particles);
    return out;
}

// ---------------------------------------------------------------------------
// Dynamical constraints

// A_z(a) = L_0^{2a} = kZNormalization * L^a_0.
inline constexpr double kZNormalization = 2.0;

struct ConstraintOp {
    int n = -1;
    TimePoly label;
    SecondOrderOp lin;
    SecondOrderOp quadr;
    SecondOrderOp diff;  // a(t) d/dt part; zero for n = -1

    [[nodiscard]] SecondOrderOp total() const { return lin + quadr + diff; }
};

class SvOperators {
public:
    explicit SvOperators(const BosonContext& ctx) : ctx_(ctx) {
        const double beta = ctx.beta();
        const TruncSeries b = ctx.potential().series();
        const TruncSeries db = differentiate(b);
        const TruncSeries z = TruncSeries::monomial(1);
        const TruncSeries zb = mul(z, b);
        const TruncSeries dzb = differentiate(zb);
        one_ = TruncSeries::monomial(0);
        z_ = z;
        z2_ = TruncSeries::monomial(2);
        db_ = db;
        dzb_ = dzb;
        w_minus1_ = (0.5 * beta - 1.0) * differentiate(db) + mul(b, db);
        w_zero_ = (0.5 * beta - 1.0) * differentiate(dzb) + mul(dzb, b);
    }

    [[nodiscard]] const BosonContext& context() const { return ctx_; }

    // L_{-1}^k, linear part: beta^{-1/2} sum dt { k'' oint z psi - k oint ((beta/2-1) b'' + b b') psi }.
    [[nodiscard]] SecondOrderOp lminus1_lin(const TimePoly& k) const {
        SecondOrderOp op(ctx_.size());
        const double ib = 1.0 / std::sqrt(ctx_.beta());
        const auto kk = sample(k), k2 = sample(k.derivative(2));
        for (int j = 0; j <= steps(); ++j) {
            add_linear(op, ctx_.linear_mode_sum(Field::Dynamic, z_, j), dt() * ib * k2[j]);
            add_linear(op, ctx_.linear_mode_sum(Field::Dynamic, w_minus1_, j), -dt() * ib * kk[j]);
        }
        return op;
    }

    // L_{-1}^k, quadratic part: -sum dt k (1/2 oint b' :psi^2: + 1/2 oint :phi^2:) - 1/2 sum dt k' oint :psi^2:.
    [[nodiscard]] SecondOrderOp lminus1_quadr(const TimePoly& k) const {
        SecondOrderOp op(ctx_.size());
        const auto kk = sample(k), k1 = sample(k.derivative());
        for (int j = 0; j <= steps(); ++j) {
            ctx_.add_quadratic(op, Field::Dynamic, db_, j, -0.5 * dt() * kk[j]);
            ctx_.add_quadratic(op, Field::Static, one_, j, -0.5 * dt() * kk[j]);
            ctx_.add_quadratic(op, Field::Dynamic, one_, j, -0.5 * dt() * k1[j]);
        }
        return op;
    }

    [[nodiscard]] SecondOrderOp a1_lin(const TimePoly& f) const { return lminus1_lin(f.derivative()); }
    [[nodiscard]] SecondOrderOp a1_quadr(const TimePoly& f) const { return lminus1_quadr(f.derivative()); }

    // A_z(f) linear part, with the constant (beta/2 - 1) N f''.
    [[nodiscard]] SecondOrderOp az_lin(const TimePoly& f) const {
        SecondOrderOp op(ctx_.size());
        const double ib = 1.0 / std::sqrt(ctx_.beta());
        const auto f1 = sample(f.derivative()), f2 = sample(f.derivative(2)), f3 = sample(f.derivative(3));
        for (int j = 0; j <= steps(); ++j) {
            add_linear(op, ctx_.linear_mode_sum(Field::Dynamic, z2_, j), 0.5 * dt() * ib * f3[j]);
            add_linear(op, ctx_.linear_mode_sum(Field::Dynamic, w_zero_, j), -dt() * ib * f1[j]);
            op.c += dt() * (0.5 * ctx_.beta() - 1.0) * ctx_.particles() * f2[j];
        }
        return op;
    }

    // A_z(f) quadratic part without the time derivation:
    // -1/2 sum dt f'' oint z :psi^2: - 1/2 sum dt f' (oint (zb)' :psi^2: + oint z :phi^2:).
    [[nodiscard]] SecondOrderOp az_quadr(const TimePoly& f) const {
        SecondOrderOp op(ctx_.size());
        const auto f1 = sample(f.derivative()), f2 = sample(f.derivative(2));
        for (int j = 0; j <= steps(); ++j) {
            ctx_.add_quadratic(op, Field::Dynamic, z_, j, -0.5 * dt() * f2[j]);
            ctx_.add_quadratic(op, Field::Dynamic, dzb_, j, -0.5 * dt() * f1[j]);
            ctx_.add_quadratic(op, Field::Static, z_, j, -0.5 * dt() * f1[j]);
        }
        return op;
    }

    // -2 f d/dt
    [[nodiscard]] SecondOrderOp az_diff(const TimePoly& f) const { return -2.0 * ctx_.time_derivation(f); }

    // Quadratic part of the relations includes the time derivation.
    [[nodiscard]] SecondOrderOp az_quadr_full(const TimePoly& f) const { return az_quadr(f) + az_diff(f); }

    // n = -1: L^a_{-1} = A_1(a) = L_{-1}^{a'}.  n = 0: L^a_0 = A_z(a) / 2.
    [[nodiscard]] ConstraintOp build_dynamical_constraint(int n, const TimePoly& a) const {
        check_support(a, ctx_.space().grid.length());
        ConstraintOp c;
        c.n = n;
        c.label = a;
        if (n == -1) {
            c.lin = a1_lin(a);
            c.quadr = a1_quadr(a);
            c.diff = SecondOrderOp(ctx_.size());
        } else if (n == 0) {
            const double s = 1.0 / kZNormalization;
            c.lin = s * az_lin(a);
            c.quadr = s * az_quadr(a);
            c.diff = s * az_diff(a);
        } else {
            throw std::invalid_argument("build_dynamical_constraint: n must be -1 or 0");
        }
        return c;
    }

private:
    [[nodiscard]] std::vector<double> sample(const TimePoly& p) const { return ctx_.space().grid.sample(p); }
    [[nodiscard]] double dt() const { return ctx_.space().grid.dt; }
    [[nodiscard]] int steps() const { return ctx_.space().grid.steps; }

    const BosonContext& ctx_;
    TruncSeries one_, z_, z2_, db_, dzb_, w_minus1_, w_zero_;
};

// ---------------------------------------------------------------------------
// Relation checks

struct RelationCheck {
    std::string relation;
    double dt = 0.0;
    int k_max = 0;
    ProjectedOp lhs;
    ProjectedOp rhs;
    double residual = 0.0;       // max |lhs - rhs| over projected elements
    double scale = 0.0;          // max over the individual commutator terms
    double raw_residual = -1.0;  // max over interior slot entries; < 0 when not computed
};

struct RelationConfig {
    int profile_modes = 6;
    int profile_degree = 3;
    bool raw = false;
    int raw_modes = 4;  // modes kept in the raw slot residual
};

namespace detail {

// Entry-wise residual restricted to modes <= max_mode and slots 2..T-2.
inline double raw_slot_residual(const SecondOrderOp& r, const VarSpace& s, int max_mode) {
    std::vector<int> keep;
    for (int j = 2; j <= s.grid.steps - 2; ++j)
        for (int k = 1; k <= max_mode; ++k) keep.push_back(s.index(k, j));
    double m = std::abs(r.c);
    for (int i : keep) m = std::max({m, std::abs(r.a(i)), std::abs(r.d(i))});
    if (r.has_p())
        for (int i : keep)
            for (int j : keep) m = std::max(m, std::abs(r.p(i, j)));
    if (r.has_q())
        for (int i : keep)
            for (int j : keep) m = std::max(m, std::abs(r.q(i, j)));
    return m;
}

struct Bracket {
    const SecondOrderOp* x;
    const SecondOrderOp* y;
    double sign;
};

inline RelationCheck finish_relation(const std::string& name, const BosonContext& ctx, const Profiles& pr,
                                     const std::vector<Bracket>& lhs_terms, const SecondOrderOp* rhs,
                                     const RelationConfig& cfg) {
    RelationCheck rc;
    rc.relation = name;
    rc.dt = ctx.space().grid.dt;
    rc.k_max = ctx.space().k_max;
    const auto m = pr.hx.cols();
    rc.lhs = ProjectedOp{0.0, Vector::Zero(m), Vector::Zero(m), Matrix::Zero(m, m), Matrix::Zero(m, m)};
    for (const auto& t : lhs_terms) {
        ProjectedOp c = projected_commutator(*t.x, *t.y, pr);
        rc.scale = std::max(rc.scale, c.max_abs());
        rc.lhs += t.sign * c;
    }
    rc.rhs = rhs ? project(*rhs, pr) : 0.0 * rc.lhs;
    rc.scale = std::max(rc.scale, rc.rhs.max_abs());
    rc.residual = (rc.lhs - rc.rhs).max_abs();
    if (cfg.raw) {
        SecondOrderOp full(ctx.size());
        for (const auto& t : lhs_terms) full.axpy(t.sign, commutator(*t.x, *t.y));
        if (rhs) full -= *rhs;
        rc.raw_residual = raw_slot_residual(full, ctx.space(), std::min(cfg.raw_modes, ctx.space().k_max));
    }
    return rc;
}

}  // namespace detail

// h = f' g - f g', k = f'' g - f' g' / 2.
[[nodiscard]] inline TimePoly sv_h(const TimePoly& f, const TimePoly& g) {
    return f.derivative() * g - f * g.derivative();
}
[[nodiscard]] inline TimePoly sv_k(const TimePoly& f, const TimePoly& g) {
    return f.derivative(2) * g - 0.5 * (f.derivative() * g.derivative());
}

// [A_1^q(f), A_1^q(g)] = 0, [A_1^q(f), A_z^q(g)] = -2 L_{-1,q}^k, [A_z^q(f), A_z^q(g)] = -2 A_z^q(h),
// with A_z^q including -2 f d/dt.
[[nodiscard]] inline std::vector<RelationCheck> verify_sv_algebra_quadratic(const BosonContext& ctx,
                                                                          const TimePoly& f, const TimePoly& g,
                                                                          const RelationConfig& cfg = {}) {
    const double t_end = ctx.space().grid.length();
    check_support(f, t_end);
    check_support(g, t_end);
    const SvOperators ops(ctx);
    const Profiles pr = make_profiles(ctx.space(), cfg.profile_modes, cfg.profile_degree);
    const SecondOrderOp a1f = ops.a1_quadr(f), a1g = ops.a1_quadr(g);
    const SecondOrderOp azf = ops.az_quadr_full(f), azg = ops.az_quadr_full(g);
    const SecondOrderOp r2 = -2.0 * ops.lminus1_quadr(sv_k(f, g));
    const SecondOrderOp r3 = -2.0 * ops.az_quadr_full(sv_h(f, g));
    std::vector<RelationCheck> out;
    out.push_back(detail::finish_relation("[A1q(f),A1q(g)]=0", ctx, pr, {{&a1f, &a1g, 1.0}}, nullptr, cfg));
    out.push_back(detail::finish_relation("[A1q(f),Azq(g)]=-2L-1q(k)", ctx, pr, {{&a1f, &azg, 1.0}}, &r2, cfg));
    out.push_back(detail::finish_relation("[Azq(f),Azq(g)]=-2Azq(h)", ctx, pr, {{&azf, &azg, 1.0}}, &r3, cfg));
    return out;
}

// Cross terms between linear and quadratic parts.
[[nodiscard]] inline std::vector<RelationCheck> verify_sv_algebra_linear(const BosonContext& ctx, const TimePoly& f,
                                                                       const TimePoly& g,
                                                                       const RelationConfig& cfg = {}) {
    const double t_end = ctx.space().grid.length();
    check_support(f, t_end);
    check_support(g, t_end);
    const SvOperators ops(ctx);
    const Profiles pr = make_profiles(ctx.space(), cfg.profile_modes, cfg.profile_degree);
    const SecondOrderOp a1lf = ops.a1_lin(f), a1lg = ops.a1_lin(g);
    const SecondOrderOp a1qf = ops.a1_quadr(f), a1qg = ops.a1_quadr(g);
    const SecondOrderOp azlf = ops.az_lin(f), azlg = ops.az_lin(g);
    const SecondOrderOp azqf = ops.az_quadr_full(f), azqg = ops.az_quadr_full(g);
    const SecondOrderOp r5 = -2.0 * ops.lminus1_lin(sv_k(f, g));
    const SecondOrderOp r6 = -2.0 * ops.az_lin(sv_h(f, g));
    std::vector<RelationCheck> out;
    out.push_back(detail::finish_relation("[A1l(f),A1q(g)]-(f<->g)=0", ctx, pr,
                                          {{&a1lf, &a1qg, 1.0}, {&a1lg, &a1qf, -1.0}}, nullptr, cfg));
    out.push_back(detail::finish_relation("[A1l(f),Azq(g)]+[A1q(f),Azl(g)]=-2L-1l(k)", ctx, pr,
                                          {{&a1lf, &azqg, 1.0}, {&a1qf, &azlg, 1.0}}, &r5, cfg));
    out.push_back(detail::finish_relation("[Azl(f),Azq(g)]-(f<->g)=-2Azl(h)", ctx, pr,
                                          {{&azlf, &azqg, 1.0}, {&azlg, &azqf, -1.0}}, &r6, cfg));
    return out;
}

// ---------------------------------------------------------------------------
// Hermite cancellation pairs at beta = 2
//
// L_{-1,q}(f) = -sum dt [F (X + Z) + f' Phi] with F = f'/sigma^2 + f'', X the
// nonzero-mode part of 1/2 oint :psi^2:, Z = -N x_1 its zero-mode part and
// Phi = 1/2 oint :phi^2:.  Every piece has its multipliers at a single slot.

struct SlotLocalOp {
    int slot = 0;
    Vector a;     // k_max multiplier coefficients at the slot
    Matrix prow;  // k_max x n rows of P at the slot
    Matrix ph;    // prow * hd once profiles are attached
};

namespace detail {

inline SlotLocalOp slot_quadratic(const BosonContext& ctx, Field fld, int j, bool zero_mode_part) {
    const VarSpace& s = ctx.space();
    const int kk = s.k_max;
    SlotLocalOp op{j, Vector::Zero(kk), Matrix::Zero(kk, s.size()), Matrix()};
    // 1/2 oint :F^2: = 1/2 sum_{m + n = -1} :F_m F_n: = sum_{m >= 0} :F_m F_{-m-1}:
    for (int m = 0; m < kk; ++m) {
        const bool zero = m == 0;
        if (zero != zero_mode_part) continue;
        const LinearForm up = ctx.mode(fld, m, j), down = ctx.mode(fld, -m - 1, j);
        for (auto [i, u] : down.mult) {
            const int r = s.mode(i) - 1;
            op.a(r) += u * up.c;
            for (auto [c, v] : up.deriv) op.prow(r, c) += u * v;
        }
    }
    return op;
}

}  // namespace detail

// Projected sum over slot pairs of w(j, j') [A_j, B_j']; operands carry ph = prow * hd.
class SlotPairSum {
public:
    SlotPairSum(const VarSpace& s, const Profiles& pr) : s_(s), pr_(pr) {
        const auto m = pr.hx.cols();
        acc_ = ProjectedOp{0.0, Vector::Zero(m), Vector::Zero(m), Matrix::Zero(m, m), Matrix::Zero(m, m)};
    }

    void add(const SlotLocalOp& x, const SlotLocalOp& y, double w) {
        if (w == 0.0) return;
        const int kk = s_.k_max;
        const int cx = s_.index(1, x.slot), cy = s_.index(1, y.slot);
        const Matrix hx_x = pr_.hx.middleRows(cx, kk), hx_y = pr_.hx.middleRows(cy, kk);
        const Matrix px_y = x.prow.middleCols(cy, kk);  // P_x restricted to slot-y columns
        const Matrix py_x = y.prow.middleCols(cx, kk);
        acc_.a += w * (hx_x.transpose() * (px_y * y.a) - hx_y.transpose() * (py_x * x.a));
        acc_.p += w * (hx_x.transpose() * (px_y * y.ph) - hx_y.transpose() * (py_x * x.ph));
    }

    [[nodiscard]] const ProjectedOp& result() const { return acc_; }

private:
    const VarSpace& s_;
    const Profiles& pr_;
    ProjectedOp acc_;
};

struct HermitePairs {
    double dt = 0.0;
    // Pieces for (f, g), named as in the cancellation scheme.
    ProjectedOp c1, c11, c12, c13, c2, c3, c4, c5, c6;
    // Full bracket [L_{-1,q}(f), L_{-1,q}(g)] assembled from the pieces, and its
    // direct dense evaluation when requested.
    ProjectedOp bracket_from_pieces;
    double bracket_direct_residual = -1.0;
    // max |pair| / max(|first|, |second|) for C11+C4, C12+C3, C13+C2, C5+C6
    std::vector<double> relative;
    std::vector<double> absolute;
    double ibp_relative = 0.0;  // |C1 - (C11 + C12 + C13)| / |C1|
    // [L_{-1,lin}(f), L_{-1,q}(g)] - (f <-> g): grid value, size of one half,
    // the integrated-by-parts intermediate and the total-derivative integral.
    double lin_quadr_grid = 0.0;
    double lin_quadr_half = 0.0;
    double lin_quadr_intermediate = 0.0;
    double lin_quadr_total_derivative = 0.0;
};

namespace detail {

inline ProjectedOp zero_projected(const Profiles& pr) {
    const auto m = pr.hx.cols();
    return ProjectedOp{0.0, Vector::Zero(m), Vector::Zero(m), Matrix::Zero(m, m), Matrix::Zero(m, m)};
}

inline ProjectedOp pieces_antisym(const std::vector<ProjectedOp>& fg, const std::vector<ProjectedOp>& gf,
                                  const Profiles& pr) {
    ProjectedOp r = zero_projected(pr);
    for (std::size_t i = 0; i < fg.size(); ++i) r += fg[i] - gf[i];
    return r;
}

// Exact integral over [0, t_end].
inline double integrate_poly(const TimePoly& p, double t_end) {
    const TimePoly ip = p.integral();
    return ip(t_end) - ip(0.0);
}

}  // namespace detail

[[nodiscard]] inline HermitePairs hermite_cancellation_pairs(const BosonContext& ctx, const TimePoly& f,
                                                             const TimePoly& g, const RelationConfig& cfg = {},
                                                             bool direct_check = false) {
    const Potential& pot = ctx.potential();
    if (!pot.is_hermite() || pot.beta != 2.0)
        throw std::invalid_argument("hermite_cancellation_pairs: Hermite potential at beta = 2 required");
    const VarSpace& s = ctx.space();
    const double t_end = s.grid.length();
    check_support(f, t_end);
    check_support(g, t_end);
    const double dt = s.grid.dt;
    const int nt = s.grid.steps;
    const int kk = s.k_max;
    const double inv_s2 = pot.coeff(1);  // 1 / sigma^2
    const double npart = ctx.particles();
    const Profiles pr = make_profiles(s, cfg.profile_modes, cfg.profile_degree);

    std::vector<SlotLocalOp> x(nt + 1), z(nt + 1), phi(nt + 1);
    for (int j = 0; j <= nt; ++j) {
        x[j] = detail::slot_quadratic(ctx, Field::Dynamic, j, false);
        z[j] = detail::slot_quadratic(ctx, Field::Dynamic, j, true);
        phi[j] = detail::slot_quadratic(ctx, Field::Static, j, false);
        for (SlotLocalOp* o : {&x[j], &z[j], &phi[j]}) o->ph = o->prow * pr.hd;
    }

    auto big_f = [&](const TimePoly& p) { return s.grid.sample(inv_s2 * p.derivative() + p.derivative(2)); };

    // Grid pieces C1..C6 for the ordered pair (p, q).
    auto grid_pieces = [&](const TimePoly& p, const TimePoly& q) {
        const auto fp = big_f(p);
        const auto q1 = s.grid.sample(q.derivative()), q2 = s.grid.sample(q.derivative(2));
        const auto gq = big_f(q);
        SlotPairSum c1(s, pr), c2(s, pr), c3(s, pr), c4(s, pr), c5(s, pr), c6(s, pr);
        for (int j = 0; j <= nt; ++j) {
            for (int jp = 0; jp < j; ++jp) {
                const double w = dt * dt * fp[j];
                c1.add(x[j], x[jp], w * q2[jp]);
                c2.add(x[j], x[jp], w * inv_s2 * q1[jp]);
                c5.add(x[j], z[jp], w * gq[jp]);
                c3.add(x[j], phi[jp], w * q1[jp]);
                c3.add(z[j], phi[jp], w * q1[jp]);
            }
            c4.add(x[j], phi[j], dt * dt * fp[j] * q1[j]);
            c6.add(z[j], phi[j], dt * dt * fp[j] * q1[j]);
        }
        return std::vector<ProjectedOp>{c1.result(), c2.result(), c3.result(),
                                        c4.result(), c5.result(), c6.result()};
    };

    // Integrated-by-parts pieces of C1, discretized with left-closed time sums.
    auto ibp_pieces = [&](const TimePoly& p, const TimePoly& q) {
        const auto fp = big_f(p);
        const auto q1 = s.grid.sample(q.derivative());
        std::vector<ProjectedOp> out(3, detail::zero_projected(pr));
        for (int j = 0; j <= nt; ++j) {
            Matrix r11 = Matrix::Zero(kk, s.size()), r12 = r11, r13 = r11;
            for (int k = 3; k <= kk; ++k) {
                const double kf = k * (k - 1.0);
                for (int sl = 0; sl <= j; ++sl) {
                    const int col = s.index(k - 2, sl);
                    r11(k - 1, col) += dt * fp[j] * q1[j] * kf * ctx.kernel(j - sl)(k - 2, k - 2);
                    r12(k - 1, col) -= dt * fp[j] * kf * ctx.kernel(j - sl)(k - 1, k - 1) * q1[sl];
                    double inner = 0.0;
                    for (int jp = sl; jp <= j; ++jp)
                        inner += dt * ctx.kernel(j - jp)(k - 1, k - 1) * inv_s2 * q1[jp] *
                                 ctx.kernel(jp - sl)(k - 2, k - 2);
                    r13(k - 1, col) -= dt * fp[j] * kf * inner;
                }
            }
            const int cx = s.index(1, j);
            const Matrix hxj = pr.hx.middleRows(cx, kk);
            out[0].p += hxj.transpose() * (r11 * pr.hd);
            out[1].p += hxj.transpose() * (r12 * pr.hd);
            out[2].p += hxj.transpose() * (r13 * pr.hd);
        }
        return out;
    };

    const auto fg = grid_pieces(f, g);
    const auto gf = grid_pieces(g, f);
    const auto ibp = ibp_pieces(f, g);

    HermitePairs hp;
    hp.dt = dt;
    hp.c1 = fg[0];
    hp.c2 = fg[1];
    hp.c3 = fg[2];
    hp.c4 = fg[3];
    hp.c5 = fg[4];
    hp.c6 = fg[5];
    hp.c11 = ibp[0];
    hp.c12 = ibp[1];
    hp.c13 = ibp[2];
    hp.bracket_from_pieces = detail::pieces_antisym(fg, gf, pr);

    auto pair = [&](const ProjectedOp& a, const ProjectedOp& b) {
        const double res = (a + b).max_abs();
        hp.absolute.push_back(res);
        hp.relative.push_back(res / std::max({a.max_abs(), b.max_abs(), 1e-300}));
    };
    pair(hp.c11, hp.c4);
    pair(hp.c12, hp.c3);
    pair(hp.c13, hp.c2);
    pair(hp.c5, hp.c6);
    hp.ibp_relative = (hp.c1 - hp.c11 - hp.c12 - hp.c13).max_abs() / std::max(hp.c1.max_abs(), 1e-300);

    const SvOperators ops(ctx);
    if (direct_check) {
        const ProjectedOp direct = projected_commutator(ops.a1_quadr(f), ops.a1_quadr(g), pr);
        hp.bracket_direct_residual = (direct - hp.bracket_from_pieces).max_abs();
    }

    const SecondOrderOp lf = ops.a1_lin(f), lg = ops.a1_lin(g);
    const SecondOrderOp qf = ops.a1_quadr(f), qg = ops.a1_quadr(g);
    const double half_fg = commutator(lf, qg).c, half_gf = commutator(lg, qf).c;
    hp.lin_quadr_grid = half_fg - half_gf;
    hp.lin_quadr_half = std::max(std::abs(half_fg), std::abs(half_gf));
    // -N [sum dt (f'/s^4 - f''') sum_{s<=t} dt e^{-(t-s)/s^2} G(s) - (f <-> g)]
    auto intermediate = [&](const TimePoly& p, const TimePoly& q) {
        const auto lp = s.grid.sample(inv_s2 * inv_s2 * p.derivative() - p.derivative(3));
        const auto gq = big_f(q);
        double acc = 0.0;
        for (int j = 0; j <= nt; ++j) {
            double inner = 0.0;
            for (int sl = 0; sl <= j; ++sl) inner += dt * ctx.kernel(j - sl)(1, 1) * gq[sl];
            acc += dt * lp[j] * inner;
        }
        return -npart * acc;
    };
    hp.lin_quadr_intermediate = intermediate(f, g) - intermediate(g, f);
    hp.lin_quadr_total_derivative =
        npart * detail::integrate_poly(f.derivative(3) * g.derivative() - f.derivative() * g.derivative(3), t_end);
    return hp;
}

// ---------------------------------------------------------------------------
// Monte Carlo residuals
//
// Z^lin[tau] = E exp(-sum_i s_i x_i) with s the per-cell source increments of
// one replica on the operator grid.  Applying O = c + a.x + d.D + x P D + D Q D
// to exp(-s.x) gives exp(-s.x) [c + a.x - d.s - x P s + s Q s].

struct McResidual {
    int tau_order = 0;
    std::vector<double> value;  // order 0: one entry; order 1: one per profile
    std::vector<double> std_error;
    std::vector<double> bootstrap_error;
    std::size_t replicas = 0;
};

class ConstraintMcAccumulator {
public:
    ConstraintMcAccumulator(SecondOrderOp op, int tau_order, const Profiles* pr = nullptr)
        : op_(std::move(op)), order_(tau_order), pr_(pr) {
        if (tau_order != 0 && tau_order != 1) throw std::invalid_argument("tau_order must be 0 or 1");
        if (tau_order == 1 && pr == nullptr) throw std::invalid_argument("order 1 needs projection profiles");
    }

    // Value of the bracket for one replica.
    [[nodiscard]] double order0(const Vector& src) const {
        double v = op_.c - op_.d.dot(src);
        if (op_.has_q()) v += src.dot(op_.q * src);
        return v;
    }

    void add_replica(const Vector& src) {
        if (src.size() != op_.n) throw GridMismatch("ConstraintMcAccumulator: source size");
        const double v0 = order0(src);
        if (order_ == 0) {
            samples_.push_back({v0});
            return;
        }
        // coefficient of x: a - P s - s (c - d.s + s Q s)
        Vector r = op_.a - v0 * src;
        if (op_.has_p()) r -= op_.p * src;
        const Vector proj = pr_->hx.transpose() * r;
        samples_.emplace_back(proj.data(), proj.data() + proj.size());
    }

    [[nodiscard]] McResidual result(std::uint64_t bootstrap_seed = 1, int bootstrap_rounds = 200) const {
        McResidual out;
        out.tau_order = order_;
        out.replicas = samples_.size();
        if (samples_.empty()) return out;
        const std::size_t dim = samples_.front().size(), m = samples_.size();
        out.value.assign(dim, 0.0);
        out.std_error.assign(dim, 0.0);
        out.bootstrap_error.assign(dim, 0.0);
        for (const auto& s : samples_)
            for (std::size_t i = 0; i < dim; ++i) out.value[i] += s[i] / static_cast<double>(m);
        for (const auto& s : samples_)
            for (std::size_t i = 0; i < dim; ++i) {
                const double d = s[i] - out.value[i];
                out.std_error[i] += d * d;
            }
        for (auto& e : out.std_error) e = m > 1 ? std::sqrt(e / static_cast<double>((m - 1) * m)) : 0.0;
        std::mt19937_64 rng(bootstrap_seed);
        std::uniform_int_distribution<std::size_t> pick(0, m - 1);
        std::vector<double> mean_sum(dim, 0.0), mean_sq(dim, 0.0);
        for (int b = 0; b < bootstrap_rounds; ++b) {
            std::vector<double> mean(dim, 0.0);
            for (std::size_t r = 0; r < m; ++r) {
                const auto& s = samples_[pick(rng)];
                for (std::size_t i = 0; i < dim; ++i) mean[i] += s[i];
            }
            for (std::size_t i = 0; i < dim; ++i) {
                mean[i] /= static_cast<double>(m);
                mean_sum[i] += mean[i];
                mean_sq[i] += mean[i] * mean[i];
            }
        }
        for (std::size_t i = 0; i < dim; ++i) {
            const double mu = mean_sum[i] / bootstrap_rounds;
            out.bootstrap_error[i] = std::sqrt(std::max(0.0, mean_sq[i] / bootstrap_rounds - mu * mu));
        }
        return out;
    }

private:
    SecondOrderOp op_;
    int order_;
    const Profiles* pr_;
    std::vector<std::vector<double>> samples_;
};

// Residual of a constraint on the Monte Carlo linearized functional.  sources holds one
// vector per replica in the variable layout of the operator: slot 0 the initial power sums,
// slot j the sum of d pi_k - (A pi)_k dt over the fine steps in (t_{j-1}, t_j].
[[nodiscard]] inline McResidual constraint_residual_mc(const ConstraintOp& cop, const std::vector<Vector>& sources,
                                                       int tau_order, const Profiles* pr = nullptr,
                                                       std::uint64_t bootstrap_seed = 1, int bootstrap_rounds = 200) {
    ConstraintMcAccumulator acc(cop.total(), tau_order, pr);
    for (const auto& src : sources) acc.add_replica(src);
    return acc.result(bootstrap_seed, bootstrap_rounds);
}

}  // namespace dbmsv
