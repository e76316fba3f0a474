#pragma once
// Functional calculus on the time-discretized mode variables x_{k,j} ~ tau_k(t_j):
// sparse polynomials, symbolic differential operators, the static and dynamic
// bosons, normal-ordered quadratics and the time derivation f(t) d/dt.
//
// Two independent engines are provided.  The sparse one is fully general and
// exact (Leibniz composition).  The dense one covers operators of the form
//   c + a.x + d.D + sum P_ij x_i D_j + sum Q_ij D_i D_j,
// a class closed under commutators as long as no x_i x_j terms appear, and is
// what the larger grids use.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dbmsv/fseries.hpp"
#include "dbmsv/kernel.hpp"
#include "dbmsv/timepoly.hpp"

namespace dbmsv {

using Vector = Eigen::VectorXd;

class GridMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct TimeGrid {
    double dt = 0.01;
    int steps = 100;  // T; slots j = 0..T

    TimeGrid() = default;
    TimeGrid(double dt_, int steps_) : dt(dt_), steps(steps_) {
        if (!(dt > 0)) throw std::invalid_argument("TimeGrid: dt must be positive");
        if (steps < 2) throw std::invalid_argument("TimeGrid: need at least 3 slots");
    }
    [[nodiscard]] int points() const { return steps + 1; }
    [[nodiscard]] double t(int j) const { return j * dt; }
    [[nodiscard]] double length() const { return steps * dt; }
    [[nodiscard]] std::vector<double> sample(const TimePoly& f) const {
        std::vector<double> v(static_cast<std::size_t>(points()));
        for (int j = 0; j <= steps; ++j) v[static_cast<std::size_t>(j)] = f(t(j));
        return v;
    }
    friend bool operator==(const TimeGrid& a, const TimeGrid& b) { return a.dt == b.dt && a.steps == b.steps; }
};

// Variables x_{k,j}, k = 1..k_max, j = 0..T, flattened slot-major.
struct VarSpace {
    int k_max = 1;
    TimeGrid grid;

    [[nodiscard]] int size() const { return k_max * grid.points(); }
    [[nodiscard]] int index(int k, int j) const {
        if (k < 1 || k > k_max || j < 0 || j > grid.steps)
            throw std::out_of_range("variable (" + std::to_string(k) + "," + std::to_string(j) + ") outside space");
        return j * k_max + (k - 1);
    }
    [[nodiscard]] int mode(int v) const { return v % k_max + 1; }
    [[nodiscard]] int slot(int v) const { return v / k_max; }
    friend bool operator==(const VarSpace& a, const VarSpace& b) { return a.k_max == b.k_max && a.grid == b.grid; }
};

inline void require_same(const VarSpace& a, const VarSpace& b) {
    if (!(a == b)) throw GridMismatch("operands live on different grids or mode cutoffs");
}

// ---------------------------------------------------------------------------
// Sparse engine

// (variable, power) pairs sorted by variable; powers >= 1.
using Monomial = std::vector<std::pair<int, int>>;

[[nodiscard]] inline Monomial mono_mul(const Monomial& a, const Monomial& b) {
    Monomial out;
    out.reserve(a.size() + b.size());
    std::size_t i = 0, j = 0;
    while (i < a.size() || j < b.size()) {
        if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) out.push_back(a[i++]);
        else if (i == a.size() || b[j].first < a[i].first) out.push_back(b[j++]);
        else {
            out.emplace_back(a[i].first, a[i].second + b[j].second);
            ++i;
            ++j;
        }
    }
    return out;
}

[[nodiscard]] inline int mono_power(const Monomial& m, int v) {
    auto it = std::lower_bound(m.begin(), m.end(), std::make_pair(v, 0));
    return it != m.end() && it->first == v ? it->second : 0;
}

[[nodiscard]] inline int mono_degree(const Monomial& m) {
    int d = 0;
    for (auto [v, p] : m) d += p;
    return d;
}

// m with the power of v lowered by `by` (assumed available).
[[nodiscard]] inline Monomial mono_lower(const Monomial& m, int v, int by) {
    Monomial out;
    out.reserve(m.size());
    for (auto [w, p] : m) {
        if (w == v) p -= by;
        if (p > 0) out.emplace_back(w, p);
    }
    return out;
}

[[nodiscard]] inline double falling(int n, int k) {
    double r = 1.0;
    for (int i = 0; i < k; ++i) r *= n - i;
    return r;
}

[[nodiscard]] inline double binom(int n, int k) { return falling(n, k) / falling(k, k); }

class PolyFunctional {
public:
    explicit PolyFunctional(VarSpace s) : space_(s) {}

    static PolyFunctional constant(VarSpace s, double c) {
        PolyFunctional p(s);
        p.add({}, c);
        return p;
    }
    static PolyFunctional variable(VarSpace s, int v, double c = 1.0) {
        PolyFunctional p(s);
        p.add({{v, 1}}, c);
        return p;
    }

    void add(const Monomial& m, double c) {
        if (c == 0.0) return;
        auto [it, fresh] = terms_.try_emplace(m, c);
        if (!fresh) {
            it->second += c;
            if (it->second == 0.0) terms_.erase(it);
        }
    }

    [[nodiscard]] const VarSpace& space() const { return space_; }
    [[nodiscard]] const std::map<Monomial, double>& terms() const { return terms_; }
    [[nodiscard]] double coeff(const Monomial& m) const {
        auto it = terms_.find(m);
        return it == terms_.end() ? 0.0 : it->second;
    }
    [[nodiscard]] int degree() const {
        int d = 0;
        for (auto& [m, c] : terms_) d = std::max(d, mono_degree(m));
        return d;
    }
    [[nodiscard]] double evaluate(const std::vector<double>& x) const {
        double acc = 0.0;
        for (auto& [m, c] : terms_) {
            double v = c;
            for (auto [var, p] : m) v *= std::pow(x.at(static_cast<std::size_t>(var)), p);
            acc += v;
        }
        return acc;
    }

    PolyFunctional& operator+=(const PolyFunctional& o) {
        require_same(space_, o.space_);
        for (auto& [m, c] : o.terms_) add(m, c);
        return *this;
    }
    PolyFunctional& operator*=(double s) {
        if (s == 0.0) terms_.clear();
        for (auto& [m, c] : terms_) c *= s;
        return *this;
    }
    friend PolyFunctional operator+(PolyFunctional a, const PolyFunctional& b) { return a += b; }
    friend PolyFunctional operator-(PolyFunctional a, PolyFunctional b) { return a += (b *= -1.0); }
    friend PolyFunctional operator*(double s, PolyFunctional a) { return a *= s; }
    friend PolyFunctional operator*(const PolyFunctional& a, const PolyFunctional& b) {
        require_same(a.space_, b.space_);
        PolyFunctional out(a.space_);
        for (auto& [ma, ca] : a.terms_)
            for (auto& [mb, cb] : b.terms_) out.add(mono_mul(ma, mb), ca * cb);
        return out;
    }

    [[nodiscard]] double max_abs() const {
        double m = 0.0;
        for (auto& [mono, c] : terms_) m = std::max(m, std::abs(c));
        return m;
    }

private:
    VarSpace space_;
    std::map<Monomial, double> terms_;
};

// Sum of c * x^mult * D^deriv, multipliers to the left.
class BosonOperator {
public:
    using Key = std::pair<Monomial, Monomial>;

    explicit BosonOperator(VarSpace s) : space_(s) {}

    static BosonOperator scalar(VarSpace s, double c) {
        BosonOperator o(s);
        o.add({}, {}, c);
        return o;
    }
    static BosonOperator multiplier(VarSpace s, int v, double c = 1.0) {
        BosonOperator o(s);
        o.add({{v, 1}}, {}, c);
        return o;
    }
    static BosonOperator derivative(VarSpace s, int v, double c = 1.0) {
        BosonOperator o(s);
        o.add({}, {{v, 1}}, c);
        return o;
    }

    void add(const Monomial& mult, const Monomial& deriv, double c) {
        if (c == 0.0) return;
        auto [it, fresh] = terms_.try_emplace(Key{mult, deriv}, c);
        if (!fresh) {
            it->second += c;
            if (it->second == 0.0) terms_.erase(it);
        }
    }

    [[nodiscard]] const VarSpace& space() const { return space_; }
    [[nodiscard]] const std::map<Key, double>& terms() const { return terms_; }
    [[nodiscard]] bool empty() const { return terms_.empty(); }
    [[nodiscard]] double coeff(const Monomial& mult, const Monomial& deriv) const {
        auto it = terms_.find(Key{mult, deriv});
        return it == terms_.end() ? 0.0 : it->second;
    }
    [[nodiscard]] double max_abs() const {
        double m = 0.0;
        for (auto& [k, c] : terms_) m = std::max(m, std::abs(c));
        return m;
    }
    // Drop coefficients below tol (used only to compare floating results).
    [[nodiscard]] BosonOperator pruned(double tol) const {
        BosonOperator o(space_);
        for (auto& [k, c] : terms_)
            if (std::abs(c) > tol) o.terms_.emplace(k, c);
        return o;
    }

    BosonOperator& operator+=(const BosonOperator& o) {
        require_same(space_, o.space_);
        for (auto& [k, c] : o.terms_) add(k.first, k.second, c);
        return *this;
    }
    BosonOperator& operator*=(double s) {
        if (s == 0.0) terms_.clear();
        for (auto& [k, c] : terms_) c *= s;
        return *this;
    }
    friend BosonOperator operator+(BosonOperator a, const BosonOperator& b) { return a += b; }
    friend BosonOperator operator-(BosonOperator a, BosonOperator b) { return a += (b *= -1.0); }
    friend BosonOperator operator*(double s, BosonOperator a) { return a *= s; }

    [[nodiscard]] PolyFunctional apply(const PolyFunctional& f) const {
        require_same(space_, f.space());
        PolyFunctional out(space_);
        for (auto& [key, c] : terms_) {
            const auto& [mult, deriv] = key;
            for (auto& [mono, cf] : f.terms()) {
                double w = c * cf;
                Monomial rest = mono;
                for (auto [v, p] : deriv) {
                    const int have = mono_power(rest, v);
                    if (have < p) {
                        w = 0.0;
                        break;
                    }
                    w *= falling(have, p);
                    rest = mono_lower(rest, v, p);
                }
                if (w != 0.0) out.add(mono_mul(mult, rest), w);
            }
        }
        return out;
    }

    // A o B brought to normal form by the Leibniz rule.
    friend BosonOperator compose(const BosonOperator& a, const BosonOperator& b) {
        require_same(a.space_, b.space_);
        BosonOperator out(a.space_);
        for (auto& [ka, ca] : a.terms_)
            for (auto& [kb, cb] : b.terms_) {
                const auto& [alpha, beta] = ka;
                const auto& [gamma, delta] = kb;
                // Variables differentiated by A and present in B's multiplier.
                std::vector<std::pair<int, std::pair<int, int>>> shared;
                for (auto [v, p] : beta) {
                    const int q = mono_power(gamma, v);
                    if (q > 0) shared.push_back({v, {p, q}});
                }
                expand_shared(out, alpha, beta, gamma, delta, ca * cb, shared, 0, 1.0, {});
            }
        return out;
    }

    friend BosonOperator commutator(const BosonOperator& a, const BosonOperator& b) {
        return compose(a, b) - compose(b, a);
    }

    // :A B: with every contraction dropped.
    friend BosonOperator normal_product(const BosonOperator& a, const BosonOperator& b) {
        require_same(a.space_, b.space_);
        BosonOperator out(a.space_);
        for (auto& [ka, ca] : a.terms_)
            for (auto& [kb, cb] : b.terms_)
                out.add(mono_mul(ka.first, kb.first), mono_mul(ka.second, kb.second), ca * cb);
        return out;
    }

private:
    static void expand_shared(BosonOperator& out, const Monomial& alpha, const Monomial& beta, const Monomial& gamma,
                              const Monomial& delta, double coeff,
                              const std::vector<std::pair<int, std::pair<int, int>>>& shared, std::size_t pos,
                              double weight, std::vector<std::pair<int, int>> mu) {
        if (pos == shared.size()) {
            Monomial g = gamma, b = beta;
            for (auto [v, m] : mu) {
                if (m == 0) continue;
                g = mono_lower(g, v, m);
                b = mono_lower(b, v, m);
            }
            out.add(mono_mul(alpha, g), mono_mul(b, delta), coeff * weight);
            return;
        }
        const auto [v, pq] = shared[pos];
        const auto [p, q] = pq;
        for (int m = 0; m <= std::min(p, q); ++m) {
            mu.emplace_back(v, m);
            expand_shared(out, alpha, beta, gamma, delta, coeff, shared, pos + 1,
                          weight * binom(p, m) * falling(q, m), mu);
            mu.pop_back();
        }
    }

    VarSpace space_;
    std::map<Key, double> terms_;
};

// ---------------------------------------------------------------------------
// Dense engine

using SparseVec = std::vector<std::pair<int, double>>;

// c + sum mult_i x_i + sum deriv_i D_i
struct LinearForm {
    double c = 0.0;
    SparseVec mult;
    SparseVec deriv;
};

struct SecondOrderOp {
    int n = 0;
    double c = 0.0;
    Vector a;
    Vector d;
    Matrix p;  // empty means zero
    Matrix q;  // symmetric; empty means zero

    SecondOrderOp() = default;
    explicit SecondOrderOp(int n_) : n(n_), a(Vector::Zero(n_)), d(Vector::Zero(n_)) {}

    [[nodiscard]] bool has_p() const { return p.size() > 0; }
    [[nodiscard]] bool has_q() const { return q.size() > 0; }
    Matrix& p_mut() {
        if (!has_p()) p = Matrix::Zero(n, n);
        return p;
    }
    Matrix& q_mut() {
        if (!has_q()) q = Matrix::Zero(n, n);
        return q;
    }

    SecondOrderOp& operator+=(const SecondOrderOp& o) { return axpy(1.0, o); }
    SecondOrderOp& operator-=(const SecondOrderOp& o) { return axpy(-1.0, o); }
    SecondOrderOp& operator*=(double s) {
        c *= s;
        a *= s;
        d *= s;
        if (has_p()) p *= s;
        if (has_q()) q *= s;
        return *this;
    }
    SecondOrderOp& axpy(double s, const SecondOrderOp& o) {
        if (o.n != n) throw GridMismatch("SecondOrderOp: size mismatch");
        c += s * o.c;
        a += s * o.a;
        d += s * o.d;
        if (o.has_p()) p_mut() += s * o.p;
        if (o.has_q()) q_mut() += s * o.q;
        return *this;
    }
    friend SecondOrderOp operator+(SecondOrderOp x, const SecondOrderOp& y) { return x += y; }
    friend SecondOrderOp operator-(SecondOrderOp x, const SecondOrderOp& y) { return x -= y; }
    friend SecondOrderOp operator*(double s, SecondOrderOp x) { return x *= s; }

    [[nodiscard]] double max_abs() const {
        double m = std::abs(c);
        if (n > 0) m = std::max({m, a.cwiseAbs().maxCoeff(), d.cwiseAbs().maxCoeff()});
        if (has_p()) m = std::max(m, p.cwiseAbs().maxCoeff());
        if (has_q()) m = std::max(m, q.cwiseAbs().maxCoeff());
        return m;
    }
};

// [A, B] in the same class.
[[nodiscard]] inline SecondOrderOp commutator(const SecondOrderOp& x, const SecondOrderOp& y) {
    if (x.n != y.n) throw GridMismatch("commutator: size mismatch");
    SecondOrderOp r(x.n);
    r.c = x.d.dot(y.a) - x.a.dot(y.d);
    if (x.has_p()) {
        r.a += x.p * y.a;
        r.d -= x.p.transpose() * y.d;
    }
    if (y.has_p()) {
        r.a -= y.p * x.a;
        r.d += y.p.transpose() * x.d;
    }
    if (x.has_q()) r.d += 2.0 * (x.q * y.a);
    if (y.has_q()) r.d -= 2.0 * (y.q * x.a);
    if (x.has_p() && y.has_p()) r.p = x.p * y.p - y.p * x.p;
    if (x.has_q() && y.has_p()) {
        Matrix t = x.q * y.p;
        r.q_mut() += t + t.transpose();
    }
    if (y.has_q() && x.has_p()) {
        Matrix t = y.q * x.p;
        r.q_mut() -= t + t.transpose();
    }
    return r;
}

inline void add_normal_product(SecondOrderOp& op, const LinearForm& f, const LinearForm& g, double w) {
    if (w == 0.0) return;
    if (!f.mult.empty() && !g.mult.empty())
        throw std::domain_error("add_normal_product: x x terms are outside the dense operator class");
    op.c += w * f.c * g.c;
    for (auto [i, v] : g.mult) op.a(i) += w * f.c * v;
    for (auto [i, v] : f.mult) op.a(i) += w * g.c * v;
    for (auto [i, v] : g.deriv) op.d(i) += w * f.c * v;
    for (auto [i, v] : f.deriv) op.d(i) += w * g.c * v;
    if (!f.mult.empty() && !g.deriv.empty()) {
        Matrix& p = op.p_mut();
        for (auto [i, u] : f.mult)
            for (auto [j, v] : g.deriv) p(i, j) += w * u * v;
    }
    if (!g.mult.empty() && !f.deriv.empty()) {
        Matrix& p = op.p_mut();
        for (auto [i, u] : g.mult)
            for (auto [j, v] : f.deriv) p(i, j) += w * u * v;
    }
    if (!f.deriv.empty() && !g.deriv.empty()) {
        Matrix& q = op.q_mut();
        for (auto [i, u] : f.deriv)
            for (auto [j, v] : g.deriv) {
                q(i, j) += 0.5 * w * u * v;
                q(j, i) += 0.5 * w * u * v;
            }
    }
}

inline void add_linear(SecondOrderOp& op, const LinearForm& f, double w) {
    op.c += w * f.c;
    for (auto [i, v] : f.mult) op.a(i) += w * v;
    for (auto [i, v] : f.deriv) op.d(i) += w * v;
}

[[nodiscard]] inline BosonOperator to_sparse(const LinearForm& f, const VarSpace& s) {
    BosonOperator o = BosonOperator::scalar(s, f.c);
    for (auto [i, v] : f.mult) o.add({{i, 1}}, {}, v);
    for (auto [i, v] : f.deriv) o.add({}, {{i, 1}}, v);
    return o;
}

[[nodiscard]] inline BosonOperator to_sparse(const SecondOrderOp& op, const VarSpace& s) {
    if (op.n != s.size()) throw GridMismatch("to_sparse: size mismatch");
    BosonOperator o = BosonOperator::scalar(s, op.c);
    for (int i = 0; i < op.n; ++i) {
        o.add({{i, 1}}, {}, op.a(i));
        o.add({}, {{i, 1}}, op.d(i));
    }
    if (op.has_p())
        for (int i = 0; i < op.n; ++i)
            for (int j = 0; j < op.n; ++j) o.add({{i, 1}}, {{j, 1}}, op.p(i, j));
    if (op.has_q())
        for (int i = 0; i < op.n; ++i)
            for (int j = i; j < op.n; ++j) {
                const double v = i == j ? op.q(i, i) : 2.0 * op.q(i, j);
                o.add({}, i == j ? Monomial{{i, 2}} : Monomial{{i, 1}, {j, 1}}, v);
            }
    return o;
}

// ---------------------------------------------------------------------------
// Matrix elements between smooth-profile functionals
//
// F_{k,p} = sum_j dt h_p(t_j) x_{k,j} with shifted Legendre profiles h_p on
// [0, T dt].  Each operator part is paired so that the element is O(1) as dt -> 0:
//   c, sum a h, sum d dt h, sum h P dt h', 2 sum dt h Q dt h'.

struct Profiles {
    Matrix hx;  // n x m profile values
    Matrix hd;  // dt * hx
    std::vector<std::pair<int, int>> labels;  // (mode, profile degree)
};

[[nodiscard]] inline double shifted_legendre(int p, double s) {
    const double x = 2.0 * s - 1.0;
    double p0 = 1.0, p1 = x;
    if (p == 0) return p0;
    for (int l = 1; l < p; ++l) {
        const double p2 = ((2 * l + 1) * x * p1 - l * p0) / (l + 1);
        p0 = p1;
        p1 = p2;
    }
    return p1;
}

[[nodiscard]] inline Profiles make_profiles(const VarSpace& s, int max_mode, int max_degree) {
    if (max_mode > s.k_max) throw std::invalid_argument("make_profiles: mode beyond cutoff");
    Profiles pr;
    const int m = max_mode * (max_degree + 1);
    pr.hx = Matrix::Zero(s.size(), m);
    int col = 0;
    for (int k = 1; k <= max_mode; ++k)
        for (int p = 0; p <= max_degree; ++p, ++col) {
            pr.labels.emplace_back(k, p);
            for (int j = 0; j <= s.grid.steps; ++j)
                pr.hx(s.index(k, j), col) = shifted_legendre(p, s.grid.t(j) / s.grid.length());
        }
    pr.hd = s.grid.dt * pr.hx;
    return pr;
}

struct ProjectedOp {
    double c = 0.0;
    Vector a;
    Vector d;
    Matrix p;
    Matrix q;

    ProjectedOp& operator+=(const ProjectedOp& o) {
        c += o.c;
        a += o.a;
        d += o.d;
        p += o.p;
        q += o.q;
        return *this;
    }
    ProjectedOp& operator*=(double s) {
        c *= s;
        a *= s;
        d *= s;
        p *= s;
        q *= s;
        return *this;
    }
    friend ProjectedOp operator+(ProjectedOp x, const ProjectedOp& y) { return x += y; }
    friend ProjectedOp operator-(ProjectedOp x, ProjectedOp y) { return x += (y *= -1.0); }
    friend ProjectedOp operator*(double s, ProjectedOp x) { return x *= s; }
    [[nodiscard]] double max_abs() const {
        return std::max({std::abs(c), a.cwiseAbs().maxCoeff(), d.cwiseAbs().maxCoeff(), p.cwiseAbs().maxCoeff(),
                         q.cwiseAbs().maxCoeff()});
    }
};

[[nodiscard]] inline ProjectedOp project(const SecondOrderOp& op, const Profiles& pr) {
    const auto m = pr.hx.cols();
    ProjectedOp r{op.c, pr.hx.transpose() * op.a, pr.hd.transpose() * op.d, Matrix::Zero(m, m), Matrix::Zero(m, m)};
    if (op.has_p()) r.p = pr.hx.transpose() * (op.p * pr.hd);
    if (op.has_q()) r.q = 2.0 * pr.hd.transpose() * (op.q * pr.hd);
    return r;
}

// Projection of [x, y] without forming n x n products.
[[nodiscard]] inline ProjectedOp projected_commutator(const SecondOrderOp& x, const SecondOrderOp& y,
                                                      const Profiles& pr) {
    if (x.n != y.n || x.n != pr.hx.rows()) throw GridMismatch("projected_commutator: size mismatch");
    const auto m = pr.hx.cols();
    ProjectedOp r{x.d.dot(y.a) - x.a.dot(y.d), Vector::Zero(m), Vector::Zero(m), Matrix::Zero(m, m),
                  Matrix::Zero(m, m)};
    Vector a = Vector::Zero(x.n), d = Vector::Zero(x.n);
    if (x.has_p()) {
        a += x.p * y.a;
        d -= x.p.transpose() * y.d;
    }
    if (y.has_p()) {
        a -= y.p * x.a;
        d += y.p.transpose() * x.d;
    }
    if (x.has_q()) d += 2.0 * (x.q * y.a);
    if (y.has_q()) d -= 2.0 * (y.q * x.a);
    r.a = pr.hx.transpose() * a;
    r.d = pr.hd.transpose() * d;
    if (x.has_p() && y.has_p()) {
        const Matrix xh = x.p.transpose() * pr.hx, yh = y.p.transpose() * pr.hx;
        r.p = xh.transpose() * (y.p * pr.hd) - yh.transpose() * (x.p * pr.hd);
    }
    auto q_part = [&](const SecondOrderOp& qo, const SecondOrderOp& po, double sign) {
        if (!qo.has_q() || !po.has_p()) return;
        const Matrix qh = qo.q * pr.hd, ph = po.p * pr.hd;
        const Matrix t = qh.transpose() * ph;
        r.q += sign * 2.0 * (t + t.transpose());
    };
    q_part(x, y, 1.0);
    q_part(y, x, -1.0);
    return r;
}

// ---------------------------------------------------------------------------
// Bosons

enum class Field { Static, Dynamic };

// Centered first difference, second-order one-sided rows at both ends.
[[nodiscard]] inline Matrix difference_matrix(const TimeGrid& g) {
    const int n = g.points();
    Matrix dm = Matrix::Zero(n, n);
    const double h = 1.0 / (2.0 * g.dt);
    dm(0, 0) = -3 * h;
    dm(0, 1) = 4 * h;
    dm(0, 2) = -h;
    for (int j = 1; j < n - 1; ++j) {
        dm(j, j - 1) = -h;
        dm(j, j + 1) = h;
    }
    dm(n - 1, n - 1) = 3 * h;
    dm(n - 1, n - 2) = -4 * h;
    dm(n - 1, n - 3) = h;
    return dm;
}

class BosonContext {
public:
    BosonContext(Potential pot, double particles, VarSpace space)
        : pot_(std::move(pot)), n_(particles), space_(space) {
        const Matrix gen = generator_matrix(pot_, space_.k_max);
        kernels_.reserve(static_cast<std::size_t>(space_.grid.points()));
        for (int lag = 0; lag <= space_.grid.steps; ++lag)
            kernels_.push_back(propagator_from_generator(gen, lag * space_.grid.dt).entries);
    }

    [[nodiscard]] const VarSpace& space() const { return space_; }
    [[nodiscard]] const Potential& potential() const { return pot_; }
    [[nodiscard]] double beta() const { return pot_.beta; }
    [[nodiscard]] double particles() const { return n_; }
    [[nodiscard]] int size() const { return space_.size(); }
    [[nodiscard]] const Matrix& kernel(int lag) const { return kernels_.at(static_cast<std::size_t>(lag)); }

    [[nodiscard]] LinearForm static_mode(int k, int j) const {
        check_mode(k);
        LinearForm f;
        const double sb = std::sqrt(beta());
        if (k >= 1) f.deriv.emplace_back(space_.index(k, j), sb / space_.grid.dt);
        else if (k <= -1) f.mult.emplace_back(space_.index(-k, j), -k / sb);
        return f;
    }

    [[nodiscard]] LinearForm dynamic_mode(int k, int j) const {
        check_mode(k);
        if (k <= -1) return static_mode(k, j);
        LinearForm f;
        const double sb = std::sqrt(beta());
        if (k == 0) {
            f.c = -sb * n_;
            return f;
        }
        for (int jp = 0; jp <= j; ++jp) {
            const Matrix& kern = kernel(j - jp);
            for (int l = 1; l <= space_.k_max; ++l) {
                const double v = kern(k, l);
                if (v != 0.0) f.deriv.emplace_back(space_.index(l, jp), sb * v);
            }
        }
        return f;
    }

    [[nodiscard]] LinearForm mode(Field fld, int k, int j) const {
        return fld == Field::Static ? static_mode(k, j) : dynamic_mode(k, j);
    }

    [[nodiscard]] BosonOperator static_boson(int k, int j) const { return to_sparse(static_mode(k, j), space_); }
    [[nodiscard]] BosonOperator dynamic_boson(int k, int j) const { return to_sparse(dynamic_mode(k, j), space_); }

    // Adds w * oint u(z) :field(z, t_j)^2: dz = w * sum_{m,n} u_{m+n+1} :F_m F_n:.
    void add_quadratic(SecondOrderOp& op, Field fld, const TruncSeries& u, int j, double w) const {
        if (w == 0.0) return;
        const int kk = space_.k_max;
        for (int m = -kk; m <= kk; ++m)
            for (int n = -kk; n <= kk; ++n) {
                const double un = weight_coeff(u, m, n);
                if (un == 0.0) continue;
                if (m < 0 && n < 0) throw WindowOverflow("add_quadratic: weight produces x x terms");
                add_normal_product(op, mode(fld, m, j), mode(fld, n, j), w * un);
            }
    }

    // Same quadratic assembled with the sparse engine (independent route).
    [[nodiscard]] BosonOperator quadratic_sparse(Field fld, const TruncSeries& u, int j) const {
        BosonOperator out(space_);
        const int kk = space_.k_max;
        for (int m = -kk; m <= kk; ++m)
            for (int n = -kk; n <= kk; ++n) {
                const double un = weight_coeff(u, m, n);
                if (un == 0.0) continue;
                const BosonOperator fm = to_sparse(mode(fld, m, j), space_);
                const BosonOperator fn = to_sparse(mode(fld, n, j), space_);
                out += un * normal_product(fm, fn);
            }
        return out;
    }

    // oint u(z) psi(z, t_j) dz = sum_n u_n psi_n.
    [[nodiscard]] LinearForm linear_mode_sum(Field fld, const TruncSeries& u, int j) const {
        LinearForm out;
        for (int n = std::max(0, u.lo_deg()); n <= std::min(u.hi_deg(), space_.k_max); ++n) {
            const double un = u[n];
            if (un == 0.0) continue;
            const LinearForm f = mode(fld, n, j);
            out.c += un * f.c;
            for (auto [i, v] : f.deriv) out.deriv.emplace_back(i, un * v);
        }
        for (int n = u.lo_deg(); n < 0; ++n)
            if (u[n] != 0.0) throw WindowOverflow("linear_mode_sum: negative powers in weight");
        for (int n = space_.k_max + 1; n <= u.hi_deg(); ++n)
            if (u[n] != 0.0) throw WindowOverflow("linear_mode_sum: weight degree beyond mode cutoff");
        return out;
    }

    // f(t) d/dt: sum_k sum_{i,j} f_j D_{ji} x_{k,i} D_{k,j}.  On derivative
    // generators it acts as gamma -> -f D gamma; on linear functionals as y -> D^T (f y).
    [[nodiscard]] SecondOrderOp time_derivation(const std::vector<double>& f) const {
        const TimeGrid& g = space_.grid;
        if (static_cast<int>(f.size()) != g.points()) throw GridMismatch("time_derivation: sample size");
        const Matrix dm = difference_matrix(g);
        SecondOrderOp op(size());
        Matrix& p = op.p_mut();
        for (int j = 0; j <= g.steps; ++j)
            for (int i = 0; i <= g.steps; ++i) {
                const double v = f[static_cast<std::size_t>(j)] * dm(j, i);
                if (v == 0.0) continue;
                for (int k = 1; k <= space_.k_max; ++k) p(space_.index(k, i), space_.index(k, j)) = v;
            }
        return op;
    }

    [[nodiscard]] SecondOrderOp time_derivation(const TimePoly& f) const {
        return time_derivation(space_.grid.sample(f));
    }

private:
    void check_mode(int k) const {
        if (std::abs(k) > space_.k_max) throw std::out_of_range("boson mode beyond cutoff");
    }
    static double weight_coeff(const TruncSeries& u, int m, int n) {
        // residue of u(z) z^{-m-1} z^{-n-1}
        const int deg = m + n + 1;
        if (deg < u.lo_deg() || deg > u.hi_deg()) {
            if (u.known_zero(deg)) return 0.0;
            throw WindowOverflow("quadratic weight truncated at degree " + std::to_string(deg));
        }
        return residue_pair(u, TruncSeries::monomial(-m - n - 2));
    }

    Potential pot_;
    double n_;
    VarSpace space_;
    std::vector<Matrix> kernels_;
};

// Linear functional sum_j dt g(t_j) x_{k,j}.
[[nodiscard]] inline Vector linear_functional(const VarSpace& s, int k, const std::vector<double>& g) {
    Vector y = Vector::Zero(s.size());
    for (int j = 0; j <= s.grid.steps; ++j) y(s.index(k, j)) = s.grid.dt * g.at(static_cast<std::size_t>(j));
    return y;
}

[[nodiscard]] inline PolyFunctional to_poly(const VarSpace& s, const Vector& y) {
    PolyFunctional f(s);
    for (int i = 0; i < y.size(); ++i) f.add({{i, 1}}, y(i));
    return f;
}

}  // namespace dbmsv
