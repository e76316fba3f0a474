#pragma once
// Noise-preserving trajectory transformations on sampled paths: iterated
// integrals and shuffles, generators L_{n,(n1..)}^{a,(a1..)} and their
// brackets, force changes, and Schrodinger-Virasoro fields X_f, Y_g.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dbmsv/kernel.hpp"
#include "dbmsv/timepoly.hpp"

namespace dbmsv {

// How letter integrands are interpolated between grid points. Both rules
// integrate the interpolant exactly, so the shuffle identity holds to
// rounding. LeftPoint is the left-closed Riemann sum for one letter; Linear
// is second order.
enum class Quadrature { LeftPoint, Linear };

struct SampledPath {
    double dt = 0.0;
    std::vector<double> values;
    Quadrature quad = Quadrature::LeftPoint;

    [[nodiscard]] int steps() const { return static_cast<int>(values.size()) - 1; }
    [[nodiscard]] double t(int j) const { return dt * j; }
    [[nodiscard]] double duration() const { return dt * steps(); }

    static SampledPath sample(const std::function<double(double)>& f, double t_end, int steps,
                              Quadrature q = Quadrature::LeftPoint) {
        if (steps < 2 || !(t_end > 0.0)) throw std::invalid_argument("SampledPath: need steps >= 2 and t_end > 0");
        SampledPath p{t_end / steps, std::vector<double>(static_cast<std::size_t>(steps) + 1), q};
        for (int j = 0; j <= steps; ++j) p.values[static_cast<std::size_t>(j)] = f(p.t(j));
        p.check();
        return p;
    }

    void check() const {
        if (values.size() < 3 || !(dt > 0.0)) throw std::invalid_argument("SampledPath: too short");
        for (double v : values)
            if (!std::isfinite(v)) throw std::invalid_argument("SampledPath: non-finite value");
    }

    // Centered differences inside, second-order one-sided at the ends.
    [[nodiscard]] std::vector<double> derivative() const {
        const std::size_t m = values.size();
        std::vector<double> d(m);
        const double h = dt;
        d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
        d[m - 1] = (3.0 * values[m - 1] - 4.0 * values[m - 2] + values[m - 3]) / (2.0 * h);
        for (std::size_t j = 1; j + 1 < m; ++j) d[j] = (values[j + 1] - values[j - 1]) / (2.0 * h);
        return d;
    }

    [[nodiscard]] SampledPath with_values(std::vector<double> v) const { return {dt, std::move(v), quad}; }
};

// ---------------------------------------------------------------------------
// Words and iterated integrals

// Integrand adot(s) lambda(s)^k.
struct Letter {
    int k = 0;
    TimePoly adot;
    friend bool operator==(const Letter& a, const Letter& b) { return a.k == b.k && a.adot == b.adot; }
};

// letters[0] is the outermost integral (latest time).
struct IIWord {
    std::vector<Letter> letters;

    [[nodiscard]] std::size_t size() const { return letters.size(); }
    [[nodiscard]] bool empty() const { return letters.empty(); }
    friend bool operator==(const IIWord& a, const IIWord& b) { return a.letters == b.letters; }

    [[nodiscard]] IIWord prepend(Letter l) const {
        IIWord w;
        w.letters.reserve(letters.size() + 1);
        w.letters.push_back(std::move(l));
        w.letters.insert(w.letters.end(), letters.begin(), letters.end());
        return w;
    }
};

struct WordTerm {
    double coeff = 1.0;
    IIWord word;
};
using WordCombination = std::vector<WordTerm>;

namespace detail {

// Polynomial in the local cell variable u.
using LocalPoly = std::vector<double>;

inline double eval_local(const LocalPoly& p, double u) {
    double acc = 0.0;
    for (auto it = p.rbegin(); it != p.rend(); ++it) acc = acc * u + *it;
    return acc;
}

// u -> int_0^u (alpha + beta v) q(v) dv
inline LocalPoly integrate_against(double alpha, double beta, const LocalPoly& q) {
    LocalPoly prod(q.size() + 1, 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) {
        prod[i] += alpha * q[i];
        prod[i + 1] += beta * q[i];
    }
    LocalPoly out(prod.size() + 1, 0.0);
    for (std::size_t i = 0; i < prod.size(); ++i) out[i + 1] = prod[i] / static_cast<double>(i + 1);
    return out;
}

// Letter integrands sampled on the grid, one row per letter.
inline std::vector<std::vector<double>> letter_samples(const IIWord& w, const SampledPath& path) {
    const int m = path.steps();
    std::vector<std::vector<double>> f(w.size(), std::vector<double>(static_cast<std::size_t>(m) + 1));
    for (std::size_t i = 0; i < w.size(); ++i) {
        const Letter& l = w.letters[i];
        if (l.k < 0) throw std::invalid_argument("IIWord: letter power must be >= 0");
        for (int j = 0; j <= m; ++j) {
            const double lam = path.values[static_cast<std::size_t>(j)];
            double p = 1.0;
            for (int e = 0; e < l.k; ++e) p *= lam;
            f[i][static_cast<std::size_t>(j)] = l.adot(path.t(j)) * p;
        }
    }
    return f;
}

// Chen step on cell j: given the suffix integrals s[m] = I(letters m..p-1)
// at t_j (s[p] = 1), returns them at t_j + u for u in [0, dt].
inline std::vector<double> chen_step(const std::vector<std::vector<double>>& f, const SampledPath& path, int j,
                                     const std::vector<double>& s, double u) {
    const std::size_t p = f.size();
    const double h = path.dt;
    // jcell[m][r]: cell integral of letters m..m+r-1, evaluated at u
    std::vector<std::vector<double>> jcell(p + 1, std::vector<double>(p + 1, 0.0));
    for (std::size_t m = 0; m <= p; ++m) jcell[m][0] = 1.0;
    std::vector<double> alpha(p), beta(p);
    for (std::size_t i = 0; i < p; ++i) {
        alpha[i] = f[i][static_cast<std::size_t>(j)];
        beta[i] = path.quad == Quadrature::Linear ? (f[i][static_cast<std::size_t>(j) + 1] - alpha[i]) / h : 0.0;
    }
    for (std::size_t e = 0; e < p; ++e) {
        LocalPoly q{1.0};
        for (std::size_t m = e + 1; m-- > 0;) {
            q = integrate_against(alpha[m], beta[m], q);
            jcell[m][e - m + 1] = eval_local(q, u);
        }
    }
    std::vector<double> out(s);
    for (std::size_t m = 0; m < p; ++m) {
        double acc = 0.0;
        for (std::size_t r = 0; r + m <= p; ++r) acc += jcell[m][r] * s[m + r];
        out[m] = acc;
    }
    return out;
}

}  // namespace detail

// I_w(t_j) for every grid point: the interpolated integrands are integrated
// exactly cell by cell and glued with Chen's relation.
inline std::vector<double> evaluate_iterated(const IIWord& w, const SampledPath& path) {
    const int m = path.steps();
    std::vector<double> out(static_cast<std::size_t>(m) + 1, 1.0);
    if (w.empty()) return out;
    const auto f = detail::letter_samples(w, path);
    std::vector<double> s(w.size() + 1, 0.0);
    s.back() = 1.0;
    out[0] = 0.0;
    for (int j = 0; j < m; ++j) {
        s = detail::chen_step(f, path, j, s, path.dt);
        out[static_cast<std::size_t>(j) + 1] = s[0];
    }
    return out;
}

// All (p,q)-shuffles of the two letter sequences.
inline WordCombination shuffle_product(const IIWord& w1, const IIWord& w2) {
    WordCombination out;
    IIWord cur;
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t j) {
        if (i == w1.size() && j == w2.size()) {
            out.push_back({1.0, cur});
            return;
        }
        if (i < w1.size()) {
            cur.letters.push_back(w1.letters[i]);
            rec(i + 1, j);
            cur.letters.pop_back();
        }
        if (j < w2.size()) {
            cur.letters.push_back(w2.letters[j]);
            rec(i, j + 1);
            cur.letters.pop_back();
        }
    };
    rec(0, 0);
    return out;
}

// Collects equal words.
inline WordCombination canonical(const WordCombination& c) {
    WordCombination out;
    for (const auto& t : c) {
        auto it = std::find_if(out.begin(), out.end(), [&](const WordTerm& o) { return o.word == t.word; });
        if (it == out.end())
            out.push_back(t);
        else
            it->coeff += t.coeff;
    }
    std::erase_if(out, [](const WordTerm& t) { return t.coeff == 0.0; });
    return out;
}

inline std::vector<double> evaluate_combination(const WordCombination& c, const SampledPath& path) {
    std::vector<double> out(path.values.size(), 0.0);
    for (const auto& t : c) {
        const auto v = evaluate_iterated(t.word, path);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += t.coeff * v[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Generators

// prefactor * lambda^{n+1} Phi^{tail} - lambda' * 2(n+1) I_{(n, prefactor) tail}
struct NPTerm {
    int n = -1;
    TimePoly prefactor;
    IIWord tail;
};

struct NPGenerator {
    std::vector<NPTerm> terms;

    static NPGenerator single(int n, TimePoly prefactor, IIWord tail = {}) {
        NPGenerator g;
        g.add({n, std::move(prefactor), std::move(tail)});
        return g;
    }

    void add(NPTerm t) {
        if (t.n < -1) throw std::invalid_argument("NPGenerator: leading exponent must be >= -1");
        if (t.prefactor.is_zero()) return;
        auto it = std::find_if(terms.begin(), terms.end(),
                               [&](const NPTerm& o) { return o.n == t.n && o.tail == t.tail; });
        if (it == terms.end()) {
            terms.push_back(std::move(t));
            return;
        }
        it->prefactor = it->prefactor + t.prefactor;
        if (it->prefactor.is_zero()) terms.erase(it);
    }

    void add(const NPGenerator& g, double s = 1.0) {
        for (const auto& t : g.terms) add({t.n, s * t.prefactor, t.tail});
    }

    [[nodiscard]] bool empty() const { return terms.empty(); }
    [[nodiscard]] int max_depth() const {
        std::size_t d = 0;
        for (const auto& t : terms) d = std::max(d, t.tail.size());
        return static_cast<int>(d);
    }
};

// L_{n,(0)}^{a,(b)} = L_n^{a (b - b(0))}: a k = 0 letter integrates to b - b(0).
inline NPTerm reduce_depth(NPTerm t) {
    if (t.tail.size() == 1 && t.tail.letters.back().k == 0) {
        const TimePoly b = t.tail.letters.back().adot.integral();
        t.prefactor = t.prefactor * b;
        t.tail.letters.pop_back();
    }
    return t;
}

namespace detail {

inline std::vector<double> term_phi(const NPTerm& t, const SampledPath& path) {
    std::vector<double> phi = evaluate_iterated(t.tail, path);
    for (std::size_t j = 0; j < phi.size(); ++j) phi[j] *= t.prefactor(path.t(static_cast<int>(j)));
    return phi;
}

inline std::vector<double> term_psi(const NPTerm& t, const SampledPath& path) {
    if (t.n < 0) return std::vector<double>(path.values.size(), 0.0);
    std::vector<double> psi = evaluate_iterated(t.tail.prepend({t.n, t.prefactor}), path);
    for (double& v : psi) v *= 2.0 * (t.n + 1);
    return psi;
}

}  // namespace detail

// delta-bar lambda on the grid.
inline std::vector<double> np_variation(const NPGenerator& g, const SampledPath& path) {
    std::vector<double> out(path.values.size(), 0.0);
    if (g.empty()) return out;
    const std::vector<double> dl = path.derivative();
    for (const auto& t : g.terms) {
        const auto phi = detail::term_phi(t, path);
        const auto psi = detail::term_psi(t, path);
        for (std::size_t j = 0; j < out.size(); ++j) {
            double p = 1.0;
            for (int e = 0; e < t.n + 1; ++e) p *= path.values[j];
            out[j] += p * phi[j] - dl[j] * psi[j];
        }
    }
    return out;
}

inline SampledPath apply_np_transform(const NPGenerator& g, const SampledPath& path, double eps) {
    std::vector<double> v = np_variation(g, path);
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = path.values[j] + eps * v[j];
    return path.with_values(std::move(v));
}

// Largest cell defect of 1/2 dPsi = (n+1) lambda^n Phi: the Chen increment of
// Psi against a Gauss-Legendre integral of the interpolated lead integrand
// times the tail continuation inside the cell.
inline double noise_condition_defect(const NPTerm& t, const SampledPath& path) {
    if (t.n < 0) return 0.0;
    const auto psi = detail::term_psi(t, path);
    const IIWord lead{{Letter{t.n, t.prefactor}}};
    const auto flead = detail::letter_samples(lead, path);
    const auto ftail = detail::letter_samples(t.tail, path);
    constexpr std::array<double, 6> x{-0.9324695142031521, -0.6612093864662645, -0.2386191860831969,
                                      0.2386191860831969,  0.6612093864662645,  0.9324695142031521};
    constexpr std::array<double, 6> w{0.1713244923791704, 0.3607615730481386, 0.4679139345726910,
                                      0.4679139345726910, 0.3607615730481386, 0.1713244923791704};
    const double h = path.dt;
    std::vector<double> s(t.tail.size() + 1, 0.0);
    s.back() = 1.0;
    double worst = 0.0;
    for (int j = 0; j < path.steps(); ++j) {
        const double a = flead[0][static_cast<std::size_t>(j)];
        const double b =
            path.quad == Quadrature::Linear ? (flead[0][static_cast<std::size_t>(j) + 1] - a) / h : 0.0;
        double integral = 0.0;
        for (std::size_t q = 0; q < x.size(); ++q) {
            const double u = 0.5 * h * (x[q] + 1.0);
            const double tail = detail::chen_step(ftail, path, j, s, u)[0];
            integral += 0.5 * h * w[q] * (a + b * u) * tail;
        }
        const double lhs = 0.5 * (psi[static_cast<std::size_t>(j) + 1] - psi[static_cast<std::size_t>(j)]);
        worst = std::max(worst, std::abs(lhs - (t.n + 1) * integral));
        s = detail::chen_step(ftail, path, j, s, h);
    }
    return worst;
}

// ([d1, d2] lambda) = D d2 [d1 lambda] - D d1 [d2 lambda]: mixed derivative of
// the two compositions by a 4-point stencil, optionally Richardson-extrapolated
// in eps.
inline std::vector<double> numeric_commutator(const NPGenerator& g1, const NPGenerator& g2, const SampledPath& path,
                                              double eps = 1e-2, bool richardson = true) {
    auto composed = [&](double e1, double e2) {
        const SampledPath a = apply_np_transform(g2, apply_np_transform(g1, path, e1), e2);
        const SampledPath b = apply_np_transform(g1, apply_np_transform(g2, path, e2), e1);
        std::vector<double> d(a.values.size());
        for (std::size_t j = 0; j < d.size(); ++j) d[j] = a.values[j] - b.values[j];
        return d;
    };
    auto stencil = [&](double e) {
        const auto pp = composed(e, e), pm = composed(e, -e), mp = composed(-e, e), mm = composed(-e, -e);
        std::vector<double> d(pp.size());
        for (std::size_t j = 0; j < d.size(); ++j) d[j] = (pp[j] - pm[j] - mp[j] + mm[j]) / (4.0 * e * e);
        return d;
    };
    if (!richardson) return stencil(eps);
    const auto coarse = stencil(eps), fine = stencil(0.5 * eps);
    std::vector<double> out(coarse.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = (4.0 * fine[j] - coarse[j]) / 3.0;
    return out;
}

// [L_{n1}^{a1'}, L_{n2}^{a2'}] = (n2-n1) L_{n1+n2}^{a1'a2'}
//   - 2 { (n2+1) L_{n1,(n2)}^{a1'',(a2)} - (n1+1) L_{n2,(n1)}^{a2'',(a1)} }
// with the k = 0 tails reduced.
inline NPGenerator elementary_bracket(int n1, const TimePoly& a1, int n2, const TimePoly& a2) {
    if (n1 < -1 || n2 < -1) throw std::invalid_argument("elementary_bracket: exponents must be >= -1");
    const TimePoly d1 = a1.derivative(), d2 = a2.derivative();
    NPGenerator g;
    if (n1 != n2) g.add({n1 + n2, static_cast<double>(n2 - n1) * (d1 * d2), {}});
    if (n2 + 1 != 0)
        g.add(reduce_depth({n1, -2.0 * (n2 + 1) * a1.derivative(2), IIWord{{Letter{n2, d2}}}}));
    if (n1 + 1 != 0)
        g.add(reduce_depth({n2, 2.0 * (n1 + 1) * a2.derivative(2), IIWord{{Letter{n1, d1}}}}));
    return g;
}

inline NPGenerator elementary_generator(int n, const TimePoly& a) { return NPGenerator::single(n, a.derivative()); }

// ---------------------------------------------------------------------------
// Force changes

class CoincidentParticles : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct ParticleHistory {
    double dt = 0.0;
    Eigen::MatrixXd lambda;  // (steps+1) x N
    Quadrature quad = Quadrature::LeftPoint;

    [[nodiscard]] int particles() const { return static_cast<int>(lambda.cols()); }
    [[nodiscard]] int steps() const { return static_cast<int>(lambda.rows()) - 1; }
    [[nodiscard]] SampledPath particle(int i) const {
        SampledPath p{dt, std::vector<double>(static_cast<std::size_t>(lambda.rows())), quad};
        for (Eigen::Index j = 0; j < lambda.rows(); ++j) p.values[static_cast<std::size_t>(j)] = lambda(j, i);
        return p;
    }
};

struct ForceChange {
    std::vector<double> simul, delay, single;
};

namespace detail {

inline double pw(double x, int e) {
    double p = 1.0;
    for (int i = 0; i < e; ++i) p *= x;
    return p;
}

inline void check_gaps(const std::vector<double>& x, double gap_min) {
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = i + 1; j < x.size(); ++j)
            if (std::abs(x[i] - x[j]) < gap_min) throw CoincidentParticles("force_change: coincident particles");
}

// sum_l b_l (n+l+1) lambda^{n+l}; terms with zero weight are skipped so that
// lambda^{-1} never appears.
inline double confining_part(int n, const Potential& pot, double x) {
    double acc = 0.0;
    for (auto [l, b] : pot.b) {
        const int w = n + l + 1;
        if (w == 0 || b == 0.0) continue;
        acc += b * w * pw(x, n + l);
    }
    return acc;
}

}  // namespace detail

// One particle, delta lambda = -a' lambda^{n+1}:
// lambda^{n+1} a'' + { sum_k b_k (n+1+k) lambda^{n+k} + (n+1) n lambda^{n-1} } a'.
inline double single_particle_force_change(int n, const TimePoly& a, const Potential& pot, double x, double t) {
    const double ad = a.derivative()(t), add = a.derivative(2)(t);
    double brace = detail::confining_part(n, pot, x);
    if (n >= 1) brace += (n + 1.0) * n * detail::pw(x, n - 1);
    return detail::pw(x, n + 1) * add + brace * ad;
}

inline std::vector<double> simultaneous_force_change(int n, const TimePoly& a, const Potential& pot,
                                                     const std::vector<double>& x, double t,
                                                     double gap_min = 1e-8) {
    if (n < -1) throw std::invalid_argument("force_change: n must be >= -1");
    detail::check_gaps(x, gap_min);
    const double ad = a.derivative()(t), add = a.derivative(2)(t);
    const double beta = pot.beta;
    std::vector<double> pi(static_cast<std::size_t>(std::max(n, 1)), 0.0);
    for (int m = 0; m < n; ++m)
        for (double v : x) pi[static_cast<std::size_t>(m)] += detail::pw(v, m);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        double brace = detail::confining_part(n, pot, xi);
        for (int q = 0; q <= n - 1; ++q) brace += beta * (q + 1.0) * detail::pw(xi, q) * pi[static_cast<std::size_t>(n - 1 - q)];
        if (n >= 1) brace -= (0.5 * beta - 1.0) * (n + 1.0) * n * detail::pw(xi, n - 1);
        out[i] = detail::pw(xi, n + 1) * add + brace * ad;
    }
    return out;
}

// -beta sum_{j != i} dW/dlambda_j (dt_j - dt_i) / (lambda_i - lambda_j)^2 at
// grid index j, with dt_i = 2(n+1) int_0^t a' lambda_i^n and
// dW/dlambda_j = V'(lambda_j) - beta sum_{k != j} 1/(lambda_j - lambda_k).
inline std::vector<double> delayed_force_change(int n, const TimePoly& a, const Potential& pot,
                                                const ParticleHistory& hist, int j, double gap_min = 1e-8) {
    const int np = hist.particles();
    if (j < 0 || j > hist.steps()) throw std::out_of_range("delayed_force_change: time index");
    std::vector<double> x(static_cast<std::size_t>(np));
    for (int i = 0; i < np; ++i) x[static_cast<std::size_t>(i)] = hist.lambda(j, i);
    detail::check_gaps(x, gap_min);
    std::vector<double> shift(static_cast<std::size_t>(np), 0.0);
    if (n >= 0) {
        const IIWord w{{Letter{n, a.derivative()}}};
        for (int i = 0; i < np; ++i)
            shift[static_cast<std::size_t>(i)] = 2.0 * (n + 1) * evaluate_iterated(w, hist.particle(i))[static_cast<std::size_t>(j)];
    }
    const double beta = pot.beta;
    std::vector<double> dw(static_cast<std::size_t>(np));
    for (int k = 0; k < np; ++k) {
        double r = 0.0;
        for (int l = 0; l < np; ++l)
            if (l != k) r += 1.0 / (x[static_cast<std::size_t>(k)] - x[static_cast<std::size_t>(l)]);
        dw[static_cast<std::size_t>(k)] = pot.force(x[static_cast<std::size_t>(k)]) - beta * r;
    }
    std::vector<double> out(static_cast<std::size_t>(np), 0.0);
    for (int i = 0; i < np; ++i) {
        double acc = 0.0;
        for (int k = 0; k < np; ++k) {
            if (k == i) continue;
            const double ds = shift[static_cast<std::size_t>(k)] - shift[static_cast<std::size_t>(i)];
            if (ds == 0.0) continue;
            const double g = x[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(k)];
            acc += dw[static_cast<std::size_t>(k)] * ds / (g * g);
        }
        out[static_cast<std::size_t>(i)] = -beta * acc;
    }
    return out;
}

inline ForceChange force_change(int n, const TimePoly& a, const Potential& pot, const ParticleHistory& hist, int j,
                                double gap_min = 1e-8) {
    std::vector<double> x(static_cast<std::size_t>(hist.particles()));
    for (int i = 0; i < hist.particles(); ++i) x[static_cast<std::size_t>(i)] = hist.lambda(j, i);
    const double t = hist.dt * j;
    ForceChange fc;
    fc.simul = simultaneous_force_change(n, a, pot, x, t, gap_min);
    fc.delay = delayed_force_change(n, a, pot, hist, j, gap_min);
    fc.single.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) fc.single[i] = single_particle_force_change(n, a, pot, x[i], t);
    return fc;
}

// ---------------------------------------------------------------------------
// Schrodinger-Virasoro fields

// X_x + Y_y with X_f = -f d/dt - 1/2 f' lambda d/dlambda and Y_g = -g d/dlambda.
struct SvField {
    TimePoly x, y;

    static SvField X(TimePoly f) { return {std::move(f), {}}; }
    static SvField Y(TimePoly g) { return {{}, std::move(g)}; }
    friend bool operator==(const SvField& a, const SvField& b) { return a.x == b.x && a.y == b.y; }
};

// [X_f,X_g] = X_{f'g - fg'}, [Y_f,X_g] = Y_{f'g - fg'/2}, [Y_f,Y_g] = 0.
inline SvField sv_bracket(const SvField& u, const SvField& v) {
    SvField out;
    out.x = u.x.derivative() * v.x - u.x * v.x.derivative();
    out.y = (u.y.derivative() * v.x - 0.5 * (u.y * v.x.derivative())) -
            (v.y.derivative() * u.x - 0.5 * (v.y * u.x.derivative()));
    return out;
}

class NonMonotoneReparametrization : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// (t, x) -> (phi(t), sqrt(phi'(t)) x), resampled on the original grid by
// linear interpolation; the result stops at the last grid point <= phi(T).
inline SampledPath time_reparametrize(const SampledPath& path, const TimePoly& phi) {
    path.check();
    if (std::abs(phi(0.0)) > 1e-14) throw NonMonotoneReparametrization("time_reparametrize: phi(0) must vanish");
    const TimePoly dphi = phi.derivative();
    const int m = path.steps();
    std::vector<double> s(static_cast<std::size_t>(m) + 1), y(s.size());
    for (int j = 0; j <= m; ++j) {
        const double d = dphi(path.t(j));
        if (!(d > 0.0)) throw NonMonotoneReparametrization("time_reparametrize: phi must be increasing");
        s[static_cast<std::size_t>(j)] = phi(path.t(j));
        y[static_cast<std::size_t>(j)] = std::sqrt(d) * path.values[static_cast<std::size_t>(j)];
        if (j > 0 && !(s[static_cast<std::size_t>(j)] > s[static_cast<std::size_t>(j) - 1]))
            throw NonMonotoneReparametrization("time_reparametrize: phi must be increasing");
    }
    const int last = static_cast<int>(std::floor(s.back() / path.dt * (1.0 + 1e-12)));
    std::vector<double> out(static_cast<std::size_t>(last) + 1);
    std::size_t seg = 0;
    for (int k = 0; k <= last; ++k) {
        const double tk = path.dt * k;
        while (seg + 2 < s.size() && s[seg + 1] < tk) ++seg;
        const double w = std::clamp((tk - s[seg]) / (s[seg + 1] - s[seg]), 0.0, 1.0);
        out[static_cast<std::size_t>(k)] = (1.0 - w) * y[seg] + w * y[seg + 1];
    }
    if (out.size() < 3) throw std::invalid_argument("time_reparametrize: image too short");
    return path.with_values(std::move(out));
}

// x -> x + int_0^t b.
inline SampledPath space_shift(const SampledPath& path, const TimePoly& b) {
    const TimePoly shift = b.integral();
    std::vector<double> v(path.values);
    for (std::size_t j = 0; j < v.size(); ++j) v[j] += shift(path.t(static_cast<int>(j)));
    return path.with_values(std::move(v));
}

// T(t) = int_0^t |J|^alpha for the affine map x -> sqrt(phi') x, trapezoid rule.
inline std::vector<double> proper_time(const TimePoly& phi, double dt, int steps, double alpha = 2.0) {
    const TimePoly dphi = phi.derivative();
    std::vector<double> out(static_cast<std::size_t>(steps) + 1, 0.0);
    auto jac = [&](double t) { return std::pow(std::abs(std::sqrt(std::max(dphi(t), 0.0))), alpha); };
    for (int j = 0; j < steps; ++j)
        out[static_cast<std::size_t>(j) + 1] = out[static_cast<std::size_t>(j)] + 0.5 * dt * (jac(dt * j) + jac(dt * (j + 1)));
    return out;
}

// ---------------------------------------------------------------------------
// JSON trees

inline nlohmann::json to_json(const TimePoly& p) { return p.coeffs(); }
inline TimePoly time_poly_from_json(const nlohmann::json& j) { return TimePoly(j.get<std::vector<double>>()); }

inline nlohmann::json to_json(const IIWord& w) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : w.letters) arr.push_back({{"k", l.k}, {"adot", to_json(l.adot)}});
    return arr;
}

inline IIWord word_from_json(const nlohmann::json& j) {
    IIWord w;
    for (const auto& l : j) w.letters.push_back({l.at("k").get<int>(), time_poly_from_json(l.at("adot"))});
    return w;
}

inline nlohmann::json to_json(const NPGenerator& g) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : g.terms) arr.push_back({{"n", t.n}, {"prefactor", to_json(t.prefactor)}, {"tail", to_json(t.tail)}});
    return arr;
}

inline NPGenerator generator_from_json(const nlohmann::json& j) {
    NPGenerator g;
    for (const auto& t : j)
        g.add({t.at("n").get<int>(), time_poly_from_json(t.at("prefactor")), word_from_json(t.at("tail"))});
    return g;
}

}  // namespace dbmsv
