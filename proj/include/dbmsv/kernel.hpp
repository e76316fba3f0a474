#pragma once
// Mode-space propagator of the linearized moment dynamics and its identities.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbmsv/fseries.hpp"

namespace dbmsv {

using Matrix = Eigen::MatrixXd;
using CMatrix = Eigen::MatrixXcd;

// Inverse temperature and force coefficients of V0'(x) = sum_l b_l x^l.
struct Potential {
    double beta = 2.0;
    std::map<int, double> b;

    [[nodiscard]] int max_index() const { return b.empty() ? 0 : b.rbegin()->first; }

    [[nodiscard]] double coeff(int l) const {
        auto it = b.find(l);
        return it == b.end() ? 0.0 : it->second;
    }

    static Potential hermite(double sigma, double beta) { return {beta, {{1, 1.0 / (sigma * sigma)}}}; }

    [[nodiscard]] bool is_hermite() const { return b.size() == 1 && b.begin()->first == 1; }

    [[nodiscard]] double force(double x) const {
        double acc = 0.0;
        for (auto [l, c] : b) acc += c * std::pow(x, l);
        return acc;
    }

    // b(z) as an exact polynomial series.
    [[nodiscard]] TruncSeries series() const {
        TruncSeries s(0, std::max(1, max_index()));
        for (auto [l, c] : b) s.at(l) = c;
        return s;
    }
};

class CutoffTooSmall : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct KernelMatrix {
    double t = 0.0;
    int k_max = 0;
    Matrix entries;

    [[nodiscard]] double operator()(int k, int l) const { return entries(k, l); }
};

struct PropagatorModes {
    double t = 0.0;
    int k_max = 0;
    bool retarded = true;
    Matrix entries;

    [[nodiscard]] double operator()(int k, int l) const { return entries(k, l); }
    // Advanced counterpart by the transpose convention.
    [[nodiscard]] Matrix advanced() const { return entries.transpose(); }
};

[[nodiscard]] inline Matrix generator_matrix(const Potential& pot, int k_max) {
    if (pot.max_index() > k_max)
        throw CutoffTooSmall("mode cutoff " + std::to_string(k_max) + " below force support " +
                             std::to_string(pot.max_index()));
    const int n = k_max + 1;
    Matrix a = Matrix::Zero(n, n);
    const double diffusion = pot.beta / 2.0 - 1.0;
    for (int k = 1; k <= k_max; ++k) {
        if (k >= 2) a(k, k - 2) = -diffusion * k * (k - 1);
        for (auto [l, bl] : pot.b) {
            if (l < 1) continue;
            const int col = l + k - 1;
            if (col <= k_max) a(k, col) += -k * bl;
        }
    }
    return a;
}

// exp(M) by scaling and squaring of the Taylor series.
template <class Mat>
[[nodiscard]] Mat expm(const Mat& m, double tol = 1e-13) {
    const double norm = m.cwiseAbs().rowwise().sum().maxCoeff();
    int squarings = 0;
    if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    const Mat x = m / std::ldexp(1.0, squarings);
    const auto n = m.rows();
    Mat sum = Mat::Identity(n, n);
    Mat term = Mat::Identity(n, n);
    // Terms shrink geometrically with ratio < 0.5/j, so the tail is below the last term.
    for (int j = 1; j < 60; ++j) {
        term = term * x / static_cast<double>(j);
        sum += term;
        if (term.cwiseAbs().maxCoeff() < tol * 1e-4) break;
    }
    for (int s = 0; s < squarings; ++s) sum = sum * sum;
    return sum;
}

[[nodiscard]] inline KernelMatrix propagator_from_generator(const Matrix& gen, double t) {
    if (t < 0) throw std::invalid_argument("propagator: negative time");
    return {t, static_cast<int>(gen.rows()) - 1, expm(Matrix(t * gen))};
}

[[nodiscard]] inline KernelMatrix propagator(const Potential& pot, double t, int k_max) {
    return propagator_from_generator(generator_matrix(pot, k_max), t);
}

// Same exponential at complex time; used for complex-step time derivatives.
[[nodiscard]] inline CMatrix propagator_complex(const Matrix& gen, std::complex<double> t) {
    return expm(CMatrix(t * gen.cast<std::complex<double>>()));
}

// ---------------------------------------------------------------------------
// beta = 2: characteristics of w' = -b(w)

namespace detail {

// Truncated power series in w (degrees 0..order), plain dense storage.
inline std::vector<double> pmul(const std::vector<double>& a, const std::vector<double>& b, int order) {
    std::vector<double> r(static_cast<std::size_t>(order + 1), 0.0);
    for (int i = 0; i <= order; ++i) {
        if (a[i] == 0.0) continue;
        for (int j = 0; i + j <= order; ++j) r[i + j] += a[i] * b[j];
    }
    return r;
}

inline std::vector<double> flow_rhs(const std::map<int, double>& b, const std::vector<double>& w, int order) {
    std::vector<double> out(static_cast<std::size_t>(order + 1), 0.0);
    std::vector<double> power(static_cast<std::size_t>(order + 1), 0.0);
    power[0] = 1.0;
    int cur = 0;
    for (auto [l, bl] : b) {
        while (cur < l) {
            power = pmul(power, w, order);
            ++cur;
        }
        for (int i = 0; i <= order; ++i) out[i] -= bl * power[i];
    }
    return out;
}

}  // namespace detail

// w(t) as a power series in the initial value w, coefficients at time t.
[[nodiscard]] inline TruncSeries characteristics_flow(const std::map<int, double>& b, int w_order, double t,
                                                      double max_step = 1e-3) {
    if (w_order < 1) throw std::invalid_argument("characteristics_flow: order must be >= 1");
    std::vector<double> w(static_cast<std::size_t>(w_order + 1), 0.0);
    w[1] = 1.0;
    const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(t) / max_step)));
    const double h = t / steps;
    auto axpy = [](const std::vector<double>& x, double a, const std::vector<double>& y) {
        std::vector<double> r = x;
        for (std::size_t i = 0; i < r.size(); ++i) r[i] += a * y[i];
        return r;
    };
    for (int s = 0; s < steps; ++s) {
        auto k1 = detail::flow_rhs(b, w, w_order);
        auto k2 = detail::flow_rhs(b, axpy(w, h / 2, k1), w_order);
        auto k3 = detail::flow_rhs(b, axpy(w, h / 2, k2), w_order);
        auto k4 = detail::flow_rhs(b, axpy(w, h, k3), w_order);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    }
    return TruncSeries(0, w, Closure{true, false});
}

// K_kl(t) = coefficient of w^l in w(t)^k.
[[nodiscard]] inline KernelMatrix kernel_beta2_closed(const std::map<int, double>& b, double t, int k_max) {
    const TruncSeries wt = characteristics_flow(b, k_max, t);
    std::vector<double> w(wt.coeffs().begin(), wt.coeffs().end());
    KernelMatrix km{t, k_max, Matrix::Zero(k_max + 1, k_max + 1)};
    std::vector<double> power(static_cast<std::size_t>(k_max + 1), 0.0);
    power[0] = 1.0;
    for (int k = 0; k <= k_max; ++k) {
        if (k > 0) power = detail::pmul(power, w, k_max);
        for (int l = 0; l <= k_max; ++l) km.entries(k, l) = power[l];
    }
    return km;
}

// ---------------------------------------------------------------------------
// Hermite potential b = {1: 1/sigma^2}, any beta.
//
// With rho(x,t) = sum_k pi_k(t) x^k / k!, the linear dynamics reads
//   d rho/dt = -(beta/2 - 1) x^2 rho - sigma^-2 x d rho/dx,
// solved by rho(x,t) = exp(q(t) x^2) rho(e^{-t/sigma^2} x, 0) where
//   q' = -(beta/2 - 1) - 2 q / sigma^2,  q(0) = 0.

[[nodiscard]] inline double hermite_gaussian_rate(double sigma, double beta, double t) {
    const double s2 = sigma * sigma;
    return -(beta / 2.0 - 1.0) * (s2 / 2.0) * (1.0 - std::exp(-2.0 * t / s2));
}

// The closed form with the rate printed in the source derivation,
// -sigma^2/2 (1 - e^{-(beta-2) t / sigma^2}); kept only for reporting.
[[nodiscard]] inline double hermite_printed_rate(double sigma, double beta, double t) {
    const double s2 = sigma * sigma;
    return -(s2 / 2.0) * (1.0 - std::exp(-(beta - 2.0) * t / s2));
}

// Coefficient of pi_{k-2m}(0) in pi_k(t): k!/(m!(k-2m)!) q^m e^{-(k-2m)t/sigma^2}.
[[nodiscard]] inline double hermite_coefficient(int k, int m, double sigma, double beta, double t) {
    if (2 * m > k || m < 0) return 0.0;
    const double q = hermite_gaussian_rate(sigma, beta, t);
    const double log_comb = std::lgamma(k + 1.0) - std::lgamma(m + 1.0) - std::lgamma(k - 2.0 * m + 1.0);
    double qm = (m == 0) ? 1.0 : std::pow(q, m);
    return std::exp(log_comb) * qm * std::exp(-(k - 2.0 * m) * t / (sigma * sigma));
}

[[nodiscard]] inline KernelMatrix hermite_kernel(double sigma, double beta, double t, int k_max) {
    KernelMatrix km{t, k_max, Matrix::Zero(k_max + 1, k_max + 1)};
    for (int k = 0; k <= k_max; ++k)
        for (int m = 0; 2 * m <= k; ++m) km.entries(k, k - 2 * m) = hermite_coefficient(k, m, sigma, beta, t);
    return km;
}

// exp(s d^2/dz^2) on a series supported at negative degrees.
[[nodiscard]] inline TruncSeries heat_action(const TruncSeries& pi0, double s, double tol = 1e-15) {
    for (int d = std::max(pi0.lo_deg(), 0); d <= pi0.hi_deg(); ++d)
        if (pi0[d] != 0.0) throw std::invalid_argument("heat_action: input has nonnegative powers");
    // Each application lowers degrees by 2; the result keeps the input window.
    TruncSeries out = pi0;
    TruncSeries term = pi0;
    for (int m = 1; m < 200; ++m) {
        term = differentiate(differentiate(term));
        term *= s / m;
        TruncSeries clipped(pi0.lo_deg(), pi0.hi_deg(), Closure{false, true});
        double mx = 0.0;
        for (int d = pi0.lo_deg(); d <= pi0.hi_deg(); ++d) {
            if (d >= term.lo_deg() && d <= term.hi_deg()) clipped.at(d) = term[d];
            mx = std::max(mx, std::abs(clipped[d]));
        }
        for (int d = pi0.lo_deg(); d <= pi0.hi_deg(); ++d) out.at(d) += clipped[d];
        term = clipped;
        if (mx < tol) break;
    }
    return TruncSeries(out.lo_deg(), {out.coeffs().begin(), out.coeffs().end()}, Closure{false, true});
}

[[nodiscard]] inline PropagatorModes retarded_from_kernel(const KernelMatrix& k) {
    PropagatorModes g{k.t, k.k_max, true, k.entries};
    for (int l = 0; l <= k.k_max; ++l) g.entries.col(l) *= static_cast<double>(l);
    return g;
}

[[nodiscard]] inline PropagatorModes retarded_propagator_modes(const Potential& pot, double t, int k_max) {
    return retarded_from_kernel(propagator(pot, t, k_max));
}

// ---------------------------------------------------------------------------
// Identities

// How the t'-derivative in the lemma check is taken.  The complex step has no
// cancellation error; central differences with one Richardson step lose about
// eps * |K| / step.
enum class TimeDerivative { ComplexStep, CentralRichardson };

struct KernelResiduals {
    double semigroup = 0.0;
    double forward = 0.0;
    double backward = 0.0;
    // Lemma residuals for weights u = 1 and u = z, with the diffusion
    // commutator included; the no_diffusion variants drop it (exact at beta = 2).
    double lemma_unit = 0.0;
    double lemma_linear = 0.0;
    double lemma_unit_no_diffusion = 0.0;
    double lemma_linear_no_diffusion = 0.0;
    double lemma_scale = 0.0;
    double scale = 1.0;           // max |K| entry seen
    double generator_scale = 0.0; // max |A K| entry

    // Residuals divided by max(1, magnitude of the compared entries).
    [[nodiscard]] double semigroup_rel() const { return semigroup / std::max(1.0, scale); }
    [[nodiscard]] double forward_rel() const { return forward / std::max(1.0, generator_scale); }
    [[nodiscard]] double backward_rel() const { return backward / std::max(1.0, generator_scale); }
    [[nodiscard]] double lemma_unit_rel() const { return lemma_unit / std::max(1.0, lemma_scale); }
    [[nodiscard]] double lemma_linear_rel() const { return lemma_linear / std::max(1.0, lemma_scale); }
};

// M_u[k][m] = sum_l sum_j u_j l K_{kl}(t-t') K_{l+j-1,m}(t'-s): the mode form of
// res_w (1/w) u(w) d_w K_{t-t'}(z^-1,w) K_{t'-s}(w^-1,zeta).
template <class Mat>
[[nodiscard]] Mat lemma_pairing(const Mat& k_left, const Mat& k_right, const TruncSeries& u, int k_out) {
    using S = typename Mat::Scalar;
    const int ke = static_cast<int>(k_left.rows()) - 1;
    Mat out = Mat::Zero(k_out + 1, k_out + 1);
    for (int j = u.lo_deg(); j <= u.hi_deg(); ++j) {
        const double uj = u[j];
        if (uj == 0.0) continue;
        for (int l = 1; l <= ke; ++l) {
            const int lp = l + j - 1;
            if (lp < 0 || lp > ke) continue;
            for (int k = 0; k <= k_out; ++k) {
                const S left = k_left(k, l) * static_cast<double>(l) * uj;
                if (left == S(0)) continue;
                for (int m = 0; m <= k_out; ++m) out(k, m) += left * k_right(lp, m);
            }
        }
    }
    return out;
}

// D_u[l][l+j-1] = l u_j: mode matrix of the derivation u(w) d_w.
[[nodiscard]] inline Matrix weight_derivation_matrix(const TruncSeries& u, int ke) {
    Matrix d = Matrix::Zero(ke + 1, ke + 1);
    for (int j = u.lo_deg(); j <= u.hi_deg(); ++j)
        for (int l = 1; l <= ke; ++l) {
            const int lp = l + j - 1;
            if (lp >= 0 && lp <= ke) d(l, lp) += l * u[j];
        }
    return d;
}

// (u b' - u' b)(w)
[[nodiscard]] inline TruncSeries lemma_weight(const Potential& pot, const TruncSeries& u) {
    const TruncSeries b = pot.series();
    return mul(u, differentiate(b)) - mul(differentiate(u), b);
}

[[nodiscard]] inline KernelResiduals verify_kernel_identities(const Potential& pot, double t, double tp,
                                                              double tpp, int k_max,
                                                              TimeDerivative scheme = TimeDerivative::ComplexStep,
                                                              double fd_step = 1e-5, int lemma_margin = 20) {
    if (!(t > tp && tp > tpp && tpp > 0)) throw std::invalid_argument("times must satisfy t > t' > t'' > 0");
    KernelResiduals r;
    const Matrix gen = generator_matrix(pot, k_max);
    const Matrix k1 = propagator_from_generator(gen, t - tp).entries;
    const Matrix k2 = propagator_from_generator(gen, tp - tpp).entries;
    const Matrix k12 = propagator_from_generator(gen, t - tpp).entries;
    r.semigroup = (k1 * k2 - k12).cwiseAbs().maxCoeff();
    r.scale = std::max({k1.cwiseAbs().maxCoeff(), k2.cwiseAbs().maxCoeff(), k12.cwiseAbs().maxCoeff()});

    // Time derivative by complex step: Im K(t + i h) / h.
    const double h = 1e-30;
    const Matrix dk = propagator_complex(gen, {t, h}).imag() / h;
    const Matrix kt = propagator_from_generator(gen, t).entries;
    r.forward = (dk - gen * kt).cwiseAbs().maxCoeff();
    r.backward = (dk - kt * gen).cwiseAbs().maxCoeff();
    r.generator_scale = (gen * kt).cwiseAbs().maxCoeff();

    // Lemma: intermediate sums run over a wider cutoff so that truncation of the
    // inner index does not reach the reported block.
    const int ke = k_max + lemma_margin * std::max(1, pot.max_index());
    const Matrix gen_e = generator_matrix(pot, ke);
    const Matrix diffusion_e = generator_matrix(Potential{pot.beta, {}}, ke);
    const double s = tpp;
    auto pairing = [&](double tprime, const TruncSeries& u) {
        const Matrix kl = propagator_from_generator(gen_e, t - tprime).entries;
        const Matrix kr = propagator_from_generator(gen_e, tprime - s).entries;
        return lemma_pairing(kl, kr, u, k_max);
    };
    auto deriv_fd = [&](const TruncSeries& u, double step) {
        return Matrix((pairing(tp + step, u) - pairing(tp - step, u)) / (2 * step));
    };
    auto deriv = [&](const TruncSeries& u) -> Matrix {
        if (scheme == TimeDerivative::CentralRichardson)
            return (4 * deriv_fd(u, fd_step / 2) - deriv_fd(u, fd_step)) / 3;
        const std::complex<double> ih{0.0, h};
        const CMatrix kl = propagator_complex(gen_e, t - tp - ih);
        const CMatrix kr = propagator_complex(gen_e, tp + ih - s);
        return lemma_pairing(kl, kr, u, k_max).imag() / h;
    };
    for (int which = 0; which < 2; ++which) {
        const TruncSeries u = which == 0 ? TruncSeries::monomial(0) : TruncSeries::monomial(1);
        const Matrix rich = deriv(u);
        const Matrix rhs = pairing(tp, lemma_weight(pot, u));
        // Diffusion contribution K [D_u, A_diff] K, with D_u the mode matrix of u(w) d_w.
        const Matrix du = weight_derivation_matrix(u, ke);
        const Matrix comm = du * diffusion_e - diffusion_e * du;
        const Matrix kl = propagator_from_generator(gen_e, t - tp).entries;
        const Matrix kr = propagator_from_generator(gen_e, tp - s).entries;
        const Matrix extra = (kl * comm * kr).topLeftCorner(k_max + 1, k_max + 1);
        const double bare = (rich - rhs).cwiseAbs().maxCoeff();
        const double full = (rich - rhs - extra).cwiseAbs().maxCoeff();
        if (which == 0) {
            r.lemma_unit_no_diffusion = bare;
            r.lemma_unit = full;
        } else {
            r.lemma_linear_no_diffusion = bare;
            r.lemma_linear = full;
        }
        r.lemma_scale = std::max(r.lemma_scale, rhs.cwiseAbs().maxCoeff());
    }
    return r;
}

inline void write_kernel_csv(std::ostream& os, const KernelMatrix& k, bool header = true) {
    if (header) os << "k,l,t,value\n";
    os.precision(17);
    for (int i = 0; i <= k.k_max; ++i)
        for (int j = 0; j <= k.k_max; ++j) os << i << ',' << j << ',' << k.t << ',' << k.entries(i, j) << '\n';
}

}  // namespace dbmsv
