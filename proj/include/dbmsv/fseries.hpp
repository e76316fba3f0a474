#pragma once
// Truncated formal Laurent series in z with reliable-window bookkeeping.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dbmsv {

struct DegreeRange {
    int lo;
    int hi;
    [[nodiscard]] bool contains(int d) const noexcept { return d >= lo && d <= hi; }
    [[nodiscard]] int size() const noexcept { return hi - lo + 1; }
};

class WindowOverflow : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Whether the series is known to vanish below lo / above hi.  An open side
// means coefficients beyond it were dropped by truncation.
struct Closure {
    bool below = true;
    bool above = true;
};

inline constexpr int kDefaultModeCutoff = 12;

[[nodiscard]] inline DegreeRange default_window(int mode_cutoff = kDefaultModeCutoff) {
    return {-(mode_cutoff + 2), mode_cutoff + 2};
}

class TruncSeries {
public:
    TruncSeries() : TruncSeries(0, 0) {}

    TruncSeries(int lo, int hi, Closure cl = {})
        : lo_(lo), hi_(hi), cl_(cl), c_(check_size(lo, hi), 0.0) {}

    TruncSeries(int lo, std::vector<double> coeffs, Closure cl = {})
        : lo_(lo), hi_(lo + static_cast<int>(coeffs.size()) - 1), cl_(cl), c_(std::move(coeffs)) {
        if (c_.empty()) throw std::invalid_argument("TruncSeries: empty coefficient array");
    }

    static TruncSeries monomial(int deg, double coeff = 1.0) {
        TruncSeries s(deg, deg);
        s.c_[0] = coeff;
        return s;
    }

    [[nodiscard]] int lo_deg() const noexcept { return lo_; }
    [[nodiscard]] int hi_deg() const noexcept { return hi_; }
    [[nodiscard]] DegreeRange window() const noexcept { return {lo_, hi_}; }
    [[nodiscard]] Closure closure() const noexcept { return cl_; }
    [[nodiscard]] std::span<const double> coeffs() const noexcept { return c_; }

    // Coefficient of z^d.  Inside the window it is the stored value; outside
    // it is zero on a closed side and an error on an open side.
    [[nodiscard]] double operator[](int d) const {
        if (d >= lo_ && d <= hi_) return c_[static_cast<std::size_t>(d - lo_)];
        if ((d < lo_ && cl_.below) || (d > hi_ && cl_.above)) return 0.0;
        throw WindowOverflow("coefficient of z^" + std::to_string(d) + " was truncated");
    }

    double& at(int d) {
        if (d < lo_ || d > hi_) throw std::out_of_range("degree outside window");
        return c_[static_cast<std::size_t>(d - lo_)];
    }

    [[nodiscard]] bool known_zero(int d) const noexcept {
        if (d >= lo_ && d <= hi_) return c_[static_cast<std::size_t>(d - lo_)] == 0.0;
        return (d < lo_ && cl_.below) || (d > hi_ && cl_.above);
    }

    // Same series viewed on another window; fails if that needs dropped data.
    [[nodiscard]] TruncSeries restrict_to(DegreeRange w) const {
        Closure cl{w.lo <= lo_ ? cl_.below : false, w.hi >= hi_ ? cl_.above : false};
        TruncSeries r(w.lo, w.hi, cl);
        for (int d = w.lo; d <= w.hi; ++d) r.c_[static_cast<std::size_t>(d - w.lo)] = (*this)[d];
        return r;
    }

    TruncSeries& operator*=(double s) {
        for (auto& x : c_) x *= s;
        return *this;
    }

    friend TruncSeries operator*(double s, TruncSeries a) { return a *= s; }

    friend TruncSeries operator+(const TruncSeries& a, const TruncSeries& b) { return combine(a, b, 1.0); }
    friend TruncSeries operator-(const TruncSeries& a, const TruncSeries& b) { return combine(a, b, -1.0); }

private:
    static std::size_t check_size(int lo, int hi) {
        if (hi < lo) throw std::invalid_argument("TruncSeries: hi_deg < lo_deg");
        return static_cast<std::size_t>(hi - lo + 1);
    }

    static TruncSeries combine(const TruncSeries& a, const TruncSeries& b, double sb) {
        // The sum is known where both are known.
        int lo = std::min(a.lo_, b.lo_);
        int hi = std::max(a.hi_, b.hi_);
        if (!a.cl_.below) lo = std::max(lo, a.lo_);
        if (!b.cl_.below) lo = std::max(lo, b.lo_);
        if (!a.cl_.above) hi = std::min(hi, a.hi_);
        if (!b.cl_.above) hi = std::min(hi, b.hi_);
        if (hi < lo) throw WindowOverflow("sum of series has an empty reliable window");
        Closure cl{a.cl_.below && b.cl_.below, a.cl_.above && b.cl_.above};
        TruncSeries r(lo, hi, cl);
        for (int d = lo; d <= hi; ++d) r.c_[static_cast<std::size_t>(d - lo)] = a[d] + sb * b[d];
        return r;
    }

    int lo_;
    int hi_;
    Closure cl_;
    std::vector<double> c_;
};

// Degrees n for which every term a_i b_{n-i} is determined.
[[nodiscard]] inline DegreeRange reliable_product_window(const TruncSeries& a, const TruncSeries& b) {
    constexpr int big = 1 << 28;
    int lo = -big, hi = big;
    auto side = [&](const TruncSeries& x, const TruncSeries& y) {
        // x open below: i < x.lo unknown, needs y_{n-i} zero for n-i >= n-x.lo+1.
        if (!x.closure().below) {
            if (!y.closure().above) hi = -big - 1;
            else lo = std::max(lo, x.lo_deg() + y.hi_deg());
        }
        // x open above: i > x.hi unknown, needs y_{n-i} zero for n-i <= n-x.hi-1.
        if (!x.closure().above) {
            if (!y.closure().below) hi = -big - 1;
            else hi = std::min(hi, x.hi_deg() + y.lo_deg());
        }
    };
    side(a, b);
    side(b, a);
    return {lo, hi};
}

[[nodiscard]] inline TruncSeries mul(const TruncSeries& a, const TruncSeries& b, DegreeRange window) {
    const DegreeRange ok = reliable_product_window(a, b);
    if (window.hi < window.lo) throw std::invalid_argument("mul: empty window");
    if (window.lo < ok.lo || window.hi > ok.hi)
        throw WindowOverflow("mul: requested degrees [" + std::to_string(window.lo) + "," +
                             std::to_string(window.hi) + "] depend on truncated coefficients");
    const int nat_lo = a.lo_deg() + b.lo_deg();
    const int nat_hi = a.hi_deg() + b.hi_deg();
    Closure cl{a.closure().below && b.closure().below && window.lo <= nat_lo,
               a.closure().above && b.closure().above && window.hi >= nat_hi};
    TruncSeries r(window.lo, window.hi, cl);
    for (int n = window.lo; n <= window.hi; ++n) {
        const int i0 = std::max(a.lo_deg(), n - b.hi_deg());
        const int i1 = std::min(a.hi_deg(), n - b.lo_deg());
        double acc = 0.0;
        for (int i = i0; i <= i1; ++i) acc += a[i] * b[n - i];
        r.at(n) = acc;
    }
    return r;
}

// Product on the full reliable window clipped to the natural support.
[[nodiscard]] inline TruncSeries mul(const TruncSeries& a, const TruncSeries& b) {
    DegreeRange ok = reliable_product_window(a, b);
    DegreeRange w{std::max(ok.lo, a.lo_deg() + b.lo_deg()), std::min(ok.hi, a.hi_deg() + b.hi_deg())};
    return mul(a, b, w);
}

[[nodiscard]] inline TruncSeries differentiate(const TruncSeries& a) {
    TruncSeries r(a.lo_deg() - 1, a.hi_deg() - 1, a.closure());
    for (int n = a.lo_deg(); n <= a.hi_deg(); ++n) r.at(n - 1) = n * a[n];
    return r;
}

struct SplitSeries {
    TruncSeries plus;
    TruncSeries minus;
};

[[nodiscard]] inline SplitSeries split(const TruncSeries& a) {
    SplitSeries s{a, a};
    for (int n = a.lo_deg(); n <= a.hi_deg(); ++n) {
        if (n >= 0) s.minus.at(n) = 0.0;
        else s.plus.at(n) = 0.0;
    }
    // The nonnegative part vanishes at every negative degree, the negative part
    // at every nonnegative one, whatever the truncation of a.
    s.plus = TruncSeries(a.lo_deg(), {s.plus.coeffs().begin(), s.plus.coeffs().end()},
                         Closure{true, a.closure().above});
    s.minus = TruncSeries(a.lo_deg(), {s.minus.coeffs().begin(), s.minus.coeffs().end()},
                          Closure{a.closure().below, true});
    return s;
}

[[nodiscard]] inline double residue_pair(const TruncSeries& u, const TruncSeries& v) {
    return mul(u, v, DegreeRange{-1, -1})[-1];
}

// Finite polynomial sum_{d} c_d z^d from (degree, coefficient) pairs.
[[nodiscard]] inline TruncSeries from_terms(std::span<const std::pair<int, double>> terms) {
    if (terms.empty()) return TruncSeries(0, 0);
    int lo = terms.front().first, hi = lo;
    for (auto [d, c] : terms) {
        lo = std::min(lo, d);
        hi = std::max(hi, d);
    }
    TruncSeries s(lo, hi);
    for (auto [d, c] : terms) s.at(d) += c;
    return s;
}

}  // namespace dbmsv
