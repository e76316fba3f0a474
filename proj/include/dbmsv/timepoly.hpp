#pragma once
// Polynomials in time with exact derivatives and products.

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace dbmsv {

class TimePoly {
public:
    TimePoly() = default;
    TimePoly(std::initializer_list<double> c) : c_(c) { trim(); }
    explicit TimePoly(std::vector<double> c) : c_(std::move(c)) { trim(); }

    static TimePoly constant(double v) { return TimePoly(std::vector<double>{v}); }
    static TimePoly monomial(int l, double coeff = 1.0) {
        std::vector<double> c(static_cast<std::size_t>(l + 1), 0.0);
        c.back() = coeff;
        return TimePoly(std::move(c));
    }
    // (t (T - t))^m, vanishing to order m at both ends of [0, T].
    static TimePoly bump(int m, double t_end = 1.0) {
        TimePoly base{0.0, t_end, -1.0};
        TimePoly out = constant(1.0);
        for (int i = 0; i < m; ++i) out = out * base;
        return out;
    }

    [[nodiscard]] int degree() const { return static_cast<int>(c_.size()) - 1; }
    [[nodiscard]] bool is_zero() const { return c_.empty(); }
    [[nodiscard]] double coeff(int l) const {
        return l >= 0 && l < static_cast<int>(c_.size()) ? c_[static_cast<std::size_t>(l)] : 0.0;
    }
    [[nodiscard]] const std::vector<double>& coeffs() const { return c_; }

    [[nodiscard]] double operator()(double t) const {
        double acc = 0.0;
        for (auto it = c_.rbegin(); it != c_.rend(); ++it) acc = acc * t + *it;
        return acc;
    }

    [[nodiscard]] TimePoly derivative(int order = 1) const {
        TimePoly out = *this;
        for (int o = 0; o < order; ++o) {
            if (out.c_.size() <= 1) return {};
            std::vector<double> d(out.c_.size() - 1);
            for (std::size_t l = 1; l < out.c_.size(); ++l) d[l - 1] = static_cast<double>(l) * out.c_[l];
            out = TimePoly(std::move(d));
        }
        return out;
    }

    // Antiderivative vanishing at t = 0.
    [[nodiscard]] TimePoly integral() const {
        std::vector<double> d(c_.size() + 1, 0.0);
        for (std::size_t l = 0; l < c_.size(); ++l) d[l + 1] = c_[l] / static_cast<double>(l + 1);
        return TimePoly(std::move(d));
    }

    friend TimePoly operator+(const TimePoly& a, const TimePoly& b) {
        std::vector<double> c(std::max(a.c_.size(), b.c_.size()), 0.0);
        for (std::size_t l = 0; l < a.c_.size(); ++l) c[l] += a.c_[l];
        for (std::size_t l = 0; l < b.c_.size(); ++l) c[l] += b.c_[l];
        return TimePoly(std::move(c));
    }
    friend TimePoly operator-(const TimePoly& a, const TimePoly& b) { return a + (-1.0) * b; }
    friend TimePoly operator*(double s, const TimePoly& a) {
        std::vector<double> c = a.c_;
        for (auto& v : c) v *= s;
        return TimePoly(std::move(c));
    }
    friend TimePoly operator*(const TimePoly& a, const TimePoly& b) {
        if (a.c_.empty() || b.c_.empty()) return {};
        std::vector<double> c(a.c_.size() + b.c_.size() - 1, 0.0);
        for (std::size_t i = 0; i < a.c_.size(); ++i)
            for (std::size_t j = 0; j < b.c_.size(); ++j) c[i + j] += a.c_[i] * b.c_[j];
        return TimePoly(std::move(c));
    }
    friend bool operator==(const TimePoly& a, const TimePoly& b) { return a.c_ == b.c_; }

    [[nodiscard]] std::string str() const {
        std::string s;
        for (std::size_t l = 0; l < c_.size(); ++l) {
            if (c_[l] == 0.0) continue;
            if (!s.empty()) s += " + ";
            s += std::to_string(c_[l]);
            if (l > 0) s += "*t^" + std::to_string(l);
        }
        return s.empty() ? "0" : s;
    }

private:
    void trim() {
        while (!c_.empty() && c_.back() == 0.0) c_.pop_back();
    }
    std::vector<double> c_;
};

}  // namespace dbmsv
