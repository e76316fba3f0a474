#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dbmsv/kernel.hpp"

using namespace dbmsv;

namespace {

// Classical RK4 on dK/dt = A K, independent of the exponential routine.
Matrix rk4_propagator(const Matrix& a, double t, double h) {
    const int steps = static_cast<int>(std::ceil(t / h));
    const double dt = t / steps;
    Matrix k = Matrix::Identity(a.rows(), a.cols());
    for (int s = 0; s < steps; ++s) {
        Matrix k1 = a * k;
        Matrix k2 = a * (k + dt / 2 * k1);
        Matrix k3 = a * (k + dt / 2 * k2);
        Matrix k4 = a * (k + dt * k3);
        k += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return k;
}

double max_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Kernel, GeneratorEntries) {
    auto herm = generator_matrix(Potential::hermite(1.3, 2.0), 8);
    for (int k = 0; k <= 8; ++k)
        for (int l = 0; l <= 8; ++l)
            EXPECT_DOUBLE_EQ(herm(k, l), k == l ? -k / (1.3 * 1.3) : 0.0);
    Potential p{2.0, {{1, 0.4}, {2, 0.7}, {3, -0.2}}};
    auto a = generator_matrix(p, 10);
    for (int k = 0; k <= 10; ++k)
        for (int l = 0; l < k; ++l) EXPECT_EQ(a(k, l), 0.0);
    auto a4 = generator_matrix(Potential{4.0, {{1, 1.0}}}, 6);
    EXPECT_DOUBLE_EQ(a4(2, 0), -2.0);
    EXPECT_THROW((void)generator_matrix(Potential{2.0, {{5, 1.0}}}, 4), CutoffTooSmall);
}

TEST(Kernel, PropagatorBasics) {
    Potential p{1.0, {{1, 0.7}, {3, 0.2}}};
    auto k0 = propagator(p, 0.0, 12);
    EXPECT_EQ(max_diff(k0.entries, Matrix::Identity(13, 13)), 0.0);
    for (double t : {0.1, 0.5, 1.0}) {
        auto kh = propagator(Potential::hermite(0.8, 2.0), t, 12);
        for (int k = 0; k <= 12; ++k)
            for (int l = 0; l <= 12; ++l)
                EXPECT_NEAR(kh(k, l), k == l ? std::exp(-k * t / 0.64) : 0.0, 1e-14);
    }
    auto k = propagator(p, 0.3, 12);
    auto ref = rk4_propagator(generator_matrix(p, 12), 0.3, 1e-4);
    EXPECT_LT(max_diff(k.entries, ref), 1e-10 * std::max(1.0, ref.cwiseAbs().maxCoeff()));
    for (double t : {0.2, 0.9}) {
        auto kk = propagator(p, t, 12);
        EXPECT_DOUBLE_EQ(kk(0, 0), 1.0);
        for (int l = 1; l <= 12; ++l) EXPECT_EQ(kk(0, l), 0.0);
    }
}

TEST(Kernel, CharacteristicsFlow) {
    auto lin = characteristics_flow({{1, 0.6}}, 5, 0.7);
    EXPECT_NEAR(lin[1], std::exp(-0.42), 1e-13);
    for (int n = 2; n <= 5; ++n) EXPECT_NEAR(lin[n], 0.0, 1e-15);
    auto id = characteristics_flow({}, 4, 2.0);
    EXPECT_DOUBLE_EQ(id[1], 1.0);
    // w' = -w^2: w(t) = w/(1 + t w)
    const double t = 0.4;
    auto q = characteristics_flow({{2, 1.0}}, 8, t);
    for (int n = 1; n <= 8; ++n) EXPECT_NEAR(q[n], std::pow(-t, n - 1), 1e-12) << n;
}

TEST(Kernel, Beta2ClosedFormMatchesExponential) {
    for (auto b : {std::map<int, double>{{2, 1.0}}, std::map<int, double>{{1, 0.5}, {2, 0.3}}}) {
        for (double t : {0.1, 0.3}) {
            auto closed = kernel_beta2_closed(b, t, 12);
            auto expo = propagator(Potential{2.0, b}, t, 12);
            EXPECT_LT(max_diff(closed.entries, expo.entries), 1e-10);
        }
    }
    auto herm = kernel_beta2_closed({{1, 1.0 / 0.49}}, 0.6, 10);
    for (int k = 0; k <= 10; ++k) EXPECT_NEAR(herm(k, k), std::exp(-k * 0.6 / 0.49), 1e-12);
    EXPECT_EQ(max_diff(kernel_beta2_closed({{2, 1.0}}, 0.0, 6).entries, Matrix::Identity(7, 7)), 0.0);
}

TEST(Kernel, HermiteKernelAllBeta) {
    EXPECT_EQ(hermite_gaussian_rate(1.0, 2.0, 0.7), 0.0);
    EXPECT_EQ(max_diff(hermite_kernel(1.0, 4.0, 0.0, 8).entries, Matrix::Identity(9, 9)), 0.0);
    for (double beta : {0.5, 1.0, 2.0, 4.0, 7.0})
        for (double sigma : {0.7, 1.0, 1.5})
            for (double t : {0.05, 0.2, 1.0}) {
                auto hk = hermite_kernel(sigma, beta, t, 12);
                auto ek = propagator(Potential::hermite(sigma, beta), t, 12);
                const double scale = std::max(1.0, ek.entries.cwiseAbs().maxCoeff());
                EXPECT_LT(max_diff(hk.entries, ek.entries), 1e-12 * scale) << beta << ' ' << sigma << ' ' << t;
            }
    // second moment from pi_0: the rate solves q' = -(beta/2-1) - 2q/sigma^2
    const double t = 0.3, beta = 4.0, sigma = 1.0;
    const double h = 1e-5;
    const double dq = (hermite_gaussian_rate(sigma, beta, t + h) - hermite_gaussian_rate(sigma, beta, t - h)) / (2 * h);
    EXPECT_NEAR(dq, -(beta / 2 - 1) - 2 * hermite_gaussian_rate(sigma, beta, t) / (sigma * sigma), 1e-8);
}

TEST(Kernel, HeatAction) {
    TruncSeries z1(-16, -1, Closure{false, true});
    z1.at(-1) = 1.0;
    auto same = heat_action(z1, 0.0);
    for (int d = -16; d <= -1; ++d) EXPECT_EQ(same[d], z1[d]);
    const double s = 0.01;
    auto h1 = heat_action(z1, s);
    // d^2 z^-1 = 2 z^-3, (d^2)^2 z^-1 = 24 z^-5
    EXPECT_NEAR(h1[-3], 2 * s, 1e-16);
    EXPECT_NEAR(h1[-5], 24 * s * s / 2, 1e-16);
    TruncSeries z2(-16, -1, Closure{false, true});
    z2.at(-2) = 1.0;
    EXPECT_NEAR(heat_action(z2, s)[-4], 6 * s, 1e-16);
}

TEST(Kernel, HeatActionMatchesPureDiffusionPropagator) {
    // b = 0: pi' = -(beta/2 - 1) d^2 pi, heat time s = -(beta/2 - 1) t.
    const int kmax = 12;
    const double beta = 3.0, t = 0.2;
    auto k = propagator(Potential{beta, {}}, t, kmax);
    TruncSeries pi(-kmax - 1, -1, Closure{false, true});
    std::vector<double> modes{1.0, -0.3, 0.8, 0.1, 0.25, 0.0, 0.4, -0.2, 0.05, 0.3, -0.1, 0.2, 0.15};
    for (int kk = 0; kk <= kmax; ++kk) pi.at(-kk - 1) = modes[kk];
    auto h = heat_action(pi, -(beta / 2 - 1) * t);
    for (int kk = 0; kk <= kmax; ++kk) {
        double ref = 0;
        for (int l = 0; l <= kmax; ++l) ref += k(kk, l) * modes[l];
        EXPECT_NEAR(h[-kk - 1], ref, 1e-11) << kk;
    }
}

TEST(Kernel, RetardedModes) {
    Potential p{1.0, {{1, 0.5}, {2, 0.3}}};
    auto g0 = retarded_propagator_modes(p, 0.0, 10);
    for (int k = 0; k <= 10; ++k)
        for (int l = 0; l <= 10; ++l) EXPECT_EQ(g0(k, l), k == l ? l : 0.0);
    auto gh = retarded_propagator_modes(Potential::hermite(1.0, 2.0), 0.4, 10);
    for (int k = 0; k <= 10; ++k) EXPECT_NEAR(gh(k, k), k * std::exp(-0.4 * k), 1e-14);
    auto g = retarded_propagator_modes(p, 0.7, 10);
    for (int k = 0; k <= 10; ++k) EXPECT_EQ(g(k, 0), 0.0);
    EXPECT_EQ(g.advanced()(3, 5), g(5, 3));
}

TEST(Kernel, IdentitiesHermiteAndTrivial) {
    auto r = verify_kernel_identities(Potential::hermite(1.0, 2.0), 0.3, 0.2, 0.1, 12);
    EXPECT_LT(r.semigroup, 1e-12);
    EXPECT_LT(r.forward, 1e-12);
    EXPECT_LT(r.backward, 1e-12);
    EXPECT_LT(r.lemma_unit, 1e-8);
    EXPECT_LT(r.lemma_linear, 1e-8);
    auto z = verify_kernel_identities(Potential{2.0, {}}, 0.3, 0.2, 0.1, 12);
    EXPECT_EQ(z.semigroup, 0.0);
    EXPECT_EQ(z.forward, 0.0);
    EXPECT_EQ(z.backward, 0.0);
    EXPECT_EQ(z.lemma_unit, 0.0);
    EXPECT_EQ(z.lemma_linear, 0.0);
}

TEST(Kernel, IdentitiesGeneric) {
    const Potential p{1.0, {{1, 0.5}, {2, 0.3}}};
    auto r = verify_kernel_identities(p, 0.3, 0.2, 0.1, 12);
    EXPECT_LT(r.semigroup, 1e-10);
    EXPECT_LT(r.forward, 1e-10);
    EXPECT_LT(r.backward, 1e-10);
    EXPECT_LT(r.lemma_unit, 1e-7);
    EXPECT_LT(r.lemma_linear, 1e-7);
    // u = 1 commutes with the diffusion part; u = z does not.
    EXPECT_LT(r.lemma_unit_no_diffusion, 1e-7);
    EXPECT_GT(r.lemma_linear_no_diffusion, 1.0);
    auto fd = verify_kernel_identities(p, 0.3, 0.2, 0.1, 12, TimeDerivative::CentralRichardson, 1e-4);
    EXPECT_LT(fd.lemma_unit_rel(), 1e-8);
    EXPECT_LT(fd.lemma_linear_rel(), 1e-8);
}

TEST(Kernel, IdentitiesAcrossBeta) {
    for (double beta : {1.0, 2.0, 4.0})
        for (auto b : {std::map<int, double>{{1, 1.0}}, std::map<int, double>{{1, 0.5}, {2, 0.3}},
                       std::map<int, double>{{1, 0.4}, {3, 0.1}}}) {
            auto r = verify_kernel_identities(Potential{beta, b}, 0.3, 0.2, 0.1, 12);
            EXPECT_LT(r.semigroup_rel(), 1e-12);
            EXPECT_LT(r.forward_rel(), 1e-12);
            EXPECT_LT(r.backward_rel(), 1e-12);
            EXPECT_LT(r.lemma_unit_rel(), 1e-11);
            EXPECT_LT(r.lemma_linear_rel(), 1e-11);
            if (beta == 2.0) {
                EXPECT_LT(r.lemma_linear_no_diffusion, 1e-12);
            }
        }
}

TEST(Kernel, SemigroupProperty) {
    Potential p{4.0, {{1, 0.9}, {2, -0.2}, {4, 0.1}}};
    for (double s : {0.05, 0.3})
        for (double t : {0.1, 0.45}) {
            auto a = propagator(p, s, 12).entries;
            auto b = propagator(p, t, 12).entries;
            auto c = propagator(p, s + t, 12).entries;
            EXPECT_LT(max_diff(a * b, c), 1e-12 * std::max(1.0, c.cwiseAbs().maxCoeff()));
        }
}

TEST(Kernel, CsvExport) {
    std::ostringstream os;
    write_kernel_csv(os, propagator(Potential::hermite(1.0, 2.0), 0.5, 2));
    const auto s = os.str();
    EXPECT_EQ(s.substr(0, 12), "k,l,t,value\n");
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 10);
}
