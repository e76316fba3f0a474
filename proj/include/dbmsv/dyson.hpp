#pragma once
// Euler-Maruyama Dyson Brownian motion, Metropolis sampling of the Gibbs measure,
// and the Monte Carlo estimators built on both.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dbmsv/kernel.hpp"
#include "dbmsv/timepoly.hpp"

namespace dbmsv {

using Vector = Eigen::VectorXd;

class RejectionRateExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class NonFiniteState : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class MissingIncrements : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};
class NonConfining : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Counter-based random numbers

[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stateless stream keyed by (seed, replica, particle); draw c is a pure function of c.
class StreamRng {
public:
    StreamRng(std::uint64_t seed, std::uint64_t replica, std::uint64_t particle)
        : key_(splitmix64(splitmix64(splitmix64(seed) ^ (replica * 0xd1b54a32d192ed03ULL)) ^
                          (particle * 0x8cb92ba72f3d8dd7ULL + 1))) {}

    [[nodiscard]] std::uint64_t bits(std::uint64_t c) const { return splitmix64(key_ ^ splitmix64(c)); }
    // Uniform on the open interval (0, 1).
    [[nodiscard]] double uniform(std::uint64_t c) const {
        return (static_cast<double>(bits(c) >> 11) + 0.5) * 0x1.0p-53;
    }
    [[nodiscard]] double normal(std::uint64_t c) const {
        const double u1 = uniform(2 * c), u2 = uniform(2 * c + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t key_;
};

class SequentialRng {
public:
    explicit SequentialRng(StreamRng s) : s_(s) {}
    double uniform() { return s_.uniform(c_++); }
    double normal() { return s_.normal(c_++); }

private:
    StreamRng s_;
    std::uint64_t c_ = 0;
};

// ---------------------------------------------------------------------------
// Potential helpers

// Dense force coefficients for Horner evaluation of V'(x).
class ForceEval {
public:
    explicit ForceEval(const Potential& pot) {
        for (auto [l, c] : pot.b) {
            if (l < 0) throw std::invalid_argument("force exponents must be nonnegative");
            if (static_cast<int>(c_.size()) <= l) c_.resize(static_cast<std::size_t>(l + 1), 0.0);
            c_[static_cast<std::size_t>(l)] = c;
        }
    }
    [[nodiscard]] double operator()(double x) const {
        double acc = 0.0;
        for (auto it = c_.rbegin(); it != c_.rend(); ++it) acc = acc * x + *it;
        return acc;
    }
    // V(x) with V(0) = 0.
    [[nodiscard]] double potential(double x) const {
        double acc = 0.0;
        for (std::size_t l = c_.size(); l-- > 0;) acc = acc * x + c_[l] / static_cast<double>(l + 1);
        return acc * x;
    }

private:
    std::vector<double> c_;
};

[[nodiscard]] inline bool is_confining(const Potential& pot) {
    if (pot.b.empty()) return false;
    const auto [l, c] = *pot.b.rbegin();
    return l % 2 == 1 && c > 0.0;
}

// V + 2 sum_k tau_k x^k, the force whose drift the log-weight below reweights to.
[[nodiscard]] inline Potential perturbed_potential(const Potential& pot, const std::map<int, double>& tau) {
    Potential out = pot;
    for (auto [k, t] : tau) {
        if (k < 1) continue;
        out.b[k - 1] += 2.0 * k * t;
    }
    return out;
}

[[nodiscard]] inline double ipow(double x, int k) {
    double r = 1.0;
    for (; k > 0; --k) r *= x;
    return r;
}

// Power sums pi_0..pi_kmax of one configuration.
inline void power_sums(const double* x, int n, int k_max, double* out) {
    for (int k = 0; k <= k_max; ++k) out[k] = 0.0;
    for (int i = 0; i < n; ++i) {
        double p = 1.0;
        for (int k = 0; k <= k_max; ++k) {
            out[k] += p;
            p *= x[i];
        }
    }
}

// Drift sum_{j != i} beta/(x_i - x_j) - V'(x_i) of every particle.
inline void dbm_drift(const double* x, int n, double beta, const ForceEval& force, double* mu) {
    for (int i = 0; i < n; ++i) {
        double acc = -force(x[i]);
        if (beta != 0.0)
            for (int j = 0; j < n; ++j)
                if (j != i) acc += beta / (x[i] - x[j]);
        mu[i] = acc;
    }
}

// ---------------------------------------------------------------------------
// Configuration and path storage

struct InitialCondition {
    enum class Kind { Equispaced, Equilibrium, Explicit };
    Kind kind = Kind::Equispaced;
    double scale = 0.0;  // sigma of the interval [-2 sqrt(N) sigma, 2 sqrt(N) sigma]; 0 takes 1/sqrt(b_1)
    double shift = 0.0;  // added to every equispaced point
    int eq_burn_sweeps = 400;
    std::vector<double> values;

    [[nodiscard]] std::string describe() const {
        switch (kind) {
            case Kind::Equispaced:
                return "equispaced(scale=" + std::to_string(scale) + ",shift=" + std::to_string(shift) + ")";
            case Kind::Equilibrium: return "equilibrium(burn=" + std::to_string(eq_burn_sweeps) + ")";
            case Kind::Explicit: return "explicit";
        }
        return "unknown";
    }
};

struct DbmConfig {
    Potential pot;
    int particles = 1;
    double dt = 1e-3;
    int steps = 1000;
    int replicas = 1;
    std::uint64_t seed = 1;
    InitialCondition init;
    double gap_min = 1e-8;
    double max_rejection_rate = 0.01;
    int threads = 1;
};

struct ReplicaPath {
    int index = 0;
    int particles = 0;
    int steps = 0;
    double dt = 0.0;
    std::vector<double> lambda;  // (steps + 1) x particles, row per time
    std::vector<double> noise;   // steps x particles, accepted Brownian increments
    std::uint64_t rejections = 0;

    [[nodiscard]] const double* at(int j) const { return lambda.data() + static_cast<std::size_t>(j) * particles; }
    [[nodiscard]] const double* increment(int j) const {
        return noise.data() + static_cast<std::size_t>(j) * particles;
    }
    [[nodiscard]] double t(int j) const { return j * dt; }
    [[nodiscard]] double pi(int k, int j) const {
        double acc = 0.0;
        for (int i = 0; i < particles; ++i) acc += ipow(at(j)[i], k);
        return acc;
    }
};

namespace detail {

inline double equispaced_scale(const DbmConfig& c) {
    if (c.init.scale > 0.0) return c.init.scale;
    const double b1 = c.pot.coeff(1);
    return b1 > 0.0 ? 1.0 / std::sqrt(b1) : 1.0;
}

inline std::vector<double> equispaced(const DbmConfig& c) {
    const int n = c.particles;
    const double half = 2.0 * std::sqrt(static_cast<double>(n)) * equispaced_scale(c);
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        x[static_cast<std::size_t>(i)] = (n == 1 ? 0.0 : -half + 2.0 * half * i / (n - 1)) + c.init.shift;
    return x;
}

// Gibbs log-density change when particle i moves to y.
inline double log_density_change(const std::vector<double>& x, int i, double y, double beta, const ForceEval& f) {
    const double xi = x[static_cast<std::size_t>(i)];
    double d = -(f.potential(y) - f.potential(xi));
    if (beta != 0.0)
        for (std::size_t j = 0; j < x.size(); ++j) {
            if (static_cast<int>(j) == i) continue;
            const double gy = std::abs(y - x[j]), gx = std::abs(xi - x[j]);
            if (gy == 0.0) return -std::numeric_limits<double>::infinity();
            d += beta * (std::log(gy) - std::log(gx));
        }
    return d;
}

// One Metropolis sweep; returns accepted moves.
inline int metropolis_sweep(std::vector<double>& x, double step, double beta, const ForceEval& f, SequentialRng& rng) {
    int acc = 0;
    for (int i = 0; i < static_cast<int>(x.size()); ++i) {
        const double y = x[static_cast<std::size_t>(i)] + step * rng.normal();
        const double d = log_density_change(x, i, y, beta, f);
        if (std::log(rng.uniform()) < d) {
            x[static_cast<std::size_t>(i)] = y;
            ++acc;
        }
    }
    for (double v : x)
        if (!std::isfinite(v) || std::abs(v) > 1e8) throw NonConfining("Metropolis chain diverged");
    return acc;
}

// Adapt the proposal width toward acceptance 0.3 over windows of the burn-in.
inline double tune_step(double step, double rate) {
    return std::clamp(step * std::exp(2.0 * (rate - 0.3)), 1e-6, 1e6);
}

inline std::vector<double> equilibrium_start(const DbmConfig& c, int replica) {
    if (!is_confining(c.pot)) throw NonConfining("equilibrium start needs a confining potential");
    std::vector<double> x = equispaced(c);
    const ForceEval f(c.pot);
    SequentialRng rng(StreamRng(c.seed, static_cast<std::uint64_t>(replica), 0xffffffffULL));
    double step = 0.5 * equispaced_scale(c);
    const int window = 25;
    for (int s = 0, acc = 0; s < c.init.eq_burn_sweeps; ++s) {
        acc += metropolis_sweep(x, step, c.pot.beta, f, rng);
        if ((s + 1) % window == 0 && s + 1 < c.init.eq_burn_sweeps / 2) {
            step = tune_step(step, static_cast<double>(acc) / (window * c.particles));
            acc = 0;
        }
    }
    std::sort(x.begin(), x.end());
    return x;
}

inline std::vector<double> initial_values(const DbmConfig& c, int replica) {
    switch (c.init.kind) {
        case InitialCondition::Kind::Equispaced: return equispaced(c);
        case InitialCondition::Kind::Equilibrium: return equilibrium_start(c, replica);
        case InitialCondition::Kind::Explicit:
            if (static_cast<int>(c.init.values.size()) != c.particles)
                throw std::invalid_argument("explicit initial condition has the wrong length");
            return c.init.values;
    }
    return {};
}

inline bool admissible(const double* y, int n, double beta, double gap_min) {
    for (int i = 0; i < n; ++i)
        if (!std::isfinite(y[i])) throw NonFiniteState("non-finite particle position");
    if (beta <= 0.0) return true;
    if (beta >= 1.0) {
        for (int i = 0; i + 1 < n; ++i)
            if (!(y[i + 1] - y[i] >= gap_min)) return false;
        return true;
    }
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (std::abs(y[i] - y[j]) < gap_min) return false;
    return true;
}

}  // namespace detail

inline constexpr int kMaxAttempts = 256;
// Redraws at one state before the step that produced the state is rejected instead.
inline constexpr int kStuckAttempts = 16;

// One replica of the Euler-Maruyama scheme with step rejection.  Near a collision the
// left-point repulsion can overshoot for every noise draw; the state is then discarded
// and the previous step redrawn.  Draw counters only increase, so no draw is reused.
inline void simulate_replica(const DbmConfig& c, int replica, ReplicaPath& out) {
    const int n = c.particles;
    if (n < 1 || c.steps < 1 || !(c.dt > 0.0)) throw std::invalid_argument("simulate: bad grid or particle count");
    out.index = replica;
    out.particles = n;
    out.steps = c.steps;
    out.dt = c.dt;
    out.rejections = 0;
    out.lambda.resize(static_cast<std::size_t>(c.steps + 1) * n);
    out.noise.resize(static_cast<std::size_t>(c.steps) * n);
    const ForceEval force(c.pot);
    std::vector<double> x = detail::initial_values(c, replica);
    if (c.pot.beta >= 1.0 && !std::is_sorted(x.begin(), x.end()))
        throw std::invalid_argument("initial condition must be ordered for beta >= 1");
    std::copy(x.begin(), x.end(), out.lambda.begin());
    std::vector<StreamRng> rngs;
    rngs.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        rngs.emplace_back(c.seed, static_cast<std::uint64_t>(replica), static_cast<std::uint64_t>(i));
    std::vector<double> mu(static_cast<std::size_t>(n)), db(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
    std::vector<int> next_attempt(static_cast<std::size_t>(c.steps), 0);
    const double sd = std::sqrt(2.0 * c.dt);
    for (int j = 0; j < c.steps;) {
        const double* xj = out.lambda.data() + static_cast<std::size_t>(j) * n;
        dbm_drift(xj, n, c.pot.beta, force, mu.data());
        int& attempt = next_attempt[static_cast<std::size_t>(j)];
        bool ok = false;
        for (int tries = 0; tries < kStuckAttempts && attempt < kMaxAttempts; ++tries) {
            const std::uint64_t counter = (static_cast<std::uint64_t>(j) << 8) | static_cast<std::uint64_t>(attempt++);
            for (int i = 0; i < n; ++i) {
                db[static_cast<std::size_t>(i)] = sd * rngs[static_cast<std::size_t>(i)].normal(counter);
                y[static_cast<std::size_t>(i)] = xj[i] + db[static_cast<std::size_t>(i)] + mu[static_cast<std::size_t>(i)] * c.dt;
            }
            if (detail::admissible(y.data(), n, c.pot.beta, c.gap_min)) {
                ok = true;
                break;
            }
            ++out.rejections;
        }
        if (ok) {
            std::copy(y.begin(), y.end(), out.lambda.begin() + static_cast<std::ptrdiff_t>(j + 1) * n);
            std::copy(db.begin(), db.end(), out.noise.begin() + static_cast<std::ptrdiff_t>(j) * n);
            ++j;
            continue;
        }
        if (attempt >= kMaxAttempts || j == 0)
            throw RejectionRateExceeded("step " + std::to_string(j) + " of replica " + std::to_string(replica) +
                                        " admits no step; reduce dt");
        --j;
        ++out.rejections;
    }
}

// ---------------------------------------------------------------------------
// Parallel driver: fixed chunks of replicas, pairwise reduction in chunk order.

inline constexpr int kReplicaChunk = 32;

template <class State>
struct RunResult {
    State state;
    std::uint64_t rejections = 0;
    std::uint64_t steps = 0;
    [[nodiscard]] double rejection_rate() const {
        return steps == 0 ? 0.0 : static_cast<double>(rejections) / static_cast<double>(steps);
    }
};

// Obs provides: using State; State init() const; void observe(State&, const ReplicaPath&) const;
// void merge(State& left, State&& right) const.
template <class Obs>
[[nodiscard]] RunResult<typename Obs::State> run_ensemble(const DbmConfig& c, const Obs& obs) {
    using State = typename Obs::State;
    if (c.replicas < 1) throw std::invalid_argument("run_ensemble: need at least one replica");
    const int chunks = (c.replicas + kReplicaChunk - 1) / kReplicaChunk;
    std::vector<std::optional<State>> parts(static_cast<std::size_t>(chunks));
    std::vector<std::uint64_t> rej(static_cast<std::size_t>(chunks), 0);
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        ReplicaPath path;
        for (;;) {
            const int ch = next.fetch_add(1);
            if (ch >= chunks) return;
            try {
                State s = obs.init();
                std::uint64_t r_count = 0;
                const int hi = std::min(c.replicas, (ch + 1) * kReplicaChunk);
                for (int r = ch * kReplicaChunk; r < hi; ++r) {
                    simulate_replica(c, r, path);
                    r_count += path.rejections;
                    obs.observe(s, path);
                }
                parts[static_cast<std::size_t>(ch)].emplace(std::move(s));
                rej[static_cast<std::size_t>(ch)] = r_count;
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(chunks);
                return;
            }
        }
    };
    const int nt = std::max(1, std::min(c.threads, chunks));
    if (nt == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    for (std::size_t width = 1; width < parts.size(); width *= 2)
        for (std::size_t i = 0; i + width < parts.size(); i += 2 * width)
            obs.merge(*parts[i], std::move(*parts[i + width]));
    RunResult<State> out{std::move(*parts.front()), 0, static_cast<std::uint64_t>(c.replicas) * c.steps};
    for (auto v : rej) out.rejections += v;
    if (out.rejection_rate() > c.max_rejection_rate)
        throw RejectionRateExceeded("rejection rate " + std::to_string(out.rejection_rate()) + " above " +
                                    std::to_string(c.max_rejection_rate) + "; reduce dt");
    return out;
}

// Per-replica rows of fixed width, kept in replica order.
template <class Fn>
struct RowObserver {
    using State = std::vector<double>;
    int width;
    Fn fn;  // void(const ReplicaPath&, double* row)
    [[nodiscard]] State init() const { return {}; }
    void observe(State& s, const ReplicaPath& p) const {
        const std::size_t off = s.size();
        s.resize(off + static_cast<std::size_t>(width), 0.0);
        fn(p, s.data() + off);
    }
    void merge(State& a, State&& b) const { a.insert(a.end(), b.begin(), b.end()); }
};

// Running sums and sums of squares of a fixed-width per-replica vector.
template <class Fn>
struct SumObserver {
    struct State {
        std::uint64_t count = 0;
        std::vector<double> sum, sumsq;
    };
    int width;
    Fn fn;  // void(const ReplicaPath&, double* row)
    [[nodiscard]] State init() const {
        return {0, std::vector<double>(static_cast<std::size_t>(width), 0.0),
                std::vector<double>(static_cast<std::size_t>(width), 0.0)};
    }
    void observe(State& s, const ReplicaPath& p) const {
        thread_local std::vector<double> row;
        row.assign(static_cast<std::size_t>(width), 0.0);
        fn(p, row.data());
        for (std::size_t i = 0; i < row.size(); ++i) {
            s.sum[i] += row[i];
            s.sumsq[i] += row[i] * row[i];
        }
        ++s.count;
    }
    void merge(State& a, State&& b) const {
        a.count += b.count;
        for (std::size_t i = 0; i < a.sum.size(); ++i) {
            a.sum[i] += b.sum[i];
            a.sumsq[i] += b.sumsq[i];
        }
    }
};

// Rows as an M x width matrix.
template <class Fn>
[[nodiscard]] std::pair<Matrix, double> collect_rows(const DbmConfig& c, int width, Fn fn) {
    const auto run = run_ensemble(c, RowObserver<Fn>{width, std::move(fn)});
    Matrix m(c.replicas, width);
    for (int r = 0; r < c.replicas; ++r)
        for (int w = 0; w < width; ++w) m(r, w) = run.state[static_cast<std::size_t>(r) * width + w];
    return {m, run.rejection_rate()};
}

struct Estimate {
    double value = 0.0;
    double se = 0.0;
};

[[nodiscard]] inline Estimate mean_se(const Eigen::Ref<const Vector>& v) {
    const auto m = v.size();
    if (m == 0) return {};
    const double mean = v.mean();
    if (m == 1) return {mean, 0.0};
    const double var = (v.array() - mean).square().sum() / static_cast<double>(m - 1);
    return {mean, std::sqrt(var / static_cast<double>(m))};
}

// Difference of two independent estimates.
[[nodiscard]] inline Estimate difference(const Estimate& a, const Estimate& b) {
    return {a.value - b.value, std::hypot(a.se, b.se)};
}

// Batch-means estimate for a correlated chain.
[[nodiscard]] inline Estimate batch_means(const Eigen::Ref<const Vector>& v, int batches = 50) {
    const auto n = v.size();
    if (n < 2 * batches) return mean_se(v);
    const auto len = n / batches;
    Vector means(batches);
    for (int b = 0; b < batches; ++b) means(b) = v.segment(b * len, len).mean();
    return {v.head(batches * len).mean(), mean_se(means).se};
}

// ---------------------------------------------------------------------------
// Stored ensembles

struct Ensemble {
    int particles = 0;
    double dt = 0.0;
    int steps = 0;
    int replicas = 0;
    Potential pot;
    std::uint64_t seed = 0;
    InitialCondition init;
    std::vector<ReplicaPath> paths;
    std::uint64_t rejections = 0;

    [[nodiscard]] double rejection_rate() const {
        return steps * replicas == 0 ? 0.0 : static_cast<double>(rejections) / (static_cast<double>(steps) * replicas);
    }
};

struct StoreObserver {
    using State = std::vector<ReplicaPath>;
    [[nodiscard]] State init() const { return {}; }
    void observe(State& s, const ReplicaPath& p) const { s.push_back(p); }
    void merge(State& a, State&& b) const {
        a.insert(a.end(), std::make_move_iterator(b.begin()), std::make_move_iterator(b.end()));
    }
};

[[nodiscard]] inline Ensemble simulate_dbm(const DbmConfig& c) {
    auto run = run_ensemble(c, StoreObserver{});
    Ensemble e{c.particles, c.dt, c.steps, c.replicas, c.pot, c.seed, c.init, std::move(run.state), run.rejections};
    return e;
}

// pi_k(t_j) per replica: M x (steps + 1).
[[nodiscard]] inline Matrix linear_statistics(const Ensemble& e, int k) {
    if (k < 0) throw std::invalid_argument("linear_statistics: k must be nonnegative");
    Matrix out(e.replicas, e.steps + 1);
    for (int r = 0; r < e.replicas; ++r)
        for (int j = 0; j <= e.steps; ++j)
            out(r, j) = k == 0 ? e.particles : e.paths[static_cast<std::size_t>(r)].pi(k, j);
    return out;
}

// ---------------------------------------------------------------------------
// Gibbs sampling

struct EqSamples {
    Potential pot;
    int particles = 0;
    Matrix samples;  // one row per post-burn-in sweep
    double acceptance = 0.0;
    double step = 0.0;
    double autocorrelation_time = 0.0;  // integrated, of pi_2, in sweeps
    int sweeps = 0;
    int burn_in = 0;
};

[[nodiscard]] inline double integrated_autocorrelation(const Eigen::Ref<const Vector>& v) {
    const auto n = v.size();
    if (n < 4) return 1.0;
    const Vector d = v.array() - v.mean();
    const double c0 = d.squaredNorm() / static_cast<double>(n);
    if (c0 == 0.0) return 1.0;
    double tau = 1.0;
    for (Eigen::Index lag = 1; lag < n / 2; ++lag) {
        const double c = d.head(n - lag).dot(d.tail(n - lag)) / static_cast<double>(n) / c0;
        tau += 2.0 * c;
        if (lag >= 5 * tau) break;  // self-consistent window
    }
    return std::max(tau, 1.0);
}

[[nodiscard]] inline EqSamples sample_equilibrium(const Potential& pot, int particles, int sweeps, std::uint64_t seed) {
    if (!is_confining(pot)) throw NonConfining("sample_equilibrium: potential is not confining");
    if (particles < 1 || sweeps < 10) throw std::invalid_argument("sample_equilibrium: bad size");
    DbmConfig c;
    c.pot = pot;
    c.particles = particles;
    std::vector<double> x = detail::equispaced(c);
    const ForceEval f(pot);
    SequentialRng rng(StreamRng(seed, 0, 0xfffffffeULL));
    EqSamples out;
    out.pot = pot;
    out.particles = particles;
    out.sweeps = sweeps;
    out.burn_in = sweeps / 5;
    double step = 0.5 * detail::equispaced_scale(c);
    const int window = 50;
    int acc = 0;
    for (int s = 0; s < out.burn_in; ++s) {
        acc += detail::metropolis_sweep(x, step, pot.beta, f, rng);
        if ((s + 1) % window == 0) {
            step = detail::tune_step(step, static_cast<double>(acc) / (window * particles));
            acc = 0;
        }
    }
    out.step = step;
    const int kept = sweeps - out.burn_in;
    out.samples.resize(kept, particles);
    long long accepted = 0;
    for (int s = 0; s < kept; ++s) {
        accepted += detail::metropolis_sweep(x, step, pot.beta, f, rng);
        std::vector<double> sorted = x;
        std::sort(sorted.begin(), sorted.end());
        for (int i = 0; i < particles; ++i) out.samples(s, i) = sorted[static_cast<std::size_t>(i)];
    }
    out.acceptance = static_cast<double>(accepted) / (static_cast<double>(kept) * particles);
    Vector p2 = out.samples.rowwise().squaredNorm();
    out.autocorrelation_time = integrated_autocorrelation(p2);
    return out;
}

// Metropolis acceptance probability for moving particle i of x to y.
[[nodiscard]] inline double metropolis_acceptance(const Potential& pot, const std::vector<double>& x, int i, double y) {
    return std::min(1.0, std::exp(detail::log_density_change(x, i, y, pot.beta, ForceEval(pot))));
}

[[nodiscard]] inline Matrix linear_statistics(const EqSamples& s, int k) {
    return s.samples.array().pow(static_cast<double>(k)).rowwise().sum();
}

// (n+1)<pi_n> - sum b_k <pi_{k+n+1}> - sum k tau_k <pi_{k+n}> + beta/2 sum_{k<=n} (<pi_k pi_{n-k}> - <pi_n>)
[[nodiscard]] inline Estimate loop_equation_residual(const EqSamples& s, int n, const Potential& pot,
                                                     const std::map<int, double>& tau = {}) {
    if (n < 0) throw std::invalid_argument("loop_equation_residual: n must be nonnegative");
    int kmax = n + 1 + pot.max_index();
    for (auto [k, t] : tau) kmax = std::max(kmax, k + n);
    const auto rows = s.samples.rows();
    Vector r(rows);
    std::vector<double> pi(static_cast<std::size_t>(kmax + 1));
    for (Eigen::Index a = 0; a < rows; ++a) {
        const Vector row = s.samples.row(a);
        power_sums(row.data(), s.particles, kmax, pi.data());
        auto P = [&](int k) { return pi[static_cast<std::size_t>(k)]; };
        double v = (n + 1) * P(n);
        for (auto [k, b] : pot.b) v -= b * P(k + n + 1);
        for (auto [k, t] : tau) v -= k * t * P(k + n);
        for (int k = 0; k <= n; ++k) v += pot.beta / 2.0 * (P(k) * P(n - k) - P(n));
        r(a) = v;
    }
    return batch_means(r);
}

// ---------------------------------------------------------------------------
// Change of measure and the action split

using TauPath = std::map<int, TimePoly>;  // k -> tau_k(t)

namespace detail {
inline int tau_kmax(const TauPath& tau) { return tau.empty() ? 0 : tau.rbegin()->first; }

inline void require_increments(const ReplicaPath& p) {
    if (p.noise.size() != static_cast<std::size_t>(p.steps) * p.particles ||
        p.lambda.size() != static_cast<std::size_t>(p.steps + 1) * p.particles)
        throw MissingIncrements("replica lacks stored increments");
}
}  // namespace detail

// -sum_k sum_j tau_k(t_j) sum_i k lambda_i^{k-1} [d lambda_i + (V' - sum beta/(lambda_i - lambda_j)) dt], left point.
[[nodiscard]] inline double girsanov_logweight(const ReplicaPath& p, const Potential& pot, const TauPath& tau) {
    detail::require_increments(p);
    if (tau.empty()) return 0.0;
    const ForceEval force(pot);
    const int n = p.particles;
    std::vector<double> mu(static_cast<std::size_t>(n));
    double acc = 0.0;
    for (int j = 0; j < p.steps; ++j) {
        const double* x = p.at(j);
        const double* y = p.at(j + 1);
        dbm_drift(x, n, pot.beta, force, mu.data());
        for (auto& [k, tk] : tau) {
            const double tv = tk(p.t(j));
            if (tv == 0.0 || k < 1) continue;
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k * ipow(x[i], k - 1) * ((y[i] - x[i]) - mu[static_cast<std::size_t>(i)] * p.dt);
            acc -= tv * s;
        }
    }
    return acc;
}

// sum_j sum_i (sum_k k tau_k lambda_i^{k-1})^2 dt: the square-completion term.
[[nodiscard]] inline double girsanov_quadratic_term(const ReplicaPath& p, const TauPath& tau) {
    detail::require_increments(p);
    double acc = 0.0;
    for (int j = 0; j < p.steps; ++j) {
        const double* x = p.at(j);
        for (int i = 0; i < p.particles; ++i) {
            double g = 0.0;
            for (auto& [k, tk] : tau)
                if (k >= 1) g += k * tk(p.t(j)) * ipow(x[i], k - 1);
            acc += g * g * p.dt;
        }
    }
    return acc;
}

// Exact density of the path law with force V + 2 sum tau_k x^k against the law with force V.
[[nodiscard]] inline double girsanov_full_logweight(const ReplicaPath& p, const Potential& pot, const TauPath& tau) {
    return girsanov_logweight(p, pot, tau) - girsanov_quadratic_term(p, tau);
}

struct ActionTerms {
    double s_lin = 0.0;
    double s_quadr = 0.0;
};

// Per-step pieces of S_k dt with pi-dot dt = sum k lambda^{k-1} d lambda + k(k-1) pi_{k-2} dt.
struct StepAction {
    double lin = 0.0;
    double quadr = 0.0;
};

inline StepAction step_action(const double* x, const double* y, int n, const Potential& pot, double dt, int k,
                              const double* pi) {
    StepAction s;
    double ito = 0.0;
    for (int i = 0; i < n; ++i) ito += k * ipow(x[i], k - 1) * (y[i] - x[i]);
    const double beta = pot.beta;
    if (k >= 2) ito += k * (k - 1.0) * pi[k - 2] * dt;
    double lin = ito;
    if (k >= 2) lin += (beta / 2.0 - 1.0) * k * (k - 1.0) * pi[k - 2] * dt;
    for (auto [l, b] : pot.b) lin += k * b * pi[l + k - 1] * dt;
    double q = 0.0;
    for (int a = 0; a <= k - 2; ++a) q += pi[a] * pi[k - 2 - a];
    s.lin = lin;
    s.quadr = -(beta / 2.0) * k * q * dt;
    return s;
}

[[nodiscard]] inline ActionTerms action_terms(const ReplicaPath& p, const Potential& pot, const TauPath& tau) {
    detail::require_increments(p);
    ActionTerms out;
    if (tau.empty()) return out;
    const int kmax = detail::tau_kmax(tau) + std::max(1, pot.max_index());
    std::vector<double> pi(static_cast<std::size_t>(kmax + 1));
    for (int j = 0; j < p.steps; ++j) {
        power_sums(p.at(j), p.particles, kmax, pi.data());
        for (auto& [k, tk] : tau) {
            if (k < 1) continue;
            const double tv = tk(p.t(j));
            if (tv == 0.0) continue;
            const StepAction s = step_action(p.at(j), p.at(j + 1), p.particles, pot, p.dt, k, pi.data());
            out.s_lin += tv * s.lin;
            out.s_quadr += tv * s.quadr;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Moment hierarchy

namespace detail {
// Deterministic drift of pi_k: the right side of d pi_k = D_k dt + martingale.
inline double moment_drift(const Potential& pot, int k, const double* pi) {
    const double beta = pot.beta;
    double d = 0.0;
    if (k >= 2) d -= (beta / 2.0 - 1.0) * k * (k - 1.0) * pi[k - 2];
    for (auto [l, b] : pot.b) d -= k * b * pi[l + k - 1];
    for (int a = 0; a <= k - 2; ++a) d += (beta / 2.0) * k * pi[a] * pi[k - 2 - a];
    return d;
}

// E[(x + X)^k - x^k - k x^{k-1} m - k(k-1) x^{k-2} dt] for X ~ Normal(m, 2 dt): the Euler remainder.
inline double euler_remainder(double x, double m, double dt, int k) {
    const double v = 2.0 * dt;
    // second moment without its variance part, which is the Ito correction; exact for k <= 4
    const double e2 = m * m, e3 = m * m * m + 3.0 * m * v, e4 = m * m * m * m + 6.0 * m * m * v + 3.0 * v * v;
    const double moments[5] = {1.0, m, e2, e3, e4};
    double acc = 0.0;
    double binom = 1.0;
    for (int r = 1; r <= k; ++r) {
        binom = binom * (k - r + 1) / r;
        if (r == 1) continue;
        const double mr = r <= 4 ? moments[r] : 0.0;
        acc += binom * ipow(x, k - r) * mr;
    }
    return acc;
}
}  // namespace detail

// Time series of d/dt E[pi_k] + (beta/2-1)k(k-1)E[pi_{k-2}] + k sum b_l E[pi_{l+k-1}] - (beta/2)k sum E[pi_q pi_{k-2-q}]
// at interior grid points, centered differences, with per-point standard errors.
struct HierarchySeries {
    std::vector<double> t, residual, se;
};

[[nodiscard]] inline HierarchySeries moment_hierarchy_residual(const Ensemble& e, int k) {
    if (k < 0) throw std::invalid_argument("moment_hierarchy_residual: k must be nonnegative");
    HierarchySeries out;
    const int kmax = k + std::max(1, e.pot.max_index());
    std::vector<double> pi(static_cast<std::size_t>(kmax + 1));
    for (int j = 1; j < e.steps; ++j) {
        Vector v(e.replicas);
        for (int r = 0; r < e.replicas; ++r) {
            const auto& p = e.paths[static_cast<std::size_t>(r)];
            if (k == 0) {
                v(r) = 0.0;
                continue;
            }
            power_sums(p.at(j), p.particles, kmax, pi.data());
            v(r) = (p.pi(k, j + 1) - p.pi(k, j - 1)) / (2.0 * e.dt) - detail::moment_drift(e.pot, k, pi.data());
        }
        const Estimate est = mean_se(v);
        out.t.push_back(j * e.dt);
        out.residual.push_back(est.value);
        out.se.push_back(est.se);
    }
    return out;
}

// Window [t_a, t_b] averages of one replica, for k: the hierarchy residual
// (pi_k(t_b) - pi_k(t_a) - sum D_k dt)/(t_b - t_a), the conditional Euler remainder
// over the same steps, and the martingale action S_k averaged over the window.
struct WindowSample {
    double residual = 0.0;
    double euler_bias = 0.0;
    double action = 0.0;
};

struct Window {
    int j_a = 0;
    int j_b = 0;
};

// All k in 1..k_max and all windows in one pass; result[w][k - 1].
[[nodiscard]] inline std::vector<std::vector<WindowSample>> moment_windows(const ReplicaPath& p, const Potential& pot,
                                                                           int k_max, const std::vector<Window>& windows) {
    for (const auto& w : windows)
        if (w.j_a < 0 || w.j_b > p.steps || w.j_b <= w.j_a) throw std::invalid_argument("moment_windows: bad window");
    if (k_max < 1) throw std::invalid_argument("moment_windows: k_max must be positive");
    const int kmax = k_max + std::max(1, pot.max_index());
    const auto nk = static_cast<std::size_t>(k_max);
    std::vector<double> pi(static_cast<std::size_t>(kmax + 1)), mu(static_cast<std::size_t>(p.particles));
    std::vector<double> drift(nk), bias(nk), action(nk);
    const ForceEval force(pot);
    std::vector<std::vector<WindowSample>> out(windows.size(), std::vector<WindowSample>(nk));
    std::vector<std::vector<double>> drift_acc(windows.size(), std::vector<double>(nk, 0.0));
    int lo = p.steps, hi = 0;
    for (const auto& w : windows) {
        lo = std::min(lo, w.j_a);
        hi = std::max(hi, w.j_b);
    }
    for (int j = lo; j < hi; ++j) {
        const double* x = p.at(j);
        power_sums(x, p.particles, kmax, pi.data());
        dbm_drift(x, p.particles, pot.beta, force, mu.data());
        for (int k = 1; k <= k_max; ++k) {
            const auto kk = static_cast<std::size_t>(k - 1);
            drift[kk] = detail::moment_drift(pot, k, pi.data()) * p.dt;
            double b = 0.0;
            for (int i = 0; i < p.particles; ++i) b += detail::euler_remainder(x[i], mu[static_cast<std::size_t>(i)] * p.dt, p.dt, k);
            bias[kk] = b;
            const StepAction s = step_action(x, p.at(j + 1), p.particles, pot, p.dt, k, pi.data());
            action[kk] = s.lin + s.quadr;
        }
        for (std::size_t w = 0; w < windows.size(); ++w) {
            if (j < windows[w].j_a || j >= windows[w].j_b) continue;
            for (std::size_t kk = 0; kk < nk; ++kk) {
                drift_acc[w][kk] += drift[kk];
                out[w][kk].euler_bias += bias[kk];
                out[w][kk].action += action[kk];
            }
        }
    }
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const double span = (windows[w].j_b - windows[w].j_a) * p.dt;
        for (int k = 1; k <= k_max; ++k) {
            auto& o = out[w][static_cast<std::size_t>(k - 1)];
            o.residual = (p.pi(k, windows[w].j_b) - p.pi(k, windows[w].j_a) - drift_acc[w][static_cast<std::size_t>(k - 1)]) / span;
            o.euler_bias /= span;
            o.action /= span;
        }
    }
    return out;
}

[[nodiscard]] inline WindowSample moment_window_sample(const ReplicaPath& p, const Potential& pot, int k, int j_a, int j_b) {
    if (k < 1) throw std::invalid_argument("moment_window_sample: k must be positive");
    return moment_windows(p, pot, k, {{j_a, j_b}})[0][static_cast<std::size_t>(k - 1)];
}

// ---------------------------------------------------------------------------
// Sources of the linearized dynamics and the one-point function

// Linear part (A pi)_l = -(beta/2-1) l(l-1) pi_{l-2} - l sum b_m pi_{m+l-1}.
namespace detail {
inline double linear_generator(const Potential& pot, int l, const double* pi) {
    double a = 0.0;
    if (l >= 2) a -= (pot.beta / 2.0 - 1.0) * l * (l - 1.0) * pi[l - 2];
    for (auto [m, b] : pot.b) a -= l * b * pi[m + l - 1];
    return a;
}
}  // namespace detail

// Operator-grid sources in the boson variable layout j * k_max + (k - 1):
// slot 0 carries pi_k(0); slot j >= 1 carries the sum over fine steps in (t_{j-1}, t_j]
// of d pi_k - (A pi)_k dt.  stride = fine steps per operator slot.
[[nodiscard]] inline Vector operator_sources(const ReplicaPath& p, const Potential& pot, int k_max, int stride) {
    if (stride < 1 || p.steps % stride != 0) throw std::invalid_argument("operator_sources: stride must divide steps");
    const int slots = p.steps / stride;
    const int kmax = k_max + std::max(1, pot.max_index());
    std::vector<double> pi(static_cast<std::size_t>(kmax + 1)), next(static_cast<std::size_t>(kmax + 1));
    Vector s = Vector::Zero(static_cast<Eigen::Index>(slots + 1) * k_max);
    power_sums(p.at(0), p.particles, kmax, pi.data());
    for (int k = 1; k <= k_max; ++k) s(k - 1) = pi[static_cast<std::size_t>(k)];
    for (int j = 0; j < p.steps; ++j) {
        power_sums(p.at(j + 1), p.particles, kmax, next.data());
        const int slot = j / stride + 1;
        for (int k = 1; k <= k_max; ++k)
            s(static_cast<Eigen::Index>(slot) * k_max + (k - 1)) +=
                next[static_cast<std::size_t>(k)] - pi[static_cast<std::size_t>(k)] -
                detail::linear_generator(pot, k, pi.data()) * p.dt;
        std::swap(pi, next);
    }
    return s;
}

[[nodiscard]] inline std::vector<Vector> collect_operator_sources(const DbmConfig& c, int k_max, int stride) {
    const int slots = c.steps / stride;
    const int width = (slots + 1) * k_max;
    const Potential pot = c.pot;
    auto fn = [pot, k_max, stride](const ReplicaPath& p, double* row) {
        const Vector s = operator_sources(p, pot, k_max, stride);
        std::copy(s.data(), s.data() + s.size(), row);
    };
    auto [m, rate] = collect_rows(c, width, fn);
    (void)rate;
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(c.replicas));
    for (int r = 0; r < c.replicas; ++r) out.emplace_back(m.row(r).transpose());
    return out;
}

// One-point function against the kernel: lhs = sum_j dt f(t_j) pi_k(t_j) (left sum over [0, T)),
// rhs = sum_j dt f(t_j) [K_k0(t_j) N + sum_{j'<=j} K_kl(t_j - t_j') sigma_l(t_j')], sigma as in operator_sources
// with stride 1.
class NpointWeights {
public:
    NpointWeights(const Potential& pot, const TimePoly& f, int k, int k_max, double dt, int steps)
        : pot_(pot), k_(k), k_max_(k_max), dt_(dt), steps_(steps) {
        if (k < 1 || k > k_max) throw std::invalid_argument("npoint: need 1 <= k <= k_max");
        fdt_.resize(static_cast<std::size_t>(steps));
        for (int j = 0; j < steps; ++j) fdt_[static_cast<std::size_t>(j)] = dt * f(j * dt);
        const Matrix gen = generator_matrix(pot, k_max);
        // K(m dt) by powers of the one-step propagator.
        const Matrix step = propagator_from_generator(gen, dt).entries;
        std::vector<Vector> krow(static_cast<std::size_t>(steps));  // row k of K(m dt)
        Matrix km = Matrix::Identity(k_max + 1, k_max + 1);
        for (int m = 0; m < steps; ++m) {
            krow[static_cast<std::size_t>(m)] = km.row(k).transpose();
            km = km * step;
        }
        w_ = Matrix::Zero(k_max, steps + 1);
        // pi_0 = N enters only through its initial transient
        for (int j = 0; j < steps; ++j) w0_ += fdt_[static_cast<std::size_t>(j)] * krow[static_cast<std::size_t>(j)](0);
        for (int jp = 0; jp < steps; ++jp)
            for (int j = jp; j < steps; ++j) {
                const Vector& kr = krow[static_cast<std::size_t>(j - jp)];
                for (int l = 1; l <= k_max; ++l) w_(l - 1, jp) += fdt_[static_cast<std::size_t>(j)] * kr(l);
            }
    }

    [[nodiscard]] double lhs(const ReplicaPath& p) const {
        check(p);
        double acc = 0.0;
        for (int j = 0; j < steps_; ++j) acc += fdt_[static_cast<std::size_t>(j)] * p.pi(k_, j);
        return acc;
    }
    [[nodiscard]] double rhs(const ReplicaPath& p) const {
        check(p);
        const Vector s = operator_sources(p, pot_, k_max_, 1);
        double acc = w0_ * p.particles;
        for (int jp = 0; jp <= steps_; ++jp)
            for (int l = 1; l <= k_max_; ++l) acc += w_(l - 1, jp) * s(static_cast<Eigen::Index>(jp) * k_max_ + (l - 1));
        return acc;
    }

private:
    void check(const ReplicaPath& p) const {
        if (p.steps != steps_ || p.dt != dt_) throw std::invalid_argument("npoint: replica grid mismatch");
    }
    Potential pot_;
    int k_, k_max_;
    double dt_;
    int steps_;
    std::vector<double> fdt_;
    double w0_ = 0.0;
    Matrix w_;
};

struct NpointResult {
    Estimate lhs, rhs, discrepancy;
};

// Independent ensembles for the two sides; they differ only in seed.
[[nodiscard]] inline NpointResult npoint_vs_kernel(const DbmConfig& lhs_cfg, std::uint64_t rhs_seed, const TimePoly& f,
                                                   int k, int k_max) {
    if (f.is_zero()) return {};
    const NpointWeights w(lhs_cfg.pot, f, k, k_max, lhs_cfg.dt, lhs_cfg.steps);
    DbmConfig rhs_cfg = lhs_cfg;
    rhs_cfg.seed = rhs_seed;
    auto [l, lr] = collect_rows(lhs_cfg, 1, [&w](const ReplicaPath& p, double* row) { row[0] = w.lhs(p); });
    auto [r, rr] = collect_rows(rhs_cfg, 1, [&w](const ReplicaPath& p, double* row) { row[0] = w.rhs(p); });
    (void)lr;
    (void)rr;
    NpointResult out{mean_se(l.col(0)), mean_se(r.col(0)), {}};
    out.discrepancy = difference(out.lhs, out.rhs);
    return out;
}

// Stored ensemble: first half of the replicas for the left side, second half for the right.
[[nodiscard]] inline NpointResult npoint_vs_kernel(const Ensemble& e, const TimePoly& f, int k, int k_max) {
    if (f.is_zero()) return {};
    if (e.replicas < 4) throw std::invalid_argument("npoint: need at least four replicas");
    const NpointWeights w(e.pot, f, k, k_max, e.dt, e.steps);
    const int half = e.replicas / 2;
    Vector l(half), r(e.replicas - half);
    for (int a = 0; a < half; ++a) l(a) = w.lhs(e.paths[static_cast<std::size_t>(a)]);
    for (int a = half; a < e.replicas; ++a) r(a - half) = w.rhs(e.paths[static_cast<std::size_t>(a)]);
    NpointResult out{mean_se(l), mean_se(r), {}};
    out.discrepancy = difference(out.lhs, out.rhs);
    return out;
}

// ---------------------------------------------------------------------------
// Raw path records: little-endian float64, header N, steps, M, dt, then paths replica-major.

namespace detail {
inline void put_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, sizeof u);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
    os.write(reinterpret_cast<const char*>(&u), sizeof u);
}
inline double get_f64(std::istream& is) {
    std::uint64_t u = 0;
    if (!is.read(reinterpret_cast<char*>(&u), sizeof u)) throw std::runtime_error("path record truncated");
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
    double v;
    std::memcpy(&v, &u, sizeof v);
    return v;
}
}  // namespace detail

inline void write_paths_binary(std::ostream& os, const Ensemble& e) {
    detail::put_f64(os, e.particles);
    detail::put_f64(os, e.steps);
    detail::put_f64(os, e.replicas);
    detail::put_f64(os, e.dt);
    for (const auto& p : e.paths)
        for (double v : p.lambda) detail::put_f64(os, v);
}

// Paths only; increments are rebuilt from the path and the drift of pot.
[[nodiscard]] inline Ensemble read_paths_binary(std::istream& is, const Potential& pot) {
    Ensemble e;
    e.particles = static_cast<int>(detail::get_f64(is));
    e.steps = static_cast<int>(detail::get_f64(is));
    e.replicas = static_cast<int>(detail::get_f64(is));
    e.dt = detail::get_f64(is);
    e.pot = pot;
    const ForceEval force(pot);
    std::vector<double> mu(static_cast<std::size_t>(e.particles));
    for (int r = 0; r < e.replicas; ++r) {
        ReplicaPath p;
        p.index = r;
        p.particles = e.particles;
        p.steps = e.steps;
        p.dt = e.dt;
        p.lambda.resize(static_cast<std::size_t>(e.steps + 1) * e.particles);
        for (double& v : p.lambda) v = detail::get_f64(is);
        p.noise.resize(static_cast<std::size_t>(e.steps) * e.particles);
        for (int j = 0; j < e.steps; ++j) {
            dbm_drift(p.at(j), e.particles, pot.beta, force, mu.data());
            for (int i = 0; i < e.particles; ++i)
                p.noise[static_cast<std::size_t>(j) * e.particles + i] =
                    p.at(j + 1)[i] - p.at(j)[i] - mu[static_cast<std::size_t>(i)] * e.dt;
        }
        e.paths.push_back(std::move(p));
    }
    return e;
}

// Mean and standard error of pi_k at every grid point.
inline void write_moment_csv(std::ostream& os, const Ensemble& e, int k_max) {
    os << "t";
    for (int k = 1; k <= k_max; ++k) os << ",mean_pi" << k << ",se_pi" << k;
    os << "\n";
    std::vector<Matrix> stats;
    for (int k = 1; k <= k_max; ++k) stats.push_back(linear_statistics(e, k));
    for (int j = 0; j <= e.steps; ++j) {
        os << j * e.dt;
        for (const auto& m : stats) {
            const Estimate est = mean_se(m.col(j));
            os << "," << est.value << "," << est.se;
        }
        os << "\n";
    }
}

}  // namespace dbmsv
