// Acceptance run: one line per criterion, nonzero exit if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "suites.hpp"

using namespace dbmsv::cli;
using nlohmann::json;

namespace {

struct Timed {
    SuiteResult result;
    double seconds = 0.0;
};

std::string out_dir = "acceptance_out";
int workers = 1;

Timed run(json scenario, const std::string& tag) {
    scenario["threads"] = workers;
    const Scenario s = parse_scenario(scenario);
    const auto t0 = std::chrono::steady_clock::now();
    Timed t{run_suite(s), 0.0};
    t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    (void)write_outputs(s, t.result, out_dir + "/" + tag);
    return t;
}

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

struct Criterion {
    int id;
    std::string title;
    std::vector<Check> checks;
    double runtime = -1.0;
    double runtime_limit = -1.0;

    Criterion(int i, std::string t) : id(i), title(std::move(t)) {}

    void take(const SuiteResult& r, const std::function<bool(const Check&)>& pick) {
        for (const auto& c : r.checks)
            if (pick(c)) checks.push_back(c);
    }
    [[nodiscard]] bool pass() const {
        if (checks.empty()) return false;
        for (const auto& c : checks)
            if (!c.pass) return false;
        return runtime_limit < 0 || runtime <= runtime_limit;
    }
    void print() const {
        int failed = 0;
        const Check* worst = nullptr;
        double worst_ratio = -1.0;
        for (const auto& c : checks) {
            if (!c.pass) ++failed;
            const double ratio = c.tolerance > 0 ? c.value / c.tolerance : (c.value > 0 ? 1e300 : 0.0);
            if (ratio > worst_ratio) {
                worst_ratio = ratio;
                worst = &c;
            }
        }
        std::printf("[%s] criterion %2d %-34s checks %zu, failed %d", pass() ? "PASS" : "FAIL", id, title.c_str(),
                    checks.size(), failed);
        if (worst != nullptr)
            std::printf("; tightest %s = %.3g (tol %.3g)", worst->name.c_str(), worst->value, worst->tolerance);
        if (runtime_limit > 0) std::printf("; runtime %.1f s (limit %.0f s)", runtime, runtime_limit);
        std::printf("\n");
        for (const auto& c : checks)
            if (!c.pass) std::printf("        failing %s = %.4g (tol %.3g): %s\n", c.name.c_str(), c.value, c.tolerance,
                                     c.anchor.c_str());
    }
};

auto any = [](const Check&) { return true; };
auto prefix(std::initializer_list<const char*> ps) {
    std::vector<std::string> v(ps.begin(), ps.end());
    return [v](const Check& c) {
        for (const auto& p : v)
            if (starts_with(c.name, p)) return true;
        return false;
    };
}

}  // namespace

int main(int argc, char** argv) {
    if (argc > 1) out_dir = argv[1];
    workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    std::filesystem::create_directories(out_dir);
    std::vector<Criterion> cs;

    // Kernel: two force laws.
    json kg = default_scenario("kernel-identities");
    const Timed k1 = run(kg, "kernel_b2");
    kg["potential"]["b"] = {{"1", 0.5}, {"2", 0.3}};
    const Timed k2 = run(kg, "kernel_b12");

    Criterion c1{1, "kernel route equivalence"};
    c1.take(k1.result, prefix({"closed_vs_exponential"}));
    c1.take(k2.result, prefix({"closed_vs_exponential"}));
    c1.runtime = k1.seconds + k2.seconds;
    c1.runtime_limit = 5.0;
    cs.push_back(c1);

    Criterion c2{2, "Hermite beta=2 diagonal kernel"};
    c2.take(k1.result, prefix({"hermite_beta2"}));
    cs.push_back(c2);

    Criterion c3{3, "Hermite beta in {1,4} closed form"};
    c3.take(k1.result, prefix({"hermite_closed_form"}));
    bool documented = false;
    for (const auto& n : k1.result.notes) documented = documented || n.find("printed form") != std::string::npos;
    c3.checks.push_back({"corrected_rate_documented", "report notes the corrected rate", documented ? 0.0 : 1.0, 0.0,
                         documented});
    cs.push_back(c3);

    Criterion c4{4, "semigroup, Kolmogorov, lemma"};
    auto identities = prefix({"semigroup", "forward_equation", "backward_equation", "lemma_"});
    c4.take(k1.result, identities);
    c4.take(k2.result, identities);
    cs.push_back(c4);

    const Timed boson = run(default_scenario("boson-commutators"), "boson");
    Criterion c5{5, "boson algebra on the grid"};
    c5.take(boson.result, any);
    cs.push_back(c5);

    json sv = default_scenario("sv-algebra");
    sv["options"]["mc_constraint"] = false;
    const Timed svr = run(sv, "sv_relations");
    Criterion c6{6, "SV bracket relations, first order"};
    c6.take(svr.result, any);
    c6.runtime = svr.seconds;
    c6.runtime_limit = 120.0;
    cs.push_back(c6);

    const Timed herm = run(default_scenario("hermite-example"), "hermite_example");
    Criterion c7{7, "Hermite pair cancellations"};
    c7.take(herm.result, any);
    cs.push_back(c7);

    const Timed mom = run(default_scenario("dbm-moments"), "dbm_moments");
    Criterion c8{8, "DBM moments"};
    c8.take(mom.result, prefix({"first_moment", "long_time", "noise_variance"}));
    c8.runtime = mom.seconds;
    c8.runtime_limit = 180.0;
    cs.push_back(c8);

    const Timed eq = run(default_scenario("equilibrium-loop"), "equilibrium_loop");
    Criterion c9{9, "loop equations"};
    c9.take(eq.result, any);
    cs.push_back(c9);

    Criterion c10{10, "moment hierarchy"};
    c10.take(mom.result, prefix({"hierarchy", "action_mean"}));
    cs.push_back(c10);

    const Timed gir = run(default_scenario("girsanov"), "girsanov");
    Criterion c11{11, "Girsanov reweighting"};
    c11.take(gir.result, any);
    cs.push_back(c11);

    const Timed np = run(default_scenario("npoint"), "npoint");
    Criterion c12{12, "n-point vs kernel"};
    c12.take(np.result, any);
    cs.push_back(c12);

    json mc = default_scenario("sv-algebra");
    mc["options"]["relations"] = false;
    const Timed con = run(mc, "sv_constraints");
    Criterion c13{13, "dynamical constraints, order tau^0"};
    c13.take(con.result, any);
    cs.push_back(c13);

    const Timed br = run(default_scenario("np-brackets"), "np_brackets");
    Criterion c14{14, "NP brackets"};
    c14.take(br.result, any);
    cs.push_back(c14);

    int failed = 0;
    for (const auto& c : cs) {
        c.print();
        if (!c.pass()) ++failed;
    }
    std::printf("acceptance: %zu criteria, %d failed; reports in %s\n", cs.size(), failed, out_dir.c_str());
    return failed == 0 ? 0 : 1;
}
