#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "suites.hpp"

using namespace dbmsv::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("dbmsv_cli_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "scenario.json") {
    const fs::path p = dir / name;
    std::ofstream(p) << j.dump(2);
    return p;
}

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "dbmsv_cli");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

// Small ensemble scenario that exercises the threaded simulation path quickly.
json small_moments() {
    json j = default_scenario("dbm-moments");
    j["N"] = 3;
    j["M"] = 300;
    j["grid"] = {{"dt", 2e-3}, {"T", 0.6}};
    j["options"] = {{"shift", 1.0}, {"times", {0.2, 0.4}}, {"tail_start", 0.4}, {"window_split", 0.3}};
    return j;
}

const Check* find_check(const SuiteResult& r, const std::string& name) {
    for (const auto& c : r.checks)
        if (c.name == name) return &c;
    return nullptr;
}

}  // namespace

TEST(Cli, SchemaVersion) { EXPECT_EQ(report_schema_version(), "1.0.0"); }

TEST(Cli, DefaultsParseAndMatchShippedConfigs) {
    ASSERT_EQ(suite_names().size(), 9u);
    for (const auto& name : suite_names()) {
        const json d = default_scenario(name);
        const Scenario s = parse_scenario(d);
        EXPECT_EQ(s.suite, name);
        const fs::path shipped = fs::path(DBMSV_SOURCE_DIR) / "configs" / (name + ".json");
        ASSERT_TRUE(fs::exists(shipped)) << shipped;
        EXPECT_EQ(json::parse(slurp(shipped)), d) << name;
    }
    EXPECT_THROW((void)default_scenario("nope"), ConfigError);
}

TEST(Cli, PhysicalConstantsHaveNoHiddenDefaults) {
    const json base = default_scenario("kernel-identities");
    for (auto path : {json::json_pointer("/potential/beta"), json::json_pointer("/grid/dt"), json::json_pointer("/seed"),
                      json::json_pointer("/potential/b"), json::json_pointer("/N"), json::json_pointer("/K_max")}) {
        json j = base;
        j.at(path.parent_pointer()).erase(path.back());
        EXPECT_THROW((void)parse_scenario(j), ConfigError) << path.to_string();
    }
}

TEST(Cli, RejectsMalformedScenarios) {
    const json base = default_scenario("kernel-identities");
    auto with = [&](const std::string& ptr, json v) {
        json j = base;
        j[json::json_pointer(ptr)] = std::move(v);
        return j;
    };
    EXPECT_THROW((void)parse_scenario(json::array()), ConfigError);
    EXPECT_THROW((void)parse_scenario(with("/suite", "unknown-suite")), ConfigError);
    EXPECT_THROW((void)parse_scenario(with("/extra", 1)), ConfigError);
    EXPECT_THROW((void)parse_scenario(with("/potential/beta", -1.0)), ConfigError);
    EXPECT_THROW((void)parse_scenario(with("/potential/b", {{"x", 1.0}})), ConfigError);
    EXPECT_THROW((void)parse_scenario(with("/potential/b", {{"-1", 1.0}})), ConfigError);
    EXPECT_THROW((void)parse_scenario(with("/grid/dt", 0.0)), ConfigError);
    EXPECT_THROW((void)parse_scenario(with("/grid/dt", "0.1")), ConfigError);
    EXPECT_THROW((void)parse_scenario(with("/seed", -3)), ConfigError);
    EXPECT_THROW((void)parse_scenario(with("/N", 2.5)), ConfigError);
    EXPECT_THROW((void)parse_scenario(with("/threads", 0)), ConfigError);
    EXPECT_THROW((void)parse_scenario(with("/tolerances/z", -1.0)), ConfigError);
    EXPECT_THROW((void)parse_scenario(with("/K_max", 1)), ConfigError);  // below the force power 2
    json m = default_scenario("dbm-moments");
    m["potential"]["b"] = {{"1", 0.5}, {"3", 0.1}};
    EXPECT_THROW((void)parse_scenario(m), ConfigError);
    json h = default_scenario("hermite-example");
    h["potential"]["beta"] = 1.0;
    EXPECT_THROW((void)parse_scenario(h), ConfigError);
    json bad_option = default_scenario("kernel-identities");
    bad_option["options"]["times"] = "soon";
    EXPECT_THROW((void)run_suite(parse_scenario(bad_option)), ConfigError);
}

TEST(Cli, DefaultKernelScenarioPasses) {
    const Scenario s = parse_scenario(default_scenario("kernel-identities"));
    const SuiteResult r = run_suite(s);
    EXPECT_TRUE(r.all_pass());
    for (const auto& c : r.checks) EXPECT_TRUE(c.pass) << c.name << " " << c.value;
}

TEST(Cli, EmptyForceAtBetaTwoIsTheIdentityKernel) {
    json j = default_scenario("kernel-identities");
    j["potential"]["b"] = json::object();
    j["options"]["betas"] = {2.0};
    const SuiteResult r = run_suite(parse_scenario(j));
    EXPECT_TRUE(r.all_pass());
    for (const auto& c : r.checks)
        if (c.name.rfind("semigroup", 0) == 0 || c.name.rfind("closed_vs", 0) == 0) {
            EXPECT_EQ(c.value, 0.0) << c.name;
        }
    const Table* km = nullptr;
    for (const auto& t : r.tables)
        if (t.name == "kernel") km = &t;
    ASSERT_NE(km, nullptr);
    for (const auto& row : km->rows) EXPECT_EQ(row[3], row[0] == row[1] ? 1.0 : 0.0);
}

TEST(Cli, FlippedGeneratorSignFailsOnlyTheSemigroup) {
    json j = default_scenario("kernel-identities");
    j["debug"] = {{"flip_generator_sign", true}};
    const SuiteResult r = run_suite(parse_scenario(j));
    EXPECT_FALSE(r.all_pass());
    for (const auto& c : r.checks) {
        if (c.name.rfind("semigroup", 0) == 0) {
            EXPECT_FALSE(c.pass) << c.name;
        } else {
            EXPECT_TRUE(c.pass) << c.name;
        }
    }
    const fs::path dir = scratch_dir("flip");
    const fs::path cfg = write_config(dir, default_scenario("kernel-identities"));
    EXPECT_EQ(run_cli({"run", cfg.string(), "--out", (dir / "a").string()}), 0);
    EXPECT_EQ(run_cli({"run", cfg.string(), "--out", (dir / "b").string(), "--flip-generator-sign"}), 1);
    const json rep = json::parse(slurp(dir / "b" / "kernel-identities_report.json"));
    EXPECT_FALSE(rep.at("pass").get<bool>());
    EXPECT_TRUE(rep.at("scenario").at("debug").at("flip_generator_sign").get<bool>());
}

TEST(Cli, ExitCodes) {
    const fs::path dir = scratch_dir("exit");
    EXPECT_EQ(run_cli({"run", (dir / "missing.json").string()}), 2);
    std::ofstream(dir / "broken.json") << "{ \"suite\": ";
    EXPECT_EQ(run_cli({"run", (dir / "broken.json").string()}), 2);
    json no_seed = default_scenario("boson-commutators");
    no_seed.erase("seed");
    EXPECT_EQ(run_cli({"run", write_config(dir, no_seed, "noseed.json").string(), "--out", dir.string()}), 2);
    json bad_opt = default_scenario("kernel-identities");
    bad_opt["options"]["betas"] = {"two"};
    EXPECT_EQ(run_cli({"run", write_config(dir, bad_opt, "badopt.json").string(), "--out", dir.string()}), 2);
    EXPECT_EQ(run_cli({"run", write_config(dir, default_scenario("boson-commutators")).string(), "--out",
                       (dir / "ok").string()}),
              0);
    EXPECT_EQ(run_cli({"run"}), 2);
    EXPECT_EQ(run_cli({"frobnicate"}), 2);
    EXPECT_EQ(run_cli({"run", write_config(dir, default_scenario("boson-commutators")).string(), "--threads", "0"}),
              2);
}

TEST(Cli, OutputDirectoryPrecedence) {
    const fs::path dir = scratch_dir("outdir");
    json j = default_scenario("boson-commutators");
    j["output"]["dir"] = (dir / "from_config").string();
    const fs::path cfg = write_config(dir, j);
    const std::string report = "boson-commutators_report.json";

    ::unsetenv(kOutDirEnv);
    ASSERT_EQ(run_cli({"run", cfg.string()}), 0);
    EXPECT_TRUE(fs::exists(dir / "from_config" / report));

    ::setenv(kOutDirEnv, (dir / "from_env").c_str(), 1);
    ASSERT_EQ(run_cli({"run", cfg.string()}), 0);
    EXPECT_TRUE(fs::exists(dir / "from_env" / report));

    ASSERT_EQ(run_cli({"run", cfg.string(), "--out", (dir / "from_flag").string()}), 0);
    EXPECT_TRUE(fs::exists(dir / "from_flag" / report));
    ::unsetenv(kOutDirEnv);
}

TEST(Cli, ReportStructure) {
    const Scenario s = parse_scenario(default_scenario("np-brackets"));
    const SuiteResult r = run_suite(s);
    const json rep = report_json(s, r);
    EXPECT_EQ(rep.at("schema_version"), "1.0.0");
    EXPECT_EQ(rep.at("suite"), "np-brackets");
    ASSERT_EQ(rep.at("checks").size(), r.checks.size());
    bool all = true;
    for (const auto& c : rep.at("checks")) {
        for (const char* key : {"name", "anchor", "value", "tolerance", "pass"}) EXPECT_TRUE(c.contains(key)) << key;
        EXPECT_FALSE(c.at("anchor").get<std::string>().empty());
        all = all && c.at("pass").get<bool>();
    }
    EXPECT_EQ(rep.at("pass").get<bool>(), all);
    EXPECT_FALSE(rep.at("scenario").contains("threads"));
    EXPECT_FALSE(rep.at("scenario").contains("output"));

    const fs::path dir = scratch_dir("structure");
    const auto files = write_outputs(s, r, dir.string());
    ASSERT_EQ(files.size(), 1 + r.tables.size());
    for (const auto& t : r.tables) {
        std::istringstream csv(slurp(dir / ("np-brackets_" + t.name + ".csv")));
        std::string header;
        std::getline(csv, header);
        std::string want;
        for (std::size_t i = 0; i < t.header.size(); ++i) want += (i ? "," : "") + t.header[i];
        EXPECT_EQ(header, want);
        std::size_t lines = 0;
        for (std::string line; std::getline(csv, line);) ++lines;
        EXPECT_EQ(lines, t.rows.size());
    }
}

TEST(Cli, ReportsAreBitwiseIdenticalAcrossRunsAndWorkerCounts) {
    const fs::path dir = scratch_dir("repro");
    const fs::path cfg = write_config(dir, small_moments());
    ASSERT_NE(run_cli({"run", cfg.string(), "--out", (dir / "t1").string(), "--threads", "1"}), 2);
    ASSERT_NE(run_cli({"run", cfg.string(), "--out", (dir / "t1b").string(), "--threads", "1"}), 2);
    ASSERT_NE(run_cli({"run", cfg.string(), "--out", (dir / "t3").string(), "--threads", "3"}), 2);
    std::size_t compared = 0;
    for (const auto& e : fs::directory_iterator(dir / "t1")) {
        const std::string name = e.path().filename().string();
        const std::string a = slurp(e.path());
        EXPECT_FALSE(a.empty());
        EXPECT_EQ(a, slurp(dir / "t1b" / name)) << name;
        EXPECT_EQ(a, slurp(dir / "t3" / name)) << name;
        ++compared;
    }
    EXPECT_GE(compared, 3u);
    // A different seed changes the numbers.
    ASSERT_NE(run_cli({"run", cfg.string(), "--out", (dir / "s2").string(), "--seed", "99"}), 2);
    EXPECT_NE(slurp(dir / "t1" / "dbm-moments_report.json"), slurp(dir / "s2" / "dbm-moments_report.json"));
}

TEST(Cli, SmallEnsembleChecksAreStatistical) {
    const SuiteResult r = run_suite(parse_scenario(small_moments()));
    const Check* c = find_check(r, "noise_variance");
    ASSERT_NE(c, nullptr);
    EXPECT_EQ(c->tolerance, 4.0);
    ASSERT_NE(find_check(r, "first_moment_t0.2"), nullptr);
    ASSERT_NE(find_check(r, "hierarchy_k4_w1"), nullptr);
    ASSERT_NE(find_check(r, "action_mean_k1_w0"), nullptr);
}
