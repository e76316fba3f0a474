#pragma once
// Verification suites behind the command-line driver.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "dbmsv/kernel.hpp"

namespace dbmsv::cli {

[[nodiscard]] std::string report_schema_version();

const std::vector<std::string>& suite_names();

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Scenario {
    std::string suite;
    Potential pot;
    int particles = 0;
    double dt = 0.0;
    double t_end = 0.0;
    int k_max = 0;
    int replicas = 0;
    std::uint64_t seed = 0;
    int threads = 1;
    std::map<std::string, double> tolerances;
    nlohmann::json options = nlohmann::json::object();
    std::string out_dir;
    bool csv = true;
    bool flip_generator_sign = false;

    [[nodiscard]] double tol(const std::string& key, double fallback) const {
        auto it = tolerances.find(key);
        return it == tolerances.end() ? fallback : it->second;
    }
    template <class T>
    [[nodiscard]] T option(const std::string& key, T fallback) const {
        return options.contains(key) ? options.at(key).get<T>() : fallback;
    }
};

struct Check {
    std::string name;
    std::string anchor;
    double value = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct Table {
    std::string name;
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

struct SuiteResult {
    std::string suite;
    std::vector<Check> checks;
    std::vector<Table> tables;
    std::vector<std::string> notes;

    [[nodiscard]] bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return !checks.empty();
    }
};

// Validates and converts a scenario object; throws ConfigError.
[[nodiscard]] Scenario parse_scenario(const nlohmann::json& j);

// Scenario reproducing the acceptance setting of a suite.
[[nodiscard]] nlohmann::json default_scenario(const std::string& suite);

[[nodiscard]] SuiteResult run_suite(const Scenario& s);

[[nodiscard]] nlohmann::json report_json(const Scenario& s, const SuiteResult& r);

// Writes <suite>_report.json and one CSV per table; returns the written paths.
std::vector<std::string> write_outputs(const Scenario& s, const SuiteResult& r, const std::string& dir);

// Full command line: run <config.json> [--out DIR] [--seed S] [--threads N].
// Returns 0 when every check passes, 1 on a failed check, 2 on a config error.
int cli_main(int argc, char** argv);

inline constexpr const char* kOutDirEnv = "DBMSV_OUT_DIR";

}  // namespace dbmsv::cli
