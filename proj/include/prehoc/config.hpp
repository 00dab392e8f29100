#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "prehoc/bounds.hpp"
#include "prehoc/decode_sim.hpp"

namespace prehoc {

/// Thrown for malformed or unknown configuration entries; the CLI maps it to exit code 2.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct BoundsConfig {
    CertificateInput cert;
    double delta_star = 0.0;  // oracle dropped mass fed to the implied MI bound
    std::size_t context_len = 1000;  // t used for tuning and the top-layer PSAW window
    bool operator==(const BoundsConfig&) const = default;
};

struct OutputConfig {
    std::string dir = ".";
    std::string format = "csv";  // csv | json (per-step trace format)
    std::string run_id = "run";
    bool operator==(const OutputConfig&) const = default;
};

/// Sections: generator.*, head.*, selector.* (with budget/cis/psaw/etf/qaa), bounds.*, output.*.
struct ExperimentConfig {
    SimConfig sim;
    BoundsConfig bounds;
    OutputConfig output;

    bool operator==(const ExperimentConfig&) const = default;
};

struct ConfigKey {
    std::string key;
    std::string description;
};

/// Every addressable dotted key with a one-line description, in serialization order.
const std::vector<ConfigKey>& config_keys();

/// Sets one dotted key from its text form. Throws ConfigError on unknown keys or bad values.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);

/// `key = value` lines; '#' starts a comment; blank lines ignored. `source` names the input in errors.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::string& path);

/// Applies `key=value` overrides in order.
void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides);

/// Every key, full precision; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

/// Shortest decimal form that round-trips to the same double.
std::string format_double(double v);

}  // namespace prehoc
