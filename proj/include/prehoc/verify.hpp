#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace prehoc {

struct VerifyOptions {
    std::uint64_t seed = 0;
    std::optional<std::size_t> trials;  // per-suite default when unset
    std::size_t max_len = 12;     // oracle-optimal
    std::size_t max_budget = 6;   // oracle-optimal
    std::size_t channels = 200;   // mi-channel
    bool bound_only = false;      // mi-channel: check |I_full - I_S| <= g only
    bool keep_records = true;
};

struct SuiteResult {
    std::string suite;
    bool passed = true;
    std::size_t trials = 0;
    std::size_t failures = 0;
    double worst_slack = 0.0;  // min over trials of (rhs - lhs); negative on failure
    std::optional<nlohmann::json> first_counterexample;
    std::vector<nlohmann::json> records;
    nlohmann::json details = nlohmann::json::object();

    nlohmann::json summary() const;
};

/// tv-identity, mi-channel, kl-identity, softmax-lipschitz, oracle-optimal, mass-loss,
/// centroid-drift, cis-guarantee, psaw-bound, etf-bound, dominance-chain.
const std::vector<std::string>& suite_names();
bool is_suite(const std::string& name);

/// Runs one property suite. Throws std::invalid_argument for an unknown suite.
SuiteResult run_suite(const std::string& name, const VerifyOptions& opts);

}  // namespace prehoc
