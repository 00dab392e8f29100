#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "prehoc/bounds.hpp"
#include "prehoc/config.hpp"
#include "prehoc/decode_sim.hpp"

namespace prehoc {

struct Column {
    std::string name;
    std::string description;
};

/// Per-(step, layer, head) trace columns, in output order. Append-only.
const std::vector<Column>& trace_columns();
/// Per-(position, layer, head) prefill columns, in output order. Append-only.
const std::vector<Column>& prefill_columns();

/// One row per (step, layer, head); empty optional cells are written as empty fields.
std::string trace_csv(const DecodeTrace& trace, const std::string& run_id, std::uint64_t seed);
std::string prefill_csv(const DecodeTrace& trace, const std::string& run_id, std::uint64_t seed);
/// The same rows as a JSON array of objects keyed by column name (empty cells are null).
nlohmann::json trace_json(const DecodeTrace& trace, const std::string& run_id, std::uint64_t seed);

nlohmann::json summary_json(const DecodeTrace& trace, const ExperimentConfig& cfg);
nlohmann::json to_json(const BoundReport& r);
nlohmann::json to_json(const PerturbationReport& r);

/// Certificates, tuning and implied pre-hoc MI bounds for `cmd_certify`.
nlohmann::json certificate_json(const ExperimentConfig& cfg);

}  // namespace prehoc
