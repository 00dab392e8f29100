#pragma once

#include <cstddef>
#include <optional>

#include "prehoc/selectors.hpp"

namespace prehoc {

// Layer arguments here are depths l in [0, N]: simulated layer i sits at depth i + 1, so the
// top layer N gets the full exponent alpha (resp. gamma).

struct PsawConfig {
    std::optional<std::size_t> start_layer;  // l_s; unset means floor(3N/4)
    double phi = 0.7;
    double alpha = 1.0;

    std::size_t start(std::size_t n_layers) const { return start_layer.value_or((3 * n_layers) / 4); }
    void validate(std::size_t n_layers) const;
    bool operator==(const PsawConfig&) const = default;
};

struct EtfConfig {
    std::optional<std::size_t> start_layer;
    double psi = 0.5;
    double gamma = 1.0;

    std::size_t start(std::size_t n_layers) const { return start_layer.value_or((3 * n_layers) / 4); }
    void validate(std::size_t n_layers) const;
    bool operator==(const EtfConfig&) const = default;
};

/// Earliest visible non-sink position: 0 below l_s, else floor((1 - phi^(alpha (l - l_s)/(N - l_s))) t).
/// When N == l_s the exponent is taken as alpha (top layer).
std::size_t psaw_boundary(std::size_t layer, std::size_t t, std::size_t n_layers, const PsawConfig& cfg);

/// {0..c_sink-1} U {boundary..t-1}.
IndexSet psaw_visible_set(std::size_t boundary, std::size_t t, std::size_t c_sink);

/// Positions in [c_sink, boundary): the masked range.
IndexSet psaw_masked_set(std::size_t boundary, std::size_t t, std::size_t c_sink);

/// Last frozen non-sink index boundary, same schedule with (psi, gamma).
std::size_t etf_boundary(std::size_t layer, std::size_t t, std::size_t n_layers, const EtfConfig& cfg);

/// Positions in [c_sink, boundary) that reuse the previous layer's keys/values.
IndexSet etf_frozen_set(std::size_t boundary, std::size_t t, std::size_t c_sink);

enum class Phase { Prefill, Decode };

/// Intersects a CIS (or any base) selection with the PSAW visible set; sinks always survive.
/// If nothing but sinks survives, falls back to sinks + local window and flags it. ETF-frozen
/// positions are attached in prefill only; decode never masks for ETF.
SelectionResult compose_cpe(const SelectionResult& base, const IndexSet& psaw_visible, const IndexSet& etf_frozen,
                            const BudgetSpec& budget, std::size_t t, Phase phase);

}  // namespace prehoc
