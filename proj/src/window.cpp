#include "prehoc/window.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace prehoc {

namespace {

void validate_schedule(std::optional<std::size_t> start, std::size_t n_layers, double base, double power,
                       const char* name, bool power_strict) {
    const std::size_t ls = start.value_or((3 * n_layers) / 4);
    std::ostringstream os;
    if (ls > n_layers) {
        os << name << ".start_layer " << ls << " exceeds layer count " << n_layers;
        throw std::invalid_argument(os.str());
    }
    if (!(base > 0.0 && base < 1.0)) {
        os << name << " base must lie in (0, 1), got " << base;
        throw std::invalid_argument(os.str());
    }
    if (power_strict ? !(power > 0.0) : !(power >= 0.0)) {
        os << name << " exponent must be " << (power_strict ? "> 0" : ">= 0") << ", got " << power;
        throw std::invalid_argument(os.str());
    }
}

std::size_t schedule_boundary(std::size_t layer, std::size_t t, std::size_t n_layers, std::size_t ls, double base,
                              double power) {
    if (layer > n_layers) {
        std::ostringstream os;
        os << "layer depth " << layer << " exceeds layer count " << n_layers;
        throw std::invalid_argument(os.str());
    }
    if (layer < ls) return 0;
    const double frac = n_layers == ls ? 1.0 : static_cast<double>(layer - ls) / static_cast<double>(n_layers - ls);
    const double keep = std::pow(base, power * frac);
    const double b = std::floor((1.0 - keep) * static_cast<double>(t));
    return b <= 0.0 ? 0 : std::min(t, static_cast<std::size_t>(b));
}

}  // namespace

void PsawConfig::validate(std::size_t n_layers) const {
    validate_schedule(start_layer, n_layers, phi, alpha, "psaw", false);
}

void EtfConfig::validate(std::size_t n_layers) const {
    validate_schedule(start_layer, n_layers, psi, gamma, "etf", true);
}

std::size_t psaw_boundary(std::size_t layer, std::size_t t, std::size_t n_layers, const PsawConfig& cfg) {
    return schedule_boundary(layer, t, n_layers, cfg.start(n_layers), cfg.phi, cfg.alpha);
}

std::size_t etf_boundary(std::size_t layer, std::size_t t, std::size_t n_layers, const EtfConfig& cfg) {
    return schedule_boundary(layer, t, n_layers, cfg.start(n_layers), cfg.psi, cfg.gamma);
}

IndexSet psaw_visible_set(std::size_t boundary, std::size_t t, std::size_t c_sink) {
    if (boundary > t) throw std::invalid_argument("psaw boundary beyond context length");
    IndexSet s;
    const std::size_t sinks = std::min(c_sink, t);
    for (std::size_t i = 0; i < sinks; ++i) s.push_back(i);
    for (std::size_t i = std::max(boundary, sinks); i < t; ++i) s.push_back(i);
    return s;
}

IndexSet psaw_masked_set(std::size_t boundary, std::size_t t, std::size_t c_sink) {
    if (boundary > t) throw std::invalid_argument("psaw boundary beyond context length");
    IndexSet s;
    for (std::size_t i = c_sink; i < boundary; ++i) s.push_back(i);
    return s;
}

IndexSet etf_frozen_set(std::size_t boundary, std::size_t t, std::size_t c_sink) {
    return psaw_masked_set(boundary, t, c_sink);
}

SelectionResult compose_cpe(const SelectionResult& base, const IndexSet& psaw_visible, const IndexSet& etf_frozen,
                            const BudgetSpec& budget, std::size_t t, Phase phase) {
    SelectionResult out = base;
    IndexSet sinks;
    for (std::size_t i = 0; i < std::min(budget.c_sink, t); ++i) sinks.push_back(i);
    out.selected = set_union(set_intersection(base.selected, psaw_visible), set_intersection(base.selected, sinks));
    const bool only_sinks = set_intersection(out.selected, sinks).size() == out.selected.size();
    if (only_sinks) {
        out.selected = set_intersection(sink_local_set(budget, t), set_union(psaw_visible, sinks));
        if (out.selected.empty()) out.selected = sink_local_set(budget, t);
        out.fallback = true;
    }
    out.frozen = phase == Phase::Prefill ? etf_frozen : IndexSet{};
    out.finalize();
    return out;
}

}  // namespace prehoc
