#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prehoc/attention.hpp"

namespace prehoc {

enum class GeneratorKind { RandomWalk, ExpDecayChannel };

std::string to_string(GeneratorKind k);
GeneratorKind parse_generator_kind(const std::string& s);

struct SynthGenConfig {
    std::uint64_t seed = 0;
    GeneratorKind kind = GeneratorKind::RandomWalk;

    // RandomWalk: e_{t+1} = normalize((1 - walk_rate) e_t + walk_rate * noise).
    double walk_rate = 0.1;
    // Typical key norm; queries are unit-norm when unit_queries is set.
    double weight_scale = 8.0;
    bool unit_queries = true;

    // ExpDecayChannel, per layer (a single entry broadcasts to every layer).
    std::vector<double> decay_rate{0.05};   // lambda_l, rho_l = exp(-lambda_l)
    std::vector<double> sink_mass{0.2};     // tau_sink lower bound
    std::vector<double> decay_factor{0.8};  // kappa_l, must not exceed 1 - tau_sink
    std::size_t sink_count = 4;

    // Cross-layer key updates: ||k^(l) - k^(l-1)|| <= B * exp(-mu * max(0, l - l_ref)).
    double key_update_bound = 0.5;  // B
    double key_update_rate = 0.5;   // mu
    /// Depth l_ref at which updates start decaying; unset means floor(3N/4).
    std::optional<std::size_t> update_ref_layer;

    void validate(std::size_t n_layers) const;
    double lambda_at(std::size_t layer) const;
    double kappa_at(std::size_t layer) const;
    double sink_mass_at(std::size_t layer) const;
    std::size_t ref_layer(std::size_t n_layers) const;

    bool operator==(const SynthGenConfig&) const = default;
};

/// Deterministic synthetic decode stream. Layers are indexed 0..N-1 and sit at depth
/// layer + 1; depth 0 holds the base key projections that the first layer updates.
/// Position p's query attends to keys [0, p].
class DecodeStream {
public:
    DecodeStream(SynthGenConfig cfg, HeadConfig head, std::size_t prefill_len, std::size_t steps);

    std::size_t prefill_len() const { return prefill_; }
    std::size_t steps() const { return steps_; }
    std::size_t max_length() const { return prefill_ + steps_; }
    /// Context length seen by decode step `step` (the current token included).
    std::size_t length_at_step(std::size_t step) const { return prefill_ + step + 1; }

    const SynthGenConfig& config() const { return cfg_; }
    const HeadConfig& head_config() const { return head_; }

    AttentionInstance at_position(std::size_t pos, std::size_t layer, std::size_t head) const;
    AttentionInstance decode_instance(std::size_t step, std::size_t layer, std::size_t head) const {
        return at_position(prefill_ + step, layer, head);
    }

    /// Keys [0, pos] one depth below `layer` (what a frozen token would reuse).
    Matrix previous_layer_keys(std::size_t pos, std::size_t layer, std::size_t head) const;

    /// Update-norm cap applied when producing `layer`'s keys from the depth below.
    double key_update_cap(std::size_t layer) const;

    /// Exp-decay channel probabilities for a context of `length` tokens at `layer`.
    Vector exp_decay_probs(std::size_t length, std::size_t layer) const;

private:
    std::size_t key_slot(std::size_t depth, std::size_t head) const { return depth * head_.heads + head; }
    std::size_t slot(std::size_t layer, std::size_t head) const { return layer * head_.heads + head; }

    void build_random_walk();

    SynthGenConfig cfg_;
    HeadConfig head_;
    std::size_t prefill_;
    std::size_t steps_;

    std::vector<Matrix> keys_;     // (N + 1) * H depths
    std::vector<Matrix> queries_;  // N * H
    std::vector<Matrix> values_;   // N * H
};

DecodeStream gen_decode_stream(const SynthGenConfig& cfg, const HeadConfig& head, std::size_t prefill_len,
                               std::size_t steps);

}  // namespace prehoc
