#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "prehoc/attention.hpp"

namespace prehoc {

/// Small discrete channel X -> T -> Y = symbol_x(T): context x draws an index T from the
/// attention of the fixed query over its keys, and the routed value symbol is observed.
struct ChannelModel {
    struct Context {
        Matrix keys;                       // L x d
        std::vector<std::size_t> symbols;  // value symbol per index, < alphabet
    };

    std::vector<Context> contexts;
    Vector prior;  // over contexts
    std::size_t alphabet = 2;
    Vector query;

    static constexpr std::size_t kMaxContexts = 16;
    static constexpr std::size_t kMaxLength = 12;
    static constexpr std::size_t kMaxAlphabet = 8;

    std::size_t length() const { return contexts.empty() ? 0 : contexts.front().keys.rows(); }
    /// Enumeration guard plus shape and normalization checks.
    void validate() const;
};

struct ChannelMi {
    double mi = 0.0;         // I(X; Y) in nats
    double delta_sup = 0.0;  // sup over contexts of the dropped mass (0 when untruncated)
    std::vector<double> delta_per_context;
};

/// Exact I(X; Y) by enumeration. With `selected`, T | X = x follows the attention truncated to S
/// and renormalized; otherwise the full attention.
ChannelMi exact_mi_channel(const ChannelModel& ch, const std::optional<IndexSet>& selected = std::nullopt);

/// Direct form used for cross-checking: mutual information of a joint table p(x, y).
double mutual_information(const std::vector<Vector>& joint);

struct ChannelGenConfig {
    std::size_t max_contexts = 8;
    std::size_t max_length = 8;
    std::size_t max_alphabet = 4;
    std::size_t d = 4;
    double logit_scale = 2.0;
};

/// Random channel with |X|, L, |alphabet| drawn uniformly from [2, max]; stream keyed by (seed, trial).
ChannelModel random_channel(const ChannelGenConfig& cfg, std::uint64_t seed, std::uint64_t trial);

/// Random nonempty proper-or-full subset of [0, L), same keying with a different stream.
IndexSet random_selection(std::size_t length, std::uint64_t seed, std::uint64_t trial);

}  // namespace prehoc
