#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "prehoc/attention.hpp"

namespace prehoc {

/// Sink / salient-middle / local budget split. total() = c_sink + k_mid + c_local.
struct BudgetSpec {
    std::size_t c_sink = 16;
    std::size_t c_local = 64;
    std::size_t k_mid = 432;

    std::size_t total() const { return c_sink + k_mid + c_local; }
    /// Throws if total() is 0 or exceeds the context length t.
    void validate_for(std::size_t t) const;
    bool operator==(const BudgetSpec&) const = default;
};

struct SelectionResult {
    IndexSet selected;
    std::size_t budget_used = 0;
    bool was_shared = false;
    std::optional<std::size_t> anchor_step;  // step of the sharing source when was_shared
    std::size_t retrievals_performed = 0;    // contribution to R_t
    bool fallback = false;                   // composition fell back to sinks + local
    std::optional<double> similarity;        // cosine to the sharing source, CIS only
    IndexSet frozen;                         // ETF-frozen positions when composed in prefill

    void finalize();  // sorts, dedups and refreshes budget_used
};

/// Positions in [lo, hi) ordered by descending weight, lower index first on ties; the first k.
std::vector<std::size_t> ranked_top_k(std::span<const double> weights, std::size_t lo, std::size_t hi,
                                      std::size_t k);

/// Unstructured Top_n over all positions, returned sorted by index.
IndexSet top_n(std::span<const double> weights, std::size_t n);

/// Sinks [0, c_sink) + local [t - c_local, t) + the k_mid heaviest of the middle region.
SelectionResult topk_oracle(const AttentionDist& dist, const BudgetSpec& budget, std::size_t t);

/// Same structure as topk_oracle given arbitrary (surrogate) scores.
SelectionResult structured_top(std::span<const double> scores, const BudgetSpec& budget, std::size_t t,
                               std::vector<std::size_t>* middle_ranked = nullptr);

/// Sinks and local window only.
IndexSet sink_local_set(const BudgetSpec& budget, std::size_t t);

/// q1.q2 / (|q1||q2|); 0 if either norm is 0. Throws on dimension mismatch.
double cosine_similarity(std::span<const double> q1, std::span<const double> q2);

/// S* plus the +-r neighbours of its m heaviest entries, clipped to [0, t).
/// `ranked` lists S* in descending weight order.
IndexSet dilate(const std::vector<std::size_t>& ranked, std::size_t m, std::size_t r, std::size_t t);

// ---------------------------------------------------------------------------
// Clustered index sharing

struct CisConfig {
    std::size_t block_size = 8;
    double sim_threshold = 0.8;
    std::optional<std::size_t> dilate_count;  // m; unset means floor(k_mid / 3)
    std::size_t dilate_radius = 1;            // r
    BudgetSpec budget;

    std::size_t m() const { return dilate_count.value_or(budget.k_mid / 3); }
    void validate() const;
    bool operator==(const CisConfig&) const = default;
};

/// Per-(layer, head) block state. Only queries that retrieved are kept as sources.
struct CisHeadState {
    struct Source {
        std::size_t step = 0;
        Vector query;
        IndexSet dilated_middle;
    };
    std::optional<std::size_t> block;
    std::vector<Source> sources;
};

class CisSelector {
public:
    using Scorer = std::function<AttentionDist()>;

    CisSelector(CisConfig cfg, std::size_t layers, std::size_t heads);

    /// `decode_step` is 0-based; blocks are [b*s, (b+1)*s). `t` is the context length.
    /// `score` is only invoked when the head retrieves.
    SelectionResult select(std::size_t decode_step, std::size_t layer, std::size_t head,
                           std::span<const double> query, std::size_t t, const Scorer& score);

    const CisConfig& config() const { return cfg_; }
    const CisHeadState& state(std::size_t layer, std::size_t head) const { return states_[layer * heads_ + head]; }

private:
    CisConfig cfg_;
    std::size_t heads_;
    std::vector<CisHeadState> states_;
};

// ---------------------------------------------------------------------------
// Post-hoc archetypes

/// Cumulative-attention eviction state (heavy-hitter style).
struct TdoState {
    Vector cumulative_scores;
    IndexSet kept_set;
    std::vector<bool> evicted;
};

/// Keeps sinks, the local window and the k_mid non-evicted middle positions with the most
/// accumulated attention; every other middle position is evicted for good.
SelectionResult tdo_select(TdoState& state, const BudgetSpec& budget, std::size_t t);

/// Adds one step's observed attention (length <= current t) to the cumulative scores.
void tdo_observe(TdoState& state, std::span<const double> observed);

/// Surrogate distribution: cumulative scores over [0, t), evicted positions zeroed, normalized.
/// Uniform when nothing has been observed yet.
Vector tdo_surrogate(const TdoState& state, std::size_t t);

/// Replays `history` (one observed distribution per earlier step) and selects at length t.
SelectionResult tdo_select_from_history(const std::vector<Vector>& history, const BudgetSpec& budget,
                                        std::size_t t);

struct QaaConfig {
    std::size_t sketch_dim = 4;  // d'
    std::uint64_t seed = 0;
    bool identity_sketch = false;  // only valid when d' = d

    void validate(std::size_t d) const;
    bool operator==(const QaaConfig&) const = default;
};

struct QaaOutcome {
    SelectionResult selection;
    double eta = 0.0;  // observed ||a - a_hat||_inf
    Vector surrogate;  // softmax(a_hat)
};

/// Gaussian sketch P (d' x d, entries N(0, 1/d')), surrogate logits (Pq).(Pk_i)/sqrt(d').
class QaaSketch {
public:
    QaaSketch(const QaaConfig& cfg, std::size_t d);
    Vector project(std::span<const double> x) const;
    Vector surrogate_logits(const AttentionInstance& inst) const;

private:
    std::size_t dim_;
    Matrix p_;
};

QaaOutcome qaa_select(const AttentionInstance& inst, const QaaSketch& sketch, const BudgetSpec& budget,
                      std::size_t t);
QaaOutcome qaa_select(const AttentionInstance& inst, const QaaConfig& cfg, const BudgetSpec& budget,
                      std::size_t t);

}  // namespace prehoc
