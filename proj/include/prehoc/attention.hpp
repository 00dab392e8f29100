#pragma once

#include <cstddef>
#include <span>

#include "prehoc/linalg.hpp"

namespace prehoc {

/// Normalization checks on probability vectors.
inline constexpr double kNormTol = 1e-12;

struct HeadConfig {
    std::size_t d = 16;       // per-head dimension
    std::size_t heads = 4;
    std::size_t layers = 8;   // N_layers

    double scale() const;     // exactly 1/sqrt(d)
    void validate() const;
    bool operator==(const HeadConfig&) const = default;
};

/// One head's query/key/value snapshot at a decode step.
struct AttentionInstance {
    Vector query;
    Matrix keys;
    Matrix values;
    std::size_t step = 0;

    std::size_t length() const { return keys.rows(); }
    std::size_t dim() const { return query.size(); }
    /// Throws std::invalid_argument on shape mismatch, empty context or non-finite entries.
    void validate() const;
};

struct AttentionDist {
    Vector probs;
    Vector logits;

    std::size_t size() const { return probs.size(); }
};

/// Attention restricted to an index set and renormalized over it.
struct TruncatedDist {
    AttentionDist base;
    IndexSet selected;
    double retained = 1.0;  // tau_S
    double dropped = 0.0;   // delta_S = 1 - tau_S
    Vector renorm_probs;    // zero outside `selected`
};

struct SparseAttention {
    TruncatedDist dist;
    Vector output;
};

/// Max-subtracted softmax; all-equal logits give the uniform distribution.
AttentionDist softmax(std::span<const double> logits);

/// logits[i] = q.k_i / sqrt(d), probs = softmax(logits).
AttentionDist attention_weights(const AttentionInstance& inst);

/// y = sum_i probs[i] * v_i.
Vector attention_output(const AttentionInstance& inst, const AttentionDist& dist);
Vector attention_output(const Matrix& values, std::span<const double> probs);

/// Sum of probs over `selected`.
double retained_mass(std::span<const double> probs, const IndexSet& selected);

/// Truncate `dist` to `selected` and renormalize. `selected` must be non-empty and in range;
/// it is sorted and deduplicated on the way in.
TruncatedDist truncate(const AttentionDist& dist, IndexSet selected);

SparseAttention sparse_attention(const AttentionInstance& inst, const IndexSet& selected);
SparseAttention sparse_attention(const AttentionInstance& inst, const AttentionDist& dense,
                                 const IndexSet& selected);

/// Sequence-axis centroid sum_i probs[i] * positions[i].
double centroid(const AttentionDist& dist, std::span<const double> positions);

/// Sort and deduplicate in place.
void normalize_index_set(IndexSet& s);

/// Sorted intersection / union of two index sets.
IndexSet set_intersection(const IndexSet& a, const IndexSet& b);
IndexSet set_union(const IndexSet& a, const IndexSet& b);

}  // namespace prehoc
