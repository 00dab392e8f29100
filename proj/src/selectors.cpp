#include "prehoc/selectors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "prehoc/rng.hpp"

namespace prehoc {

void BudgetSpec::validate_for(std::size_t t) const {
    if (total() < 1) throw std::invalid_argument("budget total must be >= 1");
    if (total() > t) {
        std::ostringstream os;
        os << "budget " << total() << " (sink " << c_sink << " + mid " << k_mid << " + local " << c_local
           << ") exceeds context length " << t;
        throw std::invalid_argument(os.str());
    }
}

void SelectionResult::finalize() {
    normalize_index_set(selected);
    budget_used = selected.size();
}

std::vector<std::size_t> ranked_top_k(std::span<const double> weights, std::size_t lo, std::size_t hi,
                                      std::size_t k) {
    if (hi > weights.size() || lo > hi) throw std::out_of_range("ranked_top_k: bad range");
    std::vector<std::size_t> idx(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    k = std::min(k, idx.size());
    auto heavier = [&](std::size_t a, std::size_t b) {
        return weights[a] > weights[b] || (weights[a] == weights[b] && a < b);
    };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), heavier);
    idx.resize(k);
    return idx;
}

IndexSet top_n(std::span<const double> weights, std::size_t n) {
    if (n > weights.size()) throw std::invalid_argument("top_n: n exceeds length");
    IndexSet s = ranked_top_k(weights, 0, weights.size(), n);
    normalize_index_set(s);
    return s;
}

IndexSet sink_local_set(const BudgetSpec& budget, std::size_t t) {
    IndexSet s;
    const std::size_t sink_end = std::min(budget.c_sink, t);
    for (std::size_t i = 0; i < sink_end; ++i) s.push_back(i);
    const std::size_t local_start = t > budget.c_local ? t - budget.c_local : 0;
    for (std::size_t i = std::max(local_start, sink_end); i < t; ++i) s.push_back(i);
    return s;
}

SelectionResult structured_top(std::span<const double> scores, const BudgetSpec& budget, std::size_t t,
                               std::vector<std::size_t>* middle_ranked) {
    if (scores.size() != t) {
        std::ostringstream os;
        os << "selector got " << scores.size() << " scores for context length " << t;
        throw std::invalid_argument(os.str());
    }
    budget.validate_for(t);
    SelectionResult r;
    r.selected = sink_local_set(budget, t);
    auto ranked = ranked_top_k(scores, budget.c_sink, t - budget.c_local, budget.k_mid);
    r.selected.insert(r.selected.end(), ranked.begin(), ranked.end());
    r.retrievals_performed = 1;
    r.finalize();
    if (middle_ranked) *middle_ranked = std::move(ranked);
    return r;
}

SelectionResult topk_oracle(const AttentionDist& dist, const BudgetSpec& budget, std::size_t t) {
    return structured_top(dist.probs, budget, t);
}

double cosine_similarity(std::span<const double> q1, std::span<const double> q2) {
    if (q1.size() != q2.size()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
    const double n1 = norm2(q1), n2 = norm2(q2);
    if (n1 == 0.0 || n2 == 0.0) return 0.0;
    return dot(q1, q2) / (n1 * n2);
}

IndexSet dilate(const std::vector<std::size_t>& ranked, std::size_t m, std::size_t r, std::size_t t) {
    IndexSet out(ranked.begin(), ranked.end());
    const std::size_t top = std::min(m, ranked.size());
    for (std::size_t i = 0; i < top; ++i) {
        const std::size_t p = ranked[i];
        const std::size_t lo = p > r ? p - r : 0;
        const std::size_t hi = std::min(t, p + r + 1);
        for (std::size_t j = lo; j < hi; ++j) out.push_back(j);
    }
    normalize_index_set(out);
    return out;
}

// ---------------------------------------------------------------------------

void CisConfig::validate() const {
    if (block_size < 1) throw std::invalid_argument("cis.block_size must be >= 1");
    // Thresholds above 1 are accepted and disable sharing.
    if (!std::isfinite(sim_threshold)) throw std::invalid_argument("cis.sim_threshold must be finite");
    if (m() > budget.k_mid) throw std::invalid_argument("cis.dilate_count (m) must not exceed k_mid");
}

CisSelector::CisSelector(CisConfig cfg, std::size_t layers, std::size_t heads)
    : cfg_(std::move(cfg)), heads_(heads), states_(layers * heads) {
    cfg_.validate();
}

SelectionResult CisSelector::select(std::size_t decode_step, std::size_t layer, std::size_t head,
                                    std::span<const double> query, std::size_t t, const Scorer& score) {
    CisHeadState& st = states_.at(layer * heads_ + head);
    const std::size_t block = decode_step / cfg_.block_size;
    if (!st.block || *st.block != block) {
        st.block = block;
        st.sources.clear();
    }

    auto shared_with = [&](const CisHeadState::Source& src, double sim) {
        SelectionResult r;
        r.selected = sink_local_set(cfg_.budget, t);
        for (std::size_t i : src.dilated_middle)
            if (i < t) r.selected.push_back(i);
        r.was_shared = true;
        r.anchor_step = src.step;
        r.similarity = sim;
        r.finalize();
        return r;
    };

    // Most recent retrieving query in this block whose similarity clears the gate.
    if (!st.sources.empty()) {
        for (auto it = st.sources.rbegin(); it != st.sources.rend(); ++it) {
            const double sim = cosine_similarity(query, it->query);
            const bool zero = norm2(query) == 0.0 || norm2(it->query) == 0.0;
            if (!zero && sim >= cfg_.sim_threshold) return shared_with(*it, sim);
        }
    }

    const AttentionDist dense = score();
    std::vector<std::size_t> ranked;
    SelectionResult r = structured_top(dense.probs, cfg_.budget, t, &ranked);
    IndexSet dilated = dilate(ranked, cfg_.m(), cfg_.dilate_radius, t);
    r.selected.insert(r.selected.end(), dilated.begin(), dilated.end());
    r.finalize();
    r.anchor_step = decode_step;
    st.sources.push_back({decode_step, Vector(query.begin(), query.end()), std::move(dilated)});
    return r;
}

// ---------------------------------------------------------------------------

namespace {

void grow(TdoState& s, std::size_t t) {
    if (s.cumulative_scores.size() < t) {
        s.cumulative_scores.resize(t, 0.0);
        s.evicted.resize(t, false);
    }
}

}  // namespace

void tdo_observe(TdoState& state, std::span<const double> observed) {
    grow(state, observed.size());
    for (std::size_t i = 0; i < observed.size(); ++i) state.cumulative_scores[i] += observed[i];
}

SelectionResult tdo_select(TdoState& state, const BudgetSpec& budget, std::size_t t) {
    budget.validate_for(t);
    grow(state, t);
    SelectionResult r;
    r.selected = sink_local_set(budget, t);
    const std::size_t mid_end = t - budget.c_local;
    std::vector<std::size_t> candidates;
    for (std::size_t i = budget.c_sink; i < mid_end; ++i)
        if (!state.evicted[i]) candidates.push_back(i);
    const std::size_t k = std::min(budget.k_mid, candidates.size());
    auto heavier = [&](std::size_t a, std::size_t b) {
        const double sa = state.cumulative_scores[a], sb = state.cumulative_scores[b];
        return sa > sb || (sa == sb && a < b);
    };
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(),
                      heavier);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (i < k)
            r.selected.push_back(candidates[i]);
        else
            state.evicted[candidates[i]] = true;
    }
    r.finalize();
    state.kept_set = r.selected;
    return r;
}

Vector tdo_surrogate(const TdoState& state, std::size_t t) {
    Vector s(t, 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < t && i < state.cumulative_scores.size(); ++i) {
        if (state.evicted[i]) continue;
        s[i] = state.cumulative_scores[i];
        z += s[i];
    }
    if (z <= 0.0) return Vector(t, 1.0 / static_cast<double>(t));
    for (double& x : s) x /= z;
    return s;
}

SelectionResult tdo_select_from_history(const std::vector<Vector>& history, const BudgetSpec& budget,
                                        std::size_t t) {
    TdoState st;
    for (const Vector& h : history) tdo_observe(st, h);
    return tdo_select(st, budget, t);
}

// ---------------------------------------------------------------------------

void QaaConfig::validate(std::size_t d) const {
    if (sketch_dim < 1 || sketch_dim > d) {
        std::ostringstream os;
        os << "qaa.sketch_dim must lie in [1, " << d << "], got " << sketch_dim;
        throw std::invalid_argument(os.str());
    }
    if (identity_sketch && sketch_dim != d) throw std::invalid_argument("qaa.identity_sketch requires sketch_dim = d");
}

QaaSketch::QaaSketch(const QaaConfig& cfg, std::size_t d) : dim_(cfg.sketch_dim), p_(cfg.sketch_dim, d) {
    cfg.validate(d);
    if (cfg.identity_sketch) {
        for (std::size_t i = 0; i < d; ++i) p_(i, i) = 1.0;
        return;
    }
    CounterRng rng(cfg.seed, {tag(StreamTag::Sketch), d, dim_});
    const double s = 1.0 / std::sqrt(static_cast<double>(dim_));
    for (std::size_t i = 0; i < dim_; ++i)
        for (std::size_t j = 0; j < d; ++j) p_(i, j) = s * rng.normal();
}

Vector QaaSketch::project(std::span<const double> x) const {
    Vector y(dim_);
    for (std::size_t i = 0; i < dim_; ++i) y[i] = dot(p_.row(i), x);
    return y;
}

Vector QaaSketch::surrogate_logits(const AttentionInstance& inst) const {
    const Vector pq = project(inst.query);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
    Vector out(inst.length());
    for (std::size_t i = 0; i < inst.length(); ++i) out[i] = dot(pq, project(inst.keys.row(i))) * scale;
    return out;
}

QaaOutcome qaa_select(const AttentionInstance& inst, const QaaSketch& sketch, const BudgetSpec& budget,
                      std::size_t t) {
    const AttentionDist exact = attention_weights(inst);
    const AttentionDist approx = softmax(sketch.surrogate_logits(inst));
    QaaOutcome out;
    out.selection = structured_top(approx.probs, budget, t);
    out.eta = linf_distance(exact.logits, approx.logits);
    out.surrogate = approx.probs;
    return out;
}

QaaOutcome qaa_select(const AttentionInstance& inst, const QaaConfig& cfg, const BudgetSpec& budget,
                      std::size_t t) {
    return qaa_select(inst, QaaSketch(cfg, inst.dim()), budget, t);
}

}  // namespace prehoc
