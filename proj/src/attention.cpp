#include "prehoc/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace prehoc {

double HeadConfig::scale() const { return 1.0 / std::sqrt(static_cast<double>(d)); }

void HeadConfig::validate() const {
    if (d < 1) throw std::invalid_argument("head.d must be >= 1");
    if (heads < 1) throw std::invalid_argument("head.heads must be >= 1");
    if (layers < 1) throw std::invalid_argument("head.layers must be >= 1");
}

namespace {

void require_finite(std::span<const double> xs, const char* what) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!std::isfinite(xs[i])) {
            std::ostringstream os;
            os << "non-finite " << what << " entry at flat index " << i << " (" << xs[i] << ")";
            throw std::invalid_argument(os.str());
        }
    }
}

}  // namespace

void AttentionInstance::validate() const {
    if (keys.rows() == 0) throw std::invalid_argument("attention instance has no keys (L = 0)");
    if (keys.rows() != values.rows()) {
        std::ostringstream os;
        os << "keys have " << keys.rows() << " rows but values have " << values.rows();
        throw std::invalid_argument(os.str());
    }
    if (keys.cols() != query.size()) {
        std::ostringstream os;
        os << "query dim " << query.size() << " does not match key dim " << keys.cols();
        throw std::invalid_argument(os.str());
    }
    require_finite(query, "query");
    require_finite(keys.data(), "key");
    require_finite(values.data(), "value");
}

AttentionDist softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("softmax of empty logit vector");
    AttentionDist out;
    out.logits.assign(logits.begin(), logits.end());
    const double mx = *std::max_element(logits.begin(), logits.end());
    out.probs.resize(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out.probs[i] = std::exp(logits[i] - mx);
        z += out.probs[i];
    }
    for (double& p : out.probs) p /= z;
    return out;
}

AttentionDist attention_weights(const AttentionInstance& inst) {
    inst.validate();
    const double scale = 1.0 / std::sqrt(static_cast<double>(inst.dim()));
    Vector logits(inst.length());
    for (std::size_t i = 0; i < inst.length(); ++i) logits[i] = dot(inst.query, inst.keys.row(i)) * scale;
    return softmax(logits);
}

Vector attention_output(const Matrix& values, std::span<const double> probs) {
    if (probs.size() != values.rows()) {
        std::ostringstream os;
        os << "distribution length " << probs.size() << " does not match " << values.rows() << " values";
        throw std::invalid_argument(os.str());
    }
    Vector y(values.cols(), 0.0);
    for (std::size_t i = 0; i < values.rows(); ++i) {
        if (probs[i] == 0.0) continue;
        auto v = values.row(i);
        for (std::size_t j = 0; j < y.size(); ++j) y[j] += probs[i] * v[j];
    }
    return y;
}

Vector attention_output(const AttentionInstance& inst, const AttentionDist& dist) {
    return attention_output(inst.values, dist.probs);
}

double retained_mass(std::span<const double> probs, const IndexSet& selected) {
    double tau = 0.0;
    for (std::size_t i : selected) tau += probs[i];
    return tau;
}

void normalize_index_set(IndexSet& s) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
}

IndexSet set_intersection(const IndexSet& a, const IndexSet& b) {
    IndexSet out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

IndexSet set_union(const IndexSet& a, const IndexSet& b) {
    IndexSet out;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

TruncatedDist truncate(const AttentionDist& dist, IndexSet selected) {
    if (selected.empty()) throw std::invalid_argument("sparse attention over an empty index set");
    normalize_index_set(selected);
    if (selected.back() >= dist.size()) {
        std::ostringstream os;
        os << "selected index " << selected.back() << " out of range for length " << dist.size();
        throw std::invalid_argument(os.str());
    }
    TruncatedDist out;
    out.base = dist;
    out.retained = retained_mass(dist.probs, selected);
    out.dropped = 1.0 - out.retained;
    out.renorm_probs.assign(dist.size(), 0.0);
    for (std::size_t i : selected) out.renorm_probs[i] = dist.probs[i] / out.retained;
    out.selected = std::move(selected);
    return out;
}

SparseAttention sparse_attention(const AttentionInstance& inst, const AttentionDist& dense,
                                 const IndexSet& selected) {
    SparseAttention out;
    out.dist = truncate(dense, selected);
    out.output = attention_output(inst.values, out.dist.renorm_probs);
    return out;
}

SparseAttention sparse_attention(const AttentionInstance& inst, const IndexSet& selected) {
    return sparse_attention(inst, attention_weights(inst), selected);
}

double centroid(const AttentionDist& dist, std::span<const double> positions) {
    if (positions.size() != dist.size()) {
        std::ostringstream os;
        os << "centroid: " << positions.size() << " positions for a length-" << dist.size() << " distribution";
        throw std::invalid_argument(os.str());
    }
    require_finite(positions, "position");
    double c = 0.0;
    for (std::size_t i = 0; i < positions.size(); ++i) c += dist.probs[i] * positions[i];
    return c;
}

}  // namespace prehoc
