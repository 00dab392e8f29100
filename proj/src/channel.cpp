#include "prehoc/channel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "prehoc/rng.hpp"

namespace prehoc {

void ChannelModel::validate() const {
    std::ostringstream os;
    if (contexts.empty()) throw std::invalid_argument("channel has no contexts");
    if (contexts.size() > kMaxContexts || length() > kMaxLength || alphabet > kMaxAlphabet) {
        os << "channel too large for exact enumeration (|X| = " << contexts.size() << " <= " << kMaxContexts
           << ", L = " << length() << " <= " << kMaxLength << ", alphabet = " << alphabet << " <= " << kMaxAlphabet
           << "); use a smaller channel";
        throw std::invalid_argument(os.str());
    }
    if (alphabet < 1) throw std::invalid_argument("channel alphabet must be nonempty");
    if (prior.size() != contexts.size()) throw std::invalid_argument("channel prior size differs from context count");
    double s = 0.0;
    for (double p : prior) {
        if (!(p >= 0.0)) throw std::invalid_argument("channel prior has a negative entry");
        s += p;
    }
    if (std::abs(s - 1.0) > 1e-12) throw std::invalid_argument("channel prior does not sum to 1");
    const std::size_t len = length();
    if (len < 1) throw std::invalid_argument("channel contexts need at least one key");
    for (const auto& c : contexts) {
        if (c.keys.rows() != len) throw std::invalid_argument("every channel context needs exactly L keys");
        if (c.keys.cols() != query.size()) throw std::invalid_argument("channel key dimension differs from query");
        if (c.symbols.size() != len) throw std::invalid_argument("channel symbol assignment has wrong length");
        for (std::size_t v : c.symbols)
            if (v >= alphabet) throw std::invalid_argument("channel symbol outside alphabet");
    }
}

double mutual_information(const std::vector<Vector>& joint) {
    if (joint.empty()) return 0.0;
    const std::size_t ny = joint.front().size();
    Vector px(joint.size(), 0.0), py(ny, 0.0);
    for (std::size_t x = 0; x < joint.size(); ++x) {
        if (joint[x].size() != ny) throw std::invalid_argument("mutual_information: ragged joint table");
        for (std::size_t y = 0; y < ny; ++y) {
            px[x] += joint[x][y];
            py[y] += joint[x][y];
        }
    }
    double mi = 0.0;
    for (std::size_t x = 0; x < joint.size(); ++x)
        for (std::size_t y = 0; y < ny; ++y) {
            const double p = joint[x][y];
            if (p > 0.0) mi += p * std::log(p / (px[x] * py[y]));
        }
    return std::max(0.0, mi);
}

ChannelMi exact_mi_channel(const ChannelModel& ch, const std::optional<IndexSet>& selected) {
    ch.validate();
    ChannelMi out;
    std::vector<Vector> joint(ch.contexts.size(), Vector(ch.alphabet, 0.0));
    for (std::size_t x = 0; x < ch.contexts.size(); ++x) {
        const auto& ctx = ch.contexts[x];
        AttentionInstance inst;
        inst.query = ch.query;
        inst.keys = ctx.keys;
        inst.values = Matrix(ctx.keys.rows(), 1);
        const AttentionDist dist = attention_weights(inst);
        Vector routed = dist.probs;
        double delta = 0.0;
        if (selected) {
            const TruncatedDist tr = truncate(dist, *selected);
            routed = tr.renorm_probs;
            delta = tr.dropped;
        }
        out.delta_per_context.push_back(delta);
        out.delta_sup = std::max(out.delta_sup, delta);
        for (std::size_t i = 0; i < routed.size(); ++i) joint[x][ctx.symbols[i]] += ch.prior[x] * routed[i];
    }
    out.mi = mutual_information(joint);
    return out;
}

ChannelModel random_channel(const ChannelGenConfig& cfg, std::uint64_t seed, std::uint64_t trial) {
    if (cfg.max_contexts < 2 || cfg.max_length < 2 || cfg.max_alphabet < 2 || cfg.d < 1)
        throw std::invalid_argument("random_channel: limits must be >= 2 (d >= 1)");
    CounterRng rng(seed, {tag(StreamTag::Channel), trial});
    ChannelModel ch;
    const auto nx = static_cast<std::size_t>(rng.integer(2, cfg.max_contexts));
    const auto len = static_cast<std::size_t>(rng.integer(2, cfg.max_length));
    ch.alphabet = static_cast<std::size_t>(rng.integer(2, cfg.max_alphabet));
    ch.query.resize(cfg.d);
    for (double& v : ch.query) v = rng.normal();
    double z = 0.0;
    for (std::size_t x = 0; x < nx; ++x) {
        ChannelModel::Context c;
        c.keys = Matrix(len, cfg.d);
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j < cfg.d; ++j) c.keys(i, j) = cfg.logit_scale * rng.normal();
        for (std::size_t i = 0; i < len; ++i)
            c.symbols.push_back(static_cast<std::size_t>(rng.integer(0, ch.alphabet - 1)));
        ch.contexts.push_back(std::move(c));
        ch.prior.push_back(0.05 + rng.uniform());
        z += ch.prior.back();
    }
    for (double& p : ch.prior) p /= z;
    // Renormalize once more so the sum is exactly representable within the guard tolerance.
    double s = 0.0;
    for (double p : ch.prior) s += p;
    ch.prior.back() += 1.0 - s;
    return ch;
}

IndexSet random_selection(std::size_t length, std::uint64_t seed, std::uint64_t trial) {
    if (length < 1) throw std::invalid_argument("random_selection: empty range");
    CounterRng rng(seed, {tag(StreamTag::Trial), trial, length});
    IndexSet s;
    while (s.empty())
        for (std::size_t i = 0; i < length; ++i)
            if (rng.coin(0.6)) s.push_back(i);
    return s;
}

}  // namespace prehoc
