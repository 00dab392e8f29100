#include "prehoc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "prehoc/rng.hpp"

namespace prehoc {

std::string to_string(GeneratorKind k) {
    return k == GeneratorKind::RandomWalk ? "random_walk" : "exp_decay";
}

GeneratorKind parse_generator_kind(const std::string& s) {
    if (s == "random_walk") return GeneratorKind::RandomWalk;
    if (s == "exp_decay") return GeneratorKind::ExpDecayChannel;
    throw std::invalid_argument("unknown generator kind '" + s + "' (expected random_walk|exp_decay)");
}

namespace {

double per_layer(const std::vector<double>& v, std::size_t layer, const char* name) {
    if (v.empty()) throw std::invalid_argument(std::string("generator.") + name + " is empty");
    return v.size() == 1 ? v.front() : v.at(layer);
}

void normalize(std::span<double> x) {
    const double n = norm2(x);
    if (n > 0.0)
        for (double& v : x) v /= n;
}

Vector gaussian_unit(CounterRng& rng, std::size_t dim) {
    Vector v(dim);
    for (double& x : v) x = rng.normal();
    normalize(v);
    return v;
}

/// dim x dim Gaussian matrix with N(0, 1/dim) entries, applied as y = W x.
Matrix gaussian_projection(CounterRng& rng, std::size_t dim) {
    Matrix w(dim, dim);
    const double s = 1.0 / std::sqrt(static_cast<double>(dim));
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) w(i, j) = s * rng.normal();
    return w;
}

void apply(const Matrix& w, std::span<const double> x, std::span<double> y, double scale) {
    for (std::size_t i = 0; i < w.rows(); ++i) y[i] = scale * dot(w.row(i), x);
}

}  // namespace

double SynthGenConfig::lambda_at(std::size_t layer) const { return per_layer(decay_rate, layer, "decay_rate"); }
double SynthGenConfig::kappa_at(std::size_t layer) const { return per_layer(decay_factor, layer, "decay_factor"); }
double SynthGenConfig::sink_mass_at(std::size_t layer) const { return per_layer(sink_mass, layer, "sink_mass"); }

std::size_t SynthGenConfig::ref_layer(std::size_t n_layers) const {
    return update_ref_layer.value_or((3 * n_layers) / 4);
}

void SynthGenConfig::validate(std::size_t n_layers) const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("generator: " + msg); };
    if (!(walk_rate >= 0.0 && walk_rate <= 1.0)) fail("walk_rate must lie in [0, 1]");
    if (!(weight_scale > 0.0) || !std::isfinite(weight_scale)) fail("weight_scale must be positive");
    if (!(key_update_bound > 0.0)) fail("key_update_bound (B) must be > 0");
    if (!(key_update_rate > 0.0)) fail("key_update_rate (mu) must be > 0");
    for (const auto* v : {&decay_rate, &sink_mass, &decay_factor})
        if (v->size() != 1 && v->size() != n_layers) {
            std::ostringstream os;
            os << "per-layer lists need 1 or " << n_layers << " entries, got " << v->size();
            fail(os.str());
        }
    for (std::size_t l = 0; l < n_layers; ++l) {
        const double lambda = lambda_at(l), kappa = kappa_at(l), tau_sink = sink_mass_at(l);
        if (!(lambda > 0.0) || !std::isfinite(lambda)) fail("decay_rate (lambda) must be > 0");
        if (!(kappa > 0.0 && kappa <= 1.0)) fail("decay_factor (kappa) must lie in (0, 1]");
        if (!(tau_sink >= 0.0 && tau_sink < 1.0)) fail("sink_mass must lie in [0, 1)");
        if (kind == GeneratorKind::ExpDecayChannel && kappa > 1.0 - tau_sink + 1e-15)
            fail("decay_factor (kappa) must not exceed 1 - sink_mass");
    }
    if (kind == GeneratorKind::ExpDecayChannel && sink_count == 0)
        fail("exp_decay generator needs sink_count >= 1 to hold the residual mass");
}

DecodeStream::DecodeStream(SynthGenConfig cfg, HeadConfig head, std::size_t prefill_len, std::size_t steps)
    : cfg_(std::move(cfg)), head_(head), prefill_(prefill_len), steps_(steps) {
    head_.validate();
    cfg_.validate(head_.layers);
    if (steps_ < 1) throw std::invalid_argument("decode stream needs steps >= 1");
    if (cfg_.kind == GeneratorKind::ExpDecayChannel && prefill_ < cfg_.sink_count)
        throw std::invalid_argument("exp_decay generator needs prefill_len >= sink_count");

    const std::size_t n = max_length(), d = head_.d;
    values_.reserve(head_.layers * head_.heads);
    if (cfg_.kind == GeneratorKind::RandomWalk) {
        build_random_walk();
        return;
    }
    for (std::size_t l = 0; l < head_.layers; ++l)
        for (std::size_t h = 0; h < head_.heads; ++h) {
            CounterRng rng(cfg_.seed, {tag(StreamTag::Values), l, h});
            Matrix v(n, d);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) v(i, j) = rng.normal();
            values_.push_back(std::move(v));
        }
}

void DecodeStream::build_random_walk() {
    const std::size_t n = max_length(), d = head_.d, layers = head_.layers, heads = head_.heads;

    Matrix embed(n, d);
    {
        CounterRng rng(cfg_.seed, {tag(StreamTag::Embedding)});
        Vector x = gaussian_unit(rng, d);
        for (std::size_t i = 0; i < n; ++i) {
            if (i > 0) {
                Vector noise = gaussian_unit(rng, d);
                for (std::size_t j = 0; j < d; ++j) x[j] = (1.0 - cfg_.walk_rate) * x[j] + cfg_.walk_rate * noise[j];
                normalize(x);
            }
            std::copy(x.begin(), x.end(), embed.row(i).begin());
        }
    }

    keys_.assign((layers + 1) * heads, Matrix());
    for (std::size_t h = 0; h < heads; ++h) {
        CounterRng rng(cfg_.seed, {tag(StreamTag::KeyProj), h});
        Matrix wk = gaussian_projection(rng, d);
        Matrix k(n, d);
        for (std::size_t i = 0; i < n; ++i) apply(wk, embed.row(i), k.row(i), cfg_.weight_scale);
        keys_[key_slot(0, h)] = std::move(k);
    }
    for (std::size_t l = 0; l < layers; ++l) {
        const double cap = key_update_cap(l);
        for (std::size_t h = 0; h < heads; ++h) {
            CounterRng rng(cfg_.seed, {tag(StreamTag::KeyUpdate), l, h});
            Matrix k = keys_[key_slot(l, h)];
            for (std::size_t i = 0; i < n; ++i) {
                Vector dir = gaussian_unit(rng, d);
                const double mag = cap * rng.uniform();
                auto row = k.row(i);
                for (std::size_t j = 0; j < d; ++j) row[j] += mag * dir[j];
            }
            keys_[key_slot(l + 1, h)] = std::move(k);
        }
    }

    queries_.reserve(layers * heads);
    for (std::size_t l = 0; l < layers; ++l)
        for (std::size_t h = 0; h < heads; ++h) {
            CounterRng rq(cfg_.seed, {tag(StreamTag::QueryProj), l, h});
            CounterRng rv(cfg_.seed, {tag(StreamTag::ValueProj), l, h});
            Matrix wq = gaussian_projection(rq, d);
            Matrix wv = gaussian_projection(rv, d);
            Matrix q(n, d), v(n, d);
            for (std::size_t i = 0; i < n; ++i) {
                apply(wq, embed.row(i), q.row(i), cfg_.unit_queries ? 1.0 : cfg_.weight_scale);
                if (cfg_.unit_queries) normalize(q.row(i));
                apply(wv, embed.row(i), v.row(i), 1.0);
            }
            queries_.push_back(std::move(q));
            values_.push_back(std::move(v));
        }
}

double DecodeStream::key_update_cap(std::size_t layer) const {
    const double depth = static_cast<double>(layer + 1);
    const double ref = static_cast<double>(cfg_.ref_layer(head_.layers));
    return cfg_.key_update_bound * std::exp(-cfg_.key_update_rate * std::max(0.0, depth - ref));
}

Vector DecodeStream::exp_decay_probs(std::size_t length, std::size_t layer) const {
    const std::size_t sinks = std::min(cfg_.sink_count, length);
    const double rho = std::exp(-cfg_.lambda_at(layer));
    const double kappa = cfg_.kappa_at(layer);
    Vector p(length, 0.0);
    double tail = 0.0;
    for (std::size_t i = sinks; i < length; ++i) {
        p[i] = kappa * (1.0 - rho) * std::pow(rho, static_cast<double>(length - 1 - i));
        tail += p[i];
    }
    for (std::size_t i = 0; i < sinks; ++i) p[i] = (1.0 - tail) / static_cast<double>(sinks);
    return p;
}

AttentionInstance DecodeStream::at_position(std::size_t pos, std::size_t layer, std::size_t head) const {
    if (pos >= max_length() || layer >= head_.layers || head >= head_.heads)
        throw std::out_of_range("DecodeStream::at_position: coordinate out of range");
    const std::size_t len = pos + 1, d = head_.d;
    AttentionInstance inst;
    inst.step = pos;
    inst.values = values_[slot(layer, head)].head_rows(len);
    if (cfg_.kind == GeneratorKind::RandomWalk) {
        auto q = queries_[slot(layer, head)].row(pos);
        inst.query.assign(q.begin(), q.end());
        inst.keys = keys_[key_slot(layer + 1, head)].head_rows(len);
        return inst;
    }
    // Query (sqrt d, 0, ...) against keys (log p_i, 0, ...) gives logits log p_i exactly.
    const Vector probs = exp_decay_probs(len, layer);
    inst.query.assign(d, 0.0);
    inst.query[0] = std::sqrt(static_cast<double>(d));
    inst.keys = Matrix(len, d);
    for (std::size_t i = 0; i < len; ++i) inst.keys(i, 0) = std::log(std::max(probs[i], std::numeric_limits<double>::min()));
    return inst;
}

Matrix DecodeStream::previous_layer_keys(std::size_t pos, std::size_t layer, std::size_t head) const {
    if (cfg_.kind != GeneratorKind::RandomWalk)
        throw std::logic_error("previous_layer_keys: only random_walk streams carry per-depth keys");
    if (pos >= max_length() || layer >= head_.layers || head >= head_.heads)
        throw std::out_of_range("DecodeStream::previous_layer_keys: coordinate out of range");
    return keys_[key_slot(layer, head)].head_rows(pos + 1);
}

DecodeStream gen_decode_stream(const SynthGenConfig& cfg, const HeadConfig& head, std::size_t prefill_len,
                               std::size_t steps) {
    return DecodeStream(cfg, head, prefill_len, steps);
}

}  // namespace prehoc
