#include "prehoc/decode_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "prehoc/bounds.hpp"

namespace prehoc {

std::string to_string(SelectorKind k) {
    switch (k) {
        case SelectorKind::Full: return "full";
        case SelectorKind::Oracle: return "oracle";
        case SelectorKind::Cis: return "cis";
        case SelectorKind::Tdo: return "tdo";
        case SelectorKind::Qaa: return "qaa";
        case SelectorKind::Cpe: return "cpe";
    }
    return "?";
}

SelectorKind parse_selector_kind(const std::string& s) {
    for (auto k : {SelectorKind::Full, SelectorKind::Oracle, SelectorKind::Cis, SelectorKind::Tdo, SelectorKind::Qaa,
                   SelectorKind::Cpe})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown selector kind '" + s + "' (expected full|oracle|cis|tdo|qaa|cpe)");
}

std::string to_string(RetrievalCharge c) { return c == RetrievalCharge::Scoring ? "scoring" : "dense"; }

RetrievalCharge parse_retrieval_charge(const std::string& s) {
    if (s == "scoring") return RetrievalCharge::Scoring;
    if (s == "dense") return RetrievalCharge::Dense;
    throw std::invalid_argument("unknown retrieval charge '" + s + "' (expected scoring|dense)");
}

CisConfig SelectorConfig::effective_cis() const {
    CisConfig c = cis;
    c.budget = budget;
    return c;
}

void SelectorConfig::validate(std::size_t n_layers, std::size_t d) const {
    if (budget.total() < 1) throw std::invalid_argument("selector.budget total must be >= 1");
    effective_cis().validate();
    psaw.validate(n_layers);
    etf.validate(n_layers);
    if (kind == SelectorKind::Qaa) qaa.validate(d);
}

void SimConfig::validate() const {
    head.validate();
    gen.validate(head.layers);
    selector.validate(head.layers, head.d);
    if (steps < 1) throw std::invalid_argument("sim: steps must be >= 1");
    if (prefill_len < selector.budget.total()) {
        std::ostringstream os;
        os << "sim: prefill_len " << prefill_len << " is smaller than the budget total " << selector.budget.total();
        throw std::invalid_argument(os.str());
    }
    if (prefill_stride < 1) throw std::invalid_argument("sim: prefill_stride must be >= 1");
    if (gen.kind == GeneratorKind::ExpDecayChannel && selector.budget.c_sink < gen.sink_count)
        throw std::invalid_argument("sim: exp_decay streams need budget.c_sink >= generator.sink_count");
}

// ---------------------------------------------------------------------------

FlopsCount flops_proxy(std::size_t selected, std::size_t length, std::size_t d, bool retrieved,
                       RetrievalCharge charge) {
    FlopsCount f;
    const double l = static_cast<double>(length), dd = static_cast<double>(d);
    f.dense = 2.0 * l * dd;
    if (retrieved && charge == RetrievalCharge::Dense)
        f.sparse = f.dense;
    else
        f.sparse = 2.0 * static_cast<double>(selected) * dd + (retrieved ? l * dd : 0.0);
    f.ratio = f.dense > 0.0 ? f.sparse / f.dense : 1.0;
    return f;
}

FlopsCount flops_proxy(const std::vector<std::size_t>& selected, const std::vector<std::size_t>& lengths,
                       const std::vector<bool>& retrieved, std::size_t d, RetrievalCharge charge) {
    if (selected.size() != lengths.size() || selected.size() != retrieved.size())
        throw std::invalid_argument("flops_proxy: input lengths differ");
    FlopsCount total;
    for (std::size_t i = 0; i < selected.size(); ++i) {
        const FlopsCount f = flops_proxy(selected[i], lengths[i], d, retrieved[i], charge);
        total.dense += f.dense;
        total.sparse += f.sparse;
    }
    total.ratio = total.dense > 0.0 ? total.sparse / total.dense : 1.0;
    return total;
}

double percentile(std::vector<double> sample, double q) {
    if (sample.empty()) throw std::invalid_argument("percentile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("percentile: q outside [0, 1]");
    std::sort(sample.begin(), sample.end());
    const double pos = q * static_cast<double>(sample.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sample.size() - 1);
    return sample[lo] + (pos - static_cast<double>(lo)) * (sample[hi] - sample[lo]);
}

namespace {

Distribution describe(const std::vector<double>& v) {
    Distribution d;
    d.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    d.p50 = percentile(v, 0.5);
    d.p90 = percentile(v, 0.9);
    d.p99 = percentile(v, 0.99);
    d.max = *std::max_element(v.begin(), v.end());
    return d;
}

double max_row_norm(const Matrix& m) {
    double best = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) best = std::max(best, norm2(m.row(i)));
    return best;
}

IndexSet full_set(std::size_t t) {
    IndexSet s(t);
    std::iota(s.begin(), s.end(), std::size_t{0});
    return s;
}

double range_mass(std::span<const double> p, std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi && i < p.size(); ++i) s += p[i];
    return s;
}

std::optional<double> psaw_bound_for(const SynthGenConfig& gen, std::size_t layer, std::size_t window) {
    if (gen.kind != GeneratorKind::ExpDecayChannel) return std::nullopt;
    CertificateInput in;
    in.lambda = gen.lambda_at(layer);
    in.kappa = gen.kappa_at(layer);
    in.tau_sink = gen.sink_mass_at(layer);
    in.window_dist = static_cast<double>(window);
    return psaw_certificate(in).bound;
}

void run_prefill(const SimConfig& cfg, const DecodeStream& stream, DecodeTrace& trace) {
    const std::size_t n = cfg.head.layers, d = cfg.head.d;
    const std::size_t c_sink = cfg.selector.budget.c_sink;
    const std::size_t ls = cfg.selector.etf.start(n);
    const bool walk = cfg.gen.kind == GeneratorKind::RandomWalk;
    const double inv_sqrt_d = cfg.head.scale();
    std::vector<std::size_t> positions;
    for (std::size_t p = 0; p < cfg.prefill_len; p += cfg.prefill_stride) positions.push_back(p);
    if (positions.back() != cfg.prefill_len - 1) positions.push_back(cfg.prefill_len - 1);

    for (std::size_t pos : positions)
        for (std::size_t l = 0; l < n; ++l)
            for (std::size_t h = 0; h < cfg.head.heads; ++h) {
                const AttentionInstance inst = stream.at_position(pos, l, h);
                const AttentionDist dense = attention_weights(inst);
                PrefillMetrics m;
                m.position = pos;
                m.layer = l;
                m.head = h;
                m.t = inst.length();
                m.q_norm = norm2(inst.query);
                const std::size_t depth = l + 1;
                m.psaw_boundary = psaw_boundary(depth, m.t, n, cfg.selector.psaw);
                m.psaw_masked_mass = range_mass(dense.probs, c_sink, m.psaw_boundary);
                m.psaw_bound = psaw_bound_for(cfg.gen, l, m.t - m.psaw_boundary);
                if (m.psaw_bound && m.psaw_masked_mass > *m.psaw_bound + 1e-9) ++trace.psaw_violations;

                if (cfg.selector.etf_enabled) {
                    m.etf_boundary = etf_boundary(depth, m.t, n, cfg.selector.etf);
                    m.frozen = m.etf_boundary > c_sink ? m.etf_boundary - c_sink : 0;
                    if (walk) {
                        Vector logits = dense.logits;
                        if (m.frozen > 0) {
                            const Matrix prev = stream.previous_layer_keys(pos, l, h);
                            for (std::size_t i = c_sink; i < m.etf_boundary; ++i)
                                logits[i] = dot(inst.query, prev.row(i)) * inv_sqrt_d;
                        }
                        m.etf_tv = 0.5 * l1_distance(softmax(logits).probs, dense.probs);
                        CertificateInput in;
                        in.q_max = m.q_norm;
                        in.b_const = cfg.gen.key_update_bound;
                        in.mu = cfg.gen.key_update_rate;
                        in.depth_gap = depth > ls ? static_cast<double>(depth - ls) : 0.0;
                        m.etf_bound = etf_certificate(in, d).bound;
                        if (m.etf_tv > *m.etf_bound + 1e-12) ++trace.etf_violations;
                    }
                }
                trace.prefill.push_back(m);
            }
}

}  // namespace

DecodeTrace run_decode(const SimConfig& cfg) {
    cfg.validate();
    const DecodeStream stream(cfg.gen, cfg.head, cfg.prefill_len, cfg.steps);
    const std::size_t n = cfg.head.layers, heads = cfg.head.heads, d = cfg.head.d;
    const SelectorConfig& sc = cfg.selector;
    const BudgetSpec& budget = sc.budget;

    DecodeTrace trace;
    if (cfg.simulate_prefill) run_prefill(cfg, stream, trace);

    CisSelector cis(sc.effective_cis(), n, heads);
    std::vector<TdoState> tdo(n * heads);
    std::optional<QaaSketch> sketch;
    if (sc.kind == SelectorKind::Qaa) sketch.emplace(sc.qaa, d);
    if (sc.kind == SelectorKind::Tdo) {
        // Seed the eviction scores with the last prefill query's attention.
        for (std::size_t l = 0; l < n; ++l)
            for (std::size_t h = 0; h < heads; ++h)
                tdo_observe(tdo[l * heads + h], attention_weights(stream.at_position(cfg.prefill_len - 1, l, h)).probs);
    }

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        StepSummary summary;
        summary.step = step;
        for (std::size_t l = 0; l < n; ++l)
            for (std::size_t h = 0; h < heads; ++h) {
                const AttentionInstance inst = stream.decode_instance(step, l, h);
                const std::size_t t = inst.length();
                const AttentionDist dense = attention_weights(inst);
                const SelectionResult oracle = topk_oracle(dense, budget, t);

                StepMetrics m;
                m.step = step;
                m.layer = l;
                m.head = h;
                m.t = t;
                m.q_norm = norm2(inst.query);
                m.k_max = max_row_norm(inst.keys);

                SelectionResult sel;
                std::optional<Vector> surrogate;
                const std::size_t depth = l + 1;
                m.psaw_boundary = psaw_boundary(depth, t, n, sc.psaw);
                m.psaw_window = t - m.psaw_boundary;
                switch (sc.kind) {
                    case SelectorKind::Full:
                        sel.selected = full_set(t);
                        sel.finalize();
                        break;
                    case SelectorKind::Oracle: sel = oracle; break;
                    case SelectorKind::Cis:
                    case SelectorKind::Cpe:
                        sel = cis.select(step, l, h, inst.query, t, [&] { return dense; });
                        if (sc.kind == SelectorKind::Cpe && sc.psaw_enabled)
                            sel = compose_cpe(sel, psaw_visible_set(m.psaw_boundary, t, budget.c_sink), {}, budget, t,
                                              Phase::Decode);
                        break;
                    case SelectorKind::Tdo: {
                        TdoState& st = tdo[l * heads + h];
                        surrogate = tdo_surrogate(st, t);
                        sel = tdo_select(st, budget, t);
                        break;
                    }
                    case SelectorKind::Qaa: {
                        QaaOutcome q = qaa_select(inst, *sketch, budget, t);
                        sel = std::move(q.selection);
                        surrogate = std::move(q.surrogate);
                        m.qaa_eta = q.eta;
                        break;
                    }
                }

                const SparseAttention sparse = sparse_attention(inst, dense, sel.selected);
                if (sc.kind == SelectorKind::Tdo) tdo_observe(tdo[l * heads + h], sparse.dist.renorm_probs);

                const Vector y_dense = attention_output(inst, dense);
                m.selected = sel.selected.size();
                m.was_shared = sel.was_shared;
                m.anchor_step = sel.anchor_step;
                m.similarity = sel.similarity;
                m.retrieved = sel.retrievals_performed > 0;
                m.fallback = sel.fallback;
                m.tau_pre = sparse.dist.retained;
                m.tau_star = retained_mass(dense.probs, oracle.selected);
                m.overlap = static_cast<double>(set_intersection(sel.selected, oracle.selected).size()) /
                            static_cast<double>(oracle.selected.size());
                m.attn_l1 = l1_distance(dense.probs, sparse.dist.renorm_probs);
                m.tv = 0.5 * m.attn_l1;
                m.out_dev = l1_distance(y_dense, sparse.output) / static_cast<double>(d);
                m.psaw_masked_mass = range_mass(dense.probs, budget.c_sink, m.psaw_boundary);
                m.psaw_bound = psaw_bound_for(cfg.gen, l, m.psaw_window);
                if (m.psaw_bound && m.psaw_masked_mass > *m.psaw_bound + 1e-9) ++trace.psaw_violations;
                if (surrogate) {
                    const MassLossCheck chk = mass_loss_check(dense.probs, *surrogate, std::min(budget.total(), t));
                    m.eps_d = chk.eps_d;
                    m.tau_sd = chk.tau_sd;
                    m.mass_loss_holds = chk.holds;
                    if (!chk.holds) ++trace.mass_loss_violations;
                }
                const FlopsCount f = flops_proxy(m.selected, t, d, m.retrieved, cfg.charge);
                m.flops_dense = f.dense;
                m.flops_sparse = f.sparse;

                summary.t = t;
                summary.retrievals += sel.retrievals_performed;
                trace.fallbacks += m.fallback ? 1 : 0;
                trace.rows.push_back(std::move(m));
            }
        summary.rho_t = static_cast<double>(summary.retrievals) / static_cast<double>(heads * n);
        trace.steps.push_back(summary);
    }

    const auto rows = static_cast<double>(trace.rows.size());
    double shared = 0.0;
    for (const StepMetrics& m : trace.rows) {
        trace.avg_tokens += static_cast<double>(m.selected);
        trace.mean_overlap += m.overlap;
        trace.mean_tau_pre += m.tau_pre;
        trace.mean_tau_star += m.tau_star;
        trace.mean_attn_l1 += m.attn_l1;
        trace.mean_out_dev += m.out_dev;
        trace.flops_dense += m.flops_dense;
        trace.flops_sparse += m.flops_sparse;
        shared += m.was_shared ? 1.0 : 0.0;
    }
    trace.avg_tokens /= rows;
    trace.mean_overlap /= rows;
    trace.mean_tau_pre /= rows;
    trace.mean_tau_star /= rows;
    trace.mean_attn_l1 /= rows;
    trace.mean_out_dev /= rows;
    trace.shared_fraction = shared / rows;
    trace.flops_ratio = trace.flops_dense > 0.0 ? trace.flops_sparse / trace.flops_dense : 1.0;
    for (const StepSummary& s : trace.steps) trace.rho_hat += s.rho_t;
    trace.rho_hat /= static_cast<double>(trace.steps.size());
    return trace;
}

PerturbationReport perturbation_report(const DecodeTrace& trace) {
    if (trace.rows.empty()) throw std::invalid_argument("perturbation_report: empty trace");
    std::vector<double> l1, dev;
    l1.reserve(trace.rows.size());
    dev.reserve(trace.rows.size());
    for (const StepMetrics& m : trace.rows) {
        l1.push_back(m.attn_l1);
        dev.push_back(m.out_dev);
    }
    PerturbationReport r;
    r.rows = trace.rows.size();
    r.attn_l1 = describe(l1);
    r.out_dev = describe(dev);
    return r;
}

}  // namespace prehoc
