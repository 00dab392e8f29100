#include "prehoc/verify.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>

#include "prehoc/bounds.hpp"
#include "prehoc/channel.hpp"
#include "prehoc/decode_sim.hpp"
#include "prehoc/rng.hpp"
#include "prehoc/selectors.hpp"

namespace prehoc {

using nlohmann::json;

json SuiteResult::summary() const {
    json j{{"suite", suite},   {"passed", passed},           {"trials", trials},
           {"failures", failures}, {"worst_slack", worst_slack}, {"details", details}};
    j["first_counterexample"] = first_counterexample ? *first_counterexample : json(nullptr);
    return j;
}

namespace {

/// Accumulates per-trial outcomes; slack = rhs - lhs of the checked inequality.
class Recorder {
public:
    Recorder(SuiteResult& r, bool keep) : r_(r), keep_(keep) {}

    void check(bool ok, double slack, json record) {
        ++r_.trials;
        if (r_.trials == 1 || slack < r_.worst_slack) r_.worst_slack = slack;
        record["ok"] = ok;
        if (!ok) {
            ++r_.failures;
            r_.passed = false;
            if (!r_.first_counterexample) r_.first_counterexample = record;
        }
        if (keep_) r_.records.push_back(std::move(record));
    }

private:
    SuiteResult& r_;
    bool keep_;
};

Vector random_logits(CounterRng& rng, std::size_t len) {
    const double scale = rng.uniform(0.1, 6.0);
    Vector a(len);
    for (double& x : a) x = scale * rng.normal();
    return a;
}

IndexSet random_subset(CounterRng& rng, std::size_t len) {
    IndexSet s;
    const double p = rng.uniform(0.05, 0.95);
    for (std::size_t i = 0; i < len; ++i)
        if (rng.coin(p)) s.push_back(i);
    if (s.empty()) s.push_back(static_cast<std::size_t>(rng.integer(0, len - 1)));
    return s;
}

Vector random_simplex(CounterRng& rng, std::size_t len) {
    Vector p(len);
    double z = 0.0;
    for (double& x : p) {
        x = -std::log(1.0 - rng.uniform());
        z += x;
    }
    for (double& x : p) x /= z;
    return p;
}


std::size_t trials_or(const VerifyOptions& o, std::size_t dflt) { return o.trials.value_or(dflt); }

// ---------------------------------------------------------------------------

void suite_tv_identity(const VerifyOptions& o, SuiteResult& r) {
    Recorder rec(r, o.keep_records);
    for (std::size_t k = 0; k < trials_or(o, 1000); ++k) {
        CounterRng rng(o.seed, {tag(StreamTag::Trial), 1, k});
        const std::size_t len = rng.integer(1, 64);
        const AttentionDist a = softmax(random_logits(rng, len));
        const TruncatedDist tr = truncate(a, random_subset(rng, len));
        const double tv = 0.5 * l1_distance(a.probs, tr.renorm_probs);
        const double err = std::abs(tv - tr.dropped);
        rec.check(err <= 1e-12, 1e-12 - err, {{"trial", k}, {"L", len}, {"tv", tv}, {"delta", tr.dropped}, {"error", err}});
    }
}

void suite_kl_identity(const VerifyOptions& o, SuiteResult& r) {
    Recorder rec(r, o.keep_records);
    for (std::size_t k = 0; k < trials_or(o, 1000); ++k) {
        CounterRng rng(o.seed, {tag(StreamTag::Trial), 3, k});
        const std::size_t len = rng.integer(1, 64);
        const AttentionDist a = softmax(random_logits(rng, len));
        const TruncatedDist tr = truncate(a, random_subset(rng, len));
        const double kl = kl_divergence(tr.renorm_probs, a.probs);
        const double target = kl_variant(tr.retained);
        const double err = std::abs(kl - target);
        rec.check(err <= 1e-10, 1e-10 - err, {{"trial", k}, {"L", len}, {"kl", kl}, {"ln_inv_tau", target}, {"error", err}});
    }
}

void suite_softmax_lipschitz(const VerifyOptions& o, SuiteResult& r) {
    Recorder rec(r, o.keep_records);
    for (std::size_t k = 0; k < trials_or(o, 10000); ++k) {
        CounterRng rng(o.seed, {tag(StreamTag::Trial), 4, k});
        const std::size_t len = rng.integer(1, 64);
        const Vector a = random_logits(rng, len);
        Vector b = a;
        const double eps = std::pow(10.0, rng.uniform(-6.0, 1.0));
        for (double& x : b) x += eps * rng.normal();
        const double lhs = l1_distance(softmax(a).probs, softmax(b).probs);
        const double rhs = 2.0 * linf_distance(a, b) + 1e-12;
        rec.check(lhs <= rhs, rhs - lhs, {{"trial", k}, {"L", len}, {"l1_softmax", lhs}, {"two_linf_logits", rhs - 1e-12}});
    }
}

void suite_oracle_optimal(const VerifyOptions& o, SuiteResult& r) {
    if (o.max_len > 20) throw std::invalid_argument("oracle-optimal: max-len above 20 is too large to enumerate");
    Recorder rec(r, o.keep_records);
    const std::size_t per_shape = trials_or(o, 100);
    for (std::size_t len = 1; len <= o.max_len; ++len)
        for (std::size_t n = 1; n <= std::min(o.max_budget, len); ++n)
            for (std::size_t k = 0; k < per_shape; ++k) {
                CounterRng rng(o.seed, {tag(StreamTag::Trial), 5, len, n, k});
                AttentionDist a;
                a.probs = random_simplex(rng, len);
                a.logits.assign(len, 0.0);
                const BudgetSpec budget{0, 0, n};
                const SelectionResult s = topk_oracle(a, budget, len);
                const double tau = retained_mass(a.probs, s.selected);
                double best = -1.0;
                std::uint32_t best_mask = 0;
                for (std::uint32_t mask = 0; mask < (1u << len); ++mask) {
                    if (static_cast<std::size_t>(std::popcount(mask)) != n) continue;
                    double sum = 0.0;
                    for (std::size_t i = 0; i < len; ++i)
                        if (mask >> i & 1u) sum += a.probs[i];
                    if (sum > best) {
                        best = sum;
                        best_mask = mask;
                    }
                }
                rec.check(tau == best, tau - best,
                          {{"L", len}, {"N", n}, {"trial", k}, {"tau_topk", tau}, {"tau_best", best}, {"best_mask", best_mask}});
            }
}

void suite_mass_loss(const VerifyOptions& o, SuiteResult& r) {
    Recorder rec(r, o.keep_records);
    for (std::size_t k = 0; k < trials_or(o, 10000); ++k) {
        CounterRng rng(o.seed, {tag(StreamTag::Trial), 6, k});
        const std::size_t len = rng.integer(1, 64);
        const Vector a = softmax(random_logits(rng, len)).probs;
        Vector a_hat;
        if (rng.coin(0.5)) {
            a_hat = random_simplex(rng, len);
        } else {
            // Nearby surrogate: perturbed logits.
            Vector logits(len);
            for (std::size_t i = 0; i < len; ++i) logits[i] = std::log(a[i]) + rng.uniform(0.0, 2.0) * rng.normal();
            a_hat = softmax(logits).probs;
        }
        const std::size_t n = rng.integer(1, len);
        const MassLossCheck c = mass_loss_check(a, a_hat, n);
        rec.check(c.holds, c.tau_sd - (c.tau_star - 2.0 * c.eps_d),
                  {{"source", "random"}, {"trial", k}, {"L", len}, {"N", n}, {"tau_star", c.tau_star},
                   {"tau_sd", c.tau_sd}, {"eps_d", c.eps_d}});
    }
    // Every step of short TDO and QAA decode runs.
    std::size_t sim_rows = 0;
    for (SelectorKind kind : {SelectorKind::Tdo, SelectorKind::Qaa})
        for (std::uint64_t run = 0; run < 2; ++run) {
            SimConfig cfg;
            cfg.gen.seed = stream_key(o.seed, {6, run});
            cfg.head = {16, 2, 2};
            cfg.selector.kind = kind;
            cfg.selector.budget = {4, 8, 16};
            cfg.prefill_len = 128;
            cfg.steps = 32;
            cfg.selector.qaa.sketch_dim = 4;
            cfg.selector.qaa.seed = run;
            const DecodeTrace trace = run_decode(cfg);
            for (const StepMetrics& m : trace.rows) {
                ++sim_rows;
                const double slack = *m.tau_sd - (m.tau_star - 2.0 * *m.eps_d);
                json record{{"source", to_string(kind)}, {"run", run}, {"step", m.step}, {"layer", m.layer},
                            {"head", m.head}, {"t", m.t}, {"tau_sd", *m.tau_sd}, {"eps_d", *m.eps_d}};
                rec.check(*m.mass_loss_holds, slack, std::move(record));
            }
        }
    r.details["simulation_rows"] = sim_rows;
}

void suite_centroid_drift(const VerifyOptions& o, SuiteResult& r) {
    Recorder rec(r, o.keep_records);
    for (std::size_t k = 0; k < trials_or(o, 10000); ++k) {
        CounterRng rng(o.seed, {tag(StreamTag::Trial), 7, k});
        const std::size_t len = rng.integer(2, 64), d = rng.integer(1, 32);
        AttentionInstance inst;
        inst.keys = Matrix(len, d);
        inst.values = Matrix(len, 1);
        const double kscale = rng.uniform(0.1, 8.0);
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j < d; ++j) inst.keys(i, j) = kscale * rng.normal();
        inst.query.resize(d);
        for (double& x : inst.query) x = rng.normal();
        const double qn = norm2(inst.query);
        if (qn == 0.0) inst.query[0] = 1.0;
        else
            for (double& x : inst.query) x /= qn;
        Vector delta(d);
        for (double& x : delta) x = rng.normal();
        const double dn = norm2(delta);
        const double radius = std::pow(10.0, rng.uniform(-4.0, 0.0));
        for (double& x : delta) x *= dn > 0.0 ? radius / dn : 0.0;
        AttentionInstance moved = inst;
        for (std::size_t j = 0; j < d; ++j) moved.query[j] += delta[j];

        Vector pos(len);
        const bool integer_positions = rng.coin(0.5);
        for (std::size_t i = 0; i < len; ++i) pos[i] = integer_positions ? static_cast<double>(i) : rng.uniform(-50.0, 50.0);
        const double diam = *std::max_element(pos.begin(), pos.end()) - *std::min_element(pos.begin(), pos.end());
        double kmax = 0.0;
        for (std::size_t i = 0; i < len; ++i) kmax = std::max(kmax, norm2(inst.keys.row(i)));

        const double lhs = std::abs(centroid(attention_weights(moved), pos) - centroid(attention_weights(inst), pos));
        const double rhs = 2.0 * diam * kmax * norm2(delta) / std::sqrt(static_cast<double>(d)) + 1e-9;
        rec.check(lhs <= rhs, rhs - lhs,
                  {{"trial", k}, {"L", len}, {"d", d}, {"drift", lhs}, {"bound", rhs - 1e-9}, {"delta_norm", norm2(delta)}});
    }
}

void suite_dominance_chain(const VerifyOptions& o, SuiteResult& r) {
    Recorder rec(r, o.keep_records);
    for (std::size_t k = 0; k < trials_or(o, 1000); ++k) {
        CounterRng rng(o.seed, {tag(StreamTag::Trial), 11, k});
        const std::size_t len = rng.integer(2, 4096);
        const double hi = g_domain_max(len);
        const double delta_star = rng.uniform(0.0, hi);
        const double eps_d = rng.uniform(0.0, (hi - delta_star) / 2.0);
        const double beta = rng.uniform(0.0, 2.0 * eps_d);
        const double g0 = prehoc_bound(delta_star, 0.0, len).g_value;
        const double g1 = prehoc_bound(delta_star, beta, len).g_value;
        const double g2 = posthoc_bound(delta_star, eps_d, len).g_value;
        const double tol = 1e-12;
        const double slack = std::min(g1 - g0, g2 - g1) + tol;
        rec.check(g0 <= g1 + tol && g1 <= g2 + tol, slack,
                  {{"trial", k}, {"L", len}, {"delta_star", delta_star}, {"beta_th", beta}, {"eps_d", eps_d},
                   {"g_oracle", g0}, {"g_prehoc", g1}, {"g_posthoc", g2}});
    }
}

void suite_mi_channel(const VerifyOptions& o, SuiteResult& r) {
    Recorder rec(r, o.keep_records);
    const ChannelGenConfig gen;  // |X| <= 8, L <= 8, alphabet <= 4
    std::size_t lower_violations = 0, upper_violations = 0;
    for (std::size_t k = 0; k < o.channels; ++k) {
        const ChannelModel ch = random_channel(gen, o.seed, k);
        const IndexSet sel = random_selection(ch.length(), o.seed, k);
        const double i_full = exact_mi_channel(ch).mi;
        const ChannelMi trunc = exact_mi_channel(ch, sel);
        const double gap = i_full - trunc.mi;
        const double g = mi_loss_bound(trunc.delta_sup, ch.length());
        const bool upper = gap <= g + 1e-9;
        const bool lower = gap >= -1e-9;
        const bool two_sided = std::abs(gap) <= g + 1e-9;
        upper_violations += upper ? 0 : 1;
        lower_violations += lower ? 0 : 1;
        const bool ok = o.bound_only ? two_sided : (upper && lower);
        const double slack = o.bound_only ? g - std::abs(gap) : std::min(g - gap, gap);
        rec.check(ok, slack,
                  {{"channel", k}, {"contexts", ch.contexts.size()}, {"L", ch.length()}, {"alphabet", ch.alphabet},
                   {"selected", sel}, {"I_full", i_full}, {"I_S", trunc.mi}, {"delta_sup", trunc.delta_sup}, {"g", g},
                   {"lower_ok", lower}, {"upper_ok", upper}});
    }
    r.details["mode"] = o.bound_only ? "two-sided |I_full - I_S| <= g(delta_sup)" : "0 <= I_full - I_S <= g(delta_sup)";
    r.details["lower_violations"] = lower_violations;
    r.details["upper_violations"] = upper_violations;
}

SimConfig cis_guarantee_config(std::uint64_t seed) {
    SimConfig c;
    c.gen.seed = seed;
    c.gen.walk_rate = 0.002;
    c.gen.weight_scale = 4.0;
    c.head = {16, 2, 2};
    c.selector.kind = SelectorKind::Cis;
    c.selector.budget = {4, 16, 24};
    c.selector.cis.block_size = 8;
    c.selector.cis.sim_threshold = 0.99998;
    c.selector.cis.dilate_count = 4;
    c.selector.cis.dilate_radius = 8;
    c.prefill_len = 96;
    c.steps = 256;
    return c;
}

void suite_cis_guarantee(const VerifyOptions& o, SuiteResult& r) {
    Recorder rec(r, o.keep_records);
    std::size_t shared_rows = 0, uncovered_runs = 0;
    double min_sim = 1.0;
    json runs = json::array();
    for (std::size_t run = 0; run < trials_or(o, 20); ++run) {
        const SimConfig cfg = cis_guarantee_config(stream_key(o.seed, {8, run}));
        const DecodeTrace trace = run_decode(cfg);
        double kmax = 0.0;
        std::size_t tmax = 0;
        for (const StepMetrics& m : trace.rows) {
            kmax = std::max(kmax, m.k_max);
            tmax = std::max(tmax, m.t);
        }
        CertificateInput in;
        in.theta_sim = cfg.selector.cis.sim_threshold;
        in.k_max = kmax;
        in.diam_p = static_cast<double>(tmax - 1);
        in.dilate_radius = cfg.selector.cis.dilate_radius;
        const CisCertificate cert = cis_certificate(in, cfg.head.d);
        if (!cert.covered) ++uncovered_runs;
        std::size_t run_shared = 0;
        for (const StepMetrics& m : trace.rows) {
            if (!m.was_shared) continue;
            ++run_shared;
            min_sim = std::min(min_sim, *m.similarity);
            const double rhs = m.tau_star - 2.0 * cert.delta_att;
            const bool ok = cert.covered && *m.similarity >= in.theta_sim && m.tau_pre >= rhs - 1e-12;
            rec.check(ok, m.tau_pre - rhs,
                      {{"run", run}, {"step", m.step}, {"layer", m.layer}, {"head", m.head}, {"tau_pre", m.tau_pre},
                       {"tau_star", m.tau_star}, {"delta_att", cert.delta_att}, {"similarity", *m.similarity},
                       {"s_radius", cert.s_radius}, {"r", in.dilate_radius}});
        }
        shared_rows += run_shared;
        runs.push_back({{"run", run}, {"rho_hat", trace.rho_hat}, {"shared_rows", run_shared}, {"k_max", kmax},
                        {"delta_att", cert.delta_att}, {"s_radius", cert.s_radius}, {"covered", cert.covered}});
    }
    if (shared_rows == 0 || uncovered_runs > 0) r.passed = false;
    r.details["shared_rows"] = shared_rows;
    r.details["uncovered_runs"] = uncovered_runs;
    r.details["min_shared_similarity"] = min_sim;
    r.details["runs"] = runs;
}

void suite_psaw_bound(const VerifyOptions& o, SuiteResult& r) {
    Recorder rec(r, o.keep_records);
    std::size_t top_rows = 0;
    for (std::size_t run = 0; run < trials_or(o, 10); ++run) {
        CounterRng rng(o.seed, {tag(StreamTag::Trial), 9, run});
        SimConfig cfg;
        cfg.gen.seed = stream_key(o.seed, {9, run});
        cfg.gen.kind = GeneratorKind::ExpDecayChannel;
        cfg.head = {8, 2, 8};
        cfg.gen.decay_rate.clear();
        cfg.gen.sink_mass.clear();
        cfg.gen.decay_factor.clear();
        for (std::size_t l = 0; l < cfg.head.layers; ++l) {
            const double tau_sink = rng.uniform(0.0, 0.5);
            cfg.gen.decay_rate.push_back(rng.uniform(0.005, 0.2));
            cfg.gen.sink_mass.push_back(tau_sink);
            cfg.gen.decay_factor.push_back(rng.uniform(0.05, 1.0 - tau_sink));
        }
        cfg.gen.sink_count = 4;
        cfg.selector.kind = SelectorKind::Cpe;
        cfg.selector.budget = {4, 16, 32};
        cfg.prefill_len = 256;
        cfg.steps = 32;
        cfg.simulate_prefill = true;
        cfg.prefill_stride = 8;
        const DecodeTrace trace = run_decode(cfg);
        const PsawConfig& psaw = cfg.selector.psaw;
        const double u = std::pow(psaw.phi, psaw.alpha);
        auto check_row = [&](const char* phase, std::size_t step, std::size_t layer, std::size_t t, std::size_t boundary,
                             double masked, double bound) {
            rec.check(masked <= bound + 1e-9, bound - masked,
                      {{"run", run}, {"phase", phase}, {"step", step}, {"layer", layer}, {"t", t}, {"P", boundary},
                       {"masked", masked}, {"bound", bound}});
            if (layer + 1 == cfg.head.layers) {
                ++top_rows;
                const double window = std::floor(u * static_cast<double>(t));
                const double lead = std::min(cfg.gen.kappa_at(layer), 1.0 - cfg.gen.sink_mass_at(layer));
                const double top_bound = lead * std::exp(-cfg.gen.lambda_at(layer) * window);
                const bool ok = static_cast<double>(t - boundary) >= window && masked <= top_bound + 1e-9;
                rec.check(ok, top_bound - masked,
                          {{"run", run}, {"phase", phase}, {"step", step}, {"layer", layer}, {"t", t},
                           {"top_layer_window", window}, {"masked", masked}, {"bound", top_bound}});
            }
        };
        for (const PrefillMetrics& m : trace.prefill)
            check_row("prefill", m.position, m.layer, m.t, m.psaw_boundary, m.psaw_masked_mass, *m.psaw_bound);
        for (const StepMetrics& m : trace.rows)
            check_row("decode", m.step, m.layer, m.t, m.psaw_boundary, m.psaw_masked_mass, *m.psaw_bound);
    }
    r.details["top_layer_rows"] = top_rows;
}

void suite_etf_bound(const VerifyOptions& o, SuiteResult& r) {
    Recorder rec(r, o.keep_records);
    std::size_t frozen_rows = 0;
    for (std::size_t run = 0; run < trials_or(o, 10); ++run) {
        CounterRng rng(o.seed, {tag(StreamTag::Trial), 10, run});
        SimConfig cfg;
        cfg.gen.seed = stream_key(o.seed, {10, run});
        cfg.head = {16, 2, 8};
        cfg.gen.key_update_bound = rng.uniform(0.05, 2.0);
        cfg.gen.key_update_rate = rng.uniform(0.1, 1.5);
        cfg.selector.etf.start_layer = cfg.head.layers / 2 + run % 3;
        cfg.gen.update_ref_layer = cfg.selector.etf.start_layer;
        cfg.selector.kind = SelectorKind::Full;
        cfg.selector.budget = {4, 16, 32};
        cfg.prefill_len = 256;
        cfg.steps = 1;
        cfg.simulate_prefill = true;
        cfg.prefill_stride = 8;
        const DecodeTrace trace = run_decode(cfg);
        for (const PrefillMetrics& m : trace.prefill) {
            if (m.frozen > 0) ++frozen_rows;
            rec.check(m.etf_tv <= *m.etf_bound + 1e-12, *m.etf_bound - m.etf_tv,
                      {{"run", run}, {"position", m.position}, {"layer", m.layer}, {"head", m.head}, {"E", m.etf_boundary},
                       {"frozen", m.frozen}, {"etf_tv", m.etf_tv}, {"bound", *m.etf_bound}});
        }
    }
    if (frozen_rows == 0) r.passed = false;
    r.details["frozen_rows"] = frozen_rows;
}

using SuiteFn = void (*)(const VerifyOptions&, SuiteResult&);

const std::map<std::string, SuiteFn>& registry() {
    static const std::map<std::string, SuiteFn> m = {
        {"tv-identity", suite_tv_identity},         {"mi-channel", suite_mi_channel},
        {"kl-identity", suite_kl_identity},         {"softmax-lipschitz", suite_softmax_lipschitz},
        {"oracle-optimal", suite_oracle_optimal},   {"mass-loss", suite_mass_loss},
        {"centroid-drift", suite_centroid_drift},   {"cis-guarantee", suite_cis_guarantee},
        {"psaw-bound", suite_psaw_bound},           {"etf-bound", suite_etf_bound},
        {"dominance-chain", suite_dominance_chain},
    };
    return m;
}

}  // namespace

const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names = {"tv-identity",    "mi-channel",     "kl-identity",   "softmax-lipschitz",
                                                   "oracle-optimal", "mass-loss",      "centroid-drift", "cis-guarantee",
                                                   "psaw-bound",     "etf-bound",      "dominance-chain"};
    return names;
}

bool is_suite(const std::string& name) { return registry().count(name) > 0; }

SuiteResult run_suite(const std::string& name, const VerifyOptions& opts) {
    auto it = registry().find(name);
    if (it == registry().end()) throw std::invalid_argument("unknown verify suite '" + name + "'");
    SuiteResult r;
    r.suite = name;
    it->second(opts, r);
    return r;
}

}  // namespace prehoc
