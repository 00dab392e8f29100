#include "prehoc/report.hpp"

#include <cmath>
#include <functional>
#include <sstream>

namespace prehoc {

using nlohmann::json;

namespace {

template <class T>
json opt(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

struct Cell {
    Column column;
    std::function<json(const StepMetrics&)> value;
};

struct PrefillCell {
    Column column;
    std::function<json(const PrefillMetrics&)> value;
};

const std::vector<Cell>& trace_cells() {
    static const std::vector<Cell> cells = {
        {{"step", "0-based decode step"}, [](const StepMetrics& m) { return json(m.step); }},
        {{"layer", "0-based layer (depth layer + 1 in the window schedules)"}, [](const StepMetrics& m) { return json(m.layer); }},
        {{"head", "0-based head"}, [](const StepMetrics& m) { return json(m.head); }},
        {{"t", "context length including the current token"}, [](const StepMetrics& m) { return json(m.t); }},
        {{"selected", "|S_t| after deduplication"}, [](const StepMetrics& m) { return json(m.selected); }},
        {{"was_shared", "index set reused from an earlier in-block query"}, [](const StepMetrics& m) { return json(m.was_shared); }},
        {{"anchor_step", "step whose index set was used (empty for non-CIS selectors)"}, [](const StepMetrics& m) { return opt(m.anchor_step); }},
        {{"similarity", "cosine to the sharing source (shared rows only)"}, [](const StepMetrics& m) { return opt(m.similarity); }},
        {{"retrieved", "head performed a scoring pass (counts toward R_t)"}, [](const StepMetrics& m) { return json(m.retrieved); }},
        {{"fallback", "composition fell back to sinks + local window"}, [](const StepMetrics& m) { return json(m.fallback); }},
        {{"q_norm", "||q||"}, [](const StepMetrics& m) { return json(m.q_norm); }},
        {{"k_max", "max_j ||k_j||"}, [](const StepMetrics& m) { return json(m.k_max); }},
        {{"tau_pre", "attention mass retained by S_t"}, [](const StepMetrics& m) { return json(m.tau_pre); }},
        {{"tau_star", "attention mass retained by the structured top-k oracle"}, [](const StepMetrics& m) { return json(m.tau_star); }},
        {{"overlap", "|S_t intersect S_t*| / |S_t*|"}, [](const StepMetrics& m) { return json(m.overlap); }},
        {{"attn_l1", "||A - A~||_1 with A~ renormalized on S_t, zero elsewhere (= 2 delta)"}, [](const StepMetrics& m) { return json(m.attn_l1); }},
        {{"tv", "total-variation distance, equal to the dropped mass delta"}, [](const StepMetrics& m) { return json(m.tv); }},
        {{"out_dev", "mean absolute deviation of the sparse output from the dense one"}, [](const StepMetrics& m) { return json(m.out_dev); }},
        {{"psaw_boundary", "earliest visible non-sink position P"}, [](const StepMetrics& m) { return json(m.psaw_boundary); }},
        {{"psaw_window", "D = t - P"}, [](const StepMetrics& m) { return json(m.psaw_window); }},
        {{"psaw_masked_mass", "dense attention mass on [C_sink, P)"}, [](const StepMetrics& m) { return json(m.psaw_masked_mass); }},
        {{"psaw_bound", "min(kappa, 1 - tau_sink) e^{-lambda D} (exp_decay streams only)"}, [](const StepMetrics& m) { return opt(m.psaw_bound); }},
        {{"eps_d", "posterior bias 1/2 ||A - A_hat||_1 (tdo, qaa)"}, [](const StepMetrics& m) { return opt(m.eps_d); }},
        {{"tau_sd", "mass of Top_N of the surrogate under A (tdo, qaa)"}, [](const StepMetrics& m) { return opt(m.tau_sd); }},
        {{"mass_loss_holds", "tau_sd >= tau*_N - 2 eps_d (tdo, qaa)"}, [](const StepMetrics& m) { return opt(m.mass_loss_holds); }},
        {{"qaa_eta", "observed ||a - a_hat||_inf (qaa)"}, [](const StepMetrics& m) { return opt(m.qaa_eta); }},
        {{"flops_dense", "dense multiply-accumulates 2 L d"}, [](const StepMetrics& m) { return json(m.flops_dense); }},
        {{"flops_sparse", "sparse multiply-accumulates including the retrieval charge"}, [](const StepMetrics& m) { return json(m.flops_sparse); }},
    };
    return cells;
}

const std::vector<PrefillCell>& prefill_cells() {
    static const std::vector<PrefillCell> cells = {
        {{"position", "prefill query position"}, [](const PrefillMetrics& m) { return json(m.position); }},
        {{"layer", "0-based layer"}, [](const PrefillMetrics& m) { return json(m.layer); }},
        {{"head", "0-based head"}, [](const PrefillMetrics& m) { return json(m.head); }},
        {{"t", "context length (position + 1)"}, [](const PrefillMetrics& m) { return json(m.t); }},
        {{"etf_boundary", "last frozen non-sink boundary E"}, [](const PrefillMetrics& m) { return json(m.etf_boundary); }},
        {{"frozen", "positions in [C_sink, E)"}, [](const PrefillMetrics& m) { return json(m.frozen); }},
        {{"etf_tv", "1/2 ||A~ - A||_1 with frozen positions on previous-depth keys"}, [](const PrefillMetrics& m) { return json(m.etf_tv); }},
        {{"etf_bound", "(||q|| / sqrt d) B e^{-mu (l - l_s)} (random_walk only)"}, [](const PrefillMetrics& m) { return opt(m.etf_bound); }},
        {{"q_norm", "||q||"}, [](const PrefillMetrics& m) { return json(m.q_norm); }},
        {{"psaw_boundary", "earliest visible non-sink position P"}, [](const PrefillMetrics& m) { return json(m.psaw_boundary); }},
        {{"psaw_masked_mass", "dense attention mass on [C_sink, P)"}, [](const PrefillMetrics& m) { return json(m.psaw_masked_mass); }},
        {{"psaw_bound", "min(kappa, 1 - tau_sink) e^{-lambda D} (exp_decay only)"}, [](const PrefillMetrics& m) { return opt(m.psaw_bound); }},
    };
    return cells;
}

std::string csv_cell(const json& v) {
    if (v.is_null()) return "";
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_float()) return format_double(v.get<double>());
    return v.dump();
}

template <class Cells, class Rows>
std::string to_csv(const Cells& cells, const Rows& rows, const std::string& run_id, std::uint64_t seed) {
    std::ostringstream os;
    os << "run_id,seed";
    for (const auto& c : cells) os << ',' << c.column.name;
    os << '\n';
    for (const auto& r : rows) {
        os << run_id << ',' << seed;
        for (const auto& c : cells) os << ',' << csv_cell(c.value(r));
        os << '\n';
    }
    return os.str();
}

}  // namespace

const std::vector<Column>& trace_columns() {
    static const std::vector<Column> cols = [] {
        std::vector<Column> c{{"run_id", "output.run_id"}, {"seed", "generator.seed"}};
        for (const Cell& x : trace_cells()) c.push_back(x.column);
        return c;
    }();
    return cols;
}

const std::vector<Column>& prefill_columns() {
    static const std::vector<Column> cols = [] {
        std::vector<Column> c{{"run_id", "output.run_id"}, {"seed", "generator.seed"}};
        for (const PrefillCell& x : prefill_cells()) c.push_back(x.column);
        return c;
    }();
    return cols;
}

std::string trace_csv(const DecodeTrace& trace, const std::string& run_id, std::uint64_t seed) {
    return to_csv(trace_cells(), trace.rows, run_id, seed);
}

std::string prefill_csv(const DecodeTrace& trace, const std::string& run_id, std::uint64_t seed) {
    return to_csv(prefill_cells(), trace.prefill, run_id, seed);
}

json trace_json(const DecodeTrace& trace, const std::string& run_id, std::uint64_t seed) {
    json rows = json::array();
    for (const StepMetrics& m : trace.rows) {
        json r{{"run_id", run_id}, {"seed", seed}};
        for (const Cell& c : trace_cells()) r[c.column.name] = c.value(m);
        rows.push_back(std::move(r));
    }
    return rows;
}

json to_json(const BoundReport& r) {
    return {{"argument", r.argument},       {"g_value", r.g_value}, {"domain_clamped", r.domain_clamped},
            {"vacuous", r.vacuous},         {"kl_value", opt(r.kl_value)}};
}

json to_json(const PerturbationReport& r) {
    auto dist = [](const Distribution& d) {
        return json{{"mean", d.mean}, {"p50", d.p50}, {"p90", d.p90}, {"p99", d.p99}, {"max", d.max}};
    };
    return {{"rows", r.rows}, {"attn_l1", dist(r.attn_l1)}, {"out_dev", dist(r.out_dev)}};
}

json summary_json(const DecodeTrace& trace, const ExperimentConfig& cfg) {
    const SimConfig& s = cfg.sim;
    json j;
    j["run_id"] = cfg.output.run_id;
    j["seed"] = s.gen.seed;
    j["selector"] = to_string(s.selector.kind);
    j["generator"] = to_string(s.gen.kind);
    j["steps"] = s.steps;
    j["layers"] = s.head.layers;
    j["heads"] = s.head.heads;
    j["rows"] = trace.rows.size();
    j["rho_hat"] = trace.rho_hat;
    j["avg_tokens"] = trace.avg_tokens;
    j["mean_overlap"] = trace.mean_overlap;
    j["mean_tau_pre"] = trace.mean_tau_pre;
    j["mean_tau_star"] = trace.mean_tau_star;
    j["mean_attn_l1"] = trace.mean_attn_l1;
    j["mean_out_dev"] = trace.mean_out_dev;
    j["shared_fraction"] = trace.shared_fraction;
    j["fallbacks"] = trace.fallbacks;
    j["mass_loss_violations"] = trace.mass_loss_violations;
    j["psaw_violations"] = trace.psaw_violations;
    j["etf_violations"] = trace.etf_violations;
    j["prefill_rows"] = trace.prefill.size();
    j["flops"] = {{"dense", trace.flops_dense},
                  {"sparse", trace.flops_sparse},
                  {"ratio", trace.flops_ratio},
                  {"charge", to_string(s.charge)}};
    if (!trace.rows.empty()) j["perturbation"] = to_json(perturbation_report(trace));
    json rho = json::array();
    for (const StepSummary& st : trace.steps) rho.push_back(st.rho_t);
    j["rho_t"] = rho;
    j["certificates"] = certificate_json(cfg);
    return j;
}

json certificate_json(const ExperimentConfig& cfg) {
    const CertificateInput& in = cfg.bounds.cert;
    in.validate();
    const std::size_t d = cfg.sim.head.d, n = cfg.sim.head.layers, t = cfg.bounds.context_len;
    const PsawConfig& psaw = cfg.sim.selector.psaw;
    const EtfConfig& etf = cfg.sim.selector.etf;
    json j;
    j["inputs"] = {{"theta_sim", in.theta_sim},   {"k_max", in.k_max},
                   {"q_max", in.q_max},           {"q_is_average", in.q_is_average},
                   {"diam_p", in.diam_p},         {"lambda", in.lambda},
                   {"kappa", in.kappa},           {"tau_sink", in.tau_sink},
                   {"window_dist", in.window_dist}, {"u_frac", in.u_frac},
                   {"b_const", in.b_const},       {"mu", in.mu},
                   {"depth_gap", in.depth_gap},   {"dilate_radius", in.dilate_radius},
                   {"beta_psaw_target", in.beta_psaw_target}, {"beta_etf_target", in.beta_etf_target},
                   {"delta_star", cfg.bounds.delta_star}, {"context_len", t},
                   {"d", d},                      {"layers", n}};
    j["schedules"] = {
        {"psaw", {{"start_layer", psaw.start(n)}, {"phi", psaw.phi}, {"alpha", psaw.alpha},
                  {"phi_alpha", std::pow(psaw.phi, psaw.alpha)}}},
        {"etf", {{"start_layer", etf.start(n)}, {"psi", etf.psi}, {"gamma", etf.gamma}}},
        {"cis", {{"block_size", cfg.sim.selector.cis.block_size},
                 {"sim_threshold", cfg.sim.selector.cis.sim_threshold},
                 {"dilate_count", cfg.sim.selector.effective_cis().m()},
                 {"dilate_radius", cfg.sim.selector.cis.dilate_radius}}}};

    const CisCertificate cis = cis_certificate(in, d);
    j["cis"] = {{"delta_att", cis.delta_att}, {"delta_centroid", cis.delta_centroid}, {"s_radius", cis.s_radius},
                {"covered", cis.covered},     {"eps_drift", cis.eps_drift},           {"beta_th", cis.beta_th},
                {"vacuous", cis.vacuous}};
    const PsawCertificate ps = psaw_certificate(in, t);
    j["psaw"] = {{"bound", ps.bound}, {"top_layer_window", ps.top_layer_window}, {"top_layer_bound", ps.top_layer_bound}};
    const EtfCertificate et = etf_certificate(in, d);
    CertificateInput top = in;
    top.depth_gap = static_cast<double>(n - std::min(n, etf.start(n)));
    const EtfCertificate et_top = etf_certificate(top, d);
    j["etf"] = {{"bound", et.bound}, {"average_case", et.average_case}, {"top_layer_depth_gap", top.depth_gap},
                {"top_layer_bound", et_top.bound}};
    j["joint"] = {{"layer", ps.bound + et.bound}, {"top_layer", ps.top_layer_bound + et_top.bound}};

    const TuningResult tr = tune_schedules(in, t, d);
    CertificateInput sub = in;
    sub.u_frac = std::min(1.0, tr.floor_safe_phi_alpha);
    sub.depth_gap = static_cast<double>(tr.min_depth_gap_int);
    const PsawCertificate ps_sub = psaw_certificate(sub, t);
    const EtfCertificate et_sub = etf_certificate(sub, d);
    j["tuning"] = {{"min_phi_alpha", tr.min_phi_alpha},
                   {"floor_safe_phi_alpha", tr.floor_safe_phi_alpha},
                   {"min_depth_gap", tr.min_depth_gap},
                   {"min_depth_gap_int", tr.min_depth_gap_int},
                   {"psaw_infeasible", tr.psaw_infeasible},
                   {"substituted_psaw_bound", ps_sub.top_layer_bound},
                   {"substituted_etf_bound", et_sub.bound}};

    j["prehoc_mi"] = {{"oracle", to_json(prehoc_bound(cfg.bounds.delta_star, 0.0, t))},
                      {"cis", to_json(prehoc_bound(cfg.bounds.delta_star, cis.beta_th, t))},
                      {"joint", to_json(prehoc_bound(cfg.bounds.delta_star, cis.beta_th + ps.bound + et.bound, t))}};
    return j;
}

}  // namespace prehoc
