#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "prehoc/selectors.hpp"
#include "prehoc/synth.hpp"
#include "prehoc/window.hpp"

namespace prehoc {

enum class SelectorKind { Full, Oracle, Cis, Tdo, Qaa, Cpe };

std::string to_string(SelectorKind k);
SelectorKind parse_selector_kind(const std::string& s);

/// How a retrieving head is charged in the FLOP proxy: a scoring pass over all L keys
/// (L d multiply-accumulates) or a full dense attention pass (2 L d).
enum class RetrievalCharge { Scoring, Dense };

std::string to_string(RetrievalCharge c);
RetrievalCharge parse_retrieval_charge(const std::string& s);

struct SelectorConfig {
    SelectorKind kind = SelectorKind::Cis;
    BudgetSpec budget;  // shared by every selector; copied into the CIS config
    CisConfig cis;
    PsawConfig psaw;
    EtfConfig etf;
    QaaConfig qaa;
    bool psaw_enabled = true;  // CPE only: intersect with the PSAW visible set
    bool etf_enabled = true;   // prefill only

    CisConfig effective_cis() const;
    void validate(std::size_t n_layers, std::size_t d) const;
    bool operator==(const SelectorConfig&) const = default;
};

struct SimConfig {
    SynthGenConfig gen;
    HeadConfig head;
    SelectorConfig selector;
    std::size_t steps = 64;         // T
    std::size_t prefill_len = 1024;  // initial L
    bool simulate_prefill = false;
    std::size_t prefill_stride = 16;  // every stride-th prefill position (plus the last) is simulated
    RetrievalCharge charge = RetrievalCharge::Scoring;

    void validate() const;
    bool operator==(const SimConfig&) const = default;
};

/// One (step, layer, head) row of the decode trace.
struct StepMetrics {
    std::size_t step = 0;
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t t = 0;  // context length
    std::size_t selected = 0;
    bool was_shared = false;
    std::optional<std::size_t> anchor_step;
    std::optional<double> similarity;
    bool retrieved = false;
    bool fallback = false;
    double q_norm = 0.0;
    double k_max = 0.0;
    double tau_pre = 0.0;   // retained mass of S_t
    double tau_star = 0.0;  // retained mass of the structured oracle
    double overlap = 0.0;   // |S_t ∩ S_t*| / |S_t*|
    double attn_l1 = 0.0;   // ||A - A~_S||_1, A~ renormalized on S and zero elsewhere (= 2 delta)
    double tv = 0.0;        // 1/2 of attn_l1 (= delta)
    double out_dev = 0.0;   // mean |y_sparse - y_dense|
    // PSAW window at this (layer, t), measured on the dense distribution.
    std::size_t psaw_boundary = 0;
    std::size_t psaw_window = 0;  // D = t - P
    double psaw_masked_mass = 0.0;
    std::optional<double> psaw_bound;  // exp-decay streams only
    // Mis-scoring check for posterior selectors (TDO, QAA).
    std::optional<double> eps_d;
    std::optional<double> tau_sd;
    std::optional<bool> mass_loss_holds;
    std::optional<double> qaa_eta;
    double flops_dense = 0.0;
    double flops_sparse = 0.0;
};

/// One (position, layer, head) row of the prefill simulation.
struct PrefillMetrics {
    std::size_t position = 0;
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t t = 0;
    std::size_t etf_boundary = 0;
    std::size_t frozen = 0;
    double etf_tv = 0.0;                // 1/2 ||A~ - A||_1 with frozen keys from the previous depth
    std::optional<double> etf_bound;    // (||q|| / sqrt d) B e^{-mu (l - l_s)}
    double q_norm = 0.0;
    std::size_t psaw_boundary = 0;
    double psaw_masked_mass = 0.0;
    std::optional<double> psaw_bound;
};

struct StepSummary {
    std::size_t step = 0;
    std::size_t t = 0;
    std::size_t retrievals = 0;  // R_t
    double rho_t = 0.0;          // R_t / (H N)
};

struct DecodeTrace {
    std::vector<StepMetrics> rows;
    std::vector<StepSummary> steps;
    std::vector<PrefillMetrics> prefill;
    double rho_hat = 0.0;
    double avg_tokens = 0.0;  // mean |S_t| per head-step, sinks and local window included
    double mean_overlap = 0.0;
    double mean_tau_pre = 0.0;
    double mean_tau_star = 0.0;
    double mean_attn_l1 = 0.0;
    double mean_out_dev = 0.0;
    double shared_fraction = 0.0;
    std::size_t fallbacks = 0;
    std::size_t mass_loss_violations = 0;
    std::size_t psaw_violations = 0;
    std::size_t etf_violations = 0;
    double flops_dense = 0.0;
    double flops_sparse = 0.0;
    double flops_ratio = 1.0;
};

DecodeTrace run_decode(const SimConfig& cfg);

struct Distribution {
    double mean = 0.0, p50 = 0.0, p90 = 0.0, p99 = 0.0, max = 0.0;
};

struct PerturbationReport {
    std::size_t rows = 0;
    Distribution attn_l1;
    Distribution out_dev;
};

/// Mean and percentiles of the perturbation columns. Throws on an empty trace.
PerturbationReport perturbation_report(const DecodeTrace& trace);

/// Linear-interpolated percentile of an unsorted sample, q in [0, 1].
double percentile(std::vector<double> sample, double q);

struct FlopsCount {
    double dense = 0.0;
    double sparse = 0.0;
    double ratio = 1.0;
};

/// Multiply-accumulates of one head-step: dense = 2 L d; sparse = 2 |S| d plus the retrieval charge.
FlopsCount flops_proxy(std::size_t selected, std::size_t length, std::size_t d, bool retrieved,
                       RetrievalCharge charge = RetrievalCharge::Scoring);

/// Aggregate over a sequence of per-head-step selections.
FlopsCount flops_proxy(const std::vector<std::size_t>& selected, const std::vector<std::size_t>& lengths,
                       const std::vector<bool>& retrieved, std::size_t d,
                       RetrievalCharge charge = RetrievalCharge::Scoring);

}  // namespace prehoc
