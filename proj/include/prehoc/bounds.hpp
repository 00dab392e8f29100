#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "prehoc/attention.hpp"

namespace prehoc {

/// -p ln p - (1-p) ln(1-p) in nats, 0 ln 0 = 0. Throws outside [0, 1].
double binary_entropy(double p);

/// Raw g(delta) = 2[h_b(delta) + delta ln L], no clamping. delta in [0, 1], L >= 1.
double mi_loss_bound(double delta, std::size_t length);

/// Upper end of the monotone domain of g: L / (1 + L).
double g_domain_max(std::size_t length);

struct BoundReport {
    double argument = 0.0;       // mass argument before clamping
    double g_value = 0.0;        // g(clamped argument), nats
    bool domain_clamped = false;  // argument exceeded L/(1+L)
    bool vacuous = false;         // argument >= 1
    std::optional<double> kl_value;  // ln(1/(1-argument)) when defined
};

/// g evaluated after clamping the argument into [0, L/(1+L)]. Arguments are never rejected:
/// >= 1 sets the vacuity flag and reports g at the domain edge.
BoundReport clamped_bound(double argument, std::size_t length);

/// ln(1/tau). Throws for tau <= 0 or tau > 1 (beyond rounding).
double kl_variant(double tau);

/// D_KL(p || q) in nats over the support of p. Throws if q is 0 where p is not.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// 1/2 ||A - A_hat||_1. Both inputs must be normalized within 1e-9.
double posterior_bias(std::span<const double> a, std::span<const double> a_hat);

/// g(delta* + 2 eps_D) after clamping; KL variant ln(1/(1 - delta* - 2 eps_D)) left empty when undefined.
BoundReport posthoc_bound(double delta_star, double eps_d, std::size_t length);

/// g(delta* + beta_th) after clamping.
BoundReport prehoc_bound(double delta_star, double beta_th, std::size_t length);

// ---------------------------------------------------------------------------
// Certificates

struct CertificateInput {
    double theta_sim = 0.8;
    double k_max = 1.0;   // max ||k_j||
    double q_max = 1.0;   // Q_max (worst case) or Q-bar (average case)
    bool q_is_average = false;
    double diam_p = 1.0;  // diameter of the position set
    double lambda = 0.05;
    double kappa = 1.0;
    double tau_sink = 0.0;
    double window_dist = 0.0;  // D
    double u_frac = 0.7;       // u_N = phi^alpha at the top layer
    double b_const = 0.5;      // B
    double mu = 0.5;
    double depth_gap = 0.0;    // l - l_s
    std::size_t dilate_radius = 1;
    double beta_psaw_target = 0.01;
    double beta_etf_target = 0.01;

    void validate() const;
    bool operator==(const CertificateInput&) const = default;
};

struct CisCertificate {
    double delta_att = 0.0;       // (2 K_max / sqrt d) sqrt(2 - 2 theta)
    double delta_centroid = 0.0;  // 2 diam (K_max / sqrt d) sqrt(2 - 2 theta)
    std::size_t s_radius = 0;     // ceil(delta_centroid)
    bool covered = true;          // r >= s
    double eps_drift = 0.0;       // only when r < s and a reference distribution was supplied
    double beta_th = 0.0;         // 2 delta_att (+ eps_drift)
    bool vacuous = false;         // delta_att > 2 (exceeds the L1 maximum)
};

/// `reference` is the anchor's attention distribution and `top_m` its m heaviest positions; both
/// are needed only to evaluate eps_drift when r < s.
CisCertificate cis_certificate(const CertificateInput& inp, std::size_t d, std::span<const double> reference = {},
                               std::span<const std::size_t> top_m = {});

/// Mass in N_s(top_m) \ N_r(top_m) under `reference` (neighbourhoods clipped to [0, L)).
double drift_residual(std::span<const double> reference, std::span<const std::size_t> top_m, std::size_t s,
                      std::size_t r);

struct PsawCertificate {
    double bound = 0.0;            // min(kappa, 1 - tau_sink) e^{-lambda D}
    double top_layer_window = 0.0;  // floor(u_N t), when t is supplied
    double top_layer_bound = 0.0;   // the same bound at D = floor(u_N t)
};

PsawCertificate psaw_certificate(const CertificateInput& inp, std::optional<std::size_t> t = std::nullopt);

struct EtfCertificate {
    double bound = 0.0;  // (Q / sqrt d) B e^{-mu (l - l_s)}
    bool average_case = false;
};

EtfCertificate etf_certificate(const CertificateInput& inp, std::size_t d);

struct TuningResult {
    double min_phi_alpha = 0.0;     // continuous requirement on u_N = phi^alpha
    double floor_safe_phi_alpha = 0.0;  // smallest u with floor(u t) meeting the PSAW target
    double min_depth_gap = 0.0;     // requirement on N - l_s
    std::size_t min_depth_gap_int = 0;
    bool psaw_infeasible = false;   // required phi^alpha > 1
};

/// phi^alpha >= ln((1 - tau_sink)/beta_psaw) / (lambda t) and
/// N - l_s >= ln(Q B / (beta_etf sqrt d)) / mu, negative requirements clamped to 0.
TuningResult tune_schedules(const CertificateInput& inp, std::size_t t, std::size_t d);

struct MassLossCheck {
    double tau_star = 0.0;
    double tau_sd = 0.0;
    double eps_d = 0.0;
    bool holds = false;  // tau_sd >= tau_star - 2 eps_d - 1e-12
};

/// Compares Top_N of the true distribution with Top_N of the surrogate, both scored under A.
MassLossCheck mass_loss_check(std::span<const double> a, std::span<const double> a_hat, std::size_t n);

/// K_max ||Delta q|| / sqrt d.
double logit_perturb_bound(double delta_q_norm, double k_max, std::size_t d);
/// ||q|| max ||Delta k|| / sqrt d.
double key_perturb_bound(double q_norm, double delta_k_max, std::size_t d);

}  // namespace prehoc
