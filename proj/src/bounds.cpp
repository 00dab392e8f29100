#include "prehoc/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "prehoc/selectors.hpp"

namespace prehoc {

namespace {

constexpr double kNormalizedTol = 1e-9;

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

void require_normalized(std::span<const double> p, const char* what) {
    double s = 0.0;
    for (double x : p) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": negative or non-finite entry");
        s += x;
    }
    if (std::abs(s - 1.0) > kNormalizedTol) {
        std::ostringstream os;
        os << what << ": not normalized (sum " << s << ")";
        throw std::invalid_argument(os.str());
    }
}

}  // namespace

double binary_entropy(double p) {
    if (!(p >= 0.0 && p <= 1.0)) {
        std::ostringstream os;
        os << "binary_entropy: p = " << p << " outside [0, 1]";
        throw std::invalid_argument(os.str());
    }
    return -xlogx(p) - xlogx(1.0 - p);
}

double mi_loss_bound(double delta, std::size_t length) {
    if (length < 1) throw std::invalid_argument("mi_loss_bound: L must be >= 1");
    return 2.0 * (binary_entropy(delta) + delta * std::log(static_cast<double>(length)));
}

double g_domain_max(std::size_t length) {
    const double l = static_cast<double>(length);
    return l / (1.0 + l);
}

BoundReport clamped_bound(double argument, std::size_t length) {
    if (std::isnan(argument)) throw std::invalid_argument("bound argument is NaN");
    BoundReport r;
    r.argument = argument;
    r.vacuous = argument >= 1.0;
    const double hi = g_domain_max(length);
    double x = std::max(0.0, argument);
    if (x > hi) {
        x = hi;
        r.domain_clamped = true;
    }
    r.g_value = mi_loss_bound(x, length);
    if (argument < 1.0) r.kl_value = -std::log1p(-std::max(0.0, argument));
    return r;
}

double kl_variant(double tau) {
    if (!(tau > 0.0) || tau > 1.0 + 1e-12) {
        std::ostringstream os;
        os << "kl_variant: tau = " << tau << " outside (0, 1]";
        throw std::invalid_argument(os.str());
    }
    return -std::log(std::min(tau, 1.0));
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (q[i] <= 0.0) throw std::invalid_argument("kl_divergence: q vanishes on the support of p");
        s += p[i] * std::log(p[i] / q[i]);
    }
    return s;
}

double posterior_bias(std::span<const double> a, std::span<const double> a_hat) {
    if (a.size() != a_hat.size()) throw std::invalid_argument("posterior_bias: length mismatch");
    require_normalized(a, "posterior_bias: A");
    require_normalized(a_hat, "posterior_bias: surrogate");
    return 0.5 * l1_distance(a, a_hat);
}

BoundReport posthoc_bound(double delta_star, double eps_d, std::size_t length) {
    if (delta_star < 0.0 || eps_d < 0.0) throw std::invalid_argument("posthoc_bound: negative mass argument");
    return clamped_bound(delta_star + 2.0 * eps_d, length);
}

BoundReport prehoc_bound(double delta_star, double beta_th, std::size_t length) {
    if (delta_star < 0.0 || beta_th < 0.0) throw std::invalid_argument("prehoc_bound: negative mass argument");
    return clamped_bound(delta_star + beta_th, length);
}

// ---------------------------------------------------------------------------

void CertificateInput::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("bounds: " + m); };
    if (!(theta_sim >= -1.0 && theta_sim <= 1.0)) fail("theta_sim must lie in [-1, 1]");
    for (auto [v, name] : {std::pair{k_max, "k_max"}, {q_max, "q_max"}, {diam_p, "diam_p"}, {window_dist, "window_dist"},
                           {b_const, "b_const"}, {depth_gap, "depth_gap"}})
        if (!(v >= 0.0) || !std::isfinite(v)) fail(std::string(name) + " must be finite and >= 0");
    if (!(lambda > 0.0)) fail("lambda must be > 0");
    if (!(mu > 0.0)) fail("mu must be > 0");
    if (!(kappa > 0.0 && kappa <= 1.0)) fail("kappa must lie in (0, 1]");
    if (!(tau_sink >= 0.0 && tau_sink < 1.0)) fail("tau_sink must lie in [0, 1)");
    if (!(u_frac >= 0.0 && u_frac <= 1.0)) fail("u_frac must lie in [0, 1]");
    if (!(beta_psaw_target > 0.0 && beta_psaw_target < 1.0)) fail("beta_psaw_target must lie in (0, 1)");
    if (!(beta_etf_target > 0.0 && beta_etf_target < 1.0)) fail("beta_etf_target must lie in (0, 1)");
}

double drift_residual(std::span<const double> reference, std::span<const std::size_t> top_m, std::size_t s,
                      std::size_t r) {
    const std::size_t len = reference.size();
    std::vector<char> in_s(len, 0), in_r(len, 0);
    for (std::size_t p : top_m) {
        if (p >= len) throw std::out_of_range("drift_residual: position outside reference");
        for (std::size_t j = p > s ? p - s : 0; j < std::min(len, p + s + 1); ++j) in_s[j] = 1;
        for (std::size_t j = p > r ? p - r : 0; j < std::min(len, p + r + 1); ++j) in_r[j] = 1;
    }
    double mass = 0.0;
    for (std::size_t j = 0; j < len; ++j)
        if (in_s[j] && !in_r[j]) mass += reference[j];
    return mass;
}

CisCertificate cis_certificate(const CertificateInput& inp, std::size_t d, std::span<const double> reference,
                               std::span<const std::size_t> top_m) {
    if (d < 1) throw std::invalid_argument("cis_certificate: d must be >= 1");
    if (!(inp.theta_sim >= -1.0 && inp.theta_sim <= 1.0)) throw std::invalid_argument("theta_sim must lie in [-1, 1]");
    CisCertificate c;
    const double gap = std::sqrt(std::max(0.0, 2.0 - 2.0 * inp.theta_sim));
    const double lip = inp.k_max / std::sqrt(static_cast<double>(d));
    c.delta_att = 2.0 * lip * gap;
    c.delta_centroid = 2.0 * inp.diam_p * lip * gap;
    c.s_radius = static_cast<std::size_t>(std::ceil(c.delta_centroid));
    c.covered = inp.dilate_radius >= c.s_radius;
    if (!c.covered && !reference.empty()) c.eps_drift = drift_residual(reference, top_m, c.s_radius, inp.dilate_radius);
    c.beta_th = 2.0 * c.delta_att + c.eps_drift;
    c.vacuous = c.delta_att > 2.0;
    return c;
}

PsawCertificate psaw_certificate(const CertificateInput& inp, std::optional<std::size_t> t) {
    if (!(inp.lambda > 0.0)) throw std::invalid_argument("psaw_certificate: lambda must be > 0");
    if (!(inp.window_dist >= 0.0)) throw std::invalid_argument("psaw_certificate: window distance must be >= 0");
    PsawCertificate c;
    const double lead = std::min(inp.kappa, 1.0 - inp.tau_sink);
    c.bound = lead * std::exp(-inp.lambda * inp.window_dist);
    if (t) {
        c.top_layer_window = std::floor(inp.u_frac * static_cast<double>(*t));
        c.top_layer_bound = lead * std::exp(-inp.lambda * c.top_layer_window);
    }
    return c;
}

EtfCertificate etf_certificate(const CertificateInput& inp, std::size_t d) {
    if (d < 1) throw std::invalid_argument("etf_certificate: d must be >= 1");
    if (!(inp.mu > 0.0)) throw std::invalid_argument("etf_certificate: mu must be > 0");
    EtfCertificate c;
    c.bound = inp.q_max / std::sqrt(static_cast<double>(d)) * inp.b_const * std::exp(-inp.mu * inp.depth_gap);
    c.average_case = inp.q_is_average;
    return c;
}

TuningResult tune_schedules(const CertificateInput& inp, std::size_t t, std::size_t d) {
    if (t < 1 || d < 1) throw std::invalid_argument("tune_schedules: t and d must be >= 1");
    if (!(inp.beta_psaw_target > 0.0 && inp.beta_psaw_target < 1.0) ||
        !(inp.beta_etf_target > 0.0 && inp.beta_etf_target < 1.0))
        throw std::invalid_argument("tune_schedules: targets must lie in (0, 1)");
    TuningResult r;
    const double tt = static_cast<double>(t);
    const double window = std::log((1.0 - inp.tau_sink) / inp.beta_psaw_target) / inp.lambda;  // required D
    r.min_phi_alpha = std::max(0.0, window / tt);
    r.psaw_infeasible = r.min_phi_alpha > 1.0;
    // The realized window is floor(u t): round the required distance up to an integer and
    // pick the smallest u whose floor reaches it.
    const double need = std::max(0.0, std::ceil(window));
    double u = need / tt;
    while (std::floor(u * tt) < need) u = std::nextafter(u, 2.0);
    r.floor_safe_phi_alpha = u;
    if (u > 1.0) r.psaw_infeasible = true;

    const double ratio = inp.q_max * inp.b_const / (inp.beta_etf_target * std::sqrt(static_cast<double>(d)));
    r.min_depth_gap = ratio > 1.0 ? std::log(ratio) / inp.mu : 0.0;
    r.min_depth_gap_int = static_cast<std::size_t>(std::ceil(r.min_depth_gap));
    return r;
}

MassLossCheck mass_loss_check(std::span<const double> a, std::span<const double> a_hat, std::size_t n) {
    if (a.size() != a_hat.size()) throw std::invalid_argument("mass_loss_check: length mismatch");
    if (n > a.size()) throw std::invalid_argument("mass_loss_check: N exceeds length");
    MassLossCheck m;
    m.eps_d = posterior_bias(a, a_hat);
    for (std::size_t i : top_n(a, n)) m.tau_star += a[i];
    for (std::size_t i : top_n(a_hat, n)) m.tau_sd += a[i];
    m.holds = m.tau_sd >= m.tau_star - 2.0 * m.eps_d - 1e-12;
    return m;
}

double logit_perturb_bound(double delta_q_norm, double k_max, std::size_t d) {
    if (delta_q_norm < 0.0 || k_max < 0.0 || d < 1) throw std::invalid_argument("logit_perturb_bound: bad arguments");
    return k_max * delta_q_norm / std::sqrt(static_cast<double>(d));
}

double key_perturb_bound(double q_norm, double delta_k_max, std::size_t d) {
    if (q_norm < 0.0 || delta_k_max < 0.0 || d < 1) throw std::invalid_argument("key_perturb_bound: bad arguments");
    return q_norm * delta_k_max / std::sqrt(static_cast<double>(d));
}

}  // namespace prehoc
