#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "prehoc/config.hpp"
#include "prehoc/decode_sim.hpp"
#include "prehoc/report.hpp"

using namespace prehoc;

namespace {

SimConfig small_sim(SelectorKind kind) {
    SimConfig c;
    c.head = {8, 2, 4};
    c.prefill_len = 96;
    c.steps = 24;
    c.selector.kind = kind;
    c.selector.budget = {4, 12, 8};
    c.gen.seed = 5;
    c.gen.weight_scale = 4.0;
    return c;
}

double mean_rho(const DecodeTrace& tr) {
    double s = 0.0;
    for (const auto& st : tr.steps) s += st.rho_t;
    return s / static_cast<double>(tr.steps.size());
}

}  // namespace

TEST_CASE("oracle selector: full overlap and rho = 1 at every step") {
    const DecodeTrace tr = run_decode(small_sim(SelectorKind::Oracle));
    CHECK(tr.rows.size() == 24 * 4 * 2);
    CHECK(tr.rho_hat == 1.0);
    for (const auto& st : tr.steps) CHECK(st.rho_t == 1.0);
    for (const auto& r : tr.rows) {
        CHECK(r.overlap == 1.0);
        CHECK(r.tau_pre == r.tau_star);
        // Zero-filled variant of the total-variation identity.
        CHECK(std::abs(r.attn_l1 - 2.0 * (1.0 - r.tau_pre)) < 1e-12);
        CHECK(std::abs(r.tv - (1.0 - r.tau_pre)) < 1e-12);
    }
}

TEST_CASE("full selector: no perturbation and no retrieval") {
    const DecodeTrace tr = run_decode(small_sim(SelectorKind::Full));
    const PerturbationReport p = perturbation_report(tr);
    CHECK(p.attn_l1.max < 1e-12);
    CHECK(p.out_dev.max < 1e-12);
    CHECK(tr.rho_hat == 0.0);
    CHECK(tr.flops_ratio == doctest::Approx(1.0));
}

TEST_CASE("CIS always-share: rho_hat follows the block count") {
    for (std::size_t steps : {16u, 24u, 50u, 256u}) {
        SimConfig c = small_sim(SelectorKind::Cis);
        c.steps = steps;
        c.selector.cis.block_size = 8;
        c.selector.cis.sim_threshold = -1.0;
        const DecodeTrace tr = run_decode(c);
        const double expect = std::ceil(steps / 8.0) / static_cast<double>(steps);
        CHECK(tr.rho_hat == doctest::Approx(expect).epsilon(1e-12));
        CHECK(tr.rho_hat >= 1.0 / 8 - 1.0 / steps);
        CHECK(tr.rho_hat <= 1.0 / 8 + 1.0 / steps);
        CHECK(std::abs(tr.rho_hat - mean_rho(tr)) < 1e-12);
    }
}

TEST_CASE("CIS default gate keeps rho_hat within [1/s - 1/T, 1]") {
    const DecodeTrace tr = run_decode(small_sim(SelectorKind::Cis));
    CHECK(tr.rho_hat >= 1.0 / 8 - 1.0 / 24);
    CHECK(tr.rho_hat <= 1.0);
    for (const auto& r : tr.rows) {
        if (r.was_shared) {
            CHECK_FALSE(r.retrieved);
            REQUIRE(r.anchor_step);
            CHECK(*r.anchor_step / 8 == r.step / 8);
        }
        CHECK(r.overlap >= 0.0);
        CHECK(r.overlap <= 1.0);
        CHECK(r.tau_pre > 0.0);
        CHECK(r.tau_pre <= 1.0 + 1e-12);
    }
}

TEST_CASE("walk rate 0: shared sets retain exactly the anchor's mass") {
    SimConfig c = small_sim(SelectorKind::Cis);
    c.gen.walk_rate = 0.0;
    const DecodeTrace tr = run_decode(c);
    // Queries are constant, so every in-block source matches exactly.
    std::size_t shared = 0;
    for (const auto& r : tr.rows)
        if (r.was_shared) {
            ++shared;
            REQUIRE(r.similarity);
            CHECK(*r.similarity == doctest::Approx(1.0).epsilon(1e-12));
        }
    CHECK(shared > 0);
}

TEST_CASE("TDO and QAA runs satisfy the mis-scoring inequality at every step") {
    for (SelectorKind k : {SelectorKind::Tdo, SelectorKind::Qaa}) {
        const DecodeTrace tr = run_decode(small_sim(k));
        CHECK(tr.mass_loss_violations == 0);
        for (const auto& r : tr.rows) {
            REQUIRE(r.eps_d);
            REQUIRE(r.mass_loss_holds);
            CHECK(*r.mass_loss_holds);
        }
    }
}

TEST_CASE("CPE composition run stays within the budget cap") {
    SimConfig c = small_sim(SelectorKind::Cpe);
    const DecodeTrace tr = run_decode(c);
    const std::size_t m = c.selector.effective_cis().m();
    for (const auto& r : tr.rows) CHECK(r.selected <= c.selector.budget.total() + 2 * m);
}

TEST_CASE("exp-decay stream: PSAW masked mass under the bound") {
    SimConfig c = small_sim(SelectorKind::Cpe);
    c.gen.kind = GeneratorKind::ExpDecayChannel;
    c.gen.decay_rate = {0.1};
    c.gen.sink_mass = {0.2};
    c.gen.decay_factor = {0.8};
    c.gen.sink_count = 4;
    const DecodeTrace tr = run_decode(c);
    CHECK(tr.psaw_violations == 0);
    for (const auto& r : tr.rows) {
        REQUIRE(r.psaw_bound);
        CHECK(r.psaw_masked_mass <= *r.psaw_bound + 1e-9);
    }
    c.gen.sink_count = 8;
    CHECK_THROWS_AS(run_decode(c), std::invalid_argument);
}

TEST_CASE("prefill simulation records ETF rows within the bound") {
    SimConfig c = small_sim(SelectorKind::Cpe);
    c.simulate_prefill = true;
    c.prefill_stride = 8;
    const DecodeTrace tr = run_decode(c);
    CHECK_FALSE(tr.prefill.empty());
    CHECK(tr.etf_violations == 0);
    bool any_frozen = false;
    for (const auto& p : tr.prefill) {
        if (p.frozen > 0) {
            any_frozen = true;
            REQUIRE(p.etf_bound);
            CHECK(p.etf_tv <= *p.etf_bound + 1e-12);
        }
    }
    CHECK(any_frozen);
}

TEST_CASE("traces are bit-identical for identical configs") {
    const SimConfig c = small_sim(SelectorKind::Cpe);
    const DecodeTrace a = run_decode(c), b = run_decode(c);
    CHECK(trace_csv(a, "r", 5) == trace_csv(b, "r", 5));
    CHECK(a.rho_hat == b.rho_hat);
}

TEST_CASE("sim config validation") {
    SimConfig c = small_sim(SelectorKind::Cis);
    c.prefill_len = 10;
    CHECK_THROWS_AS(run_decode(c), std::invalid_argument);
    c = small_sim(SelectorKind::Cis);
    c.steps = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_sim(SelectorKind::Qaa);
    c.selector.qaa.sketch_dim = 9;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK_THROWS_AS(parse_selector_kind("bogus"), std::invalid_argument);
    CHECK(parse_selector_kind(to_string(SelectorKind::Tdo)) == SelectorKind::Tdo);
}

// ---------------------------------------------------------------------------
// FLOP proxy

TEST_CASE("FLOP proxy arithmetic") {
    const std::size_t len = 800, d = 16;
    CHECK(flops_proxy(len, len, d, false).ratio == 1.0);
    CHECK(flops_proxy(len / 8, len, d, false).ratio == doctest::Approx(0.125));
    // rho = 0.1: one head-step of ten retrieves.
    std::vector<std::size_t> sel(10, len / 8), lens(10, len);
    std::vector<bool> ret(10, false);
    ret[0] = true;
    CHECK(flops_proxy(sel, lens, ret, d, RetrievalCharge::Dense).ratio == doctest::Approx(0.2125).epsilon(1e-12));
    CHECK(flops_proxy(sel, lens, ret, d, RetrievalCharge::Scoring).ratio == doctest::Approx(0.175).epsilon(1e-12));
}

TEST_CASE("percentiles") {
    CHECK(percentile({3, 1, 2}, 0.5) == 2.0);
    CHECK(percentile({0, 10}, 0.9) == doctest::Approx(9.0));
    CHECK(percentile({4}, 0.99) == 4.0);
    CHECK_THROWS(percentile({}, 0.5));
}

// ---------------------------------------------------------------------------
// Config

TEST_CASE("config round trip: defaults and every key perturbed") {
    ExperimentConfig c;
    CHECK(parse_config(serialize_config(c)) == c);
    c.sim.gen.seed = 123456789012345ULL;
    c.sim.gen.walk_rate = 0.1 + 1e-17 * 3;
    c.sim.gen.decay_rate = {0.1, 0.2, 1.0 / 3.0, 0.4, 0.5, 0.6, 0.7, 0.8};
    c.sim.gen.update_ref_layer = 3;
    c.sim.selector.kind = SelectorKind::Qaa;
    c.sim.selector.cis.dilate_count = 5;
    c.sim.selector.psaw.start_layer = 2;
    c.sim.selector.psaw.phi = 0.123456789123456789;
    c.sim.charge = RetrievalCharge::Dense;
    c.bounds.cert.theta_sim = std::nextafter(0.8, 1.0);
    c.bounds.delta_star = 1e-300;
    c.output.run_id = "abc";
    CHECK(parse_config(serialize_config(c)) == c);
    for (const auto& k : config_keys()) CHECK(get_config_value(parse_config(serialize_config(c)), k.key) == get_config_value(c, k.key));
}

TEST_CASE("config defaults echo the reference hyper-parameters") {
    const ExperimentConfig c;
    CHECK(c.sim.selector.cis.sim_threshold == 0.8);
    CHECK(c.sim.selector.cis.dilate_radius == 1);
    CHECK(c.sim.selector.effective_cis().m() == 432 / 3);
    CHECK(c.sim.selector.psaw.phi == 0.7);
    CHECK(c.sim.selector.psaw.alpha == 1.0);
    CHECK(c.sim.selector.etf.psi == 0.5);
    CHECK(c.sim.selector.etf.gamma == 1.0);
    CHECK(c.sim.selector.psaw.start(32) == 24);
    CHECK(c.sim.selector.budget == BudgetSpec{16, 64, 432});
}

TEST_CASE("config errors") {
    CHECK_THROWS_AS(parse_config("nope.key = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("head.d = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("head.d\n"), ConfigError);
    try {
        parse_config("# c\n\nhead.d = 4\nbad.key = 2\n", "x.cfg");
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("x.cfg:4") != std::string::npos);
    }
    try {
        load_config("/nonexistent/dir/exp.cfg");
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("/nonexistent/dir/exp.cfg") != std::string::npos);
    }
    ExperimentConfig c;
    apply_overrides(c, {"head.d=32", "selector.cis.dilate_count=auto", "generator.decay_rate=0.1,0.2"});
    CHECK(c.sim.head.d == 32);
    CHECK_FALSE(c.sim.selector.cis.dilate_count);
    CHECK(c.sim.gen.decay_rate == std::vector<double>{0.1, 0.2});
    CHECK_THROWS_AS(apply_overrides(c, {"head.d"}), ConfigError);
}

TEST_CASE("format_double round-trips") {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, -0.0, 123456789.0})
        CHECK(std::stod(format_double(v)) == v);
    CHECK(format_double(0.5) == "0.5");
}

// ---------------------------------------------------------------------------
// Reports

TEST_CASE("trace CSV has the documented header and one line per row") {
    const DecodeTrace tr = run_decode(small_sim(SelectorKind::Cis));
    const std::string csv = trace_csv(tr, "rid", 5);
    std::istringstream is(csv);
    std::string header;
    std::getline(is, header);
    std::string expect;
    for (const auto& c : trace_columns()) expect += (expect.empty() ? "" : ",") + c.name;
    CHECK(header == expect);
    std::size_t lines = 0;
    for (std::string l; std::getline(is, l);) {
        ++lines;
        CHECK(l.rfind("rid,5,", 0) == 0);
        CHECK(std::count(l.begin(), l.end(), ',') == std::count(header.begin(), header.end(), ','));
    }
    CHECK(lines == tr.rows.size());
    for (const auto& c : trace_columns()) CHECK_FALSE(c.description.empty());
}

TEST_CASE("trace JSON and summary JSON") {
    const ExperimentConfig cfg = [] {
        ExperimentConfig c;
        c.sim = small_sim(SelectorKind::Cis);
        return c;
    }();
    const DecodeTrace tr = run_decode(cfg.sim);
    const nlohmann::json rows = trace_json(tr, "r", 5);
    REQUIRE(rows.size() == tr.rows.size());
    for (const auto& c : trace_columns()) CHECK(rows[0].contains(c.name));
    const nlohmann::json s = summary_json(tr, cfg);
    CHECK(s["rho_hat"].get<double>() == tr.rho_hat);
    CHECK(s.contains("certificates"));
    CHECK(s["rho_t"].size() == tr.steps.size());
}

TEST_CASE("certificate JSON: tuning example and echoed defaults") {
    ExperimentConfig cfg;
    cfg.bounds.cert.lambda = 0.01;
    cfg.bounds.cert.beta_psaw_target = 0.01;
    cfg.bounds.context_len = 1000;
    const nlohmann::json j = certificate_json(cfg);
    CHECK(j["tuning"]["min_phi_alpha"].get<double>() == doctest::Approx(0.460517018598809).epsilon(1e-12));
    CHECK(j["schedules"]["psaw"]["phi"].get<double>() == 0.7);
    CHECK(j["schedules"]["etf"]["psi"].get<double>() == 0.5);

    // theta = 1, B = 0: every beta term vanishes and the pre-hoc bound is g(delta*).
    cfg.bounds.cert.theta_sim = 1.0;
    cfg.bounds.cert.b_const = 0.0;
    cfg.bounds.delta_star = 0.1;
    const nlohmann::json z = certificate_json(cfg);
    CHECK(z["cis"]["beta_th"].get<double>() == 0.0);
    CHECK(z["etf"]["bound"].get<double>() == 0.0);
    CHECK(z["prehoc_mi"]["cis"]["g_value"].get<double>() == z["prehoc_mi"]["oracle"]["g_value"].get<double>());
}

TEST_CASE("shipped schema document lists every column and config key") {
    std::ifstream f(std::string(PREHOC_SOURCE_DIR) + "/docs/schema.md");
    REQUIRE(f);
    const std::string doc((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    for (const auto& c : trace_columns()) CHECK_MESSAGE(doc.find("`" + c.name + "`") != std::string::npos, c.name);
    for (const auto& c : prefill_columns()) CHECK_MESSAGE(doc.find("`" + c.name + "`") != std::string::npos, c.name);
    for (const auto& k : config_keys()) CHECK_MESSAGE(doc.find("`" + k.key + "`") != std::string::npos, k.key);
}
