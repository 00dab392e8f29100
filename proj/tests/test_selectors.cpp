#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "prehoc/rng.hpp"
#include "prehoc/selectors.hpp"
#include "prehoc/window.hpp"

using namespace prehoc;

namespace {

AttentionDist dist_of(Vector p) {
    AttentionDist a;
    a.logits.assign(p.size(), 0.0);
    a.probs = std::move(p);
    return a;
}

Vector random_probs(CounterRng& rng, std::size_t len) {
    Vector logits(len);
    for (double& x : logits) x = 2.0 * rng.normal();
    return softmax(logits).probs;
}

}  // namespace

TEST_CASE("topk oracle examples") {
    const AttentionDist a = dist_of({0.1, 0.4, 0.2, 0.3});
    const SelectionResult r = topk_oracle(a, BudgetSpec{0, 0, 2}, 4);
    CHECK(r.selected == IndexSet{1, 3});
    CHECK(retained_mass(a.probs, r.selected) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(r.retrievals_performed == 1);

    CHECK(topk_oracle(a, BudgetSpec{0, 0, 4}, 4).selected == IndexSet{0, 1, 2, 3});
    CHECK(topk_oracle(dist_of({0.3, 0.2, 0.3, 0.2}), BudgetSpec{0, 0, 1}, 4).selected == IndexSet{0});
    CHECK_THROWS_AS(topk_oracle(a, BudgetSpec{0, 0, 5}, 4), std::invalid_argument);
    CHECK_THROWS_AS(topk_oracle(a, BudgetSpec{0, 0, 0}, 4), std::invalid_argument);
}

TEST_CASE("structured oracle keeps sinks and local window") {
    const AttentionDist a = dist_of({0.01, 0.02, 0.3, 0.05, 0.25, 0.07, 0.1, 0.2});
    const SelectionResult r = topk_oracle(a, BudgetSpec{1, 1, 2}, 8);
    // sink {0}, local {7}, middle [1, 7) heaviest two: 2 and 4.
    CHECK(r.selected == IndexSet{0, 2, 4, 7});
}

TEST_CASE("ranked_top_k breaks ties by lower index") {
    const Vector w{0.2, 0.5, 0.5, 0.1, 0.5};
    CHECK(ranked_top_k(w, 0, 5, 3) == std::vector<std::size_t>{1, 2, 4});
    CHECK(ranked_top_k(w, 2, 5, 2) == std::vector<std::size_t>{2, 4});
    CHECK(top_n(w, 2) == IndexSet{1, 2});
}

TEST_CASE("oracle optimality against exhaustive enumeration") {
    for (std::uint64_t k = 0; k < 60; ++k) {
        CounterRng rng(3, {k});
        const std::size_t len = rng.integer(1, 10);
        const std::size_t n = rng.integer(1, std::min<std::size_t>(len, 5));
        const AttentionDist a = dist_of(random_probs(rng, len));
        const double got = retained_mass(a.probs, topk_oracle(a, BudgetSpec{0, 0, n}, len).selected);
        CHECK(std::abs(got - oracle::best_subset_mass(a.probs, n)) < 1e-15);
    }
}

TEST_CASE("cosine similarity examples") {
    CHECK(cosine_similarity(Vector{1, 2, 3}, Vector{1, 2, 3}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_similarity(Vector{1, 0}, Vector{0, 1}) == 0.0);
    CHECK(cosine_similarity(Vector{1, 0}, Vector{1 / std::sqrt(2.0), 1 / std::sqrt(2.0)}) ==
          doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(cosine_similarity(Vector{0, 0}, Vector{1, 1}) == 0.0);
    CHECK_THROWS_AS(cosine_similarity(Vector{1}, Vector{1, 2}), std::invalid_argument);
}

TEST_CASE("dilation example and degenerate radii") {
    CHECK(dilate({50, 10}, 1, 1, 100) == IndexSet{10, 49, 50, 51});
    CHECK(dilate({50, 10}, 0, 1, 100) == IndexSet{10, 50});
    CHECK(dilate({50, 10}, 2, 0, 100) == IndexSet{10, 50});
    // Clipping at both ends.
    CHECK(dilate({0, 99}, 2, 2, 100) == IndexSet{0, 1, 2, 97, 98, 99});
}

namespace {

struct CisRun {
    std::vector<SelectionResult> results;
    std::size_t retrievals = 0;
};

CisRun run_cis(const CisConfig& cfg, std::size_t steps, std::size_t t0, const std::function<Vector(std::size_t)>& query) {
    CisSelector sel(cfg, 1, 1);
    CisRun run;
    for (std::size_t step = 0; step < steps; ++step) {
        const std::size_t t = t0 + step;
        CounterRng rng(5, {step});
        const Vector p = random_probs(rng, t);
        const SelectionResult r = sel.select(step, 0, 0, query(step), t, [&] { return dist_of(p); });
        run.retrievals += r.retrievals_performed;
        run.results.push_back(r);
    }
    return run;
}

}  // namespace

TEST_CASE("CIS: impossible gate retrieves every step") {
    CisConfig cfg;
    cfg.budget = {2, 4, 2};
    cfg.sim_threshold = 1.0 + 1e-9;
    const CisRun run = run_cis(cfg, 24, 40, [](std::size_t) { return Vector{1.0, 0.0}; });
    CHECK(run.retrievals == 24);
    for (const auto& r : run.results) CHECK_FALSE(r.was_shared);
}

TEST_CASE("CIS: always-share gate retrieves once per block and shares locally") {
    CisConfig cfg;
    cfg.budget = {2, 6, 3};
    cfg.block_size = 8;
    cfg.sim_threshold = -1.0;
    cfg.dilate_radius = 1;
    const std::size_t steps = 50;
    const CisRun run = run_cis(cfg, steps, 40, [](std::size_t s) { return Vector{std::cos(0.3 * s), std::sin(0.3 * s)}; });
    CHECK(run.retrievals == (steps + 7) / 8);
    for (std::size_t step = 0; step < steps; ++step) {
        const SelectionResult& r = run.results[step];
        const std::size_t t = 40 + step;
        CHECK(r.was_shared == (step % 8 != 0));
        if (r.was_shared) {
            CHECK(r.retrievals_performed == 0);
            REQUIRE(r.anchor_step);
            CHECK(*r.anchor_step / 8 == step / 8);
            CHECK(*r.anchor_step == step - step % 8);
        }
        // Budget discipline.
        CHECK(r.selected.size() <= cfg.budget.total() + cfg.m() * 2 * cfg.dilate_radius);
        CHECK(r.selected.size() >= std::min(cfg.budget.total(), t));
        for (std::size_t i = 0; i < r.selected.size(); ++i) {
            CHECK(r.selected[i] < t);
            if (i) CHECK(r.selected[i - 1] < r.selected[i]);
        }
        // The current local window is always present.
        for (std::size_t i = t - cfg.budget.c_local; i < t; ++i)
            CHECK(std::binary_search(r.selected.begin(), r.selected.end(), i));
    }
}

TEST_CASE("CIS: zero-norm queries never share") {
    CisConfig cfg;
    cfg.budget = {1, 3, 1};
    cfg.sim_threshold = -1.0;
    const CisRun run = run_cis(cfg, 8, 20, [](std::size_t) { return Vector{0.0, 0.0}; });
    CHECK(run.retrievals == 8);
}

TEST_CASE("CIS: shared queries are not sources; latest qualifying source wins") {
    CisConfig cfg;
    cfg.budget = {1, 3, 1};
    cfg.block_size = 16;
    cfg.sim_threshold = 0.99;
    // step0 e1 (retrieves), step1 e2 (retrieves), step2 e1 (shares from 0), step3 e2 (shares from 1)
    const std::vector<Vector> qs{{1, 0}, {0, 1}, {1, 0}, {0, 1}, {1, 0}};
    const CisRun run = run_cis(cfg, qs.size(), 20, [&](std::size_t s) { return qs[s]; });
    CHECK(run.retrievals == 2);
    CHECK(*run.results[2].anchor_step == 0);
    CHECK(*run.results[3].anchor_step == 1);
    CHECK(*run.results[4].anchor_step == 0);
    CHECK(*run.results[2].similarity == doctest::Approx(1.0));
}

TEST_CASE("CIS: m = 0 or r = 0 gives the undilated oracle set") {
    CisConfig cfg;
    cfg.budget = {2, 2, 4};
    cfg.dilate_count = 0;
    CounterRng rng(1, {0});
    const Vector p = random_probs(rng, 30);
    CisSelector sel(cfg, 1, 1);
    const SelectionResult r = sel.select(0, 0, 0, Vector{1.0}, 30, [&] { return dist_of(p); });
    CHECK(r.selected == topk_oracle(dist_of(p), cfg.budget, 30).selected);
    cfg.dilate_count = 4;
    cfg.dilate_radius = 0;
    CisSelector sel2(cfg, 1, 1);
    CHECK(sel2.select(0, 0, 0, Vector{1.0}, 30, [&] { return dist_of(p); }).selected ==
          topk_oracle(dist_of(p), cfg.budget, 30).selected);
    cfg.dilate_count = 5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("CIS selections are deterministic") {
    CisConfig cfg;
    cfg.budget = {2, 5, 2};
    cfg.sim_threshold = 0.5;
    auto q = [](std::size_t s) { return Vector{std::cos(0.5 * s), std::sin(0.5 * s)}; };
    const CisRun a = run_cis(cfg, 30, 30, q), b = run_cis(cfg, 30, 30, q);
    for (std::size_t i = 0; i < 30; ++i) {
        CHECK(a.results[i].selected == b.results[i].selected);
        CHECK(a.results[i].was_shared == b.results[i].was_shared);
    }
}

// ---------------------------------------------------------------------------
// Post-hoc archetypes

TEST_CASE("TDO: cumulative scores pick the heavier accumulated index") {
    const SelectionResult r = tdo_select_from_history({{0.7, 0.3}, {0.2, 0.8}}, BudgetSpec{0, 0, 1}, 2);
    CHECK(r.selected == IndexSet{1});
    TdoState st;
    tdo_observe(st, Vector{0.7, 0.3});
    tdo_observe(st, Vector{0.2, 0.8});
    CHECK(st.cumulative_scores[0] == doctest::Approx(0.9));
    CHECK(st.cumulative_scores[1] == doctest::Approx(1.1));
}

TEST_CASE("TDO: budget covering the context keeps everything; kept set never exceeds budget") {
    TdoState st;
    const BudgetSpec b{1, 2, 1};
    for (std::size_t t = 4; t < 30; ++t) {
        CounterRng rng(9, {t});
        const SelectionResult r = tdo_select(st, b, t);
        CHECK(r.selected.size() <= b.total());
        CHECK(st.kept_set.size() <= b.total());
        if (t == 4) CHECK(r.selected == IndexSet{0, 1, 2, 3});
        tdo_observe(st, random_probs(rng, t));
        for (double c : st.cumulative_scores) CHECK(c >= 0.0);
    }
    // Uniform surrogate before any observation.
    const Vector u = tdo_surrogate(TdoState{}, 5);
    for (double x : u) CHECK(x == doctest::Approx(0.2));
}

TEST_CASE("TDO eviction is permanent") {
    TdoState st;
    const BudgetSpec b{0, 0, 1};
    tdo_observe(st, Vector{0.6, 0.4});
    CHECK(tdo_select(st, b, 2).selected == IndexSet{0});
    tdo_observe(st, Vector{0.0, 1.0, 0.0});
    tdo_observe(st, Vector{0.0, 1.0, 0.0, 0.0});
    // Index 1 now carries more accumulated mass but was evicted at the previous selection.
    CHECK(tdo_select(st, b, 4).selected == IndexSet{0});
}

TEST_CASE("QAA: identity sketch reproduces the oracle") {
    CounterRng rng(4, {0});
    AttentionInstance inst;
    inst.query = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    inst.keys = Matrix(20, 4);
    inst.values = Matrix(20, 1);
    for (std::size_t i = 0; i < 20; ++i)
        for (std::size_t j = 0; j < 4; ++j) inst.keys(i, j) = 2.0 * rng.normal();
    QaaConfig cfg;
    cfg.sketch_dim = 4;
    cfg.identity_sketch = true;
    const BudgetSpec b{2, 4, 2};
    const QaaOutcome out = qaa_select(inst, cfg, b, 20);
    CHECK(out.selection.selected == topk_oracle(attention_weights(inst), b, 20).selected);
    CHECK(out.eta < 1e-12);
    CHECK(out.selection.retrievals_performed == 1);

    cfg.identity_sketch = false;
    cfg.sketch_dim = 5;
    CHECK_THROWS_AS(qaa_select(inst, cfg, b, 20), std::invalid_argument);
}

TEST_CASE("QAA: identical keys retain k/L of the mass whatever the sketch picks") {
    AttentionInstance inst;
    inst.query = {1.0, -2.0};
    inst.keys = Matrix(10, 2, 0.5);
    inst.values = Matrix(10, 1);
    QaaConfig cfg;
    cfg.sketch_dim = 1;
    const QaaOutcome out = qaa_select(inst, cfg, BudgetSpec{0, 0, 3}, 10);
    CHECK(retained_mass(attention_weights(inst).probs, out.selection.selected) == doctest::Approx(0.3));
}

// ---------------------------------------------------------------------------
// Windows

TEST_CASE("PSAW boundary examples") {
    PsawConfig cfg;
    cfg.start_layer = 24;
    CHECK(psaw_boundary(10, 1000, 32, cfg) == 0);
    CHECK(psaw_boundary(24, 1000, 32, cfg) == 0);
    CHECK(psaw_boundary(32, 1000, 32, cfg) == 300);
    cfg.alpha = 0.0;
    for (std::size_t l = 0; l <= 32; ++l) CHECK(psaw_boundary(l, 1000, 32, cfg) == 0);
    // N == l_s: exponent taken as alpha at the top.
    PsawConfig top;
    top.start_layer = 8;
    CHECK(psaw_boundary(8, 1000, 8, top) == 300);
    CHECK_THROWS(psaw_boundary(33, 1000, 32, cfg));
}

TEST_CASE("PSAW boundary is monotone in depth and length") {
    for (std::uint64_t k = 0; k < 50; ++k) {
        CounterRng rng(8, {k});
        const std::size_t n = rng.integer(1, 40);
        PsawConfig cfg;
        cfg.start_layer = rng.integer(0, n - 1);
        cfg.phi = rng.uniform(0.01, 0.99);
        cfg.alpha = rng.uniform(0.0, 3.0);
        const std::size_t t = rng.integer(1, 5000);
        for (std::size_t l = 1; l <= n; ++l) {
            CHECK(psaw_boundary(l, t, n, cfg) >= psaw_boundary(l - 1, t, n, cfg));
            CHECK(psaw_boundary(l, t + 1, n, cfg) >= psaw_boundary(l, t, n, cfg));
            CHECK(psaw_boundary(l, t, n, cfg) <= t);
        }
    }
}

TEST_CASE("PSAW visible and masked sets") {
    CHECK(psaw_visible_set(0, 10, 2).size() == 10);
    CHECK(psaw_visible_set(300, 1000, 4).size() == 704);
    CHECK(psaw_masked_set(300, 1000, 4).size() == 296);
    CHECK(psaw_visible_set(3, 10, 4).size() == 10);
    CHECK(psaw_masked_set(3, 10, 4).empty());
}

TEST_CASE("ETF boundary examples") {
    EtfConfig cfg;
    cfg.start_layer = 6;
    CHECK(etf_boundary(3, 1000, 8, cfg) == 0);
    CHECK(etf_boundary(8, 1000, 8, cfg) == 500);
    cfg.psi = 1.0 - 1e-12;
    CHECK(etf_boundary(8, 1000, 8, cfg) == 0);
    CHECK(etf_frozen_set(500, 1000, 4).size() == 496);
}

TEST_CASE("schedule config validation") {
    PsawConfig p;
    p.phi = 1.0;
    CHECK_THROWS_AS(p.validate(8), std::invalid_argument);
    p = {};
    p.start_layer = 9;
    CHECK_THROWS_AS(p.validate(8), std::invalid_argument);
    p.start_layer = 8;  // l_s = N is the degenerate top-layer case
    CHECK_NOTHROW(p.validate(8));
    p = {};
    p.alpha = -1;
    CHECK_THROWS_AS(p.validate(8), std::invalid_argument);
    EtfConfig e;
    e.gamma = 0.0;
    CHECK_THROWS_AS(e.validate(8), std::invalid_argument);
}

TEST_CASE("CPE composition") {
    const BudgetSpec b{4, 2, 4};
    SelectionResult cis;
    cis.selected = {0, 1, 2, 3, 300, 500, 996, 997, 998, 999};
    cis.retrievals_performed = 1;
    const IndexSet vis = psaw_visible_set(400, 1000, 4);
    const SelectionResult r = compose_cpe(cis, vis, {}, b, 1000, Phase::Decode);
    CHECK(r.selected == IndexSet{0, 1, 2, 3, 500, 996, 997, 998, 999});
    CHECK_FALSE(r.fallback);
    CHECK(r.retrievals_performed == 1);

    const SelectionResult same = compose_cpe(cis, psaw_visible_set(0, 1000, 4), {}, b, 1000, Phase::Decode);
    CHECK(same.selected == cis.selected);

    SelectionResult masked;
    masked.selected = {0, 1, 2, 3, 100, 200};
    const SelectionResult fb = compose_cpe(masked, vis, {}, b, 1000, Phase::Decode);
    CHECK(fb.fallback);
    CHECK(fb.selected == sink_local_set(b, 1000));

    const IndexSet frozen = etf_frozen_set(500, 1000, 4);
    CHECK(compose_cpe(cis, vis, frozen, b, 1000, Phase::Prefill).frozen.size() == 496);
    CHECK(compose_cpe(cis, vis, frozen, b, 1000, Phase::Decode).frozen.empty());
}
