#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "namac/errors.hpp"
#include "support.hpp"

using namespace namac;
using namac::testing::small_world;

namespace {

SensorFrame frame(double hpp, double lpp, double up) {
    SensorFrame f;
    f.values = {hpp, lpp, up};
    for (int c = 0; c < 3; ++c) {
        f.valid[c] = !std::isnan(f.values[c]);
    }
    return f;
}

double qoi_span(const EpisodeStore& s) {
    double lo = 1e300, hi = -1e300;
    for (const auto& ep : s.episodes)
        for (const auto& r : ep.rows) {
            lo = std::min(lo, r.t_pfcl);
            hi = std::max(hi, r.t_pfcl);
        }
    return hi - lo;
}

MarginTable random_table(std::mt19937_64& rng, std::size_t n_w2, std::size_t n_trip, double limit) {
    std::uniform_real_distribution<double> pred(640.0, 720.0);
    std::uniform_int_distribution<int> coarse(0, 6);
    std::vector<StrategyCandidate> c = enumerate_strategies({1.0, 1.5, 645.0, 685.0}, n_w2, n_trip, 650.0);
    std::vector<double> p(c.size());
    // coarse values force ties
    for (auto& v : p) v = (rng() % 3 == 0) ? 660.0 + 5.0 * coarse(rng) : pred(rng);
    return assess(c, p, limit, n_w2, n_trip);
}

// Exhaustive scan with the documented tie-break.
std::optional<std::size_t> brute_force_argmax(const MarginTable& t) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        if (!(r.margin > 0.0)) continue;
        if (!best) {
            best = i;
            continue;
        }
        const auto& b = t.rows[*best];
        if (r.margin > b.margin || (r.margin == b.margin && r.action.w2_end > b.action.w2_end) ||
            (r.margin == b.margin && r.action.w2_end == b.action.w2_end && r.action.t_trip < b.action.t_trip))
            best = i;
    }
    return best;
}

std::vector<GridEdge> brute_force_surface(const MarginTable& t) {
    std::vector<GridEdge> e;
    for (std::size_t i = 0; i < t.n_w2; ++i)
        for (std::size_t j = 0; j < t.n_trip; ++j) {
            const std::size_t a = i * t.n_trip + j;
            if (j + 1 < t.n_trip && t.rows[a].safe != t.rows[a + 1].safe) e.push_back({a, a + 1});
            if (i + 1 < t.n_w2 && t.rows[a].safe != t.rows[a + t.n_trip].safe) e.push_back({a, a + t.n_trip});
        }
    return e;
}

}  // namespace

TEST_CASE("imputation") {
    const SensorFrame one = impute(frame(430.0, 380.0, std::nan("")));
    CHECK(one.value(Channel::UP) == 405.0);
    CHECK(one.invalid_count() == 0);

    const SensorFrame full = frame(400.0, 410.0, 470.0);
    CHECK(impute(full).values == full.values);

    const SensorFrame survivor = impute(frame(std::nan(""), std::nan(""), 500.0));
    CHECK(survivor.value(Channel::HPP) == 500.0);
    CHECK(survivor.value(Channel::LPP) == 500.0);

    CHECK_THROWS_AS(impute(frame(std::nan(""), std::nan(""), std::nan(""))), AllSensorsFailed);

    for (const auto& f : {frame(430.0, std::nan(""), 470.0), frame(std::nan(""), 400.0, std::nan(""))}) {
        const SensorFrame once = impute(f);
        CHECK(impute(once).values == once.values);
    }
}

TEST_CASE("finite gradients") {
    std::vector<TimedValue> flat, line;
    for (int k = 0; k <= 100; ++k) {
        flat.push_back({0.1 * k, 640.0});
        line.push_back({0.1 * k, 2.0 * 0.1 * k});
    }
    CHECK(finite_gradient(flat, 1.0) == 0.0);
    CHECK(finite_gradient(line, 1.0) == doctest::Approx(2.0).epsilon(1e-12));
    for (double dt : {0.3, 1.0, 2.0, 5.0, 10.0}) CHECK(finite_gradient(line, dt) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS(finite_gradient(line, 10.5), InsufficientHistory);
    CHECK_THROWS_AS(finite_gradient({}, 1.0), InsufficientHistory);
    CHECK_THROWS_AS(finite_gradient(line, 0.0), InvalidConfig);
}

TEST_CASE("transient gradient features are three distinct values") {
    const PlantConfig c;
    const EpisodeRecord ep = run_episode(table2_scenario(c), {1.0, 1e6}, c, 200);
    const auto g = gradient_features(episode_history(ep, 10.0, c.dt));
    CHECK(g[0] != g[1]);
    CHECK(g[1] != g[2]);
    CHECK(g[0] != g[2]);
    for (double v : g) CHECK(std::isfinite(v));
}

TEST_CASE("strategy inventory") {
    const ActionBounds b{1.0, 1.5, 645.0, 685.0};
    CHECK(enumerate_strategies(b, 32, 32, 640.0).size() == 1024);
    const auto mid = enumerate_strategies(b, 1, 1, 640.0);
    REQUIRE(mid.size() == 1);
    CHECK(mid[0].action == ControlAction{1.25, 665.0});
    for (const auto& s : enumerate_strategies(b, 4, 4, 700.0)) CHECK(s.immediate);
    const auto some = enumerate_strategies(b, 1, 5, 660.0);
    CHECK(some[0].immediate);
    CHECK_FALSE(some[4].immediate);
}

TEST_CASE("safety margins") {
    const std::vector<StrategyCandidate> c{{{1.5, 645.0}, true}, {{1.5, 685.0}, false}};
    const MarginTable t = assess(c, {664.1, 685.0}, 685.0, 1, 2);
    CHECK(t.rows[0].margin == doctest::Approx(20.9).epsilon(1e-12));
    CHECK(t.rows[0].safe);
    CHECK(t.rows[1].margin == 0.0);
    CHECK_FALSE(t.rows[1].safe);
    CHECK_THROWS_AS(assess(c, {664.1}, 685.0, 1, 2), LengthMismatch);
    const std::string csv = margin_table_csv(t);
    CHECK(csv.rfind(std::string(kMarginCsvHeader) + "\n", 0) == 0);
}

TEST_CASE("limit surface") {
    SUBCASE("all safe") {
        const auto c = enumerate_strategies({1.0, 1.5, 645.0, 685.0}, 4, 4, 640.0);
        const LimitSurface s = limit_surface(assess(c, std::vector<double>(16, 650.0), 685.0, 4, 4));
        CHECK(s.all_safe);
        CHECK(s.edges.empty());
    }
    SUBCASE("separable field w2 - c") {
        const std::size_t n = 11;
        const auto c = enumerate_strategies({1.0, 1.5, 645.0, 685.0}, n, n, 640.0);
        std::vector<double> p;
        // margin = w2_end - 1.23
        for (const auto& s : c) p.push_back(685.0 - (s.action.w2_end - 1.23));
        const MarginTable t = assess(c, p, 685.0, n, n);
        const LimitSurface s = limit_surface(t);
        CHECK_FALSE(s.degenerate());
        REQUIRE(s.edges.size() == n);
        for (const auto& e : s.edges) {
            CHECK(t.rows[e.a].action.w2_end == doctest::Approx(1.20));
            CHECK(t.rows[e.b].action.w2_end == doctest::Approx(1.25));
            CHECK(t.rows[e.a].action.t_trip == t.rows[e.b].action.t_trip);
        }
    }
    SUBCASE("random tables against a neighbour scan") {
        std::mt19937_64 rng(3);
        for (int k = 0; k < 20; ++k) {
            const MarginTable t = random_table(rng, 7, 9, 685.0);
            CHECK(limit_surface(t).edges == brute_force_surface(t));
        }
    }
}

TEST_CASE("recommendation equals the brute-force argmax") {
    std::mt19937_64 rng(17);
    for (int k = 0; k < 200; ++k) {
        const MarginTable t = random_table(rng, 1 + rng() % 12, 1 + rng() % 12, 685.0);
        const Recommendation r = recommend(t);
        const auto oracle = brute_force_argmax(t);
        REQUIRE(r.is_scram() == !oracle.has_value());
        if (oracle) {
            CHECK(*r.row == *oracle);
            CHECK(r.action == t.rows[*oracle].action);
        }
    }
}

TEST_CASE("limit shifts keep the recommended action") {
    std::mt19937_64 rng(23);
    for (int k = 0; k < 100; ++k) {
        const MarginTable t = random_table(rng, 8, 8, 720.0);
        const Recommendation base = recommend(t);
        REQUIRE_FALSE(base.is_scram());
        for (double shift : {-20.0, -7.5, 7.5, 20.0}) {
            const Recommendation r = recommend(with_limit(t, t.limit + shift));
            if (!r.is_scram()) CHECK(r.action == base.action);
        }
    }
}

TEST_CASE("all-unsafe table recommends scram") {
    const auto c = enumerate_strategies({1.0, 1.5, 645.0, 685.0}, 3, 3, 640.0);
    const MarginTable t = assess(c, std::vector<double>(9, 690.0), 685.0, 3, 3);
    CHECK(recommend(t).is_scram());
    CHECK(limit_surface(t).all_unsafe);
}

TEST_CASE("datasets have the declared shapes") {
    const auto& w = small_world();
    const auto eps = w.store.indices(Split::Train);
    const Dataset d = diagnosis_dataset(w.store, {eps[0], eps[1]}, 5);
    CHECK(d.n_in == kDiagnosisInputs);
    CHECK(d.rows() == 2 * kEpisodeRows / 5);
    const Dataset p = prognosis_dataset(w.store, {eps[0]}, {1, 5, 10}, w.config.dt);
    CHECK(p.n_in == kPrognosisInputs);
    CHECK(p.rows() == 3);
    CHECK(p.y[0] == w.store.episodes[eps[0]].max_t_pfcl);
    const auto h = episode_history(w.store.episodes[eps[0]], 10.0, w.config.dt);
    CHECK(h.back().t == doctest::Approx(w.store.episodes[eps[0]].rows[100].t));
    CHECK(h.front().t == doctest::Approx(h.back().t - 15.0));
}

TEST_CASE("diagnosis twin accuracy") {
    const auto& w = small_world();
    const double bound = 0.05 * qoi_span(w.store);
    CHECK(w.diagnosis.result.report.reached_target);
    CHECK(w.diagnosis.result.report.rmse_train <= bound);
    CHECK(w.diagnosis.test_rmse <= bound);

    const PlantState steady = steady_state(w.config);
    CHECK(std::abs(diagnose(w.twins.diagnosis, read_sensors(steady)) - steady.t_pfcl) <= bound);

    SUBCASE("pure function of its inputs") {
        const SensorFrame f = read_sensors(steady);
        CHECK(diagnose(w.twins.diagnosis, f) == diagnose(w.twins.diagnosis, f));
        DiagnosisInput in{{f, f}};
        const auto two = diagnose(w.twins.diagnosis, in);
        CHECK(two[0] == two[1]);
        CHECK_THROWS_AS(diagnose(w.twins.diagnosis, DiagnosisInput{}), EmptyInput);
    }
}

TEST_CASE("prognosis twin accuracy and monotonicity") {
    const auto& w = small_world();
    const double bound = 0.05 * qoi_span(w.store);
    CHECK(w.prognosis.result.report.reached_target);
    CHECK(w.prognosis.test_rmse <= bound);
    for (std::size_t e : w.store.indices(Split::Train)) {
        const auto& ep = w.store.episodes[e];
        const auto h = episode_history(ep, 10.0, w.config.dt);
        const double p = prognose(w.twins.prognosis, {h.back().value, gradient_features(h), ep.action});
        CHECK(std::abs(p - ep.max_t_pfcl) <= bound);
    }

    SUBCASE("higher pump speed predicts a lower peak where the plant says so") {
        // The plant peak saturates near T_trip at high w2; pairs whose true drop is
        // below the twin's test RMSE carry no ordering information.
        const auto& ep = w.store.episodes.front();
        const auto h = episode_history(ep, 10.0, w.config.dt);
        const auto g = gradient_features(h);
        const auto cands = enumerate_strategies(w.twins.bounds, 32, 32, h.back().value);
        const double eps = w.prognosis.test_rmse;
        std::size_t pairs = 0, ok = 0;
        for (std::size_t j = 0; j < 32; j += 4) {
            std::vector<double> truth(32), pred(32);
            for (std::size_t i = 0; i < 32; ++i) {
                const ControlAction a = cands[i * 32 + j].action;
                truth[i] = run_episode(ep.scenario, a, w.config).max_t_pfcl;
                pred[i] = prognose(w.twins.prognosis, {h.back().value, g, a});
            }
            for (std::size_t i = 0; i + 1 < 32; ++i) {
                if (truth[i] - truth[i + 1] <= eps) continue;
                ++pairs;
                if (pred[i + 1] <= pred[i]) ++ok;
            }
        }
        REQUIRE(pairs > 0);
        CHECK(static_cast<double>(ok) >= 0.95 * static_cast<double>(pairs));
    }
    SUBCASE("no-mitigation encoding predicts the unmitigated peak") {
        const PlantConfig& c = w.config;
        const EpisodeRecord none = run_episode(table2_scenario(c), {1.0, w.twins.bounds.trip_max}, c);
        const auto h = episode_history(none, 10.0, c.dt);
        const double p = prognose(w.twins.prognosis, {h.back().value, gradient_features(h), none.action});
        CHECK(std::abs(p - none.max_t_pfcl) <= bound);
    }
}

TEST_CASE("table2 recommendation is full pump speed with an immediate trip") {
    const auto& w = small_world();
    const PlantConfig& c = w.config;
    const EpisodeRecord none = run_episode(table2_scenario(c), {1.0, 1e6}, c, 200);
    std::vector<TimedValue> diag;
    for (const auto& r : none.rows) {
        SensorFrame f;
        f.values = {r.t_hpp, r.t_lpp, r.t_up};
        diag.push_back({r.t, diagnose(w.twins.diagnosis, f)});
        if (diag.size() == 101) break;
    }
    std::vector<TimedValue> hist;
    for (int j = 50; j > 0; --j) hist.push_back({diag[0].t - 0.1 * j, diag[0].value});
    hist.insert(hist.end(), diag.begin(), diag.end());
    const MarginTable t = assess_strategies(w.twins, hist.back().value, gradient_features(hist));
    CHECK(t.rows.size() == 1024);
    const Recommendation r = recommend(t);
    REQUIRE_FALSE(r.is_scram());
    CHECK(r.action.w2_end == w.twins.bounds.w2_max);
    CHECK(r.immediate);
}
