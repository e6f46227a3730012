#include <algorithm>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "namac/errors.hpp"
#include "namac/scenario.hpp"

using namespace namac;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("namac_test_scenario_" + name);
    fs::remove_all(p);
    return p;
}

DatabaseRequest small_request(std::size_t n) {
    const PlantConfig c;
    DatabaseRequest r;
    r.scenarios = {table2_scenario(c)};
    r.bounds = default_action_bounds(c);
    r.grid_n = n;
    r.rows = 300;
    return r;
}

}  // namespace

TEST_CASE("grid sampling") {
    const ActionBounds b{1.0, 1.5, 640.0, 680.0};
    CHECK(sample_grid(b, 32).size() == 1024);
    const auto corners = sample_grid(b, 2);
    REQUIRE(corners.size() == 4);
    CHECK(corners[0] == ControlAction{1.0, 640.0});
    CHECK(corners[1] == ControlAction{1.0, 680.0});
    CHECK(corners[2] == ControlAction{1.5, 640.0});
    CHECK(corners[3] == ControlAction{1.5, 680.0});
    const ActionBounds odd{1.1, 1.4, 650.0, 671.0};
    const auto three = sample_grid(odd, 3);
    CHECK(three[4].w2_end == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(three[4].t_trip == doctest::Approx(660.5).epsilon(1e-15));
}

TEST_CASE("bounds validation and uniform draws") {
    CHECK_THROWS_AS((ActionBounds{1.5, 1.0, 640.0, 680.0}.validate()), InvalidBounds);
    CHECK_THROWS_AS((ActionBounds{1.0, 1.5, 680.0, 680.0}.validate()), InvalidBounds);
    const ActionBounds b{1.0, 1.5, 645.0, 685.0};
    const auto u = sample_uniform(b, 200, 5);
    CHECK(u == sample_uniform(b, 200, 5));
    CHECK_FALSE(u == sample_uniform(b, 200, 6));
    for (const auto& a : u) CHECK(b.contains(a));
}

TEST_CASE("default trip range starts 5 degC above steady state") {
    const PlantConfig c;
    const ActionBounds b = default_action_bounds(c);
    CHECK(b.trip_min == doctest::Approx(steady_state(c).t_pfcl + 5.0).epsilon(1e-12));
    CHECK(b.trip_max == 685.0);
    CHECK(b.w2_min == 1.0);
    CHECK(b.w2_max == 1.5);
}

TEST_CASE("episode runs") {
    const PlantConfig c;
    const ScenarioSpec spec = table2_scenario(c);
    const EpisodeRecord none = run_episode(spec, {1.0, 1e6}, c);
    CHECK(none.rows.size() == kEpisodeRows);
    CHECK(none.max_t_pfcl > 685.0);
    CHECK_FALSE(none.trip_time.has_value());

    const EpisodeRecord mitigated = run_episode(spec, {1.5, 645.0}, c);
    CHECK(mitigated.max_t_pfcl < none.max_t_pfcl);
    CHECK(mitigated.trip_time.has_value());

    SUBCASE("trip above the unmitigated peak never fires") {
        const EpisodeRecord high = run_episode(spec, {1.5, none.max_t_pfcl + 1.0}, c);
        CHECK_FALSE(high.trip_time.has_value());
        CHECK(high.rows == none.rows);
    }
    SUBCASE("stored peak equals the series maximum") {
        double peak = -1e9;
        for (const auto& r : mitigated.rows) peak = std::max(peak, r.t_pfcl);
        CHECK(peak == mitigated.max_t_pfcl);
    }
    SUBCASE("rows sit on the 0.1 s lattice from the accident start") {
        CHECK(none.rows[0].t == doctest::Approx(spec.accident_time));
        CHECK(none.rows[1999].t == doctest::Approx(spec.accident_time + 199.9));
    }
}

TEST_CASE("database build is deterministic and on the lattice") {
    const PlantConfig c;
    const EpisodeStore a = build_database(small_request(2), c);
    CHECK(a.size() == 4);
    CHECK(a.total_rows() == 4 * 300);
    const EpisodeStore b = build_database(small_request(2), c);
    CHECK(a == b);
    a.validate();
    for (const auto& ep : a.episodes) CHECK(lattice_index(a.header, ep.action).has_value());
    CHECK_FALSE(lattice_index(a.header, {1.23, 650.0}).has_value());
    CHECK(a.header.config_hash == c.hash());
}

TEST_CASE("full grid sizes") {
    auto r = small_request(32);
    r.rows = 3;
    const EpisodeStore s = build_database(r, PlantConfig{});
    CHECK(s.size() == 1024);
    CHECK(s.indices(Split::Test).size() + s.indices(Split::Train).size() == 1024);
    CHECK(s.indices(Split::Test).size() == 102);
    CHECK(std::size_t{1024} * kEpisodeRows == 2048000);
}

TEST_CASE("invalid bounds refuse to build") {
    auto r = small_request(2);
    r.bounds.w2_min = 2.0;
    CHECK_THROWS_AS(build_database(r, PlantConfig{}), InvalidBounds);
}

TEST_CASE("selection patterns") {
    auto r = small_request(10);
    r.rows = 2;
    const EpisodeStore s = build_database(r, PlantConfig{});
    REQUIRE(s.size() == 100);

    const EpisodeStore decade = select_episodes(s, SelectionPattern::parse("1:10:100"));
    REQUIRE(decade.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) CHECK(decade.episodes[i] == s.episodes[i * 10]);

    CHECK(select_episodes(s, SelectionPattern::parse("1:1:100")) == s);
    CHECK(select_episodes(s, SelectionPattern::parse("1:500:100")).size() == 1);
    CHECK_THROWS_AS(select_episodes(s, SelectionPattern::parse("200:1:300")), EmptySelection);
    CHECK_THROWS(SelectionPattern::parse("1:x:3"));
}

TEST_CASE("store round trip and write atomicity") {
    const PlantConfig c;
    const EpisodeStore s = build_database(small_request(2), c);
    const fs::path dir = scratch_dir("roundtrip");
    save_store(s, dir.string());
    CHECK(fs::exists(dir / "manifest.txt"));
    CHECK(std::distance(fs::directory_iterator(dir / "episodes"), fs::directory_iterator{}) == 4);
    CHECK(load_store(dir.string()) == s);

    std::ofstream(dir / "episodes" / "episode_0002.csv", std::ios::trunc) << "t,T_HPP\n1,2\n";
    CHECK_THROWS_AS(load_store(dir.string()), StoreFormatError);
    CHECK_THROWS_AS(load_store((dir / "missing").string()), StoreFormatError);
    fs::remove_all(dir);
}

TEST_CASE("action sets are labeled test") {
    const PlantConfig c;
    const auto acts = sample_uniform(default_action_bounds(c), 3, 1);
    const EpisodeStore s = build_action_set({table2_scenario(c)}, acts, c, "held-out", 50);
    CHECK(s.size() == 3);
    CHECK(s.indices(Split::Test).size() == 3);
    CHECK(s.header.grid_n == 0);
}
