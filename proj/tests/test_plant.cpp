#include <cmath>
#include <sstream>

#include "doctest.h"
#include "namac/errors.hpp"
#include "namac/plant.hpp"
#include "namac/scenario.hpp"

using namespace namac;

namespace {

double node(const PlantState& s, int i) {
    switch (i) {
        case 0: return s.t_hpp;
        case 1: return s.t_lpp;
        case 2: return s.t_core;
        case 3: return s.t_fcl;
        case 4: return s.t_up;
        default: return s.t_ihx;
    }
}

void set_node(PlantState& s, int i, double v) {
    switch (i) {
        case 0: s.t_hpp = v; break;
        case 1: s.t_lpp = v; break;
        case 2: s.t_core = v; break;
        case 3: s.t_fcl = v; break;
        case 4: s.t_up = v; break;
        default: s.t_ihx = v; break;
    }
}

// Gauss-Seidel over the six node balances, each solved by bisection on its own
// temperature with the others held fixed.
PlantState bisection_steady_state(const PlantConfig& c) {
    PlantState s;
    s.power = s.precursors = 1.0;
    for (int i = 0; i < 6; ++i) set_node(s, i, c.sink_temperature);
    const ScenarioSpec never{0.5, 1.0, 1e300, 1.0};
    for (int sweep = 0; sweep < 20000; ++sweep) {
        double moved = 0.0;
        for (int i = 0; i < 6; ++i) {
            s.feedback_reference = s.t_fcl;
            double lo = 0.0, hi = 2000.0;
            for (int k = 0; k < 200 && hi - lo > 1e-13; ++k) {
                const double mid = 0.5 * (lo + hi);
                PlantState probe = s;
                set_node(probe, i, mid);
                probe.feedback_reference = i == 3 ? mid : s.feedback_reference;
                (thermal_derivatives(probe, c, never)[i] > 0.0 ? lo : hi) = mid;
            }
            const double next = 0.5 * (lo + hi);
            moved = std::max(moved, std::abs(next - node(s, i)));
            set_node(s, i, next);
        }
        if (moved < 1e-11) break;
    }
    s.feedback_reference = s.t_fcl;
    return s;
}

double max_pfcl(const ScenarioSpec& spec, double pump2, const PlantConfig& c, double dt, double horizon) {
    PlantState s = steady_state(c);
    s.t = spec.accident_time;
    s.feedback_reference = s.t_fcl;
    double peak = s.t_pfcl;
    const long n = std::lround(horizon / dt);
    for (long k = 0; k < n; ++k) {
        s = step_dt(s, pump2, c, spec, dt);
        peak = std::max(peak, s.t_pfcl);
    }
    return peak;
}

}  // namespace

TEST_CASE("steady state matches a node-by-node bisection solve") {
    const PlantConfig c;
    const PlantState s = steady_state(c);
    const PlantState oracle = bisection_steady_state(c);
    for (int i = 0; i < 6; ++i) CHECK(node(s, i) == doctest::Approx(node(oracle, i)).epsilon(1e-10));
    CHECK(s.t_pfcl == doctest::Approx(peak_fuel_centerline(oracle, c)).epsilon(1e-10));
    for (double d : thermal_derivatives(s, c, table2_scenario(c))) CHECK(std::abs(d) < 1e-8);
}

TEST_CASE("steady state sits near the 640 degC calibration anchor") {
    CHECK(steady_state(PlantConfig{}).t_pfcl == doctest::Approx(640.0).epsilon(0.005));
}

TEST_CASE("steady state is a fixed point of step") {
    const PlantConfig c;
    const ScenarioSpec spec = table2_scenario(c);
    PlantState s = steady_state(c);
    for (int k = 0; k < 100; ++k) {
        const PlantState next = step(s, 1.0, c, spec);
        for (int i = 0; i < 6; ++i) CHECK(std::abs(node(next, i) - node(s, i)) <= 1e-8);
        CHECK(std::abs(next.t_pfcl - s.t_pfcl) <= 1e-8);
        s = next;
    }
}

TEST_CASE("zero power puts every node at the sink temperature") {
    PlantConfig c;
    c.nominal_power = 0.0;
    const PlantState s = steady_state(c);
    for (int i = 0; i < 6; ++i) CHECK(node(s, i) == doctest::Approx(c.sink_temperature).epsilon(1e-12));
}

TEST_CASE("feedback strength does not move the steady state") {
    PlantConfig c;
    const PlantState a = steady_state(c);
    c.feedback_coefficient *= 2.0;
    const PlantState b = steady_state(c);
    for (int i = 0; i < 6; ++i) CHECK(node(a, i) == node(b, i));
}

TEST_CASE("pump 1 coastdown profile") {
    const ScenarioSpec s = ScenarioSpec::make(0.5, 50.0, 10010.0, 100.0);
    CHECK(pump1_profile(10000.0, s, 100.0) == 1.0);
    CHECK(pump1_profile(10010.0, s, 100.0) == 1.0);
    CHECK(pump1_profile(10035.0, s, 100.0) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(pump1_profile(10060.0, s, 100.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(pump1_profile(10500.0, s, 100.0) == 0.5);
    CHECK(s.coastdown_rate == doctest::Approx(1.0));
}

TEST_CASE("scenario validation") {
    CHECK_THROWS_AS(ScenarioSpec::make(1.2, 50.0, 10010.0, 100.0), InvalidConfig);
    CHECK_THROWS_AS(ScenarioSpec::make(0.5, 0.0, 10010.0, 100.0), InvalidConfig);
}

TEST_CASE("step pump 1 to half speed agrees with a tenfold finer integration") {
    const PlantConfig c;
    const ScenarioSpec spec{0.5, 1e-9, 10010.0, 0.5e9 * 100.0};
    PlantState coarse = steady_state(c), fine = coarse;
    coarse.t = fine.t = spec.accident_time;
    const double no_fault = coarse.t_pfcl;
    double worst = 0.0, peak = no_fault;
    bool rising = true;
    double prev = coarse.t_pfcl;
    for (int k = 0; k < 2000; ++k) {
        coarse = step(coarse, 1.0, c, spec);
        for (int j = 0; j < 10; ++j) fine = step_dt(fine, 1.0, c, spec, c.dt / 10.0);
        worst = std::max(worst, std::abs(coarse.t_pfcl - fine.t_pfcl));
        if (k < 20 && coarse.t_pfcl <= prev) rising = false;
        prev = coarse.t_pfcl;
        peak = std::max(peak, coarse.t_pfcl);
    }
    CHECK(rising);
    CHECK(peak > no_fault);
    CHECK(worst < 0.5);
}

TEST_CASE("scram decays power and the fuel cools") {
    const PlantConfig c;
    const ScenarioSpec spec = table2_scenario(c);
    SUBCASE("from steady state") {
        PlantState s = scram(steady_state(c), c);
        double prev = s.power;
        for (int k = 0; k < 100; ++k) {
            s = step(s, 1.0, c, spec);
            CHECK(s.power < prev);
            prev = s.power;
        }
        CHECK(scram(s, c) == s);
    }
    SUBCASE("mid-transient") {
        PlantState s = steady_state(c);
        s.t = spec.accident_time;
        for (int k = 0; k < 300; ++k) s = step(s, 1.0, c, spec);
        const double before = s.t_pfcl;
        s = scram(s, c);
        double prev = s.power;
        bool power_down = true;
        for (int k = 0; k < 2000; ++k) {
            s = step(s, 1.0, c, spec);
            if (s.power > prev) power_down = false;
            prev = s.power;
        }
        CHECK(power_down);
        CHECK(s.t_pfcl < before);
    }
}

TEST_CASE("sensor reads and failures") {
    const PlantState s = steady_state(PlantConfig{});
    const SensorFrame all = read_sensors(s);
    CHECK(all.value(Channel::HPP) == s.t_hpp);
    CHECK(all.value(Channel::LPP) == s.t_lpp);
    CHECK(all.value(Channel::UP) == s.t_up);
    CHECK(all.invalid_count() == 0);

    const SensorFrame up = read_sensors(s, {Channel::UP});
    CHECK_FALSE(up.is_valid(Channel::UP));
    CHECK(up.is_valid(Channel::HPP));
    CHECK(up.is_valid(Channel::LPP));

    CHECK(read_sensors(s, {Channel::HPP, Channel::LPP, Channel::UP}).invalid_count() == 3);
}

TEST_CASE("table2 transient brackets the safety limit") {
    const PlantConfig c;
    const ScenarioSpec spec = table2_scenario(c);
    const double none = max_pfcl(spec, 1.0, c, c.dt, 200.0);
    const double full = max_pfcl(spec, 1.5, c, c.dt, 200.0);
    CHECK(none > 685.0);
    CHECK(full < 685.0);
    CHECK(std::abs(max_pfcl(spec, 1.0, c, c.dt / 2.0, 200.0) - none) < 0.5);
}

TEST_CASE("more severe coastdown never peaks lower") {
    const PlantConfig c;
    double prev = 0.0;
    for (double w1_end : {0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0}) {
        const double peak = max_pfcl(ScenarioSpec::make(w1_end, 50.0, 10010.0, 100.0), 1.0, c, c.dt, 200.0);
        CHECK(peak >= prev);
        prev = peak;
    }
}

TEST_CASE("faster pump 2 strictly lowers the peak") {
    const PlantConfig c;
    const ScenarioSpec spec = table2_scenario(c);
    double prev = 1e9;
    for (double w2 = 1.0; w2 <= 1.5 + 1e-12; w2 += 0.05) {
        const double peak = max_pfcl(spec, w2, c, c.dt, 200.0);
        CHECK(peak < prev);
        prev = peak;
    }
}

TEST_CASE("with no power the loop cools monotonically to the sink") {
    PlantConfig hot;
    PlantState s = steady_state(hot);
    PlantConfig cold = hot;
    cold.nominal_power = 0.0;
    const ScenarioSpec never{0.5, 1.0, 1e300, 1.0};
    double prev_max = s.t_fcl;
    for (int k = 0; k < 40000; ++k) {
        s = step(s, 1.0, cold, never);
        double hottest = 0.0;
        for (int i = 0; i < 6; ++i) {
            CHECK_MESSAGE(node(s, i) >= cold.sink_temperature - 1e-9, "node " << i);
            hottest = std::max(hottest, node(s, i));
        }
        REQUIRE(hottest <= prev_max + 1e-9);
        prev_max = hottest;
    }
    for (int i = 0; i < 6; ++i) CHECK(node(s, i) == doctest::Approx(cold.sink_temperature).epsilon(1e-3));
}

TEST_CASE("plant config text round trip") {
    PlantConfig c;
    c.cap_up = 7.25;
    c.dt = 0.05;
    std::stringstream buf;
    write_plant_config(buf, c);
    const PlantConfig back = parse_plant_config(buf);
    CHECK(back.hash() == c.hash());
    CHECK(back.cap_up == 7.25);

    std::stringstream bad("no_such_key = 1\n");
    CHECK_THROWS_AS(parse_plant_config(bad), InvalidConfig);

    PlantConfig neg;
    neg.feedback_coefficient = 0.001;
    CHECK_THROWS_AS(neg.validate(), InvalidConfig);
}

TEST_CASE("snapshot csv row") {
    const std::string row = snapshot_csv_row(steady_state(PlantConfig{}));
    CHECK(std::count(row.begin(), row.end(), ',') == 8);
    CHECK(std::string(kSnapshotCsvHeader) == "t,w_1,w_2,power,T_HPP,T_LPP,T_UP,T_FCL,T_PFCL");
}
