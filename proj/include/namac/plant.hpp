#pragma once

// Reduced-order primary loop of a pool-type sodium fast reactor.
//
// Five thermal nodes (high/low pressure lower plena, core channel, upper
// plenum, IHX cold leg) plus a lumped fuel pin, one-group point kinetics in
// the prompt-jump form, a single fuel-temperature reactivity feedback and two
// primary pumps. Pump 1 carries the loss-of-flow fault, pump 2 is the control
// handle. Integration is fixed-step RK4.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

namespace namac {

struct PlantConfig {
    double nominal_power = 62.5;          // MW
    double nominal_pump_speed = 100.0;    // rad/s (w_0)

    // flow heat-capacity rates at nominal flow, MW/degC
    double core_flow_conductance = 0.55;
    double lpp_flow_conductance = 0.066;
    double ihx_conductance = 0.88;        // UA to the secondary side, MW/degC
    double sink_temperature = 300.0;      // degC, secondary boundary
    double lpp_heat_fraction = 0.03;      // share of power deposited in the LPP path

    // node heat capacities, MJ/degC
    double cap_hpp = 3.0;
    double cap_lpp = 4.0;
    double cap_core = 1.1;
    double cap_up = 8.0;
    double cap_ihx = 6.0;
    double cap_fuel = 1.2;

    // fuel pin: centerline-to-coolant resistance = fuel + film * F^-exponent, degC/MW
    double fuel_resistance = 0.4186;
    double film_resistance = 1.2;
    double film_flow_exponent = 0.8;
    double hot_channel_factor = 1.55;
    double fuel_peaking_factor = 1.0;

    double feedback_coefficient = -0.0005;  // $/degC on fuel centerline temperature
    double precursor_decay = 0.08;          // 1/s
    double natural_circulation = 0.05;      // flow floor, fraction of nominal

    double pump2_time_constant = 2.0;       // s
    double pump2_max_rate = 0.2;            // 1/s
    double pump_speed_max = 1.5;

    double scram_time_constant = 10.0;      // s
    double scram_residual = 0.05;

    double dt = 0.1;                        // s

    /// Throws InvalidConfig on the first violated invariant.
    void validate() const;

    /// FNV-1a over the canonical key/value text, 16 hex digits.
    [[nodiscard]] std::string hash() const;
};

/// Reads the flat `key = value` format; unknown keys are an error.
PlantConfig load_plant_config(const std::string& path);
PlantConfig parse_plant_config(std::istream& in);
void write_plant_config(std::ostream& out, const PlantConfig& config);

struct PlantState {
    double t = 0.0;
    double w1 = 1.0;           // fraction of w_0
    double w2 = 1.0;
    double power = 1.0;        // fraction of P_0
    double precursors = 1.0;   // normalized so that steady state has precursors == power
    double t_hpp = 0.0;
    double t_lpp = 0.0;
    double t_core = 0.0;       // core channel coolant, average
    double t_fcl = 0.0;        // fuel centerline, core average
    double t_up = 0.0;
    double t_ihx = 0.0;        // IHX primary outlet / cold leg
    double t_pfcl = 0.0;       // peak fuel centerline (hot spot)
    double feedback_reference = 0.0;
    bool scram_latched = false;
    double scram_time = 0.0;
    double scram_power = 0.0;

    bool operator==(const PlantState&) const = default;
};

struct ScenarioSpec {
    double w1_end = 0.5;
    double ramp_duration = 50.0;     // T_1, s
    double accident_time = 10010.0;  // t_acc, s
    double coastdown_rate = 1.0;     // rad/s

    static ScenarioSpec make(double w1_end, double ramp_duration, double accident_time,
                             double nominal_pump_speed);
    void validate(double nominal_pump_speed) const;

    bool operator==(const ScenarioSpec&) const = default;
};

/// Loss-of-flow demonstration case: 50 % in 50 s from t = 10,010 s.
ScenarioSpec table2_scenario(const PlantConfig& config = {});

enum class Channel : int { HPP = 0, LPP = 1, UP = 2 };
inline constexpr std::array<Channel, 3> kAllChannels{Channel::HPP, Channel::LPP, Channel::UP};
const char* channel_name(Channel c);

struct SensorFrame {
    double t = 0.0;
    std::array<double, 3> values{};  // HPP, LPP, UP; NaN when invalid
    std::array<bool, 3> valid{true, true, true};

    [[nodiscard]] double value(Channel c) const { return values[static_cast<int>(c)]; }
    [[nodiscard]] bool is_valid(Channel c) const { return valid[static_cast<int>(c)]; }
    [[nodiscard]] int invalid_count() const;
};

/// Fixed-point solve of the nominal energy balance. With `integrate` the
/// result is additionally relaxed by pseudo-transient stepping.
PlantState steady_state(const PlantConfig& config, bool integrate = false);

/// Normalized pump-1 speed; 1 before the accident, linear coastdown, then held.
double pump1_profile(double t, const ScenarioSpec& spec, double nominal_pump_speed);

/// Advances one RK4 step of config.dt.
PlantState step(const PlantState& state, double pump2_command, const PlantConfig& config,
                const ScenarioSpec& spec);

/// Same as step() with an explicit step size (used for convergence studies).
PlantState step_dt(const PlantState& state, double pump2_command, const PlantConfig& config,
                   const ScenarioSpec& spec, double dt);

SensorFrame read_sensors(const PlantState& state, const std::set<Channel>& failures = {});

PlantState scram(const PlantState& state, const PlantConfig& config);

/// Time derivatives of the six thermal nodes, degC/s (hpp, lpp, core, fuel, up, ihx).
std::array<double, 6> thermal_derivatives(const PlantState& state, const PlantConfig& config,
                                          const ScenarioSpec& spec);

double peak_fuel_centerline(const PlantState& state, const PlantConfig& config);

inline constexpr const char* kSnapshotCsvHeader = "t,w_1,w_2,power,T_HPP,T_LPP,T_UP,T_FCL,T_PFCL";
std::string snapshot_csv_row(const PlantState& state);

}  // namespace namac
