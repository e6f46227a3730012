#include "namac/plant.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "namac/errors.hpp"
#include "namac/util.hpp"

namespace namac {

namespace {

struct ConfigKey {
    const char* name;
    double PlantConfig::*field;
};

// Order is the canonical order used by write_plant_config() and hash().
constexpr ConfigKey kConfigKeys[] = {
    {"nominal_power", &PlantConfig::nominal_power},
    {"nominal_pump_speed", &PlantConfig::nominal_pump_speed},
    {"core_flow_conductance", &PlantConfig::core_flow_conductance},
    {"lpp_flow_conductance", &PlantConfig::lpp_flow_conductance},
    {"ihx_conductance", &PlantConfig::ihx_conductance},
    {"sink_temperature", &PlantConfig::sink_temperature},
    {"lpp_heat_fraction", &PlantConfig::lpp_heat_fraction},
    {"cap_hpp", &PlantConfig::cap_hpp},
    {"cap_lpp", &PlantConfig::cap_lpp},
    {"cap_core", &PlantConfig::cap_core},
    {"cap_up", &PlantConfig::cap_up},
    {"cap_ihx", &PlantConfig::cap_ihx},
    {"cap_fuel", &PlantConfig::cap_fuel},
    {"fuel_resistance", &PlantConfig::fuel_resistance},
    {"film_resistance", &PlantConfig::film_resistance},
    {"film_flow_exponent", &PlantConfig::film_flow_exponent},
    {"hot_channel_factor", &PlantConfig::hot_channel_factor},
    {"fuel_peaking_factor", &PlantConfig::fuel_peaking_factor},
    {"feedback_coefficient", &PlantConfig::feedback_coefficient},
    {"precursor_decay", &PlantConfig::precursor_decay},
    {"natural_circulation", &PlantConfig::natural_circulation},
    {"pump2_time_constant", &PlantConfig::pump2_time_constant},
    {"pump2_max_rate", &PlantConfig::pump2_max_rate},
    {"pump_speed_max", &PlantConfig::pump_speed_max},
    {"scram_time_constant", &PlantConfig::scram_time_constant},
    {"scram_residual", &PlantConfig::scram_residual},
    {"dt", &PlantConfig::dt},
};

constexpr double kTempMin = 0.0;
constexpr double kTempMax = 2000.0;

// Integrated variables. Pump 1 is prescribed, power is algebraic in the
// prompt-jump form (or the scram curve once latched).
struct Vars {
    double precursors, t_hpp, t_lpp, t_core, t_fcl, t_up, t_ihx, w2;
};

Vars operator+(const Vars& a, const Vars& b) {
    return {a.precursors + b.precursors, a.t_hpp + b.t_hpp, a.t_lpp + b.t_lpp,
            a.t_core + b.t_core,         a.t_fcl + b.t_fcl, a.t_up + b.t_up,
            a.t_ihx + b.t_ihx,           a.w2 + b.w2};
}
Vars operator*(double s, const Vars& a) {
    return {s * a.precursors, s * a.t_hpp, s * a.t_lpp, s * a.t_core,
            s * a.t_fcl,      s * a.t_up,  s * a.t_ihx, s * a.w2};
}

Vars to_vars(const PlantState& s) {
    return {s.precursors, s.t_hpp, s.t_lpp, s.t_core, s.t_fcl, s.t_up, s.t_ihx, s.w2};
}

double flow_fraction(double w1, double w2, const PlantConfig& c) {
    return std::max(c.natural_circulation, 0.5 * (w1 + w2));
}

double pin_resistance(double flow, const PlantConfig& c) {
    return c.fuel_resistance + c.film_resistance * std::pow(flow, -c.film_flow_exponent);
}

double power_of(const Vars& v, double t, const PlantState& ref, const PlantConfig& c) {
    if (ref.scram_latched) {
        const double floor = std::min(c.scram_residual, ref.scram_power);
        return floor + (ref.scram_power - floor) *
                           std::exp(-(t - ref.scram_time) / c.scram_time_constant);
    }
    const double rho = c.feedback_coefficient * (v.t_fcl - ref.feedback_reference);
    if (rho >= 1.0) throw NumericalBlowup("reactivity reached prompt critical");
    return v.precursors / (1.0 - rho);
}

Vars derivatives(const Vars& v, double t, double pump2_command, const PlantState& ref,
                 const PlantConfig& c, const ScenarioSpec& spec) {
    const double w1 = pump1_profile(t, spec, c.nominal_pump_speed);
    const double flow = flow_fraction(w1, v.w2, c);
    const double power = power_of(v, t, ref, c);
    const double q = c.nominal_power * power;
    const double q_core = (1.0 - c.lpp_heat_fraction) * q;
    const double g_core = c.core_flow_conductance * flow;
    const double g_lpp = c.lpp_flow_conductance * flow;
    const double pin = (v.t_fcl - v.t_core) / pin_resistance(flow, c);
    const double t_out = 2.0 * v.t_core - v.t_hpp;

    Vars d{};
    d.precursors = ref.scram_latched ? 0.0 : c.precursor_decay * (power - v.precursors);
    d.t_hpp = g_core * (v.t_ihx - v.t_hpp) / c.cap_hpp;
    d.t_lpp = (g_lpp * (v.t_ihx - v.t_lpp) + c.lpp_heat_fraction * q) / c.cap_lpp;
    d.t_core = (pin - 2.0 * g_core * (v.t_core - v.t_hpp)) / c.cap_core;
    d.t_fcl = (q_core - pin) / c.cap_fuel;
    d.t_up = (g_core * (t_out - v.t_up) + g_lpp * (v.t_lpp - v.t_up)) / c.cap_up;
    d.t_ihx = ((g_core + g_lpp) * (v.t_up - v.t_ihx) -
               c.ihx_conductance * (v.t_ihx - c.sink_temperature)) /
              c.cap_ihx;
    const double target = std::clamp(pump2_command, 0.0, c.pump_speed_max);
    d.w2 = std::clamp((target - v.w2) / c.pump2_time_constant, -c.pump2_max_rate, c.pump2_max_rate);
    return d;
}

void check_temperatures(const PlantState& s) {
    for (double v : {s.t_hpp, s.t_lpp, s.t_core, s.t_fcl, s.t_up, s.t_ihx, s.t_pfcl}) {
        if (!std::isfinite(v) || v < kTempMin || v > kTempMax) {
            std::ostringstream msg;
            msg << "temperature " << v << " degC left [0, 2000] at t=" << s.t;
            throw NumericalBlowup(msg.str());
        }
    }
}

}  // namespace

void PlantConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw InvalidConfig(what);
    };
    require(nominal_power >= 0.0, "nominal_power must be >= 0");
    require(nominal_pump_speed > 0.0, "nominal_pump_speed must be > 0");
    require(core_flow_conductance > 0.0 && lpp_flow_conductance > 0.0,
            "flow conductances must be > 0");
    require(ihx_conductance > 0.0, "ihx_conductance must be > 0");
    require(cap_hpp > 0 && cap_lpp > 0 && cap_core > 0 && cap_up > 0 && cap_ihx > 0 && cap_fuel > 0,
            "heat capacities must be > 0");
    require(fuel_resistance >= 0.0 && film_resistance >= 0.0 &&
                fuel_resistance + film_resistance > 0.0,
            "pin resistance must be > 0");
    require(lpp_heat_fraction >= 0.0 && lpp_heat_fraction < 1.0, "lpp_heat_fraction in [0,1)");
    require(feedback_coefficient < 0.0, "feedback_coefficient must be < 0");
    require(precursor_decay > 0.0, "precursor_decay must be > 0");
    require(natural_circulation > 0.0, "natural_circulation must be > 0");
    require(pump2_time_constant > 0.0 && pump2_max_rate > 0.0, "pump-2 actuator must be > 0");
    require(pump_speed_max > 0.0 && pump_speed_max <= 1.5, "pump_speed_max in (0, 1.5]");
    require(scram_time_constant > 0.0 && scram_residual >= 0.0, "scram curve invalid");
    require(dt > 0.0, "dt must be > 0");
}

std::string PlantConfig::hash() const {
    std::ostringstream out;
    write_plant_config(out, *this);
    return to_hex(fnv1a64(out.str()));
}

void write_plant_config(std::ostream& out, const PlantConfig& config) {
    for (const auto& key : kConfigKeys) out << key.name << " = " << format_sig(config.*key.field, 17) << '\n';
}

PlantConfig parse_plant_config(std::istream& in) {
    PlantConfig config;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hashpos = line.find('#'); hashpos != std::string::npos) line.erase(hashpos);
        auto text = trim(line);
        if (text.empty()) continue;
        auto eq = text.find('=');
        if (eq == std::string::npos)
            throw InvalidConfig("line " + std::to_string(lineno) + ": expected key = value");
        auto key = trim(std::string_view(text).substr(0, eq));
        auto value = trim(std::string_view(text).substr(eq + 1));
        auto it = std::find_if(std::begin(kConfigKeys), std::end(kConfigKeys),
                               [&](const ConfigKey& k) { return key == k.name; });
        if (it == std::end(kConfigKeys)) throw InvalidConfig("unknown config key '" + key + "'");
        try {
            std::size_t used = 0;
            config.*(it->field) = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
        } catch (const std::exception&) {
            throw InvalidConfig("bad number for '" + key + "': " + value);
        }
    }
    config.validate();
    return config;
}

PlantConfig load_plant_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidConfig("cannot open plant config " + path);
    return parse_plant_config(in);
}

ScenarioSpec ScenarioSpec::make(double w1_end, double ramp_duration, double accident_time,
                                double nominal_pump_speed) {
    ScenarioSpec s{w1_end, ramp_duration, accident_time,
                   nominal_pump_speed * (1.0 - w1_end) / ramp_duration};
    s.validate(nominal_pump_speed);
    return s;
}

void ScenarioSpec::validate(double nominal_pump_speed) const {
    if (!(w1_end >= 0.0 && w1_end < 1.0)) throw InvalidConfig("w1_end must be in [0, 1)");
    if (!(ramp_duration > 0.0)) throw InvalidConfig("ramp duration must be > 0");
    const double expected = nominal_pump_speed * (1.0 - w1_end) / ramp_duration;
    if (std::abs(coastdown_rate - expected) > 1e-9 * std::abs(expected))
        throw InvalidConfig("coastdown rate inconsistent with (w1_end, T_1)");
}

ScenarioSpec table2_scenario(const PlantConfig& config) {
    return ScenarioSpec::make(0.5, 50.0, 10010.0, config.nominal_pump_speed);
}

const char* channel_name(Channel c) {
    switch (c) {
        case Channel::HPP: return "HPP";
        case Channel::LPP: return "LPP";
        case Channel::UP: return "UP";
    }
    return "?";
}

int SensorFrame::invalid_count() const {
    return static_cast<int>(std::count(valid.begin(), valid.end(), false));
}

double peak_fuel_centerline(const PlantState& s, const PlantConfig& c) {
    return s.t_hpp + c.hot_channel_factor * 2.0 * (s.t_core - s.t_hpp) +
           c.fuel_peaking_factor * (s.t_fcl - s.t_core);
}

std::array<double, 6> thermal_derivatives(const PlantState& state, const PlantConfig& config,
                                          const ScenarioSpec& spec) {
    auto d = derivatives(to_vars(state), state.t, state.w2, state, config, spec);
    return {d.t_hpp, d.t_lpp, d.t_core, d.t_fcl, d.t_up, d.t_ihx};
}

PlantState steady_state(const PlantConfig& config, bool integrate) {
    config.validate();
    const double q = config.nominal_power;
    const double q_core = (1.0 - config.lpp_heat_fraction) * q;
    const double g_core = config.core_flow_conductance;
    const double g_lpp = config.lpp_flow_conductance;
    const double g_tot = g_core + g_lpp;
    const double pin = pin_resistance(1.0, config);

    // Gauss-Seidel sweep over the node balances.
    PlantState s;
    double t_ihx = config.sink_temperature, t_hpp = t_ihx, t_lpp = t_ihx, t_core = t_ihx,
           t_fcl = t_ihx, t_up = t_ihx;
    constexpr int kMaxIter = 100000;
    constexpr double kTol = 1e-11;
    double residual = 0.0;
    for (int iter = 0; iter < kMaxIter; ++iter) {
        t_hpp = t_ihx;
        t_lpp = t_ihx + config.lpp_heat_fraction * q / g_lpp;
        // core and fuel solved together given the inlet
        t_core = t_hpp + q_core / (2.0 * g_core);
        t_fcl = t_core + q_core * pin;
        t_up = (g_core * (2.0 * t_core - t_hpp) + g_lpp * t_lpp) / g_tot;
        t_ihx = (g_tot * t_up + config.ihx_conductance * config.sink_temperature) /
                (g_tot + config.ihx_conductance);

        s.t_hpp = t_hpp;
        s.t_lpp = t_lpp;
        s.t_core = t_core;
        s.t_fcl = t_fcl;
        s.t_up = t_up;
        s.t_ihx = t_ihx;
        s.feedback_reference = t_fcl;
        residual = 0.0;
        for (double d : thermal_derivatives(s, config, ScenarioSpec{0.5, 1.0, 1e300, 0.0}))
            residual = std::max(residual, std::abs(d));
        if (residual < kTol) break;
    }
    if (!(residual < kTol)) throw NonConvergence("steady-state residual " + std::to_string(residual));

    s.t = 0.0;
    s.w1 = s.w2 = 1.0;
    s.power = s.precursors = 1.0;
    s.t_pfcl = peak_fuel_centerline(s, config);

    if (integrate) {
        // Pseudo-transient relaxation at nominal inputs; the balance above is
        // already a fixed point, so this only removes round-off.
        const ScenarioSpec never{0.5, 1.0, 1e300, 0.0};
        for (int i = 0; i < 1000; ++i) s = step(s, 1.0, config, never);
        s.t = 0.0;
        s.feedback_reference = s.t_fcl;
    }
    check_temperatures(s);
    return s;
}

double pump1_profile(double t, const ScenarioSpec& spec, double nominal_pump_speed) {
    (void)nominal_pump_speed;  // normalized output; w_0 cancels
    if (t < spec.accident_time) return 1.0;
    const double elapsed = t - spec.accident_time;
    if (elapsed >= spec.ramp_duration) return spec.w1_end;
    return 1.0 - (1.0 - spec.w1_end) * elapsed / spec.ramp_duration;
}

PlantState step(const PlantState& state, double pump2_command, const PlantConfig& config,
                const ScenarioSpec& spec) {
    return step_dt(state, pump2_command, config, spec, config.dt);
}

PlantState step_dt(const PlantState& state, double pump2_command, const PlantConfig& config,
                   const ScenarioSpec& spec, double dt) {
    const Vars y = to_vars(state);
    const double t = state.t;
    const Vars k1 = derivatives(y, t, pump2_command, state, config, spec);
    const Vars k2 = derivatives(y + (0.5 * dt) * k1, t + 0.5 * dt, pump2_command, state, config, spec);
    const Vars k3 = derivatives(y + (0.5 * dt) * k2, t + 0.5 * dt, pump2_command, state, config, spec);
    const Vars k4 = derivatives(y + dt * k3, t + dt, pump2_command, state, config, spec);
    const Vars next = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

    PlantState out = state;
    out.t = t + dt;
    out.precursors = next.precursors;
    out.t_hpp = next.t_hpp;
    out.t_lpp = next.t_lpp;
    out.t_core = next.t_core;
    out.t_fcl = next.t_fcl;
    out.t_up = next.t_up;
    out.t_ihx = next.t_ihx;
    out.w2 = std::clamp(next.w2, 0.0, config.pump_speed_max);
    out.w1 = pump1_profile(out.t, spec, config.nominal_pump_speed);
    out.power = power_of(next, out.t, state, config);
    out.t_pfcl = peak_fuel_centerline(out, config);
    check_temperatures(out);
    return out;
}

SensorFrame read_sensors(const PlantState& state, const std::set<Channel>& failures) {
    SensorFrame f;
    f.t = state.t;
    f.values = {state.t_hpp, state.t_lpp, state.t_up};
    for (Channel c : failures) {
        f.values[static_cast<int>(c)] = std::nan("");
        f.valid[static_cast<int>(c)] = false;
    }
    return f;
}

PlantState scram(const PlantState& state, const PlantConfig& config) {
    (void)config;
    if (state.scram_latched) return state;
    PlantState out = state;
    out.scram_latched = true;
    out.scram_time = state.t;
    out.scram_power = state.power;
    return out;
}

std::string snapshot_csv_row(const PlantState& s) {
    std::ostringstream out;
    out << format_sig(s.t, 9) << ',' << format_sig(s.w1, 9) << ',' << format_sig(s.w2, 9) << ','
        << format_sig(s.power, 9) << ',' << format_sig(s.t_hpp, 9) << ',' << format_sig(s.t_lpp, 9)
        << ',' << format_sig(s.t_up, 9) << ',' << format_sig(s.t_fcl, 9) << ','
        << format_sig(s.t_pfcl, 9);
    return out.str();
}

}  // namespace namac
