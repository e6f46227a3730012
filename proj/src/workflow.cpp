#include "namac/workflow.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "namac/errors.hpp"
#include "namac/util.hpp"

namespace namac {

using nlohmann::json;

void Timeline::validate() const {
    if (!(t_w < t_acc)) throw InvalidConfig("timeline needs t_w < t_acc");
    if (!(t_d > 0.0)) throw InvalidConfig("diagnosis window t_D must be > 0");
    if (!(horizon > t_d)) throw InvalidConfig("horizon must extend past t_rcmd");
}

void DiscrepancyConfig::validate() const {
    if (!(x_lim > 0.0)) throw InvalidConfig("X_lim must be > 0");
    if (!(cadence > 0.0)) throw InvalidConfig("discrepancy cadence must be > 0");
}

DiscrepancyResult discrepancy_check(double observed, double predicted, const DiscrepancyConfig& cfg) {
    return std::abs(observed - predicted) > cfg.x_lim ? DiscrepancyResult::Anomaly : DiscrepancyResult::Ok;
}

const char* policy_name(Policy p) {
    switch (p) {
        case Policy::AutoAccept: return "auto";
        case Policy::Ignore: return "ignore";
        case Policy::OperatorGated: return "operator";
    }
    return "?";
}

Policy parse_policy(const std::string& text) {
    if (text == "auto" || text == "auto-accept") return Policy::AutoAccept;
    if (text == "ignore" || text == "reject") return Policy::Ignore;
    if (text == "operator" || text == "operator-gated") return Policy::OperatorGated;
    throw InvalidConfig("unknown policy '" + text + "'");
}

const char* decision_name(Decision d) {
    switch (d) {
        case Decision::Accept: return "accept";
        case Decision::Reject: return "reject";
        case Decision::Scram: return "scram";
    }
    return "?";
}

Decision parse_decision(const std::string& text) {
    if (text == "accept") return Decision::Accept;
    if (text == "reject") return Decision::Reject;
    if (text == "scram") return Decision::Scram;
    throw InvalidConfig("unknown decision '" + text + "'");
}

const char* phase_name(Phase p) {
    switch (p) {
        case Phase::Steady: return "steady";
        case Phase::Transient: return "transient";
        case Phase::Paused: return "paused-awaiting-decision";
        case Phase::PostAction: return "post-action";
        case Phase::Terminated: return "terminated";
    }
    return "?";
}

// ---- transcript --------------------------------------------------------------

std::string TranscriptLog::to_ndjson() const {
    std::string out;
    for (const auto& e : events) {
        json line{{"seq", e.seq}, {"type", e.type}, {"t", e.t}, {"payload", e.payload}};
        out += line.dump();
        out += '\n';
    }
    return out;
}

TranscriptLog TranscriptLog::from_ndjson(const std::string& text) {
    TranscriptLog log;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        try {
            const json j = json::parse(line);
            log.events.push_back({j.at("seq").get<std::uint64_t>(), j.at("type").get<std::string>(),
                                  j.at("t").get<double>(), j.at("payload")});
        } catch (const json::exception& e) {
            throw IncompleteLog(std::string("malformed transcript line: ") + e.what());
        }
    }
    return log;
}

std::string TranscriptLog::hash() const { return to_hex(fnv1a64(to_ndjson())); }

const TranscriptEvent* TranscriptLog::find(const std::string& type) const {
    for (const auto& e : events)
        if (e.type == type) return &e;
    return nullptr;
}

std::size_t TranscriptLog::count(const std::string& type) const {
    std::size_t n = 0;
    for (const auto& e : events) n += e.type == type;
    return n;
}

namespace {

json action_json(const ControlAction& a) { return {{"w2_end", a.w2_end}, {"T_trip", a.t_trip}}; }

ControlAction action_from(const json& j) { return {j.at("w2_end").get<double>(), j.at("T_trip").get<double>()}; }

json options_json(const RunOptions& o) {
    json failures = json::array();
    for (auto c : o.failures) failures.push_back(channel_name(c));
    return {{"t_w", o.timeline.t_w},
            {"t_acc", o.timeline.t_acc},
            {"t_D", o.timeline.t_d},
            {"horizon", o.timeline.horizon},
            {"discrepancy", o.discrepancy.enabled},
            {"X_lim", o.discrepancy.x_lim},
            {"cadence", o.discrepancy.cadence},
            {"failures", failures},
            {"failure_time", o.failure_time},
            {"diag_bound", o.diag_bound}};
}

RunOptions options_from(const json& j) {
    RunOptions o;
    o.timeline = {j.at("t_w").get<double>(), j.at("t_acc").get<double>(), j.at("t_D").get<double>(),
                  j.at("horizon").get<double>()};
    o.discrepancy = {j.at("discrepancy").get<bool>(), j.at("X_lim").get<double>(), j.at("cadence").get<double>()};
    for (const auto& name : j.at("failures")) {
        const auto s = name.get<std::string>();
        bool found = false;
        for (auto c : kAllChannels) {
            if (s == channel_name(c)) {
                o.failures.insert(c);
                found = true;
            }
        }
        if (!found) throw IncompleteLog("unknown sensor channel '" + s + "'");
    }
    o.failure_time = j.at("failure_time").get<double>();
    o.diag_bound = j.at("diag_bound").get<double>();
    return o;
}

json scenario_json(const ScenarioSpec& s) {
    return {{"w1_end", s.w1_end}, {"T_1", s.ramp_duration}, {"t_acc", s.accident_time}, {"m", s.coastdown_rate}};
}

ScenarioSpec scenario_from(const json& j) {
    return {j.at("w1_end").get<double>(), j.at("T_1").get<double>(), j.at("t_acc").get<double>(),
            j.at("m").get<double>()};
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

Level grade_outcome(const TranscriptLog& log, double diag_bound, double limit) {
    const TranscriptEvent* start = log.find("start");
    if (!start || log.count("outcome") != 1) throw IncompleteLog("transcript lacks a start or terminal outcome");
    const double t_acc = start->payload.at("options").at("t_acc").get<double>();
    const double t_rcmd = t_acc + start->payload.at("options").at("t_D").get<double>();
    const double eps = 1e-6;
    double max_err = 0.0;
    double max_true = -INFINITY;
    bool scrammed = false;
    for (const auto& e : log.events) {
        if (e.type == "scram") scrammed = true;
        if (e.type != "frame") continue;
        if (e.t < t_acc - eps) continue;
        const double truth = e.payload.at("T_PFCL_true").get<double>();
        max_true = std::max(max_true, truth);
        if (e.t <= t_rcmd + eps && !e.payload.at("T_PFCL_diag").is_null())
            max_err = std::max(max_err, std::abs(e.payload.at("T_PFCL_diag").get<double>() - truth));
    }
    if (max_err > diag_bound) return Level::Level0;
    if (scrammed || max_true > limit) return Level::Level1;
    return Level::Level2;
}

// ---- closed loop -------------------------------------------------------------

ClosedLoop::ClosedLoop(PlantConfig config, ScenarioSpec scenario, TwinSet twins, RunOptions options)
    : config_(std::move(config)), scenario_(scenario), twins_(std::move(twins)), options_(std::move(options)) {
    config_.validate();
    options_.timeline.validate();
    options_.discrepancy.validate();
    scenario_.accident_time = options_.timeline.t_acc;
    scenario_.validate(config_.nominal_pump_speed);
    twins_.diagnosis.validate();
    twins_.prognosis.validate();
    twins_.bounds.validate();

    state_ = steady_state(config_);
    state_.t = options_.timeline.t_w;
    emit("start", {{"config_hash", config_.hash()},
                   {"scenario", scenario_json(scenario_)},
                   {"options", options_json(options_)},
                   {"safety_limit", twins_.safety_limit},
                   {"grid_n", twins_.grid_n}});
    observe();
}

void ClosedLoop::emit(const std::string& type, json payload) {
    log_.events.push_back({seq_++, type, state_.t, std::move(payload)});
}

void ClosedLoop::observe() {
    std::set<Channel> failures;
    if (state_.t >= options_.failure_time - 1e-9) failures = options_.failures;
    frame_ = read_sensors(state_, failures);
    double diag = NAN;
    bool lost = false;
    try {
        diag = diagnose(twins_.diagnosis, frame_);
    } catch (const AllSensorsFailed&) {
        lost = true;
    }
    const bool in_transient = state_.t >= options_.timeline.t_acc - 1e-9;
    json sensors = json::array();
    for (auto c : kAllChannels) sensors.push_back(nullable(frame_.value(c)));
    emit("frame", {{"sensors", sensors},
                   {"T_PFCL_diag", nullable(diag)},
                   {"T_PFCL_true", state_.t_pfcl},
                   {"w1", state_.w1},
                   {"w2", state_.w2},
                   {"power", state_.power}});
    if (in_transient) max_true_ = std::max(max_true_, state_.t_pfcl);
    if (lost) {
        if (phase_ != Phase::Terminated && !state_.scram_latched) {
            emit("sensor_loss", {{"failed", 3}});
            do_scram("sensor_loss");
        }
        return;
    }
    diagnosed_ = diag;
    diag_history_.push_back({state_.t, diag});
    if (in_transient) {
        max_diag_since_acc_ = std::max(max_diag_since_acc_, diag);
        if (state_.t <= options_.timeline.t_rcmd() + 1e-9)
            max_diag_error_ = std::max(max_diag_error_, std::abs(diag - state_.t_pfcl));
    }
}

void ClosedLoop::advance() {
    if (phase_ == Phase::Paused || phase_ == Phase::Terminated) return;
    const Timeline& tl = options_.timeline;
    const double dt = config_.dt;
    state_ = step(state_, pump2_command_, config_, scenario_);
    ++step_index_;
    state_.t = tl.t_w + dt * static_cast<double>(step_index_);

    const auto k_acc = std::llround((tl.t_acc - tl.t_w) / dt);
    const auto k_rcmd = std::llround((tl.t_rcmd() - tl.t_w) / dt);
    const auto k_end = std::llround((tl.t_end() - tl.t_w) / dt);

    if (step_index_ == k_acc && !fault_logged_) {
        fault_logged_ = true;
        if (phase_ == Phase::Steady) phase_ = Phase::Transient;
        emit("fault", {{"scenario", scenario_json(scenario_)}});
    }
    observe();
    if (phase_ == Phase::Terminated) return;

    if (armed_ && !t_1_ && !state_.scram_latched && diagnosed_ >= armed_->t_trip) inject();
    if (t_1_ && options_.discrepancy.enabled && !state_.scram_latched && state_.t >= next_check_ - 1e-9)
        check_discrepancy();
    if (phase_ == Phase::Terminated) return;

    if (step_index_ >= k_end) {
        finish();
        return;
    }
    if (step_index_ == k_rcmd && phase_ == Phase::Transient) pause_and_recommend();
}

void ClosedLoop::pause_and_recommend() {
    phase_ = Phase::Paused;
    emit("pause", {{"T_PFCL_diag", diagnosed_}});
    const auto gradients = gradient_features(diag_history_);
    table_ = assess_strategies(twins_, diagnosed_, gradients);
    recommendation_ = recommend(*table_);
    const auto& r = *recommendation_;
    json predicted = json::array();
    for (const auto& row : table_->rows) predicted.push_back(row.predicted);
    emit("recommendation", {{"decision", r.is_scram() ? "scram" : "act"},
                            {"action", action_json(r.action)},
                            {"immediate", r.immediate},
                            {"margin", r.margin},
                            {"predicted", r.predicted},
                            {"rationale", r.rationale},
                            {"gradients", gradients},
                            {"table", {{"limit", table_->limit},
                                       {"n_w2", table_->n_w2},
                                       {"n_trip", table_->n_trip},
                                       {"w2", {twins_.bounds.w2_min, twins_.bounds.w2_max}},
                                       {"T_trip", {twins_.bounds.trip_min, twins_.bounds.trip_max}},
                                       {"predicted", predicted}}}});
}

void ClosedLoop::decide(Decision d, const std::string& source) {
    if (phase_ != Phase::Paused || !recommendation_) throw std::logic_error("no decision is pending");
    emit("decision", {{"decision", decision_name(d)}, {"source", source}});
    if (d == Decision::Scram) {
        do_scram(source);
        return;
    }
    phase_ = Phase::PostAction;
    if (d == Decision::Accept) {
        if (recommendation_->is_scram()) {
            do_scram("recommended");
            return;
        }
        armed_ = recommendation_->action;
        if (armed_->t_trip <= diagnosed_) inject();
    }
    emit("resume", json::object());
}

void ClosedLoop::inject() {
    pump2_command_ = armed_->w2_end;
    t_1_ = state_.t;
    next_check_ = state_.t + options_.discrepancy.cadence;
    emit("action", {{"action", action_json(*armed_)}, {"T_PFCL_diag", diagnosed_}});
}

void ClosedLoop::check_discrepancy() {
    next_check_ += options_.discrepancy.cadence;
    const double predicted = recommendation_->predicted;
    const double observed = max_diag_since_acc_;
    const auto result = discrepancy_check(observed, predicted, options_.discrepancy);
    if (result == DiscrepancyResult::Anomaly) {
        emit("discrepancy", {{"observed", observed},
                             {"predicted", predicted},
                             {"difference", std::abs(observed - predicted)},
                             {"X_lim", options_.discrepancy.x_lim},
                             {"anomaly", true}});
        do_scram("discrepancy");
    }
}

void ClosedLoop::operator_scram(const std::string& reason) {
    if (phase_ == Phase::Terminated) throw std::logic_error("session already terminated");
    if (phase_ == Phase::Paused) {
        decide(Decision::Scram, reason);
        return;
    }
    do_scram(reason, true);
}

void ClosedLoop::do_scram(const std::string& reason, bool manual) {
    if (state_.scram_latched) return;
    state_ = scram(state_, config_);
    armed_.reset();
    emit("scram", {{"reason", reason}, {"manual", manual}, {"power", state_.power}});
    // SCRAM ends supervision; the plant is run out to the horizon for the record.
    phase_ = Phase::PostAction;
    while (phase_ != Phase::Terminated) advance();
}

void ClosedLoop::finish() {
    const Outcome o = outcome();
    emit("outcome", {{"max_T_PFCL_true", o.max_true_t_pfcl},
                     {"max_diag_error", o.max_diag_error},
                     {"scrammed", o.scrammed},
                     {"limit_exceeded", o.limit_exceeded},
                     {"grade", static_cast<int>(o.level)},
                     {"injected", o.injected ? action_json(*o.injected) : json(nullptr)},
                     {"t_1", o.injection_time ? json(*o.injection_time) : json(nullptr)}});
    phase_ = Phase::Terminated;
}

void ClosedLoop::run_until_blocked() {
    while (phase_ != Phase::Paused && phase_ != Phase::Terminated) advance();
}

Outcome ClosedLoop::outcome() const {
    Outcome o;
    o.max_true_t_pfcl = max_true_;
    o.max_diag_error = max_diag_error_;
    o.scrammed = state_.scram_latched;
    o.limit_exceeded = max_true_ > twins_.safety_limit;
    if (o.max_diag_error > options_.diag_bound) {
        o.level = Level::Level0;
    } else {
        o.level = (o.scrammed || o.limit_exceeded) ? Level::Level1 : Level::Level2;
    }
    if (t_1_) {
        o.injected = armed_ ? armed_ : std::optional<ControlAction>(recommendation_->action);
        o.injection_time = t_1_;
    }
    return o;
}

TranscriptLog run_closed_loop(const PlantConfig& config, const ScenarioSpec& scenario, const TwinSet& twins,
                              Policy policy, const RunOptions& options, const DecisionCallback& operator_decision) {
    ClosedLoop loop(config, scenario, twins, options);
    while (!loop.finished()) {
        loop.run_until_blocked();
        if (!loop.awaiting_decision()) continue;
        switch (policy) {
            case Policy::AutoAccept: loop.decide(Decision::Accept, "auto"); break;
            case Policy::Ignore: loop.decide(Decision::Reject, "auto"); break;
            case Policy::OperatorGated:
                if (!operator_decision) throw InvalidConfig("operator-gated policy needs a decision source");
                loop.decide(operator_decision(loop), "operator");
                break;
        }
    }
    return loop.log();
}

TranscriptLog replay_closed_loop(const TranscriptLog& log, const PlantConfig& config, const TwinSet& twins) {
    const TranscriptEvent* start = log.find("start");
    if (!start) throw IncompleteLog("transcript has no start event");
    if (start->payload.at("config_hash").get<std::string>() != config.hash())
        throw BundleMismatch("transcript was produced with a different plant configuration");
    const ScenarioSpec scenario = scenario_from(start->payload.at("scenario"));
    const RunOptions options = options_from(start->payload.at("options"));

    std::vector<std::pair<Decision, std::string>> decisions;
    std::vector<std::pair<double, std::string>> manual_scrams;
    for (const auto& e : log.events) {
        if (e.type == "decision")
            decisions.emplace_back(parse_decision(e.payload.at("decision").get<std::string>()),
                                   e.payload.at("source").get<std::string>());
        if (e.type == "scram" && e.payload.at("manual").get<bool>())
            manual_scrams.emplace_back(e.t, e.payload.at("reason").get<std::string>());
    }

    ClosedLoop loop(config, scenario, twins, options);
    std::size_t next_decision = 0;
    std::size_t next_scram = 0;
    while (!loop.finished()) {
        if (loop.awaiting_decision()) {
            if (next_decision >= decisions.size()) throw IncompleteLog("transcript ends before a decision");
            const auto& [d, source] = decisions[next_decision++];
            loop.decide(d, source);
            continue;
        }
        if (next_scram < manual_scrams.size() && loop.plant().t >= manual_scrams[next_scram].first - 1e-9) {
            loop.operator_scram(manual_scrams[next_scram++].second);
            continue;
        }
        loop.advance();
    }
    return loop.log();
}

Outcome outcome_of(const TranscriptLog& log) {
    const TranscriptEvent* e = log.find("outcome");
    if (!e) throw IncompleteLog("transcript has no outcome");
    const auto& p = e->payload;
    Outcome o;
    o.max_true_t_pfcl = p.at("max_T_PFCL_true").get<double>();
    o.max_diag_error = p.at("max_diag_error").get<double>();
    o.scrammed = p.at("scrammed").get<bool>();
    o.limit_exceeded = p.at("limit_exceeded").get<bool>();
    o.level = static_cast<Level>(p.at("grade").get<int>());
    if (!p.at("injected").is_null()) o.injected = action_from(p.at("injected"));
    if (!p.at("t_1").is_null()) o.injection_time = p.at("t_1").get<double>();
    return o;
}

}  // namespace namac
