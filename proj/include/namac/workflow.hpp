#pragma once

// Operational loop: steady wait, loss-of-flow fault, pause at the
// recommendation time for diagnosis/prognosis/assessment, injection of the
// accepted action, discrepancy monitoring and grading. ClosedLoop is a
// steppable state machine so a service can drive it one plant step at a time;
// run_closed_loop drives it to completion under a fixed policy.

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "namac/plant.hpp"
#include "namac/scenario.hpp"
#include "namac/twins.hpp"

namespace namac {

struct Timeline {
    double t_w = 10000.0;
    double t_acc = 10010.0;
    double t_d = 10.0;
    double horizon = 200.0;  // run ends at t_acc + horizon

    [[nodiscard]] double t_rcmd() const { return t_acc + t_d; }
    [[nodiscard]] double t_end() const { return t_acc + horizon; }
    void validate() const;
};

struct DiscrepancyConfig {
    bool enabled = true;
    double x_lim = 15.0;   // degC
    double cadence = 1.0;  // s of plant time

    void validate() const;
};

enum class DiscrepancyResult { Ok, Anomaly };

/// Anomaly iff |observed - predicted| > x_lim.
DiscrepancyResult discrepancy_check(double observed, double predicted, const DiscrepancyConfig& cfg);

enum class Policy { AutoAccept, Ignore, OperatorGated };
const char* policy_name(Policy p);
Policy parse_policy(const std::string& text);

enum class Decision { Accept, Reject, Scram };
const char* decision_name(Decision d);
Decision parse_decision(const std::string& text);

enum class Phase { Steady, Transient, Paused, PostAction, Terminated };
const char* phase_name(Phase p);

enum class Level { Level0 = 0, Level1 = 1, Level2 = 2 };

struct TranscriptEvent {
    std::uint64_t seq = 0;
    std::string type;
    double t = 0.0;
    nlohmann::json payload;
};

/// Event types: start, frame, fault, pause, recommendation, decision, action,
/// resume, discrepancy, scram, sensor_loss, outcome.
struct TranscriptLog {
    std::vector<TranscriptEvent> events;

    [[nodiscard]] std::string to_ndjson() const;
    static TranscriptLog from_ndjson(const std::string& text);
    /// FNV-1a of the line-delimited serialization.
    [[nodiscard]] std::string hash() const;
    [[nodiscard]] const TranscriptEvent* find(const std::string& type) const;
    [[nodiscard]] std::size_t count(const std::string& type) const;
};

struct RunOptions {
    Timeline timeline;
    DiscrepancyConfig discrepancy;
    std::set<Channel> failures;
    double failure_time = 0.0;  // failures apply from this plant time
    double diag_bound = 30.0;   // degC, grading threshold on absolute diagnosis error
};

/// Level 0: diagnosis error in [t_acc, t_rcmd] above diag_bound. Level 1:
/// diagnosis fine but SCRAM or limit exceeded. Level 2 otherwise.
Level grade_outcome(const TranscriptLog& log, double diag_bound, double limit);

struct Outcome {
    double max_true_t_pfcl = 0.0;
    double max_diag_error = 0.0;   // over [t_acc, t_rcmd]
    bool scrammed = false;
    bool limit_exceeded = false;
    Level level = Level::Level0;
    std::optional<ControlAction> injected;
    std::optional<double> injection_time;
};

class ClosedLoop {
public:
    ClosedLoop(PlantConfig config, ScenarioSpec scenario, TwinSet twins, RunOptions options);

    [[nodiscard]] Phase phase() const { return phase_; }
    [[nodiscard]] bool finished() const { return phase_ == Phase::Terminated; }
    [[nodiscard]] bool awaiting_decision() const { return phase_ == Phase::Paused; }
    [[nodiscard]] const PlantState& plant() const { return state_; }
    [[nodiscard]] const SensorFrame& last_frame() const { return frame_; }
    [[nodiscard]] double diagnosed() const { return diagnosed_; }
    [[nodiscard]] const std::optional<Recommendation>& recommendation() const { return recommendation_; }
    [[nodiscard]] const std::optional<MarginTable>& margin_table() const { return table_; }
    [[nodiscard]] const TranscriptLog& log() const { return log_; }
    [[nodiscard]] const RunOptions& options() const { return options_; }
    [[nodiscard]] const ScenarioSpec& scenario() const { return scenario_; }
    [[nodiscard]] const std::optional<ControlAction>& armed_action() const { return armed_; }
    [[nodiscard]] const std::optional<double>& injection_time() const { return t_1_; }

    /// One plant step. No-op while paused or terminated.
    void advance();

    /// Operator decision on the pending recommendation; throws
    /// std::logic_error when no decision is pending.
    void decide(Decision d, const std::string& source = "operator");

    /// Manual SCRAM, allowed in any non-terminal phase.
    void operator_scram(const std::string& reason = "operator");

    /// Steps until paused or terminated.
    void run_until_blocked();

    [[nodiscard]] Outcome outcome() const;

private:
    void emit(const std::string& type, nlohmann::json payload);
    void observe();
    void pause_and_recommend();
    void inject();
    void do_scram(const std::string& reason, bool manual = false);
    void finish();
    void check_discrepancy();

    PlantConfig config_;
    ScenarioSpec scenario_;
    TwinSet twins_;
    RunOptions options_;
    PlantState state_;
    SensorFrame frame_;
    Phase phase_ = Phase::Steady;
    double diagnosed_ = 0.0;
    double max_diag_since_acc_ = -INFINITY;
    double max_true_ = -INFINITY;
    double max_diag_error_ = 0.0;
    double pump2_command_ = 1.0;
    std::vector<TimedValue> diag_history_;
    std::optional<Recommendation> recommendation_;
    std::optional<MarginTable> table_;
    std::optional<ControlAction> armed_;
    std::optional<double> t_1_;
    double next_check_ = 0.0;
    bool fault_logged_ = false;
    std::uint64_t seq_ = 0;
    long step_index_ = 0;
    TranscriptLog log_;
};

using DecisionCallback = std::function<Decision(const ClosedLoop&)>;

/// Drives a loop to completion. OperatorGated consults `operator_decision`.
TranscriptLog run_closed_loop(const PlantConfig& config, const ScenarioSpec& scenario, const TwinSet& twins,
                              Policy policy, const RunOptions& options,
                              const DecisionCallback& operator_decision = {});

/// Reruns from a transcript's start event, applying its recorded decisions.
TranscriptLog replay_closed_loop(const TranscriptLog& log, const PlantConfig& config, const TwinSet& twins);

Outcome outcome_of(const TranscriptLog& log);

}  // namespace namac
