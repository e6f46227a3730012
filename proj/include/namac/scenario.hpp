#pragma once

// Data-generation engine: samples the control space, runs episodes on the
// plant and persists the episode databases used to train the twins.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "namac/plant.hpp"

namespace namac {

struct ControlAction {
    double w2_end = 1.0;   // fraction of w_0
    double t_trip = 685.0; // degC

    bool operator==(const ControlAction&) const = default;
};

struct ActionBounds {
    double w2_min = 1.0;
    double w2_max = 1.5;
    double trip_min = 645.0;
    double trip_max = 685.0;

    void validate() const;  // InvalidBounds if min >= max on either axis
    [[nodiscard]] bool contains(const ControlAction& a) const;
    bool operator==(const ActionBounds&) const = default;
};

/// Trip range default: [steady T_PFCL + 5 degC, safety limit].
ActionBounds default_action_bounds(const PlantConfig& config, double safety_limit = 685.0);

/// n*n actions, w2_end-major (index = i_w2 * n + i_trip).
std::vector<ControlAction> sample_grid(const ActionBounds& bounds, std::size_t n_per_axis);

/// Seeded uniform draws inside the bounds, used for held-out test sets.
std::vector<ControlAction> sample_uniform(const ActionBounds& bounds, std::size_t count,
                                          std::uint64_t seed);

struct EpisodeRow {
    double t, t_hpp, t_lpp, t_up, t_pfcl, w1, w2;
    bool operator==(const EpisodeRow&) const = default;
};

inline constexpr std::size_t kEpisodeRows = 2000;
inline constexpr const char* kEpisodeCsvHeader = "t,T_HPP,T_LPP,T_UP,T_PFCL,w_1,w_2";

struct EpisodeRecord {
    ScenarioSpec scenario;
    ControlAction action;
    std::vector<EpisodeRow> rows;  // row k at t_acc + k*dt
    double max_t_pfcl = 0.0;
    std::optional<double> trip_time;

    bool operator==(const EpisodeRecord&) const = default;
};

/// Episode values are recorded at 9 significant digits, the on-disk precision,
/// so that a stored and reloaded record compares equal to the generated one.
double quantize_record_value(double v);

/// Runs kEpisodeRows samples from the accident start. Pump 2 switches to
/// w2_end at the first row whose true T_PFCL reaches T_trip.
EpisodeRecord run_episode(const ScenarioSpec& spec, const ControlAction& action,
                          const PlantConfig& config, std::size_t rows = kEpisodeRows);

/// Same trajectory with a different integration step; rows are taken every
/// 0.1 s of plant time. Used for time-step convergence checks.
EpisodeRecord run_episode_dt(const ScenarioSpec& spec, const ControlAction& action,
                             const PlantConfig& config, double dt, std::size_t rows = kEpisodeRows);

enum class Split { Train, Test };

struct StoreHeader {
    std::string config_hash;
    std::string scenario_family;
    std::size_t grid_n = 0;
    ActionBounds bounds;

    bool operator==(const StoreHeader&) const = default;
};

struct EpisodeStore {
    StoreHeader header;
    std::vector<EpisodeRecord> episodes;
    std::vector<Split> splits;

    [[nodiscard]] std::size_t size() const { return episodes.size(); }
    [[nodiscard]] std::size_t total_rows() const;
    /// Episode indices carrying the given split label.
    [[nodiscard]] std::vector<std::size_t> indices(Split s) const;
    /// Throws StoreFormatError on a violated invariant.
    void validate() const;

    bool operator==(const EpisodeStore&) const = default;
};

struct DatabaseRequest {
    std::vector<ScenarioSpec> scenarios;  // scenario family
    std::string family_name = "table2";
    ActionBounds bounds;
    std::size_t grid_n = 32;
    std::uint64_t seed = 2021;
    double test_fraction = 0.1;           // by episode
    std::size_t rows = kEpisodeRows;
};

/// Every (scenario, grid action) pair, run in parallel; deterministic for a
/// given request and config.
EpisodeStore build_database(const DatabaseRequest& request, const PlantConfig& config);

/// Stand-alone store of explicit actions (e.g. a seeded uniform test set);
/// grid_n is 0 and every episode is labeled Test.
EpisodeStore build_action_set(const std::vector<ScenarioSpec>& scenarios,
                              const std::vector<ControlAction>& actions, const PlantConfig& config,
                              std::string family_name, std::size_t rows = kEpisodeRows);

/// MATLAB-style "start:stride:end" over 1-based episode positions.
struct SelectionPattern {
    std::size_t start = 1;
    std::size_t stride = 1;
    std::size_t end = 0;

    static SelectionPattern parse(const std::string& text);
};

EpisodeStore select_episodes(const EpisodeStore& store, const SelectionPattern& pattern);

/// Lattice index of an action, or nullopt when the action is off-lattice.
std::optional<std::pair<std::size_t, std::size_t>> lattice_index(const StoreHeader& header,
                                                                 const ControlAction& a);

/// manifest.txt plus episodes/episode_NNNN.csv. The manifest is written last
/// so a failed write never leaves a manifest behind.
void save_store(const EpisodeStore& store, const std::string& dir);
EpisodeStore load_store(const std::string& dir);

}  // namespace namac
