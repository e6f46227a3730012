#pragma once

// Digital twins: diagnosis (coolant sensors -> hidden peak fuel centerline
// temperature), prognosis (state features + candidate action -> episode peak),
// strategy inventory (uniform action grid) and strategy assessment (safety
// margins, limit surface, recommendation).

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "namac/neural.hpp"
#include "namac/plant.hpp"
#include "namac/scenario.hpp"

namespace namac {

// ---- diagnosis -------------------------------------------------------------

/// Failed channels take the mean of the valid channels of the same frame.
SensorFrame impute(const SensorFrame& frame);

struct DiagnosisInput {
    std::vector<SensorFrame> frames;
};

/// T_PFCL estimate for one frame (imputed first).
double diagnose(const NeuralNetModel& model, const SensorFrame& frame);

/// One estimate per frame.
std::vector<double> diagnose(const NeuralNetModel& model, const DiagnosisInput& input);

inline constexpr std::size_t kDiagnosisInputs = 3;

/// (T_HPP, T_LPP, T_UP) -> T_PFCL rows from the given episodes, every
/// `row_stride`-th row.
Dataset diagnosis_dataset(const EpisodeStore& store, const std::vector<std::size_t>& episodes,
                          std::size_t row_stride = 1);

// ---- prognosis -------------------------------------------------------------

struct TimedValue {
    double t;
    double value;
};

/// (T(t0) - T(t0 - dt)) / dt with t0 the last sample and the nearest stored
/// sample standing in for t0 - dt.
double finite_gradient(const std::vector<TimedValue>& series, double dt);

inline constexpr std::array<double, 3> kGradientWindows{1.0, 2.0, 5.0};
inline constexpr std::size_t kPrognosisInputs = 3 + kGradientWindows.size();

struct PrognosisInput {
    double t0_value = 0.0;
    std::array<double, 3> gradients{};
    ControlAction action;

    [[nodiscard]] std::array<double, kPrognosisInputs> features() const;
};

/// Gradient features at the end of a series.
std::array<double, 3> gradient_features(const std::vector<TimedValue>& series);

double prognose(const NeuralNetModel& model, const PrognosisInput& input);

/// Rows at t0 = t_acc + t_D for each diagnosis window t_D, using the recorded
/// T_PFCL (history before the accident is the first recorded row).
Dataset prognosis_dataset(const EpisodeStore& store, const std::vector<std::size_t>& episodes,
                          const std::vector<double>& diagnosis_windows, double dt);

/// Rows recorded up to and including t_acc + t_D, as a timed T_PFCL series.
std::vector<TimedValue> episode_history(const EpisodeRecord& episode, double t_d, double dt);

// ---- strategy inventory ----------------------------------------------------

struct StrategyCandidate {
    ControlAction action;
    bool immediate = false;  // T_trip already at or below the diagnosed T_PFCL
};

/// n_w2 x n_trip grid, w2-major. A 1 x 1 grid is the midpoint.
std::vector<StrategyCandidate> enumerate_strategies(const ActionBounds& bounds, std::size_t n_w2,
                                                    std::size_t n_trip, double diagnosed_t_pfcl);

// ---- strategy assessment ---------------------------------------------------

struct MarginRow {
    ControlAction action;
    bool immediate = false;
    double predicted = 0.0;  // predicted max T_PFCL
    double margin = 0.0;     // limit - predicted
    bool safe = false;       // margin > 0
};

struct MarginTable {
    double limit = 685.0;
    std::size_t n_w2 = 0;
    std::size_t n_trip = 0;
    std::vector<MarginRow> rows;  // w2-major

    [[nodiscard]] const MarginRow& at(std::size_t i_w2, std::size_t i_trip) const {
        return rows[i_w2 * n_trip + i_trip];
    }
};

MarginTable assess(const std::vector<StrategyCandidate>& candidates, const std::vector<double>& predictions,
                   double limit, std::size_t n_w2, std::size_t n_trip);

/// Same table against a different limit.
MarginTable with_limit(const MarginTable& table, double limit);

struct GridEdge {
    std::size_t a;  // row indices of the two neighbours
    std::size_t b;
    bool operator==(const GridEdge&) const = default;
};

struct LimitSurface {
    std::vector<GridEdge> edges;
    bool all_safe = false;
    bool all_unsafe = false;

    [[nodiscard]] bool degenerate() const { return all_safe || all_unsafe; }
};

/// Grid edges (4-neighbourhood) across which the safe label flips.
LimitSurface limit_surface(const MarginTable& table);

struct Recommendation {
    enum class Kind { Act, Scram };
    Kind kind = Kind::Scram;
    ControlAction action;
    bool immediate = false;
    std::optional<std::size_t> row;
    double margin = 0.0;
    double predicted = 0.0;
    std::string rationale;

    [[nodiscard]] bool is_scram() const { return kind == Kind::Scram; }
};

/// Argmax margin among safe rows; ties prefer higher w2_end, then lower T_trip.
/// Scram when no row is safe.
Recommendation recommend(const MarginTable& table);

inline constexpr const char* kMarginCsvHeader = "w2_end,T_trip,predicted_max_T_PFCL,margin,safe";
std::string margin_table_csv(const MarginTable& table);

// ---- twin set --------------------------------------------------------------

struct TwinSet {
    NeuralNetModel diagnosis;
    NeuralNetModel prognosis;
    ActionBounds bounds;
    double safety_limit = 685.0;
    std::size_t grid_n = 32;
};

/// Full assessment step at recommendation time: candidates on the grid,
/// prognosis for each (fanned out over the batch kernel), margins.
MarginTable assess_strategies(const TwinSet& twins, double diagnosed_t_pfcl,
                              const std::array<double, 3>& gradients);

struct TwinTrainingOptions {
    TrainHyper hyper;
    std::vector<std::size_t> hidden{20, 20, 20};
    std::size_t diagnosis_row_stride = 5;
    std::vector<double> diagnosis_windows{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::size_t validation_every = 10;  // every n-th training episode is held for validation
    std::uint64_t init_seed = 11;
};

struct TwinTraining {
    TrainResult result;
    double test_rmse = 0.0;  // on the store's test split
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
};

enum class TwinKind { Diagnosis, Prognosis };
const char* twin_name(TwinKind kind);

/// Trains one twin on the store's train split and reports test-split RMSE.
TwinTraining train_twin(TwinKind kind, const EpisodeStore& store, const TwinTrainingOptions& options,
                        double dt);

/// Dataset for one twin over the given episodes.
Dataset twin_dataset(TwinKind kind, const EpisodeStore& store, const std::vector<std::size_t>& episodes,
                     const TwinTrainingOptions& options, double dt);

}  // namespace namac
