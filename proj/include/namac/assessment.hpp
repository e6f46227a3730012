#pragma once

// Uncertainty assessment of the twins and of the coupled system: confusion
// matrices, database coverage through KDE and symmetric KL divergence,
// correlation, target-loss sweeps, sensor-failure traces and error surfaces.

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "namac/neural.hpp"
#include "namac/plant.hpp"
#include "namac/scenario.hpp"
#include "namac/twins.hpp"
#include "namac/workflow.hpp"

namespace namac {

// ---- confusion -------------------------------------------------------------

/// Positive = safe (peak below the limit).
enum class Cell { TP, FP, FN, TN };
const char* cell_name(Cell c);

Cell classify_case(double true_max, double predicted_max, double limit);

struct ConfusionMatrix {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

    [[nodiscard]] std::size_t total() const { return tp + fp + fn + tn; }
    // empty when the denominator is zero
    [[nodiscard]] std::optional<double> tpr() const;
    [[nodiscard]] std::optional<double> fpr() const;
    [[nodiscard]] std::optional<double> fnr() const;
    [[nodiscard]] std::optional<double> tnr() const;
};

ConfusionMatrix confusion_matrix(const std::vector<Cell>& cases);

/// "90%" style, or "undefined".
std::string format_rate(const std::optional<double>& rate);

// ---- densities -------------------------------------------------------------

/// Regular grid over a box; points are row-major with the last axis fastest.
struct DensityGrid {
    std::size_t dims = 0;
    std::vector<std::vector<double>> axes;

    [[nodiscard]] std::size_t points() const;
    [[nodiscard]] double cell_volume() const;
    [[nodiscard]] std::vector<double> coordinates() const;
};

DensityGrid make_grid(const std::vector<double>& lo, const std::vector<double>& hi, std::size_t n_per_axis);

/// Gaussian product kernel with diagonal bandwidth; PDF(x) = (1/n) sum K_H(x - y_i).
std::vector<double> kde(const std::vector<double>& samples, std::size_t dims, const std::vector<double>& bandwidth,
                        const DensityGrid& grid);

/// Scott's rule: sigma_d * n^(-1/(d+4)).
std::vector<double> scott_bandwidth(const std::vector<double>& samples, std::size_t dims);

/// Rescales so that sum(density) * cell_volume == 1.
std::vector<double> normalize_density(std::vector<double> density, double cell_volume);

/// Cell probabilities P(i) summing to 1.
std::vector<double> cell_probabilities(const std::vector<double>& density);

inline constexpr double kKlFloor = 1e-12;

/// sum P log(P/D) + D log(D/P), cells floored at kKlFloor.
double sym_kl(const std::vector<double>& p, const std::vector<double>& d);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

// ---- coverage --------------------------------------------------------------

struct CoverageOptions {
    std::size_t grid_n = 16;
    std::size_t max_samples = 5000;
    std::size_t row_stride = 5;
    double padding = 3.0;  // grid extends this many bandwidths past the data
};

struct CoverageEntry {
    std::string name;
    double sym_kl = 0.0;
    double rmse = 0.0;
    std::size_t rows = 0;
};

struct CoverageReport {
    std::vector<double> bandwidth;  // normalized input units
    std::size_t grid_n = 0;
    double train_rmse = 0.0;
    std::vector<CoverageEntry> entries;
    std::optional<double> rho;      // Pearson(sym_kl, rmse) across entries
    double sigma_kl = 0.0;
    double sigma_rmse = 0.0;
};

struct NamedStore {
    std::string name;
    EpisodeStore store;
};

/// Coverage of each test store against a trained diagnosis twin's training
/// data: symmetric KL between KDE densities of the normalized twin inputs,
/// and the twin's RMSE on every test store.
CoverageReport coverage_report(const NeuralNetModel& diagnosis, const EpisodeStore& train,
                               const std::vector<NamedStore>& tests, const CoverageOptions& options);

/// Trains a diagnosis twin on every episode of `train`, then coverage_report.
CoverageReport coverage_study(const EpisodeStore& train, const std::vector<NamedStore>& tests,
                              const TwinTrainingOptions& training, const CoverageOptions& options);

/// Every episode of the store as one diagnosis dataset.
Dataset all_diagnosis_rows(const EpisodeStore& store, std::size_t row_stride);

std::string coverage_csv(const CoverageReport& report);

// ---- target loss sweep -----------------------------------------------------

enum class CoverageTag { Interpolated, Extrapolated };
const char* coverage_tag_name(CoverageTag t);

struct SweepRow {
    double target = 0.0;
    double train_rmse = 0.0;
    double test_rmse = 0.0;
    CoverageTag tag = CoverageTag::Interpolated;
    std::size_t epochs = 0;
    bool reached_target = false;
};

struct SweepResult {
    std::vector<SweepRow> rows;
};

struct SweepCase {
    CoverageTag tag;
    EpisodeStore train;
    EpisodeStore test;
};

/// One diagnosis twin per (target, case); targets must lie in [1e-3, 10].
SweepResult target_loss_sweep(const std::vector<double>& targets, const std::vector<SweepCase>& cases,
                              const TwinTrainingOptions& training);

std::string sweep_csv(const SweepResult& result);

/// Loss-of-flow families for the coverage and sweep studies. The extrapolated
/// pair trains on fast mild ramps (w1_end 0.516..0.903 over 21.02 s) and tests
/// a near-total loss of pump 1; the interpolated pair trains on 50 s ramps
/// (w1_end 0.097..0.581) and tests w1_end 0.387 off the training lattice.
struct CoverageBenchmark {
    EpisodeStore train_extrapolated;
    EpisodeStore test_extrapolated;
    EpisodeStore train_interpolated;
    EpisodeStore test_interpolated;
};

CoverageBenchmark build_coverage_benchmark(const PlantConfig& config, std::size_t grid_n = 4,
                                           std::size_t test_actions = 8, std::uint64_t seed = 99);

// ---- sensor failures and error surface ---------------------------------------

struct FailureSpec {
    std::string name;
    std::set<Channel> channels;
};

struct FailureTrace {
    std::string name;
    bool scram_path = false;        // every channel failed: no diagnosis possible
    std::vector<double> t;          // time since accident start
    std::vector<double> rmse;       // across episodes, per row
    std::optional<double> onset;    // first time the error exceeds the threshold
};

/// Diagnosis error traces with the listed channels failing from
/// `failure_start` seconds after the accident.
std::vector<FailureTrace> sensor_failure_study(const NeuralNetModel& diagnosis, const EpisodeStore& store,
                                               const std::vector<FailureSpec>& specs, double failure_start = 5.0,
                                               double onset_threshold = 1.5);

using RowPredictor = std::function<double(const EpisodeRow&)>;

struct ErrorSurface {
    std::size_t episodes = 0;
    std::size_t rows = 0;
    std::vector<double> error;        // episodes x rows, signed (prediction - truth)
    std::vector<double> episode_rmse;
    double max_rmse = 0.0;
    double max_abs_error = 0.0;
};

ErrorSurface error_surface(const RowPredictor& predictor, const EpisodeStore& store);
ErrorSurface error_surface(const NeuralNetModel& diagnosis, const EpisodeStore& store);

// ---- NAMAC confusion runs ----------------------------------------------------

struct FamilyCase {
    ScenarioSpec scenario;
    double t_d = 10.0;
};

struct FamilyResult {
    std::string name;
    std::vector<FamilyCase> cases;
    std::vector<double> true_max;
    std::vector<double> predicted_max;
    std::vector<Cell> cells;
    std::vector<bool> checker_scram;  // rerun with the discrepancy checker on
    std::vector<std::string> transcript_hashes;
    ConfusionMatrix matrix;
};

/// Scenario families of the confusion study: A severe (1 < m < 10),
/// B in-domain rate (m = 1, other end speeds), C mild (0.1 < m < 1).
std::vector<FamilyCase> confusion_family(char family, std::size_t runs, double nominal_pump_speed,
                                         double accident_time);

struct CaseClassification {
    double true_max = 0.0;
    double predicted_max = 0.0;
    Cell cell = Cell::TP;
};

/// Recommended row's predicted peak against the run's true peak.
CaseClassification classify_transcript(const TranscriptLog& log, double limit);

/// Classification runs use auto-accept with the checker off; the recommended
/// row's predicted peak is compared with the true peak of the run. With
/// `with_checker` each case is rerun with the checker on.
FamilyResult evaluate_family(const std::string& name, const std::vector<FamilyCase>& cases,
                             const PlantConfig& config, const TwinSet& twins, const RunOptions& base,
                             bool with_checker);

std::string confusion_csv(const std::vector<FamilyResult>& families);

}  // namespace namac
