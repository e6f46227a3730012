#pragma once

// Static feedforward network: tanh hidden layers, linear output, per-feature
// shift/scale normalization on both ends. Serves the diagnosis and prognosis
// twins.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace namac {

struct Normalizer {
    std::vector<double> shift;
    std::vector<double> scale;

    [[nodiscard]] bool empty() const { return shift.empty(); }
    [[nodiscard]] std::size_t size() const { return shift.size(); }

    /// Mean/standard deviation over `rows` rows of width `cols`; constant
    /// columns get scale 1.
    static Normalizer fit(std::span<const double> data, std::size_t cols);
    static Normalizer identity(std::size_t cols);

    void normalize(std::span<const double> raw, std::span<double> out) const;
    void denormalize(std::span<const double> norm, std::span<double> out) const;

    bool operator==(const Normalizer&) const = default;
};

struct LayerView {
    std::size_t in = 0, out = 0;
    std::span<const double> weights;  // out x in, row-major
    std::span<const double> biases;   // out
};

struct NeuralNetModel {
    std::vector<std::size_t> layer_sizes;  // [n_in, h_1, ..., n_out]
    std::vector<double> params;            // per layer: weights then biases
    Normalizer input_norm;
    Normalizer output_norm;

    /// Glorot-uniform weights, zero biases, identity normalization.
    static NeuralNetModel create(std::vector<std::size_t> layer_sizes, std::uint64_t seed);

    [[nodiscard]] std::size_t n_in() const { return layer_sizes.front(); }
    [[nodiscard]] std::size_t n_out() const { return layer_sizes.back(); }
    [[nodiscard]] std::size_t n_layers() const { return layer_sizes.size() - 1; }
    [[nodiscard]] std::size_t weight_offset(std::size_t layer) const;
    [[nodiscard]] std::size_t bias_offset(std::size_t layer) const;
    [[nodiscard]] LayerView layer(std::size_t i) const;
    [[nodiscard]] bool is_weight(std::size_t param_index) const;
    [[nodiscard]] std::size_t widest_layer() const;

    /// Throws ShapeMismatch when params or normalizers disagree with the sizes.
    void validate() const;

    bool operator==(const NeuralNetModel&) const = default;
};

std::size_t parameter_count(const std::vector<std::size_t>& layer_sizes);

/// Network output in normalized units for a normalized input.
void forward_normalized(const NeuralNetModel& model, std::span<const double> x, std::span<double> out);

/// Raw-unit prediction: normalize, propagate, denormalize.
std::vector<double> forward(const NeuralNetModel& model, std::span<const double> x);

/// L_D = (1/2N) sum (y - yhat)^2.
double loss(std::span<const double> preds, std::span<const double> targets);

/// Sum of squared weights; biases are excluded.
double weight_penalty(const NeuralNetModel& model);

/// L_F = beta * L_D + alpha * L_W.
double regularized_loss(double data_loss, const NeuralNetModel& model, double alpha, double beta);

double rmse(std::span<const double> preds, std::span<const double> obs);

/// Rows of normalized inputs/targets.
struct Batch {
    std::span<const double> x;
    std::span<const double> y;
    std::size_t rows = 0;
};

/// Exact gradient of L_F over the batch with respect to every parameter.
std::vector<double> gradient(const NeuralNetModel& model, const Batch& batch, double alpha, double beta);

/// L_F over the batch (normalized units), matching gradient().
double batch_objective(const NeuralNetModel& model, const Batch& batch, double alpha, double beta);

/// Raw-unit supervised data, row-major.
struct Dataset {
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    std::vector<double> x;
    std::vector<double> y;

    [[nodiscard]] std::size_t rows() const { return n_in ? x.size() / n_in : 0; }
    void append(std::span<const double> xr, std::span<const double> yr);
    void append(const Dataset& other);
};

struct TrainHyper {
    std::size_t max_epochs = 1000000;  // cap; training normally stops on target_mse
    double target_mse = 1e-2;          // normalized output units
    double alpha = 1e-7;
    double beta = 1.0;
    double learning_rate = 2e-3;
    double lr_decay = 0.5;
    std::size_t patience = 25;         // epochs without best-loss improvement before decay
    double min_learning_rate = 1e-5;
    std::size_t batch_size = 128;
    std::uint64_t seed = 7;
    std::size_t history_stride = 1;

    void validate() const;
};

struct TrainReport {
    double final_data_loss = 0.0;   // L_D, normalized units
    double final_objective = 0.0;   // L_F
    double train_mse = 0.0;         // normalized units
    std::size_t epochs = 0;
    bool reached_target = false;
    double rmse_train = 0.0;        // output units
    double rmse_validation = 0.0;
    std::vector<double> history;    // train MSE per recorded epoch
    std::vector<double> best_history;
};

struct TrainResult {
    NeuralNetModel model;
    TrainReport report;
};

/// Adam on L_F with plateau decay. Normalizers are fit on `train` when the
/// model has none. Stops at the first epoch whose training MSE reaches the
/// target, or at the cap (returning the best-validation snapshot).
TrainResult train(NeuralNetModel model, const Dataset& train, const Dataset& validation,
                  const TrainHyper& hyper);

/// Raw-unit predictions for every row.
std::vector<double> predict(const NeuralNetModel& model, const Dataset& data);

void save_model(std::ostream& out, const NeuralNetModel& model);
NeuralNetModel load_model(std::istream& in);
void save_model_file(const std::string& path, const NeuralNetModel& model);
NeuralNetModel load_model_file(const std::string& path);

}  // namespace namac
