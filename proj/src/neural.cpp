#include "namac/neural.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "namac/errors.hpp"
#include "namac/kernels.hpp"
#include "namac/util.hpp"

namespace namac {

Normalizer Normalizer::fit(std::span<const double> data, std::size_t cols) {
    Normalizer n;
    n.shift.assign(cols, 0.0);
    n.scale.assign(cols, 1.0);
    const std::size_t rows = cols ? data.size() / cols : 0;
    if (rows == 0) return n;
    for (std::size_t c = 0; c < cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < rows; ++r) mean += data[r * cols + c];
        mean /= static_cast<double>(rows);
        double var = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            const double d = data[r * cols + c] - mean;
            var += d * d;
        }
        var /= static_cast<double>(rows);
        n.shift[c] = mean;
        n.scale[c] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return n;
}

Normalizer Normalizer::identity(std::size_t cols) {
    return Normalizer{std::vector<double>(cols, 0.0), std::vector<double>(cols, 1.0)};
}

void Normalizer::normalize(std::span<const double> raw, std::span<double> out) const {
    const std::size_t cols = size();
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - shift[i % cols]) / scale[i % cols];
}

void Normalizer::denormalize(std::span<const double> norm, std::span<double> out) const {
    const std::size_t cols = size();
    for (std::size_t i = 0; i < norm.size(); ++i) out[i] = norm[i] * scale[i % cols] + shift[i % cols];
}

std::size_t parameter_count(const std::vector<std::size_t>& sizes) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += sizes[l] * sizes[l + 1] + sizes[l + 1];
    return n;
}

NeuralNetModel NeuralNetModel::create(std::vector<std::size_t> sizes, std::uint64_t seed) {
    if (sizes.size() < 2 || std::find(sizes.begin(), sizes.end(), 0u) != sizes.end())
        throw ShapeMismatch("network needs at least input and output layers of positive width");
    NeuralNetModel m;
    m.layer_sizes = std::move(sizes);
    m.params.assign(parameter_count(m.layer_sizes), 0.0);
    m.input_norm = Normalizer::identity(m.n_in());
    m.output_norm = Normalizer::identity(m.n_out());
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        const double fan_in = static_cast<double>(m.layer_sizes[l]);
        const double fan_out = static_cast<double>(m.layer_sizes[l + 1]);
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        const std::size_t off = m.weight_offset(l);
        const std::size_t count = m.layer_sizes[l] * m.layer_sizes[l + 1];
        for (std::size_t i = 0; i < count; ++i) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            m.params[off + i] = (2.0 * u - 1.0) * limit;
        }
    }
    return m;
}

std::size_t NeuralNetModel::weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
    return off;
}

std::size_t NeuralNetModel::bias_offset(std::size_t layer) const {
    return weight_offset(layer) + layer_sizes[layer] * layer_sizes[layer + 1];
}

LayerView NeuralNetModel::layer(std::size_t i) const {
    const std::size_t in = layer_sizes[i], out = layer_sizes[i + 1];
    const std::span<const double> all(params);
    return {in, out, all.subspan(weight_offset(i), in * out), all.subspan(bias_offset(i), out)};
}

bool NeuralNetModel::is_weight(std::size_t p) const {
    for (std::size_t l = 0; l < n_layers(); ++l) {
        const std::size_t w = weight_offset(l), b = bias_offset(l);
        if (p >= w && p < b) return true;
        if (p >= b && p < b + layer_sizes[l + 1]) return false;
    }
    return false;
}

std::size_t NeuralNetModel::widest_layer() const {
    return *std::max_element(layer_sizes.begin(), layer_sizes.end());
}

void NeuralNetModel::validate() const {
    if (layer_sizes.size() < 2) throw ShapeMismatch("network needs at least two layers");
    if (params.size() != parameter_count(layer_sizes)) throw ShapeMismatch("parameter count mismatch");
    if (input_norm.size() != n_in() || input_norm.scale.size() != n_in())
        throw ShapeMismatch("input normalizer width mismatch");
    if (output_norm.size() != n_out() || output_norm.scale.size() != n_out())
        throw ShapeMismatch("output normalizer width mismatch");
    for (double s : input_norm.scale)
        if (!(s > 0.0)) throw ShapeMismatch("normalization scales must be > 0");
    for (double s : output_norm.scale)
        if (!(s > 0.0)) throw ShapeMismatch("normalization scales must be > 0");
}

void forward_normalized(const NeuralNetModel& model, std::span<const double> x, std::span<double> out) {
    if (x.size() != model.n_in()) throw ShapeMismatch("input width " + std::to_string(x.size()) +
                                                      " != " + std::to_string(model.n_in()));
    if (out.size() != model.n_out()) throw ShapeMismatch("output width mismatch");
    kernels::forward_batch_serial(model, x, 1, out);
}

std::vector<double> forward(const NeuralNetModel& model, std::span<const double> x) {
    if (x.size() != model.n_in()) throw ShapeMismatch("input width " + std::to_string(x.size()) +
                                                      " != " + std::to_string(model.n_in()));
    std::vector<double> xn(x.size()), yn(model.n_out()), y(model.n_out());
    model.input_norm.normalize(x, xn);
    kernels::forward_batch_serial(model, xn, 1, yn);
    model.output_norm.denormalize(yn, y);
    return y;
}

double loss(std::span<const double> preds, std::span<const double> targets) {
    if (preds.size() != targets.size() || preds.empty()) throw LengthMismatch("loss needs equal, non-empty lengths");
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double r = targets[i] - preds[i];
        s += r * r;
    }
    return s / (2.0 * static_cast<double>(preds.size()));
}

double weight_penalty(const NeuralNetModel& model) {
    double s = 0.0;
    for (std::size_t l = 0; l < model.n_layers(); ++l)
        for (double w : model.layer(l).weights) s += w * w;
    return s;
}

double regularized_loss(double data_loss, const NeuralNetModel& model, double alpha, double beta) {
    return beta * data_loss + alpha * weight_penalty(model);
}

double rmse(std::span<const double> preds, std::span<const double> obs) {
    if (preds.size() != obs.size() || preds.empty()) throw LengthMismatch("rmse needs equal, non-empty lengths");
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double r = preds[i] - obs[i];
        s += r * r;
    }
    return std::sqrt(s / static_cast<double>(preds.size()));
}

namespace {

void check_batch(const NeuralNetModel& model, const Batch& b) {
    if (b.rows == 0) throw ShapeMismatch("empty batch");
    if (b.x.size() != b.rows * model.n_in() || b.y.size() != b.rows * model.n_out())
        throw ShapeMismatch("batch shape does not match the network");
}

// grad <- beta/N * grad_data + 2 alpha w
void finish_gradient(const NeuralNetModel& model, std::vector<double>& grad, std::size_t n_targets,
                     double alpha, double beta) {
    const double scale = beta / static_cast<double>(n_targets);
    for (auto& g : grad) g *= scale;
    if (alpha != 0.0) {
        for (std::size_t l = 0; l < model.n_layers(); ++l) {
            const std::size_t off = model.weight_offset(l);
            const std::size_t count = model.layer_sizes[l] * model.layer_sizes[l + 1];
            for (std::size_t i = 0; i < count; ++i) grad[off + i] += 2.0 * alpha * model.params[off + i];
        }
    }
}

}  // namespace

std::vector<double> gradient(const NeuralNetModel& model, const Batch& batch, double alpha, double beta) {
    check_batch(model, batch);
    std::vector<double> grad(model.params.size(), 0.0);
    kernels::accumulate_gradient_parallel(model, batch.x, batch.y, batch.rows, grad);
    finish_gradient(model, grad, batch.rows * model.n_out(), alpha, beta);
    return grad;
}

double batch_objective(const NeuralNetModel& model, const Batch& batch, double alpha, double beta) {
    check_batch(model, batch);
    std::vector<double> pred(batch.rows * model.n_out());
    kernels::forward_batch_serial(model, batch.x, batch.rows, pred);
    return regularized_loss(loss(pred, batch.y), model, alpha, beta);
}

void Dataset::append(std::span<const double> xr, std::span<const double> yr) {
    if (xr.size() != n_in || yr.size() != n_out) throw ShapeMismatch("dataset row width mismatch");
    x.insert(x.end(), xr.begin(), xr.end());
    y.insert(y.end(), yr.begin(), yr.end());
}

void Dataset::append(const Dataset& other) {
    if (other.n_in != n_in || other.n_out != n_out) throw ShapeMismatch("dataset width mismatch");
    x.insert(x.end(), other.x.begin(), other.x.end());
    y.insert(y.end(), other.y.begin(), other.y.end());
}

void TrainHyper::validate() const {
    if (!(alpha >= 0.0)) throw InvalidConfig("alpha must be >= 0");
    if (!(beta > 0.0)) throw InvalidConfig("beta must be > 0");
    if (!(target_mse > 0.0)) throw InvalidConfig("target_mse must be > 0");
    if (!(learning_rate > 0.0) || batch_size == 0) throw InvalidConfig("bad optimizer settings");
}

std::vector<double> predict(const NeuralNetModel& model, const Dataset& data) {
    const std::size_t rows = data.rows();
    std::vector<double> xn(data.x.size()), yn(rows * model.n_out()), y(rows * model.n_out());
    model.input_norm.normalize(data.x, xn);
    kernels::forward_batch_parallel(model, xn, rows, yn);
    model.output_norm.denormalize(yn, y);
    return y;
}

namespace {

struct Normalized {
    std::vector<double> x, y;
    std::size_t rows = 0;
};

Normalized normalize_dataset(const NeuralNetModel& m, const Dataset& d) {
    Normalized n;
    n.rows = d.rows();
    n.x.resize(d.x.size());
    n.y.resize(d.y.size());
    m.input_norm.normalize(d.x, n.x);
    m.output_norm.normalize(d.y, n.y);
    return n;
}

double mse_of(const NeuralNetModel& m, const Normalized& n) {
    if (n.rows == 0) return 0.0;
    return kernels::sum_squared_error_parallel(m, n.x, n.y, n.rows) /
           static_cast<double>(n.rows * m.n_out());
}

}  // namespace

TrainResult train(NeuralNetModel model, const Dataset& train_set, const Dataset& validation,
                  const TrainHyper& hyper) {
    hyper.validate();
    if (train_set.rows() == 0) throw ShapeMismatch("empty training set");
    if (train_set.n_in != model.n_in() || train_set.n_out != model.n_out())
        throw ShapeMismatch("dataset widths do not match the network");
    const bool identity_norm = model.input_norm.empty() ||
                               (model.input_norm == Normalizer::identity(model.n_in()) &&
                                model.output_norm == Normalizer::identity(model.n_out()));
    if (identity_norm) {
        model.input_norm = Normalizer::fit(train_set.x, model.n_in());
        model.output_norm = Normalizer::fit(train_set.y, model.n_out());
    }
    model.validate();

    const Normalized tr = normalize_dataset(model, train_set);
    const Normalized va = normalize_dataset(model, validation);
    const std::size_t n_in = model.n_in(), n_out = model.n_out();
    const std::size_t n_params = model.params.size();

    TrainReport report;
    std::vector<double> m1(n_params, 0.0), m2(n_params, 0.0);
    std::vector<double> bx(hyper.batch_size * n_in), by(hyper.batch_size * n_out), grad(n_params);
    std::vector<std::size_t> order(tr.rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(hyper.seed);
    double lr = hyper.learning_rate;
    std::size_t adam_t = 0;

    double train_mse = mse_of(model, tr);
    double val_mse = va.rows ? mse_of(model, va) : train_mse;
    NeuralNetModel best = model;
    double best_val = val_mse;
    double best_train = train_mse;
    std::size_t since_improve = 0;
    report.history.push_back(train_mse);
    report.best_history.push_back(best_train);

    std::size_t epoch = 0;
    bool reached = train_mse <= hyper.target_mse;
    while (!reached && epoch < hyper.max_epochs) {
        ++epoch;
        for (std::size_t i = tr.rows; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        for (std::size_t start = 0; start < tr.rows; start += hyper.batch_size) {
            const std::size_t rows = std::min(hyper.batch_size, tr.rows - start);
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t src = order[start + r];
                std::copy_n(tr.x.begin() + static_cast<std::ptrdiff_t>(src * n_in), n_in,
                            bx.begin() + static_cast<std::ptrdiff_t>(r * n_in));
                std::copy_n(tr.y.begin() + static_cast<std::ptrdiff_t>(src * n_out), n_out,
                            by.begin() + static_cast<std::ptrdiff_t>(r * n_out));
            }
            std::fill(grad.begin(), grad.end(), 0.0);
            kernels::accumulate_gradient_parallel(model, std::span(bx).first(rows * n_in),
                                                  std::span(by).first(rows * n_out), rows, grad);
            finish_gradient(model, grad, rows * n_out, hyper.alpha, hyper.beta);

            ++adam_t;
            constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_t));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_t));
            for (std::size_t p = 0; p < n_params; ++p) {
                m1[p] = b1 * m1[p] + (1.0 - b1) * grad[p];
                m2[p] = b2 * m2[p] + (1.0 - b2) * grad[p] * grad[p];
                model.params[p] -= lr * (m1[p] / c1) / (std::sqrt(m2[p] / c2) + eps);
            }
        }

        train_mse = mse_of(model, tr);
        if (!std::isfinite(train_mse)) throw Divergence("training loss became non-finite at epoch " + std::to_string(epoch));
        val_mse = va.rows ? mse_of(model, va) : train_mse;
        reached = train_mse <= hyper.target_mse;

        if (val_mse < best_val || reached) {
            best_val = val_mse;
            best = model;
        }
        if (train_mse < best_train) {
            best_train = train_mse;
            since_improve = 0;
        } else if (++since_improve >= hyper.patience) {
            lr = std::max(hyper.min_learning_rate, lr * hyper.lr_decay);
            since_improve = 0;
        }
        if (epoch % std::max<std::size_t>(1, hyper.history_stride) == 0 || reached) {
            report.history.push_back(train_mse);
            report.best_history.push_back(best_train);
        }
    }

    // Target reached: the final model is the snapshot. Otherwise best validation.
    NeuralNetModel out = reached ? model : best;
    report.epochs = epoch;
    report.reached_target = reached;
    report.train_mse = mse_of(out, tr);
    report.final_data_loss = 0.5 * report.train_mse;
    report.final_objective = regularized_loss(report.final_data_loss, out, hyper.alpha, hyper.beta);
    {
        const auto p = predict(out, train_set);
        report.rmse_train = rmse(p, train_set.y);
    }
    report.rmse_validation = validation.rows() ? rmse(predict(out, validation), validation.y) : report.rmse_train;
    return {std::move(out), std::move(report)};
}

void save_model(std::ostream& out, const NeuralNetModel& m) {
    m.validate();
    auto line = [&out](const char* tag, std::span<const double> v) {
        out << tag;
        for (double x : v) out << ' ' << format_sig(x, 17);
        out << '\n';
    };
    out << "namac-nn v1\n";
    out << "layers " << m.layer_sizes.size();
    for (auto s : m.layer_sizes) out << ' ' << s;
    out << "\nactivation tanh linear\n";
    line("input_shift", m.input_norm.shift);
    line("input_scale", m.input_norm.scale);
    line("output_shift", m.output_norm.shift);
    line("output_scale", m.output_norm.scale);
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        const auto L = m.layer(l);
        out << "layer " << l << ' ' << L.out << ' ' << L.in << '\n';
        for (std::size_t j = 0; j < L.out; ++j) line("w", L.weights.subspan(j * L.in, L.in));
        line("b", L.biases);
    }
    out << "end\n";
}

namespace {

std::vector<double> read_values(std::istream& in, const std::string& tag, std::size_t expected) {
    std::string line;
    if (!std::getline(in, line)) throw ModelFormatError("unexpected end of model before " + tag);
    std::istringstream ls(line);
    std::string got;
    ls >> got;
    if (got != tag) throw ModelFormatError("expected '" + tag + "', found '" + got + "'");
    std::vector<double> v;
    std::string tok;
    while (ls >> tok) {
        char* end = nullptr;
        v.push_back(std::strtod(tok.c_str(), &end));
        if (*end != '\0') throw ModelFormatError("bad number '" + tok + "'");
    }
    if (v.size() != expected) throw ModelFormatError(tag + ": expected " + std::to_string(expected) + " values");
    return v;
}

}  // namespace

NeuralNetModel load_model(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "namac-nn v1") throw ModelFormatError("not a namac-nn v1 model");
    if (!std::getline(in, line)) throw ModelFormatError("missing layers line");
    std::istringstream ls(line);
    std::string tag;
    std::size_t count = 0;
    ls >> tag >> count;
    if (tag != "layers" || count < 2) throw ModelFormatError("bad layers line");
    NeuralNetModel m;
    m.layer_sizes.resize(count);
    for (auto& s : m.layer_sizes)
        if (!(ls >> s) || s == 0) throw ModelFormatError("bad layer size");
    if (!std::getline(in, line) || line != "activation tanh linear") throw ModelFormatError("unsupported activation");
    m.input_norm.shift = read_values(in, "input_shift", m.n_in());
    m.input_norm.scale = read_values(in, "input_scale", m.n_in());
    m.output_norm.shift = read_values(in, "output_shift", m.n_out());
    m.output_norm.scale = read_values(in, "output_scale", m.n_out());
    m.params.reserve(parameter_count(m.layer_sizes));
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        if (!std::getline(in, line)) throw ModelFormatError("missing layer header");
        std::istringstream hs(line);
        std::size_t idx = 0, out = 0, inw = 0;
        hs >> tag >> idx >> out >> inw;
        if (tag != "layer" || idx != l || out != m.layer_sizes[l + 1] || inw != m.layer_sizes[l])
            throw ModelFormatError("layer header mismatch");
        for (std::size_t j = 0; j < out; ++j) {
            auto w = read_values(in, "w", inw);
            m.params.insert(m.params.end(), w.begin(), w.end());
        }
        auto b = read_values(in, "b", out);
        m.params.insert(m.params.end(), b.begin(), b.end());
    }
    if (!std::getline(in, line) || line != "end") throw ModelFormatError("missing end marker");
    try {
        m.validate();
    } catch (const ShapeMismatch& e) {
        throw ModelFormatError(e.what());
    }
    return m;
}

void save_model_file(const std::string& path, const NeuralNetModel& model) {
    std::ofstream out(path);
    if (!out) throw ModelFormatError("cannot write " + path);
    save_model(out, model);
}

NeuralNetModel load_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ModelFormatError("cannot open " + path);
    return load_model(in);
}

}  // namespace namac
