#include "namac/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace namac::kernels {

namespace {

// Activations for every layer of one row; reused across rows.
struct Workspace {
    std::vector<std::vector<double>> act;
    std::vector<double> delta, delta_prev;

    explicit Workspace(const NeuralNetModel& m) {
        act.resize(m.layer_sizes.size());
        for (std::size_t l = 0; l < m.layer_sizes.size(); ++l) act[l].resize(m.layer_sizes[l]);
        delta.resize(m.widest_layer());
        delta_prev.resize(m.widest_layer());
    }
};

void propagate(const NeuralNetModel& m, const double* x, Workspace& ws) {
    std::copy(x, x + m.n_in(), ws.act[0].begin());
    const std::size_t last = m.n_layers() - 1;
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        const auto L = m.layer(l);
        const double* in = ws.act[l].data();
        double* out = ws.act[l + 1].data();
        for (std::size_t j = 0; j < L.out; ++j) {
            const double* w = L.weights.data() + j * L.in;
            double z = L.biases[j];
            for (std::size_t i = 0; i < L.in; ++i) z += w[i] * in[i];
            out[j] = l == last ? z : std::tanh(z);
        }
    }
}

double backprop_row(const NeuralNetModel& m, const double* x, const double* y, double* grad,
                    Workspace& ws) {
    propagate(m, x, ws);
    const std::size_t n_out = m.n_out();
    const auto& yhat = ws.act.back();
    double half_sq = 0.0;
    for (std::size_t k = 0; k < n_out; ++k) {
        const double r = yhat[k] - y[k];
        half_sq += 0.5 * r * r;
        ws.delta[k] = r;
    }
    for (std::size_t l = m.n_layers(); l-- > 0;) {
        const auto L = m.layer(l);
        const double* in = ws.act[l].data();
        double* gw = grad + m.weight_offset(l);
        double* gb = grad + m.bias_offset(l);
        for (std::size_t j = 0; j < L.out; ++j) {
            const double d = ws.delta[j];
            gb[j] += d;
            double* row = gw + j * L.in;
            for (std::size_t i = 0; i < L.in; ++i) row[i] += d * in[i];
        }
        if (l == 0) break;
        // back through tanh of the previous layer
        for (std::size_t i = 0; i < L.in; ++i) ws.delta_prev[i] = 0.0;
        for (std::size_t j = 0; j < L.out; ++j) {
            const double d = ws.delta[j];
            const double* w = L.weights.data() + j * L.in;
            for (std::size_t i = 0; i < L.in; ++i) ws.delta_prev[i] += w[i] * d;
        }
        for (std::size_t i = 0; i < L.in; ++i) ws.delta[i] = ws.delta_prev[i] * (1.0 - in[i] * in[i]);
    }
    return half_sq;
}

}  // namespace

double accumulate_gradient_serial(const NeuralNetModel& model, std::span<const double> x,
                                  std::span<const double> y, std::size_t rows, std::span<double> grad) {
    Workspace ws(model);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r)
        total += backprop_row(model, x.data() + r * model.n_in(), y.data() + r * model.n_out(),
                              grad.data(), ws);
    return total;
}

double accumulate_gradient_parallel(const NeuralNetModel& model, std::span<const double> x,
                                    std::span<const double> y, std::size_t rows, std::span<double> grad) {
    const std::size_t n_params = model.params.size();
    const std::size_t blocks = (rows + kGradientBlock - 1) / kGradientBlock;
    if (blocks <= 1) return accumulate_gradient_serial(model, x, y, rows, grad);

    std::vector<double> partial(blocks * n_params, 0.0);
    std::vector<double> partial_loss(blocks, 0.0);
#pragma omp parallel
    {
        Workspace ws(model);
#pragma omp for schedule(static)
        for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(blocks); ++b) {
            const std::size_t begin = static_cast<std::size_t>(b) * kGradientBlock;
            const std::size_t end = std::min(rows, begin + kGradientBlock);
            double* g = partial.data() + static_cast<std::size_t>(b) * n_params;
            double acc = 0.0;
            for (std::size_t r = begin; r < end; ++r)
                acc += backprop_row(model, x.data() + r * model.n_in(), y.data() + r * model.n_out(), g, ws);
            partial_loss[static_cast<std::size_t>(b)] = acc;
        }
    }
    // ordered reduction
    double total = 0.0;
    for (std::size_t b = 0; b < blocks; ++b) {
        const double* g = partial.data() + b * n_params;
        for (std::size_t p = 0; p < n_params; ++p) grad[p] += g[p];
        total += partial_loss[b];
    }
    return total;
}

void forward_batch_serial(const NeuralNetModel& model, std::span<const double> x, std::size_t rows,
                          std::span<double> out) {
    Workspace ws(model);
    for (std::size_t r = 0; r < rows; ++r) {
        propagate(model, x.data() + r * model.n_in(), ws);
        std::copy(ws.act.back().begin(), ws.act.back().end(), out.begin() + static_cast<std::ptrdiff_t>(r * model.n_out()));
    }
}

void forward_batch_parallel(const NeuralNetModel& model, std::span<const double> x, std::size_t rows,
                            std::span<double> out) {
#pragma omp parallel
    {
        Workspace ws(model);
#pragma omp for schedule(static)
        for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
            const auto ur = static_cast<std::size_t>(r);
            propagate(model, x.data() + ur * model.n_in(), ws);
            std::copy(ws.act.back().begin(), ws.act.back().end(),
                      out.begin() + static_cast<std::ptrdiff_t>(ur * model.n_out()));
        }
    }
}

double sum_squared_error_parallel(const NeuralNetModel& model, std::span<const double> x,
                                  std::span<const double> y, std::size_t rows) {
    std::vector<double> pred(rows * model.n_out());
    forward_batch_parallel(model, x, rows, pred);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = pred[i] - y[i];
        s += r * r;
    }
    return s;
}

namespace {

double kde_at(std::span<const double> samples, std::size_t dims, std::span<const double> h,
              const double* point, double norm) {
    const std::size_t n = samples.size() / dims;
    double acc = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        const double* y = samples.data() + s * dims;
        double q = 0.0;
        for (std::size_t d = 0; d < dims; ++d) {
            const double u = (point[d] - y[d]) / h[d];
            q += u * u;
        }
        acc += std::exp(-0.5 * q);
    }
    return norm * acc / static_cast<double>(n);
}

double kernel_norm(std::span<const double> h) {
    double norm = 1.0;
    for (double v : h) norm /= std::sqrt(2.0 * std::numbers::pi) * v;
    return norm;
}

}  // namespace

void kde_serial(std::span<const double> samples, std::size_t dims, std::span<const double> bandwidth,
                std::span<const double> grid, std::span<double> density) {
    const double norm = kernel_norm(bandwidth);
    const std::size_t points = grid.size() / dims;
    for (std::size_t p = 0; p < points; ++p)
        density[p] = kde_at(samples, dims, bandwidth, grid.data() + p * dims, norm);
}

void kde_parallel(std::span<const double> samples, std::size_t dims, std::span<const double> bandwidth,
                  std::span<const double> grid, std::span<double> density) {
    const double norm = kernel_norm(bandwidth);
    const std::size_t points = grid.size() / dims;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(points); ++p) {
        const auto up = static_cast<std::size_t>(p);
        density[up] = kde_at(samples, dims, bandwidth, grid.data() + up * dims, norm);
    }
}

int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_thread_count(int n) {
#ifdef _OPENMP
    omp_set_num_threads(std::max(1, n));
#else
    (void)n;
#endif
}

}  // namespace namac::kernels
