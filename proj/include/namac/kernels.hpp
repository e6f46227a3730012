#pragma once

// Data-parallel inner loops. Each kernel has an OpenMP version used by the
// library and a plain serial reference kept for tests and benchmarks. The
// parallel reductions use a fixed block decomposition, so results do not
// depend on the thread count.

#include <cstddef>
#include <span>
#include <vector>

#include "namac/neural.hpp"

namespace namac::kernels {

inline constexpr std::size_t kGradientBlock = 64;

/// Accumulates d/dparams of sum_rows 0.5*|y - net(x)|^2 into `grad`
/// (which must be zeroed by the caller) and returns that sum.
double accumulate_gradient_serial(const NeuralNetModel& model, std::span<const double> x,
                                  std::span<const double> y, std::size_t rows, std::span<double> grad);
double accumulate_gradient_parallel(const NeuralNetModel& model, std::span<const double> x,
                                    std::span<const double> y, std::size_t rows, std::span<double> grad);

/// Normalized-space forward pass over many rows.
void forward_batch_serial(const NeuralNetModel& model, std::span<const double> x, std::size_t rows,
                          std::span<double> out);
void forward_batch_parallel(const NeuralNetModel& model, std::span<const double> x, std::size_t rows,
                            std::span<double> out);

/// Sum of squared residuals of the normalized network against normalized targets.
double sum_squared_error_parallel(const NeuralNetModel& model, std::span<const double> x,
                                  std::span<const double> y, std::size_t rows);

/// Gaussian product-kernel density with diagonal bandwidth at each grid point.
void kde_serial(std::span<const double> samples, std::size_t dims, std::span<const double> bandwidth,
                std::span<const double> grid, std::span<double> density);
void kde_parallel(std::span<const double> samples, std::size_t dims, std::span<const double> bandwidth,
                  std::span<const double> grid, std::span<double> density);

/// Number of OpenMP threads in use (1 without OpenMP).
int thread_count();
void set_thread_count(int n);

}  // namespace namac::kernels
