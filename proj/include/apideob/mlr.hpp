#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "apideob/matrix.hpp"

namespace apideob {

struct MlrOptions {
  double l2 = 1e-4;  // bias column excluded
  double learning_rate = 0.1;
  std::size_t max_epochs = 2000;
  double tol = 1e-7;
  bool parallel = true;
};

struct RankedClass {
  std::size_t index = 0;
  std::string name;
  double probability = 0.0;
};

// Softmax regression over standardized features. Weights are stored
// feature-major: row d < D holds the coefficients of feature d for every
// class, row D holds the biases.
struct MlrModel {
  std::vector<std::string> classes;
  std::vector<double> mean;
  std::vector<double> stddev;
  Matrix weights;  // (D + 1) x C
  std::vector<double> loss_trace;
  std::size_t epochs = 0;

  std::size_t dim() const { return mean.size(); }
  std::size_t class_count() const { return classes.size(); }

  std::vector<double> logits(std::span<const double> x) const;
  std::vector<double> probabilities(std::span<const double> x) const;
  // Descending probability; ties keep class order.
  std::vector<RankedClass> predict(std::span<const double> x) const;

  void validate() const;
};

// Numerically stable softmax; sums to one.
std::vector<double> softmax(std::span<const double> logits);
std::vector<RankedClass> rank_classes(std::span<const double> probs,
                                      const std::vector<std::string>& classes);

struct Standardization {
  std::vector<double> mean;
  std::vector<double> stddev;  // zero-variance features get 1
};

Standardization fit_standardization(const Matrix& X);
Matrix standardize(const Matrix& X, const Standardization& s);

namespace kernels {

// Mean cross-entropy plus (l2 / 2) * ||W without bias row||^2 on
// standardized features Z. Rows are processed in 64 fixed blocks whose
// partial sums are combined in block order, so both variants agree bitwise.
double mlr_loss_grad_serial(const Matrix& Z, std::span<const std::size_t> labels,
                            const Matrix& W, double l2, Matrix* grad);
double mlr_loss_grad_parallel(const Matrix& Z, std::span<const std::size_t> labels,
                              const Matrix& W, double l2, Matrix* grad);

}  // namespace kernels

// Full-batch gradient descent from zero weights; the step is halved whenever
// it would raise the loss. Deterministic for given inputs.
MlrModel train_mlr(const Matrix& X, std::span<const std::size_t> labels,
                   std::vector<std::string> classes, const MlrOptions& opts = {});

}  // namespace apideob
