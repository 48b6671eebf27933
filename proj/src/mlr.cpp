#include "apideob/mlr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "apideob/listing.hpp"

namespace apideob {

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double s = 0.0;
  for (auto& v : p) s += (v = std::exp(v - m));
  for (auto& v : p) v /= s;
  return p;
}

std::vector<RankedClass> rank_classes(std::span<const double> probs,
                                      const std::vector<std::string>& classes) {
  std::vector<RankedClass> out;
  out.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i)
    out.push_back({i, i < classes.size() ? classes[i] : std::to_string(i), probs[i]});
  std::stable_sort(out.begin(), out.end(), [](const RankedClass& a, const RankedClass& b) {
    return a.probability > b.probability;
  });
  return out;
}

std::vector<double> MlrModel::logits(std::span<const double> x) const {
  const auto D = dim();
  const auto C = class_count();
  if (x.size() != D)
    throw std::invalid_argument("mlr: feature dimension " + std::to_string(x.size()) +
                                " != " + std::to_string(D));
  std::vector<double> out(weights.row(D).begin(), weights.row(D).end());
  for (std::size_t d = 0; d < D; ++d) {
    const double z = (x[d] - mean[d]) / stddev[d];
    const auto w = weights.row(d);
    for (std::size_t c = 0; c < C; ++c) out[c] += z * w[c];
  }
  return out;
}

std::vector<double> MlrModel::probabilities(std::span<const double> x) const {
  return softmax(logits(x));
}

std::vector<RankedClass> MlrModel::predict(std::span<const double> x) const {
  return rank_classes(probabilities(x), classes);
}

void MlrModel::validate() const {
  const auto D = dim();
  if (classes.empty()) throw ValidationError("mlr: no classes");
  if (stddev.size() != D || weights.rows() != D + 1 || weights.cols() != classes.size())
    throw ValidationError("mlr: dimension mismatch");
  for (double s : stddev)
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("mlr: stddev must be positive");
  for (double m : mean)
    if (!std::isfinite(m)) throw ValidationError("mlr: non-finite mean");
  for (double w : weights.data())
    if (!std::isfinite(w)) throw ValidationError("mlr: non-finite weight");
}

Standardization fit_standardization(const Matrix& X) {
  const auto N = X.rows();
  const auto D = X.cols();
  Standardization s{std::vector<double>(D, 0.0), std::vector<double>(D, 0.0)};
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < D; ++d) s.mean[d] += X(i, d);
  for (auto& m : s.mean) m /= static_cast<double>(std::max<std::size_t>(N, 1));
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < D; ++d) {
      const double e = X(i, d) - s.mean[d];
      s.stddev[d] += e * e;
    }
  for (auto& v : s.stddev) {
    v = std::sqrt(v / static_cast<double>(std::max<std::size_t>(N, 1)));
    if (!(v > 1e-12)) v = 1.0;
  }
  return s;
}

Matrix standardize(const Matrix& X, const Standardization& s) {
  Matrix Z(X.rows(), X.cols());
  for (std::size_t i = 0; i < X.rows(); ++i)
    for (std::size_t d = 0; d < X.cols(); ++d) Z(i, d) = (X(i, d) - s.mean[d]) / s.stddev[d];
  return Z;
}

namespace kernels {

namespace {

constexpr std::size_t kBlocks = 64;

constexpr std::size_t kRowTile = 4;

// Rows are handled in tiles of kRowTile so each weight row is loaded once per
// tile; every accumulation still runs in row order.
double block_loss_grad(const Matrix& Z, std::span<const std::size_t> labels, const Matrix& W,
                       std::size_t lo, std::size_t hi, Matrix* grad) {
  const auto D = Z.cols();
  const auto C = W.cols();
  std::vector<double> zbuf(kRowTile * C);
  double loss = 0.0;
  for (std::size_t i0 = lo; i0 < hi; i0 += kRowTile) {
    const auto rows = std::min(kRowTile, hi - i0);
    const double* x[kRowTile];
    double* z[kRowTile];
    for (std::size_t t = 0; t < kRowTile; ++t) {
      x[t] = Z.row(i0 + std::min(t, rows - 1)).data();
      z[t] = zbuf.data() + t * C;
      const auto bias = W.row(D);
      std::copy(bias.begin(), bias.end(), z[t]);
    }
    for (std::size_t d = 0; d < D; ++d) {
      const double* w = W.row(d).data();
      const double x0 = x[0][d], x1 = x[1][d], x2 = x[2][d], x3 = x[3][d];
      for (std::size_t c = 0; c < C; ++c) {
        z[0][c] += x0 * w[c];
        z[1][c] += x1 * w[c];
        z[2][c] += x2 * w[c];
        z[3][c] += x3 * w[c];
      }
    }
    for (std::size_t t = 0; t < rows; ++t) {
      double* zt = z[t];
      const double m = *std::max_element(zt, zt + C);
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += std::exp(zt[c] - m);
      const double lse = m + std::log(s);
      const auto y = labels[i0 + t];
      loss += lse - zt[y];
      for (std::size_t c = 0; c < C; ++c) zt[c] = std::exp(zt[c] - lse);
      zt[y] -= 1.0;
    }
    if (!grad) continue;
    for (std::size_t t = rows; t < kRowTile; ++t) std::fill(z[t], z[t] + C, 0.0);
    for (std::size_t d = 0; d < D; ++d) {
      double* g = grad->row(d).data();
      const double x0 = x[0][d], x1 = rows > 1 ? x[1][d] : 0.0, x2 = rows > 2 ? x[2][d] : 0.0,
                   x3 = rows > 3 ? x[3][d] : 0.0;
      for (std::size_t c = 0; c < C; ++c)
        g[c] = (((g[c] + x0 * z[0][c]) + x1 * z[1][c]) + x2 * z[2][c]) + x3 * z[3][c];
    }
    double* gb = grad->row(D).data();
    for (std::size_t c = 0; c < C; ++c)
      gb[c] = (((gb[c] + z[0][c]) + z[1][c]) + z[2][c]) + z[3][c];
  }
  return loss;
}

void check_inputs(const Matrix& Z, std::span<const std::size_t> labels, const Matrix& W) {
  if (labels.size() != Z.rows() || W.rows() != Z.cols() + 1)
    throw std::invalid_argument("mlr loss: dimension mismatch");
  for (auto y : labels)
    if (y >= W.cols()) throw std::invalid_argument("mlr loss: label out of range");
}

double finish(std::vector<double>& losses, std::vector<Matrix>& grads, const Matrix& W,
              double l2, std::size_t N, Matrix* grad) {
  const auto D = W.rows() - 1;
  double loss = 0.0;
  for (double l : losses) loss += l;
  loss /= static_cast<double>(N);
  double reg = 0.0;
  for (std::size_t d = 0; d < D; ++d)
    for (double w : W.row(d)) reg += w * w;
  loss += 0.5 * l2 * reg;
  if (grad) {
    *grad = Matrix(W.rows(), W.cols(), 0.0);
    for (const auto& g : grads)
      for (std::size_t k = 0; k < g.data().size(); ++k) grad->data()[k] += g.data()[k];
    const double inv = 1.0 / static_cast<double>(N);
    for (auto& g : grad->data()) g *= inv;
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t c = 0; c < W.cols(); ++c) (*grad)(d, c) += l2 * W(d, c);
  }
  return loss;
}

double loss_grad(const Matrix& Z, std::span<const std::size_t> labels, const Matrix& W,
                 double l2, Matrix* grad, bool parallel) {
  check_inputs(Z, labels, W);
  const auto N = Z.rows();
  if (N == 0) throw std::invalid_argument("mlr loss: no samples");
  std::vector<double> losses(kBlocks, 0.0);
  std::vector<Matrix> grads(grad ? kBlocks : 0, Matrix(W.rows(), W.cols(), 0.0));
  const auto nb = static_cast<std::ptrdiff_t>(kBlocks);
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const auto u = static_cast<std::size_t>(b);
    const auto lo = N * u / kBlocks;
    const auto hi = N * (u + 1) / kBlocks;
    losses[u] = block_loss_grad(Z, labels, W, lo, hi, grad ? &grads[u] : nullptr);
  }
  return finish(losses, grads, W, l2, N, grad);
}

}  // namespace

double mlr_loss_grad_serial(const Matrix& Z, std::span<const std::size_t> labels,
                            const Matrix& W, double l2, Matrix* grad) {
  return loss_grad(Z, labels, W, l2, grad, false);
}

double mlr_loss_grad_parallel(const Matrix& Z, std::span<const std::size_t> labels,
                              const Matrix& W, double l2, Matrix* grad) {
  return loss_grad(Z, labels, W, l2, grad, true);
}

}  // namespace kernels

MlrModel train_mlr(const Matrix& X, std::span<const std::size_t> labels,
                   std::vector<std::string> classes, const MlrOptions& opts) {
  const auto C = classes.size();
  if (C == 0) throw std::invalid_argument("train_mlr: no classes");
  if (labels.size() != X.rows()) throw std::invalid_argument("train_mlr: label count");
  if (X.rows() < C) throw std::invalid_argument("train_mlr: fewer samples than classes");
  for (double v : X.data())
    if (!std::isfinite(v)) throw std::invalid_argument("train_mlr: non-finite feature");

  const auto st = fit_standardization(X);
  const auto Z = standardize(X, st);
  auto f = opts.parallel ? kernels::mlr_loss_grad_parallel : kernels::mlr_loss_grad_serial;

  MlrModel model;
  model.classes = std::move(classes);
  model.mean = st.mean;
  model.stddev = st.stddev;
  Matrix W(X.cols() + 1, C, 0.0), grad, cand_grad;
  double loss = f(Z, labels, W, opts.l2, &grad);
  model.loss_trace.push_back(loss);
  double lr = opts.learning_rate;
  Matrix cand(W.rows(), W.cols());
  for (std::size_t epoch = 0; epoch < opts.max_epochs; ++epoch) {
    ++model.epochs;
    for (std::size_t k = 0; k < W.data().size(); ++k)
      cand.data()[k] = W.data()[k] - lr * grad.data()[k];
    const double cand_loss = f(Z, labels, cand, opts.l2, &cand_grad);
    if (!(cand_loss <= loss)) {
      lr *= 0.5;
      if (lr < 1e-12) break;
      continue;
    }
    const double delta = loss - cand_loss;
    std::swap(W, cand);
    std::swap(grad, cand_grad);
    loss = cand_loss;
    model.loss_trace.push_back(loss);
    if (delta < opts.tol) break;
  }
  model.weights = std::move(W);
  return model;
}

}  // namespace apideob
