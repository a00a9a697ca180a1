// Numeric stand-ins for the analysis figures: class-wise mean predictions,
// penultimate-layer class centers and their normalized cosine distances, and
// C-row entropies.
#pragma once

#include <cmath>
#include <vector>

#include "labelforge/dataio.hpp"
#include "labelforge/labelreg.hpp"
#include "labelforge/model.hpp"
#include "labelforge/train.hpp"

namespace labelforge {

namespace detail {

inline void require_all_classes(const Dataset& data, const char* what) {
  const auto counts = data.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw std::invalid_argument(std::string(what) + ": class " + std::to_string(c) + " has no samples");
  }
}

/// Row c = mean of rows of `values` whose label is c.
inline Matrix class_means_of(const Matrix& values, const std::vector<std::size_t>& labels, std::size_t k) {
  Matrix sums(k, values.cols());
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto dst = sums.row(labels[i]);
    const auto src = values.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    ++counts[labels[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (auto& v : sums.row(c)) v /= static_cast<double>(counts[c]);
  }
  return sums;
}

}  // namespace detail

/// K x K; row i is the mean predicted distribution over samples of true class i.
inline Matrix class_mean_probs(const Model& model, const Dataset& data) {
  if (data.num_classes != model.num_classes()) throw std::invalid_argument("class_mean_probs: K mismatch");
  detail::require_all_classes(data, "class_mean_probs");
  return detail::class_means_of(predict_probs(model, data), data.labels, data.num_classes);
}

/// K x H; row i is the mean last-hidden-layer activation over class-i samples.
inline Matrix class_centers(const Model& model, const Dataset& data) {
  if (model.num_hidden() == 0) throw std::invalid_argument("class_centers: model has no hidden layer");
  detail::require_all_classes(data, "class_centers");
  const std::size_t width = model.layer_sizes[model.layer_sizes.size() - 2];
  Matrix features(data.size(), width);
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    const std::size_t end = std::min(data.size(), start + kEvalBatch);
    auto idx = iota_indices(end - start);
    for (auto& i : idx) i += start;
    const auto cache = forward(model, data.subset(idx).features);
    const auto& pen = cache.penultimate().data();
    std::copy(pen.begin(), pen.end(), features.row(start).begin());
  }
  return detail::class_means_of(features, data.labels, data.num_classes);
}

/// d_ij = 1 - cos(c_i, c_j), then each row's off-diagonal entries are divided by
/// their sum. A row whose distances are all zero becomes uniform 1/(K-1).
inline Matrix center_distance_matrix(const Matrix& centers) {
  const std::size_t k = centers.rows();
  if (k < 2) throw std::invalid_argument("center_distance_matrix: need at least 2 centers");
  std::vector<double> norms(k);
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (double v : centers.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) throw NumericError("center_distance_matrix: center " + std::to_string(i) + " has zero norm");
  }
  Matrix d(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      double dot = 0.0;
      const auto a = centers.row(i);
      const auto b = centers.row(j);
      for (std::size_t t = 0; t < a.size(); ++t) dot += a[t] * b[t];
      const double cos = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      d(i, j) = std::max(0.0, 1.0 - cos);
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    auto row = d.row(i);
    double sum = 0.0;
    for (double v : row) sum += v;
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      row[j] = sum > 0.0 ? row[j] / sum : 1.0 / static_cast<double>(k - 1);
    }
  }
  return d;
}

/// Natural-log entropy of each row's K-1 probabilities.
inline std::vector<double> c_row_entropy(const CMatrix& c) {
  std::vector<double> h(c.num_classes());
  for (std::size_t y = 0; y < h.size(); ++y) h[y] = entropy(c.row_probs(y));
  return h;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace labelforge
