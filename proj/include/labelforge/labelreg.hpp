// Label target strategies and their learning rules.
//
// The learnable strategy mixes a fixed (1 - alpha) on the ground-truth class with
// alpha times a learned distribution over the other K - 1 classes. It is trained
// with a split symmetric cross-entropy:
//
//   term 1  H(target, pred) = -sum_i target_i log pred_i     -> network only
//   term 2  H(pred, target) = -sum_i pred_i log target_i     -> C logits only
//
// Each term's gradient reaches exactly one parameter set, so the two pathways
// below are separate functions: network_logit_grad feeds backprop and
// c_logit_grad feeds the C update.
#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "labelforge/numerics.hpp"

namespace labelforge {

/// Floor applied to target entries before taking a log in term 2.
inline constexpr double kLogClamp = 1e-12;

/// A length-K training label; nonnegative and summing to 1 within 1e-9.
class TargetDistribution {
 public:
  TargetDistribution() = default;
  explicit TargetDistribution(std::vector<double> probs) : probs_(std::move(probs)) {}

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const noexcept { return probs_; }
  const std::vector<double>& vec() const noexcept { return probs_; }

  bool is_valid(double tol = 1e-9) const {
    double sum = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0)) return false;
      sum += p;
    }
    return !probs_.empty() && std::abs(sum - 1.0) <= tol;
  }

  friend bool operator==(const TargetDistribution&, const TargetDistribution&) = default;

 private:
  std::vector<double> probs_;
};

namespace detail {

inline void require_distribution(std::span<const double> p, const char* what) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw NumericError(std::string(what) + ": negative or non-finite probability");
    sum += x;
  }
  if (p.empty() || std::abs(sum - 1.0) > 1e-9) throw NumericError(std::string(what) + ": not a probability distribution");
}

inline void require_class(std::size_t y, std::size_t k, const char* what) {
  if (y >= k) {
    throw std::out_of_range(std::string(what) + ": label " + std::to_string(y) +
                            " out of range for K=" + std::to_string(k));
  }
}

}  // namespace detail

/// Learnable per-class redistribution of non-target mass: K x (K-1) logits.
/// Row y's softmax is the distribution over the classes other than y, in
/// increasing class order with y skipped.
class CMatrix {
 public:
  CMatrix() = default;
  CMatrix(std::size_t num_classes, double alpha)
      : logits_(num_classes, num_classes >= 1 ? num_classes - 1 : 0), alpha_(alpha) {
    if (num_classes < 2) throw std::invalid_argument("CMatrix: need at least 2 classes");
    if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("CMatrix: alpha must be in [0, 1)");
  }
  CMatrix(Matrix logits, double alpha) : logits_(std::move(logits)), alpha_(alpha) {
    if (logits_.rows() < 2 || logits_.cols() + 1 != logits_.rows()) {
      throw ShapeError("CMatrix: logits must be K x (K-1), got " + shape_str(logits_.rows(), logits_.cols()));
    }
    if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("CMatrix: alpha must be in [0, 1)");
  }

  std::size_t num_classes() const noexcept { return logits_.rows(); }
  double alpha() const noexcept { return alpha_; }
  const Matrix& logits() const noexcept { return logits_; }
  Matrix& logits() noexcept { return logits_; }

  /// Non-target class index for slot j of row y.
  static std::size_t slot_to_class(std::size_t y, std::size_t slot) { return slot < y ? slot : slot + 1; }
  static std::size_t class_to_slot(std::size_t y, std::size_t cls) { return cls < y ? cls : cls - 1; }

  std::vector<double> row_probs(std::size_t y) const {
    detail::require_class(y, num_classes(), "CMatrix::row_probs");
    return softmax(logits_.row(y));
  }

  /// K x K view with an exact 0 on the diagonal.
  Matrix expanded() const {
    const std::size_t k = num_classes();
    Matrix out(k, k);
    for (std::size_t y = 0; y < k; ++y) {
      const auto p = row_probs(y);
      for (std::size_t j = 0; j < p.size(); ++j) out(y, slot_to_class(y, j)) = p[j];
    }
    return out;
  }

  friend bool operator==(const CMatrix&, const CMatrix&) = default;

 private:
  Matrix logits_;
  double alpha_ = 0.1;
};

// --- fixed targets -----------------------------------------------------------

inline TargetDistribution onehot_target(std::size_t y, std::size_t k) {
  detail::require_class(y, k, "onehot_target");
  std::vector<double> p(k, 0.0);
  p.at(y) = 1.0;
  return TargetDistribution(std::move(p));
}

/// (1 - alpha) * onehot + alpha * uniform.
inline TargetDistribution ls_target(std::size_t y, std::size_t k, double alpha) {
  detail::require_class(y, k, "ls_target");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("ls_target: alpha must be in [0, 1]");
  const double off = alpha / static_cast<double>(k);
  std::vector<double> p(k, off);
  p[y] = (1.0 - alpha) + off;
  return TargetDistribution(std::move(p));
}

/// (1 - alpha) * onehot + alpha * C_y, with C_y expanded by a 0 at y.
inline TargetDistribution lspp_target(const CMatrix& c, std::size_t y) {
  const std::size_t k = c.num_classes();
  detail::require_class(y, k, "lspp_target");
  const auto row = c.row_probs(y);
  std::vector<double> p(k, 0.0);
  p[y] = 1.0 - c.alpha();
  for (std::size_t j = 0; j < row.size(); ++j) p[CMatrix::slot_to_class(y, j)] = c.alpha() * row[j];
  return TargetDistribution(std::move(p));
}

inline TargetDistribution teacher_target(std::span<const double> teacher_probs) {
  detail::require_distribution(teacher_probs, "teacher_target");
  return TargetDistribution({teacher_probs.begin(), teacher_probs.end()});
}

/// Per-class targets from a frozen teacher C-matrix; same construction as lspp_target.
inline TargetDistribution proxy_teacher_target(const CMatrix& teacher_c, std::size_t y,
                                               std::size_t student_classes) {
  if (teacher_c.num_classes() != student_classes) {
    throw std::invalid_argument("proxy_teacher_target: teacher C has K=" +
                                std::to_string(teacher_c.num_classes()) + ", student has K=" +
                                std::to_string(student_classes));
  }
  return lspp_target(teacher_c, y);
}

// --- losses and gradients ----------------------------------------------------

/// Term 1: cross-entropy of the prediction against a constant target.
inline double term1_loss(const TargetDistribution& target, std::span<const double> log_probs) {
  return cross_entropy(target.probs(), log_probs);
}

/// Term 2: -sum_i pred_i log max(target_i, 1e-12).
inline double term2_loss(std::span<const double> probs, const TargetDistribution& target) {
  if (probs.size() != target.size()) throw ShapeError("term2_loss: length mismatch");
  double h = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) h -= probs[i] * std::log(std::max(target[i], kLogClamp));
  return h;
}

/// d(term 1)/d(logits) with the target held constant: pred - target.
inline std::vector<double> network_logit_grad(const TargetDistribution& target,
                                              std::span<const double> probs) {
  if (target.size() != probs.size()) {
    throw ShapeError("network_logit_grad: target length " + std::to_string(target.size()) +
                     " vs probs length " + std::to_string(probs.size()));
  }
  std::vector<double> g(probs.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = probs[i] - target[i];
  return g;
}

/// d(term 2)/d(row-y C logits) with the prediction held constant.
///
/// For slot j:  g_j = -(pred_j - p_j * S),  S = sum of pred over non-target classes.
/// Alpha cancels since it enters the log additively. Slots whose target value is
/// under the log clamp are constant in the loss and contribute nothing.
inline std::vector<double> c_logit_grad(const CMatrix& c, std::size_t y, std::span<const double> probs) {
  const std::size_t k = c.num_classes();
  detail::require_class(y, k, "c_logit_grad");
  if (probs.size() != k) throw ShapeError("c_logit_grad: probs length does not match K");
  const auto p = c.row_probs(y);
  double s = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (c.alpha() * p[j] >= kLogClamp) s += probs[CMatrix::slot_to_class(y, j)];
  }
  std::vector<double> g(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double own = c.alpha() * p[j] >= kLogClamp ? probs[CMatrix::slot_to_class(y, j)] : 0.0;
    g[j] = -(own - p[j] * s);
  }
  return g;
}

/// d(term 1)/d(row-y C logits): the gradient plain cross-entropy would send to C
/// if the target were not held constant. Used only by the loss ablation.
///
///   g_j = -alpha * p_j * (log pred_j - sum_m p_m log pred_m)
inline std::vector<double> c_logit_grad_term1(const CMatrix& c, std::size_t y,
                                              std::span<const double> log_probs) {
  const std::size_t k = c.num_classes();
  detail::require_class(y, k, "c_logit_grad_term1");
  if (log_probs.size() != k) throw ShapeError("c_logit_grad_term1: log_probs length does not match K");
  const auto p = c.row_probs(y);
  double mean_log = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) mean_log += p[j] * log_probs[CMatrix::slot_to_class(y, j)];
  std::vector<double> g(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) {
    g[j] = -c.alpha() * p[j] * (log_probs[CMatrix::slot_to_class(y, j)] - mean_log);
  }
  return g;
}

/// d(term 2)/d(logits) with the target held constant. Used only by the loss ablation.
///
///   g_i = -pred_i * (l_i - sum_m pred_m l_m),  l = log max(target, 1e-12)
inline std::vector<double> network_logit_grad_term2(const TargetDistribution& target,
                                                    std::span<const double> probs) {
  if (target.size() != probs.size()) throw ShapeError("network_logit_grad_term2: length mismatch");
  std::vector<double> l(probs.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    l[i] = std::log(std::max(target[i], kLogClamp));
    mean += probs[i] * l[i];
  }
  std::vector<double> g(probs.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = -probs[i] * (l[i] - mean);
  return g;
}

// --- online label smoothing --------------------------------------------------

/// Running per-class sums of predicted distributions.
struct OlsState {
  Matrix sums;  // K x K
  std::vector<std::size_t> counts;

  explicit OlsState(std::size_t k = 0) : sums(k, k), counts(k, 0) {}

  std::size_t num_classes() const noexcept { return counts.size(); }

  /// K x K; row y is the mean prediction over class y, or all zeros if no sample was seen.
  Matrix class_means() const {
    Matrix m(sums.rows(), sums.cols());
    for (std::size_t y = 0; y < counts.size(); ++y) {
      if (counts[y] == 0) continue;
      for (std::size_t j = 0; j < m.cols(); ++j) m(y, j) = sums(y, j) / static_cast<double>(counts[y]);
    }
    return m;
  }
};

inline void ols_accumulate(OlsState& state, std::span<const double> probs, std::size_t y) {
  detail::require_class(y, state.num_classes(), "ols_accumulate");
  if (probs.size() != state.num_classes()) throw ShapeError("ols_accumulate: probs length does not match K");
  auto row = state.sums.row(y);
  for (std::size_t j = 0; j < row.size(); ++j) row[j] += probs[j];
  ++state.counts[y];
}

struct OlsTarget {
  TargetDistribution target;
  bool fell_back_to_onehot = false;
};

/// (1 - mix) * onehot + mix * class_means[y]. A zero row (class never seen)
/// yields the one-hot target with fell_back_to_onehot set.
inline OlsTarget ols_target(const Matrix& class_means, std::size_t y, double mix) {
  const std::size_t k = class_means.rows();
  detail::require_class(y, k, "ols_target");
  if (class_means.cols() != k) throw ShapeError("ols_target: class means must be K x K");
  if (!(mix >= 0.0 && mix <= 1.0)) throw std::invalid_argument("ols_target: mix must be in [0, 1]");
  const auto mean = class_means.row(y);
  double mean_sum = 0.0;
  for (double v : mean) mean_sum += v;
  if (mean_sum == 0.0) return {onehot_target(y, k), true};

  std::vector<double> p(k);
  double sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    p[j] = mix * mean[j] + (j == y ? 1.0 - mix : 0.0);
    sum += p[j];
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    for (double& v : p) v /= sum;
  }
  return {TargetDistribution(std::move(p)), false};
}

// --- export ------------------------------------------------------------------

/// K x K CSV with a header row of class indices.
inline void write_matrix_csv(const Matrix& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << j;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
}

/// Sidecar: {"alpha", "num_classes", "logits": [[K-1 values] x K], "metadata": {...}}.
inline nlohmann::json cmatrix_to_json(const CMatrix& c, const nlohmann::json& metadata = nlohmann::json::object()) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t y = 0; y < c.num_classes(); ++y) {
    const auto r = c.logits().row(y);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"alpha", c.alpha()}, {"num_classes", c.num_classes()}, {"logits", rows}, {"metadata", metadata}};
}

inline CMatrix cmatrix_from_json(const nlohmann::json& j) {
  const auto k = j.at("num_classes").get<std::size_t>();
  const auto rows = j.at("logits").get<std::vector<std::vector<double>>>();
  if (k < 2 || rows.size() != k) throw std::runtime_error("cmatrix json: expected " + std::to_string(k) + " logit rows");
  Matrix logits(k, k - 1);
  for (std::size_t y = 0; y < k; ++y) {
    if (rows[y].size() != k - 1) throw std::runtime_error("cmatrix json: row " + std::to_string(y) + " must have K-1 logits");
    std::copy(rows[y].begin(), rows[y].end(), logits.row(y).begin());
  }
  return CMatrix(std::move(logits), j.at("alpha").get<double>());
}

inline void export_cmatrix(const CMatrix& c, const std::string& csv_path, const std::string& json_path,
                           const nlohmann::json& metadata = nlohmann::json::object()) {
  write_matrix_csv(c.expanded(), csv_path);
  std::ofstream out(json_path);
  if (!out) throw std::runtime_error("cannot write " + json_path);
  out << cmatrix_to_json(c, metadata).dump(2) << '\n';
}

inline CMatrix load_cmatrix(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("cannot open " + json_path);
  return cmatrix_from_json(nlohmann::json::parse(in));
}

}  // namespace labelforge
