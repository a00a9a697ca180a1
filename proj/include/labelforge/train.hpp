// Training loop, loss ablation, distillation and evaluation.
#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "labelforge/dataio.hpp"
#include "labelforge/labelreg.hpp"
#include "labelforge/model.hpp"

namespace labelforge {

enum class Strategy { onehot, ls, lspp, ols, distill, proxy_distill, ablation };
enum class AblationLoss { ce, sce_original, sce_ours };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::onehot: return "onehot";
    case Strategy::ls: return "ls";
    case Strategy::lspp: return "lspp";
    case Strategy::ols: return "ols";
    case Strategy::distill: return "distill";
    case Strategy::proxy_distill: return "proxy_distill";
    case Strategy::ablation: return "ablation";
  }
  return "?";
}

inline std::string_view to_string(AblationLoss a) {
  switch (a) {
    case AblationLoss::ce: return "ce";
    case AblationLoss::sce_original: return "sce_original";
    case AblationLoss::sce_ours: return "sce_ours";
  }
  return "?";
}

inline std::optional<Strategy> parse_strategy(std::string_view s) {
  for (auto v : {Strategy::onehot, Strategy::ls, Strategy::lspp, Strategy::ols, Strategy::distill,
                 Strategy::proxy_distill, Strategy::ablation}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

inline std::optional<AblationLoss> parse_ablation_loss(std::string_view s) {
  for (auto v : {AblationLoss::ce, AblationLoss::sce_original, AblationLoss::sce_ours}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

struct TrainConfig {
  Strategy strategy = Strategy::lspp;
  double alpha = 0.1;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::optional<double> c_lr;  // defaults to lr
  std::uint64_t seed = 0;
  std::vector<std::size_t> layer_sizes;  // D, hidden..., K
  double ols_mix = 0.5;
  bool ols_correct_only = false;
  AblationLoss ablation_loss = AblationLoss::sce_ours;

  double resolved_c_lr() const { return c_lr.value_or(lr); }

  void validate() const {
    if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in [0, 1), got " + std::to_string(alpha));
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
    if (c_lr && !(*c_lr >= 0.0)) throw std::invalid_argument("c_lr must be >= 0");
    if (!(ols_mix >= 0.0 && ols_mix <= 1.0)) throw std::invalid_argument("ols_mix must be in [0, 1]");
    if (layer_sizes.size() < 2) throw std::invalid_argument("layer_sizes needs at least input and output sizes");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"strategy", to_string(c.strategy)},
          {"alpha", c.alpha},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"c_lr", c.resolved_c_lr()},
          {"seed", c.seed},
          {"layer_sizes", c.layer_sizes},
          {"ols_mix", c.ols_mix},
          {"ols_correct_only", c.ols_correct_only},
          {"ablation_loss", to_string(c.ablation_loss)}};
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double train_loss = 0.0;
  double mean_max_prob = 0.0;  // on the training set
};

struct TrainReport {
  std::vector<EpochMetrics> epochs;
  double final_train_acc = 0.0;
  double final_test_acc = 0.0;
  double final_train_mean_max_prob = 0.0;
  double final_test_mean_max_prob = 0.0;
  double wall_seconds = 0.0;
  std::size_t teacher_forward_calls = 0;
  std::size_t ols_onehot_fallbacks = 0;
  std::optional<CMatrix> cmatrix;
};

struct Evaluation {
  double accuracy = 0.0;
  double mean_nll = 0.0;
  double mean_max_prob = 0.0;
};

/// Frozen guidance for distillation: a network or a trained C-matrix.
struct Teacher {
  std::optional<Model> model;
  std::optional<CMatrix> cmatrix;
};

/// Optional observers, called synchronously from the training loop.
struct TrainHooks {
  std::function<void(std::size_t y, const TargetDistribution&)> on_target;
  std::function<void(std::size_t epoch, const CMatrix&)> on_c_step;
};

struct TrainResult {
  Model model;
  TrainReport report;
  std::optional<CMatrix> cmatrix;
};

inline constexpr std::size_t kEvalBatch = 256;

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

/// Forward pass over the whole dataset in fixed-size chunks, concatenated in order.
inline Matrix predict_probs(const Model& model, const Dataset& data) {
  Matrix out(data.size(), model.num_classes());
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    const std::size_t end = std::min(data.size(), start + kEvalBatch);
    auto idx = iota_indices(end - start);
    for (auto& i : idx) i += start;
    const auto cache = forward(model, data.subset(idx).features);
    std::copy(cache.probs.data().begin(), cache.probs.data().end(), out.row(start).begin());
  }
  return out;
}

/// Top-1 accuracy (ties to the lowest index), mean -log max(p_y, 1e-12), mean max probability.
inline Evaluation evaluate(const Model& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (data.num_classes != model.num_classes()) {
    throw std::invalid_argument("evaluate: dataset K=" + std::to_string(data.num_classes) +
                                " but model K=" + std::to_string(model.num_classes()));
  }
  const Matrix probs = predict_probs(model, data);
  std::size_t correct = 0;
  double nll = 0.0;
  double maxp = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = probs.row(i);
    const auto pred = argmax(row);
    if (pred == data.labels[i]) ++correct;
    nll -= std::log(std::max(row[data.labels[i]], kLogClamp));
    maxp += row[pred];
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, nll / n, maxp / n};
}

inline constexpr unsigned kTerm1 = 1, kTerm2 = 2, kBothTerms = kTerm1 | kTerm2;

/// Adds one sample's gradient contributions, scaled by `scale`, under an ablation
/// rule. `terms` selects which loss terms contribute. Network gradients go to
/// `dlogits_row`; C gradients go to `c_row` (row y of a K x (K-1) accumulator)
/// when `cmat` is given.
inline void accumulate_sample_grads(AblationLoss rule, unsigned terms, const TargetDistribution& target,
                                    std::span<const double> probs, std::span<const double> log_probs,
                                    double scale, std::span<double> dlogits_row, const CMatrix* cmat,
                                    std::size_t y, std::span<double> c_row) {
  const auto add = [scale](std::span<double> dst, const std::vector<double>& g) {
    for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j] * scale;
  };
  const bool t1 = terms & kTerm1, t2 = terms & kTerm2;
  if (t1) add(dlogits_row, network_logit_grad(target, probs));
  if (t2 && rule == AblationLoss::sce_original) add(dlogits_row, network_logit_grad_term2(target, probs));
  if (!cmat) return;
  if (t2 && rule != AblationLoss::ce) add(c_row, c_logit_grad(*cmat, y, probs));
  if (t1 && rule != AblationLoss::sce_ours) add(c_row, c_logit_grad_term1(*cmat, y, log_probs));
}

struct BatchGradients {
  Params network;
  Matrix c;  // K x (K-1)
};

/// Gradients one training step would apply for a C-learning strategy, restricted to `terms`.
inline BatchGradients split_batch_gradients(const Model& model, const CMatrix& cmat, const Matrix& x,
                                            const std::vector<std::size_t>& labels, AblationLoss rule,
                                            unsigned terms) {
  const std::size_t b = labels.size(), k = cmat.num_classes();
  const ForwardCache cache = forward(model, x);
  const Matrix log_probs = log_softmax_rows(cache.logits());
  Matrix dlogits(b, k);
  BatchGradients out{{}, Matrix(k, k - 1)};
  for (std::size_t i = 0; i < b; ++i) {
    accumulate_sample_grads(rule, terms, lspp_target(cmat, labels[i]), cache.probs.row(i), log_probs.row(i),
                            1.0 / static_cast<double>(b), dlogits.row(i), &cmat, labels[i], out.c.row(labels[i]));
  }
  out.network = backward(model, cache, dlogits);
  return out;
}

/// Runs the configured strategy. Per batch: targets are built from the current
/// C / class means / teacher; the network steps on the mean of pred - target;
/// under lspp the C logits step on the mean term-2 gradient in the same batch,
/// both using pre-step values.
inline TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& test_set,
                         const Teacher& teacher = {}, const TrainHooks& hooks = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  train_set.validate();
  const std::size_t k = config.layer_sizes.back();
  if (train_set.num_classes != k || test_set.num_classes != k) {
    throw std::invalid_argument("class count mismatch: config K=" + std::to_string(k) + ", train K=" +
                                std::to_string(train_set.num_classes) + ", test K=" +
                                std::to_string(test_set.num_classes));
  }
  if (train_set.dim() != config.layer_sizes.front()) {
    throw std::invalid_argument("input dimension mismatch: config " + std::to_string(config.layer_sizes.front()) +
                                ", data " + std::to_string(train_set.dim()));
  }
  if (config.strategy == Strategy::distill) {
    if (!teacher.model) throw std::invalid_argument("strategy distill requires a teacher model");
    if (teacher.model->num_classes() != k) throw std::invalid_argument("teacher model K does not match the student");
    if (teacher.model->input_dim() != train_set.dim()) throw std::invalid_argument("teacher model input dimension does not match the data");
  }
  if (config.strategy == Strategy::proxy_distill) {
    if (!teacher.cmatrix) throw std::invalid_argument("strategy proxy_distill requires a teacher C-matrix");
    if (teacher.cmatrix->num_classes() != k) throw std::invalid_argument("teacher C-matrix K does not match the student");
  }

  const bool learns_c = config.strategy == Strategy::lspp || config.strategy == Strategy::ablation;
  const AblationLoss rule = config.strategy == Strategy::ablation ? config.ablation_loss : AblationLoss::sce_ours;
  const double c_lr = config.resolved_c_lr();

  TrainResult result;
  result.model = init_model(config.layer_sizes, config.seed);
  Model& model = result.model;
  OptState opt = make_opt_state(model, config.lr, config.momentum, config.weight_decay);
  std::optional<CMatrix> cmat;
  if (learns_c) cmat.emplace(k, config.alpha);

  OlsState ols_acc(k);
  Matrix ols_means(k, k);  // zero rows until the first epoch completes -> one-hot
  TrainReport& report = result.report;

  const std::size_t n = train_set.size();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    auto order = iota_indices(n);
    Rng shuffle_rng(Rng::derive(config.seed, 0x5EED0000ULL + epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> batch_idx(order.data() + start, end - start);
      const Dataset batch = train_set.subset(batch_idx);
      const std::size_t b = batch.size();
      const double inv_b = 1.0 / static_cast<double>(b);

      const ForwardCache cache = forward(model, batch.features);
      const Matrix log_probs = log_softmax_rows(cache.logits());
      std::optional<ForwardCache> teacher_cache;
      if (config.strategy == Strategy::distill) {
        teacher_cache = forward(*teacher.model, batch.features);
        ++report.teacher_forward_calls;
      }

      Matrix dlogits(b, k);
      Matrix c_grad = learns_c ? Matrix(k, k - 1) : Matrix();
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t y = batch.labels[i];
        const auto probs = cache.probs.row(i);
        TargetDistribution target;
        switch (config.strategy) {
          case Strategy::onehot: target = onehot_target(y, k); break;
          case Strategy::ls: target = ls_target(y, k, config.alpha); break;
          case Strategy::lspp:
          case Strategy::ablation: target = lspp_target(*cmat, y); break;
          case Strategy::ols: {
            auto t = ols_target(ols_means, y, config.ols_mix);
            target = std::move(t.target);
            break;
          }
          case Strategy::distill: target = teacher_target(teacher_cache->probs.row(i)); break;
          case Strategy::proxy_distill: target = proxy_teacher_target(*teacher.cmatrix, y, k); break;
        }
        if (hooks.on_target) hooks.on_target(y, target);
        loss_sum += term1_loss(target, log_probs.row(i));

        accumulate_sample_grads(rule, kBothTerms, target, probs, log_probs.row(i), inv_b, dlogits.row(i),
                                learns_c ? &*cmat : nullptr, y, learns_c ? c_grad.row(y) : std::span<double>{});

        if (config.strategy == Strategy::ols) {
          if (!config.ols_correct_only || argmax(probs) == y) ols_accumulate(ols_acc, probs, y);
        }
      }

      const Params grads = backward(model, cache, dlogits);
      sgd_step(model, grads, opt);
      if (learns_c) {
        auto& logits = cmat->logits().data();
        const auto& g = c_grad.data();
        for (std::size_t j = 0; j < logits.size(); ++j) logits[j] -= c_lr * g[j];
        if (hooks.on_c_step) hooks.on_c_step(epoch, *cmat);
      }
    }

    if (config.strategy == Strategy::ols) {
      ols_means = ols_acc.class_means();
      for (auto c : ols_acc.counts) report.ols_onehot_fallbacks += c == 0 ? 1 : 0;
      ols_acc = OlsState(k);
    }

    const auto tr = evaluate(model, train_set);
    const auto te = evaluate(model, test_set);
    report.epochs.push_back({epoch, tr.accuracy, te.accuracy, loss_sum / static_cast<double>(n), tr.mean_max_prob});
  }

  const auto tr = evaluate(model, train_set);
  const auto te = evaluate(model, test_set);
  report.final_train_acc = tr.accuracy;
  report.final_test_acc = te.accuracy;
  report.final_train_mean_max_prob = tr.mean_max_prob;
  report.final_test_mean_max_prob = te.mean_max_prob;
  report.cmatrix = cmat;
  result.cmatrix = std::move(cmat);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

/// Loss ablation: ce sends term 1 to both parameter sets, sce_original sends
/// term 1 + term 2 to both, sce_ours is the split rule used by lspp.
inline TrainResult train_ablation(TrainConfig config, const Dataset& train_set, const Dataset& test_set,
                                  const TrainHooks& hooks = {}) {
  config.strategy = Strategy::ablation;
  return train(config, train_set, test_set, {}, hooks);
}

/// Distills from a network (per-sample targets) or a C-matrix (per-class targets,
/// no teacher forward pass).
inline TrainResult distill(TrainConfig config, const Teacher& teacher, const Dataset& train_set,
                           const Dataset& test_set) {
  if (teacher.model) {
    config.strategy = Strategy::distill;
  } else if (teacher.cmatrix) {
    config.strategy = Strategy::proxy_distill;
  } else {
    throw std::invalid_argument("distill: no teacher given");
  }
  return train(config, train_set, test_set, teacher);
}

// --- run artifacts -----------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// epoch,train_acc,test_acc,train_loss,mean_max_prob
inline void write_metrics_csv(const TrainReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,train_acc,test_acc,train_loss,mean_max_prob\n";
  for (const auto& e : report.epochs) {
    out << e.epoch << ',' << format_double(e.train_acc) << ',' << format_double(e.test_acc) << ','
        << format_double(e.train_loss) << ',' << format_double(e.mean_max_prob) << '\n';
  }
}

inline nlohmann::json report_to_json(const TrainReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_acc", e.train_acc},
                      {"test_acc", e.test_acc},
                      {"train_loss", e.train_loss},
                      {"mean_max_prob", e.mean_max_prob}});
  }
  nlohmann::json j = {{"epochs", epochs},
                      {"final_train_acc", r.final_train_acc},
                      {"final_test_acc", r.final_test_acc},
                      {"final_train_mean_max_prob", r.final_train_mean_max_prob},
                      {"final_test_mean_max_prob", r.final_test_mean_max_prob},
                      {"wall_seconds", r.wall_seconds},
                      {"teacher_forward_calls", r.teacher_forward_calls},
                      {"ols_onehot_fallbacks", r.ols_onehot_fallbacks}};
  if (r.cmatrix) j["cmatrix"] = cmatrix_to_json(*r.cmatrix);
  return j;
}

/// Writes metrics.csv, checkpoint.json, report.json and, when a C-matrix was
/// learned, cmatrix.csv + cmatrix.json into an existing directory.
inline void write_run_artifacts(const std::filesystem::path& dir, const TrainResult& result,
                                const TrainConfig& config) {
  write_metrics_csv(result.report, (dir / "metrics.csv").string());
  save_checkpoint(result.model, (dir / "checkpoint.json").string());
  if (result.cmatrix) {
    export_cmatrix(*result.cmatrix, (dir / "cmatrix.csv").string(), (dir / "cmatrix.json").string(),
                   {{"strategy", to_string(config.strategy)},
                    {"ablation_loss", to_string(config.ablation_loss)},
                    {"epochs", config.epochs},
                    {"seed", config.seed}});
  }
  std::ofstream out(dir / "report.json");
  if (!out) throw std::runtime_error("cannot write report.json");
  out << report_to_json(result.report).dump(2) << '\n';
}

}  // namespace labelforge
