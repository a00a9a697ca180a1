// labelforge command-line driver. main() lives in labelforge.cpp; tests call run_cli directly.
#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "labelforge/analysis.hpp"
#include "labelforge/config.hpp"
#include "labelforge/dataio.hpp"
#include "labelforge/labelreg.hpp"
#include "labelforge/model.hpp"
#include "labelforge/train.hpp"

namespace labelforge::cli {

inline constexpr const char* kVersion = "0.3.0";

namespace fs = std::filesystem;

/// Bad invocation: exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{md[i]};
  return hex.str();
}

struct LoadedData {
  Dataset train;
  Dataset test;
  std::vector<std::string> input_files;
};

namespace detail {

inline Dataset truncate(Dataset d, std::size_t max_samples) {
  if (max_samples == 0 || d.size() <= max_samples) return d;
  const auto idx = iota_indices(max_samples);
  return d.subset(idx);
}

}  // namespace detail

inline LoadedData load_data(const DataConfig& d) {
  LoadedData out;
  switch (d.source) {
    case DataSource::synthetic: {
      out.train = generate_gaussian(paired_gaussian_spec(d.synth_std, d.synth_per_class, d.data_seed));
      out.test = generate_gaussian(
          paired_gaussian_spec(d.synth_std, d.synth_test_per_class, Rng::derive(d.data_seed, 0x7E57)));
      return out;
    }
    case DataSource::csv: {
      if (d.train_csv.empty()) throw UsageError("data=csv requires train_csv");
      out.input_files.push_back(d.train_csv);
      auto train = load_csv(d.train_csv, d.label_column);
      if (d.test_csv.empty()) {
        std::tie(out.train, out.test) = split(train.data, 1.0 - d.test_fraction, d.split_seed);
      } else {
        out.input_files.push_back(d.test_csv);
        auto test = load_csv(d.test_csv, d.label_column);
        if (test.label_names != train.label_names) {
          throw std::runtime_error("test_csv labels do not match train_csv labels in first-appearance order");
        }
        out.train = std::move(train.data);
        out.test = std::move(test.data);
      }
      return out;
    }
    case DataSource::idx: {
      if (d.idx_images.empty() || d.idx_labels.empty()) throw UsageError("data=idx requires idx_images and idx_labels");
      out.input_files = {d.idx_images, d.idx_labels};
      auto all = detail::truncate(load_idx(d.idx_images, d.idx_labels), d.max_samples);
      if (d.test_idx_images.empty()) {
        std::tie(out.train, out.test) = split(all, 1.0 - d.test_fraction, d.split_seed);
      } else {
        out.input_files.push_back(d.test_idx_images);
        out.input_files.push_back(d.test_idx_labels);
        out.train = std::move(all);
        out.test = detail::truncate(load_idx(d.test_idx_images, d.test_idx_labels), d.max_samples);
        const auto k = std::max(out.train.num_classes, out.test.num_classes);
        out.train.num_classes = out.test.num_classes = k;
      }
      return out;
    }
  }
  return out;
}

/// Creates the run directory: --out if given, else $LABELFORGE_OUT (or .)/<sub>-<seed>-<unix time>.
/// An existing non-empty directory is an error.
inline fs::path make_run_dir(const std::string& out_flag, const std::string& subcommand, std::uint64_t seed) {
  fs::path dir;
  if (!out_flag.empty()) {
    dir = out_flag;
  } else {
    const char* root = std::getenv("LABELFORGE_OUT");
    const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                         std::chrono::system_clock::now().time_since_epoch()).count();
    dir = fs::path(root && *root ? root : ".") / (subcommand + "-" + std::to_string(seed) + "-" + std::to_string(now));
  }
  if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir))) {
    throw std::runtime_error("output directory " + dir.string() + " already exists; refusing to overwrite");
  }
  fs::create_directories(dir);
  return dir;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

inline void write_manifest(const fs::path& dir, const std::string& subcommand, const nlohmann::json& config,
                           const std::vector<std::string>& inputs) {
  nlohmann::json digests = nlohmann::json::array();
  for (const auto& p : inputs) digests.push_back({{"path", p}, {"sha256", sha256_file(p)}});
  write_json(dir / "manifest.json", {{"subcommand", subcommand},
                                     {"config", config},
                                     {"inputs", digests},
                                     {"output_dir", dir.string()},
                                     {"tool_version", kVersion}});
}

/// Flags shared by train/distill/ablate: one per config key, with dash and underscore spellings.
struct ConfigFlags {
  std::optional<std::string> config_path;
  std::string out;
  std::map<std::string, std::string> values;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "key=value (or JSON) config file");
    app.add_option("--out", out, "output directory (default $LABELFORGE_OUT/<subcommand>-<seed>-<time>)");
    for (const auto& key : config_keys()) {
      std::string names = "--" + key;
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      if (dashed != key) names += ",--" + dashed;
      app.add_option_function<std::string>(names, [this, key](const std::string& v) { values[key] = v; },
                                           "config key " + key);
    }
  }

  ConfigEntries entries() const {
    ConfigEntries e;
    for (const auto& [k, v] : values) e[k] = {v, "flag --" + k};
    return e;
  }

  RunConfig load() const { return load_config(config_path, entries()); }
};

struct Io {
  std::ostream& out;
  std::ostream& err;
};

inline Teacher load_teacher(const RunConfig& cfg) {
  Teacher t;
  if (!cfg.teacher_checkpoint.empty()) t.model = load_checkpoint(cfg.teacher_checkpoint);
  if (!cfg.teacher_cmatrix.empty()) {
    fs::path p = cfg.teacher_cmatrix;
    if (fs::is_directory(p)) p /= "cmatrix.json";
    t.cmatrix = load_cmatrix(p.string());
  }
  return t;
}

inline std::vector<std::string> teacher_files(const RunConfig& cfg) {
  std::vector<std::string> files;
  if (!cfg.teacher_checkpoint.empty()) files.push_back(cfg.teacher_checkpoint);
  if (!cfg.teacher_cmatrix.empty()) {
    fs::path p = cfg.teacher_cmatrix;
    if (fs::is_directory(p)) p /= "cmatrix.json";
    files.push_back(p.string());
  }
  return files;
}

/// Shared body of train / distill / ablate.
inline int run_training(const std::string& subcommand, RunConfig cfg, const std::string& out_flag,
                        const std::optional<std::string>& config_path, Io io) {
  auto data = load_data(cfg.data);
  resolve_layer_sizes(cfg, data.train.dim(), data.train.num_classes);

  Teacher teacher;
  if (subcommand == "distill") {
    if (cfg.teacher_checkpoint.empty() == cfg.teacher_cmatrix.empty()) {
      throw UsageError("distill requires exactly one of --teacher-checkpoint or --teacher-cmatrix");
    }
    cfg.train.strategy = cfg.teacher_checkpoint.empty() ? Strategy::proxy_distill : Strategy::distill;
  } else if (subcommand == "ablate") {
    cfg.train.strategy = Strategy::ablation;
  }
  if (cfg.train.strategy == Strategy::distill && cfg.teacher_checkpoint.empty()) {
    throw UsageError("strategy distill requires --teacher-checkpoint");
  }
  if (cfg.train.strategy == Strategy::proxy_distill && cfg.teacher_cmatrix.empty()) {
    throw UsageError("strategy proxy_distill requires --teacher-cmatrix");
  }
  if (cfg.train.strategy == Strategy::distill || cfg.train.strategy == Strategy::proxy_distill) {
    teacher = load_teacher(cfg);
  }

  auto inputs = data.input_files;
  for (auto& f : teacher_files(cfg)) inputs.push_back(f);
  if (config_path) inputs.push_back(*config_path);

  const auto dir = make_run_dir(out_flag, subcommand, cfg.train.seed);
  const auto config_json = to_json(cfg);
  write_json(dir / "config.json", config_json);
  write_manifest(dir, subcommand, config_json, inputs);

  const auto result = train(cfg.train, data.train, data.test, teacher);
  write_run_artifacts(dir, result, cfg.train);

  io.out << subcommand << ": strategy=" << to_string(cfg.train.strategy) << " epochs=" << cfg.train.epochs
         << " train_acc=" << format_double(result.report.final_train_acc)
         << " test_acc=" << format_double(result.report.final_test_acc)
         << " mean_max_prob=" << format_double(result.report.final_train_mean_max_prob);
  if (result.cmatrix) io.out << " mean_c_entropy=" << format_double(mean(c_row_entropy(*result.cmatrix)));
  io.out << "\n" << "run directory: " << dir.string() << "\n";
  return 0;
}

/// Term-1 network check and term-2 C check on a random problem.
struct GradcheckResult {
  double network_error = 0.0;
  double c_error = 0.0;
  std::size_t kinks_skipped = 0;
};

inline GradcheckResult gradcheck(std::size_t k, std::uint64_t seed, std::size_t layers, std::size_t hidden,
                                 std::size_t batch, double step) {
  if (k < 2) throw UsageError("gradcheck: --k must be at least 2");
  if (layers < 1) throw UsageError("gradcheck: --layers must be at least 1");
  if (batch < 1) throw UsageError("gradcheck: --batch must be at least 1");
  Rng rng(seed);
  const std::size_t dim = 4;
  std::vector<std::size_t> sizes{dim};
  for (std::size_t l = 1; l < layers; ++l) sizes.push_back(hidden);
  sizes.push_back(k);
  const auto model = init_model(sizes, seed);
  Matrix x(batch, dim);
  for (auto& v : x.data()) v = rng.uniform(-2.0, 2.0);
  std::vector<std::size_t> labels(batch);
  for (auto& y : labels) y = rng.below(k);
  CMatrix c(k, 0.1);
  for (auto& v : c.logits().data()) v = rng.uniform(-2.0, 2.0);

  std::vector<TargetDistribution> targets;
  for (auto y : labels) targets.push_back(lspp_target(c, y));
  const LossFn term1 = [&](const ForwardCache& cache) {
    const auto lp = log_softmax_rows(cache.logits());
    LossEval e{0.0, Matrix(batch, k)};
    for (std::size_t i = 0; i < batch; ++i) {
      e.loss += term1_loss(targets[i], lp.row(i)) / static_cast<double>(batch);
      const auto g = network_logit_grad(targets[i], cache.probs.row(i));
      for (std::size_t j = 0; j < k; ++j) e.dlogits(i, j) = g[j] / static_cast<double>(batch);
    }
    return e;
  };
  GradcheckResult r;
  r.network_error = finite_diff_check(model, x, term1, step, &r.kinks_skipped);

  const auto probs = forward(model, x).probs;
  const auto term2 = [&](const CMatrix& cm) {
    double s = 0.0;
    for (std::size_t i = 0; i < batch; ++i) s += term2_loss(probs.row(i), lspp_target(cm, labels[i]));
    return s / static_cast<double>(batch);
  };
  Matrix analytic(k, k - 1);
  for (std::size_t i = 0; i < batch; ++i) {
    const auto g = c_logit_grad(c, labels[i], probs.row(i));
    for (std::size_t j = 0; j < g.size(); ++j) analytic(labels[i], j) += g[j] / static_cast<double>(batch);
  }
  CMatrix probe = c;
  std::vector<double> numeric;
  for (auto& v : probe.logits().data()) {
    const double saved = v;
    v = saved + step;
    const double plus = term2(probe);
    v = saved - step;
    const double minus = term2(probe);
    v = saved;
    numeric.push_back((plus - minus) / (2.0 * step));
  }
  r.c_error = relative_error(analytic.data(), numeric);
  return r;
}

inline int run_analyze(const fs::path& run, const std::string& out_flag, Io io) {
  if (!fs::is_directory(run)) throw UsageError("--run " + run.string() + " is not a directory");
  auto cfg = load_config((run / "config.json").string());
  const auto model = load_checkpoint((run / "checkpoint.json").string());
  auto data = load_data(cfg.data);
  std::optional<CMatrix> c;
  if (fs::exists(run / "cmatrix.json")) c = load_cmatrix((run / "cmatrix.json").string());

  std::vector<std::string> inputs = {(run / "config.json").string(), (run / "checkpoint.json").string()};
  if (c) inputs.push_back((run / "cmatrix.json").string());
  for (auto& f : data.input_files) inputs.push_back(f);

  const auto dir = make_run_dir(out_flag, "analyze", cfg.train.seed);
  write_json(dir / "config.json", to_json(cfg));
  write_manifest(dir, "analyze", to_json(cfg), inputs);

  for (const auto& [name, ds] : {std::pair<std::string, const Dataset*>{"train", &data.train}, {"test", &data.test}}) {
    write_matrix_csv(class_mean_probs(model, *ds), (dir / ("class_probs_" + name + ".csv")).string());
    if (model.num_hidden() > 0) {
      const auto centers = class_centers(model, *ds);
      write_matrix_csv(centers, (dir / ("class_centers_" + name + ".csv")).string());
      write_matrix_csv(center_distance_matrix(centers), (dir / ("center_distance_" + name + ".csv")).string());
    }
  }

  nlohmann::json report = fs::exists(run / "report.json") ? read_json(run / "report.json") : nlohmann::json::object();
  const auto tr = evaluate(model, data.train);
  const auto te = evaluate(model, data.test);
  report["analysis"] = {{"source_run", run.string()},
                        {"train", {{"accuracy", tr.accuracy}, {"mean_nll", tr.mean_nll}, {"mean_max_prob", tr.mean_max_prob}}},
                        {"test", {{"accuracy", te.accuracy}, {"mean_nll", te.mean_nll}, {"mean_max_prob", te.mean_max_prob}}}};
  if (c) {
    write_matrix_csv(c->expanded(), (dir / "cmatrix.csv").string());
    const auto h = c_row_entropy(*c);
    report["c_row_entropy"] = h;
    report["c_row_entropy_mean"] = mean(h);
    io.out << "mean C-row entropy: " << format_double(mean(h)) << "\n";
  }
  write_json(dir / "report.json", report);
  io.out << "train mean_max_prob=" << format_double(tr.mean_max_prob)
         << " test mean_max_prob=" << format_double(te.mean_max_prob) << "\n"
         << "analysis directory: " << dir.string() << "\n";
  return 0;
}

inline int run_gen_data(const RunConfig& cfg, const std::string& out_flag, Io io) {
  if (cfg.data.source != DataSource::synthetic) throw UsageError("gen-data only generates data=synthetic");
  const auto data = load_data(cfg.data);
  const auto dir = make_run_dir(out_flag, "gen-data", cfg.data.data_seed);
  write_json(dir / "config.json", to_json(cfg));
  write_manifest(dir, "gen-data", to_json(cfg), {});
  write_csv(data.train, (dir / "train.csv").string());
  write_csv(data.test, (dir / "test.csv").string());
  io.out << "wrote " << data.train.size() << " train and " << data.test.size() << " test samples to "
         << dir.string() << "\n";
  return 0;
}

/// Parses argv and dispatches. Exit codes: 0 ok, 1 runtime failure, 2 usage/config error.
inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Io io{out, err};
  CLI::App app{"labelforge: label regularization training lab", "labelforge"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  ConfigFlags train_flags, distill_flags, ablate_flags, gen_flags;
  auto* train_cmd = app.add_subcommand("train", "train a classifier with a label strategy");
  train_flags.attach(*train_cmd);
  auto* distill_cmd = app.add_subcommand("distill", "train a student from a teacher checkpoint or C-matrix");
  distill_flags.attach(*distill_cmd);
  auto* ablate_cmd = app.add_subcommand("ablate", "train with an ablated loss rule (ablation_loss)");
  ablate_flags.attach(*ablate_cmd);
  auto* gen_cmd = app.add_subcommand("gen-data", "write the synthetic paired-Gaussian task as CSV");
  gen_flags.attach(*gen_cmd);

  auto* grad_cmd = app.add_subcommand("gradcheck", "verify analytic gradients against central differences");
  std::size_t gc_k = 5, gc_layers = 2, gc_hidden = 8, gc_batch = 8;
  std::uint64_t gc_seed = 0;
  double gc_step = 1e-5;
  grad_cmd->add_option("--k", gc_k, "number of classes");
  grad_cmd->add_option("--seed", gc_seed, "seed");
  grad_cmd->add_option("--layers", gc_layers, "affine layers (1-3)");
  grad_cmd->add_option("--hidden", gc_hidden, "hidden width");
  grad_cmd->add_option("--batch", gc_batch, "batch size");
  grad_cmd->add_option("--step", gc_step, "finite-difference step");

  auto* analyze_cmd = app.add_subcommand("analyze", "export class-wise probabilities, center distances, C entropies");
  std::string an_run, an_out;
  analyze_cmd->add_option("--run", an_run, "run directory to analyze")->required();
  analyze_cmd->add_option("--out", an_out, "output directory");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (train_cmd->parsed()) {
      return run_training("train", train_flags.load(), train_flags.out, train_flags.config_path, io);
    }
    if (distill_cmd->parsed()) {
      return run_training("distill", distill_flags.load(), distill_flags.out, distill_flags.config_path, io);
    }
    if (ablate_cmd->parsed()) {
      return run_training("ablate", ablate_flags.load(), ablate_flags.out, ablate_flags.config_path, io);
    }
    if (gen_cmd->parsed()) return run_gen_data(gen_flags.load(), gen_flags.out, io);
    if (grad_cmd->parsed()) {
      const auto r = gradcheck(gc_k, gc_seed, gc_layers, gc_hidden, gc_batch, gc_step);
      const double worst = std::max(r.network_error, r.c_error);
      out << "network (term 1) relative error: " << format_double(r.network_error) << " (" << r.kinks_skipped
          << " coordinates skipped at ReLU kinks)\n"
          << "C logits (term 2) relative error: " << format_double(r.c_error) << "\n";
      if (worst >= 1e-6) {
        err << "error: gradient check failed, max relative error " << format_double(worst) << " >= 1e-6\n";
        return 1;
      }
      out << "gradient check passed\n";
      return 0;
    }
    if (analyze_cmd->parsed()) return run_analyze(an_run, an_out, io);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace labelforge::cli
