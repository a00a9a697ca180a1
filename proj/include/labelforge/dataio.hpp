// Datasets: synthetic Gaussian mixtures, IDX and CSV loaders, stratified split.
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "labelforge/numerics.hpp"

namespace labelforge {

struct Dataset {
  Matrix features;                  // N x D
  std::vector<std::size_t> labels;  // N, each < num_classes
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (auto y : labels) ++counts[y];
    return counts;
  }

  /// Checks label range, row count, and that every class has a sample.
  void validate() const {
    if (features.rows() != labels.size()) {
      throw ShapeError("dataset has " + std::to_string(features.rows()) + " feature rows but " +
                       std::to_string(labels.size()) + " labels");
    }
    for (auto y : labels) {
      if (y >= num_classes) {
        throw std::invalid_argument("label " + std::to_string(y) + " out of range for K=" +
                                    std::to_string(num_classes));
      }
    }
    const auto counts = class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] == 0) throw std::invalid_argument("class " + std::to_string(c) + " has no samples");
    }
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.num_classes = num_classes;
    out.features = Matrix(indices.size(), dim());
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto src = features.row(indices[i]);
      std::copy(src.begin(), src.end(), out.features.row(i).begin());
      out.labels.push_back(labels[indices[i]]);
    }
    return out;
  }
};

struct GaussianSpec {
  Matrix means;  // K x D
  double stddev = 1.0;
  std::size_t samples_per_class = 100;
  std::uint64_t seed = 0;
};

/// Four classes in two tight pairs: (0,0),(1,0) and (10,10),(11,10).
inline GaussianSpec paired_gaussian_spec(double stddev, std::size_t samples_per_class,
                                         std::uint64_t seed) {
  return {Matrix{{0, 0}, {1, 0}, {10, 10}, {11, 10}}, stddev, samples_per_class, seed};
}

/// Samples class-major: all of class 0, then class 1, and so on.
inline Dataset generate_gaussian(const GaussianSpec& spec) {
  const std::size_t k = spec.means.rows();
  const std::size_t d = spec.means.cols();
  if (k < 2) throw std::invalid_argument("generate_gaussian: need at least 2 classes");
  if (!(spec.stddev >= 0.0)) throw std::invalid_argument("generate_gaussian: stddev must be >= 0");
  if (spec.samples_per_class == 0) throw std::invalid_argument("generate_gaussian: samples_per_class must be positive");

  Rng rng(spec.seed);
  Dataset ds;
  ds.num_classes = k;
  ds.features = Matrix(k * spec.samples_per_class, d);
  ds.labels.reserve(k * spec.samples_per_class);
  std::size_t r = 0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        ds.features(r, j) = spec.means(c, j) + spec.stddev * rng.normal();
      }
      ds.labels.push_back(c);
    }
  }
  return ds;
}

// --- IDX ---------------------------------------------------------------------

class IdxError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, truncated, count_mismatch };
  IdxError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                               const std::string& path) {
  if (buf.size() < offset + 4) {
    throw IdxError(IdxError::Kind::truncated, path + ": truncated header");
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

}  // namespace detail

/// Loads an IDX image/label pair. Pixels are scaled by 1/255; images are flattened
/// row-major to N x (H*W). K is 1 + the largest label seen.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file_bytes(images_path);
  const auto lab = detail::read_file_bytes(labels_path);

  const auto img_magic = detail::read_be32(img, 0, images_path);
  if (img_magic != kIdxImageMagic) {
    throw IdxError(IdxError::Kind::bad_magic, images_path + ": expected image magic 0x00000803");
  }
  const auto lab_magic = detail::read_be32(lab, 0, labels_path);
  if (lab_magic != kIdxLabelMagic) {
    throw IdxError(IdxError::Kind::bad_magic, labels_path + ": expected label magic 0x00000801");
  }

  const std::size_t n = detail::read_be32(img, 4, images_path);
  const std::size_t h = detail::read_be32(img, 8, images_path);
  const std::size_t w = detail::read_be32(img, 12, images_path);
  const std::size_t n_labels = detail::read_be32(lab, 4, labels_path);
  if (n != n_labels) {
    throw IdxError(IdxError::Kind::count_mismatch,
                   "image count " + std::to_string(n) + " != label count " + std::to_string(n_labels));
  }
  const std::size_t pixels = h * w;
  if (img.size() < 16 + n * pixels) {
    throw IdxError(IdxError::Kind::truncated, images_path + ": truncated pixel payload");
  }
  if (lab.size() < 8 + n) {
    throw IdxError(IdxError::Kind::truncated, labels_path + ": truncated label payload");
  }

  Dataset ds;
  ds.features = Matrix(n, pixels);
  ds.labels.resize(n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) {
      ds.features(i, p) = static_cast<double>(img[16 + i * pixels + p]) / 255.0;
    }
    ds.labels[i] = lab[8 + i];
    k = std::max(k, ds.labels[i] + 1);
  }
  ds.num_classes = k;
  return ds;
}

// --- CSV ---------------------------------------------------------------------

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct CsvDataset {
  Dataset data;
  /// original label value for each dense class index, in first-appearance order
  std::vector<std::string> label_names;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a header-led numeric CSV. Labels are remapped to 0..K-1 by first appearance.
inline CsvDataset load_csv(const std::string& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(1, path + " is empty");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);
  const auto it = std::find(header.begin(), header.end(), label_column);
  if (it == header.end()) throw ParseError(1, "no column named '" + label_column + "'");
  const std::size_t label_idx = static_cast<std::size_t>(it - header.begin());
  const std::size_t width = header.size();

  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::map<std::string, std::size_t> remap;
  std::vector<std::string> names;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != width) {
      throw ParseError(line_no, "expected " + std::to_string(width) + " cells, found " +
                                    std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < width; ++c) {
      const auto cell = detail::trim(cells[c]);
      const auto v = detail::parse_double(cell);
      if (!v) throw ParseError(line_no, "non-numeric cell '" + cell + "' in column " + header[c]);
      if (c == label_idx) {
        auto [pos, inserted] = remap.try_emplace(cell, names.size());
        if (inserted) names.push_back(cell);
        labels.push_back(pos->second);
      } else {
        values.push_back(*v);
      }
    }
  }
  if (labels.empty()) throw ParseError(line_no, path + " has no data rows");

  CsvDataset out;
  out.data.features = Matrix(labels.size(), width - 1, std::move(values));
  out.data.labels = std::move(labels);
  out.data.num_classes = names.size();
  out.label_names = std::move(names);
  return out;
}

/// Writes features as x0..x{D-1} plus a trailing `label` column, full round-trip precision.
inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (std::size_t j = 0; j < ds.dim(); ++j) out << 'x' << j << ',';
  out << "label\n";
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, ds.features(i, j));
      out.write(buf, end - buf);
      out << ',';
    }
    out << ds.labels[i] << '\n';
  }
}

// --- split -------------------------------------------------------------------

struct SplitIndices {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
};

/// Stratified index split: per class, round(n_c * fraction) samples go to `first`.
inline SplitIndices split_indices(const Dataset& d, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("split: fraction must be in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(d.num_classes);
  for (std::size_t i = 0; i < d.size(); ++i) by_class[d.labels[i]].push_back(i);

  Rng rng(seed);
  SplitIndices out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2) {
      throw std::invalid_argument("split: class " + std::to_string(c) + " has fewer than 2 samples");
    }
    rng.shuffle(idx);
    auto take = static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * train_fraction));
    take = std::clamp<std::size_t>(take, 1, idx.size() - 1);
    out.first.insert(out.first.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    out.second.insert(out.second.end(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end());
  }
  std::sort(out.first.begin(), out.first.end());
  std::sort(out.second.begin(), out.second.end());
  return out;
}

inline std::pair<Dataset, Dataset> split(const Dataset& d, double train_fraction, std::uint64_t seed) {
  const auto idx = split_indices(d, train_fraction, seed);
  return {d.subset(idx.first), d.subset(idx.second)};
}

}  // namespace labelforge
