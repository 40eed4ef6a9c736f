#include "mempert/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "mempert/error.hpp"
#include "mempert/format.hpp"

namespace mempert {
namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool parse_number(const std::string& text, double& value) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* begin = t.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, t.data() + t.size(), value);
  return ec == std::errc() && ptr == t.data() + t.size() && std::isfinite(value);
}

void check_labels(const Dataset& data, const std::string& where) {
  if (data.task == Task::kRegression) return;
  std::set<long> seen;
  for (Index i = 0; i < data.size(); ++i) {
    const double y = data.labels(i);
    if (y != std::floor(y) || y < 0) {
      fail(ErrorCode::kLabelError, where + ": label " + format_double(y) + " is not a class index");
    }
    seen.insert(static_cast<long>(y));
  }
  const long top = seen.empty() ? -1 : *seen.rbegin();
  if (static_cast<long>(seen.size()) != top + 1) {
    fail(ErrorCode::kLabelError, where + ": class labels are not contiguous from 0");
  }
  if (data.task == Task::kBinary && top > 1) {
    fail(ErrorCode::kLabelError, where + ": binary labels must be 0 or 1");
  }
}

Matrix standard_normal(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  }
  return m;
}

// Rows with labels i mod C, then shuffled.
Dataset generate(const SynthConfig& cfg, Index total, std::mt19937_64& rng) {
  const Index d = cfg.dim;
  Dataset data;
  data.features = Matrix::Zero(total, d);
  data.labels = Vector::Zero(total);
  const Matrix z = standard_normal(total, d, rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  switch (cfg.kind) {
    case SynthKind::kLinear: {
      data.task = Task::kRegression;
      data.num_classes = 1;
      const Vector w = standard_normal(d, 1, rng).col(0);
      const Vector eps = standard_normal(total, 1, rng).col(0);
      data.features = z;
      data.labels = z * w + cfg.noise * eps;
      break;
    }
    case SynthKind::kTwoGaussians:
    case SynthKind::kBlobs: {
      const int c_count = cfg.kind == SynthKind::kTwoGaussians ? 2 : cfg.classes;
      data.task = synth_task(cfg.kind, c_count);
      data.num_classes = c_count;
      for (Index i = 0; i < total; ++i) {
        const int c = static_cast<int>(i % c_count);
        const double angle = 2.0 * std::numbers::pi * c / c_count;
        Vector mean = Vector::Zero(d);
        mean(0) = cfg.radius * std::cos(angle);
        if (d > 1) mean(1) = cfg.radius * std::sin(angle);
        const double scale =
            cfg.noise * (cfg.class_noise.empty() ? 1.0 : cfg.class_noise[static_cast<std::size_t>(c)]);
        data.features.row(i) = (mean + scale * z.row(i).transpose()).transpose();
        data.labels(i) = c;
      }
      break;
    }
    case SynthKind::kMoons: {
      data.task = Task::kBinary;
      data.num_classes = 2;
      for (Index i = 0; i < total; ++i) {
        const int c = static_cast<int>(i % 2);
        const double t = std::numbers::pi * unit(rng);
        Vector x = cfg.noise * z.row(i).transpose();
        if (c == 0) {
          x(0) += std::cos(t);
          if (d > 1) x(1) += std::sin(t);
        } else {
          x(0) += 1.0 - std::cos(t);
          if (d > 1) x(1) += 0.5 - std::sin(t);
        }
        data.features.row(i) = x.transpose();
        data.labels(i) = c;
      }
      break;
    }
  }
  std::vector<Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  return data.subset(order);
}

void flip_labels(Dataset& data, double fraction, std::mt19937_64& rng) {
  if (fraction <= 0.0 || data.task == Task::kRegression) return;
  const Index flips = static_cast<Index>(std::llround(fraction * static_cast<double>(data.size())));
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<int> shift(1, data.num_classes - 1);
  for (Index k = 0; k < flips; ++k) {
    const Index i = order[static_cast<std::size_t>(k)];
    data.labels(i) = (data.label_class(i) + shift(rng)) % data.num_classes;
  }
}

}  // namespace

std::string_view synth_kind_name(SynthKind kind) {
  switch (kind) {
    case SynthKind::kLinear: return "linear";
    case SynthKind::kTwoGaussians: return "two_gaussians";
    case SynthKind::kBlobs: return "blobs";
    case SynthKind::kMoons: return "moons";
  }
  return "unknown";
}

SynthKind parse_synth_kind(std::string_view name) {
  if (name == "linear") return SynthKind::kLinear;
  if (name == "two_gaussians") return SynthKind::kTwoGaussians;
  if (name == "blobs") return SynthKind::kBlobs;
  if (name == "moons") return SynthKind::kMoons;
  fail(ErrorCode::kInvalidParameter, "unknown synthetic kind '" + std::string(name) + "'");
}

Task synth_task(SynthKind kind, int classes) {
  switch (kind) {
    case SynthKind::kLinear: return Task::kRegression;
    case SynthKind::kTwoGaussians:
    case SynthKind::kMoons: return Task::kBinary;
    case SynthKind::kBlobs: return classes == 2 ? Task::kBinary : Task::kMulticlass;
  }
  return Task::kBinary;
}

Dataset load_csv(const std::string& path, Task task, double delta) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::kParseError, path + ":1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  if (header.size() < 2 || trim(header.back()) != "y") {
    fail(ErrorCode::kParseError, path + ":1: header must be f0,...,y");
  }
  const Index d = static_cast<Index>(header.size()) - 1;
  for (Index k = 0; k < d; ++k) {
    if (trim(header[static_cast<std::size_t>(k)]) != "f" + std::to_string(k)) {
      fail(ErrorCode::kParseError, path + ":1: expected column f" + std::to_string(k));
    }
  }
  std::vector<double> values;
  std::size_t line_no = 1;
  Index rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (static_cast<Index>(fields.size()) != d + 1) {
      fail(ErrorCode::kParseError, path + ":" + std::to_string(line_no) + ": expected " +
                                       std::to_string(d + 1) + " fields, found " +
                                       std::to_string(fields.size()));
    }
    for (const auto& f : fields) {
      double v = 0.0;
      if (!parse_number(f, v)) {
        fail(ErrorCode::kParseError, path + ":" + std::to_string(line_no) + ": bad number '" + f + "'");
      }
      values.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) fail(ErrorCode::kParseError, path + ": no data rows");
  Dataset data;
  data.task = task;
  data.delta = delta;
  data.features.resize(rows, d);
  data.labels.resize(rows);
  for (Index r = 0; r < rows; ++r) {
    for (Index k = 0; k < d; ++k) data.features(r, k) = values[static_cast<std::size_t>(r * (d + 1) + k)];
    data.labels(r) = values[static_cast<std::size_t>(r * (d + 1) + d)];
  }
  check_labels(data, path);
  data.num_classes = task == Task::kRegression ? 1
                     : task == Task::kBinary   ? 2
                                               : static_cast<int>(data.labels.maxCoeff()) + 1;
  data.validate();
  return data;
}

void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path);
  for (Index k = 0; k < data.dim(); ++k) out << "f" << k << ",";
  out << "y\n";
  for (Index i = 0; i < data.size(); ++i) {
    for (Index k = 0; k < data.dim(); ++k) out << format_double(data.features(i, k)) << ",";
    out << format_double(data.labels(i)) << "\n";
  }
  if (!out) fail(ErrorCode::kIoError, "write failed for " + path);
}

Split synthesize(const SynthConfig& config, double test_fraction, double delta) {
  if (config.n < 1 || config.dim < 1) fail(ErrorCode::kInvalidParameter, "synthetic data needs n, dim >= 1");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    fail(ErrorCode::kInvalidParameter, "test fraction must be in [0, 1)");
  }
  if (config.kind == SynthKind::kBlobs && config.classes < 2) {
    fail(ErrorCode::kInvalidParameter, "blobs need at least 2 classes");
  }
  const int classes = config.kind == SynthKind::kBlobs ? config.classes : 2;
  if (!config.class_noise.empty() && static_cast<int>(config.class_noise.size()) != classes) {
    fail(ErrorCode::kInvalidParameter, "class_noise needs one entry per class");
  }
  if (!(config.label_noise >= 0.0 && config.label_noise <= 1.0)) {
    fail(ErrorCode::kInvalidParameter, "label_noise must be in [0, 1]");
  }
  const Index n_test = config.n_test >= 0
                           ? config.n_test
                           : static_cast<Index>(std::llround(static_cast<double>(config.n) * test_fraction /
                                                             (1.0 - test_fraction)));
  std::mt19937_64 rng(config.seed);
  Dataset all = generate(config, config.n + n_test, rng);
  all.delta = delta;
  std::vector<Index> train_rows(static_cast<std::size_t>(config.n));
  std::iota(train_rows.begin(), train_rows.end(), Index{0});
  std::vector<Index> test_rows(static_cast<std::size_t>(n_test));
  std::iota(test_rows.begin(), test_rows.end(), config.n);
  Split out{all.subset(train_rows), all.subset(test_rows)};
  flip_labels(out.train, config.label_noise, rng);
  return out;
}

Split split_dataset(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    fail(ErrorCode::kInvalidParameter, "test fraction must be in [0, 1)");
  }
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(
      std::ceil((1.0 - test_fraction) * static_cast<double>(data.size())));
  const std::vector<Index> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::vector<Index> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return {data.subset(train), data.subset(test)};
}

void standardize(Split& split) {
  Dataset& train = split.train;
  const Vector mean = train.features.colwise().mean().transpose();
  Vector sd(train.dim());
  for (Index k = 0; k < train.dim(); ++k) {
    const double var = (train.features.col(k).array() - mean(k)).square().mean();
    sd(k) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  auto apply = [&](Dataset& d) {
    for (Index k = 0; k < d.dim(); ++k) {
      d.features.col(k) = ((d.features.col(k).array() - mean(k)) / sd(k)).matrix();
    }
  };
  apply(split.train);
  if (split.test.size() > 0) apply(split.test);
}

Split prepare(const DataConfig& config, double delta) {
  Split out;
  if (config.source == DataConfig::Source::kSynth) {
    out = synthesize(config.synth, config.test_fraction, delta);
  } else if (!config.test_path.empty()) {
    out.train = load_csv(config.path, config.task, delta);
    out.test = load_csv(config.test_path, config.task, delta);
    out.test.num_classes = out.train.num_classes = std::max(out.train.num_classes, out.test.num_classes);
  } else {
    out = split_dataset(load_csv(config.path, config.task, delta), config.test_fraction, config.split_seed);
  }
  if (config.standardize) standardize(out);
  out.train.validate();
  return out;
}

Dataset without_class(const Dataset& data, int c) {
  return data.without(data.indices_of_class(c));
}

}  // namespace mempert
