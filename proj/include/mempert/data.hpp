#pragma once
// Dataset ingestion and seeded synthetic generators.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mempert/models.hpp"

namespace mempert {

enum class SynthKind { kLinear, kTwoGaussians, kBlobs, kMoons };

std::string_view synth_kind_name(SynthKind kind);
SynthKind parse_synth_kind(std::string_view name);
// Task produced by each generator (blobs: binary when classes == 2).
Task synth_task(SynthKind kind, int classes);

struct SynthConfig {
  SynthKind kind = SynthKind::kBlobs;
  Index n = 200;           // training rows
  Index n_test = -1;       // held-out rows; -1 derives it from the test fraction
  Index dim = 2;
  int classes = 3;         // blobs only
  double noise = 1.0;
  std::vector<double> class_noise;  // blobs: per-class multiplier on `noise`
  double label_noise = 0.0;         // fraction of training labels flipped
  double radius = 3.0;              // blobs: class means on this circle
  std::uint64_t seed = 0;
};

struct Split {
  Dataset train;
  Dataset test;
};

struct DataConfig {
  enum class Source { kCsv, kSynth };
  Source source = Source::kSynth;
  std::string path;       // csv
  std::string test_path;  // csv, optional; otherwise split by test_fraction
  Task task = Task::kBinary;
  SynthConfig synth;
  double test_fraction = 0.25;
  bool standardize = true;
  std::uint64_t split_seed = 0;
};

// Header "f0,...,f{D-1},y". Malformed rows raise ParseError with the 1-based
// line number; class labels must be integers covering 0..C-1.
Dataset load_csv(const std::string& path, Task task, double delta = 1.0);
void save_csv(const Dataset& data, const std::string& path);

Split synthesize(const SynthConfig& config, double test_fraction, double delta);

// Seeded shuffle, then the first ceil((1 - f) N) rows train.
Split split_dataset(const Dataset& data, double test_fraction, std::uint64_t seed);

// Centers and scales every feature with the training statistics; constant
// features are only centered.
void standardize(Split& split);

Split prepare(const DataConfig& config, double delta);

Dataset without_class(const Dataset& data, int c);

}  // namespace mempert
