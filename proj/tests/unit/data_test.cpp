#include "mempert/data.hpp"

#include <filesystem>
#include <functional>
#include <fstream>
#include <set>

#include "gtest/gtest.h"
#include "mempert/error.hpp"

namespace mempert {
namespace {

namespace fs = std::filesystem;

std::string write_temp(const std::string& name, const std::string& content) {
  const fs::path path = fs::temp_directory_path() / ("mempert_data_test_" + name);
  std::ofstream(path) << content;
  return path.string();
}

std::string error_message(const std::function<void()>& fn, ErrorCode expected) {
  try {
    fn();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), expected) << e.what();
    return e.what();
  }
  ADD_FAILURE() << "expected an error";
  return {};
}

TEST(Csv, LoadsWellFormedFile) {
  const std::string path = write_temp("ok.csv", "f0,f1,y\n1,2,0\n3,4,1\n\n5,6,2\n");
  const Dataset data = load_csv(path, Task::kMulticlass, 0.5);
  EXPECT_EQ(data.size(), 3);
  EXPECT_EQ(data.dim(), 2);
  EXPECT_EQ(data.num_classes, 3);
  EXPECT_EQ(data.delta, 0.5);
  EXPECT_EQ(data.features(2, 1), 6.0);
}

TEST(Csv, ReportsTheLineOfAMalformedRow) {
  const std::string bad = write_temp("bad.csv", "f0,y\n1,0\n2\n");
  EXPECT_NE(error_message([&] { load_csv(bad, Task::kBinary); }, ErrorCode::kParseError).find(":3:"),
            std::string::npos);
  const std::string nan = write_temp("nan.csv", "f0,y\n1,0\nabc,1\n");
  EXPECT_NE(error_message([&] { load_csv(nan, Task::kBinary); }, ErrorCode::kParseError).find(":3:"),
            std::string::npos);
  const std::string header = write_temp("header.csv", "a,b\n1,0\n");
  error_message([&] { load_csv(header, Task::kBinary); }, ErrorCode::kParseError);
  error_message([] { load_csv("/nonexistent/file.csv", Task::kBinary); }, ErrorCode::kIoError);
}

TEST(Csv, RejectsBadClassLabels) {
  const std::string fractional = write_temp("frac.csv", "f0,y\n1,0.5\n2,1\n");
  error_message([&] { load_csv(fractional, Task::kBinary); }, ErrorCode::kLabelError);
  const std::string gap = write_temp("gap.csv", "f0,y\n1,0\n2,2\n");
  error_message([&] { load_csv(gap, Task::kMulticlass); }, ErrorCode::kLabelError);
}

TEST(Csv, SaveLoadRoundTrip) {
  SynthConfig config;
  config.n = 30;
  config.seed = 4;
  const Split split = synthesize(config, 0.0, 1.0);
  const std::string path = (fs::temp_directory_path() / "mempert_data_test_round.csv").string();
  save_csv(split.train, path);
  const Dataset back = load_csv(path, split.train.task, 1.0);
  EXPECT_EQ(back.features, split.train.features);
  EXPECT_EQ(back.labels, split.train.labels);
}

TEST(Synth, DeterministicInSeedAndSized) {
  SynthConfig config;
  config.kind = SynthKind::kBlobs;
  config.n = 120;
  config.n_test = 40;
  config.classes = 4;
  config.dim = 3;
  config.seed = 9;
  const Split a = synthesize(config, 0.25, 1.0);
  const Split b = synthesize(config, 0.25, 1.0);
  EXPECT_EQ(a.train.features, b.train.features);
  EXPECT_EQ(a.test.labels, b.test.labels);
  EXPECT_EQ(a.train.size(), 120);
  EXPECT_EQ(a.test.size(), 40);
  EXPECT_EQ(a.train.task, Task::kMulticlass);
  std::set<int> classes;
  for (Index i = 0; i < a.train.size(); ++i) classes.insert(a.train.label_class(i));
  EXPECT_EQ(classes.size(), 4u);
  config.seed = 10;
  EXPECT_NE(synthesize(config, 0.25, 1.0).train.features, a.train.features);
}

TEST(Synth, DerivedTestSize) {
  SynthConfig config;
  config.kind = SynthKind::kTwoGaussians;
  config.n = 300;
  const Split s = synthesize(config, 0.25, 1.0);
  EXPECT_EQ(s.train.size(), 300);
  EXPECT_EQ(s.test.size(), 100);
  EXPECT_EQ(s.train.task, Task::kBinary);
}

TEST(Synth, EveryKindValidates) {
  for (SynthKind kind : {SynthKind::kLinear, SynthKind::kTwoGaussians, SynthKind::kBlobs, SynthKind::kMoons}) {
    SynthConfig config;
    config.kind = kind;
    config.n = 50;
    config.seed = 2;
    const Split s = synthesize(config, 0.2, 1.0);
    EXPECT_NO_THROW(s.train.validate()) << synth_kind_name(kind);
    EXPECT_EQ(s.train.task, synth_task(kind, config.classes));
    EXPECT_EQ(parse_synth_kind(synth_kind_name(kind)), kind);
  }
}

TEST(Synth, LabelNoiseFlipsOnlyTraining) {
  SynthConfig config;
  config.kind = SynthKind::kTwoGaussians;
  config.n = 400;
  config.n_test = 100;
  config.seed = 5;
  const Split clean = synthesize(config, 0.25, 1.0);
  config.label_noise = 0.5;
  const Split noisy = synthesize(config, 0.25, 1.0);
  EXPECT_EQ(clean.train.features, noisy.train.features);
  EXPECT_EQ(clean.test.labels, noisy.test.labels);
  const Index flipped = (clean.train.labels - noisy.train.labels).cwiseAbs().sum();
  EXPECT_GT(flipped, 100);
  EXPECT_LT(flipped, 300);
}

TEST(Synth, RejectsBadSettings) {
  SynthConfig config;
  config.kind = SynthKind::kBlobs;
  config.classes = 3;
  config.class_noise = {1.0, 2.0};
  error_message([&] { synthesize(config, 0.25, 1.0); }, ErrorCode::kInvalidParameter);
  config.class_noise.clear();
  error_message([&] { synthesize(config, 1.0, 1.0); }, ErrorCode::kInvalidParameter);
  config.label_noise = 2.0;
  error_message([&] { synthesize(config, 0.25, 1.0); }, ErrorCode::kInvalidParameter);
}

TEST(Split, CeilingTrainFractionAndDisjoint) {
  SynthConfig config;
  config.kind = SynthKind::kLinear;
  config.n = 10;
  config.seed = 3;
  const Dataset all = synthesize(config, 0.0, 1.0).train;
  const Split s = split_dataset(all, 0.25, 7);
  EXPECT_EQ(s.train.size(), 8);
  EXPECT_EQ(s.test.size(), 2);
  std::set<double> seen;
  for (Index i = 0; i < s.train.size(); ++i) seen.insert(s.train.labels(i));
  for (Index i = 0; i < s.test.size(); ++i) EXPECT_EQ(seen.count(s.test.labels(i)), 0u);
  EXPECT_EQ(split_dataset(all, 0.25, 7).train.labels, s.train.labels);
}

TEST(Standardize, UsesTrainingStatistics) {
  Split s;
  s.train.task = s.test.task = Task::kRegression;
  s.train.features = Matrix{{1.0, 5.0}, {3.0, 5.0}};
  s.train.labels = Vector{{0.0, 1.0}};
  s.test.features = Matrix{{5.0, 6.0}};
  s.test.labels = Vector{{0.0}};
  standardize(s);
  EXPECT_EQ(s.train.features, (Matrix{{-1.0, 0.0}, {1.0, 0.0}}));
  EXPECT_EQ(s.test.features, (Matrix{{3.0, 1.0}}));
}

TEST(Prepare, CsvWithoutTestFileIsSplit) {
  const std::string path = write_temp("prep.csv", "f0,y\n1,0\n2,1\n3,0\n4,1\n5,0\n6,1\n7,0\n8,1\n");
  DataConfig config;
  config.source = DataConfig::Source::kCsv;
  config.path = path;
  config.task = Task::kBinary;
  config.test_fraction = 0.25;
  config.split_seed = 1;
  const Split s = prepare(config, 2.0);
  EXPECT_EQ(s.train.size(), 6);
  EXPECT_EQ(s.test.size(), 2);
  EXPECT_NEAR(s.train.features.col(0).mean(), 0.0, 1e-12);
  EXPECT_EQ(s.train.delta, 2.0);
}

TEST(WithoutClass, DropsEveryMember) {
  SynthConfig config;
  config.n = 90;
  config.classes = 3;
  config.seed = 8;
  const Dataset train = synthesize(config, 0.0, 1.0).train;
  const Dataset rest = without_class(train, 1);
  EXPECT_EQ(rest.size(), train.size() - static_cast<Index>(train.indices_of_class(1).size()));
  EXPECT_TRUE(rest.indices_of_class(1).empty());
}

}  // namespace
}  // namespace mempert
