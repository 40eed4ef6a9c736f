#include <fstream>
#include <set>

#include "mempert/cli.hpp"
#include "mempert/error.hpp"

namespace mempert::cli {
namespace {

using nlohmann::json;

// One JSON object of the config; remembers which keys were read so that the
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail(ErrorCode::kConfigError, label() + ": expected an object");
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return node_.contains(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_number()) fail(ErrorCode::kConfigError, field(key) + ": expected a number");
    return v.get<double>();
  }

  long integer(const std::string& key, long fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_number_integer()) fail(ErrorCode::kConfigError, field(key) + ": expected an integer");
    return v.get<long>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long>() < 0)) {
      fail(ErrorCode::kConfigError, field(key) + ": expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_boolean()) fail(ErrorCode::kConfigError, field(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_string()) fail(ErrorCode::kConfigError, field(key) + ": expected a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key) {
    std::vector<double> out;
    if (!has(key)) return out;
    const json& v = node_.at(key);
    if (!v.is_array()) fail(ErrorCode::kConfigError, field(key) + ": expected an array of numbers");
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (!v[k].is_number()) {
        fail(ErrorCode::kConfigError, field(key) + "[" + std::to_string(k) + "]: expected a number");
      }
      out.push_back(v[k].get<double>());
    }
    return out;
  }

  std::vector<Index> indices(const std::string& key) {
    std::vector<Index> out;
    if (!has(key)) return out;
    const json& v = node_.at(key);
    if (!v.is_array()) fail(ErrorCode::kConfigError, field(key) + ": expected an array of integers");
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (!v[k].is_number_integer() || v[k].get<long>() < 0) {
        fail(ErrorCode::kConfigError,
             field(key) + "[" + std::to_string(k) + "]: expected a non-negative integer");
      }
      out.push_back(v[k].get<Index>());
    }
    return out;
  }

  std::optional<Section> child(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return Section(node_.at(key), field(key));
  }

  // Runs `parse` on a string field and turns library errors into config errors.
  template <typename Parse>
  auto choice(const std::string& key, const std::string& fallback, Parse parse) {
    const std::string value = string(key, fallback);
    try {
      return parse(value);
    } catch (const Error& e) {
      fail(ErrorCode::kConfigError, field(key) + ": " + std::string(e.what()));
    }
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!used_.count(it.key())) fail(ErrorCode::kConfigError, field(it.key()) + ": unknown key");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }

  const json& node_;
  std::string path_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) fail(ErrorCode::kConfigError, field + ": " + what);
}

void parse_data(Section& s, ExperimentConfig& cfg) {
  DataConfig& d = cfg.data;
  const std::string source = s.string("source", "synth");
  require(source == "synth" || source == "csv", s.field("source"), "expected \"synth\" or \"csv\"");
  d.source = source == "csv" ? DataConfig::Source::kCsv : DataConfig::Source::kSynth;
  d.path = s.string("path", "");
  d.test_path = s.string("test_path", "");
  d.synth.kind = s.choice("kind", "blobs", [](const std::string& v) { return parse_synth_kind(v); });
  d.synth.n = s.integer("n", 200);
  d.synth.n_test = s.integer("n_test", -1);
  d.synth.dim = s.integer("dim", 2);
  d.synth.classes = static_cast<int>(s.integer("classes", 2));
  d.synth.noise = s.number("noise", 1.0);
  d.synth.class_noise = s.numbers("class_noise");
  d.synth.label_noise = s.number("label_noise", 0.0);
  d.synth.radius = s.number("radius", 3.0);
  if (s.has("seed")) {
    d.synth.seed = s.unsigned_integer("seed", 0);
    cfg.data_seed_set = true;
  }
  d.test_fraction = s.number("test_fraction", 0.25);
  d.standardize = s.boolean("standardize", true);
  const std::string default_task(task_name(synth_task(d.synth.kind, d.synth.classes)));
  d.task = s.choice("task", default_task, [](const std::string& v) { return parse_task(v); });

  require(d.synth.n >= 1, s.field("n"), "must be >= 1");
  require(d.synth.dim >= 1, s.field("dim"), "must be >= 1");
  require(d.synth.classes >= 2, s.field("classes"), "must be >= 2");
  require(d.synth.noise >= 0.0, s.field("noise"), "must be >= 0");
  require(d.test_fraction >= 0.0 && d.test_fraction < 1.0, s.field("test_fraction"), "must be in [0, 1)");
  require(d.synth.label_noise >= 0.0 && d.synth.label_noise <= 1.0, s.field("label_noise"),
          "must be in [0, 1]");
  if (d.source == DataConfig::Source::kCsv) require(!d.path.empty(), s.field("path"), "required for csv data");
  if (d.source == DataConfig::Source::kSynth) {
    require(d.task == synth_task(d.synth.kind, d.synth.classes), s.field("task"),
            "does not match the synthetic generator");
  }
  s.finish();
}

void parse_model(Section& s, ModelConfig& m) {
  if (s.has("architecture")) {
    m.architecture = s.choice("architecture", "", [](const std::string& v) { return parse_architecture(v); });
  }
  if (s.has("hidden")) m.hidden = s.indices("hidden");
  m.delta = s.number("delta", m.delta);
  m.intercept = s.boolean("intercept", m.intercept);
  require(m.delta >= 0.0, s.field("delta"), "must be >= 0");
  for (Index h : m.hidden) require(h >= 1, s.field("hidden"), "widths must be >= 1");
  s.finish();
}

void parse_trainer(Section& s, TrainerConfig& t) {
  t.algorithm = s.choice("algorithm", std::string(algorithm_name(t.algorithm)),
                         [](const std::string& v) { return parse_algorithm(v); });
  t.lr = s.number("lr", t.lr);
  t.lr_min = s.number("lr_min", 0.0);
  const std::string schedule = s.string("schedule", "constant");
  require(schedule == "constant" || schedule == "cosine", s.field("schedule"),
          "expected \"constant\" or \"cosine\"");
  t.cosine = schedule == "cosine";
  t.epochs = static_cast<int>(s.integer("epochs", t.epochs));
  Hyper& h = t.hyper;
  h.batch_size = s.integer("batch_size", 0);
  h.beta1 = s.number("beta1", h.beta1);
  h.beta2 = s.number("beta2", h.beta2);
  h.h0 = s.number("h0", h.h0);
  h.eps = s.number("eps", h.eps);
  h.momentum = s.number("momentum", h.momentum);
  h.mc_samples = static_cast<int>(s.integer("mc_samples", h.mc_samples));
  h.init_scale = s.number("init_scale", h.init_scale);
  require(t.epochs >= 1, s.field("epochs"), "must be >= 1");
  require(t.lr > 0.0, s.field("lr"), "must be > 0");
  require(t.lr_min >= 0.0 && t.lr_min <= t.lr, s.field("lr_min"), "must be in [0, lr]");
  require(h.batch_size >= 0, s.field("batch_size"), "must be >= 0");
  require(h.beta1 >= 0.0 && h.beta1 < 1.0, s.field("beta1"), "must be in [0, 1)");
  require(h.beta2 >= 0.0 && h.beta2 < 1.0, s.field("beta2"), "must be in [0, 1)");
  require(h.h0 > 0.0, s.field("h0"), "must be > 0");
  require(h.eps > 0.0, s.field("eps"), "must be > 0");
  require(h.momentum >= 0.0 && h.momentum < 1.0, s.field("momentum"), "must be in [0, 1)");
  require(h.mc_samples >= 1, s.field("mc_samples"), "must be >= 1");
  require(h.init_scale >= 0.0, s.field("init_scale"), "must be >= 0");
  s.finish();
}

void parse_estimator(Section& s, EstimatorConfig& e) {
  e.view = s.string("view", e.view);
  require(e.view == "auto" || e.view == "identity" || e.view == "full_hessian" || e.view == "diag_ggn",
          s.field("view"), "expected auto, identity, full_hessian or diag_ggn");
  e.allow_mismatch = s.boolean("allow_mismatch", false);
  e.eval.kind = s.choice("eval_mode", "mean", [](const std::string& v) { return parse_eval_mode(v); });
  e.eval.samples = static_cast<int>(s.integer("eval_samples", 1));
  require(e.eval.samples >= 1, s.field("eval_samples"), "must be >= 1");
  const std::string rho = s.string("rho_policy", "one");
  require(rho == "one" || rho == "trainer", s.field("rho_policy"), "expected \"one\" or \"trainer\"");
  e.rho_from_trainer = rho == "trainer";
  const std::string group = s.string("group_mode", "diag");
  require(group == "diag" || group == "full", s.field("group_mode"), "expected \"diag\" or \"full\"");
  e.group_mode = group == "full" ? GroupMode::kFull : GroupMode::kDiag;
  e.group_cap = s.integer("group_cap", kDefaultGroupCap);
  require(e.group_cap >= 1, s.field("group_cap"), "must be >= 1");
  const std::string loco = s.string("loco_mode", "single_gradient");
  require(loco == "single_gradient" || loco == "group_sum", s.field("loco_mode"),
          "expected \"single_gradient\" or \"group_sum\"");
  e.loco_mode = loco == "group_sum" ? SubsetMode::kGroupSum : SubsetMode::kSingleGradient;
  s.finish();
}

void parse_experiment(Section& s, ExperimentSettings& x) {
  x.removals = static_cast<int>(s.integer("removals", x.removals));
  x.group_size = static_cast<int>(s.integer("group_size", x.group_size));
  x.loco = s.boolean("loco", false);
  x.deltas = s.numbers("deltas");
  x.delta_min = s.number("delta_min", x.delta_min);
  x.delta_max = s.number("delta_max", x.delta_max);
  x.delta_points = static_cast<int>(s.integer("delta_points", x.delta_points));
  x.evolve_examples = s.indices("evolve_examples");
  x.retrain.epochs = static_cast<int>(s.integer("retrain_epochs", x.retrain.epochs));
  x.retrain.lr = s.number("retrain_lr", x.retrain.lr);
  x.retrain.max_newton_iterations = static_cast<int>(s.integer("retrain_newton_iterations",
                                                               x.retrain.max_newton_iterations));
  require(x.removals >= 1, s.field("removals"), "must be >= 1");
  require(x.group_size >= 1, s.field("group_size"), "must be >= 1");
  require(x.delta_min > 0.0 && x.delta_max >= x.delta_min, s.field("delta_min"),
          "need 0 < delta_min <= delta_max");
  require(x.delta_points >= 2, s.field("delta_points"), "must be >= 2");
  for (double d : x.deltas) require(d >= 0.0, s.field("deltas"), "entries must be >= 0");
  require(x.retrain.epochs >= 1, s.field("retrain_epochs"), "must be >= 1");
  require(x.retrain.lr > 0.0, s.field("retrain_lr"), "must be > 0");
  s.finish();
}

// Curvature the trainer itself maintains; empty for adaptive methods.
std::string native_view(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::kSgd: return "identity";
    case Algorithm::kNewton:
    case Algorithm::kOnlineNewton: return "full_hessian";
    case Algorithm::kOnlineNewtonDiag:
    case Algorithm::kIblr: return "diag_ggn";
    case Algorithm::kAdaptive: return "";
  }
  return "";
}

void check_consistency(const ExperimentConfig& cfg) {
  const EstimatorConfig& e = cfg.estimator;
  if (e.view != "auto" && !e.allow_mismatch && e.view != native_view(cfg.trainer.algorithm)) {
    fail(ErrorCode::kConfigError, "estimator.view: " + e.view + " does not match trainer " +
                                      std::string(algorithm_name(cfg.trainer.algorithm)) +
                                      " (set estimator.allow_mismatch to override)");
  }
  Hyper h = cfg.trainer.hyper;
  h.schedule = LrSchedule::constant(cfg.trainer.lr);
  try {
    h.validate(cfg.trainer.algorithm);
  } catch (const Error& err) {
    fail(ErrorCode::kConfigError, "trainer: " + std::string(err.what()));
  }
}

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  Section root(j, "");
  cfg.seed = root.unsigned_integer("seed", 0);
  cfg.output_dir = root.string("output_dir", ".");
  if (auto s = root.child("data")) parse_data(*s, cfg);
  if (auto s = root.child("model")) parse_model(*s, cfg.model);
  if (auto s = root.child("trainer")) parse_trainer(*s, cfg.trainer);
  if (auto s = root.child("estimator")) parse_estimator(*s, cfg.estimator);
  if (auto s = root.child("experiment")) parse_experiment(*s, cfg.experiment);
  root.finish();
  check_consistency(cfg);
  if (!cfg.data_seed_set) cfg.data.synth.seed = cfg.seed;
  cfg.data.split_seed = cfg.data.synth.seed;
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kConfigError, "cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfigError, path + ": " + e.what());
  }
  return parse_config(j);
}

void apply_overrides(ExperimentConfig& config, std::optional<std::uint64_t> seed,
                     std::optional<std::string> output_dir) {
  if (seed) {
    config.seed = *seed;
    if (!config.data_seed_set) {
      config.data.synth.seed = *seed;
      config.data.split_seed = *seed;
    }
  }
  if (output_dir) config.output_dir = *output_dir;
}

ExitCode exit_code_for(const Error& error) {
  switch (error.code()) {
    case ErrorCode::kConfigError:
    case ErrorCode::kInvalidParameter:
    case ErrorCode::kParseError:
    case ErrorCode::kLabelError:
    case ErrorCode::kIoError:
    case ErrorCode::kUnsupportedCurvature:
    case ErrorCode::kUnsupportedFamily:
    case ErrorCode::kResourceLimit:
      return ExitCode::kConfigError;
    default:
      return ExitCode::kNumericalFailure;
  }
}

}  // namespace mempert::cli
