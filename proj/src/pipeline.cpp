#include "fmm/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <sstream>

#include "fmm/checkpoint_io.hpp"
#include "fmm/error.hpp"
#include "fmm/faithfulness.hpp"
#include "fmm/ims.hpp"
#include "fmm/io.hpp"
#include "fmm/masf.hpp"
#include "fmm/rng.hpp"
#include "fmm/stats.hpp"
#include "fmm/svg.hpp"

namespace fmm::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream ids for derive_seed(model seed, stream).
constexpr std::uint64_t kCalibrationStream = 3;
constexpr std::uint64_t kEvaluationStream = 5;
constexpr std::uint64_t kOodStream = 100;
constexpr std::uint64_t kSummarySeed = 0x5eed5eedULL;

const char* kBaselineRole = "baseline";
const char* kMeasureRole = "measure";

std::string num(double v) { return json(v).dump(); }

json provenance(const ExperimentConfig& c) {
  return {{"tool_version", kToolVersion}, {"schema_version", kSchemaVersion}, {"config_hash", c.hash()},
          {"seeds", c.seeds}};
}

void write_json(const fs::path& path, const json& j) { io::atomic_write(path, j.dump(2) + "\n"); }

void require(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw DependencyError("missing artifact " + path.string() + "; run `fmm " + producer + "` first", producer);
  }
}

void check_hash(const json& j, const ExperimentConfig& c, const fs::path& path) {
  const std::string expected = c.hash();
  const std::string found = j.is_object() && j.contains("config_hash") && j["config_hash"].is_string()
                                ? j["config_hash"].get<std::string>()
                                : "";
  if (found != expected) {
    throw ConfigError("artifact " + path.string() + " was produced under config hash '" + found +
                      "', current config hash is " + expected);
  }
}

json read_json_artifact(const fs::path& path, const ExperimentConfig& c, const std::string& producer) {
  require(path, producer);
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw FormatError("cannot parse " + path.string() + ": " + e.what());
  }
  check_hash(j, c, path);
  return j;
}

std::vector<json> read_jsonl_artifact(const fs::path& path, const ExperimentConfig& c, const std::string& producer) {
  require(path, producer);
  std::istringstream in(io::read_file(path));
  std::vector<json> out;
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (!line.empty()) out.push_back(json::parse(line));
    }
  } catch (const json::exception& e) {
    throw FormatError("cannot parse " + path.string() + ": " + e.what());
  }
  if (out.empty()) throw FormatError(path.string() + " is empty");
  check_hash(out.front(), c, path);
  return out;
}

fs::path data_path(const fs::path& out, data::Split s) { return out / "data" / (data::to_string(s) + ".jsonl"); }

std::string model_stem(const StrategyPair& p, std::uint64_t seed) {
  return p.tag() + "_seed" + std::to_string(seed);
}
fs::path checkpoint_path(const fs::path& out, const StrategyPair& p, std::uint64_t seed) {
  return out / "models" / (model_stem(p, seed) + ".ckpt");
}
fs::path train_report_path(const fs::path& out, const StrategyPair& p, std::uint64_t seed) {
  return out / "models" / (model_stem(p, seed) + ".json");
}
fs::path calibration_path(const fs::path& out, const StrategyPair& p, std::uint64_t seed) {
  return out / "ood" / (model_stem(p, seed) + ".masf");
}
fs::path ood_report_path(const fs::path& out) { return out / "ood" / "ood_report.json"; }
fs::path curves_path(const fs::path& out) { return out / "faithfulness" / "curves.jsonl"; }

data::Dataset load_split(const fs::path& out, const ExperimentConfig& c, data::Split s) {
  const auto path = data_path(out, s);
  require(path, "gen-data");
  json header;
  auto ds = data::load_dataset(path, &header);
  check_hash(header.value("extra", json::object()), c, path);
  return ds;
}

ModelCheckpoint load_model(const fs::path& out, const ExperimentConfig& c, const StrategyPair& p,
                           std::uint64_t seed) {
  const auto path = checkpoint_path(out, p, seed);
  require(path, "train");
  json extra;
  auto model = load_checkpoint(path, &extra);
  check_hash(extra, c, path);
  return model;
}

masf::MaSFCalibration load_cal(const fs::path& out, const ExperimentConfig& c, const StrategyPair& p,
                               std::uint64_t seed) {
  const auto path = calibration_path(out, p, seed);
  require(path, "ood");
  json extra;
  auto cal = masf::load_calibration(path, &extra);
  check_hash(extra, c, path);
  return cal;
}

faith::CurveOptions curve_options(const ExperimentConfig& c) {
  faith::CurveOptions o;
  o.steps = c.curve_steps;
  o.alpha = c.alpha;
  o.explain.ig_samples = c.ig_samples;
  o.explain.beam_width = c.beam_width;
  o.metric = c.hyperparams.metric;
  return o;
}

std::uint64_t measure_stream(const std::string& measure) { return io::fnv1a(measure); }
std::uint64_t baseline_stream() { return io::fnv1a("random-baseline"); }

struct SeedCurves {
  std::uint64_t model_seed = 0;
  faith::MaskingCurve baseline;
  std::map<std::string, faith::MaskingCurve> measures;
};

std::vector<SeedCurves> read_curves(const fs::path& out, const ExperimentConfig& c) {
  const auto lines = read_jsonl_artifact(curves_path(out), c, "faithfulness");
  std::vector<SeedCurves> per_seed;
  for (auto seed : c.seeds) per_seed.push_back(SeedCurves{seed, {}, {}});
  std::vector<bool> has_baseline(per_seed.size(), false);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& rec = lines[i];
    const auto seed = rec.at("model_seed").get<std::uint64_t>();
    std::size_t k = 0;
    while (k < per_seed.size() && per_seed[k].model_seed != seed) ++k;
    if (k == per_seed.size()) throw FormatError("curve for unknown seed " + std::to_string(seed));
    auto curve = faith::curve_from_json(rec.at("curve"));
    if (rec.at("role").get<std::string>() == kBaselineRole) {
      per_seed[k].baseline = std::move(curve);
      has_baseline[k] = true;
    } else {
      const std::string name = curve.measure;
      per_seed[k].measures[name] = std::move(curve);
    }
  }
  for (std::size_t k = 0; k < per_seed.size(); ++k) {
    if (!has_baseline[k]) throw FormatError("no baseline curve for seed " + std::to_string(per_seed[k].model_seed));
  }
  return per_seed;
}

faith::FaithfulnessReport summarize_curves(const ExperimentConfig& c, const std::vector<SeedCurves>& per_seed,
                                           const std::string& dataset_id) {
  faith::FaithfulnessReport report;
  report.dataset_id = dataset_id;
  for (const auto& m : c.measures) {
    std::vector<faith::MaskingCurve> curves;
    std::vector<faith::MaskingCurve> baselines;
    for (const auto& s : per_seed) {
      auto it = s.measures.find(m);
      if (it == s.measures.end()) throw FormatError("missing curve for measure " + m);
      curves.push_back(it->second);
      baselines.push_back(s.baseline);
    }
    Rng rng(derive_seed(kSummarySeed, measure_stream(m)));
    report.measures.push_back(faith::summarize(curves, baselines, rng, report.level, c.bootstrap_resamples));
  }
  return report;
}

std::string csv_join(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
  return s + "\n";
}

std::string racu_table(const faith::FaithfulnessReport& r) {
  std::string csv = csv_join({"measure", "recursive", "seeds", "acu_mean", "acu_ci_lo", "acu_ci_hi", "racu_mean",
                              "racu_ci_lo", "racu_ci_hi", "ood_flagged_seeds"});
  for (const auto& m : r.measures) {
    int flagged = 0;
    for (bool f : m.ood_flagged) flagged += f ? 1 : 0;
    csv += csv_join({m.measure, m.recursive ? "true" : "false", std::to_string(m.seeds.size()), num(m.acu_mean),
                     num(m.acu_ci.lo), num(m.acu_ci.hi), num(m.racu_mean), num(m.racu_ci.lo), num(m.racu_ci.hi),
                     std::to_string(flagged)});
  }
  return csv;
}

std::string ood_svg(const json& ood, double alpha) {
  std::vector<svg::Series> series;
  for (const auto& r : ood.at("results")) {
    series.push_back({r.at("strategy").get<std::string>() + " s" + std::to_string(r.at("seed").get<std::uint64_t>()),
                      r.at("ratios").get<std::vector<double>>(), r.at("dataset_pvalues").get<std::vector<double>>()});
  }
  svg::Axes axes{"In-distribution p-values (MaSF)", "masked tokens", "dataset p-value", 0.0, 1.0, true, alpha};
  return svg::line_plot(axes, series);
}

}  // namespace

std::string StrategyPair::tag() const { return train::to_string(train) + "-" + train::to_string(validation); }

void ExperimentConfig::validate() const {
  task.validate();
  effective_model().validate();
  if (strategies.empty()) throw ConfigError("at least one strategy pair is required");
  if (seeds.empty()) throw ConfigError("seeds must be non-empty");
  if (measures.empty()) throw ConfigError("measures must be non-empty");
  for (const auto& m : measures) ims::measure_from_string(m);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (seeds[i] == seeds[j]) throw ConfigError("duplicate seed " + std::to_string(seeds[i]));
    }
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in (0, 1)");
  if (curve_steps < 1 || ig_samples < 1 || beam_width < 1 || bootstrap_resamples < 1 || masf_min_validation < 1) {
    throw ConfigError("curve_steps, ig_samples, beam_width, bootstrap_resamples and masf_min_validation must be >= 1");
  }
  if (hyperparams.batch_size < 1 || hyperparams.max_epochs < 1 || !(hyperparams.learning_rate > 0.0)) {
    throw ConfigError("invalid hyperparameters");
  }
}

ModelConfig ExperimentConfig::effective_model() const { return task.model_config(model); }

json ExperimentConfig::to_json() const {
  json strat = json::array();
  for (const auto& s : strategies) {
    strat.push_back({{"train", train::to_string(s.train)}, {"validation", train::to_string(s.validation)}});
  }
  json m = effective_model();
  m.erase("seed");
  return {{"task", task},
          {"model", m},
          {"hyperparams", hyperparams},
          {"strategies", strat},
          {"measures", measures},
          {"seeds", seeds},
          {"alpha", alpha},
          {"output_dir", output_dir},
          {"curve_steps", curve_steps},
          {"ig_samples", ig_samples},
          {"beam_width", beam_width},
          {"bootstrap_resamples", bootstrap_resamples},
          {"masf_min_validation", masf_min_validation}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig c;
    if (j.contains("task")) c.task = j.at("task").get<data::TaskConfig>();
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("hyperparams")) c.hyperparams = j.at("hyperparams").get<train::Hyperparams>();
    if (j.contains("strategies")) {
      c.strategies.clear();
      for (const auto& s : j.at("strategies")) {
        c.strategies.push_back({train::train_strategy_from_string(s.at("train").get<std::string>()),
                                train::val_strategy_from_string(s.at("validation").get<std::string>())});
      }
    }
    if (j.contains("measures")) {
      c.measures = j.at("measures").get<std::vector<std::string>>();
    } else {
      for (auto m : ims::all_measures()) c.measures.push_back(ims::to_string(m));
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.alpha = j.value("alpha", c.alpha);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.curve_steps = j.value("curve_steps", c.curve_steps);
    c.ig_samples = j.value("ig_samples", c.ig_samples);
    c.beam_width = j.value("beam_width", c.beam_width);
    c.bootstrap_resamples = j.value("bootstrap_resamples", c.bootstrap_resamples);
    c.masf_min_validation = j.value("masf_min_validation", c.masf_min_validation);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("output_dir");
  return io::hex64(io::fnv1a(j.dump()));
}

ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

fs::path resolve_output(const ExperimentConfig& config, const std::optional<std::string>& out_flag) {
  if (out_flag) return fs::path(*out_flag);
  fs::path p(config.output_dir);
  if (p.is_absolute()) return p;
  const char* root = std::getenv(kOutputRootEnv);
  return (root && *root) ? fs::path(root) / p : p;
}

void cmd_gen_data(const ExperimentConfig& c, const fs::path& out) {
  const auto splits = data::generate(c.task);
  const json extra = {{"config_hash", c.hash()}};
  data::save_dataset(splits.train, c.task, data_path(out, data::Split::Train), extra);
  data::save_dataset(splits.validation, c.task, data_path(out, data::Split::Validation), extra);
  data::save_dataset(splits.test, c.task, data_path(out, data::Split::Test), extra);
}

void cmd_train(const ExperimentConfig& c, const fs::path& out) {
  const auto train_set = load_split(out, c, data::Split::Train);
  const auto val_set = load_split(out, c, data::Split::Validation);
  const auto test_set = load_split(out, c, data::Split::Test);
  const auto model_cfg = c.effective_model();
  const int C = model_cfg.num_classes;
  const json extra = {{"config_hash", c.hash()}};
  for (const auto& pair : c.strategies) {
    for (auto seed : c.seeds) {
      auto report = train::train(model_cfg, train_set, val_set, pair.train, pair.validation, c.hyperparams, seed);
      Rng eval_rng(derive_seed(seed, kEvaluationStream));
      const double unmasked = train::evaluate(report.checkpoint, test_set, 0.0, eval_rng, c.hyperparams.metric);
      const double masked = train::evaluate(report.checkpoint, test_set, 1.0, eval_rng, c.hyperparams.metric);
      json j = {{"format", "fmm.train_report"},
                {"version", kSchemaVersion},
                {"config_hash", c.hash()},
                {"strategy", pair.tag()},
                {"report", train::report_to_json(report)},
                {"test",
                 {{"metric", data::to_string(c.hyperparams.metric)},
                  {"unmasked", unmasked},
                  {"fully_masked", masked},
                  {"class_majority", data::class_majority(test_set, c.hyperparams.metric, C)}}}};
      save_checkpoint(report.checkpoint, checkpoint_path(out, pair, seed), extra);
      write_json(train_report_path(out, pair, seed), j);
    }
  }
}

void cmd_ood(const ExperimentConfig& c, const fs::path& out) {
  for (const auto& pair : c.strategies) {
    for (auto seed : c.seeds) require(checkpoint_path(out, pair, seed), "train");
  }
  const auto val_set = load_split(out, c, data::Split::Validation);
  const auto test_set = load_split(out, c, data::Split::Test);
  const json extra = {{"config_hash", c.hash()}};
  const auto grid = faith::ratio_grid(c.curve_steps);
  json results = json::array();
  for (const auto& pair : c.strategies) {
    for (auto seed : c.seeds) {
      const auto model = load_model(out, c, pair, seed);
      Rng cal_rng(derive_seed(seed, kCalibrationStream));
      const auto cal = masf::masf_fit(model, val_set, pair.train, cal_rng,
                                      static_cast<std::size_t>(c.masf_min_validation));
      masf::save_calibration(cal, calibration_path(out, pair, seed), extra);
      std::vector<double> pvalues;
      for (std::size_t i = 0; i < grid.size(); ++i) {
        Rng rng(derive_seed(seed, kOodStream + i));
        std::vector<double> obs_p;
        for (const auto& o : test_set.observations) {
          const auto masked = train::mask_at_ratio(o, grid[i], rng, model.config().mask_token_id);
          obs_p.push_back(masf::masf_pvalue(cal, *forward(model, masked, true).trace));
        }
        pvalues.push_back(masf::dataset_pvalue(obs_p));
      }
      results.push_back({{"strategy", pair.tag()},
                         {"seed", seed},
                         {"ratios", grid},
                         {"dataset_pvalues", pvalues},
                         {"calibration_transform", cal.provenance.transform}});
    }
  }
  json report = {{"format", "fmm.ood_report"},
                 {"version", kSchemaVersion},
                 {"config_hash", c.hash()},
                 {"alpha", c.alpha},
                 {"results", results}};
  write_json(ood_report_path(out), report);
  io::atomic_write(out / "ood" / "ood_pvalues.svg", ood_svg(report, c.alpha));
}

void cmd_explain(const ExperimentConfig& c, const fs::path& out, const std::optional<std::string>& measure) {
  const auto& primary = c.strategies.front();
  for (auto seed : c.seeds) require(checkpoint_path(out, primary, seed), "train");
  const auto test_set = load_split(out, c, data::Split::Test);
  std::vector<std::string> names = measure ? std::vector<std::string>{*measure} : c.measures;
  const auto opts = curve_options(c);
  for (const auto& name : names) {
    const auto m = ims::measure_from_string(name);
    for (auto seed : c.seeds) {
      const auto model = load_model(out, c, primary, seed);
      std::string text = json{{"format", "fmm.explanations"},
                              {"version", kSchemaVersion},
                              {"config_hash", c.hash()},
                              {"measure", name},
                              {"model_seed", seed},
                              {"strategy", primary.tag()},
                              {"count", test_set.size()}}
                             .dump() +
                         "\n";
      const auto stream = derive_seed(seed, measure_stream(name));
      for (std::size_t k = 0; k < test_set.size(); ++k) {
        Rng rng(derive_seed(stream, k));
        const auto e = ims::explain(model, test_set.observations[k], m, rng, opts.explain);
        json rec = {{"index", k}, {"order", e.order.positions}};
        if (e.scores) {
          rec["positions"] = e.scores->positions;
          rec["scores"] = e.scores->scores;
          rec["variant"] = ims::to_string(e.scores->variant);
          rec["explained_class"] = e.scores->explained_class;
        } else {
          rec["explained_class"] = predict(model, test_set.observations[k]);
        }
        text += rec.dump() + "\n";
      }
      io::atomic_write(out / "explain" / (name + "_seed" + std::to_string(seed) + ".jsonl"), text);
    }
  }
}

void cmd_faithfulness(const ExperimentConfig& c, const fs::path& out) {
  const auto& primary = c.strategies.front();
  for (auto seed : c.seeds) require(checkpoint_path(out, primary, seed), "train");
  for (auto seed : c.seeds) require(calibration_path(out, primary, seed), "ood");
  const auto test_set = load_split(out, c, data::Split::Test);
  const auto opts = curve_options(c);

  std::string text = json{{"format", "fmm.curves"},
                          {"version", kSchemaVersion},
                          {"config_hash", c.hash()},
                          {"strategy", primary.tag()}}
                         .dump() +
                     "\n";
  for (auto seed : c.seeds) {
    const auto model = load_model(out, c, primary, seed);
    const auto cal = load_cal(out, c, primary, seed);
    auto emit = [&](const char* role, const faith::MaskingCurve& curve) {
      text += json{{"model_seed", seed}, {"role", role}, {"curve", faith::curve_to_json(curve)}}.dump() + "\n";
    };
    emit(kBaselineRole, faith::masking_curve(model, test_set, ims::Measure::Random, false, &cal,
                                             derive_seed(seed, baseline_stream()), opts));
    for (const auto& name : c.measures) {
      const auto m = ims::measure_from_string(name);
      emit(kMeasureRole, faith::masking_curve(model, test_set, m, ims::recursive_by_default(m), &cal,
                                              derive_seed(seed, measure_stream(name)), opts));
    }
  }
  io::atomic_write(curves_path(out), text);

  const auto report = summarize_curves(c, read_curves(out, c), test_set.task_id);
  json j = faith::report_to_json(report);
  j["format"] = "fmm.faithfulness";
  j["version"] = kSchemaVersion;
  j["config_hash"] = c.hash();
  write_json(out / "faithfulness" / "faithfulness.json", j);
  io::atomic_write(out / "faithfulness" / "table_racu.csv", racu_table(report));
}

void cmd_report(const ExperimentConfig& c, const fs::path& out) {
  const fs::path dir = out / "report";

  // Unmasked vs fully masked test performance per strategy.
  json training = json::array();
  std::string masked_csv = csv_join({"strategy", "seed", "selected_epoch", "unmasked", "fully_masked", "class_majority"});
  std::vector<svg::Bar> bars;
  for (const auto& pair : c.strategies) {
    std::vector<double> masked;
    for (auto seed : c.seeds) {
      const auto j = read_json_artifact(train_report_path(out, pair, seed), c, "train");
      const auto& t = j.at("test");
      masked_csv += csv_join({pair.tag(), std::to_string(seed), std::to_string(j.at("report").at("selected_epoch").get<int>()),
                            num(t.at("unmasked").get<double>()), num(t.at("fully_masked").get<double>()),
                            num(t.at("class_majority").get<double>())});
      masked.push_back(t.at("fully_masked").get<double>());
      training.push_back({{"strategy", pair.tag()}, {"seed", seed}, {"report", j.at("report")}, {"test", t}});
    }
    double lo = masked.front();
    double hi = masked.front();
    for (double v : masked) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    bars.push_back({pair.tag(), stats::mean(masked), lo, hi});
  }

  const auto ood = read_json_artifact(ood_report_path(out), c, "ood");
  std::string ood_csv = csv_join({"strategy", "seed", "ratio", "dataset_pvalue"});
  for (const auto& r : ood.at("results")) {
    const auto ratios = r.at("ratios").get<std::vector<double>>();
    const auto p = r.at("dataset_pvalues").get<std::vector<double>>();
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      ood_csv += csv_join({r.at("strategy").get<std::string>(), std::to_string(r.at("seed").get<std::uint64_t>()),
                            num(ratios[i]), num(p[i])});
    }
  }

  // Faithfulness tables are recomputed from the serialized curves.
  const auto per_seed = read_curves(out, c);
  const auto test_set = load_split(out, c, data::Split::Test);
  const auto faith_report = summarize_curves(c, per_seed, test_set.task_id);
  std::string curve_csv = csv_join({"measure", "seed", "ratio", "performance", "dataset_pvalue"});
  auto add_curve = [&](const faith::MaskingCurve& cv, std::uint64_t seed, const std::string& label) {
    for (std::size_t i = 0; i < cv.ratios.size(); ++i) {
      curve_csv += csv_join({label, std::to_string(seed), num(cv.ratios[i]), num(cv.performance[i]),
                             i < cv.dataset_pvalues.size() ? num(cv.dataset_pvalues[i]) : ""});
    }
  };
  std::vector<svg::Series> curve_series;
  auto mean_series = [&](const std::string& label, auto&& pick) {
    svg::Series s{label, per_seed.front().baseline.ratios, std::vector<double>(per_seed.front().baseline.ratios.size(), 0.0)};
    for (const auto& sc : per_seed) {
      const auto& cv = pick(sc);
      for (std::size_t i = 0; i < s.y.size(); ++i) s.y[i] += cv.performance[i] / static_cast<double>(per_seed.size());
    }
    curve_series.push_back(std::move(s));
  };
  mean_series("random baseline", [](const SeedCurves& s) -> const faith::MaskingCurve& { return s.baseline; });
  for (const auto& sc : per_seed) add_curve(sc.baseline, sc.model_seed, "random_baseline");
  for (const auto& m : c.measures) {
    mean_series(m, [&](const SeedCurves& s) -> const faith::MaskingCurve& { return s.measures.at(m); });
    for (const auto& sc : per_seed) add_curve(sc.measures.at(m), sc.model_seed, m);
  }

  json all_tasks = json::object();
  for (const auto& m : faith_report.measures) {
    const double v[] = {m.racu_mean};
    all_tasks[m.measure] = faith::mean_across_tasks(v);
  }

  svg::Axes bar_axes{"Fully masked test performance", "strategy", data::to_string(c.hyperparams.metric), 0.0, 1.0,
                      false, 0.0};
  svg::Axes curve_axes{"Performance on masked test data", "masked tokens", data::to_string(c.hyperparams.metric), 0.0,
                      1.0, false, 0.0};
  io::atomic_write(dir / "masked_performance.svg", svg::bar_plot(bar_axes, bars));
  io::atomic_write(dir / "ood_pvalues.svg", ood_svg(ood, c.alpha));
  io::atomic_write(dir / "masking_curves.svg", svg::line_plot(curve_axes, curve_series));
  io::atomic_write(dir / "table_masked_performance.csv", masked_csv);
  io::atomic_write(dir / "table_ood_pvalues.csv", ood_csv);
  io::atomic_write(dir / "table_masking_curves.csv", curve_csv);
  io::atomic_write(dir / "table_racu.csv", racu_table(faith_report));

  json bundle = {{"format", "fmm.report"},
                 {"version", kSchemaVersion},
                 {"config_hash", c.hash()},
                 {"provenance", provenance(c)},
                 {"config", c.to_json()},
                 {"training", training},
                 {"ood", ood.at("results")},
                 {"faithfulness", faith::report_to_json(faith_report)},
                 {"racu_mean_across_tasks", all_tasks}};
  bundle["config"].erase("output_dir");
  write_json(dir / "report.json", bundle);
}

json error_record(const std::exception& e) {
  json j = {{"status", "error"}, {"message", e.what()}};
  if (const auto* fe = dynamic_cast<const Error*>(&e)) {
    j["kind"] = fe->kind();
    if (const auto* d = dynamic_cast<const DependencyError*>(&e)) j["producer"] = d->producer();
    if (const auto* n = dynamic_cast<const NumericError*>(&e)) j["layer"] = n->layer();
    if (const auto* t = dynamic_cast<const TrainingError*>(&e)) {
      j["epoch"] = t->epoch();
      j["step"] = t->step();
    }
  } else {
    j["kind"] = "internal";
  }
  return j;
}

}  // namespace fmm::pipeline
