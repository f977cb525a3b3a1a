#include "fmm/faithfulness.hpp"

#include <algorithm>
#include <cmath>

#include "fmm/error.hpp"
#include "fmm/stats.hpp"

namespace fmm::faith {

namespace {

void check_grid(std::span<const double> ratios, std::span<const double> a, std::span<const double> b) {
  if (ratios.size() < 2 || a.size() != ratios.size() || b.size() != ratios.size()) {
    throw ContractError("curve and baseline must share a grid of at least two points");
  }
}

// Type-7 quantile of an ascending sample.
double quantile_sorted(std::span<const double> sorted, double q) {
  q = std::clamp(q, 0.0, 1.0);
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::vector<double> ratio_grid(int steps) {
  if (steps < 1) throw ConfigError("masking curve needs at least one step");
  std::vector<double> out(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(i) / steps;
  return out;
}

std::size_t cumulative_count(int i, int steps, std::size_t maskable) {
  const auto s = static_cast<std::size_t>(steps);
  return (2 * static_cast<std::size_t>(i) * maskable + s) / (2 * s);
}

std::vector<int> masking_schedule(const ModelCheckpoint& model, const Observation& obs, ims::Measure measure,
                                  bool recursive, Rng& rng, const CurveOptions& options) {
  const std::size_t m = obs.maskable.size();
  std::vector<int> order;
  order.reserve(m);
  if (m == 0) return order;

  if (!recursive) {
    order = ims::explain(model, obs, measure, rng, options.explain).order.positions;
    return order;
  }

  const int mask_id = model.config().mask_token_id;
  std::vector<char> taken(obs.tokens.size(), 0);
  Observation current = obs;
  for (int i = 1; i <= options.steps; ++i) {
    const std::size_t need = cumulative_count(i, options.steps, m) - order.size();
    if (need == 0) continue;
    const auto e = ims::explain(model, current, measure, rng, options.explain);
    std::size_t added = 0;
    for (int p : e.order.positions) {
      if (added == need) break;
      if (taken[static_cast<std::size_t>(p)]) continue;
      taken[static_cast<std::size_t>(p)] = 1;
      current.tokens[static_cast<std::size_t>(p)] = mask_id;
      order.push_back(p);
      ++added;
    }
  }
  return order;
}

MaskingCurve masking_curve(const ModelCheckpoint& model, const data::Dataset& test, ims::Measure measure,
                           bool recursive, const masf::MaSFCalibration* calibration, std::uint64_t seed,
                           const CurveOptions& options) {
  MaskingCurve curve;
  curve.ratios = ratio_grid(options.steps);
  curve.measure = ims::to_string(measure);
  curve.dataset_id = test.task_id;
  curve.seed = seed;
  curve.recursive = recursive;

  const std::size_t n = test.observations.size();
  if (n == 0) throw ContractError("masking curve needs a non-empty test set");
  std::vector<std::vector<int>> schedules(n);
  for (std::size_t k = 0; k < n; ++k) {
    Rng rng(derive_seed(seed, k));
    schedules[k] = masking_schedule(model, test.observations[k], measure, recursive, rng, options);
  }

  const auto labels = data::labels_of(test);
  const int mask_id = model.config().mask_token_id;
  const int num_classes = model.config().num_classes;
  std::vector<int> preds(n);
  std::vector<double> obs_p(n);
  for (int i = 0; i <= options.steps; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const auto& obs = test.observations[k];
      const std::size_t c = cumulative_count(i, options.steps, obs.maskable.size());
      const auto masked = apply_mask(obs, std::span<const int>(schedules[k]).first(c), mask_id);
      const auto out = forward(model, masked, calibration != nullptr);
      preds[k] = argmax(out.probabilities);
      if (calibration) obs_p[k] = masf::masf_pvalue(*calibration, *out.trace);
    }
    curve.performance.push_back(data::evaluate_metric(preds, labels, options.metric, num_classes));
    if (calibration) {
      const double p = masf::dataset_pvalue(obs_p);
      curve.dataset_pvalues.push_back(p);
      if (p < options.alpha) curve.ood_flagged = true;
    }
  }
  return curve;
}

double acu(std::span<const double> ratios, std::span<const double> performance, std::span<const double> baseline) {
  check_grid(ratios, performance, baseline);
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < ratios.size(); ++i) {
    const double dx = ratios[i + 1] - ratios[i];
    area += 0.5 * dx * ((baseline[i] - performance[i]) + (baseline[i + 1] - performance[i + 1]));
  }
  return area;
}

double acu(const MaskingCurve& curve, const MaskingCurve& baseline) {
  if (curve.ratios != baseline.ratios) throw ContractError("curve and baseline use different ratio grids");
  return acu(curve.ratios, curve.performance, baseline.performance);
}

double racu(std::span<const double> ratios, std::span<const double> performance, std::span<const double> baseline) {
  check_grid(ratios, performance, baseline);
  const double last = baseline.back();
  double normalizer = 0.0;
  for (std::size_t i = 0; i + 1 < ratios.size(); ++i) {
    const double dx = ratios[i + 1] - ratios[i];
    normalizer += 0.5 * dx * ((baseline[i] - last) + (baseline[i + 1] - last));
  }
  if (normalizer <= 1e-9) throw NumericError("baseline curve is flat; relative area is undefined");
  return acu(ratios, performance, baseline) / normalizer;
}

double racu(const MaskingCurve& curve, const MaskingCurve& baseline) {
  if (curve.ratios != baseline.ratios) throw ContractError("curve and baseline use different ratio grids");
  return racu(curve.ratios, curve.performance, baseline.performance);
}

Interval bca_interval(std::span<const double> values, Rng& rng, double level, int resamples) {
  const std::size_t n = values.size();
  if (n < 2) throw ContractError("bootstrap interval needs at least two values");
  if (!(level > 0.0 && level < 1.0) || resamples < 1) throw ConfigError("invalid bootstrap settings");
  const double theta = stats::mean(values);
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values[0]; })) {
    return {values[0], values[0]};
  }

  std::vector<double> boot(static_cast<std::size_t>(resamples));
  std::size_t below = 0;
  for (double& b : boot) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += values[rng.uniform_int(n)];
    b = s / static_cast<double>(n);
    if (b < theta) ++below;
  }
  std::sort(boot.begin(), boot.end());

  const double B = static_cast<double>(resamples);
  const double frac = std::clamp(static_cast<double>(below) / B, 0.5 / B, 1.0 - 0.5 / B);
  const double z0 = stats::normal_quantile(frac);

  double total = 0.0;
  for (double v : values) total += v;
  std::vector<double> jack(n);
  for (std::size_t i = 0; i < n; ++i) jack[i] = (total - values[i]) / static_cast<double>(n - 1);
  const double jmean = stats::mean(jack);
  double num = 0.0;
  double den = 0.0;
  for (double j : jack) {
    const double d = jmean - j;
    num += d * d * d;
    den += d * d;
  }
  const double a = den > 0.0 ? num / (6.0 * std::pow(den, 1.5)) : 0.0;

  auto adjusted = [&](double q) {
    const double z = stats::normal_quantile(q);
    return stats::normal_cdf(z0 + (z0 + z) / (1.0 - a * (z0 + z)));
  };
  const double tail = (1.0 - level) / 2.0;
  Interval out{quantile_sorted(boot, adjusted(tail)), quantile_sorted(boot, adjusted(1.0 - tail))};
  if (out.lo > out.hi) std::swap(out.lo, out.hi);
  return out;
}

double mean_across_tasks(std::span<const double> per_task_values) {
  if (per_task_values.empty()) throw ContractError("no task values to average");
  return stats::mean(per_task_values);
}

MeasureSummary summarize(std::span<const MaskingCurve> curves, std::span<const MaskingCurve> baselines, Rng& rng,
                         double level, int resamples) {
  if (curves.empty() || curves.size() != baselines.size()) {
    throw ContractError("each measure curve needs a matching baseline curve");
  }
  MeasureSummary s;
  s.measure = curves[0].measure;
  s.recursive = curves[0].recursive;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    if (curves[i].measure != s.measure) throw ContractError("summary mixes measures");
    s.seeds.push_back(curves[i].seed);
    s.acu.push_back(acu(curves[i], baselines[i]));
    s.racu.push_back(racu(curves[i], baselines[i]));
    s.ood_flagged.push_back(curves[i].ood_flagged || baselines[i].ood_flagged);
  }
  s.acu_mean = stats::mean(s.acu);
  s.racu_mean = stats::mean(s.racu);
  if (curves.size() >= 2) {
    s.acu_ci = bca_interval(s.acu, rng, level, resamples);
    s.racu_ci = bca_interval(s.racu, rng, level, resamples);
  } else {
    s.acu_ci = {s.acu_mean, s.acu_mean};
    s.racu_ci = {s.racu_mean, s.racu_mean};
  }
  return s;
}

nlohmann::json curve_to_json(const MaskingCurve& c) {
  return nlohmann::json{{"measure", c.measure},
                        {"dataset_id", c.dataset_id},
                        {"seed", c.seed},
                        {"recursive", c.recursive},
                        {"ood_flagged", c.ood_flagged},
                        {"ratios", c.ratios},
                        {"performance", c.performance},
                        {"dataset_pvalues", c.dataset_pvalues}};
}

MaskingCurve curve_from_json(const nlohmann::json& j) {
  try {
    MaskingCurve c;
    c.measure = j.at("measure").get<std::string>();
    c.dataset_id = j.at("dataset_id").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.recursive = j.at("recursive").get<bool>();
    c.ood_flagged = j.at("ood_flagged").get<bool>();
    c.ratios = j.at("ratios").get<std::vector<double>>();
    c.performance = j.at("performance").get<std::vector<double>>();
    c.dataset_pvalues = j.at("dataset_pvalues").get<std::vector<double>>();
    if (c.ratios.size() != c.performance.size()) throw FormatError("curve ratios and performance differ in length");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed curve record: ") + e.what());
  }
}

nlohmann::json summary_to_json(const MeasureSummary& s) {
  return nlohmann::json{{"measure", s.measure},
                        {"recursive", s.recursive},
                        {"seeds", s.seeds},
                        {"acu", s.acu},
                        {"racu", s.racu},
                        {"ood_flagged", s.ood_flagged},
                        {"acu_mean", s.acu_mean},
                        {"racu_mean", s.racu_mean},
                        {"acu_ci", {s.acu_ci.lo, s.acu_ci.hi}},
                        {"racu_ci", {s.racu_ci.lo, s.racu_ci.hi}}};
}

nlohmann::json report_to_json(const FaithfulnessReport& r) {
  nlohmann::json measures = nlohmann::json::array();
  for (const auto& m : r.measures) measures.push_back(summary_to_json(m));
  return nlohmann::json{{"dataset_id", r.dataset_id},
                        {"baseline_measure", r.baseline_measure},
                        {"level", r.level},
                        {"measures", measures}};
}

}  // namespace fmm::faith
