#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmm/data.hpp"
#include "fmm/ims.hpp"
#include "fmm/masf.hpp"
#include "fmm/model.hpp"
#include "fmm/rng.hpp"

namespace fmm::faith {

struct CurveOptions {
  int steps = 10;
  double alpha = 0.05;
  ims::ExplainOptions explain;
  data::Metric metric = data::Metric::Accuracy;
};

/// Performance after masking the most important ratios[i] of each
/// observation's maskable tokens.
struct MaskingCurve {
  std::vector<double> ratios;
  std::vector<double> performance;
  std::vector<double> dataset_pvalues;  ///< empty when no calibration was given
  std::string measure;
  std::string dataset_id;
  std::uint64_t seed = 0;
  bool recursive = true;
  bool ood_flagged = false;

  bool operator==(const MaskingCurve&) const = default;
};

/// {0, 1/steps, ..., 1}.
std::vector<double> ratio_grid(int steps);

/// Cumulative masked count at grid point i: round(i * m / steps), half up,
/// computed in integers.
std::size_t cumulative_count(int i, int steps, std::size_t maskable);

/// The order in which `obs` gets masked along the curve. The masked set at
/// grid point i is the first cumulative_count(i) entries. In recursive mode
/// the measure is re-run on the partially masked input before every step
/// that adds tokens; otherwise the initial explanation is consumed.
std::vector<int> masking_schedule(const ModelCheckpoint& model, const Observation& obs, ims::Measure measure,
                                  bool recursive, Rng& rng, const CurveOptions& options = {});

/// Observation `idx` draws from Rng(derive_seed(seed, idx)). `calibration`
/// may be null, in which case no p-values are recorded.
MaskingCurve masking_curve(const ModelCheckpoint& model, const data::Dataset& test, ims::Measure measure,
                           bool recursive, const masf::MaSFCalibration* calibration, std::uint64_t seed,
                           const CurveOptions& options = {});

/// Trapezoid area of (baseline - performance). Throws ContractError on
/// mismatched grids.
double acu(std::span<const double> ratios, std::span<const double> performance, std::span<const double> baseline);
double acu(const MaskingCurve& curve, const MaskingCurve& baseline);

/// acu divided by the trapezoid area of (baseline - baseline.back()).
/// Throws NumericError when that area is at most 1e-9.
double racu(std::span<const double> ratios, std::span<const double> performance, std::span<const double> baseline);
double racu(const MaskingCurve& curve, const MaskingCurve& baseline);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Bias-corrected and accelerated bootstrap interval for the mean.
Interval bca_interval(std::span<const double> values, Rng& rng, double level = 0.95, int resamples = 10000);

double mean_across_tasks(std::span<const double> per_task_values);

/// ACU / RACU of one measure across seeds, each seed paired with its own
/// random baseline curve.
struct MeasureSummary {
  std::string measure;
  bool recursive = true;
  std::vector<std::uint64_t> seeds;
  std::vector<double> acu;
  std::vector<double> racu;
  std::vector<bool> ood_flagged;
  double acu_mean = 0.0;
  double racu_mean = 0.0;
  Interval acu_ci;
  Interval racu_ci;
};

struct FaithfulnessReport {
  std::string dataset_id;
  std::string baseline_measure = "random";
  double level = 0.95;
  std::vector<MeasureSummary> measures;
};

/// `curves[s]` pairs with `baselines[s]`. Intervals need at least two seeds;
/// with one seed they collapse onto the single value.
MeasureSummary summarize(std::span<const MaskingCurve> curves, std::span<const MaskingCurve> baselines, Rng& rng,
                         double level = 0.95, int resamples = 10000);

nlohmann::json curve_to_json(const MaskingCurve& curve);
MaskingCurve curve_from_json(const nlohmann::json& j);
nlohmann::json summary_to_json(const MeasureSummary& summary);
nlohmann::json report_to_json(const FaithfulnessReport& report);

}  // namespace fmm::faith
