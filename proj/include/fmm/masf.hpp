#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmm/data.hpp"
#include "fmm/model.hpp"
#include "fmm/rng.hpp"
#include "fmm/training.hpp"

namespace fmm::masf {

/// Empirical CDF over a sorted sample table. lookup(z) counts samples
/// strictly below z.
class EmpiricalCDF {
 public:
  EmpiricalCDF() = default;
  /// Sorts a copy. Throws ContractError on empty or non-finite input.
  explicit EmpiricalCDF(std::vector<double> samples);

  double lookup(double z) const;
  std::size_t size() const { return sorted_.size(); }
  std::span<const double> samples() const { return sorted_; }
  /// Smallest p-value a conversion through this table can return, 1/(n+1).
  double floor() const { return 1.0 / (static_cast<double>(sorted_.size()) + 1.0); }

  bool operator==(const EmpiricalCDF&) const = default;

 private:
  std::vector<double> sorted_;
};

EmpiricalCDF build_cdf(std::vector<double> samples);

/// min(F, 1 - F), clamped to [1/(n+1), 1].
double two_sided_pvalue(const EmpiricalCDF& cdf, double z);
/// F(z) clamped; small z is extreme.
double lower_tail_pvalue(const EmpiricalCDF& cdf, double z);
/// 1 - F(z) clamped; large z is extreme.
double upper_tail_pvalue(const EmpiricalCDF& cdf, double z);

/// min(1, min_i n p_(i) / i) over ascending p. Each p must be in (0, 1].
double simes(std::span<const double> pvalues);
/// -2 sum ln p_i.
double fisher_statistic(std::span<const double> pvalues);

struct Provenance {
  std::string validation_id;
  std::uint64_t masking_seed = 0;
  std::string transform;

  bool operator==(const Provenance&) const = default;
};

/// Max -> Simes -> Fisher calibration tables: L x H stage-1 tables over
/// sequence-max activations, L stage-2 tables over per-layer Simes values,
/// one stage-3 table over Fisher statistics.
struct MaSFCalibration {
  int num_layers = 0;
  int hidden_dim = 0;
  std::vector<EmpiricalCDF> stage1;  ///< index layer * H + h
  std::vector<EmpiricalCDF> stage2;
  EmpiricalCDF stage3;
  Provenance provenance;

  bool operator==(const MaSFCalibration&) const = default;
};

/// Per (layer, h) maximum over positions below valid_len, flattened L x H.
std::vector<double> max_statistics(const EmbeddingTrace& trace);

/// Builds every stage from precomputed stage-1 statistics (one L x H row per
/// calibration observation).
MaSFCalibration fit_from_statistics(const std::vector<std::vector<double>>& statistics, int num_layers,
                                    int hidden_dim);

/// Applies the model's training-strategy transform to `validation`, captures
/// a trace per observation and fits the calibration. Throws CalibrationError
/// when fewer than `min_validation` observations are available.
MaSFCalibration masf_fit(const ModelCheckpoint& model, const data::Dataset& validation,
                         train::TrainStrategy transform, Rng& rng, std::size_t min_validation = 100);

double masf_pvalue_from_statistics(const MaSFCalibration& calibration, std::span<const double> statistics);
double masf_pvalue(const MaSFCalibration& calibration, const EmbeddingTrace& trace);

/// Simes aggregation of per-observation p-values.
double dataset_pvalue(std::span<const double> observation_pvalues);

/// Calibration container, format version 1:
///   "FMMMASF1" | u32 version | u64 header length | header (JSON text) | tables
/// The header indexes every table by name, byte offset (from the first table)
/// and count; tables are ascending little-endian f64.
std::string encode_calibration(const MaSFCalibration& calibration, const nlohmann::json& extra = {});
MaSFCalibration decode_calibration(const std::string& bytes, nlohmann::json* extra = nullptr);
void save_calibration(const MaSFCalibration& calibration, const std::filesystem::path& path,
                      const nlohmann::json& extra = {});
MaSFCalibration load_calibration(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace fmm::masf
