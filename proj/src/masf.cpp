#include "fmm/masf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fmm/error.hpp"
#include "fmm/io.hpp"

namespace fmm::masf {

EmpiricalCDF::EmpiricalCDF(std::vector<double> samples) : sorted_(std::move(samples)) {
  if (sorted_.empty()) throw ContractError("empirical CDF needs at least one sample");
  for (double v : sorted_) {
    if (!std::isfinite(v)) throw ContractError("empirical CDF samples must be finite");
  }
  std::sort(sorted_.begin(), sorted_.end());
}

double EmpiricalCDF::lookup(double z) const {
  if (sorted_.empty()) throw ContractError("lookup in an empty CDF");
  const auto below = std::lower_bound(sorted_.begin(), sorted_.end(), z) - sorted_.begin();
  return static_cast<double>(below) / static_cast<double>(sorted_.size());
}

EmpiricalCDF build_cdf(std::vector<double> samples) { return EmpiricalCDF(std::move(samples)); }

namespace {
double clamp_p(const EmpiricalCDF& cdf, double p) { return std::clamp(p, cdf.floor(), 1.0); }

void check_pvalues(std::span<const double> pvalues) {
  if (pvalues.empty()) throw ContractError("no p-values to aggregate");
  for (double p : pvalues) {
    if (!(p > 0.0 && p <= 1.0)) throw ContractError("p-value outside (0, 1]");
  }
}
}  // namespace

double two_sided_pvalue(const EmpiricalCDF& cdf, double z) {
  const double f = cdf.lookup(z);
  return clamp_p(cdf, std::min(f, 1.0 - f));
}

double lower_tail_pvalue(const EmpiricalCDF& cdf, double z) { return clamp_p(cdf, cdf.lookup(z)); }

double upper_tail_pvalue(const EmpiricalCDF& cdf, double z) { return clamp_p(cdf, 1.0 - cdf.lookup(z)); }

double simes(std::span<const double> pvalues) {
  check_pvalues(pvalues);
  std::vector<double> sorted(pvalues.begin(), pvalues.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double best = 1.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    best = std::min(best, n * sorted[i] / static_cast<double>(i + 1));
  }
  return best;
}

double fisher_statistic(std::span<const double> pvalues) {
  check_pvalues(pvalues);
  double s = 0.0;
  for (double p : pvalues) s += std::log(p);
  return -2.0 * s;
}

std::vector<double> max_statistics(const EmbeddingTrace& trace) {
  if (trace.valid_len < 1) throw ContractError("trace has no valid positions");
  const int L = trace.num_layers, H = trace.hidden_dim;
  std::vector<double> out(static_cast<std::size_t>(L) * H, -std::numeric_limits<double>::infinity());
  for (int l = 0; l < L; ++l) {
    for (int t = 0; t < trace.valid_len; ++t) {
      for (int h = 0; h < H; ++h) {
        double& m = out[static_cast<std::size_t>(l) * H + h];
        m = std::max(m, trace.at(l, t, h));
      }
    }
  }
  return out;
}

namespace {

std::vector<double> layer_simes(const MaSFCalibration& cal, std::span<const double> stats) {
  const int L = cal.num_layers, H = cal.hidden_dim;
  std::vector<double> out(static_cast<std::size_t>(L));
  std::vector<double> p(static_cast<std::size_t>(H));
  for (int l = 0; l < L; ++l) {
    for (int h = 0; h < H; ++h) {
      const std::size_t k = static_cast<std::size_t>(l) * H + h;
      p[static_cast<std::size_t>(h)] = two_sided_pvalue(cal.stage1[k], stats[k]);
    }
    out[static_cast<std::size_t>(l)] = simes(p);
  }
  return out;
}

double fisher_of(const MaSFCalibration& cal, std::span<const double> simes_values) {
  std::vector<double> q(simes_values.size());
  for (std::size_t l = 0; l < q.size(); ++l) q[l] = lower_tail_pvalue(cal.stage2[l], simes_values[l]);
  return fisher_statistic(q);
}

}  // namespace

MaSFCalibration fit_from_statistics(const std::vector<std::vector<double>>& statistics, int num_layers,
                                    int hidden_dim) {
  if (statistics.empty()) throw CalibrationError("no calibration statistics");
  const std::size_t LH = static_cast<std::size_t>(num_layers) * hidden_dim;
  for (const auto& row : statistics) {
    if (row.size() != LH) throw ContractError("calibration statistic has the wrong dimension");
  }
  MaSFCalibration cal;
  cal.num_layers = num_layers;
  cal.hidden_dim = hidden_dim;
  const std::size_t n = statistics.size();
  std::vector<double> column(n);
  for (std::size_t k = 0; k < LH; ++k) {
    for (std::size_t i = 0; i < n; ++i) column[i] = statistics[i][k];
    cal.stage1.emplace_back(column);
  }
  std::vector<std::vector<double>> simes_rows;
  simes_rows.reserve(n);
  for (const auto& row : statistics) simes_rows.push_back(layer_simes(cal, row));
  for (int l = 0; l < num_layers; ++l) {
    for (std::size_t i = 0; i < n; ++i) column[i] = simes_rows[i][static_cast<std::size_t>(l)];
    cal.stage2.emplace_back(column);
  }
  for (std::size_t i = 0; i < n; ++i) column[i] = fisher_of(cal, simes_rows[i]);
  cal.stage3 = EmpiricalCDF(column);
  return cal;
}

MaSFCalibration masf_fit(const ModelCheckpoint& model, const data::Dataset& validation,
                         train::TrainStrategy transform, Rng& rng, std::size_t min_validation) {
  if (validation.size() < min_validation) {
    throw CalibrationError("validation set has " + std::to_string(validation.size()) +
                           " observations, calibration needs at least " + std::to_string(min_validation));
  }
  const std::uint64_t masking_seed = rng.next_u64();
  Rng mask_rng(masking_seed);
  const auto transformed = train::transform_dataset(validation, transform, mask_rng, model.config().mask_token_id);
  std::vector<std::vector<double>> stats;
  stats.reserve(transformed.size());
  for (const auto& o : transformed.observations) stats.push_back(max_statistics(*forward(model, o, true).trace));
  auto cal = fit_from_statistics(stats, model.config().num_layers, model.config().hidden_dim);
  cal.provenance = {validation.task_id + "/" + data::to_string(validation.split), masking_seed,
                    train::to_string(transform)};
  return cal;
}

double masf_pvalue_from_statistics(const MaSFCalibration& calibration, std::span<const double> statistics) {
  if (statistics.size() != static_cast<std::size_t>(calibration.num_layers) * calibration.hidden_dim ||
      calibration.stage1.size() != statistics.size()) {
    throw ContractError("trace dimensions do not match the calibration");
  }
  const auto s = layer_simes(calibration, statistics);
  return upper_tail_pvalue(calibration.stage3, fisher_of(calibration, s));
}

double masf_pvalue(const MaSFCalibration& calibration, const EmbeddingTrace& trace) {
  if (trace.num_layers != calibration.num_layers || trace.hidden_dim != calibration.hidden_dim) {
    throw ContractError("trace dimensions do not match the calibration");
  }
  return masf_pvalue_from_statistics(calibration, max_statistics(trace));
}

double dataset_pvalue(std::span<const double> observation_pvalues) { return simes(observation_pvalues); }

namespace {
constexpr std::string_view kMagic = "FMMMASF1";
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::string encode_calibration(const MaSFCalibration& cal, const nlohmann::json& extra) {
  std::vector<std::pair<std::string, const EmpiricalCDF*>> tables;
  for (int l = 0; l < cal.num_layers; ++l) {
    for (int h = 0; h < cal.hidden_dim; ++h) {
      tables.emplace_back("stage1/" + std::to_string(l) + "/" + std::to_string(h),
                          &cal.stage1[static_cast<std::size_t>(l) * cal.hidden_dim + h]);
    }
  }
  for (int l = 0; l < cal.num_layers; ++l) tables.emplace_back("stage2/" + std::to_string(l), &cal.stage2[static_cast<std::size_t>(l)]);
  tables.emplace_back("stage3", &cal.stage3);

  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, cdf] : tables) {
    index.push_back({{"name", name}, {"offset", offset}, {"count", cdf->size()}});
    offset += 8 * cdf->size();
  }
  nlohmann::json header{{"format", "fmm.masf"},
                        {"version", kVersion},
                        {"num_layers", cal.num_layers},
                        {"hidden_dim", cal.hidden_dim},
                        {"provenance",
                         {{"validation_id", cal.provenance.validation_id},
                          {"masking_seed", cal.provenance.masking_seed},
                          {"transform", cal.provenance.transform}}},
                        {"tables", index}};
  if (!extra.is_null()) header["extra"] = extra;
  const std::string text = header.dump();
  io::ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.u64(text.size());
  w.raw(text);
  for (const auto& [name, cdf] : tables) w.f64s(cdf->samples());
  return w.bytes();
}

MaSFCalibration decode_calibration(const std::string& bytes, nlohmann::json* extra) {
  io::ByteReader r(bytes);
  if (r.raw(kMagic.size()) != kMagic) throw FormatError("not a MaSF calibration file");
  if (r.u32() != kVersion) throw FormatError("unsupported calibration version");
  const auto len = r.u64();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.raw(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad calibration header: ") + e.what());
  }
  MaSFCalibration cal;
  cal.num_layers = header.at("num_layers").get<int>();
  cal.hidden_dim = header.at("hidden_dim").get<int>();
  const auto& prov = header.at("provenance");
  cal.provenance = {prov.at("validation_id").get<std::string>(), prov.at("masking_seed").get<std::uint64_t>(),
                    prov.at("transform").get<std::string>()};
  const auto& index = header.at("tables");
  const std::size_t expected = static_cast<std::size_t>(cal.num_layers) * cal.hidden_dim + cal.num_layers + 1;
  if (index.size() != expected) throw FormatError("calibration table count mismatch");
  std::size_t k = 0;
  for (const auto& entry : index) {
    std::vector<double> values(entry.at("count").get<std::size_t>());
    r.f64s(values);
    if (!std::is_sorted(values.begin(), values.end())) throw FormatError("calibration table not sorted");
    EmpiricalCDF cdf(std::move(values));
    if (k < static_cast<std::size_t>(cal.num_layers) * cal.hidden_dim) {
      cal.stage1.push_back(std::move(cdf));
    } else if (k + 1 < expected) {
      cal.stage2.push_back(std::move(cdf));
    } else {
      cal.stage3 = std::move(cdf);
    }
    ++k;
  }
  if (!r.done()) throw FormatError("trailing bytes in calibration file");
  if (extra != nullptr) *extra = header.value("extra", nlohmann::json());
  return cal;
}

void save_calibration(const MaSFCalibration& calibration, const std::filesystem::path& path,
                      const nlohmann::json& extra) {
  io::atomic_write(path, encode_calibration(calibration, extra));
}

MaSFCalibration load_calibration(const std::filesystem::path& path, nlohmann::json* extra) {
  return decode_calibration(io::read_file(path), extra);
}

}  // namespace fmm::masf
