#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmm/data.hpp"
#include "fmm/model.hpp"
#include "fmm/training.hpp"

namespace fmm::pipeline {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kOutputRootEnv = "FMM_OUTPUT_ROOT";

struct StrategyPair {
  train::TrainStrategy train = train::TrainStrategy::Use5050;
  train::ValStrategy validation = train::ValStrategy::UseBoth;

  /// e.g. "use5050-use_both"; used in artifact file names.
  std::string tag() const;
};

/// Everything a run depends on. The first strategy pair is the primary one:
/// explanations and faithfulness curves use its checkpoints.
struct ExperimentConfig {
  data::TaskConfig task;
  ModelConfig model;  ///< vocabulary, length and special ids come from `task`
  train::Hyperparams hyperparams;
  std::vector<StrategyPair> strategies{{train::TrainStrategy::Use5050, train::ValStrategy::UseBoth},
                                       {train::TrainStrategy::NoMasking, train::ValStrategy::NoMasking}};
  std::vector<std::string> measures;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double alpha = 0.05;
  std::string output_dir = "fmm_out";
  int curve_steps = 10;
  int ig_samples = 20;
  int beam_width = 10;
  int bootstrap_resamples = 10000;
  int masf_min_validation = 100;

  void validate() const;
  /// Model config with the task's vocabulary and special ids applied.
  ModelConfig effective_model() const;
  /// Canonical form. `output_dir` is included but does not enter the hash.
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// 16 hex digits identifying every setting that affects results.
  std::string hash() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

/// --out wins; otherwise config.output_dir, resolved against
/// $FMM_OUTPUT_ROOT (or the working directory) when relative.
std::filesystem::path resolve_output(const ExperimentConfig& config, const std::optional<std::string>& out_flag);

void cmd_gen_data(const ExperimentConfig& config, const std::filesystem::path& out);
void cmd_train(const ExperimentConfig& config, const std::filesystem::path& out);
void cmd_ood(const ExperimentConfig& config, const std::filesystem::path& out);
/// All configured measures when `measure` is empty.
void cmd_explain(const ExperimentConfig& config, const std::filesystem::path& out,
                 const std::optional<std::string>& measure);
void cmd_faithfulness(const ExperimentConfig& config, const std::filesystem::path& out);
void cmd_report(const ExperimentConfig& config, const std::filesystem::path& out);

/// Machine-readable description of a failure, written by the CLI to stderr.
nlohmann::json error_record(const std::exception& e);

}  // namespace fmm::pipeline
