#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmm/model.hpp"

namespace fmm::data {

enum class TaskKind { Keyword, RedundantKeyword };
enum class Split { Train, Validation, Test };
enum class Metric { Accuracy, MacroF1 };

std::string to_string(TaskKind kind);
std::string to_string(Split split);
std::string to_string(Metric metric);
TaskKind task_kind_from_string(const std::string& s);
Split split_from_string(const std::string& s);
Metric metric_from_string(const std::string& s);

/// Synthetic keyword classification task. Each sequence carries `redundancy`
/// copies of one evidence token belonging to its class; every other content
/// token is filler drawn from the non-evidence vocabulary. Content lengths are
/// uniform in [min_len, max_len] and drawn independently of the label.
struct TaskConfig {
  TaskKind kind = TaskKind::Keyword;
  int vocab_size = 64;
  int max_seq_len = 16;  ///< cls included
  int min_len = 8;       ///< content tokens, cls excluded
  int max_len = 15;
  int num_classes = 2;
  int evidence_per_class = 2;
  int redundancy = 1;
  std::vector<double> priors;  ///< empty means uniform
  int train_size = 2000;
  int validation_size = 1000;
  int test_size = 200;
  std::uint64_t seed = 0;
  int pad_token_id = 0;
  int cls_token_id = 1;
  int mask_token_id = 2;

  void validate() const;
  std::vector<double> class_priors() const;
  /// Evidence tokens for class `c`, disjoint across classes.
  std::vector<int> evidence_tokens(int c) const;
  int first_filler_token() const;
  /// A model config whose vocabulary, length and special ids match this task.
  ModelConfig model_config(ModelConfig base) const;
};

void to_json(nlohmann::json& j, const TaskConfig& c);
void from_json(const nlohmann::json& j, TaskConfig& c);

struct Dataset {
  Split split = Split::Train;
  std::string task_id;
  std::vector<Observation> observations;

  std::size_t size() const { return observations.size(); }
  bool operator==(const Dataset&) const = default;
};

struct Splits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

Splits generate(const TaskConfig& config);
Dataset generate_split(const TaskConfig& config, Split split, int count);

/// Stable identifier of a task config (hash of its JSON form).
std::string task_id(const TaskConfig& config);

double evaluate_metric(std::span<const int> predictions, std::span<const int> labels, Metric metric,
                       int num_classes);

/// Metric of the constant predictor that always outputs the most frequent
/// label (ties toward the lowest class index).
double class_majority(const Dataset& dataset, Metric metric, int num_classes);

std::vector<int> labels_of(const Dataset& dataset);

/// Dataset file, schema version 1: a JSON header line
/// {"format":"fmm.dataset","version":1,"split":...,"task":{...},"count":n,...}
/// followed by one JSON record per observation:
/// {"tokens":[...],"label":y,"split":"train","maskable":[...]}.
std::string encode_dataset(const Dataset& dataset, const TaskConfig& config, const nlohmann::json& extra = {});
Dataset decode_dataset(const std::string& text, nlohmann::json* header = nullptr);
void save_dataset(const Dataset& dataset, const TaskConfig& config, const std::filesystem::path& path,
                  const nlohmann::json& extra = {});
Dataset load_dataset(const std::filesystem::path& path, nlohmann::json* header = nullptr);

}  // namespace fmm::data
