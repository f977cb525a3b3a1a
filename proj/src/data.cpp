#include "fmm/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fmm/error.hpp"
#include "fmm/io.hpp"
#include "fmm/rng.hpp"

namespace fmm::data {

std::string to_string(TaskKind kind) {
  return kind == TaskKind::Keyword ? "keyword" : "redundant_keyword";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "?";
}

std::string to_string(Metric metric) { return metric == Metric::Accuracy ? "accuracy" : "macro_f1"; }

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "keyword") return TaskKind::Keyword;
  if (s == "redundant_keyword") return TaskKind::RedundantKeyword;
  throw ConfigError("unknown task kind '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "validation") return Split::Validation;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + s + "'");
}

Metric metric_from_string(const std::string& s) {
  if (s == "accuracy") return Metric::Accuracy;
  if (s == "macro_f1") return Metric::MacroF1;
  throw ConfigError("unknown metric '" + s + "'");
}

void TaskConfig::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (evidence_per_class < 1) throw ConfigError("evidence_per_class must be >= 1");
  if (redundancy < 1) throw ConfigError("redundancy must be >= 1");
  if (kind == TaskKind::Keyword && redundancy != 1) throw ConfigError("keyword task requires redundancy 1");
  if (min_len < 1 || max_len < min_len) throw ConfigError("invalid length range");
  if (redundancy > min_len) throw ConfigError("redundancy exceeds the minimum sequence length");
  if (max_len + 1 > max_seq_len) throw ConfigError("max_len + cls exceeds max_seq_len");
  const int specials = 3;
  if (specials + num_classes * evidence_per_class >= vocab_size) {
    throw ConfigError("vocabulary too small for disjoint evidence sets plus filler");
  }
  for (int id : {pad_token_id, cls_token_id, mask_token_id}) {
    if (id < 0 || id >= specials) throw ConfigError("special token ids must be 0, 1 and 2");
  }
  if (pad_token_id == cls_token_id || pad_token_id == mask_token_id || cls_token_id == mask_token_id) {
    throw ConfigError("special token ids must be distinct");
  }
  if (!priors.empty()) {
    if (static_cast<int>(priors.size()) != num_classes) throw ConfigError("priors must have num_classes entries");
    double sum = 0.0;
    for (double p : priors) {
      if (!(p >= 0.0)) throw ConfigError("priors must be non-negative");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("priors must sum to 1");
  }
  if (train_size < 1 || validation_size < 1 || test_size < 1) throw ConfigError("split sizes must be positive");
}

std::vector<double> TaskConfig::class_priors() const {
  if (!priors.empty()) return priors;
  return std::vector<double>(static_cast<std::size_t>(num_classes), 1.0 / num_classes);
}

std::vector<int> TaskConfig::evidence_tokens(int c) const {
  std::vector<int> out;
  for (int i = 0; i < evidence_per_class; ++i) out.push_back(3 + c * evidence_per_class + i);
  return out;
}

int TaskConfig::first_filler_token() const { return 3 + num_classes * evidence_per_class; }

ModelConfig TaskConfig::model_config(ModelConfig base) const {
  base.vocab_size = vocab_size;
  base.max_seq_len = max_seq_len;
  base.num_classes = num_classes;
  base.pad_token_id = pad_token_id;
  base.cls_token_id = cls_token_id;
  base.mask_token_id = mask_token_id;
  return base;
}

void to_json(nlohmann::json& j, const TaskConfig& c) {
  j = nlohmann::json{{"kind", to_string(c.kind)},
                     {"vocab_size", c.vocab_size},
                     {"max_seq_len", c.max_seq_len},
                     {"min_len", c.min_len},
                     {"max_len", c.max_len},
                     {"num_classes", c.num_classes},
                     {"evidence_per_class", c.evidence_per_class},
                     {"redundancy", c.redundancy},
                     {"priors", c.priors},
                     {"train_size", c.train_size},
                     {"validation_size", c.validation_size},
                     {"test_size", c.test_size},
                     {"seed", c.seed},
                     {"pad_token_id", c.pad_token_id},
                     {"cls_token_id", c.cls_token_id},
                     {"mask_token_id", c.mask_token_id}};
}

void from_json(const nlohmann::json& j, TaskConfig& c) {
  TaskConfig d;
  c.kind = task_kind_from_string(j.value("kind", to_string(d.kind)));
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.min_len = j.value("min_len", d.min_len);
  c.max_len = j.value("max_len", d.max_len);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.evidence_per_class = j.value("evidence_per_class", d.evidence_per_class);
  c.redundancy = j.value("redundancy", c.kind == TaskKind::Keyword ? 1 : 3);
  c.priors = j.value("priors", d.priors);
  c.train_size = j.value("train_size", d.train_size);
  c.validation_size = j.value("validation_size", d.validation_size);
  c.test_size = j.value("test_size", d.test_size);
  c.seed = j.value("seed", d.seed);
  c.pad_token_id = j.value("pad_token_id", d.pad_token_id);
  c.cls_token_id = j.value("cls_token_id", d.cls_token_id);
  c.mask_token_id = j.value("mask_token_id", d.mask_token_id);
}

std::string task_id(const TaskConfig& config) {
  return to_string(config.kind) + "-" + io::hex64(io::fnv1a(nlohmann::json(config).dump())).substr(0, 8);
}

Dataset generate_split(const TaskConfig& config, Split split, int count) {
  config.validate();
  Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(split)));
  const auto priors = config.class_priors();
  const int filler_lo = config.first_filler_token();
  const int filler_count = config.vocab_size - filler_lo;

  Dataset ds;
  ds.split = split;
  ds.task_id = task_id(config);
  ds.observations.reserve(static_cast<std::size_t>(count));
  std::vector<int> content_positions;
  for (int i = 0; i < count; ++i) {
    const double u = rng.uniform01();
    int label = config.num_classes - 1;
    double acc = 0.0;
    for (int c = 0; c < config.num_classes; ++c) {
      acc += priors[static_cast<std::size_t>(c)];
      if (u < acc) {
        label = c;
        break;
      }
    }
    const int len = config.min_len + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(config.max_len - config.min_len + 1)));
    const auto evidence = config.evidence_tokens(label);
    const int ev = evidence[rng.uniform_int(evidence.size())];

    Observation obs;
    obs.label = label;
    obs.length = len + 1;
    obs.tokens.assign(static_cast<std::size_t>(config.max_seq_len), config.pad_token_id);
    obs.tokens[0] = config.cls_token_id;
    content_positions.resize(static_cast<std::size_t>(len));
    std::iota(content_positions.begin(), content_positions.end(), 1);
    for (int p : content_positions) {
      obs.tokens[static_cast<std::size_t>(p)] = filler_lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(filler_count)));
    }
    for (int p : rng.sample(content_positions, static_cast<std::size_t>(config.redundancy))) {
      obs.tokens[static_cast<std::size_t>(p)] = ev;
    }
    obs.maskable = content_positions;
    ds.observations.push_back(std::move(obs));
  }
  return ds;
}

Splits generate(const TaskConfig& config) {
  return {generate_split(config, Split::Train, config.train_size),
          generate_split(config, Split::Validation, config.validation_size),
          generate_split(config, Split::Test, config.test_size)};
}

double evaluate_metric(std::span<const int> predictions, std::span<const int> labels, Metric metric,
                       int num_classes) {
  if (predictions.size() != labels.size()) throw ContractError("predictions and labels differ in length");
  if (labels.empty()) throw ContractError("metric of an empty set");
  if (metric == Metric::Accuracy) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(labels.size());
  }
  std::vector<long> tp(static_cast<std::size_t>(num_classes), 0), fp(tp), fn(tp);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], y = labels[i];
    if (p < 0 || p >= num_classes || y < 0 || y >= num_classes) throw ContractError("class index out of range");
    if (p == y) {
      ++tp[static_cast<std::size_t>(y)];
    } else {
      ++fp[static_cast<std::size_t>(p)];
      ++fn[static_cast<std::size_t>(y)];
    }
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    const long denom = 2 * tp[c] + fp[c] + fn[c];
    sum += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  return sum / num_classes;
}

std::vector<int> labels_of(const Dataset& dataset) {
  std::vector<int> out;
  out.reserve(dataset.size());
  for (const auto& o : dataset.observations) out.push_back(o.label);
  return out;
}

double class_majority(const Dataset& dataset, Metric metric, int num_classes) {
  if (dataset.observations.empty()) throw ContractError("class majority of an empty dataset");
  std::vector<long> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto& o : dataset.observations) ++counts.at(static_cast<std::size_t>(o.label));
  const int majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  const auto labels = labels_of(dataset);
  const std::vector<int> preds(labels.size(), majority);
  return evaluate_metric(preds, labels, metric, num_classes);
}

std::string encode_dataset(const Dataset& dataset, const TaskConfig& config, const nlohmann::json& extra) {
  nlohmann::json header{{"format", "fmm.dataset"},
                        {"version", 1},
                        {"split", to_string(dataset.split)},
                        {"task_id", dataset.task_id},
                        {"task", config},
                        {"count", dataset.size()}};
  if (!extra.is_null()) header["extra"] = extra;
  std::string out = header.dump();
  out.push_back('\n');
  const std::string split = to_string(dataset.split);
  for (const auto& o : dataset.observations) {
    nlohmann::json rec{{"tokens", o.tokens}, {"label", o.label}, {"split", split}, {"maskable", o.maskable}};
    out += rec.dump();
    out.push_back('\n');
  }
  return out;
}

Dataset decode_dataset(const std::string& text, nlohmann::json* header_out) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty dataset file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad dataset header: ") + e.what());
  }
  if (header.value("format", "") != "fmm.dataset" || header.value("version", 0) != 1) {
    throw FormatError("unsupported dataset format");
  }
  const TaskConfig config = header.at("task").get<TaskConfig>();
  Dataset ds;
  ds.split = split_from_string(header.at("split").get<std::string>());
  ds.task_id = header.at("task_id").get<std::string>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    Observation o;
    o.tokens = rec.at("tokens").get<std::vector<int>>();
    o.label = rec.at("label").get<int>();
    o.maskable = rec.at("maskable").get<std::vector<int>>();
    o.length = static_cast<int>(std::count_if(o.tokens.begin(), o.tokens.end(),
                                              [&](int t) { return t != config.pad_token_id; }));
    ds.observations.push_back(std::move(o));
  }
  if (ds.size() != header.at("count").get<std::size_t>()) throw FormatError("dataset record count mismatch");
  if (header_out != nullptr) *header_out = std::move(header);
  return ds;
}

void save_dataset(const Dataset& dataset, const TaskConfig& config, const std::filesystem::path& path,
                  const nlohmann::json& extra) {
  io::atomic_write(path, encode_dataset(dataset, config, extra));
}

Dataset load_dataset(const std::filesystem::path& path, nlohmann::json* header) {
  return decode_dataset(io::read_file(path), header);
}

}  // namespace fmm::data
