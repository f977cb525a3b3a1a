#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmm/data.hpp"
#include "fmm/model.hpp"
#include "fmm/rng.hpp"

namespace fmm::train {

enum class TrainStrategy { NoMasking, Masking, Use5050 };
enum class ValStrategy { NoMasking, Masking, UseBoth };

std::string to_string(TrainStrategy s);
std::string to_string(ValStrategy s);
TrainStrategy train_strategy_from_string(const std::string& s);
ValStrategy val_strategy_from_string(const std::string& s);

/// round(ratio * maskable), half rounded up.
std::size_t masked_count(double ratio, std::size_t maskable);

/// Masks `masked_count(ratio, |maskable|)` positions chosen uniformly
/// without replacement.
Observation mask_at_ratio(const Observation& obs, double ratio, Rng& rng, int mask_token_id);

/// Masked fine-tuning mini-batch transform. Masking draws a ratio
/// u ~ Uniform[0, 1] per observation; Use5050 leaves the first ceil(n/2)
/// observations untouched and masks the rest. Drawn ratios are appended to
/// `sampled_ratios` when given.
std::vector<Observation> mask_minibatch(std::span<const Observation> batch, TrainStrategy strategy, Rng& rng,
                                        int mask_token_id, std::vector<double>* sampled_ratios = nullptr);

/// Validation set for epoch selection. UseBoth concatenates the unmasked set
/// with a uniformly masked copy.
data::Dataset build_validation(const data::Dataset& validation, ValStrategy strategy, Rng& rng,
                               int mask_token_id);

/// Applies a training-strategy transform to a whole dataset, treating it as
/// one batch (used to calibrate MaSF on the training distribution).
data::Dataset transform_dataset(const data::Dataset& dataset, TrainStrategy strategy, Rng& rng,
                                int mask_token_id);

/// Adaptive optimizer settings. beta1 = 0 gives the momentumless variant
/// used by default.
struct Hyperparams {
  double learning_rate = 2e-3;
  int batch_size = 32;
  int max_epochs = 20;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int warmup_steps = 100;
  data::Metric metric = data::Metric::Accuracy;
};

void to_json(nlohmann::json& j, const Hyperparams& h);
void from_json(const nlohmann::json& j, Hyperparams& h);

struct EpochRecord {
  int epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  double validation_metric = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int selected_epoch = 0;
  ModelCheckpoint checkpoint;
  std::uint64_t seed = 0;
  TrainStrategy train_strategy = TrainStrategy::Use5050;
  ValStrategy val_strategy = ValStrategy::UseBoth;
  data::Metric metric = data::Metric::Accuracy;
};

/// Index of the maximal value, earliest on ties.
std::size_t select_epoch(std::span<const double> validation_metrics);

/// Runs `max_epochs` full epochs and returns the checkpoint of the epoch with
/// the best validation metric. Throws TrainingError on a non-finite loss.
TrainReport train(const ModelConfig& config, const data::Dataset& train_set, const data::Dataset& validation_set,
                  TrainStrategy train_strategy, ValStrategy val_strategy, const Hyperparams& hp,
                  std::uint64_t seed);

std::vector<int> predict_all(const ModelCheckpoint& model, const data::Dataset& dataset);

/// Task metric after masking round(ratio * |maskable|) random positions per
/// observation.
double evaluate(const ModelCheckpoint& model, const data::Dataset& dataset, double masking_ratio, Rng& rng,
                data::Metric metric);

nlohmann::json report_to_json(const TrainReport& report);

}  // namespace fmm::train
