#include "fmm/training.hpp"

#include <algorithm>
#include <cmath>

#include "fmm/error.hpp"

namespace fmm::train {

std::string to_string(TrainStrategy s) {
  switch (s) {
    case TrainStrategy::NoMasking: return "no_masking";
    case TrainStrategy::Masking: return "masking";
    case TrainStrategy::Use5050: return "use5050";
  }
  return "?";
}

std::string to_string(ValStrategy s) {
  switch (s) {
    case ValStrategy::NoMasking: return "no_masking";
    case ValStrategy::Masking: return "masking";
    case ValStrategy::UseBoth: return "use_both";
  }
  return "?";
}

TrainStrategy train_strategy_from_string(const std::string& s) {
  if (s == "no_masking") return TrainStrategy::NoMasking;
  if (s == "masking") return TrainStrategy::Masking;
  if (s == "use5050") return TrainStrategy::Use5050;
  throw ConfigError("unknown training strategy '" + s + "'");
}

ValStrategy val_strategy_from_string(const std::string& s) {
  if (s == "no_masking") return ValStrategy::NoMasking;
  if (s == "masking") return ValStrategy::Masking;
  if (s == "use_both") return ValStrategy::UseBoth;
  throw ConfigError("unknown validation strategy '" + s + "'");
}

std::size_t masked_count(double ratio, std::size_t maskable) {
  const double k = std::floor(ratio * static_cast<double>(maskable) + 0.5);
  return std::min(maskable, static_cast<std::size_t>(std::max(0.0, k)));
}

Observation mask_at_ratio(const Observation& obs, double ratio, Rng& rng, int mask_token_id) {
  const auto chosen = rng.sample(obs.maskable, masked_count(ratio, obs.maskable.size()));
  return apply_mask(obs, chosen, mask_token_id);
}

std::vector<Observation> mask_minibatch(std::span<const Observation> batch, TrainStrategy strategy, Rng& rng,
                                        int mask_token_id, std::vector<double>* sampled_ratios) {
  std::vector<Observation> out(batch.begin(), batch.end());
  if (strategy == TrainStrategy::NoMasking) return out;
  const std::size_t first_masked = strategy == TrainStrategy::Use5050 ? (out.size() + 1) / 2 : 0;
  for (std::size_t i = first_masked; i < out.size(); ++i) {
    const double u = rng.uniform01();
    if (sampled_ratios != nullptr) sampled_ratios->push_back(u);
    out[i] = mask_at_ratio(out[i], u, rng, mask_token_id);
  }
  return out;
}

data::Dataset build_validation(const data::Dataset& validation, ValStrategy strategy, Rng& rng,
                               int mask_token_id) {
  if (validation.observations.empty()) throw ContractError("empty validation dataset");
  data::Dataset out = validation;
  if (strategy == ValStrategy::NoMasking) return out;
  auto masked = mask_minibatch(validation.observations, TrainStrategy::Masking, rng, mask_token_id);
  if (strategy == ValStrategy::Masking) {
    out.observations = std::move(masked);
  } else {
    out.observations.insert(out.observations.end(), masked.begin(), masked.end());
  }
  return out;
}

data::Dataset transform_dataset(const data::Dataset& dataset, TrainStrategy strategy, Rng& rng,
                                int mask_token_id) {
  data::Dataset out = dataset;
  out.observations = mask_minibatch(dataset.observations, strategy, rng, mask_token_id);
  return out;
}

void to_json(nlohmann::json& j, const Hyperparams& h) {
  j = nlohmann::json{{"learning_rate", h.learning_rate}, {"batch_size", h.batch_size},
                     {"max_epochs", h.max_epochs},       {"beta1", h.beta1},
                     {"beta2", h.beta2},                 {"epsilon", h.epsilon},
                     {"warmup_steps", h.warmup_steps},   {"metric", data::to_string(h.metric)}};
}

void from_json(const nlohmann::json& j, Hyperparams& h) {
  Hyperparams d;
  h.learning_rate = j.value("learning_rate", d.learning_rate);
  h.batch_size = j.value("batch_size", d.batch_size);
  h.max_epochs = j.value("max_epochs", d.max_epochs);
  h.beta1 = j.value("beta1", d.beta1);
  h.beta2 = j.value("beta2", d.beta2);
  h.epsilon = j.value("epsilon", d.epsilon);
  h.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  h.metric = data::metric_from_string(j.value("metric", data::to_string(d.metric)));
}

std::size_t select_epoch(std::span<const double> validation_metrics) {
  if (validation_metrics.empty()) throw ContractError("no epochs to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < validation_metrics.size(); ++i) {
    if (validation_metrics[i] > validation_metrics[best]) best = i;
  }
  return best;
}

std::vector<int> predict_all(const ModelCheckpoint& model, const data::Dataset& dataset) {
  std::vector<int> out;
  out.reserve(dataset.size());
  for (const auto& o : dataset.observations) out.push_back(predict(model, o));
  return out;
}

double evaluate(const ModelCheckpoint& model, const data::Dataset& dataset, double masking_ratio, Rng& rng,
                data::Metric metric) {
  if (!(masking_ratio >= 0.0 && masking_ratio <= 1.0)) throw ContractError("masking ratio outside [0, 1]");
  std::vector<int> preds;
  preds.reserve(dataset.size());
  const int mask_id = model.config().mask_token_id;
  for (const auto& o : dataset.observations) {
    preds.push_back(masking_ratio == 0.0 ? predict(model, o) : predict(model, mask_at_ratio(o, masking_ratio, rng, mask_id)));
  }
  return data::evaluate_metric(preds, data::labels_of(dataset), metric, model.config().num_classes);
}

namespace {

class Optimizer {
 public:
  Optimizer(const Hyperparams& hp, std::size_t n) : hp_(hp), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double lr = hp_.warmup_steps > 0
                          ? hp_.learning_rate * std::min(1.0, static_cast<double>(t_) / hp_.warmup_steps)
                          : hp_.learning_rate;
    const double c1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = hp_.beta1 * m_[i] + (1.0 - hp_.beta1) * grad[i];
      v_[i] = hp_.beta2 * v_[i] + (1.0 - hp_.beta2) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + hp_.epsilon);
    }
  }

 private:
  Hyperparams hp_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

}  // namespace

TrainReport train(const ModelConfig& config, const data::Dataset& train_set, const data::Dataset& validation_set,
                  TrainStrategy train_strategy, ValStrategy val_strategy, const Hyperparams& hp,
                  std::uint64_t seed) {
  if (hp.batch_size < 1 || hp.max_epochs < 1) throw ConfigError("batch_size and max_epochs must be positive");
  if (train_set.observations.empty()) throw ContractError("empty training dataset");
  ModelConfig cfg = config;
  cfg.seed = seed;
  TrainReport report{{}, 0, ModelCheckpoint::initialize(cfg), seed, train_strategy, val_strategy, hp.metric};
  ModelCheckpoint& model = report.checkpoint;
  const int mask_id = cfg.mask_token_id;

  Rng batch_rng(derive_seed(seed, 1));
  Rng val_rng(derive_seed(seed, 2));
  const data::Dataset val = build_validation(validation_set, val_strategy, val_rng, mask_id);
  const auto val_labels = data::labels_of(val);

  Optimizer opt(hp, model.layout().total);
  std::vector<double> grad(model.layout().total);
  std::vector<double> best_params(model.parameters().begin(), model.parameters().end());
  std::vector<double> val_metrics;
  std::vector<std::size_t> order(train_set.size());
  long step = 0;

  for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    batch_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hp.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
      std::vector<Observation> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set.observations[order[i]]);
      batch = mask_minibatch(batch, train_strategy, batch_rng, mask_id);

      std::fill(grad.begin(), grad.end(), 0.0);
      const double scale = 1.0 / static_cast<double>(batch.size());
      double batch_loss = 0.0;
      try {
        for (const auto& o : batch) batch_loss += loss_and_gradient(model, o, grad, scale);
      } catch (const NumericError& e) {
        throw TrainingError(std::string("diverged: ") + e.what(), epoch, step);
      }
      if (!std::isfinite(batch_loss)) throw TrainingError("non-finite training loss", epoch, step);
      opt.step(model.mutable_parameters(), grad);
      loss_sum += batch_loss;
      ++step;
    }
    const double metric = data::evaluate_metric(predict_all(model, val), val_labels, hp.metric, cfg.num_classes);
    report.epochs.push_back({epoch, loss_sum / static_cast<double>(train_set.size()), metric});
    val_metrics.push_back(metric);
    if (select_epoch(val_metrics) + 1 == static_cast<std::size_t>(epoch)) {
      best_params.assign(model.parameters().begin(), model.parameters().end());
    }
  }
  report.selected_epoch = static_cast<int>(select_epoch(val_metrics)) + 1;
  std::copy(best_params.begin(), best_params.end(), model.mutable_parameters().begin());
  model.metadata.epoch = report.selected_epoch;
  model.metadata.seed = seed;
  model.metadata.strategy = to_string(train_strategy) + "/" + to_string(val_strategy);
  return report;
}

nlohmann::json report_to_json(const TrainReport& report) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation_metric", e.validation_metric}});
  }
  return {{"seed", report.seed},
          {"train_strategy", to_string(report.train_strategy)},
          {"val_strategy", to_string(report.val_strategy)},
          {"metric", data::to_string(report.metric)},
          {"selected_epoch", report.selected_epoch},
          {"epochs", epochs}};
}

}  // namespace fmm::train
