#include "fmm/ims.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <unordered_map>

#include "fmm/error.hpp"

namespace fmm::ims {

namespace {

struct MeasureName {
  Measure measure;
  const char* name;
};

constexpr MeasureName kNames[] = {
    {Measure::GradL2, "grad_l2"},
    {Measure::GradL1, "grad_l1"},
    {Measure::InputTimesGradSigned, "x_grad_sign"},
    {Measure::InputTimesGradAbs, "x_grad_abs"},
    {Measure::IntegratedGradSigned, "ig_sign"},
    {Measure::IntegratedGradAbs, "ig_abs"},
    {Measure::LeaveOneOutSigned, "loo_sign"},
    {Measure::LeaveOneOutAbs, "loo_abs"},
    {Measure::Beam, "beam"},
    {Measure::Random, "random"},
};

ImportanceScores empty_scores(const Observation& obs, Measure measure, Variant variant, int explained) {
  ImportanceScores s;
  s.positions = obs.maskable;
  s.scores.assign(obs.maskable.size(), 0.0);
  s.variant = variant;
  s.measure = measure;
  s.explained_class = explained;
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::string to_string(Measure m) {
  for (const auto& n : kNames) {
    if (n.measure == m) return n.name;
  }
  return "?";
}

std::string to_string(Variant v) { return v == Variant::Signed ? "signed" : "absolute"; }

Measure measure_from_string(const std::string& s) {
  for (const auto& n : kNames) {
    if (s == n.name) return n.measure;
  }
  throw ConfigError("unknown importance measure '" + s + "'");
}

std::vector<Measure> all_measures() {
  std::vector<Measure> out;
  for (const auto& n : kNames) out.push_back(n.measure);
  return out;
}

bool recursive_by_default(Measure m) { return m != Measure::Beam && m != Measure::Random; }

ImportanceScores to_absolute(ImportanceScores scores) {
  for (double& v : scores.scores) v = std::abs(v);
  scores.variant = Variant::Absolute;
  return scores;
}

ImportanceScores grad_im(const ModelCheckpoint& model, const Observation& obs, GradNorm norm) {
  const int y = predict(model, obs);
  const auto g = input_gradient(model, obs, y);
  auto out = empty_scores(obs, norm == GradNorm::L2 ? Measure::GradL2 : Measure::GradL1, Variant::Absolute, y);
  for (std::size_t i = 0; i < obs.maskable.size(); ++i) {
    double s = 0.0;
    for (double v : g.dx_row(obs.maskable[i])) s += norm == GradNorm::L2 ? v * v : std::abs(v);
    out.scores[i] = norm == GradNorm::L2 ? std::sqrt(s) : s;
  }
  return out;
}

ImportanceScores input_times_grad(const ModelCheckpoint& model, const Observation& obs, Variant variant) {
  const int y = predict(model, obs);
  const auto g = input_gradient(model, obs, y);
  auto out = empty_scores(
      obs, variant == Variant::Signed ? Measure::InputTimesGradSigned : Measure::InputTimesGradAbs, variant, y);
  for (std::size_t i = 0; i < obs.maskable.size(); ++i) {
    const int t = obs.maskable[i];
    const double v = g.dx_row(t)[static_cast<std::size_t>(obs.tokens[static_cast<std::size_t>(t)])];
    out.scores[i] = variant == Variant::Signed ? v : std::abs(v);
  }
  return out;
}

std::vector<double> integrated_gradient_all_positions(const ModelCheckpoint& model, const Observation& obs,
                                                      int samples, int target_class) {
  if (samples < 1) throw ContractError("integrated gradient needs at least one sample");
  const int H = model.config().hidden_dim;
  std::vector<double> acc(static_cast<std::size_t>(obs.length), 0.0);
  for (int i = 1; i <= samples; ++i) {
    const double alpha = static_cast<double>(i) / samples;
    const auto eg = embedding_gradient(model, obs, target_class, alpha);
    for (int t = 0; t < obs.length; ++t) {
      const std::span<const double> dh(eg.d_f_d_h.data() + static_cast<std::size_t>(t) * H, static_cast<std::size_t>(H));
      acc[static_cast<std::size_t>(t)] += dot(model.token_embedding(obs.tokens[static_cast<std::size_t>(t)]), dh);
    }
  }
  for (double& v : acc) v /= samples;
  return acc;
}

ImportanceScores integrated_gradient(const ModelCheckpoint& model, const Observation& obs, int samples,
                                     Variant variant) {
  const int y = predict(model, obs);
  const auto all = integrated_gradient_all_positions(model, obs, samples, y);
  auto out = empty_scores(
      obs, variant == Variant::Signed ? Measure::IntegratedGradSigned : Measure::IntegratedGradAbs, variant, y);
  for (std::size_t i = 0; i < obs.maskable.size(); ++i) {
    const double v = all[static_cast<std::size_t>(obs.maskable[i])];
    out.scores[i] = variant == Variant::Signed ? v : std::abs(v);
  }
  return out;
}

ImportanceScores leave_one_out(const ModelCheckpoint& model, const Observation& obs, Variant variant) {
  const auto base = forward(model, obs, false).probabilities;
  const int y = argmax(base);
  const int mask_id = model.config().mask_token_id;
  auto out = empty_scores(
      obs, variant == Variant::Signed ? Measure::LeaveOneOutSigned : Measure::LeaveOneOutAbs, variant, y);
  for (std::size_t i = 0; i < obs.maskable.size(); ++i) {
    const int pos = obs.maskable[i];
    if (obs.tokens[static_cast<std::size_t>(pos)] == mask_id) continue;
    const int single[] = {pos};
    const auto p = forward(model, apply_mask(obs, single, mask_id), false).probabilities;
    const double v = base[static_cast<std::size_t>(y)] - p[static_cast<std::size_t>(y)];
    out.scores[i] = variant == Variant::Signed ? v : std::abs(v);
  }
  return out;
}

double masking_objective(const ModelCheckpoint& model, const Observation& obs, std::span<const int> order,
                         int target_class) {
  const int mask_id = model.config().mask_token_id;
  double total = 0.0;
  for (std::size_t j = 1; j <= order.size(); ++j) {
    const auto masked = apply_mask(obs, order.first(j), mask_id);
    total += forward(model, masked, false).probabilities[static_cast<std::size_t>(target_class)];
  }
  return total;
}

MaskingOrder beam_search_order(const ModelCheckpoint& model, const Observation& obs, int beam_width) {
  if (beam_width < 1) throw ContractError("beam width must be >= 1");
  MaskingOrder result;
  result.source = MaskingOrder::Source::Beam;
  const auto& maskable = obs.maskable;
  if (maskable.empty()) return result;
  if (maskable.back() >= 64) throw ContractError("beam search supports positions below 64");

  const int y = predict(model, obs);
  const int mask_id = model.config().mask_token_id;
  std::unordered_map<std::uint64_t, double> prob_cache;
  auto prob_of = [&](std::uint64_t set) {
    auto it = prob_cache.find(set);
    if (it != prob_cache.end()) return it->second;
    Observation masked = obs;
    for (int p : maskable) {
      if (set & (std::uint64_t{1} << p)) masked.tokens[static_cast<std::size_t>(p)] = mask_id;
    }
    const double v = forward(model, masked, false).probabilities[static_cast<std::size_t>(y)];
    prob_cache.emplace(set, v);
    return v;
  };

  struct State {
    std::uint64_t set = 0;
    std::vector<int> order;
    double score = 0.0;
  };
  auto better = [](const State& a, const State& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.order < b.order;
  };

  std::vector<State> beam{State{}};
  std::unordered_map<std::uint64_t, State> children;
  for (std::size_t level = 0; level < maskable.size(); ++level) {
    children.clear();
    for (const auto& s : beam) {
      for (int p : maskable) {
        const std::uint64_t bit = std::uint64_t{1} << p;
        if (s.set & bit) continue;
        State child{s.set | bit, s.order, 0.0};
        child.order.push_back(p);
        child.score = s.score + prob_of(child.set);
        auto it = children.find(child.set);
        if (it == children.end()) {
          children.emplace(child.set, std::move(child));
        } else if (better(child, it->second)) {
          it->second = std::move(child);
        }
      }
    }
    beam.clear();
    for (auto& [key, st] : children) beam.push_back(std::move(st));
    std::sort(beam.begin(), beam.end(), better);
    if (beam.size() > static_cast<std::size_t>(beam_width)) beam.resize(static_cast<std::size_t>(beam_width));
  }
  result.positions = beam.front().order;
  return result;
}

ImportanceScores random_im(const Observation& obs, Rng& rng) {
  auto out = empty_scores(obs, Measure::Random, Variant::Absolute, -1);
  for (double& v : out.scores) v = rng.uniform01();
  return out;
}

std::vector<std::size_t> ranking(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

MaskingOrder order_from_scores(const ImportanceScores& scores) {
  MaskingOrder out;
  out.source = MaskingOrder::Source::Scores;
  for (std::size_t i : ranking(scores.scores)) out.positions.push_back(scores.positions[i]);
  return out;
}

Explanation explain(const ModelCheckpoint& model, const Observation& obs, Measure measure, Rng& rng,
                    const ExplainOptions& options) {
  Explanation e;
  e.measure = measure;
  switch (measure) {
    case Measure::GradL2: e.scores = grad_im(model, obs, GradNorm::L2); break;
    case Measure::GradL1: e.scores = grad_im(model, obs, GradNorm::L1); break;
    case Measure::InputTimesGradSigned: e.scores = input_times_grad(model, obs, Variant::Signed); break;
    case Measure::InputTimesGradAbs: e.scores = input_times_grad(model, obs, Variant::Absolute); break;
    case Measure::IntegratedGradSigned:
      e.scores = integrated_gradient(model, obs, options.ig_samples, Variant::Signed);
      break;
    case Measure::IntegratedGradAbs:
      e.scores = integrated_gradient(model, obs, options.ig_samples, Variant::Absolute);
      break;
    case Measure::LeaveOneOutSigned: e.scores = leave_one_out(model, obs, Variant::Signed); break;
    case Measure::LeaveOneOutAbs: e.scores = leave_one_out(model, obs, Variant::Absolute); break;
    case Measure::Random: e.scores = random_im(obs, rng); break;
    case Measure::Beam:
      e.order = beam_search_order(model, obs, options.beam_width);
      return e;
  }
  e.order = order_from_scores(*e.scores);
  return e;
}

}  // namespace fmm::ims
