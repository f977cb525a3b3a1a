#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmm/model.hpp"
#include "fmm/rng.hpp"

namespace fmm::ims {

enum class Variant { Signed, Absolute };
enum class GradNorm { L1, L2 };

/// The nine importance measures plus the random baseline.
enum class Measure {
  GradL2,
  GradL1,
  InputTimesGradSigned,
  InputTimesGradAbs,
  IntegratedGradSigned,
  IntegratedGradAbs,
  LeaveOneOutSigned,
  LeaveOneOutAbs,
  Beam,
  Random,
};

std::string to_string(Measure m);
std::string to_string(Variant v);
Measure measure_from_string(const std::string& s);
std::vector<Measure> all_measures();
/// Beam and Random produce a full order up front; everything else is
/// re-explained after each masking round.
bool recursive_by_default(Measure m);

/// One score per maskable position (`positions` mirrors obs.maskable).
struct ImportanceScores {
  std::vector<int> positions;
  std::vector<double> scores;
  Variant variant = Variant::Absolute;
  Measure measure = Measure::Random;
  int explained_class = 0;
};

/// Maskable positions, most important first.
struct MaskingOrder {
  enum class Source { Beam, Scores };
  std::vector<int> positions;
  Source source = Source::Scores;
};

ImportanceScores to_absolute(ImportanceScores scores);

ImportanceScores grad_im(const ModelCheckpoint& model, const Observation& obs, GradNorm norm);
ImportanceScores input_times_grad(const ModelCheckpoint& model, const Observation& obs, Variant variant);

/// Riemann sum over right endpoints i/k, i = 1..k, with a zero token one-hot
/// baseline. Positional embeddings are not interpolated.
ImportanceScores integrated_gradient(const ModelCheckpoint& model, const Observation& obs, int samples,
                                     Variant variant);
/// Signed integrated gradient for every valid position (cls included),
/// explaining `target_class`.
std::vector<double> integrated_gradient_all_positions(const ModelCheckpoint& model, const Observation& obs,
                                                      int samples, int target_class);

/// p(x)_y - p(x with position i masked)_y on class probabilities.
ImportanceScores leave_one_out(const ModelCheckpoint& model, const Observation& obs, Variant variant);

/// Sum over prefixes j = 1..|order| of p(x with order[0..j) masked)_target.
double masking_objective(const ModelCheckpoint& model, const Observation& obs, std::span<const int> order,
                         int target_class);

/// Beam search over masking orders minimizing masking_objective for the
/// predicted class. States covering the same masked set are merged.
MaskingOrder beam_search_order(const ModelCheckpoint& model, const Observation& obs, int beam_width = 10);

ImportanceScores random_im(const Observation& obs, Rng& rng);

/// Indices of `scores` sorted by descending value, lower index first on ties.
std::vector<std::size_t> ranking(std::span<const double> scores);
MaskingOrder order_from_scores(const ImportanceScores& scores);

struct ExplainOptions {
  int ig_samples = 20;
  int beam_width = 10;
};

struct Explanation {
  Measure measure = Measure::Random;
  std::optional<ImportanceScores> scores;  ///< absent for Beam
  MaskingOrder order;
};

Explanation explain(const ModelCheckpoint& model, const Observation& obs, Measure measure, Rng& rng,
                    const ExplainOptions& options = {});

}  // namespace fmm::ims
