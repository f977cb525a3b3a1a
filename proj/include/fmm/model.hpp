#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fmm {

/// Architecture of the masked-token classifier: a pre-layer-norm transformer
/// encoder whose classification head reads the cls position.
struct ModelConfig {
  int vocab_size = 64;
  int max_seq_len = 16;
  int num_layers = 2;
  int hidden_dim = 32;
  int num_heads = 4;
  int ffn_dim = 64;
  int num_classes = 2;
  int pad_token_id = 0;
  int cls_token_id = 1;
  int mask_token_id = 2;
  std::uint64_t seed = 0;
  double init_std = 0.02;
  /// When false every layer normalization is the identity. Only used to build
  /// analytically tractable fixtures (linear-bypass models).
  bool layer_norm = true;

  /// Throws ConfigError when an invariant does not hold.
  void validate() const;
  int head_dim() const { return hidden_dim / num_heads; }
};

/// A token sequence `[cls, t1, ..., tn, pad, ...]`. `maskable` holds the
/// positions an explanation may mask (sorted, never cls or pad).
struct Observation {
  std::vector<int> tokens;
  int label = 0;
  std::vector<int> maskable;
  int length = 0;  ///< number of non-pad tokens, cls included

  bool operator==(const Observation&) const = default;
};

void validate_observation(const Observation& obs, const ModelConfig& config);

/// Copy of `obs` with `mask_token_id` written at each position. Throws
/// ContractError if a position is not maskable.
Observation apply_mask(const Observation& obs, std::span<const int> positions, int mask_token_id);

/// Activations right after each layer normalization that closes a block:
/// the next block's input norm, or the final norm for the last block.
/// Row-major [layer][position][hidden]; rows at or past `valid_len` are zero.
struct EmbeddingTrace {
  int num_layers = 0;
  int seq_len = 0;
  int hidden_dim = 0;
  int valid_len = 0;
  std::vector<double> activations;

  double at(int layer, int pos, int h) const {
    return activations[(static_cast<std::size_t>(layer) * seq_len + pos) * hidden_dim + h];
  }
  double& at(int layer, int pos, int h) {
    return activations[(static_cast<std::size_t>(layer) * seq_len + pos) * hidden_dim + h];
  }
};

/// Gradient of the pre-softmax logit of `target_class` with respect to the
/// token embeddings (`d_f_d_h`, T x H) and to the one-hot input (`d_f_d_x`,
/// T x V, where row t is E * d_f_d_h[t]).
struct GradientBundle {
  int target_class = 0;
  int seq_len = 0;
  int hidden_dim = 0;
  int vocab_size = 0;
  std::vector<double> d_f_d_h;
  std::vector<double> d_f_d_x;

  std::span<const double> dh_row(int t) const {
    return {d_f_d_h.data() + static_cast<std::size_t>(t) * hidden_dim,
            static_cast<std::size_t>(hidden_dim)};
  }
  std::span<const double> dx_row(int t) const {
    return {d_f_d_x.data() + static_cast<std::size_t>(t) * vocab_size,
            static_cast<std::size_t>(vocab_size)};
  }
};

struct TensorSpec {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

/// Offsets of every named tensor inside the flat parameter vector. Linear
/// weights are stored input-major (rows = fan-in), so y = x W + b.
struct ParameterLayout {
  struct Block {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_g, ln2_b, w1, b1, w2, b2;
  };

  explicit ParameterLayout(const ModelConfig& config);

  std::size_t tok_emb = 0;
  std::size_t pos_emb = 0;
  std::vector<Block> blocks;
  std::size_t lnf_g = 0;
  std::size_t lnf_b = 0;
  std::size_t head_w = 0;  ///< H x C
  std::size_t head_b = 0;
  std::vector<TensorSpec> tensors;
  std::size_t total = 0;

  const TensorSpec& find(const std::string& name) const;
};

struct TrainingMetadata {
  int epoch = -1;
  std::uint64_t seed = 0;
  std::string strategy;

  bool operator==(const TrainingMetadata&) const = default;
};

/// Weights plus architecture. Immutable once training hands it out, so
/// forward and gradient calls on a shared checkpoint are thread-safe.
class ModelCheckpoint {
 public:
  /// All parameters zero except layer-norm gains, which are one.
  explicit ModelCheckpoint(ModelConfig config);
  /// Random initialization drawn from `config.seed`.
  static ModelCheckpoint initialize(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }
  std::span<const double> parameters() const { return params_; }
  std::span<double> mutable_parameters() { return params_; }
  std::span<const double> tensor(const std::string& name) const;
  std::span<double> mutable_tensor(const std::string& name);

  /// Row `token` of the token embedding matrix E.
  std::span<const double> token_embedding(int token) const;

  TrainingMetadata metadata;

 private:
  ModelConfig config_;
  ParameterLayout layout_;
  std::vector<double> params_;
};

struct ForwardOutput {
  std::vector<double> logits;
  std::vector<double> probabilities;
  std::optional<EmbeddingTrace> trace;
};

ForwardOutput forward(const ModelCheckpoint& model, const Observation& obs, bool capture_trace);

GradientBundle input_gradient(const ModelCheckpoint& model, const Observation& obs, int target_class);

/// Argmax of the class probabilities, lowest class index on ties.
int predict(const ModelCheckpoint& model, const Observation& obs);

int argmax(std::span<const double> values);
std::vector<double> softmax(std::span<const double> logits);

/// Logits and d logit[target] / d token-embedding when every token embedding
/// is scaled by `token_scale` (positional embeddings stay at full strength).
struct EmbeddingGradient {
  std::vector<double> logits;
  std::vector<double> d_f_d_h;  ///< T x H, zero on padding rows
};
EmbeddingGradient embedding_gradient(const ModelCheckpoint& model, const Observation& obs,
                                     int target_class, double token_scale);

/// Logits for explicitly supplied token embeddings (`valid_len` x H rows).
std::vector<double> logits_from_embeddings(const ModelCheckpoint& model, const Observation& obs,
                                           std::span<const double> token_embeddings);

/// Cross-entropy loss of `obs.label`; adds d loss / d parameters, scaled by
/// `scale`, into `param_grad`.
double loss_and_gradient(const ModelCheckpoint& model, const Observation& obs,
                         std::span<double> param_grad, double scale = 1.0);

/// Gradient of logit[target] with respect to every parameter.
std::vector<double> logit_parameter_gradient(const ModelCheckpoint& model, const Observation& obs,
                                             int target_class);

}  // namespace fmm
