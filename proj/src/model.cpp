#include "fmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "fmm/error.hpp"
#include "fmm/rng.hpp"

namespace fmm {

void ModelConfig::validate() const {
  if (vocab_size < 4) throw ConfigError("vocab_size must be at least 4");
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2");
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (hidden_dim < 1 || num_heads < 1 || ffn_dim < 1) throw ConfigError("dimensions must be positive");
  if (hidden_dim % num_heads != 0) throw ConfigError("hidden_dim must be divisible by num_heads");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  const int ids[] = {pad_token_id, cls_token_id, mask_token_id};
  for (int id : ids) {
    if (id < 0 || id >= vocab_size) throw ConfigError("special token id out of vocabulary");
  }
  if (pad_token_id == cls_token_id || pad_token_id == mask_token_id || cls_token_id == mask_token_id) {
    throw ConfigError("pad, cls and mask token ids must be distinct");
  }
  if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
}

void validate_observation(const Observation& obs, const ModelConfig& config) {
  const int n = static_cast<int>(obs.tokens.size());
  if (n < 1 || n > config.max_seq_len) throw ConfigError("observation length exceeds max_seq_len");
  if (obs.tokens[0] != config.cls_token_id) throw ConfigError("observation must start with cls");
  if (obs.label < 0 || obs.label >= config.num_classes) throw ConfigError("label out of range");
  int length = 0;
  bool in_padding = false;
  for (int t = 0; t < n; ++t) {
    const int tok = obs.tokens[t];
    if (tok < 0 || tok >= config.vocab_size) throw ConfigError("token id out of vocabulary");
    if (tok == config.pad_token_id) {
      in_padding = true;
    } else {
      if (in_padding) throw ConfigError("padding must be a suffix");
      ++length;
    }
  }
  if (length != obs.length) throw ConfigError("observation length field disagrees with tokens");
  int prev = 0;
  for (int p : obs.maskable) {
    if (p <= prev || p >= obs.length) throw ConfigError("maskable positions must be sorted, unique and inside [1, length)");
    if (obs.tokens[p] == config.cls_token_id) throw ConfigError("cls position cannot be maskable");
    prev = p;
  }
}

Observation apply_mask(const Observation& obs, std::span<const int> positions, int mask_token_id) {
  Observation out = obs;
  for (int p : positions) {
    if (!std::binary_search(obs.maskable.begin(), obs.maskable.end(), p)) {
      throw ContractError("position " + std::to_string(p) + " is not maskable");
    }
    out.tokens[p] = mask_token_id;
  }
  return out;
}

ParameterLayout::ParameterLayout(const ModelConfig& config) {
  const int V = config.vocab_size, T = config.max_seq_len, H = config.hidden_dim;
  const int F = config.ffn_dim, C = config.num_classes;
  auto add = [&](const std::string& name, int rows, int cols) {
    TensorSpec spec{name, total, rows, cols};
    total += spec.size();
    tensors.push_back(spec);
    return spec.offset;
  };
  tok_emb = add("tok_emb", V, H);
  pos_emb = add("pos_emb", T, H);
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    Block b{};
    b.ln1_g = add(p + "ln1.gain", 1, H);
    b.ln1_b = add(p + "ln1.bias", 1, H);
    b.wq = add(p + "attn.wq", H, H);
    b.bq = add(p + "attn.bq", 1, H);
    b.wk = add(p + "attn.wk", H, H);
    b.bk = add(p + "attn.bk", 1, H);
    b.wv = add(p + "attn.wv", H, H);
    b.bv = add(p + "attn.bv", 1, H);
    b.wo = add(p + "attn.wo", H, H);
    b.bo = add(p + "attn.bo", 1, H);
    b.ln2_g = add(p + "ln2.gain", 1, H);
    b.ln2_b = add(p + "ln2.bias", 1, H);
    b.w1 = add(p + "mlp.w1", H, F);
    b.b1 = add(p + "mlp.b1", 1, F);
    b.w2 = add(p + "mlp.w2", F, H);
    b.b2 = add(p + "mlp.b2", 1, H);
    blocks.push_back(b);
  }
  lnf_g = add("lnf.gain", 1, H);
  lnf_b = add("lnf.bias", 1, H);
  head_w = add("head.w", H, C);
  head_b = add("head.b", 1, C);
}

const TensorSpec& ParameterLayout::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw ContractError("unknown tensor " + name);
}

ModelCheckpoint::ModelCheckpoint(ModelConfig config)
    : config_(std::move(config)), layout_((config_.validate(), config_)), params_(layout_.total, 0.0) {
  for (const auto& t : layout_.tensors) {
    if (t.name.ends_with(".gain")) std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(t.offset), t.size(), 1.0);
  }
}

ModelCheckpoint ModelCheckpoint::initialize(const ModelConfig& config) {
  ModelCheckpoint m(config);
  Rng rng(config.seed);
  for (const auto& t : m.layout_.tensors) {
    double stddev = 0.0;
    if (t.name == "tok_emb" || t.name == "pos_emb") {
      stddev = config.init_std;
    } else if (t.rows > 1) {
      stddev = 1.0 / std::sqrt(static_cast<double>(t.rows));
    }
    if (stddev == 0.0) continue;
    for (std::size_t i = 0; i < t.size(); ++i) m.params_[t.offset + i] = stddev * rng.normal();
  }
  return m;
}

std::span<const double> ModelCheckpoint::tensor(const std::string& name) const {
  const auto& t = layout_.find(name);
  return {params_.data() + t.offset, t.size()};
}

std::span<double> ModelCheckpoint::mutable_tensor(const std::string& name) {
  const auto& t = layout_.find(name);
  return {params_.data() + t.offset, t.size()};
}

std::span<const double> ModelCheckpoint::token_embedding(int token) const {
  const std::size_t H = static_cast<std::size_t>(config_.hidden_dim);
  return {params_.data() + layout_.tok_emb + static_cast<std::size_t>(token) * H, H};
}

int argmax(std::span<const double> values) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  const double mx = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double& v : out) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.044715;

// y[n x out] = x[n x in] W[in x out] + b
void linear(const double* x, int n, int in, const double* W, const double* b, int out, double* y) {
  for (int i = 0; i < n; ++i) {
    double* yr = y + static_cast<std::size_t>(i) * out;
    std::copy_n(b, out, yr);
    const double* xr = x + static_cast<std::size_t>(i) * in;
    for (int p = 0; p < in; ++p) {
      const double xv = xr[p];
      const double* wr = W + static_cast<std::size_t>(p) * out;
      for (int j = 0; j < out; ++j) yr[j] += xv * wr[j];
    }
  }
}

// dx += dy W^T ; dW += x^T dy ; db += sum(dy). dW/db skipped when null.
void linear_backward(const double* x, const double* dy, int n, int in, const double* W, int out,
                     double* dx, double* dW, double* db) {
  for (int i = 0; i < n; ++i) {
    const double* dyr = dy + static_cast<std::size_t>(i) * out;
    const double* xr = x + static_cast<std::size_t>(i) * in;
    double* dxr = dx + static_cast<std::size_t>(i) * in;
    for (int p = 0; p < in; ++p) {
      const double* wr = W + static_cast<std::size_t>(p) * out;
      double acc = 0.0;
      for (int j = 0; j < out; ++j) acc += dyr[j] * wr[j];
      dxr[p] += acc;
    }
    if (dW != nullptr) {
      for (int p = 0; p < in; ++p) {
        const double xv = xr[p];
        double* dwr = dW + static_cast<std::size_t>(p) * out;
        for (int j = 0; j < out; ++j) dwr[j] += xv * dyr[j];
      }
      for (int j = 0; j < out; ++j) db[j] += dyr[j];
    }
  }
}

struct NormCache {
  std::vector<double> xhat;
  std::vector<double> rstd;
};

void layer_norm(const double* x, int n, int H, const double* g, const double* b, bool enabled,
                double* y, NormCache& cache) {
  const std::size_t nh = static_cast<std::size_t>(n) * H;
  if (!enabled) {
    std::copy_n(x, nh, y);
    return;
  }
  cache.xhat.resize(nh);
  cache.rstd.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* xr = x + static_cast<std::size_t>(i) * H;
    double mu = 0.0;
    for (int h = 0; h < H; ++h) mu += xr[h];
    mu /= H;
    double var = 0.0;
    for (int h = 0; h < H; ++h) var += (xr[h] - mu) * (xr[h] - mu);
    var /= H;
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd[i] = rstd;
    double* xh = cache.xhat.data() + static_cast<std::size_t>(i) * H;
    double* yr = y + static_cast<std::size_t>(i) * H;
    for (int h = 0; h < H; ++h) {
      xh[h] = (xr[h] - mu) * rstd;
      yr[h] = g[h] * xh[h] + b[h];
    }
  }
}

// dx += d LN / dx applied to dy, for rows [0, rows).
void layer_norm_backward(const double* dy, int rows, int H, const double* g, bool enabled,
                         const NormCache& cache, double* dx, double* dg, double* db) {
  if (!enabled) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(rows) * H; ++i) dx[i] += dy[i];
    return;
  }
  std::vector<double> dxhat(static_cast<std::size_t>(H));
  for (int i = 0; i < rows; ++i) {
    const double* dyr = dy + static_cast<std::size_t>(i) * H;
    const double* xh = cache.xhat.data() + static_cast<std::size_t>(i) * H;
    double mean_d = 0.0, mean_dx = 0.0;
    for (int h = 0; h < H; ++h) {
      dxhat[h] = dyr[h] * g[h];
      mean_d += dxhat[h];
      mean_dx += dxhat[h] * xh[h];
      if (dg != nullptr) {
        dg[h] += dyr[h] * xh[h];
        db[h] += dyr[h];
      }
    }
    mean_d /= H;
    mean_dx /= H;
    double* dxr = dx + static_cast<std::size_t>(i) * H;
    const double rstd = cache.rstd[i];
    for (int h = 0; h < H; ++h) dxr[h] += rstd * (dxhat[h] - mean_d - xh[h] * mean_dx);
  }
}

double gelu(double z) {
  const double s = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * z * (1.0 + std::tanh(s * (z + kGeluC * z * z * z)));
}

double gelu_grad(double z) {
  const double s = std::sqrt(2.0 / std::numbers::pi);
  const double th = std::tanh(s * (z + kGeluC * z * z * z));
  return 0.5 * (1.0 + th) + 0.5 * z * (1.0 - th * th) * s * (1.0 + 3.0 * kGeluC * z * z);
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// One forward/backward evaluation over the `n` valid positions. Padding is
/// never part of the computation, which is equivalent to masking it out of
/// attention.
class EncoderPass {
 public:
  EncoderPass(const ModelCheckpoint& model, int n)
      : cfg_(model.config()), lay_(model.layout()), p_(model.parameters().data()), n_(n) {
    blocks_.resize(static_cast<std::size_t>(cfg_.num_layers));
  }

  /// token_emb: n x H token embedding rows (positional embeddings added here).
  void run(std::span<const double> token_emb) {
    const int H = cfg_.hidden_dim, F = cfg_.ffn_dim, n = n_;
    const int nh = cfg_.num_heads, d = cfg_.head_dim();
    const std::size_t nH = static_cast<std::size_t>(n) * H;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const bool ln = cfg_.layer_norm;

    std::vector<double> h(nH);
    for (std::size_t i = 0; i < nH; ++i) h[i] = token_emb[i] + p_[lay_.pos_emb + i];

    for (int l = 0; l < cfg_.num_layers; ++l) {
      const auto& B = lay_.blocks[static_cast<std::size_t>(l)];
      auto& c = blocks_[static_cast<std::size_t>(l)];
      c.x_in = h;
      c.a.resize(nH);
      layer_norm(h.data(), n, H, p_ + B.ln1_g, p_ + B.ln1_b, ln, c.a.data(), c.ln1);
      c.q.resize(nH);
      c.k.resize(nH);
      c.v.resize(nH);
      linear(c.a.data(), n, H, p_ + B.wq, p_ + B.bq, H, c.q.data());
      linear(c.a.data(), n, H, p_ + B.wk, p_ + B.bk, H, c.k.data());
      linear(c.a.data(), n, H, p_ + B.wv, p_ + B.bv, H, c.v.data());
      c.probs.assign(static_cast<std::size_t>(nh) * n * n, 0.0);
      c.ctx.assign(nH, 0.0);
      for (int hd = 0; hd < nh; ++hd) {
        const int off = hd * d;
        for (int i = 0; i < n; ++i) {
          double* pr = c.probs.data() + (static_cast<std::size_t>(hd) * n + i) * n;
          double mx = -std::numeric_limits<double>::infinity();
          for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int e = 0; e < d; ++e) s += c.q[i * H + off + e] * c.k[j * H + off + e];
            pr[j] = s * inv_sqrt_d;
            mx = std::max(mx, pr[j]);
          }
          double sum = 0.0;
          for (int j = 0; j < n; ++j) {
            pr[j] = std::exp(pr[j] - mx);
            sum += pr[j];
          }
          for (int j = 0; j < n; ++j) {
            pr[j] /= sum;
            for (int e = 0; e < d; ++e) c.ctx[i * H + off + e] += pr[j] * c.v[j * H + off + e];
          }
        }
      }
      std::vector<double> attn_out(nH);
      linear(c.ctx.data(), n, H, p_ + B.wo, p_ + B.bo, H, attn_out.data());
      for (std::size_t i = 0; i < nH; ++i) h[i] += attn_out[i];

      c.c.resize(nH);
      layer_norm(h.data(), n, H, p_ + B.ln2_g, p_ + B.ln2_b, ln, c.c.data(), c.ln2);
      c.z.resize(static_cast<std::size_t>(n) * F);
      linear(c.c.data(), n, H, p_ + B.w1, p_ + B.b1, F, c.z.data());
      c.g.resize(c.z.size());
      for (std::size_t i = 0; i < c.z.size(); ++i) c.g[i] = gelu(c.z[i]);
      std::vector<double> mlp_out(nH);
      linear(c.g.data(), n, F, p_ + B.w2, p_ + B.b2, H, mlp_out.data());
      for (std::size_t i = 0; i < nH; ++i) h[i] += mlp_out[i];

      if (!all_finite(h)) {
        throw NumericError("non-finite activation in layer " + std::to_string(l), l);
      }
    }

    final_.resize(nH);
    layer_norm(h.data(), n, H, p_ + lay_.lnf_g, p_ + lay_.lnf_b, ln, final_.data(), lnf_);
    logits_.resize(static_cast<std::size_t>(cfg_.num_classes));
    linear(final_.data(), 1, H, p_ + lay_.head_w, p_ + lay_.head_b, cfg_.num_classes, logits_.data());
    if (!all_finite(logits_)) throw NumericError("non-finite logits", cfg_.num_layers);
  }

  const std::vector<double>& logits() const { return logits_; }

  EmbeddingTrace trace(int seq_len) const {
    const int L = cfg_.num_layers, H = cfg_.hidden_dim;
    EmbeddingTrace tr;
    tr.num_layers = L;
    tr.seq_len = seq_len;
    tr.hidden_dim = H;
    tr.valid_len = n_;
    tr.activations.assign(static_cast<std::size_t>(L) * seq_len * H, 0.0);
    for (int l = 0; l < L; ++l) {
      const std::vector<double>& src = (l + 1 < L) ? blocks_[static_cast<std::size_t>(l) + 1].a : final_;
      std::copy(src.begin(), src.end(),
                tr.activations.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(l) * seq_len * H));
    }
    return tr;
  }

  /// Back-propagates `dlogits`. Adds into `param_grad` when non-empty and
  /// returns d / d token-embedding rows (n x H).
  std::vector<double> backward(std::span<const double> dlogits, std::span<double> param_grad) {
    const int H = cfg_.hidden_dim, F = cfg_.ffn_dim, n = n_, C = cfg_.num_classes;
    const int nh = cfg_.num_heads, d = cfg_.head_dim();
    const std::size_t nH = static_cast<std::size_t>(n) * H;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const bool ln = cfg_.layer_norm;
    const bool want = !param_grad.empty();
    double* G = want ? param_grad.data() : nullptr;
    auto gp = [&](std::size_t off) { return want ? G + off : nullptr; };

    std::vector<double> dfinal(static_cast<std::size_t>(H), 0.0);
    linear_backward(final_.data(), dlogits.data(), 1, H, p_ + lay_.head_w, C, dfinal.data(),
                    gp(lay_.head_w), gp(lay_.head_b));
    std::vector<double> dh(nH, 0.0);
    layer_norm_backward(dfinal.data(), 1, H, p_ + lay_.lnf_g, ln, lnf_, dh.data(), gp(lay_.lnf_g),
                        gp(lay_.lnf_b));

    std::vector<double> tmp;
    for (int l = cfg_.num_layers - 1; l >= 0; --l) {
      const auto& B = lay_.blocks[static_cast<std::size_t>(l)];
      const auto& c = blocks_[static_cast<std::size_t>(l)];

      // MLP branch
      std::vector<double> dg(static_cast<std::size_t>(n) * F, 0.0);
      linear_backward(c.g.data(), dh.data(), n, F, p_ + B.w2, H, dg.data(), gp(B.w2), gp(B.b2));
      for (std::size_t i = 0; i < dg.size(); ++i) dg[i] *= gelu_grad(c.z[i]);
      tmp.assign(nH, 0.0);
      linear_backward(c.c.data(), dg.data(), n, H, p_ + B.w1, F, tmp.data(), gp(B.w1), gp(B.b1));
      layer_norm_backward(tmp.data(), n, H, p_ + B.ln2_g, ln, c.ln2, dh.data(), gp(B.ln2_g), gp(B.ln2_b));

      // attention branch
      std::vector<double> dctx(nH, 0.0);
      linear_backward(c.ctx.data(), dh.data(), n, H, p_ + B.wo, H, dctx.data(), gp(B.wo), gp(B.bo));
      std::vector<double> dq(nH, 0.0), dk(nH, 0.0), dv(nH, 0.0);
      std::vector<double> dp(static_cast<std::size_t>(n));
      for (int hd = 0; hd < nh; ++hd) {
        const int off = hd * d;
        for (int i = 0; i < n; ++i) {
          const double* pr = c.probs.data() + (static_cast<std::size_t>(hd) * n + i) * n;
          double dot = 0.0;
          for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int e = 0; e < d; ++e) {
              s += dctx[i * H + off + e] * c.v[j * H + off + e];
              dv[j * H + off + e] += pr[j] * dctx[i * H + off + e];
            }
            dp[j] = s;
            dot += pr[j] * s;
          }
          for (int j = 0; j < n; ++j) {
            const double ds = pr[j] * (dp[j] - dot) * inv_sqrt_d;
            for (int e = 0; e < d; ++e) {
              dq[i * H + off + e] += ds * c.k[j * H + off + e];
              dk[j * H + off + e] += ds * c.q[i * H + off + e];
            }
          }
        }
      }
      tmp.assign(nH, 0.0);
      linear_backward(c.a.data(), dq.data(), n, H, p_ + B.wq, H, tmp.data(), gp(B.wq), gp(B.bq));
      linear_backward(c.a.data(), dk.data(), n, H, p_ + B.wk, H, tmp.data(), gp(B.wk), gp(B.bk));
      linear_backward(c.a.data(), dv.data(), n, H, p_ + B.wv, H, tmp.data(), gp(B.wv), gp(B.bv));
      layer_norm_backward(tmp.data(), n, H, p_ + B.ln1_g, ln, c.ln1, dh.data(), gp(B.ln1_g), gp(B.ln1_b));
    }

    if (want) {
      for (std::size_t i = 0; i < nH; ++i) G[lay_.pos_emb + i] += dh[i];
    }
    return dh;
  }

 private:
  struct BlockCache {
    std::vector<double> x_in, a, q, k, v, probs, ctx, c, z, g;
    NormCache ln1, ln2;
  };

  const ModelConfig& cfg_;
  const ParameterLayout& lay_;
  const double* p_;
  int n_;
  std::vector<BlockCache> blocks_;
  NormCache lnf_;
  std::vector<double> final_;
  std::vector<double> logits_;
};

std::vector<double> lookup_embeddings(const ModelCheckpoint& model, const Observation& obs, double scale) {
  const int H = model.config().hidden_dim;
  std::vector<double> emb(static_cast<std::size_t>(obs.length) * H);
  for (int t = 0; t < obs.length; ++t) {
    auto row = model.token_embedding(obs.tokens[t]);
    for (int h = 0; h < H; ++h) emb[static_cast<std::size_t>(t) * H + h] = scale * row[h];
  }
  return emb;
}

void check_observation(const ModelCheckpoint& model, const Observation& obs) {
  validate_observation(obs, model.config());
  if (obs.length < 1) throw ConfigError("empty observation");
}

std::vector<double> one_hot_grad(int num_classes, int target) {
  if (target < 0 || target >= num_classes) throw ContractError("target class out of range");
  std::vector<double> d(static_cast<std::size_t>(num_classes), 0.0);
  d[static_cast<std::size_t>(target)] = 1.0;
  return d;
}

}  // namespace

ForwardOutput forward(const ModelCheckpoint& model, const Observation& obs, bool capture_trace) {
  check_observation(model, obs);
  EncoderPass pass(model, obs.length);
  pass.run(lookup_embeddings(model, obs, 1.0));
  ForwardOutput out;
  out.logits = pass.logits();
  out.probabilities = softmax(out.logits);
  if (capture_trace) out.trace = pass.trace(static_cast<int>(obs.tokens.size()));
  return out;
}

int predict(const ModelCheckpoint& model, const Observation& obs) {
  return argmax(forward(model, obs, false).probabilities);
}

EmbeddingGradient embedding_gradient(const ModelCheckpoint& model, const Observation& obs,
                                     int target_class, double token_scale) {
  check_observation(model, obs);
  const auto dlogits = one_hot_grad(model.config().num_classes, target_class);
  EncoderPass pass(model, obs.length);
  pass.run(lookup_embeddings(model, obs, token_scale));
  EmbeddingGradient out;
  out.logits = pass.logits();
  auto dh = pass.backward(dlogits, {});
  if (!all_finite(dh)) throw NumericError("non-finite input gradient");
  const int H = model.config().hidden_dim;
  out.d_f_d_h.assign(obs.tokens.size() * static_cast<std::size_t>(H), 0.0);
  std::copy(dh.begin(), dh.end(), out.d_f_d_h.begin());
  return out;
}

GradientBundle input_gradient(const ModelCheckpoint& model, const Observation& obs, int target_class) {
  auto eg = embedding_gradient(model, obs, target_class, 1.0);
  const auto& cfg = model.config();
  GradientBundle b;
  b.target_class = target_class;
  b.seq_len = static_cast<int>(obs.tokens.size());
  b.hidden_dim = cfg.hidden_dim;
  b.vocab_size = cfg.vocab_size;
  b.d_f_d_h = std::move(eg.d_f_d_h);
  b.d_f_d_x.assign(static_cast<std::size_t>(b.seq_len) * cfg.vocab_size, 0.0);
  for (int t = 0; t < obs.length; ++t) {
    auto g = b.dh_row(t);
    for (int v = 0; v < cfg.vocab_size; ++v) {
      auto e = model.token_embedding(v);
      double s = 0.0;
      for (int h = 0; h < cfg.hidden_dim; ++h) s += e[h] * g[h];
      b.d_f_d_x[static_cast<std::size_t>(t) * cfg.vocab_size + v] = s;
    }
  }
  return b;
}

std::vector<double> logits_from_embeddings(const ModelCheckpoint& model, const Observation& obs,
                                           std::span<const double> token_embeddings) {
  check_observation(model, obs);
  if (token_embeddings.size() != static_cast<std::size_t>(obs.length) * model.config().hidden_dim) {
    throw ConfigError("token embedding block has the wrong shape");
  }
  EncoderPass pass(model, obs.length);
  pass.run(token_embeddings);
  return pass.logits();
}

namespace {

void scatter_token_grad(const ModelCheckpoint& model, const Observation& obs, std::span<const double> dh,
                        std::span<double> param_grad, double scale) {
  const int H = model.config().hidden_dim;
  const std::size_t base = model.layout().tok_emb;
  for (int t = 0; t < obs.length; ++t) {
    const std::size_t row = base + static_cast<std::size_t>(obs.tokens[t]) * H;
    for (int h = 0; h < H; ++h) param_grad[row + h] += scale * dh[static_cast<std::size_t>(t) * H + h];
  }
}

}  // namespace

double loss_and_gradient(const ModelCheckpoint& model, const Observation& obs, std::span<double> param_grad,
                         double scale) {
  check_observation(model, obs);
  if (param_grad.size() != model.layout().total) throw ContractError("gradient buffer size mismatch");
  EncoderPass pass(model, obs.length);
  pass.run(lookup_embeddings(model, obs, 1.0));
  auto probs = softmax(pass.logits());
  const double loss = -std::log(std::max(probs[static_cast<std::size_t>(obs.label)], 1e-300));
  std::vector<double> dlogits = probs;
  dlogits[static_cast<std::size_t>(obs.label)] -= 1.0;
  for (double& v : dlogits) v *= scale;
  auto dh = pass.backward(dlogits, param_grad);
  scatter_token_grad(model, obs, dh, param_grad, 1.0);
  return loss;
}

std::vector<double> logit_parameter_gradient(const ModelCheckpoint& model, const Observation& obs,
                                             int target_class) {
  check_observation(model, obs);
  std::vector<double> grad(model.layout().total, 0.0);
  EncoderPass pass(model, obs.length);
  pass.run(lookup_embeddings(model, obs, 1.0));
  auto dh = pass.backward(one_hot_grad(model.config().num_classes, target_class), grad);
  scatter_token_grad(model, obs, dh, grad, 1.0);
  return grad;
}

}  // namespace fmm
