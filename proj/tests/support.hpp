#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fmm/model.hpp"
#include "fmm/rng.hpp"

namespace fmm::testing {

inline ModelConfig small_config(std::uint64_t seed = 7) {
  ModelConfig c;
  c.vocab_size = 16;
  c.max_seq_len = 8;
  c.num_layers = 2;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.ffn_dim = 12;
  c.num_classes = 3;
  c.seed = seed;
  c.init_std = 0.5;
  return c;
}

/// Random weights everywhere, including biases and layer-norm parameters,
/// so that no gradient path is trivially zero.
inline ModelCheckpoint random_model(const ModelConfig& c) {
  auto m = ModelCheckpoint::initialize(c);
  Rng rng(c.seed ^ 0xabcdefULL);
  for (const auto& t : m.layout().tensors) {
    if (t.rows == 1) {
      auto w = m.mutable_tensor(t.name);
      const bool gain = t.name.find("gain") != std::string::npos;
      for (double& v : w) v = (gain ? 1.0 : 0.0) + 0.3 * rng.normal();
    }
  }
  return m;
}

/// cls + `len - 1` content tokens drawn above the special ids, padded to
/// `total` (which may be shorter than max_seq_len).
inline Observation random_observation(const ModelConfig& c, Rng& rng, int len, int total, int label = 0) {
  Observation o;
  o.tokens.assign(static_cast<std::size_t>(total), c.pad_token_id);
  o.tokens[0] = c.cls_token_id;
  for (int t = 1; t < len; ++t) {
    o.tokens[static_cast<std::size_t>(t)] = 3 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(c.vocab_size - 3)));
    o.maskable.push_back(t);
  }
  o.length = len;
  o.label = label;
  return o;
}

/// No layer norm, uniform attention (zero query/key weights) and no MLP
/// contribution: the cls logit is affine in the token embeddings.
inline ModelCheckpoint linear_bypass_model(ModelConfig c) {
  c.layer_norm = false;
  auto m = random_model(c);
  for (int l = 0; l < c.num_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    for (const char* name : {"attn.wq", "attn.bq", "attn.wk", "attn.bk", "mlp.w2"}) {
      auto w = m.mutable_tensor(p + name);
      std::fill(w.begin(), w.end(), 0.0);
    }
  }
  return m;
}

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

}  // namespace fmm::testing
