#pragma once

// Neural building blocks on top of the tensor ops: linear layers, multi-head
// attention (self and cross), feedforward, and a post-norm transformer block.
//
// Batch convention: a batch of B sequences of length L with width H is one
// [B*L, H] tensor; attention runs per example block. Modules expose their
// trainable tensors through named_params() in a stable order, which doubles
// as the serialization schema.

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "todi/errors.hpp"
#include "todi/rng.hpp"
#include "todi/tensor.hpp"

namespace todi {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

inline void append_params(NamedParams& into, const NamedParams& from) {
  into.insert(into.end(), from.begin(), from.end());
}

inline std::vector<Tensor> param_tensors(const NamedParams& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

// Glorot-style normal init.
inline Tensor init_weight(int fan_in, int fan_out, Rng& rng, const std::string& name) {
  std::vector<float> data(static_cast<std::size_t>(fan_in) * fan_out);
  const float sd = std::sqrt(2.0f / static_cast<float>(fan_in + fan_out));
  for (auto& v : data) v = sd * rng.gaussf();
  return Tensor::param({fan_in, fan_out}, std::move(data), name);
}

struct Linear {
  Tensor W, b;

  Linear() = default;
  Linear(int in, int out, Rng& rng, const std::string& name)
      : W(init_weight(in, out, rng, name + ".W")),
        b(Tensor::param({1, out}, std::vector<float>(static_cast<std::size_t>(out), 0.0f),
                        name + ".b")) {}

  Tensor forward(const Tensor& x) const { return add_rowwise(matmul(x, W), b); }

  NamedParams named_params() const { return {{W.name(), W}, {b.name(), b}}; }
};

struct LayerNormLayer {
  Tensor gain, bias;
  float eps = 1e-5f;

  LayerNormLayer() = default;
  LayerNormLayer(int width, const std::string& name)
      : gain(Tensor::param({1, width}, std::vector<float>(static_cast<std::size_t>(width), 1.0f),
                           name + ".gain")),
        bias(Tensor::param({1, width}, std::vector<float>(static_cast<std::size_t>(width), 0.0f),
                           name + ".bias")) {}

  Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

  NamedParams named_params() const { return {{gain.name(), gain}, {bias.name(), bias}}; }
};

// Multi-head scaled dot-product attention. Queries always come from `x`;
// keys/values come from `x` (self) or a conditioning stream (cross).
// key_masks, when given, holds one admission vector per example over key
// positions; masked keys receive exactly zero attention weight.
struct MultiHeadAttention {
  int heads = 1;
  int model_dim = 0;  // query-side width; output width
  int kv_dim = 0;     // key/value input width

  Linear q_proj, k_proj, v_proj, out_proj;

  MultiHeadAttention() = default;
  MultiHeadAttention(int model_dim_, int kv_dim_, int heads_, Rng& rng, const std::string& name)
      : heads(heads_), model_dim(model_dim_), kv_dim(kv_dim_) {
    if (model_dim % heads != 0)
      throw ContractError("MultiHeadAttention: width " + std::to_string(model_dim) +
                          " not divisible by " + std::to_string(heads) + " heads");
    q_proj = Linear(model_dim, model_dim, rng, name + ".q");
    k_proj = Linear(kv_dim, model_dim, rng, name + ".k");
    v_proj = Linear(kv_dim, model_dim, rng, name + ".v");
    out_proj = Linear(model_dim, model_dim, rng, name + ".out");
  }

  // x: [B*Lq, model_dim]; kv: [B*Lk, kv_dim].
  Tensor forward(const Tensor& x, const Tensor& kv, int B, int Lq, int Lk,
                 const std::vector<std::vector<float>>* key_masks) const {
    if (x.dim(0) != B * Lq) throw ShapeError("attention: query rows != B*Lq");
    if (kv.dim(0) != B * Lk) throw ShapeError("attention: key rows != B*Lk");
    if (key_masks && static_cast<int>(key_masks->size()) != B)
      throw ShapeError("attention: one key mask per example required");
    const Tensor q = q_proj.forward(x);
    const Tensor k = k_proj.forward(kv);
    const Tensor v = v_proj.forward(kv);
    const int dh = model_dim / heads;
    std::vector<Tensor> example_outputs;
    example_outputs.reserve(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
      const Tensor qb = slice_rows(q, b * Lq, (b + 1) * Lq);
      const Tensor kb = slice_rows(k, b * Lk, (b + 1) * Lk);
      const Tensor vb = slice_rows(v, b * Lk, (b + 1) * Lk);
      const std::vector<float>* mask =
          key_masks ? &(*key_masks)[static_cast<std::size_t>(b)] : nullptr;
      Tensor joined;
      for (int h = 0; h < heads; ++h) {
        const Tensor qh = slice_cols(qb, h * dh, (h + 1) * dh);
        const Tensor kh = slice_cols(kb, h * dh, (h + 1) * dh);
        const Tensor vh = slice_cols(vb, h * dh, (h + 1) * dh);
        const Tensor ah = attention(qh, kh, vh, mask);
        joined = h == 0 ? ah : concat_cols(joined, ah);
      }
      example_outputs.push_back(joined);
    }
    const Tensor merged = B == 1 ? example_outputs.front() : concat_rows(example_outputs);
    return out_proj.forward(merged);
  }

  Tensor forward_self(const Tensor& x, int B, int L,
                      const std::vector<std::vector<float>>* key_masks = nullptr) const {
    return forward(x, x, B, L, L, key_masks);
  }

  NamedParams named_params() const {
    NamedParams out;
    append_params(out, q_proj.named_params());
    append_params(out, k_proj.named_params());
    append_params(out, v_proj.named_params());
    append_params(out, out_proj.named_params());
    return out;
  }
};

struct FeedForward {
  Linear fc1, fc2;

  FeedForward() = default;
  FeedForward(int width, int hidden, Rng& rng, const std::string& name)
      : fc1(width, hidden, rng, name + ".fc1"), fc2(hidden, width, rng, name + ".fc2") {}

  Tensor forward(const Tensor& x) const { return fc2.forward(relu(fc1.forward(x))); }

  NamedParams named_params() const {
    NamedParams out;
    append_params(out, fc1.named_params());
    append_params(out, fc2.named_params());
    return out;
  }
};

// Post-norm transformer block:
//   x = LN(x + Drop(SelfAttn(x)))
//   x = LN(x + Drop(CrossAttn(x, kv)))   (only when built with cross)
//   x = LN(x + Drop(FFN(x)))
struct TransformerBlock {
  MultiHeadAttention self_attn;
  std::optional<MultiHeadAttention> cross_attn;
  FeedForward ffn;
  LayerNormLayer ln_self, ln_cross, ln_ffn;
  float dropout_rate = 0.0f;

  TransformerBlock() = default;
  TransformerBlock(int width, int ffn_hidden, int heads, bool with_cross, int kv_width,
                   float dropout_rate_, Rng& rng, const std::string& name)
      : self_attn(width, width, heads, rng, name + ".self"),
        ffn(width, ffn_hidden, rng, name + ".ffn"),
        ln_self(width, name + ".ln_self"),
        ln_cross(width, name + ".ln_cross"),
        ln_ffn(width, name + ".ln_ffn"),
        dropout_rate(dropout_rate_) {
    if (with_cross) cross_attn.emplace(width, kv_width, heads, rng, name + ".cross");
  }

  Tensor forward(const Tensor& x_in, int B, int L,
                 const std::vector<std::vector<float>>* self_masks, const Tensor* kv, int Lk,
                 const std::vector<std::vector<float>>* kv_masks, Rng* rng,
                 bool training) const {
    auto drop = [&](const Tensor& t) {
      if (!training || dropout_rate == 0.0f) return t;
      if (!rng) throw ContractError("TransformerBlock: training forward needs an rng");
      return dropout(t, dropout_rate, *rng, true);
    };
    Tensor x = ln_self.forward(add(x_in, drop(self_attn.forward_self(x_in, B, L, self_masks))));
    if (cross_attn) {
      if (!kv) throw ContractError("TransformerBlock: built with cross-attention but no kv given");
      x = ln_cross.forward(add(x, drop(cross_attn->forward(x, *kv, B, L, Lk, kv_masks))));
    }
    x = ln_ffn.forward(add(x, drop(ffn.forward(x))));
    return x;
  }

  NamedParams named_params() const {
    NamedParams out;
    append_params(out, self_attn.named_params());
    if (cross_attn) append_params(out, cross_attn->named_params());
    append_params(out, ffn.named_params());
    append_params(out, ln_self.named_params());
    append_params(out, ln_cross.named_params());
    append_params(out, ln_ffn.named_params());
    return out;
  }
};

}  // namespace todi
