#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mvad/ops.hpp"
#include "mvad/pipeline.hpp"
#include "mvad/rng.hpp"
#include "mvad/tensor.hpp"

namespace mvad {

// Architecture and ablation switches. Shapes of every parameter derive from
// this struct alone.
struct ModelConfig {
  std::int64_t d_model = 32;
  std::int64_t n_heads = 4;
  std::int64_t n_layers = 2;
  std::int64_t mlp_layers = 3;
  std::int64_t vocab_size = 0;  // set from the vocabulary at train time
  std::int64_t max_len = 128;
  bool gate_enabled = true;
  bool status_enabled = true;
  bool freq_enabled = true;
  bool fusion_enabled = true;
  double dropout = 0.1;

  void validate() const;
  std::int64_t d_head() const { return d_model / n_heads; }
};

// One padded minibatch. Position 0 is always CLS (mask=1, zero scalars);
// PAD fills the tail with mask=0.
struct Batch {
  std::int64_t b = 0;
  std::int64_t t = 0;
  std::vector<std::int32_t> tokens;  // b*t
  std::vector<std::int32_t> status;  // b*t, 0 at CLS/PAD
  std::vector<double> freq;          // b*t, 0 at CLS/PAD
  std::vector<std::uint8_t> mask;    // b*t, 1 = CLS or real event
  std::vector<std::int32_t> labels;  // b, each 0/1 (may be empty for scoring)

  void validate(const ModelConfig& cfg) const;
};

void ModelConfigValidateImpl(const ModelConfig& cfg);
void BatchValidateImpl(const Batch& batch, const ModelConfig& cfg);

inline void ModelConfig::validate() const { ModelConfigValidateImpl(*this); }
inline void Batch::validate(const ModelConfig& cfg) const { BatchValidateImpl(*this, cfg); }

// Named learnable tensors; iteration order is fixed by construction order so
// optimizer steps and serialization are deterministic.
template <typename S>
struct ParamStore {
  std::vector<std::pair<std::string, Tensor<S>>> items;

  Tensor<S>& at(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return t;
    throw TensorError("ParamStore: no parameter named '" + name + "'");
  }
  const Tensor<S>& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }
  bool has(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return true;
    return false;
  }
  void add(const std::string& name, Tensor<S> t) {
    if (has(name)) throw TensorError("ParamStore: duplicate parameter '" + name + "'");
    items.emplace_back(name, std::move(t));
  }
  void zero_grad() {
    for (auto& [n, t] : items) t.zero_grad();
  }
  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items) n += t.numel();
    return n;
  }

  // Fresh parameters: Xavier-uniform weight matrices (the status/frequency
  // projections count — they are [1×d] maps, and Xavier's fan-in of 1 gives
  // them the wide bounds a lone scalar input needs to register against the
  // unit-scale layer-norm outputs), N(0, 0.02) embeddings, zero biases, unit
  // layer-norm scales. Draw order is fixed; values are sampled in double and
  // cast, so float and double stores built from one seed agree to rounding.
  static ParamStore init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng = Rng::derive(seed, "param-init");
    ParamStore store;
    auto normal = [&](Shape shape, double stddev) {
      std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)));
      for (auto& v : data) v = static_cast<S>(rng.normal(0.0, stddev));
      return Tensor<S>(std::move(shape), std::move(data), true);
    };
    auto xavier = [&](std::int64_t fan_in, std::int64_t fan_out) {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::vector<S> data(static_cast<std::size_t>(fan_in * fan_out));
      for (auto& v : data) v = static_cast<S>(rng.uniform(-limit, limit));
      return Tensor<S>({fan_in, fan_out}, std::move(data), true);
    };
    auto zeros = [&](Shape shape) { return Tensor<S>::zeros(std::move(shape), true); };
    auto consts = [&](Shape shape, S value) {
      return Tensor<S>::full(std::move(shape), value, true);
    };

    const std::int64_t d = cfg.d_model;
    store.add("token_emb", normal({cfg.vocab_size, d}, 0.02));
    store.add("pos_emb", normal({cfg.max_len, d}, 0.02));
    store.add("cls_emb", normal({d}, 0.02));
    store.add("status_w", xavier(1, d));
    store.add("status_b", zeros({1, d}));
    store.add("freq_w", xavier(1, d));
    store.add("freq_b", zeros({1, d}));
    store.add("gate_w", xavier(2 * d, 1));
    store.add("gate_b", zeros({1}));
    for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "enc" + std::to_string(l) + ".";
      store.add(p + "wq", xavier(d, d));
      store.add(p + "wk", xavier(d, d));
      store.add(p + "wv", xavier(d, d));
      store.add(p + "wo", xavier(d, d));
      store.add(p + "ffn_w1", xavier(d, 4 * d));
      store.add(p + "ffn_b1", zeros({4 * d}));
      store.add(p + "ffn_w2", xavier(4 * d, d));
      store.add(p + "ffn_b2", zeros({d}));
      store.add(p + "ln1_g", consts({d}, S(1)));
      store.add(p + "ln1_b", zeros({d}));
      store.add(p + "ln2_g", consts({d}, S(1)));
      store.add(p + "ln2_b", zeros({d}));
    }
    // Head stage widths: 3d -> d -> ... -> d -> 1.
    for (std::int64_t l = 0; l < cfg.mlp_layers; ++l) {
      const std::int64_t in = l == 0 ? 3 * d : d;
      const std::int64_t out = l == cfg.mlp_layers - 1 ? 1 : d;
      const std::string p = "head" + std::to_string(l) + ".";
      store.add(p + "w", xavier(in, out));
      store.add(p + "b", zeros({out}));
    }
    return store;
  }
};

namespace detail {

// Constant (non-learnable) tensors derived from one batch.
template <typename S>
struct BatchConstants {
  Tensor<S> token_ids;   // [B,T]
  Tensor<S> pos_ids;     // [B,T]
  Tensor<S> zero_ids;    // [B,T]
  Tensor<S> status;      // [B,T]
  Tensor<S> freq;        // [B,T]
  Tensor<S> cls_mask;    // [B,T] 1 at position 0
  Tensor<S> event_mask;  // [B,T] 1 at real events (mask && t>0)
  Tensor<S> force_one;   // [B,T] 1 at CLS/PAD (complement of event_mask)
  Tensor<S> attn_bias;   // [B,T,T] 0 on valid keys, -1e9 on PAD keys
  Tensor<S> labels;      // [B] (empty handle when batch has no labels)
};

inline constexpr double kAttnMaskBias = -1e9;

template <typename S>
BatchConstants<S> batch_constants(const Batch& batch) {
  const std::int64_t b = batch.b, t = batch.t;
  const std::size_t n = static_cast<std::size_t>(b * t);
  std::vector<S> token_ids(n), pos_ids(n), zero_ids(n, S(0)), status(n), freq(n);
  std::vector<S> cls_mask(n, S(0)), event_mask(n), force_one(n);
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t j = 0; j < t; ++j) {
      const std::size_t k = static_cast<std::size_t>(i * t + j);
      token_ids[k] = static_cast<S>(batch.tokens[k]);
      pos_ids[k] = static_cast<S>(j);
      status[k] = static_cast<S>(batch.status[k]);
      freq[k] = static_cast<S>(batch.freq[k]);
      if (j == 0) cls_mask[k] = S(1);
      const bool real_event = batch.mask[k] != 0 && j > 0;
      event_mask[k] = real_event ? S(1) : S(0);
      force_one[k] = real_event ? S(0) : S(1);
    }
  std::vector<S> attn_bias(static_cast<std::size_t>(b * t * t), S(0));
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t q = 0; q < t; ++q)
      for (std::int64_t k = 0; k < t; ++k)
        if (batch.mask[static_cast<std::size_t>(i * t + k)] == 0)
          attn_bias[static_cast<std::size_t>((i * t + q) * t + k)] = S(kAttnMaskBias);

  BatchConstants<S> out{
      Tensor<S>({b, t}, std::move(token_ids)), Tensor<S>({b, t}, std::move(pos_ids)),
      Tensor<S>({b, t}, std::move(zero_ids)),  Tensor<S>({b, t}, std::move(status)),
      Tensor<S>({b, t}, std::move(freq)),      Tensor<S>({b, t}, std::move(cls_mask)),
      Tensor<S>({b, t}, std::move(event_mask)), Tensor<S>({b, t}, std::move(force_one)),
      Tensor<S>({b, t, t}, std::move(attn_bias)), Tensor<S>{}};
  if (!batch.labels.empty()) {
    std::vector<S> labels(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) labels[static_cast<std::size_t>(i)] =
        static_cast<S>(batch.labels[static_cast<std::size_t>(i)]);
    out.labels = Tensor<S>({b}, std::move(labels));
  }
  return out;
}

}  // namespace detail

template <typename S>
struct ViewEmbeddings {
  Tensor<S> e_z;  // [B,T,d] token + positional (cls_emb substituted at position 0)
  Tensor<S> e_s;  // [B,T,d] scalar status projected, or constant zeros when disabled
  Tensor<S> e_f;  // [B,T,d] scalar freq projected, or constant zeros when disabled
};

// Projects the three views into the shared d-dimensional space.
template <typename S>
ViewEmbeddings<S> embed_views(const Batch& batch, const detail::BatchConstants<S>& c,
                              const ParamStore<S>& params, const ModelConfig& cfg) {
  const std::int64_t d = cfg.d_model;
  ViewEmbeddings<S> out;

  Tensor<S> e_tok = embedding_lookup(params.at("token_emb"), c.token_ids);
  Tensor<S> cls_table = reshape(params.at("cls_emb"), {1, d});
  Tensor<S> e_cls = embedding_lookup(cls_table, c.zero_ids);
  // Blend: cls_emb at position 0, token embedding elsewhere. The masks are
  // exact 0/1 constants so untouched rows keep exact-zero gradients.
  Tensor<S> not_cls = add(scale(c.cls_mask, S(-1)), Tensor<S>::full({batch.b, batch.t}, S(1)));
  Tensor<S> blended = add(scale_rows(e_tok, not_cls), scale_rows(e_cls, c.cls_mask));
  out.e_z = add(blended, embedding_lookup(params.at("pos_emb"), c.pos_ids));

  auto project_scalar = [&](const char* w_name, const char* b_name, const Tensor<S>& values) {
    Tensor<S> w_row = embedding_lookup(params.at(w_name), c.zero_ids);  // [B,T,d]
    Tensor<S> b_row = embedding_lookup(params.at(b_name), c.zero_ids);
    return add(scale_rows(w_row, values), b_row);
  };
  out.e_s = cfg.status_enabled ? project_scalar("status_w", "status_b", c.status)
                               : Tensor<S>::zeros({batch.b, batch.t, d});
  out.e_f = cfg.freq_enabled ? project_scalar("freq_w", "freq_b", c.freq)
                             : Tensor<S>::zeros({batch.b, batch.t, d});
  return out;
}

// Per-timestep scalar gate from the concatenated view embeddings; CLS and PAD
// positions are forced to exactly 1 by an arithmetic blend (zero gradient
// through the forced positions).
template <typename S>
Tensor<S> risk_gate(const Tensor<S>& e_s, const Tensor<S>& e_f,
                    const detail::BatchConstants<S>& c, const ParamStore<S>& params,
                    const ModelConfig& cfg) {
  const std::int64_t b = e_s.dim(0), t = e_s.dim(1);
  if (!cfg.gate_enabled) return Tensor<S>::full({b, t}, S(1));
  Tensor<S> cat = concat_lastdim(e_s, e_f);
  Tensor<S> affine = add(matmul(cat, params.at("gate_w")), params.at("gate_b"));
  Tensor<S> g = reshape(sigmoid(affine), {b, t});
  return add(mul(g, c.event_mask), c.force_one);
}

// One encoder block: key-scaled multi-head attention, then the standard
// post-norm residual/FFN stack.
template <typename S>
Tensor<S> gated_attention_layer(const Tensor<S>& h, const Tensor<S>& g,
                                const detail::BatchConstants<S>& c, const ParamStore<S>& params,
                                std::int64_t layer, const ModelConfig& cfg, Rng* dropout_rng) {
  const std::string p = "enc" + std::to_string(layer) + ".";
  const std::int64_t dh = cfg.d_head();
  const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  Tensor<S> q = matmul(h, params.at(p + "wq"));
  Tensor<S> k = matmul(h, params.at(p + "wk"));
  Tensor<S> v = matmul(h, params.at(p + "wv"));
  Tensor<S> k_scaled = scale_rows(k, g);

  Tensor<S> ctx;
  for (std::int64_t head = 0; head < cfg.n_heads; ++head) {
    Tensor<S> qh = slice_lastdim(q, head * dh, dh);
    Tensor<S> kh = slice_lastdim(k_scaled, head * dh, dh);
    Tensor<S> vh = slice_lastdim(v, head * dh, dh);
    Tensor<S> logits = scale(matmul_nt(qh, kh), inv_sqrt_dh);
    Tensor<S> weights = softmax_lastdim(add(logits, c.attn_bias));
    if (dropout_rng && cfg.dropout > 0.0) weights = dropout(weights, cfg.dropout, *dropout_rng);
    Tensor<S> ctx_h = matmul(weights, vh);
    ctx = head == 0 ? ctx_h : concat_lastdim(ctx, ctx_h);
  }
  Tensor<S> attn_out = matmul(ctx, params.at(p + "wo"));
  Tensor<S> h1 = layer_norm(add(h, attn_out), params.at(p + "ln1_g"), params.at(p + "ln1_b"));
  Tensor<S> f = relu(add(matmul(h1, params.at(p + "ffn_w1")), params.at(p + "ffn_b1")));
  Tensor<S> f2 = add(matmul(f, params.at(p + "ffn_w2")), params.at(p + "ffn_b2"));
  if (dropout_rng && cfg.dropout > 0.0) f2 = dropout(f2, cfg.dropout, *dropout_rng);
  return layer_norm(add(h1, f2), params.at(p + "ln2_g"), params.at(p + "ln2_b"));
}

template <typename S>
struct EncoderOut {
  Tensor<S> h_cls;  // [B,d]
  Tensor<S> e_s;    // [B,T,d] raw view embeddings (pre-encoder), reused by fusion
  Tensor<S> e_f;
  Tensor<S> gate;   // [B,T]
};

// Embeds the views, computes the gate once, and runs every encoder layer with
// that same gate; returns the contextualized CLS state.
template <typename S>
EncoderOut<S> encoder_forward(const Batch& batch, const detail::BatchConstants<S>& c,
                              const ParamStore<S>& params, const ModelConfig& cfg,
                              Rng* dropout_rng) {
  ViewEmbeddings<S> views = embed_views(batch, c, params, cfg);
  Tensor<S> g = risk_gate(views.e_s, views.e_f, c, params, cfg);
  Tensor<S> h = views.e_z;
  for (std::int64_t l = 0; l < cfg.n_layers; ++l)
    h = gated_attention_layer(h, g, c, params, l, cfg, dropout_rng);
  // Position 0 extraction as a masked mean over exactly the CLS slot.
  Tensor<S> h_cls = mean_over_time(h, c.cls_mask);
  return {h_cls, views.e_s, views.e_f, g};
}

// Pools the raw view embeddings over real events, fuses with the CLS state and
// runs the MLP head to a single probability per example.
template <typename S>
Tensor<S> fuse_and_classify(const Tensor<S>& h_cls, const Tensor<S>& e_s, const Tensor<S>& e_f,
                            const detail::BatchConstants<S>& c, const ParamStore<S>& params,
                            const ModelConfig& cfg) {
  const std::int64_t b = h_cls.dim(0), d = cfg.d_model;
  Tensor<S> h_sta = cfg.fusion_enabled ? mean_over_time(e_s, c.event_mask)
                                       : Tensor<S>::zeros({b, d});
  Tensor<S> h_freq = cfg.fusion_enabled ? mean_over_time(e_f, c.event_mask)
                                        : Tensor<S>::zeros({b, d});
  Tensor<S> fused = concat_lastdim(concat_lastdim(h_cls, h_sta), h_freq);
  Tensor<S> x = fused;
  for (std::int64_t l = 0; l < cfg.mlp_layers; ++l) {
    const std::string p = "head" + std::to_string(l) + ".";
    x = add(matmul(x, params.at(p + "w")), params.at(p + "b"));
    if (l + 1 < cfg.mlp_layers) x = relu(x);
  }
  return reshape(sigmoid(x), {b});
}

template <typename S>
struct ForwardResult {
  Tensor<S> y_hat;  // [B]
  Tensor<S> h_cls;  // [B,d]
  Tensor<S> gate;   // [B,T]
};

// Full network: dropout_rng null means eval mode (no dropout ops recorded).
template <typename S>
ForwardResult<S> model_forward(const Batch& batch, const ParamStore<S>& params, const ModelConfig& cfg,
                               Rng* dropout_rng) {
  batch.validate(cfg);
  auto c = detail::batch_constants<S>(batch);
  EncoderOut<S> enc = encoder_forward(batch, c, params, cfg, dropout_rng);
  Tensor<S> y_hat = fuse_and_classify(enc.h_cls, enc.e_s, enc.e_f, c, params, cfg);
  return {y_hat, enc.h_cls, enc.gate};
}

// Mean binary cross-entropy against the batch labels.
template <typename S>
Tensor<S> bce_loss(const Tensor<S>& y_hat, const Batch& batch) {
  if (batch.labels.empty())
    throw TensorError("bce_loss: batch carries no labels");
  const std::int64_t n = static_cast<std::int64_t>(batch.labels.size());
  std::vector<S> labels(batch.labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<S>(batch.labels[i]);
  return bce(y_hat, Tensor<S>({n}, std::move(labels)));
}

}  // namespace mvad
