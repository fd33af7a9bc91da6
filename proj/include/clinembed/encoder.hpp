#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "clinembed/adam.hpp"
#include "clinembed/checkpoint.hpp"
#include "clinembed/corpus.hpp"
#include "clinembed/graph.hpp"
#include "clinembed/store.hpp"

namespace clinembed {

struct EncoderConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ffn = 256;
  int max_seq_len = 64;
  float dropout_rate = 0.1f;

  void validate() const {
    if (vocab_size < 4) {
      throw ConfigError("encoder: vocab_size must cover the special tokens");
    }
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ffn <= 0) {
      throw ConfigError("encoder: dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("encoder: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (max_seq_len < 2) {
      throw ConfigError("encoder: max_seq_len must be >= 2");
    }
    if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
      throw ConfigError("encoder: dropout_rate must be in [0, 1)");
    }
  }

  CheckpointConfig to_checkpoint() const {
    return {static_cast<uint32_t>(vocab_size), static_cast<uint32_t>(d_model),
            static_cast<uint32_t>(n_layers),   static_cast<uint32_t>(n_heads),
            static_cast<uint32_t>(d_ffn),      static_cast<uint32_t>(max_seq_len),
            dropout_rate};
  }

  static EncoderConfig from_checkpoint(const CheckpointConfig& c) {
    EncoderConfig cfg;
    cfg.vocab_size = static_cast<int>(c.vocab_size);
    cfg.d_model = static_cast<int>(c.d_model);
    cfg.n_layers = static_cast<int>(c.n_layers);
    cfg.n_heads = static_cast<int>(c.n_heads);
    cfg.d_ffn = static_cast<int>(c.d_ffn);
    cfg.max_seq_len = static_cast<int>(c.max_seq_len);
    cfg.dropout_rate = c.dropout_rate;
    cfg.validate();
    return cfg;
  }
};

// Pre-norm transformer encoder with learned positional embeddings and mean
// pooling over unmasked token states.
template <typename T>
struct EncoderModel {
  EncoderConfig config;
  Params<T> params;

  static EncoderModel init(const EncoderConfig& cfg, uint64_t seed) {
    cfg.validate();
    EncoderModel m;
    m.config = cfg;
    Rng rng(mix_seed(seed, 0x454e43));
    const T std_dev = T(0.02);
    auto randn = [&](std::vector<int> shape) {
      return Tensor<T>::randn(std::move(shape), rng, std_dev);
    };

    m.params.add("tok_emb", randn({cfg.vocab_size, cfg.d_model}));
    m.params.add("pos_emb", randn({cfg.max_seq_len, cfg.d_model}));
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      m.params.add(p + "ln1.gain", Tensor<T>::full({cfg.d_model}, T(1)));
      m.params.add(p + "ln1.bias", Tensor<T>::zeros({cfg.d_model}));
      m.params.add(p + "attn.wq", randn({cfg.d_model, cfg.d_model}));
      m.params.add(p + "attn.bq", Tensor<T>::zeros({cfg.d_model}));
      m.params.add(p + "attn.wk", randn({cfg.d_model, cfg.d_model}));
      m.params.add(p + "attn.bk", Tensor<T>::zeros({cfg.d_model}));
      m.params.add(p + "attn.wv", randn({cfg.d_model, cfg.d_model}));
      m.params.add(p + "attn.bv", Tensor<T>::zeros({cfg.d_model}));
      m.params.add(p + "attn.wo", randn({cfg.d_model, cfg.d_model}));
      m.params.add(p + "attn.bo", Tensor<T>::zeros({cfg.d_model}));
      m.params.add(p + "ln2.gain", Tensor<T>::full({cfg.d_model}, T(1)));
      m.params.add(p + "ln2.bias", Tensor<T>::zeros({cfg.d_model}));
      m.params.add(p + "ffn.w1", randn({cfg.d_model, cfg.d_ffn}));
      m.params.add(p + "ffn.b1", Tensor<T>::zeros({cfg.d_ffn}));
      m.params.add(p + "ffn.w2", randn({cfg.d_ffn, cfg.d_model}));
      m.params.add(p + "ffn.b2", Tensor<T>::zeros({cfg.d_model}));
    }
    m.params.add("final_ln.gain", Tensor<T>::full({cfg.d_model}, T(1)));
    m.params.add("final_ln.bias", Tensor<T>::zeros({cfg.d_model}));
    return m;
  }
};

// Padded id matrix plus its validity mask.
struct TokenBatch {
  int batch = 0;
  int seq = 0;
  std::vector<int32_t> ids;    // batch*seq, PAD in unused slots
  std::vector<uint8_t> mask;   // 1 for real tokens

  template <typename T>
  std::vector<T> mask_as() const {
    std::vector<T> m(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) m[i] = static_cast<T>(mask[i]);
    return m;
  }
};

TokenBatch make_batch(const std::vector<std::vector<int32_t>>& sequences);

// BOS + token ids (UNK for unknown tokens) + EOS, truncated to max_seq_len.
std::vector<int32_t> encode_ids(const Vocabulary& vocab,
                                const std::string& sentence, int max_seq_len);

// Graph leaf handles for a parameter set, in parameter order.
template <typename T>
struct BoundParams {
  std::vector<typename Graph<T>::Ref> refs;
  std::unordered_map<std::string, size_t> index;

  typename Graph<T>::Ref operator[](const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) {
      throw UsageError("unknown parameter '" + name + "'");
    }
    return refs[it->second];
  }
};

template <typename T>
BoundParams<T> bind_params(Graph<T>& g, const Params<T>& params,
                           bool trainable) {
  BoundParams<T> bound;
  bound.refs.reserve(params.items.size());
  for (const auto& item : params.items) {
    Tensor<T> t = item.tensor;
    t.requires_grad = trainable;
    bound.index[item.name] = bound.refs.size();
    bound.refs.push_back(g.input(std::move(t)));
  }
  return bound;
}

// Gradients in parameter order after backward().
template <typename T>
std::vector<std::vector<T>> collect_grads(const Graph<T>& g,
                                          const BoundParams<T>& bound) {
  std::vector<std::vector<T>> grads;
  grads.reserve(bound.refs.size());
  for (auto ref : bound.refs) grads.push_back(g.grad(ref));
  return grads;
}

namespace detail {

// Additive attention bias: 0 on valid key positions, -1e9 on padding. After
// softmax max-subtraction the padded keys underflow to exactly zero, so real
// positions are bit-independent of batch padding.
template <typename T>
Tensor<T> key_padding_bias(const TokenBatch& batch, int n_heads) {
  const int b = batch.batch, s = batch.seq;
  Tensor<T> bias({b * n_heads, s, s}, T(0));
  const T neg = T(-1e9);
  for (int bi = 0; bi < b; ++bi) {
    for (int h = 0; h < n_heads; ++h) {
      T* base =
          bias.data.data() + (static_cast<size_t>(bi) * n_heads + h) * s * s;
      for (int q = 0; q < s; ++q) {
        for (int k = 0; k < s; ++k) {
          if (!batch.mask[static_cast<size_t>(bi) * s + k]) {
            base[static_cast<size_t>(q) * s + k] = neg;
          }
        }
      }
    }
  }
  return bias;
}

}  // namespace detail

// Multi-head attention block shared by the encoder and the decoder.
// q_in/kv_in are [batch*q_seq, d] and [batch*kv_seq, d]; bias is an additive
// [batch*heads, q_seq, kv_seq] constant (padding and/or causal masking).
template <typename T>
typename Graph<T>::Ref attention(Graph<T>& g, const BoundParams<T>& w,
                                 const std::string& prefix,
                                 typename Graph<T>::Ref q_in,
                                 typename Graph<T>::Ref kv_in, int batch,
                                 int q_seq, int kv_seq, int d_model,
                                 int n_heads, typename Graph<T>::Ref bias) {
  const int dh = d_model / n_heads;
  auto project = [&](typename Graph<T>::Ref x, const char* wname,
                     const char* bname, int seq) {
    auto y = g.add(g.matmul(x, w[prefix + wname]), w[prefix + bname]);
    y = g.reshape(y, {batch, seq, n_heads, dh});
    y = g.permute(y, {0, 2, 1, 3});  // [batch, heads, seq, dh]
    return g.reshape(y, {batch * n_heads, seq, dh});
  };

  auto q = project(q_in, "wq", "bq", q_seq);
  auto k = project(kv_in, "wk", "bk", kv_seq);
  auto v = project(kv_in, "wv", "bv", kv_seq);

  auto scores = g.scale(g.matmul(q, g.transpose_last2(k)),
                        T(1) / std::sqrt(static_cast<T>(dh)));
  scores = g.add(scores, bias);
  auto probs = g.softmax(scores, -1);
  auto ctx = g.matmul(probs, v);  // [batch*heads, q_seq, dh]
  ctx = g.reshape(ctx, {batch, n_heads, q_seq, dh});
  ctx = g.permute(ctx, {0, 2, 1, 3});
  ctx = g.reshape(ctx, {batch * q_seq, d_model});
  return g.add(g.matmul(ctx, w[prefix + "wo"]), w[prefix + "bo"]);
}

// Full encoder stack. Returns token states [batch, seq, d_model]. Dropout
// masks come from the graph's seeded stream when dropout_active is set.
template <typename T>
typename Graph<T>::Ref encoder_forward(Graph<T>& g, const EncoderConfig& cfg,
                                       const BoundParams<T>& w,
                                       const TokenBatch& batch,
                                       bool dropout_active) {
  const int b = batch.batch, s = batch.seq, d = cfg.d_model;
  if (s > cfg.max_seq_len) {
    throw InputError("encoder_forward: sequence length " + std::to_string(s) +
                     " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  for (int32_t id : batch.ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw InputError("encoder_forward: token id " + std::to_string(id) +
                       " out of range [0, " + std::to_string(cfg.vocab_size) +
                       ")");
    }
  }

  const T rate = static_cast<T>(cfg.dropout_rate);
  auto maybe_dropout = [&](typename Graph<T>::Ref x) {
    return dropout_active ? g.dropout(x, rate) : x;
  };

  std::vector<int32_t> positions(static_cast<size_t>(b) * s);
  for (int bi = 0; bi < b; ++bi) {
    for (int si = 0; si < s; ++si) {
      positions[static_cast<size_t>(bi) * s + si] = si;
    }
  }

  auto x = g.add(g.embedding_lookup(w["tok_emb"], batch.ids, {b, s}),
                 g.embedding_lookup(w["pos_emb"], positions, {b, s}));
  x = maybe_dropout(x);

  auto bias = g.constant(detail::key_padding_bias<T>(batch, cfg.n_heads));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    auto h = g.layer_norm(x, w[p + "ln1.gain"], w[p + "ln1.bias"]);
    auto h2d = g.reshape(h, {b * s, d});
    auto attn_out = attention(g, w, p + "attn.", h2d, h2d, b, s, s, d,
                              cfg.n_heads, bias);
    x = g.add(x, g.reshape(maybe_dropout(attn_out), {b, s, d}));

    h = g.layer_norm(x, w[p + "ln2.gain"], w[p + "ln2.bias"]);
    auto f = g.add(g.matmul(g.reshape(h, {b * s, d}), w[p + "ffn.w1"]),
                   w[p + "ffn.b1"]);
    f = g.relu(f);
    f = g.add(g.matmul(f, w[p + "ffn.w2"]), w[p + "ffn.b2"]);
    x = g.add(x, g.reshape(maybe_dropout(f), {b, s, d}));
  }
  return g.layer_norm(x, w["final_ln.gain"], w["final_ln.bias"]);
}

// Forward + mean pooling: sentence embeddings [batch, d_model].
template <typename T>
typename Graph<T>::Ref encode_batch(Graph<T>& g, const EncoderConfig& cfg,
                                    const BoundParams<T>& w,
                                    const TokenBatch& batch,
                                    bool dropout_active) {
  auto states = encoder_forward(g, cfg, w, batch, dropout_active);
  return g.mean_pool(states, batch.mask_as<T>());
}

// Deterministic embeddings for preprocessed records: dropout off, long texts
// chunked into max_seq_len windows whose pooled vectors are averaged.
EmbeddingStore embed_sentences(const EncoderModel<float>& model,
                               const Vocabulary& vocab,
                               const std::vector<SentenceRecord>& records,
                               const std::string& store_name,
                               int batch_size = 64);

Checkpoint encoder_checkpoint(const EncoderModel<float>& model);

// Accepts plain encoder checkpoints and joint ones whose encoder parameters
// carry an "encoder." prefix.
EncoderModel<float> load_encoder(const std::string& path);

}  // namespace clinembed
