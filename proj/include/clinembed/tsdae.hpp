#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clinembed/encoder.hpp"
#include "clinembed/simcse.hpp"

namespace clinembed {

struct TsdaeConfig {
  float deletion_ratio = 0.6f;
  int batch_size = 32;
  int steps = 1000;  // reconstruction needs a longer schedule than InfoNCE
  float lr = 1e-3f;
  uint64_t seed = 42;

  void validate() const {
    if (!(deletion_ratio >= 0.0f && deletion_ratio < 1.0f)) {
      throw ConfigError("tsdae: deletion_ratio must be in [0, 1)");
    }
    if (batch_size < 1) {
      throw ConfigError("tsdae: batch_size must be >= 1");
    }
    if (steps < 0) {
      throw ConfigError("tsdae: steps must be >= 0");
    }
    if (!(lr > 0.0f)) {
      throw ConfigError("tsdae: lr must be > 0");
    }
  }
};

struct CorruptionConfig {
  float deletion_ratio = 0.6f;
  uint64_t seed = 0;
};

struct CorruptedPair {
  std::vector<int32_t> original;
  std::vector<int32_t> corrupted;
};

// Deletes round(ratio * w) of the w non-special tokens, chosen uniformly
// without replacement; survivor order is preserved and at least one content
// token always survives. BOS/EOS are never deleted.
CorruptedPair corrupt(const std::vector<int32_t>& ids, float deletion_ratio,
                      Rng& rng);
CorruptedPair corrupt(const std::vector<int32_t>& ids,
                      const CorruptionConfig& cfg);

// One-layer transformer decoder: self-attention over the target prefix,
// cross-attention over a length-1 memory holding the sentence embedding, and
// an output projection tied to the encoder token-embedding matrix.
template <typename T>
struct DecoderModel {
  EncoderConfig config;  // mirrors the paired encoder
  Params<T> params;

  static DecoderModel init(const EncoderConfig& cfg, uint64_t seed) {
    cfg.validate();
    DecoderModel m;
    m.config = cfg;
    Rng rng(mix_seed(seed, 0x444543));
    const T std_dev = T(0.02);
    auto randn = [&](std::vector<int> shape) {
      return Tensor<T>::randn(std::move(shape), rng, std_dev);
    };
    const int d = cfg.d_model;

    m.params.add("pos_emb", randn({cfg.max_seq_len, d}));
    m.params.add("ln1.gain", Tensor<T>::full({d}, T(1)));
    m.params.add("ln1.bias", Tensor<T>::zeros({d}));
    for (const char* block : {"self_attn.", "cross_attn."}) {
      m.params.add(std::string(block) + "wq", randn({d, d}));
      m.params.add(std::string(block) + "bq", Tensor<T>::zeros({d}));
      m.params.add(std::string(block) + "wk", randn({d, d}));
      m.params.add(std::string(block) + "bk", Tensor<T>::zeros({d}));
      m.params.add(std::string(block) + "wv", randn({d, d}));
      m.params.add(std::string(block) + "bv", Tensor<T>::zeros({d}));
      m.params.add(std::string(block) + "wo", randn({d, d}));
      m.params.add(std::string(block) + "bo", Tensor<T>::zeros({d}));
    }
    m.params.add("ln2.gain", Tensor<T>::full({d}, T(1)));
    m.params.add("ln2.bias", Tensor<T>::zeros({d}));
    m.params.add("ln3.gain", Tensor<T>::full({d}, T(1)));
    m.params.add("ln3.bias", Tensor<T>::zeros({d}));
    m.params.add("ffn.w1", randn({d, cfg.d_ffn}));
    m.params.add("ffn.b1", Tensor<T>::zeros({cfg.d_ffn}));
    m.params.add("ffn.w2", randn({cfg.d_ffn, d}));
    m.params.add("ffn.b2", Tensor<T>::zeros({d}));
    m.params.add("final_ln.gain", Tensor<T>::full({d}, T(1)));
    m.params.add("final_ln.bias", Tensor<T>::zeros({d}));
    return m;
  }
};

// Teacher-forced decoder logits over the vocabulary, [batch*in_seq, vocab].
// `memory` is [batch, 1, d_model]; `tok_emb` is the encoder embedding table
// used both for input lookups and (transposed) as the tied output projection.
template <typename T>
typename Graph<T>::Ref decoder_logits(
    Graph<T>& g, const EncoderConfig& cfg, const BoundParams<T>& dec,
    typename Graph<T>::Ref tok_emb, typename Graph<T>::Ref memory,
    const TokenBatch& inputs, bool dropout_active) {
  const int b = inputs.batch, s = inputs.seq, d = cfg.d_model;
  const int heads = cfg.n_heads;
  if (s > cfg.max_seq_len) {
    throw InputError("decoder: sequence length " + std::to_string(s) +
                     " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  const Tensor<T>& mem = g.value(memory);
  if (mem.shape != std::vector<int>{b, 1, d}) {
    throw ShapeError("decoder: memory must be [" + std::to_string(b) + "x1x" +
                     std::to_string(d) + "], got " + shape_str(mem.shape));
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
  auto x = g.add(g.embedding_lookup(tok_emb, inputs.ids, {b, s}),
                 g.embedding_lookup(dec["pos_emb"], positions, {b, s}));
  x = maybe_dropout(x);

  // Causal plus key-padding bias for self-attention.
  Tensor<T> self_bias = detail::key_padding_bias<T>(inputs, heads);
  for (int bh = 0; bh < b * heads; ++bh) {
    T* base = self_bias.data.data() + static_cast<size_t>(bh) * s * s;
    for (int q = 0; q < s; ++q) {
      for (int k = q + 1; k < s; ++k) {
        base[static_cast<size_t>(q) * s + k] = T(-1e9);
      }
    }
  }
  auto self_bias_ref = g.constant(std::move(self_bias));
  auto cross_bias = g.constant(Tensor<T>({b * heads, s, 1}, T(0)));
  auto mem2d = g.reshape(memory, {b, d});

  auto h = g.layer_norm(x, dec["ln1.gain"], dec["ln1.bias"]);
  auto self_out = attention(g, dec, std::string("self_attn."),
                            g.reshape(h, {b * s, d}), g.reshape(h, {b * s, d}),
                            b, s, s, d, heads, self_bias_ref);
  x = g.add(x, g.reshape(maybe_dropout(self_out), {b, s, d}));

  h = g.layer_norm(x, dec["ln2.gain"], dec["ln2.bias"]);
  auto cross_out =
      attention(g, dec, std::string("cross_attn."), g.reshape(h, {b * s, d}),
                mem2d, b, s, 1, d, heads, cross_bias);
  x = g.add(x, g.reshape(maybe_dropout(cross_out), {b, s, d}));

  h = g.layer_norm(x, dec["ln3.gain"], dec["ln3.bias"]);
  auto f = g.add(g.matmul(g.reshape(h, {b * s, d}), dec["ffn.w1"]),
                 dec["ffn.b1"]);
  f = g.relu(f);
  f = g.add(g.matmul(f, dec["ffn.w2"]), dec["ffn.b2"]);
  x = g.add(x, g.reshape(maybe_dropout(f), {b, s, d}));

  x = g.layer_norm(x, dec["final_ln.gain"], dec["final_ln.bias"]);
  return g.matmul(g.reshape(x, {b * s, d}), g.transpose_last2(tok_emb));
}

// Mean token cross entropy per sentence, averaged over the batch: position
// (b, t) carries weight 1 / (batch * targets_b), so the batch loss equals the
// mean of independently computed per-pair losses.
template <typename T>
typename Graph<T>::Ref decoder_loss(
    Graph<T>& g, const EncoderConfig& cfg, const BoundParams<T>& dec,
    typename Graph<T>::Ref tok_emb, typename Graph<T>::Ref memory,
    const std::vector<std::vector<int32_t>>& originals, bool dropout_active) {
  const int b = static_cast<int>(originals.size());
  std::vector<std::vector<int32_t>> in_seqs(originals.size());
  for (size_t i = 0; i < originals.size(); ++i) {
    if (originals[i].size() < 2) {
      throw InputError("decoder_loss: original sequence " + std::to_string(i) +
                       " has fewer than 2 tokens");
    }
    in_seqs[i].assign(originals[i].begin(), originals[i].end() - 1);
  }
  TokenBatch inputs = make_batch(in_seqs);
  const int s = inputs.seq;

  auto logits = decoder_logits(g, cfg, dec, tok_emb, memory, inputs,
                               dropout_active);

  std::vector<int32_t> targets(static_cast<size_t>(b) * s, 0);
  std::vector<T> weights(static_cast<size_t>(b) * s, T(0));
  for (int bi = 0; bi < b; ++bi) {
    const size_t t_count = originals[static_cast<size_t>(bi)].size() - 1;
    const T w = T(1) / (static_cast<T>(b) * static_cast<T>(t_count));
    for (size_t t = 0; t < t_count; ++t) {
      targets[static_cast<size_t>(bi) * s + t] =
          originals[static_cast<size_t>(bi)][t + 1];
      weights[static_cast<size_t>(bi) * s + t] = w;
    }
  }
  return g.cross_entropy(logits, targets, weights);
}

// Deterministic (dropout off) loss for one pair. With zero_memory the
// cross-attention memory is replaced by zeros, severing the only path from
// the corrupted sentence to the decoder.
float reconstruction_loss(const EncoderModel<float>& enc,
                          const DecoderModel<float>& dec,
                          const CorruptedPair& pair, bool zero_memory = false);

// Teacher-forced argmax accuracy over original target tokens.
double reconstruction_token_accuracy(
    const EncoderModel<float>& enc, const DecoderModel<float>& dec,
    const std::vector<CorruptedPair>& pairs);

TrainResult train_tsdae(EncoderModel<float>& enc, DecoderModel<float>& dec,
                        const Vocabulary& vocab,
                        const std::vector<SentenceRecord>& corpus,
                        const TsdaeConfig& cfg);

// Joint checkpoint with "encoder." / "decoder." sections.
void save_tsdae_checkpoint(const std::string& path,
                           const EncoderModel<float>& enc,
                           const DecoderModel<float>& dec);
std::pair<EncoderModel<float>, DecoderModel<float>> load_tsdae_checkpoint(
    const std::string& path);

}  // namespace clinembed
