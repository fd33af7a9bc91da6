#include "clinembed/tsdae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace clinembed {

namespace {

bool is_protected(int32_t id) {
  return id == Vocabulary::kPad || id == Vocabulary::kBos ||
         id == Vocabulary::kEos;
}

// Shuffled endless index stream (same policy as the SimCSE sampler).
class Sampler {
 public:
  Sampler(size_t count, uint64_t seed)
      : order_(count), rng_(mix_seed(seed, 0x53484c46)) {
    std::iota(order_.begin(), order_.end(), size_t{0});
    cursor_ = count;
  }
  size_t next() {
    if (cursor_ >= order_.size()) {
      rng_.shuffle(order_.begin(), order_.end());
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

 private:
  std::vector<size_t> order_;
  Rng rng_;
  size_t cursor_;
};

}  // namespace

CorruptedPair corrupt(const std::vector<int32_t>& ids, float deletion_ratio,
                      Rng& rng) {
  if (!(deletion_ratio >= 0.0f && deletion_ratio < 1.0f)) {
    throw ConfigError("corrupt: deletion_ratio must be in [0, 1)");
  }
  std::vector<size_t> content;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (!is_protected(ids[i])) content.push_back(i);
  }
  if (content.empty()) {
    throw InputError("corrupt: sequence has no content tokens");
  }

  const size_t w = content.size();
  size_t del = static_cast<size_t>(
      std::lround(static_cast<double>(deletion_ratio) * static_cast<double>(w)));
  if (del >= w) del = w - 1;  // keep at least one content token

  // Uniform sample without replacement via partial Fisher-Yates: the first
  // `del` slots after shuffling are the deleted positions.
  std::vector<size_t> pool = content;
  for (size_t i = 0; i < del; ++i) {
    const size_t j = i + rng.uniform_index(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  std::vector<bool> deleted(ids.size(), false);
  for (size_t i = 0; i < del; ++i) deleted[pool[i]] = true;

  CorruptedPair pair;
  pair.original = ids;
  pair.corrupted.reserve(ids.size() - del);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (!deleted[i]) pair.corrupted.push_back(ids[i]);
  }
  return pair;
}

CorruptedPair corrupt(const std::vector<int32_t>& ids,
                      const CorruptionConfig& cfg) {
  Rng rng(mix_seed(cfg.seed, 0xc0525054));
  return corrupt(ids, cfg.deletion_ratio, rng);
}

float reconstruction_loss(const EncoderModel<float>& enc,
                          const DecoderModel<float>& dec,
                          const CorruptedPair& pair, bool zero_memory) {
  Graph<float> g(0);
  BoundParams<float> ew = bind_params(g, enc.params, false);
  BoundParams<float> dw = bind_params(g, dec.params, false);

  TokenBatch enc_batch = make_batch({pair.corrupted});
  auto pooled = encode_batch(g, enc.config, ew, enc_batch, false);
  auto memory =
      zero_memory
          ? g.constant(Tensor<float>({1, 1, enc.config.d_model}, 0.0f))
          : g.reshape(pooled, {1, 1, enc.config.d_model});
  auto loss = decoder_loss(g, dec.config, dw, ew["tok_emb"], memory,
                           {pair.original}, false);
  return g.value(loss).data[0];
}

double reconstruction_token_accuracy(
    const EncoderModel<float>& enc, const DecoderModel<float>& dec,
    const std::vector<CorruptedPair>& pairs) {
  if (pairs.empty()) {
    throw UsageError("reconstruction_token_accuracy: no pairs");
  }
  size_t hits = 0, total = 0;
  for (const auto& pair : pairs) {
    Graph<float> g(0);
    BoundParams<float> ew = bind_params(g, enc.params, false);
    BoundParams<float> dw = bind_params(g, dec.params, false);

    TokenBatch enc_batch = make_batch({pair.corrupted});
    auto pooled = encode_batch(g, enc.config, ew, enc_batch, false);
    auto memory = g.reshape(pooled, {1, 1, enc.config.d_model});

    std::vector<int32_t> input(pair.original.begin(), pair.original.end() - 1);
    TokenBatch in_batch = make_batch({input});
    auto logits = decoder_logits(g, dec.config, dw, ew["tok_emb"], memory,
                                 in_batch, false);
    const Tensor<float>& lv = g.value(logits);
    const int vocab = lv.shape[1];
    for (size_t t = 0; t + 1 < pair.original.size(); ++t) {
      const float* row = lv.data.data() + t * static_cast<size_t>(vocab);
      int32_t best = 0;
      for (int32_t j = 1; j < vocab; ++j) {
        if (row[j] > row[best]) best = j;
      }
      if (best == pair.original[t + 1]) ++hits;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

TrainResult train_tsdae(EncoderModel<float>& enc, DecoderModel<float>& dec,
                        const Vocabulary& vocab,
                        const std::vector<SentenceRecord>& corpus,
                        const TsdaeConfig& cfg) {
  cfg.validate();
  enc.config.validate();
  if (corpus.empty()) {
    throw UsageError("tsdae: corpus is empty");
  }
  if (corpus.size() < static_cast<size_t>(cfg.batch_size)) {
    throw UsageError("tsdae: corpus has " + std::to_string(corpus.size()) +
                     " sentences, need at least batch_size = " +
                     std::to_string(cfg.batch_size));
  }

  std::vector<std::vector<int32_t>> encoded;
  encoded.reserve(corpus.size());
  for (const auto& rec : corpus) {
    encoded.push_back(encode_ids(vocab, rec.text, enc.config.max_seq_len));
  }

  Sampler sampler(corpus.size(), cfg.seed);
  Rng corruption_rng(mix_seed(cfg.seed, 0xc0525054));
  Adam<float> adam_enc({cfg.lr});
  Adam<float> adam_dec({cfg.lr});
  TrainResult result;
  result.loss_trace.reserve(static_cast<size_t>(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::vector<int32_t>> corrupted, originals;
    corrupted.reserve(static_cast<size_t>(cfg.batch_size));
    originals.reserve(static_cast<size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) {
      // Corruption is resampled on every visit to a sentence.
      CorruptedPair pair =
          corrupt(encoded[sampler.next()], cfg.deletion_ratio, corruption_rng);
      corrupted.push_back(std::move(pair.corrupted));
      originals.push_back(std::move(pair.original));
    }

    Graph<float> g(mix_seed(cfg.seed, 0x54440000u + static_cast<uint64_t>(step)));
    BoundParams<float> ew = bind_params(g, enc.params, true);
    BoundParams<float> dw = bind_params(g, dec.params, true);

    TokenBatch enc_batch = make_batch(corrupted);
    auto pooled = encode_batch(g, enc.config, ew, enc_batch, true);
    auto memory = g.reshape(pooled, {cfg.batch_size, 1, enc.config.d_model});
    auto loss = decoder_loss(g, dec.config, dw, ew["tok_emb"], memory,
                             originals, true);
    g.backward(loss);

    auto enc_grads = collect_grads(g, ew);
    auto dec_grads = collect_grads(g, dw);
    // Clip by the global norm over both parameter sets jointly.
    double sq = 0.0;
    for (const auto* grads : {&enc_grads, &dec_grads}) {
      for (const auto& gvec : *grads) {
        for (float v : gvec) sq += static_cast<double>(v) * v;
      }
    }
    const double norm = std::sqrt(sq);
    if (norm > 1.0) {
      const float factor = static_cast<float>(1.0 / norm);
      for (auto* grads : {&enc_grads, &dec_grads}) {
        for (auto& gvec : *grads) {
          for (float& v : gvec) v *= factor;
        }
      }
    }
    adam_enc.step(enc.params, enc_grads);
    adam_dec.step(dec.params, dec_grads);
    result.loss_trace.push_back(g.value(loss).data[0]);
  }
  return result;
}

void save_tsdae_checkpoint(const std::string& path,
                           const EncoderModel<float>& enc,
                           const DecoderModel<float>& dec) {
  Checkpoint ckpt;
  ckpt.config = enc.config.to_checkpoint();
  for (const auto& item : enc.params.items) {
    ckpt.params.add("encoder." + item.name, item.tensor);
  }
  for (const auto& item : dec.params.items) {
    ckpt.params.add("decoder." + item.name, item.tensor);
  }
  save_checkpoint(path, ckpt);
}

std::pair<EncoderModel<float>, DecoderModel<float>> load_tsdae_checkpoint(
    const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  const EncoderConfig cfg = EncoderConfig::from_checkpoint(ckpt.config);

  EncoderModel<float> enc;
  DecoderModel<float> dec;
  enc.config = cfg;
  dec.config = cfg;
  for (auto& item : ckpt.params.items) {
    if (item.name.rfind("encoder.", 0) == 0) {
      enc.params.add(item.name.substr(8), std::move(item.tensor));
    } else if (item.name.rfind("decoder.", 0) == 0) {
      dec.params.add(item.name.substr(8), std::move(item.tensor));
    } else {
      throw FormatError("checkpoint '" + path + "': parameter '" + item.name +
                        "' belongs to neither section");
    }
  }
  if (enc.params.items.empty() || dec.params.items.empty()) {
    throw FormatError("checkpoint '" + path +
                      "': missing encoder or decoder section");
  }
  return {std::move(enc), std::move(dec)};
}

}  // namespace clinembed
