#include "clinembed/encoder.hpp"

#include <algorithm>

namespace clinembed {

TokenBatch make_batch(const std::vector<std::vector<int32_t>>& sequences) {
  if (sequences.empty()) {
    throw UsageError("make_batch: no sequences");
  }
  TokenBatch b;
  b.batch = static_cast<int>(sequences.size());
  size_t max_len = 0;
  for (const auto& s : sequences) {
    if (s.empty()) {
      throw UsageError("make_batch: empty sequence");
    }
    max_len = std::max(max_len, s.size());
  }
  b.seq = static_cast<int>(max_len);
  b.ids.assign(static_cast<size_t>(b.batch) * b.seq, Vocabulary::kPad);
  b.mask.assign(static_cast<size_t>(b.batch) * b.seq, 0);
  for (size_t i = 0; i < sequences.size(); ++i) {
    for (size_t j = 0; j < sequences[i].size(); ++j) {
      b.ids[i * max_len + j] = sequences[i][j];
      b.mask[i * max_len + j] = 1;
    }
  }
  return b;
}

std::vector<int32_t> encode_ids(const Vocabulary& vocab,
                                const std::string& sentence, int max_seq_len) {
  if (max_seq_len < 2) {
    throw UsageError("encode_ids: max_seq_len must be >= 2");
  }
  std::vector<int32_t> ids;
  ids.push_back(Vocabulary::kBos);
  for (int32_t id : vocab.encode(sentence)) ids.push_back(id);
  ids.push_back(Vocabulary::kEos);
  if (static_cast<int>(ids.size()) > max_seq_len) {
    ids.resize(static_cast<size_t>(max_seq_len));
  }
  return ids;
}

namespace {

// Token windows of at most max_seq_len - 2 content tokens, each framed with
// BOS/EOS. Empty text yields the single frame [BOS, EOS].
std::vector<std::vector<int32_t>> chunk_ids(const Vocabulary& vocab,
                                            const std::string& text,
                                            int max_seq_len) {
  const std::vector<int32_t> content = vocab.encode(text);
  const size_t window = static_cast<size_t>(max_seq_len - 2);
  std::vector<std::vector<int32_t>> chunks;
  if (content.empty()) {
    chunks.push_back({Vocabulary::kBos, Vocabulary::kEos});
    return chunks;
  }
  for (size_t begin = 0; begin < content.size(); begin += window) {
    const size_t end = std::min(begin + window, content.size());
    std::vector<int32_t> chunk;
    chunk.reserve(end - begin + 2);
    chunk.push_back(Vocabulary::kBos);
    chunk.insert(chunk.end(), content.begin() + begin, content.begin() + end);
    chunk.push_back(Vocabulary::kEos);
    chunks.push_back(std::move(chunk));
  }
  return chunks;
}

}  // namespace

EmbeddingStore embed_sentences(const EncoderModel<float>& model,
                               const Vocabulary& vocab,
                               const std::vector<SentenceRecord>& records,
                               const std::string& store_name, int batch_size) {
  if (batch_size < 1) {
    throw UsageError("embed_sentences: batch_size must be >= 1");
  }
  const EncoderConfig& cfg = model.config;

  EmbeddingStore store;
  store.name = store_name;
  store.dim = cfg.d_model;
  if (records.empty()) return store;

  // Flatten all records into chunks; chunk_owner maps back to the record.
  std::vector<std::vector<int32_t>> all_chunks;
  std::vector<size_t> chunk_owner;
  std::vector<int> chunk_counts(records.size(), 0);
  for (size_t r = 0; r < records.size(); ++r) {
    for (auto& chunk : chunk_ids(vocab, records[r].text, cfg.max_seq_len)) {
      all_chunks.push_back(std::move(chunk));
      chunk_owner.push_back(r);
      ++chunk_counts[r];
    }
  }

  std::vector<double> acc(records.size() * static_cast<size_t>(cfg.d_model),
                          0.0);
  for (size_t begin = 0; begin < all_chunks.size();
       begin += static_cast<size_t>(batch_size)) {
    const size_t end =
        std::min(begin + static_cast<size_t>(batch_size), all_chunks.size());
    std::vector<std::vector<int32_t>> slice(all_chunks.begin() + begin,
                                            all_chunks.begin() + end);
    TokenBatch batch = make_batch(slice);

    Graph<float> g(0);
    BoundParams<float> w = bind_params(g, model.params, false);
    auto pooled = encode_batch(g, cfg, w, batch, false);
    const Tensor<float>& values = g.value(pooled);

    for (size_t i = begin; i < end; ++i) {
      const size_t owner = chunk_owner[i];
      const float* row =
          values.data.data() + (i - begin) * static_cast<size_t>(cfg.d_model);
      double* dst = acc.data() + owner * static_cast<size_t>(cfg.d_model);
      for (int j = 0; j < cfg.d_model; ++j) dst[j] += row[j];
    }
  }

  store.ids.reserve(records.size());
  store.matrix.resize(records.size() * static_cast<size_t>(cfg.d_model));
  for (size_t r = 0; r < records.size(); ++r) {
    store.ids.push_back(records[r].record_id());
    float* dst = store.matrix.data() + r * static_cast<size_t>(cfg.d_model);
    const double* src = acc.data() + r * static_cast<size_t>(cfg.d_model);
    for (int j = 0; j < cfg.d_model; ++j) {
      dst[j] = static_cast<float>(src[j] / chunk_counts[r]);
    }
  }
  store.validate();
  return store;
}

Checkpoint encoder_checkpoint(const EncoderModel<float>& model) {
  Checkpoint ckpt;
  ckpt.config = model.config.to_checkpoint();
  ckpt.params = model.params;
  return ckpt;
}

EncoderModel<float> load_encoder(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  EncoderModel<float> model;
  model.config = EncoderConfig::from_checkpoint(ckpt.config);

  const bool joint =
      !ckpt.params.items.empty() &&
      ckpt.params.items.front().name.rfind("encoder.", 0) == 0;
  for (auto& item : ckpt.params.items) {
    if (joint) {
      if (item.name.rfind("encoder.", 0) != 0) continue;
      model.params.add(item.name.substr(8), std::move(item.tensor));
    } else {
      model.params.add(item.name, std::move(item.tensor));
    }
  }

  // Shape sanity against the declared architecture.
  EncoderModel<float> expected =
      EncoderModel<float>::init(model.config, 0);
  if (expected.params.items.size() != model.params.items.size()) {
    throw FormatError("checkpoint '" + path + "': expected " +
                      std::to_string(expected.params.items.size()) +
                      " encoder parameters, found " +
                      std::to_string(model.params.items.size()));
  }
  for (size_t i = 0; i < expected.params.items.size(); ++i) {
    const auto& want = expected.params.items[i];
    const auto& got = model.params.items[i];
    if (want.name != got.name || want.tensor.shape != got.tensor.shape) {
      throw FormatError("checkpoint '" + path + "': parameter " +
                        std::to_string(i) + " is '" + got.name + "' " +
                        shape_str(got.tensor.shape) + ", expected '" +
                        want.name + "' " + shape_str(want.tensor.shape));
    }
  }
  return model;
}

}  // namespace clinembed
