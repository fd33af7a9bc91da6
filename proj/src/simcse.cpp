#include "clinembed/simcse.hpp"

#include <fstream>

#include "clinembed/io.hpp"

namespace clinembed {

namespace {

// Endless shuffled pass over corpus indices; reshuffles at each epoch end.
class BatchSampler {
 public:
  BatchSampler(size_t count, uint64_t seed)
      : order_(count), rng_(mix_seed(seed, 0x53484c46)) {
    std::iota(order_.begin(), order_.end(), size_t{0});
    cursor_ = count;  // shuffle on first draw
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

PairBatch<float> make_views(const EncoderModel<float>& model,
                            const Vocabulary& vocab,
                            const std::vector<SentenceRecord>& sentences,
                            uint64_t seed) {
  if (sentences.empty()) {
    throw UsageError("make_views: no sentences");
  }
  std::vector<std::vector<int32_t>> seqs;
  seqs.reserve(sentences.size());
  for (const auto& rec : sentences) {
    seqs.push_back(encode_ids(vocab, rec.text, model.config.max_seq_len));
  }
  TokenBatch batch = make_batch(seqs);

  Graph<float> g(seed);
  BoundParams<float> w = bind_params(g, model.params, false);
  auto [z1, z2] = make_view_nodes(g, model.config, w, batch);
  return {g.value(z1), g.value(z2)};
}

void write_loss_trace(const std::string& path,
                      const std::vector<float>& trace) {
  AtomicFile file(path);
  std::ostream& out = file.stream();
  for (size_t i = 0; i < trace.size(); ++i) {
    out << i << '\t' << trace[i] << '\n';
  }
  file.commit();
}

std::vector<float> read_loss_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open loss trace '" + path + "'");
  }
  std::vector<float> trace;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError("loss trace '" + path + "' line " +
                        std::to_string(line_no) + ": missing tab");
    }
    trace.push_back(std::stof(line.substr(tab + 1)));
  }
  return trace;
}

TrainResult train_simcse(EncoderModel<float>& model, const Vocabulary& vocab,
                         const std::vector<SentenceRecord>& corpus,
                         const SimcseConfig& cfg) {
  cfg.validate();
  model.config.validate();
  if (!(model.config.dropout_rate > 0.0f)) {
    throw ConfigError("simcse: encoder dropout_rate must be > 0");
  }
  if (corpus.size() < static_cast<size_t>(cfg.batch_size)) {
    throw UsageError("simcse: corpus has " + std::to_string(corpus.size()) +
                     " sentences, need at least batch_size = " +
                     std::to_string(cfg.batch_size));
  }

  std::vector<std::vector<int32_t>> encoded;
  encoded.reserve(corpus.size());
  for (const auto& rec : corpus) {
    encoded.push_back(encode_ids(vocab, rec.text, model.config.max_seq_len));
  }

  BatchSampler sampler(corpus.size(), cfg.seed);
  Adam<float> adam({cfg.lr});
  TrainResult result;
  result.loss_trace.reserve(static_cast<size_t>(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::vector<int32_t>> seqs;
    seqs.reserve(static_cast<size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) {
      seqs.push_back(encoded[sampler.next()]);
    }
    TokenBatch batch = make_batch(seqs);

    Graph<float> g(mix_seed(cfg.seed, 0x56490000u + static_cast<uint64_t>(step)));
    BoundParams<float> w = bind_params(g, model.params, true);
    auto [z1, z2] = make_view_nodes(g, model.config, w, batch);
    auto loss = info_nce_node(g, z1, z2, cfg.temperature);
    g.backward(loss);

    auto grads = collect_grads(g, w);
    clip_global_norm(grads, 1.0);
    adam.step(model.params, grads);
    result.loss_trace.push_back(g.value(loss).data[0]);
  }
  return result;
}

}  // namespace clinembed
