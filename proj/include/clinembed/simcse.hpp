#pragma once

#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "clinembed/encoder.hpp"

namespace clinembed {

struct SimcseConfig {
  float temperature = 0.05f;
  int batch_size = 32;
  int steps = 300;
  float lr = 1e-3f;
  uint64_t seed = 42;

  void validate() const {
    if (!(temperature > 0.0f)) {
      throw ConfigError("simcse: temperature must be > 0");
    }
    if (batch_size < 2) {
      throw ConfigError("simcse: batch_size must be >= 2, a batch of 1 has "
                        "no negatives");
    }
    if (steps < 0) {
      throw ConfigError("simcse: steps must be >= 0");
    }
    if (!(lr > 0.0f)) {
      throw ConfigError("simcse: lr must be > 0");
    }
  }
};

// Two dropout views of the same sentences, row-aligned.
template <typename T>
struct PairBatch {
  Tensor<T> z1;
  Tensor<T> z2;
};

// InfoNCE on the graph: row i of the cosine matrix between first and second
// views is a softmax over the in-batch candidates with the diagonal as the
// positive class; the batch loss is the mean row cross entropy.
template <typename T>
typename Graph<T>::Ref info_nce_node(Graph<T>& g, typename Graph<T>::Ref z1,
                                     typename Graph<T>::Ref z2, T temperature) {
  if (!(temperature > T(0))) {
    throw ConfigError("info_nce: temperature must be > 0");
  }
  const Tensor<T>& v1 = g.value(z1);
  const Tensor<T>& v2 = g.value(z2);
  if (v1.rank() != 2 || v1.shape != v2.shape) {
    throw ShapeError("info_nce: views must be equal [n,d] matrices, got " +
                     shape_str(v1.shape) + " and " + shape_str(v2.shape));
  }
  const int n = v1.shape[0];
  auto sims = g.scale(g.cosine_matrix(z1, z2), T(1) / temperature);
  std::vector<int32_t> targets(static_cast<size_t>(n));
  std::iota(targets.begin(), targets.end(), 0);
  std::vector<T> weights(static_cast<size_t>(n), T(1) / static_cast<T>(n));
  return g.cross_entropy(sims, targets, weights);
}

template <typename T>
T info_nce_loss(const Tensor<T>& z1, const Tensor<T>& z2, T temperature) {
  Graph<T> g(0);
  auto a = g.constant(z1);
  auto b = g.constant(z2);
  return g.value(info_nce_node(g, a, b, temperature)).data[0];
}

// Two stochastic forward+pool passes over the same bound parameters. Rejects
// models whose dropout rate is zero: the views would be identical and the
// loss degenerate.
template <typename T>
std::pair<typename Graph<T>::Ref, typename Graph<T>::Ref> make_view_nodes(
    Graph<T>& g, const EncoderConfig& cfg, const BoundParams<T>& w,
    const TokenBatch& batch) {
  if (!(cfg.dropout_rate > 0.0f)) {
    throw ConfigError("simcse: encoder dropout_rate must be > 0 to form "
                      "distinct views");
  }
  auto z1 = encode_batch(g, cfg, w, batch, true);
  auto z2 = encode_batch(g, cfg, w, batch, true);
  return {z1, z2};
}

PairBatch<float> make_views(const EncoderModel<float>& model,
                            const Vocabulary& vocab,
                            const std::vector<SentenceRecord>& sentences,
                            uint64_t seed);

struct TrainResult {
  std::vector<float> loss_trace;  // one entry per step, pre-update loss
};

void write_loss_trace(const std::string& path,
                      const std::vector<float>& trace);
std::vector<float> read_loss_trace(const std::string& path);

TrainResult train_simcse(EncoderModel<float>& model, const Vocabulary& vocab,
                         const std::vector<SentenceRecord>& corpus,
                         const SimcseConfig& cfg);

}  // namespace clinembed
