#include <cmath>

#include "clinembed/simcse.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace clinembed;

namespace {

EncoderConfig tiny_config(int vocab, float dropout = 0.1f) {
  EncoderConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ffn = 32;
  cfg.max_seq_len = 16;
  cfg.dropout_rate = dropout;
  return cfg;
}

std::vector<SentenceRecord> tiny_corpus() {
  std::vector<std::string> texts;
  for (int i = 0; i < 48; ++i) {
    texts.push_back(i % 2 == 0
                        ? "creatinine rising with dialysis planned today"
                        : "troponin elevated with angina reported overnight");
  }
  return testutil::records_from(texts);
}

Tensor<float> random_rows(int n, int d, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({n, d}, 0.0f);
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

TEST_CASE("info_nce: a batch of one has exactly zero loss") {
  const Tensor<float> z = random_rows(1, 8, 5);
  CHECK(info_nce_loss(z, z, 0.05f) == 0.0f);
}

TEST_CASE("info_nce: identical embeddings across the batch give ln(n)") {
  for (int n : {2, 4, 8}) {
    Tensor<float> z({n, 6}, 0.0f);
    Rng rng(7);
    for (int j = 0; j < 6; ++j) z.data[static_cast<size_t>(j)] = static_cast<float>(rng.normal());
    for (int i = 1; i < n; ++i) {
      for (int j = 0; j < 6; ++j) {
        z.data[static_cast<size_t>(i) * 6 + j] = z.data[static_cast<size_t>(j)];
      }
    }
    CHECK(std::abs(info_nce_loss(z, z, 0.05f) - std::log(static_cast<float>(n))) <
          1e-6f);
  }
}

TEST_CASE("info_nce: matches the row-by-row softmax oracle in 64-bit") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 4, d = 8;
    Tensor<double> z1({n, d}, 0.0), z2({n, d}, 0.0);
    std::vector<std::vector<double>> o1(n, std::vector<double>(d));
    std::vector<std::vector<double>> o2(n, std::vector<double>(d));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) {
        o1[static_cast<size_t>(i)][static_cast<size_t>(j)] = rng.normal();
        o2[static_cast<size_t>(i)][static_cast<size_t>(j)] = rng.normal();
        z1.data[static_cast<size_t>(i) * d + j] = o1[static_cast<size_t>(i)][static_cast<size_t>(j)];
        z2.data[static_cast<size_t>(i) * d + j] = o2[static_cast<size_t>(i)][static_cast<size_t>(j)];
      }
    }
    const double got = info_nce_loss(z1, z2, 0.05);
    const double want = oracles::info_nce(o1, o2, 0.05);
    CHECK(std::abs(got - want) < 1e-6);
  }
}

TEST_CASE("info_nce invariants: non-negativity, rescale, permutation") {
  Rng rng(13);
  const int n = 6, d = 10;
  Tensor<double> z1 = [&] {
    Tensor<double> t({n, d}, 0.0);
    for (auto& v : t.data) v = rng.normal();
    return t;
  }();
  Tensor<double> z2 = [&] {
    Tensor<double> t({n, d}, 0.0);
    for (auto& v : t.data) v = rng.normal();
    return t;
  }();

  const double base = info_nce_loss(z1, z2, 0.1);
  CHECK(base >= 0.0);

  // Positive per-row rescaling leaves every cosine unchanged.
  Tensor<double> scaled = z1;
  for (int i = 0; i < n; ++i) {
    const double factor = 0.25 + 3.0 * rng.uniform();
    for (int j = 0; j < d; ++j) {
      scaled.data[static_cast<size_t>(i) * d + j] *= factor;
    }
  }
  CHECK(std::abs(info_nce_loss(scaled, z2, 0.1) - base) < 1e-6);

  // The same row permutation applied to both views preserves the mean loss.
  std::vector<size_t> perm{3, 0, 5, 1, 4, 2};
  Tensor<double> p1({n, d}, 0.0), p2({n, d}, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      p1.data[static_cast<size_t>(i) * d + j] = z1.data[perm[static_cast<size_t>(i)] * d + j];
      p2.data[static_cast<size_t>(i) * d + j] = z2.data[perm[static_cast<size_t>(i)] * d + j];
    }
  }
  CHECK(std::abs(info_nce_loss(p1, p2, 0.1) - base) < 1e-6);
}

TEST_CASE("info_nce rejects zero-norm rows naming the row") {
  Tensor<float> z1 = random_rows(3, 4, 17);
  Tensor<float> z2 = random_rows(3, 4, 18);
  for (int j = 0; j < 4; ++j) z1.data[4 + j] = 0.0f;
  CHECK_THROWS_WITH_AS(info_nce_loss(z1, z2, 0.05f),
                       doctest::Contains("row 1"), NumericError);
}

TEST_CASE("make_views: distinct row-aligned views, deterministic per seed") {
  const auto corpus = tiny_corpus();
  const Vocabulary vocab = Vocabulary::build(corpus, 1);
  auto model = EncoderModel<float>::init(tiny_config(vocab.size()), 21);

  std::vector<SentenceRecord> batch(corpus.begin(), corpus.begin() + 8);
  const PairBatch<float> views = make_views(model, vocab, batch, 77);
  CHECK(views.z1.shape == views.z2.shape);
  CHECK(views.z1.shape == std::vector<int>{8, 16});
  CHECK(views.z1.data != views.z2.data);

  const PairBatch<float> again = make_views(model, vocab, batch, 77);
  CHECK(views.z1.data == again.z1.data);
  CHECK(views.z2.data == again.z2.data);
}

TEST_CASE("make_views rejects dropout-free models") {
  const auto corpus = tiny_corpus();
  const Vocabulary vocab = Vocabulary::build(corpus, 1);
  auto model = EncoderModel<float>::init(tiny_config(vocab.size(), 0.0f), 21);
  std::vector<SentenceRecord> batch(corpus.begin(), corpus.begin() + 4);
  CHECK_THROWS_AS(make_views(model, vocab, batch, 1), ConfigError);
}

TEST_CASE("train_simcse: zero steps is a no-op, seeds fix the trace") {
  const auto corpus = tiny_corpus();
  const Vocabulary vocab = Vocabulary::build(corpus, 1);
  const EncoderConfig cfg = tiny_config(vocab.size());

  SimcseConfig train_cfg;
  train_cfg.batch_size = 8;
  train_cfg.steps = 0;
  auto model = EncoderModel<float>::init(cfg, 5);
  const auto before = model.params.items[0].tensor.data;
  const auto result = train_simcse(model, vocab, corpus, train_cfg);
  CHECK(result.loss_trace.empty());
  CHECK(model.params.items[0].tensor.data == before);

  train_cfg.steps = 5;
  auto m1 = EncoderModel<float>::init(cfg, 5);
  auto m2 = EncoderModel<float>::init(cfg, 5);
  const auto r1 = train_simcse(m1, vocab, corpus, train_cfg);
  const auto r2 = train_simcse(m2, vocab, corpus, train_cfg);
  CHECK(r1.loss_trace == r2.loss_trace);
  for (size_t i = 0; i < m1.params.items.size(); ++i) {
    CHECK(m1.params.items[i].tensor.data == m2.params.items[i].tensor.data);
  }
}

TEST_CASE("train_simcse rejects undersized corpora and zero dropout") {
  const auto corpus = tiny_corpus();
  const Vocabulary vocab = Vocabulary::build(corpus, 1);

  SimcseConfig cfg;
  cfg.batch_size = 256;
  auto model = EncoderModel<float>::init(tiny_config(vocab.size()), 5);
  CHECK_THROWS_AS(train_simcse(model, vocab, corpus, cfg), UsageError);

  SimcseConfig bad;
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.batch_size = 8;
  bad.temperature = 0.0f;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  auto flat = EncoderModel<float>::init(tiny_config(vocab.size(), 0.0f), 5);
  SimcseConfig ok;
  ok.batch_size = 8;
  CHECK_THROWS_AS(train_simcse(flat, vocab, corpus, ok), ConfigError);
}

TEST_CASE("loss trace file round trip") {
  const std::vector<float> trace{3.25f, 2.5f, 1.75f};
  const std::string path = testutil::test_path("trace.tsv");
  write_loss_trace(path, trace);
  CHECK(read_loss_trace(path) == trace);
}
