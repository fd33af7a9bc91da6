// Acceptance suite: one checked block per criterion, one PASS/FAIL line each.
// The pipeline criteria drive the real CLI binary (path in CLINEMBED_CLI).
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "clinembed/corpus.hpp"
#include "clinembed/encoder.hpp"
#include "clinembed/heads.hpp"
#include "clinembed/metrics.hpp"
#include "clinembed/simcse.hpp"
#include "clinembed/store.hpp"
#include "clinembed/synthetic.hpp"
#include "clinembed/tsdae.hpp"
#include "gradcheck_common.hpp"
#include "oracles.hpp"

using namespace clinembed;

namespace {

int g_failures = 0;

struct Criterion {
  std::string detail;
  bool ok = true;

  void require(bool condition, const std::string& what) {
    if (!condition) {
      ok = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

void run_criterion(int number, const std::string& name,
                   const std::function<void(Criterion&)>& body) {
  Criterion c;
  try {
    body(c);
  } catch (const std::exception& e) {
    c.ok = false;
    c.require(false, std::string("exception: ") + e.what());
  }
  std::printf("criterion %2d %-28s %s%s%s\n", number, name.c_str(),
              c.ok ? "PASS" : "FAIL", c.detail.empty() ? "" : " -- ",
              c.detail.c_str());
  std::fflush(stdout);
  if (!c.ok) ++g_failures;
}

std::string cli_path() {
  const char* env = std::getenv("CLINEMBED_CLI");
  if (env != nullptr && *env != '\0') return env;
  return "./clinembed";
}

int run_cli(const std::string& args) {
  const std::string command = cli_path() + " " + args + " > /dev/null 2>&1";
  return std::system(command.c_str());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

double mean_of(const std::vector<float>& values, size_t begin, size_t end) {
  double total = 0.0;
  for (size_t i = begin; i < end; ++i) total += values[i];
  return total / static_cast<double>(end - begin);
}

// Shared pipeline artifacts produced once and reused across criteria.
struct PipelineRun {
  std::string dir;
  bool ok = false;
};

PipelineRun run_pipeline(const std::string& dir) {
  PipelineRun run;
  run.dir = dir;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const std::string d = dir + "/";
  const std::vector<std::string> commands = {
      "gen-synthetic --out " + d + "corpus.tsv --labels-out " + d +
          "labels.tsv --sentences 1000 --topics 2 --seed 42",
      "prep --in " + d + "corpus.tsv --out " + d + "sentences.tsv --vocab-out " +
          d + "vocab.txt",
      "train-simcse --sentences " + d + "sentences.tsv --vocab " + d +
          "vocab.txt --out-dir " + d + "simcse --seed 42",
      "train-tsdae --sentences " + d + "sentences.tsv --vocab " + d +
          "vocab.txt --out-dir " + d + "tsdae --seed 42",
      "embed --model " + d + "simcse/encoder.ckpt --vocab " + d +
          "vocab.txt --sentences " + d + "sentences.tsv --out " + d +
          "simcse.embd --name simcse",
      "embed --model " + d + "tsdae/model.ckpt --vocab " + d +
          "vocab.txt --sentences " + d + "sentences.tsv --out " + d +
          "tsdae.embd --name tsdae",
      "concat --a " + d + "simcse.embd --b " + d + "tsdae.embd --out " + d +
          "hybrid.embd",
      "eval-cluster --store " + d + "hybrid.embd --labels " + d +
          "labels.tsv --report " + d + "cluster_report.tsv --name synthetic",
  };
  for (const auto& cmd : commands) {
    if (run_cli(cmd) != 0) return run;
  }
  run.ok = true;
  return run;
}

// Mean intra-topic minus mean inter-topic cosine over all row pairs.
double topic_cosine_gap(const EmbeddingStore& store,
                        const std::vector<int>& topics) {
  double intra = 0.0, inter = 0.0;
  size_t intra_n = 0, inter_n = 0;
  for (size_t i = 0; i < store.count(); ++i) {
    for (size_t j = i + 1; j < store.count(); ++j) {
      const double c = cosine(store.row(i), store.row(j));
      if (topics[i] == topics[j]) {
        intra += c;
        ++intra_n;
      } else {
        inter += c;
        ++inter_n;
      }
    }
  }
  return intra / static_cast<double>(intra_n) -
         inter / static_cast<double>(inter_n);
}

std::vector<int> topics_for_store(const EmbeddingStore& store,
                                  const std::string& labels_path) {
  std::map<std::string, std::string> by_id;
  for (const auto& [id, label] : read_labels(labels_path)) by_id[id] = label;
  std::vector<std::string> labels;
  for (const auto& id : store.ids) labels.push_back(by_id.at(id));
  return dense_labels(labels);
}

double cluster_v(const EmbeddingStore& store, const std::vector<int>& topics) {
  const KmeansResult km = kmeans(store, 2, 42);
  return v_measure(topics, km.assignment).v;
}

}  // namespace

int main() {
  // Criteria 4, 6, and 9 share the synthetic-corpus pipeline artifacts.
  PipelineRun run1 = run_pipeline("acceptance_run1");
  PipelineRun run2 = run_pipeline("acceptance_run2");

  run_criterion(1, "gradient-correctness", [&](Criterion& c) {
    for (const auto& [name, check] : gradcheck::all_op_checks()) {
      const double err = gradcheck::run_check(check, 50, 20240611);
      c.require(err <= 1e-4, name + " err " + std::to_string(err));
    }
    for (const auto& [name, check] : gradcheck::model_composite_checks()) {
      const double err = gradcheck::run_check(check, 5, 20240611);
      c.require(err <= 1e-4, name + " err " + std::to_string(err));
    }
  });

  run_criterion(2, "infonce-identities", [&](Criterion& c) {
    Rng rng(2024);
    Tensor<float> single({1, 8}, 0.0f);
    for (auto& v : single.data) v = static_cast<float>(rng.normal());
    c.require(info_nce_loss(single, single, 0.05f) == 0.0f,
              "batch-of-1 loss not exactly 0");

    for (int n : {2, 4, 8}) {
      Tensor<float> z({n, 8}, 0.0f);
      for (int j = 0; j < 8; ++j) z.data[static_cast<size_t>(j)] = static_cast<float>(rng.normal());
      for (int i = 1; i < n; ++i) {
        for (int j = 0; j < 8; ++j) {
          z.data[static_cast<size_t>(i) * 8 + j] = z.data[static_cast<size_t>(j)];
        }
      }
      const double err = std::abs(static_cast<double>(info_nce_loss(z, z, 0.05f)) -
                                  std::log(static_cast<double>(n)));
      c.require(err < 1e-6, "identical-batch n=" + std::to_string(n) +
                            " err " + std::to_string(err));
    }

    for (int trial = 0; trial < 50; ++trial) {
      const int n = 2 + static_cast<int>(rng.uniform_index(7));
      const int dim = 3 + static_cast<int>(rng.uniform_index(10));
      Tensor<double> z1({n, dim}, 0.0), z2({n, dim}, 0.0);
      std::vector<std::vector<double>> o1(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(dim)));
      auto o2 = o1;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < dim; ++j) {
          o1[static_cast<size_t>(i)][static_cast<size_t>(j)] = rng.normal();
          o2[static_cast<size_t>(i)][static_cast<size_t>(j)] = rng.normal();
          z1.data[static_cast<size_t>(i) * dim + j] = o1[static_cast<size_t>(i)][static_cast<size_t>(j)];
          z2.data[static_cast<size_t>(i) * dim + j] = o2[static_cast<size_t>(i)][static_cast<size_t>(j)];
        }
      }
      const double err =
          std::abs(info_nce_loss(z1, z2, 0.05) - oracles::info_nce(o1, o2, 0.05));
      c.require(err < 1e-6, "oracle mismatch " + std::to_string(err));
    }
  });

  run_criterion(3, "tsdae-identities", [&](Criterion& c) {
    // Ratio 0.6 on ten words keeps exactly four, for any stream state.
    std::vector<int32_t> ids{Vocabulary::kBos};
    for (int32_t t = 4; t < 14; ++t) ids.push_back(t);
    ids.push_back(Vocabulary::kEos);
    for (uint64_t seed = 0; seed < 20; ++seed) {
      const CorruptedPair pair = corrupt(ids, {0.6f, seed});
      int survivors = 0;
      for (int32_t id : pair.corrupted) {
        if (id != Vocabulary::kBos && id != Vocabulary::kEos) ++survivors;
      }
      c.require(survivors == 4, "seed " + std::to_string(seed) + " kept " +
                                    std::to_string(survivors));
    }

    // Uniform decoder: zeroed tied projection makes every row uniform.
    EncoderConfig cfg;
    cfg.vocab_size = 30;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ffn = 32;
    cfg.max_seq_len = 16;
    auto enc = EncoderModel<float>::init(cfg, 1);
    auto dec = DecoderModel<float>::init(cfg, 2);
    std::fill(enc.params.find("tok_emb")->data.begin(),
              enc.params.find("tok_emb")->data.end(), 0.0f);
    CorruptedPair pair;
    pair.original = {Vocabulary::kBos, 4, 5, 6, 7, Vocabulary::kEos};
    pair.corrupted = {Vocabulary::kBos, 5, 7, Vocabulary::kEos};
    const double uniform_err =
        std::abs(static_cast<double>(reconstruction_loss(enc, dec, pair)) -
                 std::log(30.0));
    c.require(uniform_err < 1e-6,
              "uniform-decoder err " + std::to_string(uniform_err));

    // Perfect decoder: certainty on the true token at every position.
    Graph<float> g;
    const int positions = 5, vocab = 30;
    Tensor<float> logits({positions, vocab}, 0.0f);
    std::vector<int32_t> targets(positions);
    for (int i = 0; i < positions; ++i) {
      targets[static_cast<size_t>(i)] = (i * 7) % vocab;
      logits.data[static_cast<size_t>(i) * vocab + targets[static_cast<size_t>(i)]] = 1000.0f;
    }
    const float perfect =
        g.value(g.cross_entropy(g.constant(std::move(logits)), targets,
                                std::vector<float>(positions, 1.0f / positions)))
            .data[0];
    c.require(perfect == 0.0f, "perfect-decoder loss not exactly 0");
  });

  run_criterion(4, "training-efficacy", [&](Criterion& c) {
    c.require(run1.ok, "pipeline run failed");
    if (!run1.ok) return;
    const std::string d = run1.dir + "/";

    for (const char* trainer : {"simcse", "tsdae"}) {
      const auto trace = read_loss_trace(d + trainer + "/loss_trace.tsv");
      c.require(trace.size() >= 40, std::string(trainer) + " trace too short");
      if (trace.size() < 40) continue;
      const double first = mean_of(trace, 0, 20);
      const double last = mean_of(trace, trace.size() - 20, trace.size());
      c.require(last <= 0.7 * first,
                std::string(trainer) + " drop " +
                    std::to_string(100.0 * (1.0 - last / first)) + "%");
    }

    const EmbeddingStore simcse = read_store(d + "simcse.embd");
    const EmbeddingStore tsdae = read_store(d + "tsdae.embd");
    const EmbeddingStore hybrid = read_store(d + "hybrid.embd");
    const std::vector<int> topics = topics_for_store(simcse, d + "labels.tsv");

    const double gap = topic_cosine_gap(simcse, topics);
    c.require(gap >= 0.05, "simcse topic cosine gap " + std::to_string(gap));

    const double v_simcse = cluster_v(simcse, topics);
    const double v_tsdae = cluster_v(tsdae, topics);
    const double v_hybrid = cluster_v(hybrid, topics);
    c.require(v_hybrid >= 0.3, "hybrid V " + std::to_string(v_hybrid));
    c.require(v_hybrid >= std::max(v_simcse, v_tsdae) - 0.05,
              "hybrid V " + std::to_string(v_hybrid) + " vs components " +
                  std::to_string(v_simcse) + "/" + std::to_string(v_tsdae));

    // Trained reconstruction beats the most-frequent-token baseline.
    const auto [enc, dec] = load_tsdae_checkpoint(d + "tsdae/model.ckpt");
    const Vocabulary vocab = Vocabulary::load(d + "vocab.txt");
    const auto corpus = read_records(d + "sentences.tsv");
    std::vector<CorruptedPair> pairs;
    Rng crng(7);
    std::vector<int64_t> counts(static_cast<size_t>(vocab.size()), 0);
    int64_t total_targets = 0;
    for (size_t i = 0; i < 50 && i < corpus.size(); ++i) {
      const auto ids = encode_ids(vocab, corpus[i].text, enc.config.max_seq_len);
      pairs.push_back(corrupt(ids, 0.6f, crng));
      for (size_t t = 1; t < ids.size(); ++t) {
        ++counts[static_cast<size_t>(ids[t])];
        ++total_targets;
      }
    }
    const int64_t majority = *std::max_element(counts.begin(), counts.end());
    const double baseline =
        static_cast<double>(majority) / static_cast<double>(total_targets);
    const double accuracy = reconstruction_token_accuracy(enc, dec, pairs);
    c.require(accuracy > baseline,
              "reconstruction accuracy " + std::to_string(accuracy) +
                  " vs majority baseline " + std::to_string(baseline));
  });

  run_criterion(5, "metric-oracle-equivalence", [&](Criterion& c) {
    // Hand-derived anchors hold exactly.
    c.require(spearman({1, 2, 3}, {1, 3, 2}) == 0.5, "spearman anchor");
    c.require(*ndcg_at_10({"x", "y", "hit"}, {{"hit", 3}}) == 0.5,
              "ndcg anchor");

    Rng rng(5050);
    int spearman_n = 0, vm_n = 0, ndcg_n = 0, auroc_n = 0, auprc_n = 0;
    while (spearman_n < 200 || vm_n < 200 || ndcg_n < 200 || auroc_n < 200 ||
           auprc_n < 200) {
      const size_t n = 2 + rng.uniform_index(11);

      if (spearman_n < 200) {
        std::vector<double> a(n), b(n);
        for (size_t i = 0; i < n; ++i) {
          a[i] = static_cast<double>(rng.uniform_index(6));
          b[i] = static_cast<double>(rng.uniform_index(6));
        }
        auto constant = [](const std::vector<double>& v) {
          for (double x : v) {
            if (x != v[0]) return false;
          }
          return true;
        };
        if (!constant(a) && !constant(b)) {
          ++spearman_n;
          c.require(std::abs(spearman(a, b) - oracles::spearman(a, b)) <= 1e-9,
                    "spearman oracle");
        }
      }

      if (vm_n < 200) {
        std::vector<int> classes(n), clusters(n);
        for (size_t i = 0; i < n; ++i) {
          classes[i] = static_cast<int>(rng.uniform_index(4));
          clusters[i] = static_cast<int>(rng.uniform_index(4));
        }
        ++vm_n;
        const auto got = v_measure(classes, clusters);
        const auto want = oracles::v_measure(classes, clusters);
        c.require(std::abs(got.v - want.v) <= 1e-9 &&
                      std::abs(got.homogeneity - want.homogeneity) <= 1e-9 &&
                      std::abs(got.completeness - want.completeness) <= 1e-9,
                  "v_measure oracle");
      }

      if (ndcg_n < 200) {
        std::vector<std::string> ranked;
        std::map<std::string, int> judgments;
        bool relevant = false;
        for (size_t i = 0; i < n; ++i) {
          ranked.push_back("d" + std::to_string(i));
          if (rng.uniform() < 0.8) {
            const int grade = static_cast<int>(rng.uniform_index(4));
            judgments[ranked.back()] = grade;
            relevant |= grade > 0;
          }
        }
        rng.shuffle(ranked.begin(), ranked.end());
        if (relevant) {
          ++ndcg_n;
          c.require(std::abs(*ndcg_at_10(ranked, judgments) -
                             oracles::ndcg_at_10(ranked, judgments)) <= 1e-9,
                    "ndcg oracle");
        }
      }

      std::vector<double> scores(n);
      std::vector<int> labels(n);
      bool pos = false, neg = false;
      for (size_t i = 0; i < n; ++i) {
        scores[i] = static_cast<double>(rng.uniform_index(5)) / 4.0;
        labels[i] = rng.uniform() < 0.5 ? 1 : 0;
        (labels[i] ? pos : neg) = true;
      }
      if (auroc_n < 200 && pos && neg) {
        ++auroc_n;
        c.require(std::abs(auroc(scores, labels) -
                           oracles::auroc(scores, labels)) <= 1e-9,
                  "auroc oracle");
      }
      if (auprc_n < 200 && pos) {
        ++auprc_n;
        c.require(std::abs(auprc(scores, labels) -
                           oracles::auprc(scores, labels)) <= 1e-9,
                  "auprc oracle");
      }
    }
  });

  run_criterion(6, "hybrid-invariant", [&](Criterion& c) {
    Rng rng(606);
    EmbeddingStore a, b;
    a.name = "a";
    b.name = "b";
    a.dim = 64;
    b.dim = 64;
    const size_t count = 100;
    for (size_t i = 0; i < count; ++i) {
      const std::string id = "r" + std::to_string(i);
      a.ids.push_back(id);
      b.ids.push_back(id);
      for (int j = 0; j < 64; ++j) {
        a.matrix.push_back(static_cast<float>(rng.normal()));
        b.matrix.push_back(static_cast<float>(rng.normal()));
      }
    }
    const EmbeddingStore hybrid = concat_embeddings(a, b, true);
    c.require(hybrid.dim == 128, "dim " + std::to_string(hybrid.dim));
    for (int pair = 0; pair < 100; ++pair) {
      const size_t i = rng.uniform_index(count);
      size_t j = rng.uniform_index(count);
      if (j == i) j = (j + 1) % count;
      const double expect =
          (cosine(a.row(i), a.row(j)) + cosine(b.row(i), b.row(j))) / 2.0;
      const double got = cosine(hybrid.row(i), hybrid.row(j));
      c.require(std::abs(got - expect) <= 1e-6,
                "cosine mismatch " + std::to_string(std::abs(got - expect)));
    }

    if (run1.ok) {
      const EmbeddingStore hs = read_store(run1.dir + "/hybrid.embd");
      c.require(hs.dim == 128, "pipeline hybrid dim");
    }
  });

  run_criterion(7, "cross-validation-protocol", [&](Criterion& c) {
    // The mortality class ratio: 1095 positives of 10000 land 219 per fold.
    std::vector<double> labels(10000, 0.0);
    for (int i = 0; i < 1095; ++i) labels[static_cast<size_t>(i)] = 1.0;
    const FoldPlan plan =
        stratified_folds(labels, TaskKind::kClassification, 5, 42);
    for (const auto& fold : plan.folds) {
      int positives = 0;
      for (int idx : fold) positives += labels[static_cast<size_t>(idx)] == 1.0;
      c.require(positives == 219,
                "fold positives " + std::to_string(positives));
    }

    Rng rng(707);
    auto make_set = [&](bool oracle) {
      std::vector<AdmissionSample> samples;
      for (int i = 0; i < 400; ++i) {
        AdmissionSample s;
        s.admission_id = "adm" + std::to_string(10000 + i);
        s.label = i % 4 == 0 ? 1.0 : 0.0;
        const double signal = oracle ? s.label : rng.uniform();
        s.feature = {static_cast<float>(signal),
                     static_cast<float>(rng.normal())};
        samples.push_back(std::move(s));
      }
      if (!oracle) {
        // Shuffled labels: sever any feature-label relationship.
        std::vector<double> ys;
        for (const auto& s : samples) ys.push_back(s.label);
        rng.shuffle(ys.begin(), ys.end());
        for (size_t i = 0; i < samples.size(); ++i) samples[i].label = ys[i];
      }
      return samples;
    };

    HeadConfig cfg;
    cfg.seed = 7;
    cfg.epochs = 20;
    const CvResult oracle =
        cross_validate(make_set(true), TaskKind::kClassification, cfg);
    c.require(oracle.mean.primary == 1.0 && oracle.stddev.primary == 0.0,
              "oracle AUROC " + std::to_string(oracle.mean.primary) + " std " +
                  std::to_string(oracle.stddev.primary));

    const CvResult null_set =
        cross_validate(make_set(false), TaskKind::kClassification, cfg);
    c.require(null_set.mean.primary >= 0.4 && null_set.mean.primary <= 0.6,
              "shuffled-label AUROC " + std::to_string(null_set.mean.primary));
  });

  run_criterion(8, "regression-baseline", [&](Criterion& c) {
    Rng rng(808);
    std::vector<AdmissionSample> samples;
    for (int i = 0; i < 300; ++i) {
      AdmissionSample s;
      s.admission_id = "adm" + std::to_string(20000 + i);
      s.label = 20.0 + 80.0 * rng.uniform();
      s.feature = {static_cast<float>(s.label / 100.0),
                   static_cast<float>(rng.normal())};
      samples.push_back(std::move(s));
    }
    HeadConfig cfg;
    cfg.seed = 8;
    const CvResult result =
        cross_validate(samples, TaskKind::kRegression, cfg);

    // Exact baseline identity, recomputed from the fold plan.
    std::vector<AdmissionSample> sorted = samples;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
      return a.admission_id < b.admission_id;
    });
    std::vector<double> labels;
    for (const auto& s : sorted) labels.push_back(s.label);
    const FoldPlan plan =
        stratified_folds(labels, TaskKind::kRegression, 5, cfg.seed);
    for (size_t f = 0; f < plan.folds.size(); ++f) {
      std::vector<bool> in_test(sorted.size(), false);
      for (int idx : plan.folds[f]) in_test[static_cast<size_t>(idx)] = true;
      double train_sum = 0.0, train_n = 0.0;
      for (size_t i = 0; i < sorted.size(); ++i) {
        if (!in_test[i]) {
          train_sum += sorted[i].label;
          train_n += 1.0;
        }
      }
      const double train_mean = train_sum / train_n;
      double dev = 0.0, test_n = 0.0;
      for (size_t i = 0; i < sorted.size(); ++i) {
        if (in_test[i]) {
          dev += std::abs(sorted[i].label - train_mean);
          test_n += 1.0;
        }
      }
      c.require(result.folds[f].secondary == dev / test_n,
                "fold " + std::to_string(f) + " baseline not exact");
    }

    c.require(result.mean.primary <= 0.5 * result.mean.secondary,
              "head MAE " + std::to_string(result.mean.primary) +
                  " vs baseline " + std::to_string(result.mean.secondary));
  });

  run_criterion(9, "determinism-and-formats", [&](Criterion& c) {
    c.require(run1.ok && run2.ok, "pipeline runs failed");
    if (!run1.ok || !run2.ok) return;
    for (const char* artifact :
         {"simcse.embd", "tsdae.embd", "hybrid.embd", "cluster_report.tsv",
          "simcse/encoder.ckpt", "tsdae/model.ckpt", "simcse/loss_trace.tsv",
          "tsdae/loss_trace.tsv", "sentences.tsv", "vocab.txt",
          "corpus.tsv"}) {
      c.require(slurp(run1.dir + "/" + artifact) ==
                    slurp(run2.dir + "/" + artifact),
                std::string(artifact) + " differs between reruns");
    }

    // Bit-exact round trips.
    const EmbeddingStore store = read_store(run1.dir + "/hybrid.embd");
    write_store(store, run1.dir + "/hybrid_copy.embd");
    const EmbeddingStore again = read_store(run1.dir + "/hybrid_copy.embd");
    c.require(store.matrix == again.matrix && store.ids == again.ids,
              "store round trip not bit-exact");

    const Checkpoint ckpt = load_checkpoint(run1.dir + "/simcse/encoder.ckpt");
    save_checkpoint(run1.dir + "/encoder_copy.ckpt", ckpt);
    c.require(slurp(run1.dir + "/simcse/encoder.ckpt") ==
                  slurp(run1.dir + "/encoder_copy.ckpt"),
              "checkpoint round trip not byte-identical");

    // Truncated binary files are rejected without partial results.
    const std::string bytes = slurp(run1.dir + "/hybrid.embd");
    const std::string cut_path = run1.dir + "/cut.embd";
    std::ofstream cut(cut_path, std::ios::binary);
    cut.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 3));
    cut.close();
    bool rejected = false;
    try {
      read_store(cut_path);
    } catch (const FormatError&) {
      rejected = true;
    }
    c.require(rejected, "truncated store accepted");

    const std::string ckpt_bytes = slurp(run1.dir + "/simcse/encoder.ckpt");
    const std::string cut_ckpt = run1.dir + "/cut.ckpt";
    std::ofstream cut2(cut_ckpt, std::ios::binary);
    cut2.write(ckpt_bytes.data(),
               static_cast<std::streamsize>(ckpt_bytes.size() - 3));
    cut2.close();
    rejected = false;
    try {
      load_checkpoint(cut_ckpt);
    } catch (const FormatError&) {
      rejected = true;
    }
    c.require(rejected, "truncated checkpoint accepted");
  });

  run_criterion(10, "preprocessing-contract", [&](Criterion& c) {
    const std::string data_dir = TEST_DATA_DIR;
    const auto docs = read_documents(data_dir + "/golden_docs.tsv");
    c.require(docs.size() == 50, "golden corpus has " +
                                     std::to_string(docs.size()) + " docs");

    std::vector<SentenceRecord> records;
    for (const auto& doc : docs) {
      auto recs = preprocess_document(doc);
      records.insert(records.end(), recs.begin(), recs.end());
    }
    for (const auto& rec : records) {
      c.require(rec.word_count >= 5 && count_words(rec.text) >= 5,
                "short sentence in '" + rec.record_id() + "'");
      c.require(rec.text.find('=') == std::string::npos &&
                    rec.text.find('_') == std::string::npos &&
                    rec.text.find('\n') == std::string::npos,
                "masking or line break in '" + rec.record_id() + "'");
    }

    // Frozen golden output.
    const auto golden = read_records(data_dir + "/golden_records.tsv");
    c.require(golden.size() == records.size(),
              "record count " + std::to_string(records.size()) + " vs golden " +
                  std::to_string(golden.size()));
    for (size_t i = 0; i < std::min(golden.size(), records.size()); ++i) {
      c.require(golden[i].doc_id == records[i].doc_id &&
                    golden[i].index == records[i].index &&
                    golden[i].text == records[i].text &&
                    golden[i].word_count == records[i].word_count,
                "mismatch at golden row " + std::to_string(i));
    }

    // Anchor segmentations, asserted independently of the frozen file.
    const auto abbrev = segment_sentences(
        "Dr. Smith saw the patient today. BP remained stable throughout.");
    c.require(abbrev.size() == 2 &&
                  abbrev[0].find("Dr. Smith") != std::string::npos,
              "abbreviation anchor");
    const auto numeric = segment_sentences("leukocytosis to 21.7, CT abdomen");
    c.require(numeric.size() == 1, "numeric-period anchor");
  });

  std::printf("%s (%d criterion failure%s)\n",
              g_failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED",
              g_failures, g_failures == 1 ? "" : "s");
  return g_failures == 0 ? 0 : 1;
}
