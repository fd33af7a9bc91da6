#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "clinembed/corpus.hpp"
#include "clinembed/encoder.hpp"
#include "clinembed/heads.hpp"
#include "clinembed/io.hpp"
#include "clinembed/metrics.hpp"
#include "clinembed/simcse.hpp"
#include "clinembed/store.hpp"
#include "clinembed/synthetic.hpp"
#include "clinembed/tsdae.hpp"

using namespace clinembed;

namespace {

// One writer per output directory. The lock file is removed on scope exit;
// a leftover lock from a crashed run has to be removed by hand.
class DirLock {
 public:
  explicit DirLock(const std::string& dir) {
    std::filesystem::create_directories(dir.empty() ? "." : dir);
    path_ = (dir.empty() ? "." : dir) + "/.clinembed.lock";
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw Error("output directory is locked by another command (remove '" +
                  path_ + "' if stale)");
    }
    ::close(fd);
  }
  ~DirLock() { std::remove(path_.c_str()); }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
};

std::string parent_dir(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  return parent.empty() ? std::string(".") : parent.string();
}

void echo_config(CLI::App* cmd, const std::string& dir) {
  AtomicFile file(dir + "/effective_config.ini");
  file.stream() << cmd->config_to_str(true, false);
  file.commit();
}

std::vector<SentenceRecord> text_records(const std::vector<std::string>& texts,
                                         const std::string& prefix) {
  std::vector<SentenceRecord> records;
  records.reserve(texts.size());
  for (size_t i = 0; i < texts.size(); ++i) {
    SentenceRecord rec;
    rec.doc_id = prefix + std::to_string(i);
    rec.admission_id = rec.doc_id;
    rec.index = 0;
    rec.text = texts[i];
    rec.word_count = count_words(texts[i]);
    records.push_back(std::move(rec));
  }
  return records;
}

// Embeds raw texts with one model, or with two models whose rows are
// concatenated into the hybrid representation.
EmbeddingStore embed_texts(const std::vector<std::string>& texts,
                           const std::string& model_path,
                           const std::string& model2_path,
                           const std::string& vocab_path, bool normalize,
                           const std::string& name) {
  const Vocabulary vocab = Vocabulary::load(vocab_path);
  const auto records = text_records(texts, "t");
  const EncoderModel<float> first = load_encoder(model_path);
  EmbeddingStore store = embed_sentences(first, vocab, records, name);
  if (model2_path.empty()) return store;
  const EncoderModel<float> second = load_encoder(model2_path);
  const EmbeddingStore other =
      embed_sentences(second, vocab, records, name + ".b");
  return concat_embeddings(store, other, normalize);
}

void print_report(const std::string& name, const std::string& metric,
                  double score) {
  std::printf("%s\t%s\t%.2f\n", name.c_str(), metric.c_str(), score);
}

struct EncoderFlags {
  EncoderConfig cfg;

  void attach(CLI::App* cmd) {
    cmd->add_option("--d_model", cfg.d_model, "embedding width")
        ->capture_default_str();
    cmd->add_option("--n_layers", cfg.n_layers, "transformer layers")
        ->capture_default_str();
    cmd->add_option("--n_heads", cfg.n_heads, "attention heads")
        ->capture_default_str();
    cmd->add_option("--d_ffn", cfg.d_ffn, "feed-forward width")
        ->capture_default_str();
    cmd->add_option("--max_seq_len", cfg.max_seq_len, "token window")
        ->capture_default_str();
    cmd->add_option("--dropout_rate", cfg.dropout_rate, "dropout rate")
        ->capture_default_str();
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised clinical sentence embedding pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "key=value configuration file; one [section] per subcommand");

  // gen-synthetic
  auto* gen = app.add_subcommand(
      "gen-synthetic", "generate a topic-labeled synthetic corpus");
  SyntheticConfig gen_cfg;
  std::string gen_out, gen_labels;
  gen->add_option("--out", gen_out, "corpus output file")->required();
  gen->add_option("--labels-out", gen_labels, "topic label sidecar")->required();
  gen->add_option("--sentences", gen_cfg.n_sentences, "sentence count")
      ->capture_default_str();
  gen->add_option("--topics", gen_cfg.n_topics, "topic count")
      ->capture_default_str();
  gen->add_option("--seed", gen_cfg.seed, "rng seed")->capture_default_str();
  gen->callback([&] {
    DirLock lock(parent_dir(gen_out));
    const SyntheticCorpus corpus = generate_synthetic_corpus(gen_cfg);
    write_documents(gen_out, corpus.documents);
    write_labels(gen_labels, corpus.labels);
    std::fprintf(stderr, "wrote %zu documents\n", corpus.documents.size());
  });

  // prep
  auto* prep = app.add_subcommand(
      "prep", "clean, segment, and filter raw documents");
  std::string prep_in, prep_out, prep_vocab, prep_abbrev;
  int prep_min_freq = 2;
  prep->add_option("--in", prep_in, "raw document file")->required();
  prep->add_option("--out", prep_out, "sentence record output")->required();
  prep->add_option("--vocab-out", prep_vocab, "write a vocabulary here");
  prep->add_option("--min-freq", prep_min_freq, "vocabulary frequency floor")
      ->capture_default_str();
  prep->add_option("--abbrev", prep_abbrev,
                   "abbreviation list file (one entry per line)");
  prep->callback([&] {
    DirLock lock(parent_dir(prep_out));
    std::vector<std::string> abbreviations = default_abbreviations();
    if (!prep_abbrev.empty()) {
      std::ifstream in(prep_abbrev);
      if (!in) throw Error("cannot open abbreviations '" + prep_abbrev + "'");
      abbreviations.clear();
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty()) abbreviations.push_back(line);
      }
    }

    std::vector<SentenceRecord> records;
    for (const auto& doc : read_documents(prep_in)) {
      auto recs = preprocess_document(doc, abbreviations);
      records.insert(records.end(), recs.begin(), recs.end());
    }
    std::sort(records.begin(), records.end(),
              [](const SentenceRecord& a, const SentenceRecord& b) {
                if (a.doc_id != b.doc_id) return a.doc_id < b.doc_id;
                return a.index < b.index;
              });
    write_records(prep_out, records);
    if (!prep_vocab.empty()) {
      const Vocabulary vocab = records.empty()
                                   ? Vocabulary()
                                   : Vocabulary::build(records, prep_min_freq);
      vocab.save(prep_vocab);
    }
    std::fprintf(stderr, "kept %zu sentences\n", records.size());
  });

  // train-simcse
  auto* tsim = app.add_subcommand("train-simcse",
                                  "contrastive fine-tuning with dropout views");
  std::string tsim_sentences, tsim_vocab, tsim_dir;
  SimcseConfig tsim_cfg;
  EncoderFlags tsim_enc;
  tsim->add_option("--sentences", tsim_sentences, "sentence record file")
      ->required();
  tsim->add_option("--vocab", tsim_vocab, "vocabulary file")->required();
  tsim->add_option("--out-dir", tsim_dir, "output directory")->required();
  tsim->add_option("--temperature", tsim_cfg.temperature, "InfoNCE temperature")
      ->capture_default_str();
  tsim->add_option("--batch_size", tsim_cfg.batch_size, "sentences per step")
      ->capture_default_str();
  tsim->add_option("--steps", tsim_cfg.steps, "optimizer steps")
      ->capture_default_str();
  tsim->add_option("--lr", tsim_cfg.lr, "Adam learning rate")
      ->capture_default_str();
  tsim->add_option("--seed", tsim_cfg.seed, "global seed")
      ->capture_default_str();
  tsim_enc.attach(tsim);
  tsim->callback([&] {
    DirLock lock(tsim_dir);
    const Vocabulary vocab = Vocabulary::load(tsim_vocab);
    const auto corpus = read_records(tsim_sentences);
    EncoderConfig cfg = tsim_enc.cfg;
    cfg.vocab_size = vocab.size();
    auto model = EncoderModel<float>::init(cfg, tsim_cfg.seed);
    const TrainResult result = train_simcse(model, vocab, corpus, tsim_cfg);
    save_checkpoint(tsim_dir + "/encoder.ckpt", encoder_checkpoint(model));
    write_loss_trace(tsim_dir + "/loss_trace.tsv", result.loss_trace);
    echo_config(tsim, tsim_dir);
    if (!result.loss_trace.empty()) {
      std::fprintf(stderr, "final loss %.4f after %zu steps\n",
                   static_cast<double>(result.loss_trace.back()),
                   result.loss_trace.size());
    }
  });

  // train-tsdae
  auto* ttsd = app.add_subcommand("train-tsdae",
                                  "denoising fine-tuning with word deletion");
  std::string ttsd_sentences, ttsd_vocab, ttsd_dir;
  TsdaeConfig ttsd_cfg;
  EncoderFlags ttsd_enc;
  ttsd->add_option("--sentences", ttsd_sentences, "sentence record file")
      ->required();
  ttsd->add_option("--vocab", ttsd_vocab, "vocabulary file")->required();
  ttsd->add_option("--out-dir", ttsd_dir, "output directory")->required();
  ttsd->add_option("--deletion_ratio", ttsd_cfg.deletion_ratio,
                   "fraction of words deleted")
      ->capture_default_str();
  ttsd->add_option("--batch_size", ttsd_cfg.batch_size, "sentences per step")
      ->capture_default_str();
  ttsd->add_option("--steps", ttsd_cfg.steps, "optimizer steps")
      ->capture_default_str();
  ttsd->add_option("--lr", ttsd_cfg.lr, "Adam learning rate")
      ->capture_default_str();
  ttsd->add_option("--seed", ttsd_cfg.seed, "global seed")
      ->capture_default_str();
  ttsd_enc.attach(ttsd);
  ttsd->callback([&] {
    DirLock lock(ttsd_dir);
    const Vocabulary vocab = Vocabulary::load(ttsd_vocab);
    const auto corpus = read_records(ttsd_sentences);
    EncoderConfig cfg = ttsd_enc.cfg;
    cfg.vocab_size = vocab.size();
    auto encoder = EncoderModel<float>::init(cfg, ttsd_cfg.seed);
    auto decoder = DecoderModel<float>::init(cfg, ttsd_cfg.seed + 1);
    const TrainResult result =
        train_tsdae(encoder, decoder, vocab, corpus, ttsd_cfg);
    save_tsdae_checkpoint(ttsd_dir + "/model.ckpt", encoder, decoder);
    write_loss_trace(ttsd_dir + "/loss_trace.tsv", result.loss_trace);
    echo_config(ttsd, ttsd_dir);
    if (!result.loss_trace.empty()) {
      std::fprintf(stderr, "final loss %.4f after %zu steps\n",
                   static_cast<double>(result.loss_trace.back()),
                   result.loss_trace.size());
    }
  });

  // embed
  auto* embed_cmd = app.add_subcommand("embed",
                                       "embed sentence records into a store");
  std::string embed_model, embed_vocab, embed_in, embed_out, embed_name;
  int embed_batch = 64;
  embed_cmd->add_option("--model", embed_model, "encoder checkpoint")
      ->required();
  embed_cmd->add_option("--vocab", embed_vocab, "vocabulary file")->required();
  embed_cmd->add_option("--sentences", embed_in, "sentence records")
      ->required();
  embed_cmd->add_option("--out", embed_out, "embedding store output")
      ->required();
  embed_cmd->add_option("--name", embed_name,
                        "store name (default: output stem)");
  embed_cmd->add_option("--batch_size", embed_batch, "inference batch size")
      ->capture_default_str();
  embed_cmd->callback([&] {
    DirLock lock(parent_dir(embed_out));
    const Vocabulary vocab = Vocabulary::load(embed_vocab);
    const auto records = read_records(embed_in);
    const EncoderModel<float> model = load_encoder(embed_model);
    const std::string name =
        embed_name.empty() ? std::filesystem::path(embed_out).stem().string()
                           : embed_name;
    const EmbeddingStore store =
        embed_sentences(model, vocab, records, name, embed_batch);
    write_store(store, embed_out);
    std::fprintf(stderr, "embedded %zu records at dim %d\n", store.count(),
                 store.dim);
  });

  // concat
  auto* concat_cmd = app.add_subcommand(
      "concat", "concatenate two aligned stores into a hybrid store");
  std::string concat_a, concat_b, concat_out;
  bool concat_raw = false;
  concat_cmd->add_option("--a", concat_a, "first store")->required();
  concat_cmd->add_option("--b", concat_b, "second store")->required();
  concat_cmd->add_option("--out", concat_out, "hybrid store output")
      ->required();
  concat_cmd->add_flag("--no-normalize", concat_raw,
                       "concatenate raw rows instead of unit-normalized rows");
  concat_cmd->callback([&] {
    DirLock lock(parent_dir(concat_out));
    const EmbeddingStore a = read_store(concat_a);
    const EmbeddingStore b = read_store(concat_b);
    write_store(concat_embeddings(a, b, !concat_raw), concat_out);
  });

  // eval-sts
  auto* ests = app.add_subcommand(
      "eval-sts", "semantic textual similarity scored by Spearman");
  std::string ests_task, ests_model, ests_model2, ests_vocab, ests_report,
      ests_name = "sts";
  bool ests_raw = false;
  ests->add_option("--task", ests_task, "tab-separated pair file")->required();
  ests->add_option("--model", ests_model, "encoder checkpoint")->required();
  ests->add_option("--model2", ests_model2, "second checkpoint for hybrid");
  ests->add_option("--vocab", ests_vocab, "vocabulary file")->required();
  ests->add_option("--report", ests_report, "report output file")->required();
  ests->add_option("--name", ests_name, "task name")->capture_default_str();
  ests->add_flag("--no-normalize", ests_raw, "raw hybrid concatenation");
  ests->callback([&] {
    DirLock lock(parent_dir(ests_report));
    const auto task = read_sts_task(ests_task);
    std::vector<std::string> a_texts, b_texts;
    for (const auto& pair : task) {
      a_texts.push_back(pair.text_a);
      b_texts.push_back(pair.text_b);
    }
    const EmbeddingStore a = embed_texts(a_texts, ests_model, ests_model2,
                                         ests_vocab, !ests_raw, "a");
    const EmbeddingStore b = embed_texts(b_texts, ests_model, ests_model2,
                                         ests_vocab, !ests_raw, "b");
    const double score = sts_evaluate(task, a, b);
    write_report_line(ests_report, ests_name, "spearman", score);
    print_report(ests_name, "spearman", score);
  });

  // eval-cluster
  auto* eclu = app.add_subcommand(
      "eval-cluster", "k-means clustering scored by V-measure");
  std::string eclu_task, eclu_model, eclu_model2, eclu_vocab, eclu_store,
      eclu_labels, eclu_report, eclu_name = "cluster";
  uint64_t eclu_seed = 42;
  int eclu_k = 0, eclu_iters = 300;
  bool eclu_raw = false;
  eclu->add_option("--task", eclu_task, "tab-separated text/label file");
  eclu->add_option("--model", eclu_model, "encoder checkpoint");
  eclu->add_option("--model2", eclu_model2, "second checkpoint for hybrid");
  eclu->add_option("--vocab", eclu_vocab, "vocabulary file");
  eclu->add_option("--store", eclu_store, "embedding store (id-labeled mode)");
  eclu->add_option("--labels", eclu_labels, "record id to label file");
  eclu->add_option("--report", eclu_report, "report output file")->required();
  eclu->add_option("--name", eclu_name, "task name")->capture_default_str();
  eclu->add_option("--k", eclu_k, "cluster count (default: label count)");
  eclu->add_option("--seed", eclu_seed, "k-means seed")->capture_default_str();
  eclu->add_option("--max_iters", eclu_iters, "k-means iteration cap")
      ->capture_default_str();
  eclu->add_flag("--no-normalize", eclu_raw, "raw hybrid concatenation");
  eclu->callback([&] {
    DirLock lock(parent_dir(eclu_report));
    EmbeddingStore store;
    std::vector<std::string> labels;
    if (!eclu_store.empty()) {
      if (eclu_labels.empty()) {
        throw UsageError("eval-cluster: --store requires --labels");
      }
      store = read_store(eclu_store);
      std::map<std::string, std::string> by_id;
      for (const auto& [id, label] : read_labels(eclu_labels)) {
        by_id[id] = label;
      }
      for (const auto& id : store.ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
          throw AlignmentError("eval-cluster: no label for record '" + id +
                               "'");
        }
        labels.push_back(it->second);
      }
    } else if (!eclu_task.empty()) {
      if (eclu_model.empty() || eclu_vocab.empty()) {
        throw UsageError("eval-cluster: --task requires --model and --vocab");
      }
      const auto items = read_cluster_task(eclu_task);
      std::vector<std::string> texts;
      for (const auto& item : items) {
        texts.push_back(item.text);
        labels.push_back(item.label);
      }
      store = embed_texts(texts, eclu_model, eclu_model2, eclu_vocab,
                          !eclu_raw, "cluster");
    } else {
      throw UsageError("eval-cluster: pass either --task or --store");
    }

    const std::vector<int> classes = dense_labels(labels);
    int k = eclu_k;
    if (k <= 0) {
      k = 1 + *std::max_element(classes.begin(), classes.end());
    }
    if (k < 2) {
      throw UsageError("eval-cluster: need at least 2 distinct labels");
    }
    const KmeansResult clusters = kmeans(store, k, eclu_seed, eclu_iters);
    const VMeasureBreakdown breakdown =
        v_measure(classes, clusters.assignment);
    write_report_line(eclu_report, eclu_name, "v_measure",
                      breakdown.v * 100.0);
    print_report(eclu_name, "v_measure", breakdown.v * 100.0);
  });

  // eval-retrieval
  auto* eret = app.add_subcommand(
      "eval-retrieval", "cosine retrieval scored by nDCG@10");
  std::string eret_queries, eret_corpus, eret_qrels, eret_model, eret_model2,
      eret_vocab, eret_report, eret_name = "retrieval";
  bool eret_raw = false;
  eret->add_option("--queries", eret_queries, "query id/text file")
      ->required();
  eret->add_option("--corpus", eret_corpus, "doc id/text file")->required();
  eret->add_option("--qrels", eret_qrels, "relevance judgments")->required();
  eret->add_option("--model", eret_model, "encoder checkpoint")->required();
  eret->add_option("--model2", eret_model2, "second checkpoint for hybrid");
  eret->add_option("--vocab", eret_vocab, "vocabulary file")->required();
  eret->add_option("--report", eret_report, "report output file")->required();
  eret->add_option("--name", eret_name, "task name")->capture_default_str();
  eret->add_flag("--no-normalize", eret_raw, "raw hybrid concatenation");
  eret->callback([&] {
    DirLock lock(parent_dir(eret_report));
    const RetrievalTask task =
        read_retrieval_task(eret_queries, eret_corpus, eret_qrels);
    std::vector<std::string> query_texts, corpus_texts;
    for (const auto& [id, text] : task.queries) {
      (void)id;
      query_texts.push_back(text);
    }
    for (const auto& [id, text] : task.corpus) {
      (void)id;
      corpus_texts.push_back(text);
    }
    EmbeddingStore queries = embed_texts(query_texts, eret_model, eret_model2,
                                         eret_vocab, !eret_raw, "queries");
    EmbeddingStore corpus = embed_texts(corpus_texts, eret_model, eret_model2,
                                        eret_vocab, !eret_raw, "corpus");
    // Retrieval ranks by the task's doc ids.
    for (size_t i = 0; i < corpus.ids.size(); ++i) {
      corpus.ids[i] = task.corpus[i].first;
    }
    const double score = retrieval_evaluate(task, queries, corpus) * 100.0;
    write_report_line(eret_report, eret_name, "ndcg@10", score);
    print_report(eret_name, "ndcg@10", score);
  });

  // cv-predict
  auto* cvp = app.add_subcommand(
      "cv-predict", "stratified cross-validated prediction head");
  std::string cvp_data, cvp_dir;
  HeadConfig cvp_cfg;
  int cvp_folds = 5;
  cvp->add_option("--data", cvp_data, "dataset file")->required();
  cvp->add_option("--out-dir", cvp_dir, "output directory")->required();
  cvp->add_option("--hidden", cvp_cfg.hidden, "hidden layer width")
      ->capture_default_str();
  cvp->add_option("--epochs", cvp_cfg.epochs, "training epochs")
      ->capture_default_str();
  cvp->add_option("--lr", cvp_cfg.lr, "Adam learning rate")
      ->capture_default_str();
  cvp->add_option("--batch_size", cvp_cfg.batch_size, "mini-batch size")
      ->capture_default_str();
  cvp->add_option("--seed", cvp_cfg.seed, "fold and init seed")
      ->capture_default_str();
  cvp->add_option("--folds", cvp_folds, "cross-validation folds")
      ->capture_default_str();
  cvp->callback([&] {
    DirLock lock(cvp_dir);
    const auto [samples, kind] = read_dataset(cvp_data);
    const CvResult result = cross_validate(samples, kind, cvp_cfg, cvp_folds);
    write_cv_results(cvp_dir, result);
    echo_config(cvp, cvp_dir);
    const char* primary = kind == TaskKind::kClassification ? "auroc" : "mae";
    const char* secondary =
        kind == TaskKind::kClassification ? "auprc" : "baseline_mae";
    std::printf("%s\t%.4f +- %.4f\n%s\t%.4f +- %.4f\n", primary,
                result.mean.primary, result.stddev.primary, secondary,
                result.mean.secondary, result.stddev.secondary);
  });

  // export-embeddings
  auto* exp = app.add_subcommand(
      "export-embeddings", "dump a store as id/vector text for visualization");
  std::string exp_store, exp_out;
  exp->add_option("--store", exp_store, "embedding store")->required();
  exp->add_option("--out", exp_out, "tab-separated output")->required();
  exp->callback([&] {
    DirLock lock(parent_dir(exp_out));
    const EmbeddingStore store = read_store(exp_store);
    AtomicFile file(exp_out);
    std::ostream& out = file.stream();
    char buf[48];
    for (size_t i = 0; i < store.count(); ++i) {
      out << store.ids[i];
      for (int j = 0; j < store.dim; ++j) {
        std::snprintf(
            buf, sizeof(buf), "%.9g",
            static_cast<double>(store.row(i)[static_cast<size_t>(j)]));
        out << '\t' << buf;
      }
      out << '\n';
    }
    file.commit();
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: format: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
