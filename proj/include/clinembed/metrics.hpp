#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clinembed/store.hpp"

namespace clinembed {

// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(const std::vector<double>& values);

// Rank Pearson correlation with average ranks for ties. Equals the classic
// 1 - 6*sum(d^2)/(n(n^2-1)) closed form when there are no ties.
double spearman(const std::vector<double>& gold,
                const std::vector<double>& predicted);

struct StsPair {
  std::string text_a;
  std::string text_b;
  double gold_score = 0.0;
};

// Cosine of paired rows (row i of each store embeds pair i's texts), scored
// by Spearman against the gold ratings and scaled to 0-100 for reporting.
double sts_evaluate(const std::vector<StsPair>& task,
                    const EmbeddingStore& store_a,
                    const EmbeddingStore& store_b);

struct KmeansResult {
  std::vector<int> assignment;          // one cluster id per store row
  std::vector<double> centroids;        // k x dim
  std::vector<double> inertia_trace;    // within-cluster SS per Lloyd pass
  int iterations = 0;
};

// k-means++ seeding and Lloyd iterations until the assignment reaches a
// fixpoint or max_iters. Deterministic given the seed.
KmeansResult kmeans(const EmbeddingStore& store, int k, uint64_t seed,
                    int max_iters = 300);

struct VMeasureBreakdown {
  double homogeneity = 0.0;
  double completeness = 0.0;
  double v = 0.0;
};

VMeasureBreakdown v_measure(const std::vector<int>& class_labels,
                            const std::vector<int>& cluster_labels);

// Exact cosine ranking against every corpus row, descending, ties broken by
// ascending doc id. top_k is clamped to the corpus size.
std::vector<std::string> retrieve(std::span<const float> query,
                                  const EmbeddingStore& corpus, int top_k);

// nullopt is the distinguished no-relevant-documents marker (ideal DCG of 0);
// such queries are excluded from task averages.
std::optional<double> ndcg_at_10(
    const std::vector<std::string>& ranked_ids,
    const std::map<std::string, int>& judgments);

struct ClusterItem {
  std::string text;
  std::string label;
};

struct RetrievalTask {
  std::vector<std::pair<std::string, std::string>> queries;  // id, text
  std::vector<std::pair<std::string, std::string>> corpus;   // id, text
  std::map<std::pair<std::string, std::string>, int> judgments;
};

std::vector<StsPair> read_sts_task(const std::string& path);
std::vector<ClusterItem> read_cluster_task(const std::string& path);
RetrievalTask read_retrieval_task(const std::string& queries_path,
                                  const std::string& corpus_path,
                                  const std::string& qrels_path);

// Labels mapped to dense ints in first-appearance order.
std::vector<int> dense_labels(const std::vector<std::string>& labels);

// Mean nDCG@10 over queries with at least one relevant document, in [0, 1].
double retrieval_evaluate(const RetrievalTask& task,
                          const EmbeddingStore& query_store,
                          const EmbeddingStore& corpus_store);

// One report line: name, metric, score on the 0-100 scale with 2 decimals.
void write_report_line(const std::string& path, const std::string& task_name,
                       const std::string& metric, double score_0_100);

}  // namespace clinembed
