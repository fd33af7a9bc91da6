#include "clinembed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "clinembed/io.hpp"
#include "clinembed/rng.hpp"

namespace clinembed {

std::vector<double> average_ranks(const std::vector<double>& values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return values[a] < values[b]; });

  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& gold,
                const std::vector<double>& predicted) {
  if (gold.size() != predicted.size()) {
    throw UsageError("spearman: list lengths disagree, " +
                     std::to_string(gold.size()) + " vs " +
                     std::to_string(predicted.size()));
  }
  const size_t n = gold.size();
  if (n < 2) {
    throw UsageError("spearman: need at least 2 observations");
  }
  auto constant = [](const std::vector<double>& v) {
    for (double x : v) {
      if (x != v[0]) return false;
    }
    return true;
  };
  if (constant(gold) || constant(predicted)) {
    throw UndefinedMetricError(
        "spearman: correlation undefined for constant input");
  }

  const std::vector<double> ra = average_ranks(gold);
  const std::vector<double> rb = average_ranks(predicted);
  const double mean = (static_cast<double>(n) + 1.0) / 2.0;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double da = ra[i] - mean;
    const double db = rb[i] - mean;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  return cov / std::sqrt(va * vb);
}

double sts_evaluate(const std::vector<StsPair>& task,
                    const EmbeddingStore& store_a,
                    const EmbeddingStore& store_b) {
  if (store_a.count() != task.size() || store_b.count() != task.size()) {
    throw AlignmentError("sts_evaluate: task has " +
                         std::to_string(task.size()) + " pairs but stores hold " +
                         std::to_string(store_a.count()) + " and " +
                         std::to_string(store_b.count()) + " embeddings");
  }
  std::vector<double> gold(task.size()), predicted(task.size());
  for (size_t i = 0; i < task.size(); ++i) {
    gold[i] = task[i].gold_score;
    predicted[i] = cosine(store_a.row(i), store_b.row(i));
  }
  return spearman(gold, predicted) * 100.0;
}

namespace {

double squared_distance(const float* row, const double* centroid, int dim) {
  double sq = 0.0;
  for (int j = 0; j < dim; ++j) {
    const double d = static_cast<double>(row[j]) - centroid[j];
    sq += d * d;
  }
  return sq;
}

}  // namespace

KmeansResult kmeans(const EmbeddingStore& store, int k, uint64_t seed,
                    int max_iters) {
  const size_t n = store.count();
  const int dim = store.dim;
  if (k < 1) {
    throw UsageError("kmeans: k must be >= 1");
  }
  if (n < static_cast<size_t>(k)) {
    throw UsageError("kmeans: " + std::to_string(n) + " points for k = " +
                     std::to_string(k));
  }

  Rng rng(mix_seed(seed, 0x6b6d6e73));
  KmeansResult result;
  result.centroids.assign(static_cast<size_t>(k) * dim, 0.0);
  auto centroid = [&](int c) { return result.centroids.data() + static_cast<size_t>(c) * dim; };
  auto set_centroid = [&](int c, size_t row) {
    const float* src = store.matrix.data() + row * static_cast<size_t>(dim);
    double* dst = centroid(c);
    for (int j = 0; j < dim; ++j) dst[j] = static_cast<double>(src[j]);
  };

  // k-means++ seeding: first centroid uniform, the rest D^2-weighted.
  set_centroid(0, rng.uniform_index(n));
  std::vector<double> best_sq(n);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int prev = 0; prev < c; ++prev) {
        best = std::min(best, squared_distance(
                                  store.matrix.data() + i * static_cast<size_t>(dim),
                                  centroid(prev), dim));
      }
      best_sq[i] = best;
      total += best;
    }
    size_t chosen = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      chosen = n - 1;
      for (size_t i = 0; i < n; ++i) {
        acc += best_sq[i];
        if (acc > target) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = rng.uniform_index(n);  // all points coincide with centroids
    }
    set_centroid(c, chosen);
  }

  result.assignment.assign(n, -1);
  std::vector<int> counts(static_cast<size_t>(k), 0);
  for (int iter = 0; iter < max_iters; ++iter) {
    // Assign step; ties go to the lowest cluster index.
    bool changed = false;
    double inertia = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const float* row = store.matrix.data() + i * static_cast<size_t>(dim);
      int best_c = 0;
      double best = squared_distance(row, centroid(0), dim);
      for (int c = 1; c < k; ++c) {
        const double d = squared_distance(row, centroid(c), dim);
        if (d < best) {
          best = d;
          best_c = c;
        }
      }
      if (result.assignment[i] != best_c) {
        result.assignment[i] = best_c;
        changed = true;
      }
      inertia += best;
    }
    result.inertia_trace.push_back(inertia);
    result.iterations = iter + 1;
    if (!changed && iter > 0) break;

    // Update step.
    std::fill(result.centroids.begin(), result.centroids.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (size_t i = 0; i < n; ++i) {
      const int c = result.assignment[i];
      ++counts[static_cast<size_t>(c)];
      const float* row = store.matrix.data() + i * static_cast<size_t>(dim);
      double* dst = centroid(c);
      for (int j = 0; j < dim; ++j) dst[j] += static_cast<double>(row[j]);
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] == 0) continue;
      double* dst = centroid(c);
      for (int j = 0; j < dim; ++j) dst[j] /= counts[static_cast<size_t>(c)];
    }
    // Re-seed any emptied cluster with the point farthest from its centroid.
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] > 0) continue;
      size_t farthest = 0;
      double far_d = -1.0;
      for (size_t i = 0; i < n; ++i) {
        const double d = squared_distance(
            store.matrix.data() + i * static_cast<size_t>(dim),
            centroid(result.assignment[i]), dim);
        if (d > far_d) {
          far_d = d;
          farthest = i;
        }
      }
      set_centroid(c, farthest);
    }
    if (!changed) break;
  }
  return result;
}

namespace {

// Entropy terms from a contingency table, natural log.
struct Contingency {
  std::unordered_map<int, double> class_counts;
  std::unordered_map<int, double> cluster_counts;
  std::map<std::pair<int, int>, double> joint;
  double total = 0.0;
};

double conditional_entropy(
    const std::map<std::pair<int, int>, double>& joint,
    const std::unordered_map<int, double>& given_counts, double total,
    bool condition_on_second) {
  double h = 0.0;
  for (const auto& [key, count] : joint) {
    const int given = condition_on_second ? key.second : key.first;
    const double denom = given_counts.at(given);
    h -= (count / total) * std::log(count / denom);
  }
  return h;
}

double entropy(const std::unordered_map<int, double>& counts, double total) {
  double h = 0.0;
  for (const auto& [label, count] : counts) {
    (void)label;
    h -= (count / total) * std::log(count / total);
  }
  return h;
}

}  // namespace

VMeasureBreakdown v_measure(const std::vector<int>& class_labels,
                            const std::vector<int>& cluster_labels) {
  if (class_labels.size() != cluster_labels.size()) {
    throw UsageError("v_measure: label lists disagree, " +
                     std::to_string(class_labels.size()) + " vs " +
                     std::to_string(cluster_labels.size()));
  }
  if (class_labels.empty()) {
    throw UsageError("v_measure: empty input");
  }

  Contingency table;
  for (size_t i = 0; i < class_labels.size(); ++i) {
    table.class_counts[class_labels[i]] += 1.0;
    table.cluster_counts[cluster_labels[i]] += 1.0;
    table.joint[{class_labels[i], cluster_labels[i]}] += 1.0;
    table.total += 1.0;
  }

  const double h_class = entropy(table.class_counts, table.total);
  const double h_cluster = entropy(table.cluster_counts, table.total);
  // H(class | cluster): condition on the cluster (second) label.
  const double h_class_given_cluster = conditional_entropy(
      table.joint, table.cluster_counts, table.total, true);
  const double h_cluster_given_class = conditional_entropy(
      table.joint, table.class_counts, table.total, false);

  VMeasureBreakdown out;
  out.homogeneity = h_class > 0.0 ? 1.0 - h_class_given_cluster / h_class : 1.0;
  out.completeness =
      h_cluster > 0.0 ? 1.0 - h_cluster_given_class / h_cluster : 1.0;
  const double sum = out.homogeneity + out.completeness;
  out.v = sum > 0.0 ? 2.0 * out.homogeneity * out.completeness / sum : 0.0;
  return out;
}

std::vector<std::string> retrieve(std::span<const float> query,
                                  const EmbeddingStore& corpus, int top_k) {
  if (corpus.count() == 0) {
    throw UsageError("retrieve: empty corpus");
  }
  if (static_cast<int>(query.size()) != corpus.dim) {
    throw ShapeError("retrieve: query dim " + std::to_string(query.size()) +
                     " vs corpus dim " + std::to_string(corpus.dim));
  }
  double qnorm = 0.0;
  for (float v : query) qnorm += static_cast<double>(v) * v;
  if (qnorm <= 0.0) {
    throw NumericError("retrieve: zero-norm query");
  }
  qnorm = std::sqrt(qnorm);

  std::vector<std::pair<double, size_t>> scored(corpus.count());
  for (size_t i = 0; i < corpus.count(); ++i) {
    const auto row = corpus.row(i);
    double dot = 0.0, rnorm = 0.0;
    for (int j = 0; j < corpus.dim; ++j) {
      dot += static_cast<double>(query[static_cast<size_t>(j)]) * row[static_cast<size_t>(j)];
      rnorm += static_cast<double>(row[static_cast<size_t>(j)]) * row[static_cast<size_t>(j)];
    }
    // Zero-norm corpus rows rank below everything real.
    const double sim = rnorm > 0.0
                           ? dot / (qnorm * std::sqrt(rnorm))
                           : -std::numeric_limits<double>::infinity();
    scored[i] = {sim, i};
  }
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return corpus.ids[a.second] < corpus.ids[b.second];
  });

  const size_t limit = std::min<size_t>(
      corpus.count(), top_k > 0 ? static_cast<size_t>(top_k) : corpus.count());
  std::vector<std::string> out;
  out.reserve(limit);
  for (size_t i = 0; i < limit; ++i) out.push_back(corpus.ids[scored[i].second]);
  return out;
}

std::optional<double> ndcg_at_10(
    const std::vector<std::string>& ranked_ids,
    const std::map<std::string, int>& judgments) {
  if (ranked_ids.empty()) {
    throw UsageError("ndcg_at_10: empty ranking");
  }
  for (const auto& [id, rel] : judgments) {
    if (rel < 0) {
      throw InputError("ndcg_at_10: negative relevance for '" + id + "'");
    }
  }

  double dcg = 0.0;
  const size_t depth = std::min<size_t>(10, ranked_ids.size());
  for (size_t i = 0; i < depth; ++i) {
    auto it = judgments.find(ranked_ids[i]);
    const int rel = it == judgments.end() ? 0 : it->second;
    dcg += (std::pow(2.0, rel) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
  }

  std::vector<int> grades;
  grades.reserve(judgments.size());
  for (const auto& [id, rel] : judgments) {
    (void)id;
    grades.push_back(rel);
  }
  std::sort(grades.rbegin(), grades.rend());
  double ideal = 0.0;
  for (size_t i = 0; i < std::min<size_t>(10, grades.size()); ++i) {
    ideal += (std::pow(2.0, grades[i]) - 1.0) /
             std::log2(static_cast<double>(i) + 2.0);
  }
  if (ideal <= 0.0) return std::nullopt;
  return dcg / ideal;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos <= line.size()) {
    size_t tab = line.find('\t', pos);
    if (tab == std::string::npos) tab = line.size();
    out.push_back(line.substr(pos, tab - pos));
    pos = tab + 1;
  }
  return out;
}

std::ifstream open_or_throw(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) {
    throw Error(std::string("cannot open ") + what + " '" + path + "'");
  }
  return in;
}

}  // namespace

std::vector<StsPair> read_sts_task(const std::string& path) {
  std::ifstream in = open_or_throw(path, "sts task");
  std::vector<StsPair> task;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 3) {
      throw FormatError("sts task '" + path + "' line " +
                        std::to_string(line_no) + ": expected 3 columns, got " +
                        std::to_string(cols.size()));
    }
    StsPair pair;
    pair.text_a = cols[0];
    pair.text_b = cols[1];
    try {
      pair.gold_score = std::stod(cols[2]);
    } catch (const std::exception&) {
      throw FormatError("sts task '" + path + "' line " +
                        std::to_string(line_no) + ": bad score '" + cols[2] +
                        "'");
    }
    task.push_back(std::move(pair));
  }
  return task;
}

std::vector<ClusterItem> read_cluster_task(const std::string& path) {
  std::ifstream in = open_or_throw(path, "cluster task");
  std::vector<ClusterItem> items;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 2) {
      throw FormatError("cluster task '" + path + "' line " +
                        std::to_string(line_no) + ": expected 2 columns, got " +
                        std::to_string(cols.size()));
    }
    items.push_back({cols[0], cols[1]});
  }
  return items;
}

RetrievalTask read_retrieval_task(const std::string& queries_path,
                                  const std::string& corpus_path,
                                  const std::string& qrels_path) {
  RetrievalTask task;
  auto read_id_text = [](const std::string& path, const char* what) {
    std::ifstream in = open_or_throw(path, what);
    std::vector<std::pair<std::string, std::string>> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto cols = split_tabs(line);
      if (cols.size() != 2) {
        throw FormatError(std::string(what) + " '" + path + "' line " +
                          std::to_string(line_no) +
                          ": expected 2 columns, got " +
                          std::to_string(cols.size()));
      }
      rows.emplace_back(cols[0], cols[1]);
    }
    return rows;
  };
  task.queries = read_id_text(queries_path, "queries");
  task.corpus = read_id_text(corpus_path, "corpus");

  std::ifstream in = open_or_throw(qrels_path, "qrels");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 3) {
      throw FormatError("qrels '" + qrels_path + "' line " +
                        std::to_string(line_no) + ": expected 3 columns, got " +
                        std::to_string(cols.size()));
    }
    int grade;
    try {
      grade = std::stoi(cols[2]);
    } catch (const std::exception&) {
      throw FormatError("qrels '" + qrels_path + "' line " +
                        std::to_string(line_no) + ": bad grade '" + cols[2] +
                        "'");
    }
    if (grade < 0) {
      throw FormatError("qrels '" + qrels_path + "' line " +
                        std::to_string(line_no) + ": negative grade");
    }
    task.judgments[{cols[0], cols[1]}] = grade;
  }

  // Every judged doc id must exist in the corpus.
  std::map<std::string, bool> corpus_ids;
  for (const auto& [id, text] : task.corpus) {
    (void)text;
    corpus_ids[id] = true;
  }
  for (const auto& [key, grade] : task.judgments) {
    (void)grade;
    if (!corpus_ids.count(key.second)) {
      throw FormatError("qrels '" + qrels_path + "': judged doc '" +
                        key.second + "' not in corpus");
    }
  }
  return task;
}

std::vector<int> dense_labels(const std::vector<std::string>& labels) {
  std::unordered_map<std::string, int> mapping;
  std::vector<int> out;
  out.reserve(labels.size());
  for (const auto& label : labels) {
    auto [it, inserted] =
        mapping.emplace(label, static_cast<int>(mapping.size()));
    (void)inserted;
    out.push_back(it->second);
  }
  return out;
}

double retrieval_evaluate(const RetrievalTask& task,
                          const EmbeddingStore& query_store,
                          const EmbeddingStore& corpus_store) {
  if (query_store.count() != task.queries.size()) {
    throw AlignmentError("retrieval_evaluate: " +
                         std::to_string(task.queries.size()) +
                         " queries but " + std::to_string(query_store.count()) +
                         " query embeddings");
  }
  double total = 0.0;
  size_t counted = 0;
  for (size_t qi = 0; qi < task.queries.size(); ++qi) {
    const std::string& qid = task.queries[qi].first;
    std::map<std::string, int> judgments;
    for (const auto& [key, grade] : task.judgments) {
      if (key.first == qid) judgments[key.second] = grade;
    }
    auto ranked = retrieve(query_store.row(qi), corpus_store, 10);
    auto score = ndcg_at_10(ranked, judgments);
    if (score.has_value()) {
      total += *score;
      ++counted;
    }
  }
  if (counted == 0) {
    throw UndefinedMetricError(
        "retrieval_evaluate: no query has a relevant document");
  }
  return total / static_cast<double>(counted);
}

void write_report_line(const std::string& path, const std::string& task_name,
                       const std::string& metric, double score_0_100) {
  AtomicFile file(path);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", score_0_100);
  file.stream() << task_name << '\t' << metric << '\t' << buf << '\n';
  file.commit();
}

}  // namespace clinembed
