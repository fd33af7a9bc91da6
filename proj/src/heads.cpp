#include "clinembed/heads.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "clinembed/adam.hpp"
#include "clinembed/encoder.hpp"
#include "clinembed/graph.hpp"
#include "clinembed/io.hpp"
#include "clinembed/metrics.hpp"

namespace clinembed {

std::vector<float> aggregate_admission(
    const std::vector<std::vector<float>>& note_embeddings) {
  if (note_embeddings.empty()) {
    throw InputError("aggregate_admission: admission has no notes");
  }
  const size_t dim = note_embeddings.front().size();
  std::vector<double> acc(dim, 0.0);
  for (const auto& row : note_embeddings) {
    if (row.size() != dim) {
      throw ShapeError("aggregate_admission: note embedding dims disagree, " +
                       std::to_string(row.size()) + " vs " +
                       std::to_string(dim));
    }
    for (size_t j = 0; j < dim; ++j) acc[j] += row[j];
  }
  std::vector<float> out(dim);
  for (size_t j = 0; j < dim; ++j) {
    out[j] = static_cast<float>(acc[j] / note_embeddings.size());
  }
  return out;
}

FoldPlan stratified_folds(const std::vector<double>& labels, TaskKind kind,
                          int k, uint64_t seed) {
  const size_t n = labels.size();
  if (k < 2) {
    throw UsageError("stratified_folds: k must be >= 2");
  }
  if (n < static_cast<size_t>(k)) {
    throw UsageError("stratified_folds: " + std::to_string(n) +
                     " samples for k = " + std::to_string(k));
  }

  std::vector<std::vector<int>> groups;
  if (kind == TaskKind::kClassification) {
    std::vector<int> neg, pos;
    for (size_t i = 0; i < n; ++i) {
      if (labels[i] == 0.0) {
        neg.push_back(static_cast<int>(i));
      } else if (labels[i] == 1.0) {
        pos.push_back(static_cast<int>(i));
      } else {
        throw InputError("stratified_folds: classification label must be 0 "
                         "or 1, got " + std::to_string(labels[i]));
      }
    }
    for (const auto* cls : {&neg, &pos}) {
      if (cls->size() < static_cast<size_t>(k)) {
        throw UsageError("stratified_folds: a class has " +
                         std::to_string(cls->size()) + " members, need >= " +
                         std::to_string(k));
      }
    }
    groups = {std::move(neg), std::move(pos)};
  } else {
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    groups = {std::move(all)};
  }

  FoldPlan plan;
  plan.seed = seed;
  plan.folds.assign(static_cast<size_t>(k), {});
  Rng rng(mix_seed(seed, 0x464f4c44));
  for (auto& group : groups) {
    rng.shuffle(group.begin(), group.end());
    for (size_t j = 0; j < group.size(); ++j) {
      plan.folds[j % static_cast<size_t>(k)].push_back(group[j]);
    }
  }
  for (auto& fold : plan.folds) std::sort(fold.begin(), fold.end());
  return plan;
}

namespace {

int feature_dim(const std::vector<AdmissionSample>& samples) {
  const size_t dim = samples.front().feature.size();
  for (const auto& s : samples) {
    if (s.feature.size() != dim) {
      throw ShapeError("head: feature dims disagree for admission '" +
                       s.admission_id + "'");
    }
    if (!all_finite(s.feature)) {
      throw InputError("head: non-finite feature for admission '" +
                       s.admission_id + "'");
    }
  }
  return static_cast<int>(dim);
}

Tensor<float> feature_matrix(const std::vector<AdmissionSample>& samples,
                             const std::vector<size_t>& rows, int dim) {
  Tensor<float> x({static_cast<int>(rows.size()), dim}, 0.0f);
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& f = samples[rows[i]].feature;
    std::copy(f.begin(), f.end(),
              x.data.begin() + i * static_cast<size_t>(dim));
  }
  return x;
}

struct TargetScaler {
  double mean = 0.0;
  double stddev = 1.0;
};

// Regression targets are standardized for optimization and predictions mapped
// back; Adam's unit-scale steps would otherwise crawl toward large means.
TargetScaler fit_scaler(const std::vector<AdmissionSample>& samples) {
  TargetScaler s;
  double sum = 0.0;
  for (const auto& x : samples) sum += x.label;
  s.mean = sum / samples.size();
  double sq = 0.0;
  for (const auto& x : samples) {
    sq += (x.label - s.mean) * (x.label - s.mean);
  }
  s.stddev = std::sqrt(sq / samples.size());
  if (s.stddev <= 0.0) s.stddev = 1.0;
  return s;
}

}  // namespace

HeadModel train_head(const std::vector<AdmissionSample>& train, TaskKind kind,
                     const HeadConfig& cfg) {
  if (train.empty()) {
    throw UsageError("train_head: empty training set");
  }
  if (cfg.hidden < 1 || cfg.epochs < 0 || cfg.batch_size < 1 ||
      !(cfg.lr > 0.0f)) {
    throw ConfigError("train_head: invalid head configuration");
  }
  const int dim = feature_dim(train);

  TargetScaler scaler;
  if (kind == TaskKind::kRegression) {
    scaler = fit_scaler(train);
  } else {
    for (const auto& s : train) {
      if (s.label != 0.0 && s.label != 1.0) {
        throw InputError("train_head: classification label must be 0 or 1");
      }
    }
  }

  Rng init_rng(mix_seed(cfg.seed, 0x48454144));
  HeadModel model;
  model.kind = kind;
  model.w1 = Tensor<float>::randn(
      {dim, cfg.hidden}, init_rng,
      static_cast<float>(std::sqrt(2.0 / dim)));
  model.b1 = Tensor<float>::zeros({cfg.hidden});
  model.w2 = Tensor<float>::randn(
      {cfg.hidden, 1}, init_rng,
      static_cast<float>(std::sqrt(2.0 / cfg.hidden)));
  model.b2 = Tensor<float>::zeros({1});

  Params<float> params;
  params.add("w1", model.w1);
  params.add("b1", model.b1);
  params.add("w2", model.w2);
  params.add("b2", model.b2);

  Adam<float> adam({cfg.lr});
  Rng data_rng(mix_seed(cfg.seed, 0x48444154));
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    data_rng.shuffle(order.begin(), order.end());
    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end =
          std::min(begin + static_cast<size_t>(cfg.batch_size), order.size());
      std::vector<size_t> rows(order.begin() + begin, order.begin() + end);
      const int nb = static_cast<int>(rows.size());

      std::vector<float> targets(rows.size());
      for (size_t i = 0; i < rows.size(); ++i) {
        const double y = train[rows[i]].label;
        targets[i] = kind == TaskKind::kRegression
                         ? static_cast<float>((y - scaler.mean) / scaler.stddev)
                         : static_cast<float>(y);
      }

      Graph<float> g(0);
      BoundParams<float> w = bind_params(g, params, true);
      auto x = g.constant(feature_matrix(train, rows, dim));
      auto h = g.relu(g.add(g.matmul(x, w["w1"]), w["b1"]));
      auto out = g.reshape(g.add(g.matmul(h, w["w2"]), w["b2"]), {nb});
      auto loss = kind == TaskKind::kClassification
                      ? g.sigmoid_bce(out, targets)
                      : g.mse(out, targets);
      g.backward(loss);

      auto grads = collect_grads(g, w);
      clip_global_norm(grads, 1.0);
      adam.step(params, grads);
    }
  }

  model.w1 = *params.find("w1");
  model.b1 = *params.find("b1");
  model.w2 = *params.find("w2");
  model.b2 = *params.find("b2");
  if (kind == TaskKind::kRegression) {
    // Fold the target scaling into the output layer.
    for (auto& v : model.w2.data) v *= static_cast<float>(scaler.stddev);
    model.b2.data[0] = static_cast<float>(
        static_cast<double>(model.b2.data[0]) * scaler.stddev + scaler.mean);
  }
  return model;
}

std::vector<double> head_predict(const HeadModel& model,
                                 const std::vector<AdmissionSample>& samples) {
  if (samples.empty()) return {};
  const int dim = feature_dim(samples);
  if (dim != model.w1.shape[0]) {
    throw ShapeError("head_predict: feature dim " + std::to_string(dim) +
                     " does not match model input dim " +
                     std::to_string(model.w1.shape[0]));
  }

  std::vector<size_t> rows(samples.size());
  std::iota(rows.begin(), rows.end(), size_t{0});

  Graph<float> g(0);
  Params<float> params;
  params.add("w1", model.w1);
  params.add("b1", model.b1);
  params.add("w2", model.w2);
  params.add("b2", model.b2);
  BoundParams<float> w = bind_params(g, params, false);
  auto x = g.constant(feature_matrix(samples, rows, dim));
  auto h = g.relu(g.add(g.matmul(x, w["w1"]), w["b1"]));
  auto out = g.add(g.matmul(h, w["w2"]), w["b2"]);

  const Tensor<float>& values = g.value(out);
  std::vector<double> predictions(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    double v = values.data[i];
    if (model.kind == TaskKind::kClassification) {
      v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                   : std::exp(v) / (1.0 + std::exp(v));
    }
    predictions[i] = v;
  }
  return predictions;
}

namespace {

void check_binary_scored(const std::vector<double>& scores,
                         const std::vector<int>& labels, const char* what) {
  if (scores.size() != labels.size()) {
    throw UsageError(std::string(what) + ": " + std::to_string(scores.size()) +
                     " scores for " + std::to_string(labels.size()) +
                     " labels");
  }
  if (scores.empty()) {
    throw UsageError(std::string(what) + ": empty input");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) {
      throw InputError(std::string(what) + ": labels must be 0 or 1");
    }
  }
}

}  // namespace

double auroc(const std::vector<double>& scores,
             const std::vector<int>& labels) {
  check_binary_scored(scores, labels, "auroc");
  size_t pos = 0, neg = 0;
  for (int y : labels) (y == 1 ? pos : neg) += 1;
  if (pos == 0 || neg == 0) {
    throw UndefinedMetricError("auroc: needs both classes present");
  }

  // Rank formulation of the Mann-Whitney statistic; average ranks give the
  // half credit for ties.
  const std::vector<double> ranks = average_ranks(scores);
  double rank_sum_pos = 0.0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) rank_sum_pos += ranks[i];
  }
  const double u = rank_sum_pos -
                   static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

namespace {

// Confusion counts swept over distinct descending score thresholds.
struct SweepPoint {
  double threshold;
  size_t tp;
  size_t fp;
};

std::vector<SweepPoint> threshold_sweep(const std::vector<double>& scores,
                                        const std::vector<int>& labels) {
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  std::vector<SweepPoint> sweep;
  size_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    sweep.push_back({threshold, tp, fp});
  }
  return sweep;
}

}  // namespace

double auprc(const std::vector<double>& scores,
             const std::vector<int>& labels) {
  check_binary_scored(scores, labels, "auprc");
  size_t pos = 0;
  for (int y : labels) pos += static_cast<size_t>(y == 1);
  if (pos == 0) {
    throw UndefinedMetricError("auprc: no positive labels");
  }

  double ap = 0.0;
  double prev_recall = 0.0;
  for (const auto& point : threshold_sweep(scores, labels)) {
    const double recall = static_cast<double>(point.tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(point.tp) /
                             static_cast<double>(point.tp + point.fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

double mae(const std::vector<double>& predictions,
           const std::vector<double>& targets) {
  if (predictions.size() != targets.size()) {
    throw UsageError("mae: " + std::to_string(predictions.size()) +
                     " predictions for " + std::to_string(targets.size()) +
                     " targets");
  }
  if (predictions.empty()) {
    throw UsageError("mae: empty input");
  }
  double total = 0.0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    total += std::abs(predictions[i] - targets[i]);
  }
  return total / static_cast<double>(predictions.size());
}

namespace {

CurvePoints roc_curve(const std::vector<double>& scores,
                      const std::vector<int>& labels) {
  size_t pos = 0, neg = 0;
  for (int y : labels) (y == 1 ? pos : neg) += 1;
  CurvePoints points;
  points.emplace_back(0.0, 0.0);
  for (const auto& point : threshold_sweep(scores, labels)) {
    points.emplace_back(static_cast<double>(point.fp) / static_cast<double>(neg),
                        static_cast<double>(point.tp) / static_cast<double>(pos));
  }
  return points;
}

CurvePoints pr_curve(const std::vector<double>& scores,
                     const std::vector<int>& labels) {
  size_t pos = 0;
  for (int y : labels) pos += static_cast<size_t>(y == 1);
  CurvePoints points;
  points.emplace_back(0.0, 1.0);
  for (const auto& point : threshold_sweep(scores, labels)) {
    points.emplace_back(static_cast<double>(point.tp) / static_cast<double>(pos),
                        static_cast<double>(point.tp) /
                            static_cast<double>(point.tp + point.fp));
  }
  return points;
}

}  // namespace

CvResult cross_validate(const std::vector<AdmissionSample>& samples,
                        TaskKind kind, const HeadConfig& cfg, int k) {
  if (samples.empty()) {
    throw UsageError("cross_validate: empty dataset");
  }
  feature_dim(samples);

  // Canonical order by admission id makes folds and metrics independent of
  // the input ordering.
  std::vector<size_t> canonical(samples.size());
  std::iota(canonical.begin(), canonical.end(), size_t{0});
  std::sort(canonical.begin(), canonical.end(), [&](size_t a, size_t b) {
    return samples[a].admission_id < samples[b].admission_id;
  });
  for (size_t i = 1; i < canonical.size(); ++i) {
    if (samples[canonical[i]].admission_id ==
        samples[canonical[i - 1]].admission_id) {
      throw UsageError("cross_validate: duplicate admission id '" +
                       samples[canonical[i]].admission_id + "'");
    }
  }

  std::vector<double> labels(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    labels[i] = samples[canonical[i]].label;
  }
  const FoldPlan plan = stratified_folds(labels, kind, k, cfg.seed);

  CvResult result;
  result.kind = kind;
  for (size_t f = 0; f < plan.folds.size(); ++f) {
    std::vector<bool> in_test(samples.size(), false);
    for (int pos : plan.folds[f]) in_test[static_cast<size_t>(pos)] = true;

    std::vector<AdmissionSample> train, test;
    for (size_t i = 0; i < canonical.size(); ++i) {
      (in_test[i] ? test : train).push_back(samples[canonical[i]]);
    }

    HeadConfig fold_cfg = cfg;
    fold_cfg.seed = mix_seed(cfg.seed, 0xf01d0000u + f);
    const HeadModel model = train_head(train, kind, fold_cfg);
    const std::vector<double> scores = head_predict(model, test);

    FoldMetrics metrics;
    if (kind == TaskKind::kClassification) {
      std::vector<int> test_labels(test.size());
      for (size_t i = 0; i < test.size(); ++i) {
        test_labels[i] = static_cast<int>(test[i].label);
      }
      metrics.primary = auroc(scores, test_labels);
      metrics.secondary = auprc(scores, test_labels);
      result.roc_curves.push_back(roc_curve(scores, test_labels));
      result.pr_curves.push_back(pr_curve(scores, test_labels));
    } else {
      std::vector<double> targets(test.size());
      for (size_t i = 0; i < test.size(); ++i) targets[i] = test[i].label;
      metrics.primary = mae(scores, targets);

      double train_mean = 0.0;
      for (const auto& s : train) train_mean += s.label;
      train_mean /= static_cast<double>(train.size());
      const std::vector<double> baseline(test.size(), train_mean);
      metrics.secondary = mae(baseline, targets);
    }
    result.folds.push_back(metrics);
  }

  const double count = static_cast<double>(result.folds.size());
  for (const auto& m : result.folds) {
    result.mean.primary += m.primary / count;
    result.mean.secondary += m.secondary / count;
  }
  if (result.folds.size() > 1) {
    double sq_p = 0.0, sq_s = 0.0;
    for (const auto& m : result.folds) {
      sq_p += (m.primary - result.mean.primary) * (m.primary - result.mean.primary);
      sq_s += (m.secondary - result.mean.secondary) *
              (m.secondary - result.mean.secondary);
    }
    result.stddev.primary = std::sqrt(sq_p / (count - 1.0));
    result.stddev.secondary = std::sqrt(sq_s / (count - 1.0));
  }
  return result;
}

void write_dataset(const std::string& path,
                   const std::vector<AdmissionSample>& samples,
                   TaskKind kind) {
  if (samples.empty()) {
    throw UsageError("write_dataset: no samples");
  }
  const int dim = feature_dim(samples);

  AtomicFile file(path);
  std::ostream& out = file.stream();
  out << "dim=" << dim << "\ttask="
      << (kind == TaskKind::kClassification ? "classification" : "regression")
      << '\n';
  char buf[48];
  for (const auto& s : samples) {
    out << s.admission_id << '\t';
    std::snprintf(buf, sizeof(buf), "%.9g", s.label);
    out << buf << '\t';
    for (size_t j = 0; j < s.feature.size(); ++j) {
      if (j) out << ',';
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(s.feature[j]));
      out << buf;
    }
    out << '\n';
  }
  file.commit();
}

std::pair<std::vector<AdmissionSample>, TaskKind> read_dataset(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open dataset '" + path + "'");
  }
  std::string header;
  if (!std::getline(in, header)) {
    throw FormatError("dataset '" + path + "': missing header");
  }
  int dim = -1;
  TaskKind kind = TaskKind::kClassification;
  {
    std::istringstream hs(header);
    std::string field;
    bool has_dim = false, has_task = false;
    while (std::getline(hs, field, '\t')) {
      if (field.rfind("dim=", 0) == 0) {
        dim = std::stoi(field.substr(4));
        has_dim = true;
      } else if (field.rfind("task=", 0) == 0) {
        const std::string value = field.substr(5);
        if (value == "classification") {
          kind = TaskKind::kClassification;
        } else if (value == "regression") {
          kind = TaskKind::kRegression;
        } else {
          throw FormatError("dataset '" + path + "': unknown task '" + value +
                            "'");
        }
        has_task = true;
      }
    }
    if (!has_dim || !has_task || dim < 1) {
      throw FormatError("dataset '" + path +
                        "': header must carry dim=<n> and task=<kind>");
    }
  }

  std::vector<AdmissionSample> samples;
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string context =
        "dataset '" + path + "' line " + std::to_string(line_no);
    const size_t t1 = line.find('\t');
    const size_t t2 = t1 == std::string::npos ? std::string::npos
                                              : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw FormatError(context + ": expected 3 tab-separated columns");
    }
    AdmissionSample s;
    s.admission_id = line.substr(0, t1);
    try {
      s.label = std::stod(line.substr(t1 + 1, t2 - t1 - 1));
    } catch (const std::exception&) {
      throw FormatError(context + ": bad label");
    }
    std::istringstream fs(line.substr(t2 + 1));
    std::string cell;
    while (std::getline(fs, cell, ',')) {
      try {
        s.feature.push_back(std::stof(cell));
      } catch (const std::exception&) {
        throw FormatError(context + ": bad feature value '" + cell + "'");
      }
    }
    if (static_cast<int>(s.feature.size()) != dim) {
      throw FormatError(context + ": expected " + std::to_string(dim) +
                        " features, got " + std::to_string(s.feature.size()));
    }
    samples.push_back(std::move(s));
  }
  return {std::move(samples), kind};
}

void write_cv_results(const std::string& dir, const CvResult& result) {
  const bool cls = result.kind == TaskKind::kClassification;
  {
    AtomicFile file(dir + "/results.tsv");
    std::ostream& out = file.stream();
    out << "fold\t" << (cls ? "auroc\tauprc" : "mae\tbaseline_mae") << '\n';
    char buf[48];
    auto emit = [&](const std::string& name, const FoldMetrics& m) {
      out << name;
      std::snprintf(buf, sizeof(buf), "%.6f", m.primary);
      out << '\t' << buf;
      std::snprintf(buf, sizeof(buf), "%.6f", m.secondary);
      out << '\t' << buf << '\n';
    };
    for (size_t f = 0; f < result.folds.size(); ++f) {
      emit(std::to_string(f), result.folds[f]);
    }
    emit("mean", result.mean);
    emit("std", result.stddev);
    file.commit();
  }

  auto write_curve = [&](const std::string& path, const CurvePoints& points,
                         const char* xname, const char* yname) {
    AtomicFile file(path);
    std::ostream& out = file.stream();
    out << xname << '\t' << yname << '\n';
    char buf[48];
    for (const auto& [x, y] : points) {
      std::snprintf(buf, sizeof(buf), "%.6f\t%.6f", x, y);
      out << buf << '\n';
    }
    file.commit();
  };
  if (cls) {
    for (size_t f = 0; f < result.roc_curves.size(); ++f) {
      write_curve(dir + "/roc_fold" + std::to_string(f) + ".tsv",
                  result.roc_curves[f], "fpr", "tpr");
      write_curve(dir + "/pr_fold" + std::to_string(f) + ".tsv",
                  result.pr_curves[f], "recall", "precision");
    }
  }
}

}  // namespace clinembed
