#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "clinembed/tensor.hpp"

namespace clinembed {

enum class TaskKind { kClassification, kRegression };

// One admission: the mean of its note embeddings plus a binary outcome or a
// continuous target.
struct AdmissionSample {
  std::string admission_id;
  std::vector<float> feature;
  double label = 0.0;
};

// Arithmetic mean across note rows.
std::vector<float> aggregate_admission(
    const std::vector<std::vector<float>>& note_embeddings);

struct FoldPlan {
  std::vector<std::vector<int>> folds;  // disjoint index sets covering all
  uint64_t seed = 0;
};

// Classification: per-class seeded shuffle then round-robin, so fold class
// counts differ by at most one. Regression: plain seeded shuffle round-robin.
FoldPlan stratified_folds(const std::vector<double>& labels, TaskKind kind,
                          int k, uint64_t seed);

struct HeadConfig {
  int hidden = 256;
  int epochs = 50;
  float lr = 1e-3f;
  int batch_size = 32;
  uint64_t seed = 0;
};

// One-hidden-layer feed-forward head: rectified-linear hidden layer, sigmoid
// + binary cross entropy for classification, linear + squared error for
// regression.
struct HeadModel {
  TaskKind kind = TaskKind::kClassification;
  Tensor<float> w1, b1, w2, b2;
};

HeadModel train_head(const std::vector<AdmissionSample>& train, TaskKind kind,
                     const HeadConfig& cfg);

// Sigmoid probabilities for classification, raw values for regression.
std::vector<double> head_predict(const HeadModel& model,
                                 const std::vector<AdmissionSample>& samples);

// Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 P(equal), exact.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// Average precision: sum over distinct descending score thresholds of
// (recall step) x (precision at threshold).
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

double mae(const std::vector<double>& predictions,
           const std::vector<double>& targets);

struct FoldMetrics {
  // auroc/auprc for classification, mae/baseline_mae for regression.
  double primary = 0.0;
  double secondary = 0.0;
};

using CurvePoints = std::vector<std::pair<double, double>>;

struct CvResult {
  TaskKind kind = TaskKind::kClassification;
  std::vector<FoldMetrics> folds;
  FoldMetrics mean;
  FoldMetrics stddev;  // sample standard deviation across folds
  std::vector<CurvePoints> roc_curves;  // (fpr, tpr) per fold, classification
  std::vector<CurvePoints> pr_curves;   // (recall, precision) per fold
};

// Each fold serves once as the 20% test split; heads are trained on the
// remaining four folds. Fold membership and metrics depend only on the seed
// and the sample ids, not on input order.
CvResult cross_validate(const std::vector<AdmissionSample>& samples,
                        TaskKind kind, const HeadConfig& cfg, int k = 5);

// Dataset file: header "dim=<d>\ttask=<classification|regression>", then one
// line per sample: admission_id, label, comma-separated floats.
void write_dataset(const std::string& path,
                   const std::vector<AdmissionSample>& samples, TaskKind kind);
std::pair<std::vector<AdmissionSample>, TaskKind> read_dataset(
    const std::string& path);

void write_cv_results(const std::string& dir, const CvResult& result);

}  // namespace clinembed
