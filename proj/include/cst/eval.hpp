#pragma once

#include <span>
#include <string>
#include <vector>

#include "cst/dataset.hpp"
#include "cst/diffnet.hpp"

namespace cst {

// Predicted class distribution for every (sample, action), sample-major N|A| x m.
Matrix predict_all_actions(const MlpModel& model, const Matrix& features, std::size_t num_actions);

/// Mean of -log f(r_{i,a} | x_i, a) over all N|A| cells of the ground-truth table.
double full_nll(const MlpModel& model, const Matrix& features, const LabelTable& labels);

/// Fraction of (i, a) cells whose argmax prediction differs from the truth.
double hamming_loss(const MlpModel& model, const Matrix& features, const LabelTable& labels);

/// Fraction of samples where the action maximizing f(r=1 | x, a) is among the
/// actions maximizing the true P(r=1 | x, a).
double best_action_accuracy(const MlpModel& model, const Matrix& features, const Matrix& truth_probs);

// Mean -log f(r_i | x_i, a_i) over the logged tuples only.
double factual_nll(const MlpModel& model, const BanditDataset& data);

struct RunMetrics {
  double nll = 0.0;
  double hamming = 0.0;
  double best_action_accuracy = 0.0;
};

// Requires ground truth on `data`.
RunMetrics evaluate(const MlpModel& model, const BanditDataset& data);

struct MetricSummary {
  double mean = 0.0;
  double std_error = 0.0;  // sample sd / sqrt(n); 0 for a single value
};

MetricSummary summarize(std::span<const double> values);

struct MetricsReport {
  std::string dataset;
  std::string backbone;
  std::string method;
  std::string config_hash;
  std::vector<RunMetrics> per_seed;
  MetricSummary nll, hamming, best_action_accuracy;
};

MetricsReport aggregate(std::string dataset, std::string backbone, std::string method, std::string config_hash,
                        std::vector<RunMetrics> per_seed);

}  // namespace cst
