#include "cst/eval.hpp"

#include <cmath>
#include <numeric>

#include "cst/error.hpp"

namespace cst {

namespace {

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

void check_table(const Matrix& features, const LabelTable& labels) {
  if (labels.rows() != features.rows()) throw ConfigError("ground truth covers a different number of samples");
  if (labels.cols() == 0) throw ConfigError("ground truth has no actions");
}

}  // namespace

Matrix predict_all_actions(const MlpModel& model, const Matrix& features, std::size_t num_actions) {
  const auto rows = iota_rows(features.rows());
  return predict(model, joint_inputs_all_actions(features, rows, num_actions));
}

double full_nll(const MlpModel& model, const Matrix& features, const LabelTable& labels) {
  check_table(features, labels);
  const std::size_t A = labels.cols();
  const Matrix p = predict_all_actions(model, features, A);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.rows(); ++i)
    for (std::size_t a = 0; a < A; ++a) {
      const std::uint32_t k = labels(i, a);
      if (k >= p.cols()) throw ConfigError("ground-truth class out of range");
      total -= std::log(std::max(p(i * A + a, k), kProbabilityFloor));
    }
  return total / static_cast<double>(labels.rows() * A);
}

double hamming_loss(const MlpModel& model, const Matrix& features, const LabelTable& labels) {
  check_table(features, labels);
  const std::size_t A = labels.cols();
  const Matrix p = predict_all_actions(model, features, A);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < labels.rows(); ++i)
    for (std::size_t a = 0; a < A; ++a) mismatches += argmax(p.row(i * A + a)) != labels(i, a);
  return static_cast<double>(mismatches) / static_cast<double>(labels.rows() * A);
}

double best_action_accuracy(const MlpModel& model, const Matrix& features, const Matrix& truth_probs) {
  if (truth_probs.rows() != features.rows()) throw ConfigError("ground truth covers a different number of samples");
  const std::size_t A = truth_probs.cols();
  const Matrix p = predict_all_actions(model, features, A);
  if (p.cols() < 2) throw ConfigError("best-action accuracy needs a positive outcome class");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth_probs.rows(); ++i) {
    std::size_t chosen = 0;
    for (std::size_t a = 1; a < A; ++a)
      if (p(i * A + a, 1) > p(i * A + chosen, 1)) chosen = a;
    double best = truth_probs(i, 0);
    for (std::size_t a = 1; a < A; ++a) best = std::max(best, truth_probs(i, a));
    hits += truth_probs(i, chosen) == best;
  }
  return static_cast<double>(hits) / static_cast<double>(truth_probs.rows());
}

double factual_nll(const MlpModel& model, const BanditDataset& data) {
  if (data.size() == 0) throw ConfigError("factual_nll on an empty dataset");
  const auto rows = iota_rows(data.size());
  const Matrix p = predict(model, joint_inputs(data.features, rows, data.actions, data.num_actions));
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) total -= std::log(std::max(p(i, data.outcomes[i]), kProbabilityFloor));
  return total / static_cast<double>(data.size());
}

RunMetrics evaluate(const MlpModel& model, const BanditDataset& data) {
  if (!data.ground_truth) throw ConfigError("evaluation needs a ground-truth outcome table");
  const auto& gt = *data.ground_truth;
  return {full_nll(model, data.features, gt.labels), hamming_loss(model, data.features, gt.labels),
          best_action_accuracy(model, data.features, gt.probs)};
}

MetricSummary summarize(std::span<const double> values) {
  if (values.empty()) throw ConfigError("cannot summarize zero runs");
  const double n = static_cast<double>(values.size());
  MetricSummary s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return s;
}

MetricsReport aggregate(std::string dataset, std::string backbone, std::string method, std::string config_hash,
                        std::vector<RunMetrics> per_seed) {
  MetricsReport r{std::move(dataset), std::move(backbone), std::move(method), std::move(config_hash),
                  std::move(per_seed), {}, {}, {}};
  std::vector<double> nll, ham, acc;
  for (const auto& m : r.per_seed) {
    nll.push_back(m.nll);
    ham.push_back(m.hamming);
    acc.push_back(m.best_action_accuracy);
  }
  r.nll = summarize(nll);
  r.hamming = summarize(ham);
  r.best_action_accuracy = summarize(acc);
  return r;
}

}  // namespace cst
