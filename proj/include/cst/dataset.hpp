#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "cst/matrix.hpp"

namespace cst {

/// N x |A| table of categorical class indices.
class LabelTable {
 public:
  LabelTable() = default;
  LabelTable(std::size_t rows, std::size_t cols, std::uint32_t fill = 0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::uint32_t& operator()(std::size_t i, std::size_t a) { return data_[i * cols_ + a]; }
  std::uint32_t operator()(std::size_t i, std::size_t a) const { return data_[i * cols_ + a]; }
  std::span<const std::uint32_t> values() const noexcept { return data_; }

  friend bool operator==(const LabelTable&, const LabelTable&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint32_t> data_;
};

/// Full counterfactual outcome table, available for simulated and converted data.
struct GroundTruth {
  Matrix probs;        // P(r = 1 | x_i, a), N x |A|
  LabelTable labels;   // realized outcome for every (i, a), frozen once drawn

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

/// Logged bandit feedback: one (x_i, a_i, r_i) tuple per sample.
struct BanditDataset {
  Matrix features;
  std::vector<std::uint32_t> actions;
  std::vector<std::uint32_t> outcomes;
  std::size_t num_actions = 0;
  std::size_t num_classes = 2;
  std::optional<GroundTruth> ground_truth;
  std::optional<std::vector<double>> propensities;  // logging probability of the chosen action

  std::size_t size() const noexcept { return actions.size(); }
  std::size_t feature_dim() const noexcept { return features.cols(); }

  friend bool operator==(const BanditDataset&, const BanditDataset&) = default;
};

// Throws ConfigError when any structural invariant is violated.
void validate(const BanditDataset& data);

BanditDataset subset(const BanditDataset& data, std::span<const std::size_t> rows);

// Splits sample indices into (train, holdout) with `holdout_fraction` of them held out.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double holdout_fraction,
                                                                            class Prng& rng);

/// Network input rows [x_i, onehot(a)] for the listed samples and actions.
Matrix joint_inputs(const Matrix& features, std::span<const std::size_t> rows, std::span<const std::uint32_t> actions,
                    std::size_t num_actions);

/// Network input rows for every (sample, action) pair, sample-major:
/// row k * |A| + a holds [x_rows[k], onehot(a)].
Matrix joint_inputs_all_actions(const Matrix& features, std::span<const std::size_t> rows, std::size_t num_actions);

Matrix onehot(std::span<const std::uint32_t> classes, std::size_t num_classes);

// Columnar text dump; exact round trip.
void save_dataset(std::ostream& out, const BanditDataset& data);
BanditDataset load_dataset(std::istream& in);

}  // namespace cst
