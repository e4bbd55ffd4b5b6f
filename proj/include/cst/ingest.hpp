#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "cst/dataset.hpp"
#include "cst/diffnet.hpp"
#include "cst/prng.hpp"

namespace cst {

struct MultiLabelDataset {
  Matrix features;                                   // N x d, densified
  std::vector<std::vector<std::uint32_t>> label_sets;  // sorted, unique
  std::size_t num_labels = 0;

  std::size_t size() const noexcept { return label_sets.size(); }
  friend bool operator==(const MultiLabelDataset&, const MultiLabelDataset&) = default;
};

enum class IndexBase { Auto, Zero, One };

struct LibsvmOptions {
  std::size_t num_features = 0;  // 0: infer from the largest index
  std::size_t num_labels = 0;    // 0: infer from the largest label
  IndexBase index_base = IndexBase::Auto;
};

struct LibsvmParseResult {
  MultiLabelDataset data;
  IndexBase index_base = IndexBase::One;  // resolved base
  std::size_t max_feature_index = 0;      // as written in the file
};

/// Lines of the form "l1,l2,...  idx:val idx:val ...". A line whose first
/// token already holds a ':' has an empty label set.
LibsvmParseResult parse_libsvm_multilabel(std::istream& in, const LibsvmOptions& options = {});
LibsvmParseResult parse_libsvm_multilabel(std::string_view text, const LibsvmOptions& options = {});
MultiLabelDataset load_libsvm_multilabel(const std::string& path, const LibsvmOptions& options = {});

// Writes 1-based indices; zero features are omitted.
void dump_libsvm_multilabel(std::ostream& out, const MultiLabelDataset& data);

struct LoggingPolicyConfig {
  double fraction = 0.05;
  double temperature = 1.0;
  std::size_t epochs = 200;
  double learning_rate = 0.05;
};

/// Multinomial linear policy over labels: softmax(logits / temperature).
struct LoggingPolicyModel {
  MlpModel linear;  // {d, L}: a (d + 1) x L weight block including the bias row
  double temperature = 1.0;
  std::vector<std::size_t> training_rows;  // subsample the policy was fit on
  bool undersized = false;                 // fewer training rows than labels

  Matrix probabilities(const Matrix& features) const;
};

LoggingPolicyModel fit_logging_policy(const MultiLabelDataset& data, const LoggingPolicyConfig& config, Prng& rng);

/// Logs one action per sample from `policy`; reward is 1 iff the action is
/// one of the sample's labels. The ground-truth table is the label membership.
BanditDataset convert_to_bandit(const MultiLabelDataset& data, const LoggingPolicyModel& policy, Prng& rng);

/// Membership table without logging (used for test files).
GroundTruth membership_table(const MultiLabelDataset& data);

}  // namespace cst
