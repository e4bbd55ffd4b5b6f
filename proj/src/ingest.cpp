#include "cst/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cst/error.hpp"

namespace cst {

namespace {

struct RawRow {
  std::vector<std::uint32_t> labels;
  std::vector<std::pair<std::size_t, double>> entries;
};

std::size_t parse_index(std::string_view s, std::size_t line_no, const char* what) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError(std::string("libsvm: bad ") + what + " '" + std::string(s) + "'", line_no);
  return v;
}

RawRow parse_line(std::string_view line, std::size_t line_no) {
  RawRow row;
  std::vector<std::string_view> tokens;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t' || line[pos] == '\r')) ++pos;
    std::size_t end = pos;
    while (end < line.size() && line[end] != ' ' && line[end] != '\t' && line[end] != '\r') ++end;
    if (end > pos) tokens.push_back(line.substr(pos, end - pos));
    pos = end;
  }
  std::size_t first_feature = 0;
  if (!tokens.empty() && tokens[0].find(':') == std::string_view::npos) {
    first_feature = 1;
    std::string_view labels = tokens[0];
    std::size_t start = 0;
    while (start <= labels.size()) {
      const std::size_t comma = std::min(labels.find(',', start), labels.size());
      const auto piece = labels.substr(start, comma - start);
      if (!piece.empty()) row.labels.push_back(static_cast<std::uint32_t>(parse_index(piece, line_no, "label")));
      start = comma + 1;
    }
  }
  for (std::size_t t = first_feature; t < tokens.size(); ++t) {
    const auto colon = tokens[t].find(':');
    if (colon == std::string_view::npos) throw FormatError("libsvm: expected idx:val, got '" + std::string(tokens[t]) + "'", line_no);
    const std::size_t idx = parse_index(tokens[t].substr(0, colon), line_no, "feature index");
    double val = 0.0;
    try {
      val = parse_double(tokens[t].substr(colon + 1));
    } catch (const FormatError&) {
      throw FormatError("libsvm: bad feature value in '" + std::string(tokens[t]) + "'", line_no);
    }
    row.entries.emplace_back(idx, val);
  }
  std::sort(row.labels.begin(), row.labels.end());
  row.labels.erase(std::unique(row.labels.begin(), row.labels.end()), row.labels.end());
  return row;
}

}  // namespace

LibsvmParseResult parse_libsvm_multilabel(std::istream& in, const LibsvmOptions& options) {
  std::vector<RawRow> rows;
  std::string line;
  std::size_t line_no = 0;
  bool saw_zero_index = false;
  std::size_t max_index = 0;
  std::uint32_t max_label = 0;
  bool any_label = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto row = parse_line(line, line_no);
    for (const auto& [idx, _] : row.entries) {
      saw_zero_index |= idx == 0;
      max_index = std::max(max_index, idx);
    }
    for (auto l : row.labels) {
      max_label = std::max(max_label, l);
      any_label = true;
    }
    rows.push_back(std::move(row));
  }

  LibsvmParseResult result;
  result.max_feature_index = max_index;
  result.index_base = options.index_base;
  if (result.index_base == IndexBase::Auto) result.index_base = saw_zero_index ? IndexBase::Zero : IndexBase::One;
  if (result.index_base == IndexBase::One && saw_zero_index)
    throw FormatError("libsvm: feature index 0 in a 1-based file");
  const std::size_t offset = result.index_base == IndexBase::One ? 1 : 0;
  const std::size_t inferred_d = rows.empty() ? 0 : max_index + 1 - offset;
  const std::size_t d = options.num_features ? options.num_features : inferred_d;
  if (options.num_features && inferred_d > options.num_features)
    throw FormatError("libsvm: feature index " + std::to_string(max_index) + " exceeds declared dimension " +
                      std::to_string(options.num_features));
  const std::size_t L = options.num_labels ? options.num_labels : (any_label ? max_label + 1 : 0);
  if (any_label && max_label >= L)
    throw FormatError("libsvm: label " + std::to_string(max_label) + " exceeds declared label count " + std::to_string(L));

  auto& data = result.data;
  data.num_labels = L;
  data.features = Matrix(rows.size(), d);
  data.label_sets.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (const auto& [idx, val] : rows[i].entries) data.features(i, idx - offset) = val;
    data.label_sets.push_back(std::move(rows[i].labels));
  }
  return result;
}

LibsvmParseResult parse_libsvm_multilabel(std::string_view text, const LibsvmOptions& options) {
  std::istringstream in{std::string(text)};
  return parse_libsvm_multilabel(in, options);
}

MultiLabelDataset load_libsvm_multilabel(const std::string& path, const LibsvmOptions& options) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open LIBSVM file '" + path + "'");
  return parse_libsvm_multilabel(in, options).data;
}

void dump_libsvm_multilabel(std::ostream& out, const MultiLabelDataset& data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& labels = data.label_sets[i];
    for (std::size_t k = 0; k < labels.size(); ++k) out << (k ? "," : "") << labels[k];
    auto row = data.features.row(i);
    for (std::size_t j = 0; j < row.size(); ++j)
      if (row[j] != 0.0) out << ' ' << (j + 1) << ':' << format_double(row[j]);
    out << '\n';
  }
}

Matrix LoggingPolicyModel::probabilities(const Matrix& features) const {
  Prng unused(0);
  auto trace = forward(linear, features, Mode::Eval, unused);
  Matrix scaled = trace.logits();
  for (double& v : scaled.values()) v /= temperature;
  return softmax_rows(scaled);
}

LoggingPolicyModel fit_logging_policy(const MultiLabelDataset& data, const LoggingPolicyConfig& config, Prng& rng) {
  if (!(config.fraction > 0.0 && config.fraction < 1.0)) throw ConfigError("logging policy fraction must be in (0,1)");
  if (!(config.temperature > 0.0)) throw ConfigError("logging policy temperature must be positive");
  if (data.num_labels == 0 || data.size() == 0) throw ConfigError("logging policy needs labelled data");
  LoggingPolicyModel policy;
  policy.temperature = config.temperature;
  policy.linear = make_mlp({data.features.cols(), data.num_labels}, 0.0, 0.0, rng);

  auto perm = rng.permutation(data.size());
  const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(config.fraction * static_cast<double>(data.size()) + 0.5));
  perm.resize(take);
  std::sort(perm.begin(), perm.end());
  policy.training_rows = perm;

  std::vector<std::size_t> rows;
  std::vector<std::uint32_t> targets;
  for (std::size_t r : perm) {
    const auto& labels = data.label_sets[r];
    if (labels.empty()) continue;
    rows.push_back(r);
    targets.push_back(labels[rng.uniform_index(labels.size())]);
  }
  policy.undersized = rows.size() < data.num_labels;
  if (policy.undersized)
    std::clog << "warning: logging policy trained on " << rows.size() << " rows for " << data.num_labels << " labels\n";
  if (rows.empty()) return policy;

  const Matrix x = gather_rows(data.features, rows);
  const Matrix t = onehot(targets, data.num_labels);
  Optimizer opt(OptimizerKind::Adam, policy.linear.params, {.learning_rate = config.learning_rate});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto trace = forward(policy.linear, x, Mode::Train, rng);
    auto loss = cross_entropy(trace.probs, t);
    opt.step(policy.linear.params, backward(policy.linear, trace, loss.dlogits).params);
  }
  return policy;
}

GroundTruth membership_table(const MultiLabelDataset& data) {
  const std::size_t n = data.size();
  const std::size_t L = data.num_labels;
  GroundTruth gt{Matrix(n, L), LabelTable(n, L)};
  for (std::size_t i = 0; i < n; ++i)
    for (auto l : data.label_sets[i]) {
      gt.labels(i, l) = 1;
      gt.probs(i, l) = 1.0;
    }
  return gt;
}

BanditDataset convert_to_bandit(const MultiLabelDataset& data, const LoggingPolicyModel& policy, Prng& rng) {
  if (policy.linear.output_dim() != data.num_labels || policy.linear.input_dim() != data.features.cols())
    throw ConfigError("logging policy does not match the dataset dimensions");
  BanditDataset out;
  out.features = data.features;
  out.num_actions = data.num_labels;
  out.num_classes = 2;
  out.ground_truth = membership_table(data);
  out.propensities.emplace(data.size());
  out.actions.resize(data.size());
  out.outcomes.resize(data.size());
  const Matrix pi = policy.probabilities(data.features);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t a = rng.categorical(pi.row(i));
    out.actions[i] = static_cast<std::uint32_t>(a);
    out.outcomes[i] = out.ground_truth->labels(i, a);
    (*out.propensities)[i] = pi(i, a);
  }
  return out;
}

}  // namespace cst
