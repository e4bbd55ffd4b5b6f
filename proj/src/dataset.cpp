#include "cst/dataset.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "cst/diffnet.hpp"
#include "cst/error.hpp"
#include "cst/prng.hpp"

namespace cst {

void validate(const BanditDataset& data) {
  const std::size_t n = data.size();
  if (data.features.rows() != n || data.outcomes.size() != n)
    throw ConfigError("dataset: features, actions and outcomes disagree on sample count");
  if (data.num_actions == 0 || data.num_classes < 2) throw ConfigError("dataset: needs >= 1 action and >= 2 classes");
  for (std::size_t i = 0; i < n; ++i) {
    if (data.actions[i] >= data.num_actions) throw ConfigError("dataset: action index out of range");
    if (data.outcomes[i] >= data.num_classes) throw ConfigError("dataset: outcome index out of range");
  }
  if (data.propensities && data.propensities->size() != n) throw ConfigError("dataset: propensity count mismatch");
  if (const auto& gt = data.ground_truth) {
    if (gt->labels.rows() != n || gt->labels.cols() != data.num_actions || gt->probs.rows() != n ||
        gt->probs.cols() != data.num_actions)
      throw ConfigError("dataset: ground-truth table shape mismatch");
    for (std::size_t i = 0; i < n; ++i)
      if (gt->labels(i, data.actions[i]) != data.outcomes[i])
        throw ConfigError("dataset: factual outcome disagrees with ground truth at sample " + std::to_string(i));
  }
}

BanditDataset subset(const BanditDataset& data, std::span<const std::size_t> rows) {
  BanditDataset out;
  out.features = gather_rows(data.features, rows);
  out.num_actions = data.num_actions;
  out.num_classes = data.num_classes;
  for (std::size_t r : rows) {
    out.actions.push_back(data.actions[r]);
    out.outcomes.push_back(data.outcomes[r]);
  }
  if (data.propensities) {
    out.propensities.emplace();
    for (std::size_t r : rows) out.propensities->push_back((*data.propensities)[r]);
  }
  if (data.ground_truth) {
    GroundTruth gt;
    gt.probs = gather_rows(data.ground_truth->probs, rows);
    gt.labels = LabelTable(rows.size(), data.num_actions);
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (std::size_t a = 0; a < data.num_actions; ++a) gt.labels(k, a) = data.ground_truth->labels(rows[k], a);
    out.ground_truth = std::move(gt);
  }
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double holdout_fraction,
                                                                            Prng& rng) {
  auto perm = rng.permutation(n);
  const auto held = static_cast<std::size_t>(static_cast<double>(n) * holdout_fraction + 0.5);
  std::vector<std::size_t> holdout(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(held));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(held), perm.end());
  std::sort(holdout.begin(), holdout.end());
  std::sort(train.begin(), train.end());
  return {std::move(train), std::move(holdout)};
}

Matrix joint_inputs(const Matrix& features, std::span<const std::size_t> rows, std::span<const std::uint32_t> actions,
                    std::size_t num_actions) {
  const std::size_t d = features.cols();
  Matrix out(rows.size(), d + num_actions);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto src = features.row(rows[k]);
    auto dst = out.row(k);
    std::copy(src.begin(), src.end(), dst.begin());
    dst[d + actions[k]] = 1.0;
  }
  return out;
}

Matrix joint_inputs_all_actions(const Matrix& features, std::span<const std::size_t> rows, std::size_t num_actions) {
  const std::size_t d = features.cols();
  Matrix out(rows.size() * num_actions, d + num_actions);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto src = features.row(rows[k]);
    for (std::size_t a = 0; a < num_actions; ++a) {
      auto dst = out.row(k * num_actions + a);
      std::copy(src.begin(), src.end(), dst.begin());
      dst[d + a] = 1.0;
    }
  }
  return out;
}

Matrix onehot(std::span<const std::uint32_t> classes, std::size_t num_classes) {
  Matrix out(classes.size(), num_classes);
  for (std::size_t i = 0; i < classes.size(); ++i) out(i, classes[i]) = 1.0;
  return out;
}

namespace {

constexpr const char* kDatasetMagic = "cst-dataset";
constexpr int kDatasetVersion = 1;

std::size_t read_header_value(std::istream& in, const char* key, std::size_t& line_no) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(std::string("dataset dump: missing '") + key + "'", line_no + 1);
  ++line_no;
  std::istringstream ls(line);
  std::string got;
  long long v = -1;
  if (!(ls >> got >> v) || got != key || v < 0)
    throw FormatError(std::string("dataset dump: expected '") + key + " <count>'", line_no);
  return static_cast<std::size_t>(v);
}

}  // namespace

void save_dataset(std::ostream& out, const BanditDataset& data) {
  validate(data);
  const std::size_t d = data.feature_dim();
  const std::size_t A = data.num_actions;
  out << kDatasetMagic << ' ' << kDatasetVersion << '\n';
  out << "samples " << data.size() << '\n';
  out << "features " << d << '\n';
  out << "actions " << A << '\n';
  out << "classes " << data.num_classes << '\n';
  out << "propensities " << (data.propensities ? 1 : 0) << '\n';
  out << "ground_truth " << (data.ground_truth ? 1 : 0) << '\n';
  out << "columns action outcome";
  if (data.propensities) out << " propensity";
  for (std::size_t j = 0; j < d; ++j) out << " x" << j;
  if (data.ground_truth) {
    for (std::size_t a = 0; a < A; ++a) out << " p" << a;
    for (std::size_t a = 0; a < A; ++a) out << " y" << a;
  }
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.actions[i] << ' ' << data.outcomes[i];
    if (data.propensities) out << ' ' << format_double((*data.propensities)[i]);
    for (double v : data.features.row(i)) out << ' ' << format_double(v);
    if (data.ground_truth) {
      for (double v : data.ground_truth->probs.row(i)) out << ' ' << format_double(v);
      for (std::size_t a = 0; a < A; ++a) out << ' ' << data.ground_truth->labels(i, a);
    }
    out << '\n';
  }
  out << "end\n";
}

BanditDataset load_dataset(std::istream& in) {
  std::size_t line_no = 0;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset dump: empty input");
  ++line_no;
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    if (!(ls >> magic >> version) || magic != kDatasetMagic) throw FormatError("dataset dump: bad magic", line_no);
    if (version != kDatasetVersion) throw FormatError("dataset dump: unsupported version", line_no);
  }
  const std::size_t n = read_header_value(in, "samples", line_no);
  const std::size_t d = read_header_value(in, "features", line_no);
  const std::size_t A = read_header_value(in, "actions", line_no);
  const std::size_t m = read_header_value(in, "classes", line_no);
  const bool has_prop = read_header_value(in, "propensities", line_no) != 0;
  const bool has_gt = read_header_value(in, "ground_truth", line_no) != 0;
  if (!std::getline(in, line) || line.rfind("columns", 0) != 0) throw FormatError("dataset dump: missing columns", line_no + 1);
  ++line_no;
  const std::size_t expected_cols = 2 + (has_prop ? 1 : 0) + d + (has_gt ? 2 * A : 0);

  BanditDataset data;
  data.num_actions = A;
  data.num_classes = m;
  data.features = Matrix(n, d);
  data.actions.resize(n);
  data.outcomes.resize(n);
  if (has_prop) data.propensities.emplace(n);
  if (has_gt) data.ground_truth = GroundTruth{Matrix(n, A), LabelTable(n, A)};

  std::vector<std::string> tok;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw FormatError("dataset dump: truncated rows", line_no + 1);
    ++line_no;
    tok.clear();
    std::istringstream ls(line);
    for (std::string t; ls >> t;) tok.push_back(std::move(t));
    if (tok.size() != expected_cols)
      throw FormatError("dataset dump: expected " + std::to_string(expected_cols) + " columns, got " +
                            std::to_string(tok.size()),
                        line_no);
    try {
      std::size_t c = 0;
      data.actions[i] = static_cast<std::uint32_t>(std::stoul(tok[c++]));
      data.outcomes[i] = static_cast<std::uint32_t>(std::stoul(tok[c++]));
      if (has_prop) (*data.propensities)[i] = parse_double(tok[c++]);
      for (std::size_t j = 0; j < d; ++j) data.features(i, j) = parse_double(tok[c++]);
      if (has_gt) {
        for (std::size_t a = 0; a < A; ++a) data.ground_truth->probs(i, a) = parse_double(tok[c++]);
        for (std::size_t a = 0; a < A; ++a)
          data.ground_truth->labels(i, a) = static_cast<std::uint32_t>(std::stoul(tok[c++]));
      }
    } catch (const FormatError& e) {
      throw FormatError(e.what(), line_no);
    } catch (const std::exception&) {
      throw FormatError("dataset dump: bad integer field", line_no);
    }
  }
  if (!std::getline(in, line) || line != "end") throw FormatError("dataset dump: missing end marker", line_no + 1);
  validate(data);
  return data;
}

}  // namespace cst
