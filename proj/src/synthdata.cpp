#include "cst/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cst/error.hpp"

namespace cst {

DemandKind parse_demand_kind(const std::string& name) {
  if (name == "D1") return DemandKind::D1;
  if (name == "D2") return DemandKind::D2;
  if (name == "D3") return DemandKind::D3;
  if (name == "D4") return DemandKind::D4;
  if (name == "D5") return DemandKind::D5;
  throw ConfigError("unknown demand kind '" + name + "'");
}

std::string to_string(DemandKind kind) { return "D" + std::to_string(static_cast<int>(kind) + 1); }

DemandSpec make_demand_spec(DemandKind kind, Prng& rng, HForm h_form) {
  DemandSpec spec;
  spec.kind = kind;
  spec.h_form = h_form;
  for (auto* coeffs : {&spec.coeff_a, &spec.coeff_b, &spec.coeff_c}) {
    coeffs->resize(spec.feature_dim);
    for (double& v : *coeffs) v = rng.uniform();
  }
  return spec;
}

double h_value(std::span<const double> x, const DemandSpec& spec) {
  if (x.size() < spec.feature_dim) throw ConfigError("h_value: feature vector too short");
  double scale = 0.0;
  for (double a : spec.coeff_a) scale += a;
  double dist = 0.0;
  for (std::size_t j = 0; j < spec.feature_dim; ++j) dist += spec.coeff_b[j] * std::abs(x[j] - spec.coeff_c[j]);
  const double h = scale * std::exp(spec.h_form == HForm::Decaying ? -dist : dist);
  return std::clamp(h, -spec.logit_cap, spec.logit_cap);
}

double stepwise1(double x) {
  if (x <= 0.1) return 0.7;
  if (x <= 0.3) return 0.5;
  if (x <= 0.6) return 0.3;
  return 0.1;
}

double stepwise2(double x, double y) {
  const bool high = y > 0.5;
  if (x <= 0.1) return high ? 0.65 : 0.45;
  if (x <= 0.3) return high ? 0.55 : 0.35;
  if (x <= 0.6) return high ? 0.45 : 0.25;
  return high ? 0.35 : 0.15;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double demand_prob(const DemandSpec& spec, std::span<const double> x, double price) {
  switch (spec.kind) {
    case DemandKind::D1:
      return sigmoid(h_value(x, spec) - 2.0 * x[0] * price);
    case DemandKind::D2:
      return sigmoid(5.0 * (x[0] - 0.5) - 0.4 * price);
    case DemandKind::D3:
      return sigmoid(h_value(x, spec) - stepwise1(x[0]) * price);
    case DemandKind::D4:
      return sigmoid(h_value(x, spec) - stepwise2(x[0], x[1]) * price);
    case DemandKind::D5:
      return sigmoid(h_value(x, spec) - (x[0] + x[1]) * price);
  }
  throw ConfigError("demand_prob: unknown demand kind");
}

namespace {

std::vector<double> policy_scores(std::span<const double> x, std::size_t num_actions, bool fold_ten,
                                  const auto& score) {
  const std::size_t span_len = fold_ten ? 2 * num_actions : num_actions;
  if (x.size() < span_len) throw ConfigError("logging policy: feature vector shorter than the policy range");
  std::vector<double> out(num_actions, 0.0);
  for (std::size_t j = 0; j < span_len; ++j) out[j % num_actions] += score(x[j]);
  return out;
}

}  // namespace

std::vector<double> logging_policy_proportional(std::span<const double> x, std::size_t num_actions, bool fold_ten,
                                                bool* fell_back) {
  auto probs = policy_scores(x, num_actions, fold_ten, [](double v) {
    if (v < 0.0) throw ConfigError("proportional logging policy needs nonnegative coordinates");
    return v;
  });
  double total = 0.0;
  for (double p : probs) total += p;
  if (fell_back) *fell_back = total <= 0.0;
  if (total <= 0.0) {
    std::fill(probs.begin(), probs.end(), 1.0 / static_cast<double>(num_actions));
    return probs;
  }
  for (double& p : probs) p /= total;
  return probs;
}

std::vector<double> logging_policy_softmax(std::span<const double> x, std::size_t num_actions, double overlap,
                                           bool fold_ten) {
  if (overlap < 0.0) throw ConfigError("softmax logging policy needs o >= 0");
  const std::size_t span_len = fold_ten ? 2 * num_actions : num_actions;
  if (x.size() < span_len) throw ConfigError("logging policy: feature vector shorter than the policy range");
  double mx = -INFINITY;
  for (std::size_t j = 0; j < span_len; ++j) mx = std::max(mx, overlap * x[j]);
  auto probs = policy_scores(x, num_actions, fold_ten, [&](double v) { return std::exp(overlap * v - mx); });
  double total = 0.0;
  for (double p : probs) total += p;
  for (double& p : probs) p /= total;
  return probs;
}

std::vector<double> LoggingPolicy::probabilities(std::span<const double> x, std::size_t num_actions) const {
  if (kind == Kind::Softmax) return logging_policy_softmax(x, num_actions, overlap, fold_ten);
  return logging_policy_proportional(x, num_actions, fold_ten);
}

BanditDataset sample_bandit_dataset(const DemandSpec& spec, std::size_t n, const LoggingPolicy& policy, Prng& rng) {
  if (n == 0) throw ConfigError("sample_bandit_dataset: n must be positive");
  const std::size_t A = spec.num_prices;
  BanditDataset data;
  data.num_actions = A;
  data.num_classes = 2;
  data.features = Matrix(n, spec.feature_dim);
  data.actions.resize(n);
  data.outcomes.resize(n);
  data.propensities.emplace(n);
  GroundTruth gt{Matrix(n, A), LabelTable(n, A)};
  for (std::size_t i = 0; i < n; ++i) {
    auto x = data.features.row(i);
    for (double& v : x) v = rng.uniform();
    for (std::size_t a = 0; a < A; ++a) {
      const double p = demand_prob(spec, x, price_of_action(a));
      gt.probs(i, a) = p;
      gt.labels(i, a) = rng.bernoulli(p) ? 1 : 0;
    }
    const auto pi = policy.probabilities(x, A);
    const std::size_t a = rng.categorical(pi);
    data.actions[i] = static_cast<std::uint32_t>(a);
    data.outcomes[i] = gt.labels(i, a);
    (*data.propensities)[i] = pi[a];
  }
  data.ground_truth = std::move(gt);
  return data;
}

TwoMoons two_moons(std::size_t n, double noise, Prng& rng) {
  if (n == 0) throw ConfigError("two_moons: n must be positive");
  TwoMoons m;
  m.points = Matrix(n, 2);
  m.type.resize(n);
  const std::size_t upper = n - n / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = rng.uniform(0.0, std::numbers::pi);
    const bool lower = i >= upper;
    double x = lower ? 1.0 - std::cos(t) : std::cos(t);
    double y = lower ? 0.5 - std::sin(t) : std::sin(t);
    if (noise > 0.0) {
      x += rng.normal(0.0, noise);
      y += rng.normal(0.0, noise);
    }
    m.points(i, 0) = x;
    m.points(i, 1) = y;
    m.type[i] = lower ? 1 : 0;
  }
  return m;
}

GroundTruth toy_ground_truth(const TwoMoons& moons) {
  const std::size_t n = moons.type.size();
  GroundTruth gt{Matrix(n, 2), LabelTable(n, 2)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t buys_under = moons.type[i];  // P0 buys under A0, P1 under A1
    for (std::uint32_t a = 0; a < 2; ++a) {
      gt.labels(i, a) = a == buys_under ? 1 : 0;
      gt.probs(i, a) = a == buys_under ? 1.0 : 0.0;
    }
  }
  return gt;
}

BanditDataset toy_bandit(const TwoMoons& moons, Prng& rng) {
  const std::size_t n = moons.type.size();
  BanditDataset data;
  data.features = moons.points;
  data.num_actions = 2;
  data.num_classes = 2;
  data.actions.resize(n);
  data.outcomes.resize(n);
  data.propensities.emplace(n);
  data.ground_truth = toy_ground_truth(moons);
  double min_x0 = INFINITY;
  for (std::size_t i = 0; i < n; ++i) min_x0 = std::min(min_x0, moons.points(i, 0));
  for (std::size_t i = 0; i < n; ++i) {
    const double p_a1 = std::exp(-(moons.points(i, 0) - min_x0));
    const std::uint32_t a = rng.bernoulli(p_a1) ? 1 : 0;
    data.actions[i] = a;
    data.outcomes[i] = data.ground_truth->labels(i, a);
    (*data.propensities)[i] = a == 1 ? p_a1 : 1.0 - p_a1;
  }
  return data;
}

}  // namespace cst
