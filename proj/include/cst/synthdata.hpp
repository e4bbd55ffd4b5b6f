#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cst/dataset.hpp"
#include "cst/prng.hpp"

namespace cst {

enum class DemandKind { D1, D2, D3, D4, D5 };

DemandKind parse_demand_kind(const std::string& name);
std::string to_string(DemandKind kind);

// Shape of the feature-dependent intercept h(x).
//   Decaying: (sum_i a_i) * exp(-sum_j b_j |x_j - c_j|)   (default)
//   Growing:  (sum_i a_i) * exp(+sum_j b_j |x_j - c_j|)
// Both are clipped to [-logit_cap, logit_cap].
enum class HForm { Decaying, Growing };

struct DemandSpec {
  DemandKind kind = DemandKind::D1;
  std::vector<double> coeff_a, coeff_b, coeff_c;
  std::size_t feature_dim = 50;
  std::size_t num_prices = 5;  // prices 1..num_prices; action a offers price a + 1
  HForm h_form = HForm::Decaying;
  double logit_cap = 10.0;
};

DemandSpec make_demand_spec(DemandKind kind, Prng& rng, HForm h_form = HForm::Decaying);

double h_value(std::span<const double> x, const DemandSpec& spec);

double stepwise1(double x);
double stepwise2(double x, double y);

double sigmoid(double z);

// P(purchase | x, price).
double demand_prob(const DemandSpec& spec, std::span<const double> x, double price);

inline double price_of_action(std::size_t action) { return static_cast<double>(action + 1); }

/// pi(i|x) proportional to x_i over the first num_actions coordinates. With
/// `fold_ten`, coordinates 0..2*num_actions-1 are used and coordinate
/// j >= num_actions adds its mass to action j - num_actions. Falls back to
/// uniform when the denominator is zero (`fell_back` reports it).
std::vector<double> logging_policy_proportional(std::span<const double> x, std::size_t num_actions, bool fold_ten = false,
                                                bool* fell_back = nullptr);

/// pi(i|x) = softmax(o * x) over the same coordinate range.
std::vector<double> logging_policy_softmax(std::span<const double> x, std::size_t num_actions, double overlap,
                                           bool fold_ten = false);

struct LoggingPolicy {
  enum class Kind { Proportional, Softmax } kind = Kind::Proportional;
  double overlap = 1.0;  // softmax temperature inverse `o`
  bool fold_ten = false;

  std::vector<double> probabilities(std::span<const double> x, std::size_t num_actions) const;
};

BanditDataset sample_bandit_dataset(const DemandSpec& spec, std::size_t n, const LoggingPolicy& policy, Prng& rng);

struct TwoMoons {
  Matrix points;                    // n x 2
  std::vector<std::uint32_t> type;  // 0 = upper moon (P0), 1 = lower moon (P1)
};

/// Upper half circle (cos t, sin t) and the interleaved lower half circle
/// (1 - cos t, 0.5 - sin t), t ~ U(0, pi), plus N(0, noise^2) jitter.
TwoMoons two_moons(std::size_t n, double noise, Prng& rng);

/// Two-action bandit over moon points. A1 is logged with probability
/// exp(-(x0 - min x0)); P0 buys only under A0 and P1 only under A1.
BanditDataset toy_bandit(const TwoMoons& moons, Prng& rng);

/// Deterministic ground-truth table for moon points (no logging).
GroundTruth toy_ground_truth(const TwoMoons& moons);

}  // namespace cst
