#pragma once

#include <span>
#include <string>
#include <vector>

#include "cst/dataset.hpp"
#include "cst/diffnet.hpp"
#include "cst/prng.hpp"

namespace cst {

struct NetworkShape {
  std::vector<std::size_t> hidden{128, 128};
  double leaky_slope = 0.01;
  double dropout = 0.2;
  std::size_t dropout_from = 0;
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;  // 0 means full batch
  OptimizerKind optimizer = OptimizerKind::Adam;
  AdamConfig adam{};            // learning rate lives here for both optimizers
};

// Network over [x, onehot(a)] with one output per outcome class.
MlpModel make_outcome_model(const BanditDataset& data, const NetworkShape& shape, Prng& rng);

// Consecutive slices of `order` of at most `batch_size` (0 = everything).
std::vector<std::span<const std::size_t>> minibatches(std::span<const std::size_t> order, std::size_t batch_size);

enum class BackboneKind { DM, HSIC, UDM };
BackboneKind parse_backbone_kind(const std::string& name);
std::string to_string(BackboneKind kind);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::DM;
  NetworkShape network{};
  TrainConfig train{};
  double hsic_lambda = 0.01;
  double rbf_sigma = 0.5;
  std::size_t embedding_layer = 1;  // preactivation of this linear layer is the embedding z
  double propensity_floor = 0.01;
  TrainConfig propensity_train{.epochs = 200, .batch_size = 0, .adam = {.learning_rate = 0.05}};
};

struct BackboneResult {
  MlpModel model;
  std::vector<double> epoch_losses;  // mean minibatch objective per epoch
  std::size_t propensity_clamps = 0;
};

BackboneResult train_dm(const BanditDataset& data, const BackboneConfig& config, Prng& rng);

double rbf_kernel(std::span<const double> u, std::span<const double> v, double sigma);

/// Biased HSIC estimator between action one-hots and embeddings, RBF kernels of
/// width sigma on both sides:
///   (1/N^2) sum_ij k_ij l_ij + (1/N^4) sum_ij k_ij sum_kl l_kl - (2/N^3) sum_i (sum_j k_ij)(sum_k l_ik)
double hsic_n(const Matrix& action_onehots, const Matrix& embeddings, double sigma);

struct HsicGradient {
  double value = 0.0;
  Matrix dembeddings;
};
HsicGradient hsic_n_with_grad(const Matrix& action_onehots, const Matrix& embeddings, double sigma);

BackboneResult train_hsic(const BanditDataset& data, const BackboneConfig& config, Prng& rng);

/// Multinomial logistic model of the logging policy, pi_hat(a | x).
struct PropensityModel {
  MlpModel linear;  // {d, |A|}
  double floor = 0.01;

  Matrix probabilities(const Matrix& features) const;
  // 1 / max(pi_hat(a_i | x_i), floor); `clamps` counts floored samples.
  std::vector<double> inverse_weights(const BanditDataset& data, std::size_t* clamps = nullptr) const;
};

PropensityModel fit_propensity(const BanditDataset& data, const TrainConfig& config, double floor, Prng& rng);

BackboneResult train_udm(const BanditDataset& data, const PropensityModel& propensity, const BackboneConfig& config,
                         Prng& rng);

// Dispatches on config.kind; UDM fits its propensity model first.
BackboneResult train_backbone(const BanditDataset& data, const BackboneConfig& config, Prng& rng);

/// Factual cross-entropy trainer shared by the three backbones. `weights`
/// may be empty (all ones).
BackboneResult train_factual(const BanditDataset& data, std::span<const double> weights, const BackboneConfig& config,
                             bool use_hsic, Prng& rng);

}  // namespace cst
