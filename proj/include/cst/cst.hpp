#pragma once

#include <functional>
#include <vector>

#include "cst/backbones.hpp"
#include "cst/dataset.hpp"
#include "cst/diffnet.hpp"
#include "cst/prng.hpp"

namespace cst {

/// Hard labels for every (sample, action) cell. Factual cells hold the logged
/// outcome and are never touched by imputation.
struct PseudolabelTable {
  LabelTable labels;                  // class index per cell; the one-hot is implicit
  std::vector<std::uint8_t> factual;  // N x |A| row-major, 1 where a = a_i
  std::size_t num_classes = 2;

  bool is_factual(std::size_t i, std::size_t a) const { return factual[i * labels.cols() + a] != 0; }
  Matrix onehots(std::span<const std::size_t> rows) const;  // |rows| * |A| x m, sample-major
  friend bool operator==(const PseudolabelTable&, const PseudolabelTable&) = default;
};

// Table with factual cells filled and counterfactual cells set to class 0.
PseudolabelTable factual_table(const BanditDataset& data);

/// Argmax of the eval-mode prediction for each counterfactual cell (ties to
/// the lowest class). `changed` receives the number of cells that differ from
/// `previous` when given.
PseudolabelTable impute_pseudolabels(const MlpModel& model, const BanditDataset& data,
                                     const PseudolabelTable* previous = nullptr, std::size_t* changed = nullptr);

struct LossAndGrads {
  double value = 0.0;
  Parameters grads;
  // rows.size() x d: gradient with respect to each listed sample's feature row
  // as the model sees it (x_i for the CST term, x_i + z_i for the CVAT term).
  Matrix dinputs;
};

/// Cross-entropy summed over all actions, averaged over the listed samples.
LossAndGrads cst_loss(const MlpModel& model, const BanditDataset& data, const PseudolabelTable& table,
                      std::span<const std::size_t> rows, Mode mode, Prng& rng);
double cst_objective(const MlpModel& model, const BanditDataset& data, const PseudolabelTable& table);

struct CvatConfig {
  double xi = 10.0;
  std::size_t power_iters = 3;
  double epsilon = 1.0;
};

// Rows of independent isotropic-Gaussian unit vectors.
Matrix random_unit_rows(std::size_t n, std::size_t dim, Prng& rng);

/// Row-wise power iteration: d <- normalize(grad(xi * d)), `iters` times.
/// Rows whose gradient norm falls below 1e-12 keep their current direction and
/// are counted in `flat_rows`.
Matrix power_iterate(Matrix d, double xi, std::size_t iters, const std::function<Matrix(const Matrix&)>& grad,
                     std::size_t* flat_rows = nullptr);

/// One adversarial feature perturbation per listed sample, shared by all of its
/// counterfactual actions, with norm epsilon.
Matrix cvat_perturbation(const MlpModel& model, const BanditDataset& data, std::span<const std::size_t> rows,
                         const CvatConfig& config, Prng& rng, std::size_t* flat_rows = nullptr);

/// sum over counterfactual actions of KL[f_snapshot(x, a) || f(x + z, a)], mean
/// over the listed samples. Gradients flow only through the perturbed term.
LossAndGrads cvat_loss_fixed(const MlpModel& model, const MlpModel& snapshot, const BanditDataset& data,
                             std::span<const std::size_t> rows, const Matrix& z_adv, Mode mode, Prng& rng);

LossAndGrads cvat_loss(const MlpModel& model, const BanditDataset& data, std::span<const std::size_t> rows,
                       const CvatConfig& config, Mode mode, Prng& rng);

struct CstConfig {
  std::size_t outer_iterations = 2;
  double lambda_cvat = 0.0;  // 0 gives plain pseudolabelling
  CvatConfig cvat{};
  TrainConfig train{.epochs = 20, .batch_size = 64, .adam = {.learning_rate = 1e-3}};
  std::size_t reimpute_every = 1;  // epochs; 0 imputes only at the start of each outer iteration
  bool frozen_base = false;        // impute from the warm-start model instead of the current one
  bool track_objective = false;    // record full-data objective around every update
  // Called after every outer iteration with its 1-based index.
  std::function<void(std::size_t, const MlpModel&, const PseudolabelTable&)> on_outer_end;
};

struct CstEpochRecord {
  std::size_t outer = 0;
  std::size_t epoch = 0;
  double cst_loss = 0.0;   // mean over minibatches
  double cvat_loss = 0.0;  // mean over minibatches, unweighted
  std::size_t relabelled = 0;
  std::size_t flat_perturbations = 0;
};

struct ObjectiveEvent {
  enum class Kind { Imputation, Step } kind;
  double before = 0.0;
  double after = 0.0;
};

struct CstResult {
  MlpModel model;
  PseudolabelTable table;
  std::vector<CstEpochRecord> history;
  std::vector<ObjectiveEvent> objective;  // only with track_objective
};

CstResult cst_train(const MlpModel& backbone, const BanditDataset& data, const CstConfig& config, Prng& rng);

struct LambdaSelection {
  double lambda = 0.0;
  std::vector<double> validation_nll;  // aligned with the grid
};

/// Trains one model per grid value from the same warm start and random stream
/// and keeps the one with the lowest factual validation NLL (ties to the smaller lambda).
LambdaSelection select_lambda(const MlpModel& backbone, const BanditDataset& train, const BanditDataset& validation,
                              std::span<const double> grid, const CstConfig& config, Prng& rng);

}  // namespace cst
