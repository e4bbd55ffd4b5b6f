#include "cst/cst.hpp"

#include <cmath>
#include <numeric>

#include "cst/error.hpp"
#include "cst/eval.hpp"

namespace cst {

Matrix PseudolabelTable::onehots(std::span<const std::size_t> rows) const {
  const std::size_t A = labels.cols();
  Matrix out(rows.size() * A, num_classes);
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (std::size_t a = 0; a < A; ++a) out(k * A + a, labels(rows[k], a)) = 1.0;
  return out;
}

PseudolabelTable factual_table(const BanditDataset& data) {
  const std::size_t A = data.num_actions;
  PseudolabelTable t{LabelTable(data.size(), A), std::vector<std::uint8_t>(data.size() * A, 0), data.num_classes};
  for (std::size_t i = 0; i < data.size(); ++i) {
    t.labels(i, data.actions[i]) = data.outcomes[i];
    t.factual[i * A + data.actions[i]] = 1;
  }
  return t;
}

PseudolabelTable impute_pseudolabels(const MlpModel& model, const BanditDataset& data, const PseudolabelTable* previous,
                                     std::size_t* changed) {
  PseudolabelTable t = factual_table(data);
  const std::size_t A = data.num_actions;
  const Matrix p = predict_all_actions(model, data.features, A);
  std::size_t diff = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t a = 0; a < A; ++a) {
      if (t.is_factual(i, a)) continue;
      t.labels(i, a) = static_cast<std::uint32_t>(argmax(p.row(i * A + a)));
      if (previous && previous->labels(i, a) != t.labels(i, a)) ++diff;
    }
  if (changed) *changed = diff;
  return t;
}

LossAndGrads cst_loss(const MlpModel& model, const BanditDataset& data, const PseudolabelTable& table,
                      std::span<const std::size_t> rows, Mode mode, Prng& rng) {
  const double A = static_cast<double>(data.num_actions);
  auto trace = forward(model, joint_inputs_all_actions(data.features, rows, data.num_actions), mode, rng);
  auto loss = cross_entropy(trace.probs, table.onehots(rows));
  for (double& g : loss.dlogits.values()) g *= A;
  auto g = backward(model, trace, loss.dlogits);
  Matrix dx(rows.size(), data.feature_dim());
  for (std::size_t r = 0; r < g.inputs.rows(); ++r) {
    auto out = dx.row(r / data.num_actions);
    auto in = g.inputs.row(r);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += in[c];
  }
  return {loss.value * A, std::move(g.params), std::move(dx)};
}

double cst_objective(const MlpModel& model, const BanditDataset& data, const PseudolabelTable& table) {
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const Matrix p = predict(model, joint_inputs_all_actions(data.features, rows, data.num_actions));
  return cross_entropy(p, table.onehots(rows)).value * static_cast<double>(data.num_actions);
}

Matrix random_unit_rows(std::size_t n, std::size_t dim, Prng& rng) {
  Matrix d(n, dim);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = d.row(r);
    double norm = 0.0;
    while (norm < 1e-12) {
      norm = 0.0;
      for (double& v : row) {
        v = rng.normal(0.0, 1.0);
        norm += v * v;
      }
      norm = std::sqrt(norm);
    }
    for (double& v : row) v /= norm;
  }
  return d;
}

Matrix power_iterate(Matrix d, double xi, std::size_t iters, const std::function<Matrix(const Matrix&)>& grad,
                     std::size_t* flat_rows) {
  std::size_t flat = 0;
  for (std::size_t it = 0; it < iters; ++it) {
    Matrix probe = d;
    for (double& v : probe.values()) v *= xi;
    const Matrix g = grad(probe);
    for (std::size_t r = 0; r < d.rows(); ++r) {
      double norm = 0.0;
      for (double v : g.row(r)) norm += v * v;
      norm = std::sqrt(norm);
      if (!(norm >= 1e-12)) {
        ++flat;
        continue;
      }
      auto dr = d.row(r);
      auto gr = g.row(r);
      for (std::size_t c = 0; c < dr.size(); ++c) dr[c] = gr[c] / norm;
    }
  }
  if (flat_rows) *flat_rows = flat;
  return d;
}

namespace {

// Inputs [x_i, onehot(a)] for every a != a_i of the listed samples, with the
// owning position in `rows` for each.
struct CounterfactualRows {
  Matrix inputs;
  std::vector<std::size_t> owner;
};

CounterfactualRows counterfactual_rows(const BanditDataset& data, std::span<const std::size_t> rows) {
  const std::size_t d = data.feature_dim();
  const std::size_t A = data.num_actions;
  CounterfactualRows cf{Matrix(rows.size() * (A - 1), d + A), {}};
  cf.owner.reserve(cf.inputs.rows());
  std::size_t r = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto x = data.features.row(rows[k]);
    for (std::size_t a = 0; a < A; ++a) {
      if (a == data.actions[rows[k]]) continue;
      auto out = cf.inputs.row(r++);
      std::copy(x.begin(), x.end(), out.begin());
      out[d + a] = 1.0;
      cf.owner.push_back(k);
    }
  }
  return cf;
}

Matrix shifted(const CounterfactualRows& cf, const Matrix& z) {
  Matrix x = cf.inputs;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto zr = z.row(cf.owner[r]);
    auto xr = x.row(r);
    for (std::size_t c = 0; c < zr.size(); ++c) xr[c] += zr[c];
  }
  return x;
}

// Sums joint-input gradients over each sample's counterfactual rows, keeping
// only the feature columns.
Matrix fold_features(const CounterfactualRows& cf, const Matrix& gin, std::size_t samples, std::size_t d) {
  Matrix g(samples, d);
  for (std::size_t r = 0; r < gin.rows(); ++r) {
    auto gr = g.row(cf.owner[r]);
    auto ir = gin.row(r);
    for (std::size_t c = 0; c < d; ++c) gr[c] += ir[c];
  }
  return g;
}

}  // namespace

Matrix cvat_perturbation(const MlpModel& model, const BanditDataset& data, std::span<const std::size_t> rows,
                         const CvatConfig& config, Prng& rng, std::size_t* flat_rows) {
  if (!(config.epsilon > 0.0 && config.xi > 0.0)) throw ConfigError("CVAT xi and epsilon must be positive");
  const std::size_t d = data.feature_dim();
  Matrix dir = random_unit_rows(rows.size(), d, rng);
  if (data.num_actions > 1) {
    const auto cf = counterfactual_rows(data, rows);
    const Matrix target = predict(model, cf.inputs);
    auto grad = [&](const Matrix& probe) {
      auto trace = forward(model, shifted(cf, probe), Mode::Eval, rng);
      return fold_features(cf, backward(model, trace, kl_divergence(target, trace.probs).dlogits).inputs, rows.size(), d);
    };
    dir = power_iterate(std::move(dir), config.xi, config.power_iters, grad, flat_rows);
  } else if (flat_rows) {
    *flat_rows = 0;
  }
  for (double& v : dir.values()) v *= config.epsilon;
  return dir;
}

LossAndGrads cvat_loss_fixed(const MlpModel& model, const MlpModel& snapshot, const BanditDataset& data,
                             std::span<const std::size_t> rows, const Matrix& z_adv, Mode mode, Prng& rng) {
  if (z_adv.rows() != rows.size() || z_adv.cols() != data.feature_dim())
    throw ConfigError("one perturbation per sample expected");
  if (data.num_actions < 2 || rows.empty())
    return {0.0, zeros_like(model.params), Matrix(rows.size(), data.feature_dim())};
  const double cf_per_sample = static_cast<double>(data.num_actions - 1);
  const auto cf = counterfactual_rows(data, rows);
  const Matrix target = predict(snapshot, cf.inputs);
  auto trace = forward(model, shifted(cf, z_adv), mode, rng);
  auto kl = kl_divergence(target, trace.probs);
  for (double& g : kl.dlogits.values()) g *= cf_per_sample;
  auto g = backward(model, trace, kl.dlogits);
  return {kl.value * cf_per_sample, std::move(g.params), fold_features(cf, g.inputs, rows.size(), data.feature_dim())};
}

LossAndGrads cvat_loss(const MlpModel& model, const BanditDataset& data, std::span<const std::size_t> rows,
                       const CvatConfig& config, Mode mode, Prng& rng) {
  const Matrix z = cvat_perturbation(model, data, rows, config, rng);
  return cvat_loss_fixed(model, model, data, rows, z, mode, rng);
}

CstResult cst_train(const MlpModel& backbone, const BanditDataset& data, const CstConfig& config, Prng& rng) {
  validate(backbone);
  if (config.lambda_cvat < 0.0) throw ConfigError("lambda_cvat must be nonnegative");
  if (data.size() == 0) throw ConfigError("cannot self-train on an empty dataset");
  CstResult res{backbone, factual_table(data), {}, {}};
  if (config.outer_iterations == 0) return res;

  Optimizer opt(config.train.optimizer, res.model.params, config.train.adam);
  // CVAT draws from its own stream so that batches and dropout match plain pseudolabelling.
  Prng cvat_rng = rng.split(0xC7A7);
  double tracked = config.track_objective ? cst_objective(res.model, data, res.table) : 0.0;

  auto reimpute = [&](CstEpochRecord& rec) {
    const MlpModel& source = config.frozen_base ? backbone : res.model;
    auto next = impute_pseudolabels(source, data, &res.table, &rec.relabelled);
    if (config.track_objective) {
      const double after = cst_objective(res.model, data, next);
      res.objective.push_back({ObjectiveEvent::Kind::Imputation, tracked, after});
      tracked = after;
    }
    res.table = std::move(next);
  };

  for (std::size_t outer = 0; outer < config.outer_iterations; ++outer) {
    for (std::size_t epoch = 0; epoch < config.train.epochs; ++epoch) {
      CstEpochRecord rec{outer, epoch, 0.0, 0.0, 0, 0};
      if (epoch == 0 || (config.reimpute_every > 0 && epoch % config.reimpute_every == 0)) reimpute(rec);
      const auto order = rng.permutation(data.size());
      const auto batches = minibatches(order, config.train.batch_size);
      for (auto batch : batches) {
        auto step = cst_loss(res.model, data, res.table, batch, Mode::Train, rng);
        double total = step.value;
        rec.cst_loss += step.value;
        if (config.lambda_cvat > 0.0) {
          std::size_t flat = 0;
          const Matrix z = cvat_perturbation(res.model, data, batch, config.cvat, cvat_rng, &flat);
          auto reg = cvat_loss_fixed(res.model, res.model, data, batch, z, Mode::Train, cvat_rng);
          axpy(step.grads, config.lambda_cvat, reg.grads);
          total += config.lambda_cvat * reg.value;
          rec.cvat_loss += reg.value;
          rec.flat_perturbations += flat;
        }
        if (!std::isfinite(total))
          throw NumericError("self-training diverged (non-finite loss at outer iteration " + std::to_string(outer) +
                             ", epoch " + std::to_string(epoch) + "); try a smaller learning rate");
        opt.step(res.model.params, step.grads);
        if (config.track_objective) {
          const double after = cst_objective(res.model, data, res.table);
          res.objective.push_back({ObjectiveEvent::Kind::Step, tracked, after});
          tracked = after;
        }
      }
      rec.cst_loss /= static_cast<double>(batches.size());
      rec.cvat_loss /= static_cast<double>(batches.size());
      res.history.push_back(rec);
    }
    if (config.on_outer_end) config.on_outer_end(outer + 1, res.model, res.table);
  }
  return res;
}

LambdaSelection select_lambda(const MlpModel& backbone, const BanditDataset& train, const BanditDataset& validation,
                              std::span<const double> grid, const CstConfig& config, Prng& rng) {
  if (grid.empty()) throw ConfigError("lambda grid is empty");
  LambdaSelection sel;
  std::size_t best = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    CstConfig c = config;
    c.lambda_cvat = grid[g];
    Prng stream = rng.split(0x1a3bda);
    const auto fit = cst_train(backbone, train, c, stream);
    sel.validation_nll.push_back(factual_nll(fit.model, validation));
    const double v = sel.validation_nll.back();
    const double incumbent = sel.validation_nll[best];
    if (v < incumbent || (v == incumbent && grid[g] < grid[best])) best = g;
  }
  sel.lambda = grid[best];
  return sel;
}

}  // namespace cst
