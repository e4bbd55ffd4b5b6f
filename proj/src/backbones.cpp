#include "cst/backbones.hpp"

#include <cmath>

#include "cst/error.hpp"

namespace cst {

MlpModel make_outcome_model(const BanditDataset& data, const NetworkShape& shape, Prng& rng) {
  std::vector<std::size_t> dims{data.feature_dim() + data.num_actions};
  dims.insert(dims.end(), shape.hidden.begin(), shape.hidden.end());
  dims.push_back(data.num_classes);
  auto model = make_mlp(std::move(dims), shape.leaky_slope, shape.dropout, rng);
  model.dropout_from = shape.dropout_from;
  return model;
}

std::vector<std::span<const std::size_t>> minibatches(std::span<const std::size_t> order, std::size_t batch_size) {
  std::vector<std::span<const std::size_t>> out;
  const std::size_t step = batch_size == 0 ? order.size() : batch_size;
  for (std::size_t start = 0; start < order.size(); start += step)
    out.push_back(order.subspan(start, std::min(step, order.size() - start)));
  return out;
}

BackboneKind parse_backbone_kind(const std::string& name) {
  if (name == "DM") return BackboneKind::DM;
  if (name == "HSIC") return BackboneKind::HSIC;
  if (name == "UDM") return BackboneKind::UDM;
  throw ConfigError("unknown backbone '" + name + "'");
}

std::string to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::DM:
      return "DM";
    case BackboneKind::HSIC:
      return "HSIC";
    case BackboneKind::UDM:
      return "UDM";
  }
  return "?";
}

double rbf_kernel(std::span<const double> u, std::span<const double> v, double sigma) {
  if (u.size() != v.size()) throw ConfigError("rbf_kernel: dimension mismatch");
  double sq = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) sq += (u[k] - v[k]) * (u[k] - v[k]);
  return std::exp(-sq / (2.0 * sigma * sigma));
}

namespace {

Matrix gram(const Matrix& x, double sigma) {
  const std::size_t n = x.rows();
  Matrix k(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) k(i, j) = k(j, i) = rbf_kernel(x.row(i), x.row(j), sigma);
  }
  return k;
}

}  // namespace

HsicGradient hsic_n_with_grad(const Matrix& action_onehots, const Matrix& embeddings, double sigma) {
  const std::size_t n = embeddings.rows();
  if (action_onehots.rows() != n) throw ConfigError("hsic_n: row counts differ");
  if (n < 2) throw ConfigError("hsic_n: needs at least two samples");
  if (!(sigma > 0.0)) throw ConfigError("hsic_n: sigma must be positive");
  const Matrix k = gram(action_onehots, sigma);
  const Matrix l = gram(embeddings, sigma);
  const double N = static_cast<double>(n);

  std::vector<double> k_row(n, 0.0), l_row(n, 0.0);
  double k_sum = 0.0, l_sum = 0.0, kl = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      k_row[i] += k(i, j);
      l_row[i] += l(i, j);
      kl += k(i, j) * l(i, j);
    }
  for (std::size_t i = 0; i < n; ++i) {
    k_sum += k_row[i];
    l_sum += l_row[i];
  }
  double cross = 0.0;
  for (std::size_t i = 0; i < n; ++i) cross += k_row[i] * l_row[i];

  HsicGradient out;
  out.value = kl / (N * N) + k_sum * l_sum / (N * N * N * N) - 2.0 * cross / (N * N * N);

  // d value / d l_ij, then chain through l_ij = rbf(z_i, z_j)
  const double inv_s2 = 1.0 / (sigma * sigma);
  out.dembeddings = Matrix(n, embeddings.cols());
  for (std::size_t i = 0; i < n; ++i) {
    auto gi = out.dembeddings.row(i);
    auto zi = embeddings.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double g_ij = k(i, j) / (N * N) + k_sum / (N * N * N * N) - 2.0 * k_row[i] / (N * N * N);
      const double g_ji = k(j, i) / (N * N) + k_sum / (N * N * N * N) - 2.0 * k_row[j] / (N * N * N);
      const double coef = -(g_ij + g_ji) * l(i, j) * inv_s2;
      auto zj = embeddings.row(j);
      for (std::size_t c = 0; c < gi.size(); ++c) gi[c] += coef * (zi[c] - zj[c]);
    }
  }
  return out;
}

double hsic_n(const Matrix& action_onehots, const Matrix& embeddings, double sigma) {
  return hsic_n_with_grad(action_onehots, embeddings, sigma).value;
}

BackboneResult train_factual(const BanditDataset& data, std::span<const double> weights, const BackboneConfig& config,
                             bool use_hsic, Prng& rng) {
  if (data.size() == 0) throw ConfigError("cannot train on an empty dataset");
  if (!weights.empty() && weights.size() != data.size()) throw ConfigError("one sample weight per row expected");
  if (use_hsic) {
    if (config.hsic_lambda < 0.0) throw ConfigError("hsic_lambda must be nonnegative");
    if (!(config.rbf_sigma > 0.0)) throw ConfigError("rbf_sigma must be positive");
    if (config.hsic_lambda > 0.0 && config.train.batch_size != 0 && config.train.batch_size < 32)
      throw ConfigError("HSIC regularization needs minibatches of at least 32 samples");
    if (config.embedding_layer >= config.network.hidden.size())
      throw ConfigError("embedding layer must be a hidden linear layer");
  }
  BackboneResult result;
  result.model = make_outcome_model(data, config.network, rng);
  auto& model = result.model;
  Optimizer opt(config.train.optimizer, model.params, config.train.adam);

  const Matrix all_inputs = [&] {
    std::vector<std::size_t> rows(data.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return joint_inputs(data.features, rows, data.actions, data.num_actions);
  }();
  const Matrix all_targets = onehot(data.outcomes, data.num_classes);
  const Matrix all_action_hots = onehot(data.actions, data.num_actions);

  std::vector<double> batch_weights;
  std::vector<Matrix> injections;
  for (std::size_t epoch = 0; epoch < config.train.epochs; ++epoch) {
    const auto order = rng.permutation(data.size());
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (auto batch : minibatches(order, config.train.batch_size)) {
      const Matrix x = gather_rows(all_inputs, batch);
      const Matrix t = gather_rows(all_targets, batch);
      batch_weights.clear();
      if (!weights.empty())
        for (std::size_t r : batch) batch_weights.push_back(weights[r]);
      auto trace = forward(model, x, Mode::Train, rng);
      auto loss = cross_entropy(trace.probs, t, batch_weights);
      double objective = loss.value;
      injections.clear();
      if (use_hsic && batch.size() >= 2) {
        const Matrix a = gather_rows(all_action_hots, batch);
        auto h = hsic_n_with_grad(a, trace.preacts[config.embedding_layer], config.rbf_sigma);
        objective += config.hsic_lambda * h.value;
        for (double& g : h.dembeddings.values()) g *= config.hsic_lambda;
        injections.resize(model.num_layers());
        injections[config.embedding_layer] = std::move(h.dembeddings);
      }
      if (!std::isfinite(objective)) throw NumericError("backbone training diverged (non-finite loss); try a smaller learning rate");
      opt.step(model.params, backward(model, trace, loss.dlogits, injections).params);
      epoch_loss += objective;
      ++batches;
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
  }
  return result;
}

BackboneResult train_dm(const BanditDataset& data, const BackboneConfig& config, Prng& rng) {
  return train_factual(data, {}, config, false, rng);
}

BackboneResult train_hsic(const BanditDataset& data, const BackboneConfig& config, Prng& rng) {
  return train_factual(data, {}, config, true, rng);
}

Matrix PropensityModel::probabilities(const Matrix& features) const { return predict(linear, features); }

std::vector<double> PropensityModel::inverse_weights(const BanditDataset& data, std::size_t* clamps) const {
  const Matrix pi = probabilities(data.features);
  std::vector<double> w(data.size());
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    double p = pi(i, data.actions[i]);
    if (p < floor) {
      p = floor;
      ++clamped;
    }
    w[i] = 1.0 / p;
  }
  if (clamps) *clamps = clamped;
  return w;
}

PropensityModel fit_propensity(const BanditDataset& data, const TrainConfig& config, double floor, Prng& rng) {
  if (!(floor > 0.0 && floor <= 1.0)) throw ConfigError("propensity floor must be in (0,1]");
  PropensityModel model;
  model.floor = floor;
  model.linear = make_mlp({data.feature_dim(), data.num_actions}, 0.0, 0.0, rng);
  Optimizer opt(config.optimizer, model.linear.params, config.adam);
  const Matrix targets = onehot(data.actions, data.num_actions);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = rng.permutation(data.size());
    for (auto batch : minibatches(order, config.batch_size)) {
      auto trace = forward(model.linear, gather_rows(data.features, batch), Mode::Train, rng);
      auto loss = cross_entropy(trace.probs, gather_rows(targets, batch));
      opt.step(model.linear.params, backward(model.linear, trace, loss.dlogits).params);
    }
  }
  return model;
}

BackboneResult train_udm(const BanditDataset& data, const PropensityModel& propensity, const BackboneConfig& config,
                         Prng& rng) {
  std::size_t clamps = 0;
  const auto weights = propensity.inverse_weights(data, &clamps);
  auto result = train_factual(data, weights, config, false, rng);
  result.propensity_clamps = clamps;
  return result;
}

BackboneResult train_backbone(const BanditDataset& data, const BackboneConfig& config, Prng& rng) {
  switch (config.kind) {
    case BackboneKind::DM:
      return train_dm(data, config, rng);
    case BackboneKind::HSIC:
      return train_hsic(data, config, rng);
    case BackboneKind::UDM: {
      Prng prop_rng = rng.split(0x5052);
      auto propensity = fit_propensity(data, config.propensity_train, config.propensity_floor, prop_rng);
      return train_udm(data, propensity, config, rng);
    }
  }
  throw ConfigError("unknown backbone kind");
}

}  // namespace cst
