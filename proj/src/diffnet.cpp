#include "cst/diffnet.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "cst/error.hpp"

namespace cst {

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.size();
  for (const auto& b : biases) n += b.size();
  return n;
}

Parameters zeros_like(const Parameters& p) {
  Parameters z;
  for (const auto& w : p.weights) z.weights.emplace_back(w.rows(), w.cols());
  for (const auto& b : p.biases) z.biases.emplace_back(b.rows(), b.cols());
  return z;
}

bool same_shape(const Parameters& a, const Parameters& b) {
  if (a.weights.size() != b.weights.size() || a.biases.size() != b.biases.size()) return false;
  for (std::size_t l = 0; l < a.weights.size(); ++l)
    if (!a.weights[l].same_shape(b.weights[l])) return false;
  for (std::size_t l = 0; l < a.biases.size(); ++l)
    if (!a.biases[l].same_shape(b.biases[l])) return false;
  return true;
}

namespace {

template <class Fn>
void zip_values(Parameters& y, const Parameters& x, Fn&& fn) {
  if (!same_shape(y, x)) throw ConfigError("parameter shapes differ");
  for (std::size_t l = 0; l < y.weights.size(); ++l) {
    auto yv = y.weights[l].values();
    auto xv = x.weights[l].values();
    for (std::size_t i = 0; i < yv.size(); ++i) fn(yv[i], xv[i]);
  }
  for (std::size_t l = 0; l < y.biases.size(); ++l) {
    auto yv = y.biases[l].values();
    auto xv = x.biases[l].values();
    for (std::size_t i = 0; i < yv.size(); ++i) fn(yv[i], xv[i]);
  }
}

}  // namespace

void axpy(Parameters& y, double a, const Parameters& x) {
  zip_values(y, x, [a](double& yi, double xi) { yi += a * xi; });
}

MlpModel make_mlp(std::vector<std::size_t> layer_dims, double leaky_slope, double dropout_p, Prng& rng) {
  MlpModel model;
  model.layer_dims = std::move(layer_dims);
  model.leaky_slope = leaky_slope;
  model.dropout_p = dropout_p;
  if (model.layer_dims.size() < 2) throw ConfigError("an MLP needs at least input and output dims");
  for (std::size_t l = 0; l + 1 < model.layer_dims.size(); ++l) {
    const std::size_t fan_in = model.layer_dims[l];
    const std::size_t fan_out = model.layer_dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w(fan_in, fan_out);
    Matrix b(1, fan_out);
    for (double& v : w.values()) v = rng.uniform(-bound, bound);
    for (double& v : b.values()) v = rng.uniform(-bound, bound);
    model.params.weights.push_back(std::move(w));
    model.params.biases.push_back(std::move(b));
  }
  validate(model);
  return model;
}

void validate(const MlpModel& model) {
  const auto& dims = model.layer_dims;
  if (dims.size() < 2) throw ConfigError("model has fewer than two layer dims");
  for (std::size_t d : dims)
    if (d == 0) throw ConfigError("model layer dim is zero");
  if (model.params.weights.size() != dims.size() - 1 || model.params.biases.size() != dims.size() - 1)
    throw ConfigError("model parameter count does not match layer dims");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto& w = model.params.weights[l];
    const auto& b = model.params.biases[l];
    if (w.rows() != dims[l] || w.cols() != dims[l + 1] || b.rows() != 1 || b.cols() != dims[l + 1])
      throw ConfigError("layer " + std::to_string(l) + " parameters inconsistent with layer dims");
  }
  if (!(model.dropout_p >= 0.0 && model.dropout_p <= 1.0)) throw ConfigError("dropout_p outside [0,1]");
}

ForwardTrace forward(const MlpModel& model, const Matrix& inputs, Mode mode, Prng& rng) {
  if (inputs.cols() != model.input_dim())
    throw ConfigError("forward: input has " + std::to_string(inputs.cols()) + " columns, model expects " +
                      std::to_string(model.input_dim()));
  const std::size_t layers = model.num_layers();
  const bool drop = mode == Mode::Train && model.dropout_p > 0.0;
  const double keep = 1.0 - model.dropout_p;

  ForwardTrace trace;
  trace.mode = mode;
  trace.layer_dims = model.layer_dims;
  trace.activations.reserve(layers);
  trace.preacts.reserve(layers);
  trace.activations.push_back(inputs);

  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = matmul(trace.activations[l], model.params.weights[l]);
    const auto bias = model.params.biases[l].row(0);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto zr = z.row(r);
      for (std::size_t c = 0; c < zr.size(); ++c) zr[c] += bias[c];
    }
    if (l + 1 < layers) {
      Matrix h(z.rows(), z.cols());
      Matrix mask(z.rows(), z.cols(), 1.0);
      if (drop && l >= model.dropout_from) {
        for (double& m : mask.values()) m = (keep > 0.0 && rng.bernoulli(keep)) ? 1.0 / keep : 0.0;
      }
      auto zv = z.values();
      auto hv = h.values();
      auto mv = mask.values();
      for (std::size_t i = 0; i < zv.size(); ++i) {
        const double a = zv[i] > 0.0 ? zv[i] : model.leaky_slope * zv[i];
        hv[i] = a * mv[i];
      }
      trace.masks.push_back(std::move(mask));
      trace.preacts.push_back(std::move(z));
      trace.activations.push_back(std::move(h));
    } else {
      trace.preacts.push_back(std::move(z));
    }
  }
  if (!trace.logits().all_finite()) throw NumericError("forward: non-finite logits");
  trace.probs = softmax_rows(trace.logits());
  return trace;
}

Matrix predict(const MlpModel& model, const Matrix& inputs) {
  Prng unused(0);
  return forward(model, inputs, Mode::Eval, unused).probs;
}

Gradients backward(const MlpModel& model, const ForwardTrace& trace, const Matrix& dloss_dlogits,
                   std::span<const Matrix> preact_grads) {
  const std::size_t layers = model.num_layers();
  if (trace.layer_dims != model.layer_dims || trace.preacts.size() != layers ||
      trace.activations.size() != layers || trace.masks.size() + 1 != layers)
    throw ConfigError("backward: trace does not belong to this model");
  const std::size_t rows = trace.activations[0].rows();
  if (dloss_dlogits.rows() != rows || dloss_dlogits.cols() != model.output_dim())
    throw ConfigError("backward: gradient shape does not match logits");
  if (!preact_grads.empty() && preact_grads.size() != layers)
    throw ConfigError("backward: one preactivation gradient slot per layer expected");

  auto add_injection = [&](Matrix& delta, std::size_t l) {
    if (preact_grads.empty() || preact_grads[l].empty()) return;
    if (!preact_grads[l].same_shape(delta)) throw ConfigError("backward: injected gradient shape mismatch");
    auto dv = delta.values();
    auto iv = preact_grads[l].values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += iv[i];
  };

  Gradients g;
  g.params.weights.resize(layers);
  g.params.biases.resize(layers);
  Matrix delta = dloss_dlogits;
  add_injection(delta, layers - 1);
  for (std::size_t l = layers; l-- > 0;) {
    g.params.weights[l] = matmul_tn(trace.activations[l], delta);
    Matrix gb(1, delta.cols());
    auto gbr = gb.row(0);
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto dr = delta.row(r);
      for (std::size_t c = 0; c < dr.size(); ++c) gbr[c] += dr[c];
    }
    g.params.biases[l] = std::move(gb);
    Matrix upstream = matmul_nt(delta, model.params.weights[l]);
    if (l == 0) {
      g.inputs = std::move(upstream);
      break;
    }
    auto uv = upstream.values();
    auto zv = trace.preacts[l - 1].values();
    auto mv = trace.masks[l - 1].values();
    for (std::size_t i = 0; i < uv.size(); ++i) uv[i] *= mv[i] * (zv[i] > 0.0 ? 1.0 : model.leaky_slope);
    delta = std::move(upstream);
    add_injection(delta, l - 1);
  }
  return g;
}

LossValue cross_entropy(const Matrix& probs, const Matrix& targets, std::span<const double> weights) {
  if (!probs.same_shape(targets)) throw ConfigError("cross_entropy: probs and targets differ in shape");
  if (!weights.empty() && weights.size() != probs.rows())
    throw ConfigError("cross_entropy: one weight per row expected");
  LossValue out;
  out.dlogits = Matrix(probs.rows(), probs.cols());
  if (probs.rows() == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const double w = weights.empty() ? 1.0 : weights[r];
    auto p = probs.row(r);
    auto t = targets.row(r);
    auto d = out.dlogits.row(r);
    double mass = 0.0;
    double row_loss = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      mass += t[k];
      if (t[k] > 0.0) {
        double pk = p[k];
        if (pk < kProbabilityFloor) {
          pk = kProbabilityFloor;
          ++out.floor_events;
        }
        row_loss -= t[k] * std::log(pk);
      }
    }
    out.value += w * row_loss;
    for (std::size_t k = 0; k < p.size(); ++k) d[k] = w * (p[k] * mass - t[k]) * inv_n;
  }
  out.value *= inv_n;
  return out;
}

LossValue kl_divergence(const Matrix& p, const Matrix& q) {
  if (!p.same_shape(q)) throw ConfigError("kl_divergence: shapes differ");
  LossValue out;
  out.dlogits = Matrix(q.rows(), q.cols());
  if (q.rows() == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(q.rows());
  for (std::size_t r = 0; r < q.rows(); ++r) {
    auto pr = p.row(r);
    auto qr = q.row(r);
    auto d = out.dlogits.row(r);
    double mass = 0.0;
    for (std::size_t k = 0; k < qr.size(); ++k) {
      mass += pr[k];
      if (pr[k] > 0.0) {
        double qk = qr[k];
        if (qk < kProbabilityFloor) {
          qk = kProbabilityFloor;
          ++out.floor_events;
        }
        out.value += pr[k] * (std::log(pr[k]) - std::log(qk));
      }
    }
    for (std::size_t k = 0; k < qr.size(); ++k) d[k] = (qr[k] * mass - pr[k]) * inv_n;
  }
  out.value *= inv_n;
  return out;
}

AdamState make_adam(const Parameters& like, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  s.first_moment = zeros_like(like);
  s.second_moment = zeros_like(like);
  return s;
}

void adam_step(Parameters& params, const Parameters& grads, AdamState& state) {
  if (!same_shape(params, grads) || !same_shape(params, state.first_moment))
    throw ConfigError("adam_step: shape mismatch");
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  auto update = [&](Matrix& p, const Matrix& g, Matrix& m, Matrix& v) {
    auto pv = p.values();
    auto gv = g.values();
    auto mv = m.values();
    auto vv = v.values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      mv[i] = c.beta1 * mv[i] + (1.0 - c.beta1) * gv[i];
      vv[i] = c.beta2 * vv[i] + (1.0 - c.beta2) * gv[i] * gv[i];
      const double mhat = mv[i] / correct1;
      const double vhat = vv[i] / correct2;
      pv[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  };
  for (std::size_t l = 0; l < params.weights.size(); ++l)
    update(params.weights[l], grads.weights[l], state.first_moment.weights[l], state.second_moment.weights[l]);
  for (std::size_t l = 0; l < params.biases.size(); ++l)
    update(params.biases[l], grads.biases[l], state.first_moment.biases[l], state.second_moment.biases[l]);
}

void sgd_step(Parameters& params, const Parameters& grads, double learning_rate) {
  axpy(params, -learning_rate, grads);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) throw FormatError("not a number: '" + std::string(s) + "'");
  return v;
}

namespace {

constexpr const char* kModelMagic = "cst-model";
constexpr int kModelVersion = 1;

void write_matrix(std::ostream& out, const char* tag, std::size_t layer, const Matrix& m) {
  out << tag << ' ' << layer << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? " " : "") << format_double(row[c]);
    out << '\n';
  }
}

Matrix read_matrix(std::istream& in, const std::string& tag, std::size_t layer) {
  std::string got;
  std::size_t l = 0, rows = 0, cols = 0;
  if (!(in >> got >> l >> rows >> cols) || got != tag || l != layer)
    throw FormatError("model checkpoint: expected '" + tag + " " + std::to_string(layer) + "'");
  Matrix m(rows, cols);
  std::string tok;
  for (double& v : m.values()) {
    if (!(in >> tok)) throw FormatError("model checkpoint: truncated " + tag + " block");
    v = parse_double(tok);
  }
  return m;
}

}  // namespace

void save_model(std::ostream& out, const MlpModel& model, const std::map<std::string, std::string>& header) {
  validate(model);
  out << kModelMagic << ' ' << kModelVersion << '\n';
  for (const auto& [k, v] : header) out << "meta " << k << ' ' << v << '\n';
  out << "leaky_slope " << format_double(model.leaky_slope) << '\n';
  out << "dropout_p " << format_double(model.dropout_p) << '\n';
  out << "dropout_from " << model.dropout_from << '\n';
  out << "dims";
  for (std::size_t d : model.layer_dims) out << ' ' << d;
  out << '\n';
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    write_matrix(out, "W", l, model.params.weights[l]);
    write_matrix(out, "b", l, model.params.biases[l]);
  }
  out << "end\n";
}

MlpModel load_model(std::istream& in, std::map<std::string, std::string>* header) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("model checkpoint: empty input");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    if (!(ls >> magic >> version) || magic != kModelMagic) throw FormatError("model checkpoint: bad magic", 1);
    if (version != kModelVersion) throw FormatError("model checkpoint: unsupported version " + std::to_string(version));
  }
  MlpModel model;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "meta") {
      std::string k, v;
      ls >> k;
      std::getline(ls >> std::ws, v);
      if (header) (*header)[k] = v;
    } else if (key == "leaky_slope" || key == "dropout_p") {
      std::string tok;
      ls >> tok;
      (key == "leaky_slope" ? model.leaky_slope : model.dropout_p) = parse_double(tok);
    } else if (key == "dropout_from") {
      if (!(ls >> model.dropout_from)) throw FormatError("model checkpoint: bad dropout_from");
    } else if (key == "dims") {
      std::size_t d;
      while (ls >> d) model.layer_dims.push_back(d);
      break;
    } else if (!key.empty()) {
      throw FormatError("model checkpoint: unexpected key '" + key + "'");
    }
  }
  if (model.layer_dims.size() < 2) throw FormatError("model checkpoint: missing dims");
  for (std::size_t l = 0; l + 1 < model.layer_dims.size(); ++l) {
    model.params.weights.push_back(read_matrix(in, "W", l));
    model.params.biases.push_back(read_matrix(in, "b", l));
  }
  std::string end;
  if (!(in >> end) || end != "end") throw FormatError("model checkpoint: missing end marker");
  validate(model);
  return model;
}

}  // namespace cst
