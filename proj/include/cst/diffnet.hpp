#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cst/matrix.hpp"
#include "cst/prng.hpp"

namespace cst {

enum class Mode { Train, Eval };

/// Weights and biases of a dense network. Also used for gradients and
/// optimizer moments, which share the parameter shapes.
struct Parameters {
  std::vector<Matrix> weights;  // layer l: fan_in x fan_out
  std::vector<Matrix> biases;   // layer l: 1 x fan_out

  std::size_t count() const;
  friend bool operator==(const Parameters&, const Parameters&) = default;
};

Parameters zeros_like(const Parameters& p);
// y += a * x
void axpy(Parameters& y, double a, const Parameters& x);
bool same_shape(const Parameters& a, const Parameters& b);

/// Feed-forward classifier: Linear -> LeakyReLU -> Dropout for every hidden
/// layer, then Linear -> softmax over the output classes. Hidden layers with
/// index below dropout_from skip the dropout step.
struct MlpModel {
  std::vector<std::size_t> layer_dims;
  Parameters params;
  double leaky_slope = 0.01;
  double dropout_p = 0.0;
  std::size_t dropout_from = 0;

  std::size_t num_layers() const { return params.weights.size(); }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }

  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
MlpModel make_mlp(std::vector<std::size_t> layer_dims, double leaky_slope, double dropout_p, Prng& rng);

void validate(const MlpModel& model);

struct ForwardTrace {
  Mode mode = Mode::Eval;
  std::vector<std::size_t> layer_dims;
  std::vector<Matrix> activations;  // activations[0] = input; activations[l] feeds layer l
  std::vector<Matrix> preacts;      // preacts[l] = activations[l] * W_l + b_l
  std::vector<Matrix> masks;        // per hidden layer; 0 or 1/(1-p), all ones in eval mode
  Matrix probs;

  const Matrix& logits() const { return preacts.back(); }
};

ForwardTrace forward(const MlpModel& model, const Matrix& inputs, Mode mode, Prng& rng);
// Eval-mode probabilities.
Matrix predict(const MlpModel& model, const Matrix& inputs);

struct Gradients {
  Parameters params;
  Matrix inputs;
};

/// Reverse pass. `preact_grads`, when non-empty, holds extra dL/d(preact_l)
/// terms added at each layer (empty matrices are skipped); this is how
/// penalties on intermediate embeddings enter.
Gradients backward(const MlpModel& model, const ForwardTrace& trace, const Matrix& dloss_dlogits,
                   std::span<const Matrix> preact_grads = {});

inline constexpr double kProbabilityFloor = 1e-12;

struct LossValue {
  double value = 0.0;
  Matrix dlogits;
  std::size_t floor_events = 0;
};

/// Weighted cross-entropy averaged over rows: (1/n) sum_i w_i sum_k -t_ik log p_ik.
/// Gradient with respect to the logits that produced `probs`. Empty weights mean all ones.
LossValue cross_entropy(const Matrix& probs, const Matrix& targets, std::span<const double> weights = {});

/// Mean over rows of KL(p || q). `p` is treated as a constant; the gradient is
/// with respect to the logits of q.
LossValue kl_divergence(const Matrix& p, const Matrix& q);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  Parameters first_moment;
  Parameters second_moment;
  std::uint64_t step = 0;
};

AdamState make_adam(const Parameters& like, const AdamConfig& config);
void adam_step(Parameters& params, const Parameters& grads, AdamState& state);
void sgd_step(Parameters& params, const Parameters& grads, double learning_rate);

enum class OptimizerKind { Adam, Sgd };

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, const Parameters& like, const AdamConfig& config)
      : kind_(kind), adam_(make_adam(like, config)) {}
  void step(Parameters& params, const Parameters& grads) {
    if (kind_ == OptimizerKind::Adam)
      adam_step(params, grads, adam_);
    else
      sgd_step(params, grads, adam_.config.learning_rate);
  }
  const AdamState& state() const { return adam_; }

 private:
  OptimizerKind kind_;
  AdamState adam_;
};

// Textual checkpoint; values are written in shortest round-trip form so
// save -> load is exact. `header` carries free-form key/value metadata.
void save_model(std::ostream& out, const MlpModel& model, const std::map<std::string, std::string>& header = {});
MlpModel load_model(std::istream& in, std::map<std::string, std::string>* header = nullptr);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

}  // namespace cst
