#include <cmath>
#include <sstream>

#include "cst/diffnet.hpp"
#include "cst/error.hpp"
#include "doctest.h"
#include "fd_oracle.hpp"

using namespace cst;
using cst::testing::fd_matrix_grad;
using cst::testing::fd_param_grads;
using cst::testing::max_rel_err;
using cst::testing::random_matrix;
using cst::testing::random_simplex;

namespace {

MlpModel random_model(Prng& rng, std::size_t max_dim = 8, double dropout = 0.0) {
  const std::size_t depth = 1 + rng.uniform_index(3);  // 1..3 linear layers
  std::vector<std::size_t> dims;
  for (std::size_t l = 0; l <= depth; ++l) dims.push_back(2 + rng.uniform_index(max_dim - 1));
  auto model = make_mlp(dims, 0.01, dropout, rng);
  // push preactivations away from the LeakyReLU kink a little more often
  for (auto& b : model.params.biases)
    for (double& v : b.values()) v += rng.uniform(-0.5, 0.5);
  return model;
}

Matrix onehot_targets(std::size_t rows, std::size_t cols, Prng& rng) {
  Matrix t(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) t(r, rng.uniform_index(cols)) = 1.0;
  return t;
}

}  // namespace

TEST_CASE("forward of a zero-weight model is uniform") {
  Prng rng(1);
  auto model = make_mlp({5, 4, 3}, 0.01, 0.0, rng);
  for (auto& w : model.params.weights) w.fill(0.0);
  for (auto& b : model.params.biases) b.fill(0.0);
  auto probs = predict(model, random_matrix(6, 5, rng));
  for (double p : probs.values()) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("eval mode is deterministic and equals the mask-free forward") {
  Prng rng(2);
  auto model = make_mlp({4, 8, 8, 3}, 0.01, 0.5, rng);
  auto x = random_matrix(10, 4, rng);
  Prng a(11), b(99);
  auto t1 = forward(model, x, Mode::Eval, a);
  auto t2 = forward(model, x, Mode::Eval, b);
  CHECK(t1.probs == t2.probs);
  for (const auto& m : t1.masks)
    for (double v : m.values()) CHECK(v == 1.0);

  auto no_dropout = model;
  no_dropout.dropout_p = 0.0;
  Prng c(5);
  CHECK(forward(no_dropout, x, Mode::Train, c).probs == t1.probs);
}

TEST_CASE("train-mode masks are inverted dropout scale factors") {
  Prng rng(3);
  auto model = make_mlp({4, 16, 3}, 0.01, 0.25, rng);
  auto trace = forward(model, random_matrix(50, 4, rng), Mode::Train, rng);
  std::size_t zeros = 0;
  for (double v : trace.masks[0].values()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    zeros += v == 0.0;
  }
  CHECK(zeros > 0);
  CHECK(zeros < trace.masks[0].size());
}

TEST_CASE("dropout_from leaves earlier hidden layers unmasked") {
  Prng rng(4);
  auto model = make_mlp({4, 16, 16, 3}, 0.01, 0.5, rng);
  model.dropout_from = 1;
  auto trace = forward(model, random_matrix(40, 4, rng), Mode::Train, rng);
  for (double v : trace.masks[0].values()) CHECK(v == 1.0);
  std::size_t zeros = 0;
  for (double v : trace.masks[1].values()) zeros += v == 0.0;
  CHECK(zeros > 0);
}

TEST_CASE("hand-computed forward through one hidden layer") {
  MlpModel model;
  model.layer_dims = {2, 2, 2};
  model.leaky_slope = 0.01;
  model.params.weights = {Matrix::from_rows({{1.0, -2.0}, {0.5, 1.0}}), Matrix::from_rows({{2.0, -1.0}, {1.0, 3.0}})};
  model.params.biases = {Matrix(1, 2), Matrix(1, 2)};
  // hidden preact = (1.5, -1) -> LeakyReLU (1.5, -0.01); logits = (2.99, -1.53)
  auto probs = predict(model, Matrix::from_rows({{1.0, 1.0}}));
  const double p0 = 1.0 / (1.0 + std::exp(-1.53 - 2.99));
  CHECK(probs(0, 0) == doctest::Approx(p0).epsilon(1e-14));
  CHECK(probs(0, 1) == doctest::Approx(1.0 - p0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one with entries in (0,1)") {
  Prng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto model = random_model(rng);
    auto probs = predict(model, random_matrix(7, model.input_dim(), rng, -3, 3));
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      double s = 0.0;
      for (double p : probs.row(r)) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
        s += p;
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("dimension mismatch is a configuration error") {
  Prng rng(5);
  auto model = make_mlp({3, 4, 2}, 0.01, 0.0, rng);
  CHECK_THROWS_AS(predict(model, Matrix(2, 4)), ConfigError);
  auto trace = forward(model, Matrix(2, 3), Mode::Eval, rng);
  auto other = make_mlp({3, 5, 2}, 0.01, 0.0, rng);
  CHECK_THROWS_AS(backward(other, trace, Matrix(2, 2)), ConfigError);
  CHECK_THROWS_AS(backward(model, trace, Matrix(3, 2)), ConfigError);
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  Prng rng(6);
  auto model = make_mlp({4, 6, 3}, 0.01, 0.0, rng);
  auto trace = forward(model, random_matrix(5, 4, rng), Mode::Eval, rng);
  auto g = backward(model, trace, Matrix(5, 3));
  CHECK(g.params == zeros_like(model.params));
  for (double v : g.inputs.values()) CHECK(v == 0.0);
}

TEST_CASE("parameter and input gradients match central finite differences") {
  Prng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const double dropout = trial % 2 ? 0.3 : 0.0;
    auto model = random_model(rng, 8, dropout);
    const std::size_t rows = 1 + rng.uniform_index(6);
    auto x = random_matrix(rows, model.input_dim(), rng);
    auto targets = onehot_targets(rows, model.output_dim(), rng);
    std::vector<double> weights(rows);
    for (double& w : weights) w = rng.uniform(0.0, 2.0);
    const std::uint64_t mask_seed = 1000 + trial;

    // train mode with a replayed mask stream keeps the function fixed
    auto loss_at = [&](const MlpModel& m, const Matrix& in) {
      Prng masks(mask_seed);
      return cross_entropy(forward(m, in, Mode::Train, masks).probs, targets, weights).value;
    };
    Prng masks(mask_seed);
    auto trace = forward(model, x, Mode::Train, masks);
    auto loss = cross_entropy(trace.probs, targets, weights);
    auto g = backward(model, trace, loss.dlogits);

    auto fd_params = fd_param_grads(model, [&](const MlpModel& m) { return loss_at(m, x); });
    auto fd_inputs = fd_matrix_grad(x, [&](const Matrix& in) { return loss_at(model, in); });
    CHECK(max_rel_err(g.params, fd_params) < 1e-4);
    CHECK(max_rel_err(g.inputs, fd_inputs) < 1e-4);
  }
}

TEST_CASE("cross entropy values") {
  SUBCASE("exact one-hot prediction has zero loss") {
    auto t = Matrix::from_rows({{1, 0}, {0, 1}});
    CHECK(cross_entropy(t, t).value == 0.0);
  }
  SUBCASE("half-half against a one-hot target is ln 2") {
    auto r = cross_entropy(Matrix::from_rows({{0.5, 0.5}}), Matrix::from_rows({{1, 0}}));
    CHECK(r.value == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(r.dlogits(0, 0) == doctest::Approx(-0.5));
    CHECK(r.dlogits(0, 1) == doctest::Approx(0.5));
  }
  SUBCASE("weights are linear") {
    auto p = Matrix::from_rows({{0.7, 0.3}, {0.2, 0.8}});
    auto t = Matrix::from_rows({{0, 1}, {1, 0}});
    const std::vector<double> w{2.0, 0.0};
    auto both = cross_entropy(p, t, w);
    auto first = cross_entropy(Matrix::from_rows({{0.7, 0.3}}), Matrix::from_rows({{0, 1}}));
    // weighted sum is 2x the first row; the batch mean divides by two rows
    CHECK(both.value * 2.0 == doctest::Approx(2.0 * first.value));
  }
  SUBCASE("zero probability on the target is floored and counted") {
    auto r = cross_entropy(Matrix::from_rows({{1.0, 0.0}}), Matrix::from_rows({{0, 1}}));
    CHECK(r.floor_events == 1);
    CHECK(r.value == doctest::Approx(-std::log(kProbabilityFloor)));
    CHECK(std::isfinite(r.value));
  }
}

TEST_CASE("KL divergence values and gradient") {
  Prng rng(8);
  auto p = random_simplex(4, 3, rng);
  CHECK(kl_divergence(p, p).value == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(kl_divergence(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0.5, 0.5}})).value ==
        doctest::Approx(std::log(2.0)));

  for (int trial = 0; trial < 10; ++trial) {
    auto target = random_simplex(5, 4, rng);
    auto logits = random_matrix(5, 4, rng, -2, 2);
    auto r = kl_divergence(target, softmax_rows(logits));
    CHECK(r.value >= 0.0);
    auto fd = fd_matrix_grad(logits, [&](const Matrix& z) { return kl_divergence(target, softmax_rows(z)).value; });
    CHECK(max_rel_err(r.dlogits, fd) < 1e-4);
  }
}

TEST_CASE("Adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Prng rng(9);
    auto model = make_mlp({3, 4, 2}, 0.01, 0.0, rng);
    auto before = model.params;
    auto state = make_adam(model.params, {});
    adam_step(model.params, zeros_like(model.params), state);
    CHECK(model.params == before);
    CHECK(state.step == 1);
  }
  SUBCASE("minimizes x^2") {
    Parameters x;
    x.weights.push_back(Matrix::from_rows({{1.0}}));
    auto state = make_adam(x, {.learning_rate = 0.1});
    for (int i = 0; i < 200; ++i) {
      Parameters g = zeros_like(x);
      g.weights[0](0, 0) = 2.0 * x.weights[0](0, 0);
      adam_step(x, g, state);
    }
    CHECK(std::abs(x.weights[0](0, 0)) < 1e-3);
  }
  SUBCASE("identical inputs give identical updates") {
    Prng rng(10);
    auto model = make_mlp({3, 4, 2}, 0.01, 0.0, rng);
    auto a = model.params, b = model.params;
    Parameters g = zeros_like(a);
    for (auto& w : g.weights)
      for (double& v : w.values()) v = rng.normal();
    auto sa = make_adam(a, {}), sb = make_adam(b, {});
    for (int i = 0; i < 5; ++i) {
      adam_step(a, g, sa);
      adam_step(b, g, sb);
    }
    CHECK(a == b);
  }
}

TEST_CASE("checkpoint round trip is exact") {
  Prng rng(11);
  auto model = make_mlp({7, 5, 5, 3}, 0.02, 0.2, rng);
  model.dropout_from = 1;
  std::stringstream buf;
  save_model(buf, model, {{"kind", "DM"}, {"note", "two words"}});
  std::map<std::string, std::string> header;
  auto loaded = load_model(buf, &header);
  CHECK(loaded == model);
  CHECK(header.at("kind") == "DM");
  CHECK(header.at("note") == "two words");

  std::stringstream bad("cst-model 1\ndims 2 2\nW 0 2 2\n1 2 3\n");
  CHECK_THROWS_AS(load_model(bad), FormatError);
}
