#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cst/backbones.hpp"
#include "cst/error.hpp"
#include "cst/eval.hpp"
#include "cst/synthdata.hpp"

using namespace cst;

namespace {

MlpModel zero_model(std::size_t d, std::size_t actions, std::size_t classes) {
  Prng rng(0);
  auto m = make_mlp({d + actions, 8, classes}, 0.01, 0.0, rng);
  for (auto& w : m.params.weights) w.fill(0.0);
  for (auto& b : m.params.biases) b.fill(0.0);
  return m;
}

// Linear model: logit of class 1 is x0 + 2 [a = 1], class 0 logit is 0.
MlpModel hand_model() {
  Prng rng(0);
  auto m = make_mlp({3, 2}, 0.01, 0.0, rng);
  m.params.weights[0] = Matrix::from_rows({{0, 1}, {0, 0}, {0, 2}});
  m.params.biases[0].fill(0.0);
  return m;
}

// Class a % 2 for action a, by a wide margin.
MlpModel parity_model(std::size_t d, std::size_t actions) {
  Prng rng(0);
  auto m = make_mlp({d + actions, 2}, 0.01, 0.0, rng);
  m.params.weights[0].fill(0.0);
  m.params.biases[0].fill(0.0);
  for (std::size_t a = 0; a < actions; ++a) m.params.weights[0](d + a, a % 2) = 60.0;
  return m;
}

}  // namespace

TEST_CASE("uniform predictor has full NLL ln 2") {
  for (auto kind : {DemandKind::D1, DemandKind::D3, DemandKind::D5}) {
    Prng rng(static_cast<std::uint64_t>(kind) + 1);
    auto spec = make_demand_spec(kind, rng);
    auto data = sample_bandit_dataset(spec, 300, LoggingPolicy{}, rng);
    const double nll = full_nll(zero_model(data.feature_dim(), data.num_actions, 2), data.features,
                                data.ground_truth->labels);
    CHECK(std::abs(nll - std::numbers::ln2) < 1e-9);
  }
}

TEST_CASE("hand-computed NLL over four cells") {
  const Matrix x = Matrix::from_rows({{0}, {1}});
  LabelTable t(2, 2);
  t(0, 0) = 1;
  t(0, 1) = 0;
  t(1, 0) = 0;
  t(1, 1) = 1;
  CHECK(full_nll(hand_model(), x, t) == doctest::Approx(1.0454810576737203).epsilon(1e-13));
}

TEST_CASE("perfect and wrong predictors") {
  const std::size_t A = 4;
  Prng rng(2);
  Matrix x(10, 3);
  for (double& v : x.values()) v = rng.uniform();
  LabelTable truth(10, A);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t a = 0; a < A; ++a) truth(i, a) = a % 2;
  const auto perfect = parity_model(3, A);
  CHECK(hamming_loss(perfect, x, truth) == 0.0);
  CHECK(full_nll(perfect, x, truth) < 1e-20);

  LabelTable ones(10, A, 1);
  auto wrong = zero_model(3, A, 2);
  wrong.params.biases.back()(0, 0) = 1.0;  // always predicts class 0
  CHECK(hamming_loss(wrong, x, ones) == 1.0);
}

TEST_CASE("hamming counts mismatches on a small table") {
  // Predictions from hand_model: class 1 iff x0 + 2[a=1] > 0.
  const Matrix x = Matrix::from_rows({{-3}, {0.5}, {-1.5}});
  // predicted: row0 (0, 0), row1 (1, 1), row2 (0, 1)
  LabelTable t(3, 2);
  t(0, 0) = 1;  // miss
  t(0, 1) = 0;
  t(1, 0) = 1;
  t(1, 1) = 0;  // miss
  t(2, 0) = 1;  // miss
  t(2, 1) = 1;
  CHECK(hamming_loss(hand_model(), x, t) == doctest::Approx(3.0 / 6.0));
}

TEST_CASE("best-action accuracy") {
  const Matrix x = Matrix::from_rows({{0}, {1}});
  // hand_model always prefers action 1 for the positive class.
  CHECK(best_action_accuracy(hand_model(), x, Matrix::from_rows({{0.2, 0.7}, {0.1, 0.3}})) == 1.0);
  CHECK(best_action_accuracy(hand_model(), x, Matrix::from_rows({{0.9, 0.7}, {0.1, 0.3}})) == 0.5);
  CHECK(best_action_accuracy(hand_model(), x, Matrix::from_rows({{0.5, 0.5}, {0.4, 0.4}})) == 1.0);
}

TEST_CASE("on D2 the best action is always the lowest price") {
  Prng rng(5);
  auto spec = make_demand_spec(DemandKind::D2, rng);
  auto data = sample_bandit_dataset(spec, 200, LoggingPolicy{}, rng);
  const auto& probs = data.ground_truth->probs;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t a = 1; a < data.num_actions; ++a) CHECK(probs(i, 0) > probs(i, a));

  BackboneConfig c;
  c.network.hidden = {8, 8};
  c.train.epochs = 3;
  auto model = train_dm(data, c, rng).model;
  const Matrix p = predict_all_actions(model, data.features, data.num_actions);
  std::size_t picks_first = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < data.num_actions; ++a)
      if (p(i * data.num_actions + a, 1) > p(i * data.num_actions + best, 1)) best = a;
    picks_first += best == 0;
  }
  CHECK(best_action_accuracy(model, data.features, probs) ==
        doctest::Approx(static_cast<double>(picks_first) / static_cast<double>(data.size())));
}

TEST_CASE("factual NLL of the uniform predictor") {
  Prng rng(9);
  auto spec = make_demand_spec(DemandKind::D1, rng);
  auto data = sample_bandit_dataset(spec, 50, LoggingPolicy{}, rng);
  CHECK(factual_nll(zero_model(data.feature_dim(), data.num_actions, 2), data) ==
        doctest::Approx(std::numbers::ln2).epsilon(1e-12));
  auto m = evaluate(zero_model(data.feature_dim(), data.num_actions, 2), data);
  CHECK(m.nll == doctest::Approx(std::numbers::ln2));
  CHECK(m.hamming >= 0.0);
  CHECK(m.hamming <= 1.0);
}

TEST_CASE("aggregation") {
  const std::vector<double> same{0.3, 0.3, 0.3};
  CHECK(summarize(same).std_error == 0.0);
  const std::vector<double> two{1, 3};
  CHECK(summarize(two).mean == 2.0);
  CHECK(summarize(two).std_error == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<double> five{0.5744, 0.6012, 0.5531, 0.5899, 0.5650};
  CHECK(summarize(five).mean == doctest::Approx(0.57672).epsilon(1e-14));
  CHECK(summarize(five).std_error == doctest::Approx(0.008583787043024765).epsilon(1e-12));
  CHECK(summarize(std::vector<double>{4.0}).std_error == 0.0);
  CHECK_THROWS_AS(summarize(std::vector<double>{}), ConfigError);

  auto r = aggregate("D1", "DM", "PL", "abc", {{1, 0.1, 0.5}, {3, 0.3, 0.7}});
  CHECK(r.nll.mean == 2.0);
  CHECK(r.hamming.mean == doctest::Approx(0.2));
  CHECK(r.best_action_accuracy.std_error == doctest::Approx(0.1));
}
