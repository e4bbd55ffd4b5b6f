#include "cst/toy_demo.hpp"

#include <algorithm>
#include <fstream>

#include "cst/config.hpp"
#include "cst/error.hpp"
#include "cst/eval.hpp"

namespace cst {

ToyDemoConfig::ToyDemoConfig() {
  cst.outer_iterations = 10;
  cst.lambda_cvat = 1.0;
  cst.train = {.epochs = 20, .batch_size = 0, .adam = {.learning_rate = 1e-2}};
}

ToyDemoConfig parse_toy_demo_config(std::string_view text) {
  auto doc = IniDocument::parse(text);
  ToyDemoConfig c;
  c.seed = doc.get_size("toy", "seed", c.seed);
  c.samples = doc.get_size("toy", "samples", c.samples);
  c.test_samples = doc.get_size("toy", "test_samples", c.test_samples);
  c.noise = doc.get_double("toy", "noise", c.noise);
  c.network.hidden = doc.get_sizes("toy", "hidden", c.network.hidden);
  c.network.dropout = doc.get_double("toy", "dropout", c.network.dropout);
  c.network.dropout_from = doc.get_size("toy", "dropout_from", c.network.dropout_from);
  c.dm_train.epochs = doc.get_size("toy", "dm_epochs", c.dm_train.epochs);
  c.dm_train.adam.learning_rate = doc.get_double("toy", "dm_learning_rate", c.dm_train.adam.learning_rate);
  c.cst.outer_iterations = doc.get_size("toy", "iterations", c.cst.outer_iterations);
  c.cst.lambda_cvat = doc.get_double("toy", "lambda", c.cst.lambda_cvat);
  c.cst.train.epochs = doc.get_size("toy", "cst_epochs", c.cst.train.epochs);
  c.cst.train.adam.learning_rate = doc.get_double("toy", "cst_learning_rate", c.cst.train.adam.learning_rate);
  c.cst.train.batch_size = doc.get_size("toy", "cst_batch_size", c.cst.train.batch_size);
  c.dm_train.batch_size = doc.get_size("toy", "dm_batch_size", c.dm_train.batch_size);
  c.cst.cvat.xi = doc.get_double("toy", "xi", c.cst.cvat.xi);
  c.cst.cvat.epsilon = doc.get_double("toy", "epsilon", c.cst.cvat.epsilon);
  c.grid_resolution = doc.get_size("toy", "grid_resolution", c.grid_resolution);
  c.grid_margin = doc.get_double("toy", "grid_margin", c.grid_margin);
  c.snapshots = doc.get_sizes("toy", "snapshots", c.snapshots);
  doc.finish();
  if (c.samples < 2 || c.test_samples == 0) throw ConfigError("toy demo needs at least two samples and a test set");
  if (c.grid_resolution < 2) throw ConfigError("toy.grid_resolution must be at least 2");
  if (!(c.network.dropout >= 0.0 && c.network.dropout < 1.0)) throw ConfigError("toy.dropout must lie in [0, 1)");
  return c;
}

std::vector<double> toy_accuracy(const MlpModel& model, const TwoMoons& moons) {
  const auto truth = toy_ground_truth(moons);
  const Matrix p = predict_all_actions(model, moons.points, 2);
  std::vector<double> acc(2, 0.0);
  for (std::size_t i = 0; i < moons.type.size(); ++i)
    for (std::size_t a = 0; a < 2; ++a) acc[a] += argmax(p.row(i * 2 + a)) == truth.labels(i, a);
  for (double& v : acc) v /= static_cast<double>(moons.type.size());
  return acc;
}

ToyDemoResult toy_demo(const ToyDemoConfig& config) {
  ToyDemoResult r;
  Prng root(config.seed);
  Prng data_rng = root.split(1);
  r.moons = two_moons(config.samples, config.noise, data_rng);
  r.data = toy_bandit(r.moons, data_rng);
  r.test_moons = two_moons(config.test_samples, config.noise, data_rng);

  double lo[2] = {r.moons.points(0, 0), r.moons.points(0, 1)}, hi[2] = {lo[0], lo[1]};
  for (std::size_t i = 0; i < r.moons.type.size(); ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      lo[c] = std::min(lo[c], r.moons.points(i, c));
      hi[c] = std::max(hi[c], r.moons.points(i, c));
    }
  const std::size_t res = config.grid_resolution;
  r.grid = Matrix(res * res, 2);
  for (std::size_t u = 0; u < res; ++u)
    for (std::size_t v = 0; v < res; ++v) {
      const double fu = static_cast<double>(u) / static_cast<double>(res - 1);
      const double fv = static_cast<double>(v) / static_cast<double>(res - 1);
      r.grid(u * res + v, 0) = lo[0] - config.grid_margin + fu * (hi[0] - lo[0] + 2 * config.grid_margin);
      r.grid(u * res + v, 1) = lo[1] - config.grid_margin + fv * (hi[1] - lo[1] + 2 * config.grid_margin);
    }

  auto wanted = [&](std::size_t it) {
    return std::find(config.snapshots.begin(), config.snapshots.end(), it) != config.snapshots.end();
  };
  auto snap = [&](std::size_t it, const MlpModel& model, const PseudolabelTable& table) {
    const Matrix p = predict_all_actions(model, r.grid, 2);
    ToySnapshot s{it, Matrix(res * res, 2), toy_accuracy(model, r.test_moons), table};
    for (std::size_t g = 0; g < res * res; ++g)
      for (std::size_t a = 0; a < 2; ++a) s.grid_purchase(g, a) = p(g * 2 + a, 1);
    r.snapshots.push_back(std::move(s));
  };

  BackboneConfig bc;
  bc.network = config.network;
  bc.train = config.dm_train;
  Prng dm_rng = root.split(2);
  const auto dm = train_dm(r.data, bc, dm_rng);
  r.dm_accuracy = toy_accuracy(dm.model, r.test_moons);
  if (wanted(0)) snap(0, dm.model, impute_pseudolabels(dm.model, r.data));

  CstConfig cc = config.cst;
  cc.on_outer_end = [&](std::size_t it, const MlpModel& model, const PseudolabelTable& table) {
    if (wanted(it)) snap(it, model, table);
  };
  Prng cst_rng = root.split(3);
  r.final_accuracy = toy_accuracy(cst_train(dm.model, r.data, cc, cst_rng).model, r.test_moons);
  return r;
}

void write_toy_demo(const ToyDemoResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("toy_grid.csv");
    f << "iteration,action,x0,x1,p_purchase,predicted\n";
    for (const auto& s : r.snapshots)
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t g = 0; g < r.grid.rows(); ++g) {
          const double p = s.grid_purchase(g, a);
          f << s.iteration << ',' << a << ',' << format_double(r.grid(g, 0)) << ',' << format_double(r.grid(g, 1)) << ','
            << format_double(p) << ',' << (p > 0.5 ? 1 : 0) << '\n';
        }
  }
  {
    auto f = open("toy_points.csv");
    f << "iteration,index,x0,x1,type,action,label,factual\n";
    for (const auto& s : r.snapshots)
      for (std::size_t i = 0; i < r.data.size(); ++i)
        for (std::size_t a = 0; a < 2; ++a)
          f << s.iteration << ',' << i << ',' << format_double(r.data.features(i, 0)) << ','
            << format_double(r.data.features(i, 1)) << ',' << r.moons.type[i] << ',' << a << ',' << s.table.labels(i, a)
            << ',' << (s.table.is_factual(i, a) ? 1 : 0) << '\n';
  }
  {
    auto f = open("toy_accuracy.csv");
    f << "iteration,action,test_accuracy\n";
    for (const auto& s : r.snapshots)
      for (std::size_t a = 0; a < 2; ++a) f << s.iteration << ',' << a << ',' << format_double(s.test_accuracy[a]) << '\n';
  }
}

}  // namespace cst
