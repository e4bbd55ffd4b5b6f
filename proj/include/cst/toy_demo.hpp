#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include "cst/backbones.hpp"
#include "cst/cst.hpp"
#include "cst/synthdata.hpp"

namespace cst {

struct ToyDemoConfig {
  std::uint64_t seed = 0;
  std::size_t samples = 50;
  std::size_t test_samples = 500;
  double noise = 0.1;
  NetworkShape network{.hidden = {16, 16}, .leaky_slope = 0.01, .dropout = 0.5, .dropout_from = 1};
  TrainConfig dm_train{.epochs = 300, .batch_size = 0, .adam = {.learning_rate = 1e-2}};
  CstConfig cst{};  // outer_iterations = 10 and lambda = 1 by default
  std::size_t grid_resolution = 100;
  double grid_margin = 0.5;
  std::vector<std::size_t> snapshots{0, 1, 10};

  ToyDemoConfig();
};

ToyDemoConfig parse_toy_demo_config(std::string_view text);

struct ToySnapshot {
  std::size_t iteration = 0;          // 0 = direct method
  Matrix grid_purchase;               // grid_resolution^2 x 2, P(r = 1 | grid point, a)
  std::vector<double> test_accuracy;  // per action, argmax vs ground truth on the test moons
  PseudolabelTable table;             // labels the next retraining round sees
};

struct ToyDemoResult {
  TwoMoons moons;
  BanditDataset data;
  TwoMoons test_moons;
  Matrix grid;  // grid_resolution^2 x 2, x0-major
  std::vector<ToySnapshot> snapshots;
  std::vector<double> dm_accuracy;     // per action, before self-training
  std::vector<double> final_accuracy;  // per action, after the last iteration
};

ToyDemoResult toy_demo(const ToyDemoConfig& config);

// toy_grid.csv, toy_points.csv, toy_accuracy.csv
void write_toy_demo(const ToyDemoResult& result, const std::filesystem::path& dir);

// Per-action argmax accuracy against the deterministic outcome table.
std::vector<double> toy_accuracy(const MlpModel& model, const TwoMoons& moons);

}  // namespace cst
