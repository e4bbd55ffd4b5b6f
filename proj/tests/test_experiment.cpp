#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cst/config.hpp"
#include "cst/error.hpp"
#include "cst/experiment.hpp"
#include "cst/toy_demo.hpp"

using namespace cst;

namespace {

const char* kTinySweep = R"(
[experiment]
seeds = 0, 1
jobs = 3
[data]
samples = 120
test_samples = 80
[backbone]
hidden = 8, 8
epochs = 3
batch_size = 32
[cst]
outer_iterations = 1
epochs = 1
batch_size = 32
lambda = 0.1, 1
power_iters = 1
)";

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_lines(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) n += line.find(needle) != std::string::npos;
  return n;
}

}  // namespace

TEST_CASE("ini parsing") {
  auto doc = IniDocument::parse("# comment\n[a]\nx = 1.5 ; trailing\nlist = 1, 2 ,3\nflag = true\n\n[b]\nname = hi there\n");
  CHECK(doc.get_double("a", "x", 0) == 1.5);
  CHECK(doc.get_sizes("a", "list", {}) == std::vector<std::size_t>{1, 2, 3});
  CHECK(doc.get_bool("a", "flag", false));
  CHECK(doc.get_string("b", "name", "") == "hi there");
  CHECK(doc.get_double("b", "missing", 7.0) == 7.0);
  CHECK_NOTHROW(doc.finish());
}

TEST_CASE("ini errors carry the line number") {
  auto line_of = [](const char* text) {
    try {
      IniDocument::parse(text);
    } catch (const FormatError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  CHECK(line_of("[a]\nx = 1\n[b\n") == 3);
  CHECK(line_of("[a]\nnot a pair\n") == 2);
  CHECK(line_of("x = 1\n") == 1);
  CHECK(line_of("[a]\nx = 1\nx = 2\n") == 3);

  auto doc = IniDocument::parse("[a]\n\nx = abc\n");
  try {
    doc.get_double("a", "x", 0);
    FAIL("expected a FormatError");
  } catch (const FormatError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("unknown keys and bad values are configuration errors") {
  CHECK_THROWS_AS(parse_experiment_config("[backbone]\nepochz = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[nowhere]\nx = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[data]\nsource = csv\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[experiment]\nmethods = PL, Magic\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[backbone]\ndropout = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[data]\nsource = libsvm\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[experiment]\nseeds =\n"), ConfigError);
}

TEST_CASE("defaults and overrides") {
  auto c = parse_experiment_config("");
  CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 2, 3, 4});
  CHECK(c.lambda_grid == std::vector<double>{0.01, 0.1, 1.0, 10.0});
  CHECK(c.backbone.network.hidden == std::vector<std::size_t>{128, 128});
  CHECK(c.backbone.network.dropout == 0.2);
  CHECK(dataset_labels(c) == std::vector<std::string>{"D1", "D2", "D3", "D4", "D5"});

  auto o = parse_experiment_config("[data]\nkinds = D1\nlogging = softmax\noverlap = 1, 2, 3\n");
  CHECK(dataset_labels(o) == std::vector<std::string>{"D1-o1", "D1-o2", "D1-o3"});
  CHECK(dataset_labels(parse_experiment_config("[data]\nsource = toy\n")) == std::vector<std::string>{"toy"});
}

TEST_CASE("config hash follows the resolved values, not the text") {
  const auto base = config_hash(parse_experiment_config(""));
  CHECK(base.size() == 16);
  CHECK(config_hash(parse_experiment_config("# only a comment\n[backbone]\nepochs = 300\n")) == base);
  CHECK(config_hash(parse_experiment_config("[backbone]\nepochs = 151\n")) != base);
  CHECK(config_hash(parse_experiment_config("[experiment]\nseeds = 0, 1\n")) != base);
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("csv fields are quoted only when needed") {
  CHECK(csv_field("D1") == "D1");
  CHECK(csv_field("a,b") == "\"a,b\"");
  CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
}

TEST_CASE("tiny sweep covers every cell and reruns byte-identically") {
  const auto config = parse_experiment_config(kTinySweep);
  const auto dir = std::filesystem::temp_directory_path() / "cst_test_experiment";
  std::filesystem::remove_all(dir);

  auto first = run_experiment(config);
  CHECK(first.divergences.empty());
  CHECK(first.rows.size() == 5 * 3 * 3 * 2);
  CHECK(first.reports.size() == 45);
  write_results(first, dir / "a");

  auto again = config;
  again.jobs = 1;
  write_results(run_experiment(again), dir / "b");

  const auto agg = slurp(dir / "a" / "aggregate.csv");
  CHECK(agg == slurp(dir / "b" / "aggregate.csv"));
  CHECK(slurp(dir / "a" / "per_seed.csv") == slurp(dir / "b" / "per_seed.csv"));
  CHECK(slurp(dir / "a" / "history.csv") == slurp(dir / "b" / "history.csv"));
  CHECK(count_lines(agg, ",nll,") == 45);
  CHECK(count_lines(agg, ",hamming,") == 45);
  CHECK(count_lines(agg, ",best_action_accuracy,") == 45);
  CHECK(agg.rfind("dataset,backbone,method,metric,mean,stderr,seeds,config_hash\n", 0) == 0);

  for (const auto& row : first.rows) {
    if (row.method == "PL+CVAT") CHECK((row.lambda == 0.1 || row.lambda == 1.0));
    if (row.method != "PL+CVAT") CHECK(row.lambda == 0.0);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("single fits reproduce the matching sweep rows") {
  auto config = parse_experiment_config(kTinySweep);
  config.data.kinds = {DemandKind::D2};
  config.seeds = {1};
  const auto result = run_experiment(config);
  const auto data = generate_datasets(config, "D2", 1);
  CHECK_THROWS_AS(generate_datasets(config, "D9", 1), ConfigError);

  for (const auto& row : result.rows) {
    auto fit = train_single(config, data.train, parse_backbone_kind(row.backbone), parse_method(row.method), 1);
    const auto metrics = evaluate(fit.model, data.test);
    CAPTURE(row.backbone);
    CAPTURE(row.method);
    CHECK(fit.lambda == row.lambda);
    CHECK(metrics.nll == row.metrics.nll);
    CHECK(metrics.hamming == row.metrics.hamming);
  }
}

TEST_CASE("numeric divergence keeps partial results") {
  auto config = parse_experiment_config(kTinySweep);
  config.data.kinds = {DemandKind::D1};
  config.seeds = {0};
  config.lambda_grid = {1.0};
  config.cst.train.adam.learning_rate = 1e200;
  const auto result = run_experiment(config);
  CHECK(result.divergences.size() == 1);
  CHECK(result.rows.size() >= 1);
  for (const auto& row : result.rows) CHECK(row.method == "Backbone");
}

TEST_CASE("toy demo config, snapshots and plot files") {
  CHECK_THROWS_AS(parse_toy_demo_config("[toy]\nsnapshotz = 1\n"), ConfigError);
  auto c = parse_toy_demo_config("[toy]\nseed = 3\niterations = 2\nsnapshots = 0, 2\ngrid_resolution = 7\n");
  CHECK(c.cst.outer_iterations == 2);
  CHECK(c.cst.lambda_cvat == 1.0);
  CHECK(c.network.dropout == 0.5);

  const auto r = toy_demo(c);
  REQUIRE(r.snapshots.size() == 2);
  CHECK(r.snapshots[0].iteration == 0);
  CHECK(r.snapshots[1].iteration == 2);
  CHECK(r.grid.rows() == 49);
  CHECK(r.data.size() == 50);
  CHECK(r.test_moons.points.rows() == 500);
  for (const auto& s : r.snapshots) {
    CHECK(s.grid_purchase.rows() == 49);
    CHECK(s.test_accuracy.size() == 2);
    for (std::size_t i = 0; i < r.data.size(); ++i)
      CHECK(s.table.labels(i, r.data.actions[i]) == r.data.outcomes[i]);
  }
  CHECK(toy_demo(c).snapshots.back().grid_purchase == r.snapshots.back().grid_purchase);

  const auto dir = std::filesystem::temp_directory_path() / "cst_test_toy";
  std::filesystem::remove_all(dir);
  write_toy_demo(r, dir);
  const auto grid = slurp(dir / "toy_grid.csv");
  CHECK(grid.rfind("iteration,action,x0,x1,p_purchase,predicted\n", 0) == 0);
  std::size_t lines = 0;
  for (char ch : grid) lines += ch == '\n';
  CHECK(lines == 1 + 2 * 2 * 49);
  CHECK(slurp(dir / "toy_accuracy.csv").rfind("iteration,action,test_accuracy\n", 0) == 0);
  CHECK(std::filesystem::exists(dir / "toy_points.csv"));
  std::filesystem::remove_all(dir);
}
