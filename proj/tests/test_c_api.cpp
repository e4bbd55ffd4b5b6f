#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "cst/cst_api.h"

namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(
[experiment]
seeds = 4
backbones = DM
[data]
kinds = D2
samples = 100
test_samples = 60
[backbone]
hidden = 8
epochs = 3
batch_size = 32
[cst]
outer_iterations = 1
epochs = 1
batch_size = 32
lambda = 1
power_iters = 1
)";

fs::path scratch(const char* name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("config errors surface as status codes with a message") {
  cst_config* config = nullptr;
  CHECK(cst_config_parse("[backbone]\nepochz = 1\n", &config) == CST_CONFIG_ERROR);
  CHECK(config == nullptr);
  CHECK(std::string(cst_last_error()).find("epochz") != std::string::npos);
  CHECK(cst_config_parse("[a\n", &config) == CST_CONFIG_ERROR);
  CHECK(std::string(cst_last_error()).find("line 1") != std::string::npos);
  CHECK(cst_config_load("/nonexistent/cst.ini", &config) == CST_CONFIG_ERROR);
  CHECK(cst_config_parse(nullptr, &config) == CST_CONFIG_ERROR);
}

TEST_CASE("config queries") {
  cst_config* config = nullptr;
  REQUIRE(cst_config_parse(kTiny, &config) == CST_OK);
  char hash[17];
  CHECK(cst_config_hash(config, hash, sizeof hash) == CST_OK);
  CHECK(std::strlen(hash) == 16);
  char small[4];
  CHECK(cst_config_hash(config, small, sizeof small) == CST_CONFIG_ERROR);

  size_t needed = 0;
  CHECK(cst_config_canonical(config, nullptr, 0, &needed) == CST_OK);
  std::string text(needed, '\0');
  CHECK(cst_config_canonical(config, text.data(), text.size(), nullptr) == CST_OK);
  CHECK(text.find("backbone.epochs=3") != std::string::npos);

  REQUIRE(cst_config_dataset_count(config) == 1);
  char label[16];
  CHECK(cst_config_dataset_label(config, 0, label, sizeof label) == CST_OK);
  CHECK(std::string(label) == "D2");
  CHECK(cst_config_dataset_label(config, 1, label, sizeof label) == CST_CONFIG_ERROR);
  CHECK(cst_config_seed_count(config) == 1);
  CHECK(cst_config_seed(config, 0) == 4);
  CHECK(cst_config_set_jobs(config, 0) == CST_CONFIG_ERROR);
  CHECK(cst_config_set_jobs(config, 3) == CST_OK);
  char same[17];
  CHECK(cst_config_hash(config, same, sizeof same) == CST_OK);
  CHECK(std::string(same) == hash);
  cst_config_free(config);
}

TEST_CASE("generate, save, train, evaluate and reload") {
  const auto dir = scratch("cst_test_c_api");
  cst_config* config = nullptr;
  REQUIRE(cst_config_parse(kTiny, &config) == CST_OK);

  cst_dataset *train = nullptr, *test = nullptr;
  REQUIRE(cst_dataset_generate(config, "D2", 4, &train, &test) == CST_OK);
  cst_dataset_info info{};
  REQUIRE(cst_dataset_info_get(train, &info) == CST_OK);
  CHECK(info.samples == 100);
  CHECK(info.features == 50);
  CHECK(info.actions == 5);
  CHECK(info.classes == 2);
  CHECK(info.has_ground_truth == 1);
  CHECK(cst_dataset_generate(config, "D3", 4, &train, &test) == CST_CONFIG_ERROR);

  REQUIRE(cst_dataset_save(test, (dir / "data" / "test.txt").c_str()) == CST_OK);
  cst_dataset* reloaded = nullptr;
  REQUIRE(cst_dataset_load((dir / "data" / "test.txt").c_str(), &reloaded) == CST_OK);

  cst_model* model = nullptr;
  CHECK(cst_train(config, train, "XYZ", "PL", 4, &model) == CST_CONFIG_ERROR);
  REQUIRE(cst_train(config, train, "DM", "PL+CVAT", 4, &model) == CST_OK);
  CHECK(cst_model_lambda(model) == 1.0);

  cst_metrics direct{}, via_file{};
  REQUIRE(cst_evaluate(model, test, &direct) == CST_OK);
  REQUIRE(cst_evaluate(model, reloaded, &via_file) == CST_OK);
  CHECK(direct.nll == via_file.nll);
  CHECK(direct.hamming == via_file.hamming);
  CHECK(direct.nll > 0.0);
  CHECK(std::isfinite(direct.factual_nll));

  REQUIRE(cst_model_save(model, (dir / "model.txt").c_str()) == CST_OK);
  cst_model* loaded = nullptr;
  REQUIRE(cst_model_load((dir / "model.txt").c_str(), &loaded) == CST_OK);
  CHECK(cst_model_lambda(loaded) == 1.0);
  cst_metrics again{};
  REQUIRE(cst_evaluate(loaded, test, &again) == CST_OK);
  CHECK(again.nll == direct.nll);

  std::vector<double> probs(60 * 5);
  REQUIRE(cst_predict(loaded, test, probs.data(), probs.size()) == CST_OK);
  for (double p : probs) CHECK((p > 0.0 && p < 1.0));
  CHECK(cst_predict(loaded, test, probs.data(), 10) == CST_CONFIG_ERROR);

  cst_model_free(loaded);
  cst_model_free(model);
  cst_dataset_free(reloaded);
  cst_dataset_free(train);
  cst_dataset_free(test);
  cst_config_free(config);
  fs::remove_all(dir);
}

TEST_CASE("experiment runs write csv files and report divergence") {
  const auto dir = scratch("cst_test_c_api_sweep");
  cst_config* config = nullptr;
  REQUIRE(cst_config_parse(kTiny, &config) == CST_OK);
  std::vector<std::string> messages;
  auto progress = [](const char* msg, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(msg); };
  size_t divergences = 99;
  REQUIRE(cst_run_experiment(config, (dir / "ok").c_str(), progress, &messages, &divergences) == CST_OK);
  CHECK(divergences == 0);
  CHECK(!messages.empty());
  for (const char* f : {"per_seed.csv", "aggregate.csv", "history.csv"}) CHECK(fs::exists(dir / "ok" / f));
  cst_config_free(config);

  std::string bad = std::string(kTiny) + "learning_rate = 1e200\n";
  REQUIRE(cst_config_parse(bad.c_str(), &config) == CST_OK);
  CHECK(cst_run_experiment(config, (dir / "bad").c_str(), nullptr, nullptr, &divergences) == CST_NUMERIC_ERROR);
  CHECK(divergences == 1);
  CHECK(std::string(cst_last_error()).find("diverged") != std::string::npos);
  CHECK(fs::exists(dir / "bad" / "per_seed.csv"));
  cst_config_free(config);
  fs::remove_all(dir);
}

TEST_CASE("toy demo through the C API") {
  const auto dir = scratch("cst_test_c_api_toy");
  cst_toy_summary summary{};
  REQUIRE(cst_toy_demo("[toy]\niterations = 1\nsnapshots = 0, 1\ngrid_resolution = 5\n", dir.c_str(), &summary) ==
          CST_OK);
  for (double a : summary.dm_accuracy) CHECK((a >= 0.0 && a <= 1.0));
  for (double a : summary.final_accuracy) CHECK((a >= 0.0 && a <= 1.0));
  CHECK(fs::exists(dir / "toy_grid.csv"));
  CHECK(cst_toy_demo("[toy]\nbogus = 1\n", nullptr, &summary) == CST_CONFIG_ERROR);
  fs::remove_all(dir);
}
