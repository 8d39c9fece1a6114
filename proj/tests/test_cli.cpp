#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "hesscope/errors.hpp"
#include "hesscope/experiment.hpp"
#include "hesscope/random.hpp"
#include "test_support.hpp"

using namespace hesscope;
namespace t = hesscope::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json small_config() {
  return json::parse(R"({
    "model": {"architecture": "mlp", "channels": 1, "height": 8, "width": 8, "classes": 2, "hidden": [16]},
    "train": {"epochs": 3, "lr": 0.01, "batch_size": 32, "optimizer": "adam", "seed": 3, "checkpoint_every": 1},
    "data": {
      "a": {"format": "raw", "path": "blobs_a.llad"},
      "b": {"format": "raw", "path": "blobs_b.llad", "shift": {"seed": 2, "ops": [{"op": "invert_contrast"}]}}
    },
    "landscape": {"range": 1, "steps": 4, "batch_size": 32},
    "hesd": {"lanczos_steps": 12, "n_hes": 2, "batch_size": 32},
    "criteria": {"n_hes": 2, "batch_count": 2, "batch_size": 32},
    "output_dir": "out"
  })");
}

/// Scratch directory holding the blob datasets and a config file.
fs::path setup(const std::string& name, const json& cfg = small_config()) {
  const fs::path dir = t::scratch_dir(name);
  write_raw(t::blob_fixture(256, 5), dir / "blobs_a.llad");
  write_raw(t::blob_fixture(128, 9), dir / "blobs_b.llad");
  std::ofstream(dir / "config.json") << cfg.dump(2);
  return dir;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("config round trip and strict keys") {
  const fs::path dir = setup("cli_roundtrip");
  const ExperimentConfig cfg = load_experiment_config(dir / "config.json");
  CHECK(cfg.model.hidden == std::vector<int64_t>{16});
  CHECK(cfg.data_b.has_value());
  const json once = to_json(cfg);
  const json twice = to_json(experiment_config_from_json(once, dir));
  CHECK(once == twice);

  json bad = small_config();
  bad["landscape"]["rnage"] = 3;
  CHECK_THROWS_AS(experiment_config_from_json(bad, dir), ConfigError);
  bad = small_config();
  bad["directions"] = {{"source", "sideways"}};
  CHECK_THROWS_AS(experiment_config_from_json(bad, dir), ConfigError);
}

TEST_CASE("dotted overrides") {
  json j = small_config();
  apply_override(j, "landscape.steps=10");
  apply_override(j, "directions.source=hessian");
  apply_override(j, "criteria.exponents=[2,1]");
  CHECK(j["landscape"]["steps"] == 10);
  CHECK(j["directions"]["source"] == "hessian");
  CHECK(j["criteria"]["exponents"] == json::array({2, 1}));
  CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ConfigError);

  const fs::path dir = setup("cli_overrides");
  const ExperimentConfig cfg = load_experiment_config(dir / "config.json", {"landscape.range=2.5", "output_dir=elsewhere"});
  CHECK(cfg.landscape.grid.range == 2.5);
  CHECK(cfg.command_dir("landscape") == dir / "elsewhere" / "landscape");
}

TEST_CASE("exit codes") {
  const fs::path dir = setup("cli_exit");
  CHECK(run_cli("train", dir / "missing.json", {}) == 2);
  CHECK(run_cli("train", dir / "config.json", {"model.widht=3"}) == 2);
  CHECK(run_cli("train", dir / "config.json", {"data.a.path=nothere.llad"}) == 2);
  CHECK(run_cli("fly", dir / "config.json", {}) == 2);
  // No checkpoint at all is a configuration problem.
  CHECK(run_cli("landscape", dir / "config.json", {}) == 2);
  // A corrupt checkpoint is a runtime failure.
  std::ofstream(dir / "broken.llac") << "not a checkpoint";
  CHECK(run_cli("landscape", dir / "config.json", {"checkpoint=broken.llac"}) == 3);

  Dataset three = t::blob_fixture(64, 4);
  three.labels[0] = 2;
  three.class_count = 3;
  write_raw(three, dir / "three.llad");
  CHECK(run_cli("train", dir / "config.json", {"data.a.path=three.llad"}) == 2);
  CHECK_THROWS_AS(cmd_train(load_experiment_config(dir / "config.json", {"data.a.path=three.llad"})), ClassCountMismatch);
  // More model classes than data classes is fine.
  CHECK(run_cli("info", dir / "config.json", {"model.classes=3"}) == 0);
}

TEST_CASE("train, landscape, hesd, criteria, genexp end to end") {
  const fs::path dir = setup("cli_e2e");
  const fs::path config = dir / "config.json";
  REQUIRE(run_cli("train", config, {}) == 0);
  const fs::path train_dir = dir / "out" / "train";
  CHECK(list_checkpoints(train_dir / "checkpoints").size() == 3);
  const std::string history = slurp(train_dir / "history.csv");
  CHECK(history.rfind("epoch,loss,train_acc\n", 0) == 0);
  const Checkpoint last = load_checkpoint(train_dir / "checkpoints" / checkpoint_filename(3));
  CHECK(last.train_accuracy >= 0.99);

  REQUIRE(run_cli("landscape", config, {}) == 0);
  REQUIRE(run_cli("hesd", config, {}) == 0);
  REQUIRE(run_cli("criteria", config, {}) == 0);
  REQUIRE(run_cli("genexp", config, {}) == 0);

  SUBCASE("landscape center is the checkpoint loss on the landscape batch") {
    const ExperimentConfig cfg = load_experiment_config(config);
    const Dataset a = load_dataset(cfg, cfg.data_a, Split::train);
    const Batch batch = a.gather(batch_indices(a.size(), 32, derive_seed(0, {5})).front());
    const double expected = loss(last.spec, last.params, batch, Mode::eval);
    std::istringstream csv(slurp(dir / "out" / "landscape" / "landscape.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "i,j,a,b,loss,finite");
    bool found = false;
    while (std::getline(csv, line)) {
      if (line.rfind("2,2,", 0) != 0) continue;
      found = true;
      std::vector<std::string> f;
      std::stringstream ls(line);
      for (std::string s; std::getline(ls, s, ',');) f.push_back(s);
      CHECK(std::stod(f[4]) == doctest::Approx(expected).epsilon(1e-8));
    }
    CHECK(found);
  }

  SUBCASE("output documents") {
    const json hesd = json::parse(slurp(dir / "out" / "hesd" / "hesd.json"));
    CHECK(hesd.contains("lambda_min"));
    CHECK(hesd["runs"].size() == 2);
    const json crit = json::parse(slurp(dir / "out" / "criteria" / "criteria.json"));
    CHECK(crit["samples"] == 4);
    CHECK(fs::exists(dir / "out" / "criteria" / "criteria_b.csv"));
    const json summary = json::parse(slurp(dir / "out" / "genexp" / "summary.json"));
    CHECK(summary["checkpoints"] == 3);
    std::istringstream gen(slurp(dir / "out" / "genexp" / "genexp.csv"));
    int rows = 0;
    for (std::string line; std::getline(gen, line);) ++rows;
    CHECK(rows == 4);
    // Inverted contrast flips the blob rule, so the shifted set is mostly misclassified.
    CHECK(summary["gen_acc"].get<double>() < summary["train_acc"].get<double>());

    const json manifest = json::parse(slurp(dir / "out" / "landscape" / "manifest.json"));
    CHECK(manifest["command"] == "landscape");
    bool has_data = false;
    for (const auto& in : manifest["inputs"]) {
      if (in["path"] == "blobs_a.llad") {
        has_data = true;
        CHECK(in["fnv1a64"] == fnv1a64_file(dir / "blobs_a.llad"));
      }
    }
    CHECK(has_data);
  }

  SUBCASE("reruns are byte-identical") {
    const auto before = tree(dir / "out");
    for (const char* c : {"train", "landscape", "hesd", "criteria", "genexp"}) REQUIRE(run_cli(c, config, {}) == 0);
    const auto after = tree(dir / "out");
    CHECK(before.size() == after.size());
    for (const auto& [name, bytes] : before) {
      INFO(name);
      CHECK((after.count(name) && after.at(name) == bytes));
    }
  }
}

TEST_CASE("genexp trains when no checkpoints exist") {
  const fs::path dir = setup("cli_genexp_fresh");
  REQUIRE(run_cli("genexp", dir / "config.json", {"train.epochs=2"}) == 0);
  CHECK(list_checkpoints(dir / "out" / "train" / "checkpoints").size() == 2);
  const json summary = json::parse(slurp(dir / "out" / "genexp" / "summary.json"));
  CHECK(summary["final_epoch"] == 2);
}

TEST_CASE("fnv1a64 reference values") {
  const fs::path dir = t::scratch_dir("cli_fnv");
  std::ofstream(dir / "empty", std::ios::binary).close();
  std::ofstream(dir / "a", std::ios::binary) << "a";
  CHECK(fnv1a64_file(dir / "empty") == "cbf29ce484222325");
  CHECK(fnv1a64_file(dir / "a") == "af63dc4c8601ec8c");
}
