#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "hessalign/config.hpp"

using namespace hessalign;

namespace {

const char* kBase = R"({
  "dataset": {
    "type": "synthetic",
    "train": [
      {"name": "e0", "n_samples": 32, "label_noise": 0.25, "color_correlation": 0.9, "seed": 1},
      {"name": "e1", "n_samples": 32, "label_noise": 0.25, "color_correlation": 0.8, "seed": 2}
    ],
    "test": {"name": "t", "n_samples": 32, "label_noise": 0.25, "color_correlation": 0.1, "seed": 3}
  },
  "model": {"layer_sizes": [4, 8, 2]},
  "train": {
    "steps": 40,
    "learning_rate": 0.01,
    "l2_weight": 0.001,
    "optimizer": "adam",
    "record_every": 5,
    "penalty": {
      "method": "hutchinson",
      "alpha": 1.0,
      "beta": 0.5,
      "anneal_step": 20,
      "post_anneal_value": 100.0,
      "hutchinson_samples": 7
    }
  },
  "output_dir": "out/test",
  "run_count": 2,
  "seed_base": 11,
  "attack": {"deltas": [0.1, 1.0], "rounds": 4},
  "fgsm": {"epsilons": [0.0, 0.1]}
})";

}  // namespace

TEST_CASE("full config parses with every field honored") {
    ExperimentConfig cfg = config_from_json(kBase);
    CHECK(cfg.dataset.type == DatasetType::Synthetic);
    REQUIRE(cfg.dataset.train.size() == 2);
    CHECK(cfg.dataset.train[1].color_correlation == 0.8);
    CHECK(cfg.dataset.test.color_correlation == 0.1);
    CHECK(cfg.layer_sizes == std::vector<int64_t>{4, 8, 2});
    CHECK(cfg.train.steps == 40);
    CHECK(cfg.train.optimizer == Optimizer::Adam);
    CHECK(cfg.train.penalty.method == Method::Hutchinson);
    CHECK(cfg.train.penalty.hutchinson_samples == 7);
    CHECK(cfg.train.penalty.anneal_step == 20);
    CHECK(cfg.train.penalty.post_anneal_value == 100.0);
    CHECK(cfg.run_count == 2);
    CHECK(cfg.seed_base == 11);
    CHECK(cfg.attack.deltas == std::vector<double>{0.1, 1.0});
    CHECK(cfg.attack.base.rounds == 4);
    CHECK(cfg.fgsm.epsilons == std::vector<double>{0.0, 0.1});
}

TEST_CASE("serialization round-trips through the parser") {
    ExperimentConfig cfg = config_from_json(kBase);
    std::string text = config_to_json(cfg);
    ExperimentConfig again = config_from_json(text);
    CHECK(config_to_json(again) == text);
    CHECK(again.train.penalty.hutchinson_samples == cfg.train.penalty.hutchinson_samples);
    CHECK(again.dataset.train[0].seed == cfg.dataset.train[0].seed);
}

TEST_CASE("unknown keys are rejected by name at every level") {
    std::string top = kBase;
    top.insert(top.rfind('}'), ", \"extra_knob\": 1");
    CHECK_THROWS_WITH_AS(config_from_json(top), doctest::Contains("extra_knob"), ConfigError);

    std::string nested = kBase;
    nested.replace(nested.find("\"steps\""), 7, "\"stepz\"");
    CHECK_THROWS_WITH_AS(config_from_json(nested), doctest::Contains("stepz"), ConfigError);

    std::string env = kBase;
    env.replace(env.find("\"label_noise\""), 13, "\"labelnoise\"");
    CHECK_THROWS_WITH_AS(config_from_json(env), doctest::Contains("labelnoise"), ConfigError);
}

TEST_CASE("invalid documents raise config errors") {
    CHECK_THROWS_AS(config_from_json("not json"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{}"), ConfigError);  // dataset required
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);

    std::string bad_method = kBase;
    bad_method.replace(bad_method.find("hutchinson\""), 10, "fishr");
    CHECK_THROWS(config_from_json(bad_method));

    std::string bad_type = kBase;
    bad_type.replace(bad_type.find("synthetic"), 9, "imagenet1");
    CHECK_THROWS_WITH_AS(config_from_json(bad_type), doctest::Contains("imagenet1"), ConfigError);

    std::string one_env = kBase;
    size_t second = one_env.find("{\"name\": \"e1\"");
    one_env.erase(one_env.rfind(',', second), one_env.find('}', second) - one_env.rfind(',', second) + 1);
    CHECK_THROWS_AS(config_from_json(one_env), ConfigError);

    std::string bad_noise = kBase;
    bad_noise.replace(bad_noise.find("0.25"), 4, "1.25");
    CHECK_THROWS_AS(config_from_json(bad_noise), ConfigError);

    std::string idx_missing = kBase;
    idx_missing.replace(idx_missing.find("synthetic"), 9, "cmnist_idx");
    CHECK_THROWS_WITH_AS(config_from_json(idx_missing), doctest::Contains("images"), ConfigError);
}

TEST_CASE("defaults apply when optional blocks are omitted") {
    ExperimentConfig cfg = config_from_json(R"({
      "dataset": {
        "train": [{"name": "a", "n_samples": 8}, {"name": "b", "n_samples": 8}],
        "test": {"name": "t", "n_samples": 8}
      }
    })");
    CHECK(cfg.layer_sizes == std::vector<int64_t>{4, 16, 2});
    CHECK(cfg.train.steps == 501);
    CHECK(cfg.train.penalty.method == Method::Erm);
    CHECK(cfg.run_count == 1);
    CHECK(cfg.attack.deltas == std::vector<double>{0.01, 0.1, 1.0});
    CHECK(cfg.fgsm.epsilons == std::vector<double>{0.0, 0.05, 0.1, 0.2});
}

TEST_CASE("config files load from disk") {
    auto path = std::filesystem::temp_directory_path() / "hessalign_test_config.json";
    {
        std::ofstream f(path);
        f << kBase;
    }
    ExperimentConfig cfg = load_config(path.string());
    CHECK(cfg.train.steps == 40);
    std::filesystem::remove(path);
}

TEST_CASE("run seeds offset the dataset deterministically") {
    ExperimentConfig cfg = config_from_json(kBase);
    EnvironmentSet a0 = build_dataset(cfg, 0);
    EnvironmentSet a0b = build_dataset(cfg, 0);
    EnvironmentSet a1 = build_dataset(cfg, 1);
    CHECK(a0.train[0].batch.inputs.data == a0b.train[0].batch.inputs.data);
    CHECK(a0.train[0].batch.inputs.data != a1.train[0].batch.inputs.data);
    CHECK(a0.train.size() == 2);
    CHECK(a0.test.name == "t");
}
