#pragma once

#include <string>
#include <vector>

#include "hessalign/environments.hpp"
#include "hessalign/eval.hpp"
#include "hessalign/training.hpp"

namespace hessalign {

inline constexpr const char* kVersion = "0.1.0";

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class DatasetType { Synthetic, CmnistIdx };

struct DatasetConfig {
    DatasetType type = DatasetType::Synthetic;
    std::vector<EnvironmentSpec> train;
    EnvironmentSpec test;
    std::string images_path;  // CmnistIdx only
    std::string labels_path;
};

struct AttackSettings {
    std::vector<double> deltas{0.01, 0.1, 1.0};
    AttackConfig base;
};

struct FgsmSettings {
    std::vector<double> epsilons{0.0, 0.05, 0.1, 0.2};
};

// Full experiment description. Parsing is strict: unknown keys anywhere in
// the document are rejected with the offending key named.
struct ExperimentConfig {
    DatasetConfig dataset;
    std::vector<int64_t> layer_sizes{4, 16, 2};
    TrainConfig train;
    std::string output_dir = "out";
    int run_count = 1;
    uint64_t seed_base = 0;
    AttackSettings attack;
    FgsmSettings fgsm;

    void validate() const;
};

ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

// Dataset for one run: environment seeds are offset deterministically by the
// run seed so repeats are independent but reproducible.
EnvironmentSet build_dataset(const ExperimentConfig& cfg, uint64_t run_seed);

}  // namespace hessalign
