#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hessalign/objectives.hpp"

namespace hessalign {

// Correlation-shift benchmark environment. color_correlation is the
// probability that the color bit matches the label (a signed "-90%"
// correlation is encoded as match-probability 0.1).
struct EnvironmentSpec {
    std::string name;
    int64_t n_samples = 0;
    double label_noise = 0.25;
    double color_correlation = 0.9;  // match-probability
    double class_balance = 0.5;      // fraction of samples from class 0
    uint64_t seed = 0;

    void validate() const;
};

struct EnvironmentSet {
    std::vector<EnvBatch> train;
    EnvBatch test;

    std::vector<EnvBatch> all() const;
};

// Synthetic two-bit proxy: per sample, label from class_balance, an invariant
// bit equal to the label except with probability label_noise, a color bit
// equal to the label except with probability (1 - color_correlation); input is
// [one-hot(invariant), one-hot(color)] with multiplicative 1+N(0, 0.1^2)
// noise on the active coordinates. Deterministic per spec seed.
EnvironmentSet generate_synthetic(const std::vector<EnvironmentSpec>& train_specs, const EnvironmentSpec& test_spec);

Batch generate_environment(const EnvironmentSpec& spec);

struct MnistData {
    int64_t n = 0;
    std::vector<double> pixels;  // n x 28 x 28, values in [0, 1]
    std::vector<uint8_t> labels;  // digits 0-9
};

// Byte-exact IDX parse (magic 0x00000803 images / 0x00000801 labels,
// big-endian dimensions). Errors name the file and byte offset.
MnistData load_mnist_idx(const std::string& images_path, const std::string& labels_path);

// Paper-faithful CMNIST from real digits: classes are digit<5 vs digit>=5,
// label noise per spec, color realized as one of two channels zeroed,
// 28x28 -> 14x14 by 2x2 mean pooling, flattened to 392 dims. Environments
// consume disjoint slices of the digit pool in order.
EnvironmentSet build_cmnist(const MnistData& data, const std::vector<EnvironmentSpec>& train_specs,
                            const EnvironmentSpec& test_spec);

// Versioned JSON dataset file (includes the match-probability sign
// convention in metadata).
void save_environment_set(const EnvironmentSet& set, const std::string& path);
EnvironmentSet load_environment_set(const std::string& path);

}  // namespace hessalign
