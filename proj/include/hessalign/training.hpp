#pragma once

#include <string>
#include <vector>

#include "hessalign/environments.hpp"
#include "hessalign/objectives.hpp"

namespace hessalign {

enum class Optimizer { Gd, Adam };

const char* optimizer_name(Optimizer o);
Optimizer optimizer_from_name(const std::string& s);

struct TrainConfig {
    int steps = 501;
    double learning_rate = 1e-3;
    double l2_weight = 1e-3;
    PenaltyConfig penalty;
    uint64_t seed = 0;
    Optimizer optimizer = Optimizer::Gd;
    int record_every = 1;
    // Divide the update by 1 + alpha_eff + beta_eff once the anneal kicks in,
    // keeping the step size sane under the 1 -> ~9e4 weight jump.
    bool rescale_after_anneal = true;

    void validate() const;
};

struct MetricsRecord {
    int step = 0;
    std::vector<double> env_loss;  // train environments, set order
    std::vector<double> env_accuracy;
    double test_loss = 0.0;
    double test_accuracy = 0.0;
    double gradient_penalty = 0.0;
    double hessian_penalty = 0.0;
    double hessian_distance = 0.0;  // exact |H_1 - H_2|_F, always closed form
    double wall_time = 0.0;  // seconds since training start; kept out of the
                             // deterministic CSV/JSON outputs
};

struct DivergenceError : std::runtime_error {
    int step;
    explicit DivergenceError(int s, const std::string& what)
        : std::runtime_error("divergence at step " + std::to_string(s) + ": " + what), step(s) {}
};

struct TrainResult {
    Model model;
    std::vector<MetricsRecord> records;
};

// Full-batch training of the configured objective with the anneal schedule.
// Metrics are recorded before the update at every record_every-th step and at
// the final step. Deterministic per (init, config).
TrainResult train(const EnvironmentSet& envs, const Model& init, const TrainConfig& config);

// Deterministic CSV: header + one row per record; excludes wall_time.
std::string metrics_to_csv(const std::vector<MetricsRecord>& records, const std::vector<std::string>& env_names);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records,
                       const std::vector<std::string>& env_names);

}  // namespace hessalign
