#pragma once

#include <map>
#include <string>
#include <vector>

#include "hessalign/environments.hpp"
#include "hessalign/model.hpp"

namespace hessalign {

struct AttackConfig {
    double delta = 0.1;     // Euclidean ball radius around the trained head
    double ascent_lr = 0.1;
    int ascent_steps = 10;
    int rounds = 10;

    void validate() const;
};

struct AttackRound {
    double gap = 0.0;     // L_i - L_j after the round's ascent
    double radius = 0.0;  // |theta - theta*|
};

struct AttackResult {
    double worst_gap = 0.0;  // running max over rounds
    double test_accuracy_at_worst = 0.0;
    std::vector<AttackRound> trajectory;
};

// Projected-ascent transferability probe. Each round re-selects the
// max-loss/min-loss train environments, ascends the classifier head on their
// loss gap (feature extractor frozen), and projects back onto the delta-ball
// around the trained head after every step.
AttackResult transfer_attack(const Model& model, const EnvironmentSet& envs, const AttackConfig& cfg);

struct FgsmPoint {
    double epsilon = 0.0;
    double accuracy = 0.0;
    double loss = 0.0;
};

// x' = x + eps * sign(grad_x loss), clipped to the batch's value range;
// eps = 0 reproduces evaluate() bitwise.
std::vector<FgsmPoint> fgsm_eval(const Model& model, const Batch& batch, const std::vector<double>& epsilons);

struct MetricStats {
    double mean = 0.0;
    double std_dev = 0.0;  // population std
};

// Per-metric mean and population std over run summaries; keys must agree
// across runs.
std::map<std::string, MetricStats> aggregate_runs(const std::vector<std::map<std::string, double>>& summaries);

}  // namespace hessalign
