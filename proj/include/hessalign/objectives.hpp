#pragma once

#include <string>
#include <vector>

#include "hessalign/estimators.hpp"
#include "hessalign/model.hpp"

namespace hessalign {

enum class Method { Erm, Irm, Vrex, GradVar, Hgp, Hutchinson, ExactHessian };

const char* method_name(Method m);
Method method_from_name(const std::string& s);

struct PenaltyConfig {
    double alpha = 1.0;  // Hessian-alignment weight
    double beta = 1.0;   // gradient-alignment weight
    int anneal_step = 0;
    double pre_anneal_value = 1.0;
    double post_anneal_value = 1.0;
    Method method = Method::Erm;
    int hutchinson_samples = 100;

    void validate() const;
    double anneal_value(int step) const { return step < anneal_step ? pre_anneal_value : post_anneal_value; }
    double effective_alpha(int step) const { return alpha * anneal_value(step); }
    double effective_beta(int step) const { return beta * anneal_value(step); }
};

struct ObjectiveBreakdown {
    double total = 0.0;
    double erm_term = 0.0;
    double hessian_term = 0.0;
    double gradient_term = 0.0;
    // Ordered by environment name (reduction order is fixed by sorting, so
    // values are independent of caller-side permutation).
    std::vector<double> per_env_losses;
};

struct ModelGrads {
    std::vector<std::pair<Tensor, Tensor>> layers;  // (dW, db)
    Tensor head_W;
    Tensor head_b;
};

struct EnvBatch {
    std::string name;
    Batch batch;
};

struct ObjectiveOptions {
    bool compute_grads = true;
    double grad_scale = 1.0;  // seed of the final backward pass
    RademacherStream* probe_stream = nullptr;  // required for Hutchinson
    int hutchinson_samples = 100;
};

struct ObjectiveResult {
    ObjectiveBreakdown breakdown;
    ModelGrads grads;
    bool degenerate_gradient = false;  // an HGP env hit the norm floor
};

// All penalty terms are normalized as (1/n) sum over environments so weights
// transfer across environment counts. Penalties act on classifier-head
// quantities but differentiate into every parameter. Slot conventions:
// hgp/hutchinson/exact_hessian fill hessian_term (weight alpha) and the
// shared gradient-variance term (weight beta); irm/vrex/gradvar report their
// single penalty as gradient_term (weight beta).
ObjectiveResult compute_objective(const Model& model, const std::vector<EnvBatch>& envs, Method method, double alpha,
                                  double beta, const ObjectiveOptions& opts = {});

ObjectiveBreakdown erm_objective(const Model& model, const std::vector<EnvBatch>& envs);
ObjectiveBreakdown hgp_objective(const Model& model, const std::vector<EnvBatch>& envs, const PenaltyConfig& cfg);
ObjectiveBreakdown hutchinson_objective(const Model& model, const std::vector<EnvBatch>& envs,
                                        const PenaltyConfig& cfg, RademacherStream& stream);
ObjectiveBreakdown irm_objective(const Model& model, const std::vector<EnvBatch>& envs, const PenaltyConfig& cfg);
ObjectiveBreakdown vrex_objective(const Model& model, const std::vector<EnvBatch>& envs, const PenaltyConfig& cfg);
ObjectiveBreakdown gradvar_objective(const Model& model, const std::vector<EnvBatch>& envs, const PenaltyConfig& cfg);

// Frobenius variance of the exact head Hessians across environments,
// sum_e |H_e - Hbar|_F^2 (so it equals |H_1 - H_2|_F^2 / 2 at n = 2). The
// tracked transferability diagnostic; unlike the trainable penalties it is
// not normalized by the environment count.
double exact_hessian_variance(const Model& model, const std::vector<EnvBatch>& envs);

// |H_1 - H_2|_F between the first two environments (the figure-style
// diagnostic); 0 when fewer than two environments.
double hessian_pair_distance(const Model& model, const std::vector<EnvBatch>& envs);

}  // namespace hessalign
