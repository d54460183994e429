#include "hessalign/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace hessalign {

const char* optimizer_name(Optimizer o) { return o == Optimizer::Gd ? "gd" : "adam"; }

Optimizer optimizer_from_name(const std::string& s) {
    if (s == "gd") return Optimizer::Gd;
    if (s == "adam") return Optimizer::Adam;
    throw std::invalid_argument("unknown optimizer: " + s);
}

void TrainConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
    if (l2_weight < 0.0) throw std::invalid_argument("l2_weight must be >= 0");
    if (record_every < 1) throw std::invalid_argument("record_every must be >= 1");
    penalty.validate();
}

namespace {

struct AdamState {
    std::vector<Tensor> m, v;
    int t = 0;
};

std::vector<Tensor*> param_tensors(Model& model) {
    std::vector<Tensor*> out;
    for (Layer& l : model.extractor.layers) {
        out.push_back(&l.W);
        out.push_back(&l.b);
    }
    out.push_back(&model.head.W);
    out.push_back(&model.head.b);
    return out;
}

std::vector<const Tensor*> grad_tensors(const ModelGrads& g) {
    std::vector<const Tensor*> out;
    for (const auto& [w, b] : g.layers) {
        out.push_back(&w);
        out.push_back(&b);
    }
    out.push_back(&g.head_W);
    out.push_back(&g.head_b);
    return out;
}

void apply_update(Model& model, const ModelGrads& grads, const TrainConfig& cfg, AdamState& adam) {
    std::vector<Tensor*> ps = param_tensors(model);
    std::vector<const Tensor*> gs = grad_tensors(grads);
    if (cfg.optimizer == Optimizer::Adam && adam.m.empty()) {
        for (Tensor* p : ps) {
            adam.m.push_back(Tensor::zeros(p->shape));
            adam.v.push_back(Tensor::zeros(p->shape));
        }
    }
    if (cfg.optimizer == Optimizer::Adam) ++adam.t;
    for (size_t k = 0; k < ps.size(); ++k) {
        Tensor& p = *ps[k];
        const Tensor& g = *gs[k];
        for (size_t i = 0; i < p.data.size(); ++i) {
            double gi = g.data[i] + cfg.l2_weight * p.data[i];
            if (cfg.optimizer == Optimizer::Gd) {
                p.data[i] -= cfg.learning_rate * gi;
            } else {
                constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                double& m = adam.m[k].data[i];
                double& v = adam.v[k].data[i];
                m = b1 * m + (1.0 - b1) * gi;
                v = b2 * v + (1.0 - b2) * gi * gi;
                double mh = m / (1.0 - std::pow(b1, adam.t));
                double vh = v / (1.0 - std::pow(b2, adam.t));
                p.data[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + eps);
            }
        }
    }
}

}  // namespace

TrainResult train(const EnvironmentSet& envs, const Model& init, const TrainConfig& config) {
    config.validate();
    if (envs.train.size() < 2) throw std::invalid_argument("train: need at least two train environments");
    for (const EnvBatch& e : envs.all()) validate_batch(e.batch);

    Model model = init;
    AdamState adam;
    RademacherStream probes(config.seed ^ 0x9e3779b97f4a7c15ull);
    const Method method = config.penalty.method;
    std::vector<MetricsRecord> records;
    auto t0 = std::chrono::steady_clock::now();

    for (int step = 0; step < config.steps; ++step) {
        double eff_a = config.penalty.effective_alpha(step);
        double eff_b = config.penalty.effective_beta(step);
        ObjectiveOptions opts;
        opts.compute_grads = true;
        opts.probe_stream = &probes;
        opts.hutchinson_samples = config.penalty.hutchinson_samples;
        if (config.rescale_after_anneal && step >= config.penalty.anneal_step)
            opts.grad_scale = 1.0 / (1.0 + eff_a + eff_b);

        ObjectiveResult obj;
        try {
            obj = compute_objective(model, envs.train, method, eff_a, eff_b, opts);
        } catch (const NonFiniteError& e) {
            throw DivergenceError(step, e.what());
        }
        if (!std::isfinite(obj.breakdown.total)) throw DivergenceError(step, "non-finite objective");

        if (step % config.record_every == 0 || step == config.steps - 1) {
            MetricsRecord rec;
            rec.step = step;
            for (const EnvBatch& e : envs.train) {
                EvalResult ev = evaluate(model, e.batch);
                rec.env_loss.push_back(ev.loss);
                rec.env_accuracy.push_back(ev.accuracy);
            }
            EvalResult te = evaluate(model, envs.test.batch);
            rec.test_loss = te.loss;
            rec.test_accuracy = te.accuracy;
            rec.gradient_penalty = obj.breakdown.gradient_term;
            rec.hessian_penalty = obj.breakdown.hessian_term;
            rec.hessian_distance = hessian_pair_distance(model, envs.train);
            rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            records.push_back(std::move(rec));
        }

        apply_update(model, obj.grads, config, adam);
    }
    return {std::move(model), std::move(records)};
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string metrics_to_csv(const std::vector<MetricsRecord>& records, const std::vector<std::string>& env_names) {
    std::string out = "step";
    for (const std::string& n : env_names) out += ",loss_" + n + ",acc_" + n;
    out += ",test_loss,test_accuracy,gradient_penalty,hessian_penalty,hessian_distance\n";
    for (const MetricsRecord& r : records) {
        if (r.env_loss.size() != env_names.size()) throw std::invalid_argument("metrics_to_csv: env count mismatch");
        out += std::to_string(r.step);
        for (size_t i = 0; i < env_names.size(); ++i)
            out += "," + fmt(r.env_loss[i]) + "," + fmt(r.env_accuracy[i]);
        out += "," + fmt(r.test_loss) + "," + fmt(r.test_accuracy) + "," + fmt(r.gradient_penalty) + "," +
               fmt(r.hessian_penalty) + "," + fmt(r.hessian_distance) + "\n";
    }
    return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records,
                       const std::vector<std::string>& env_names) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open metrics file for writing: " + path);
    f << metrics_to_csv(records, env_names);
}

}  // namespace hessalign
