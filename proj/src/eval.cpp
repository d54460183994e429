#include "hessalign/eval.hpp"

#include <algorithm>
#include <cmath>

#include "hessalign/head_calculus.hpp"

namespace hessalign {

void AttackConfig::validate() const {
    if (delta < 0.0) throw std::invalid_argument("delta must be >= 0");
    if (ascent_lr <= 0.0) throw std::invalid_argument("ascent_lr must be > 0");
    if (ascent_steps < 1) throw std::invalid_argument("ascent_steps must be >= 1");
    if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
}

namespace {

Tensor extract_features(const Model& model, const Tensor& inputs) {
    Tensor h = inputs;
    for (const Layer& l : model.extractor.layers) {
        h = kernels::add(kernels::matmul(h, l.W, false, false), l.b);
        if (l.act == Activation::Relu) h = kernels::relu(h);
    }
    return h;
}

Model head_only(const ClassifierHead& head) {
    Model m;
    m.head = head;
    return m;
}

}  // namespace

AttackResult transfer_attack(const Model& model, const EnvironmentSet& envs, const AttackConfig& cfg) {
    cfg.validate();
    if (envs.train.size() < 2) throw std::invalid_argument("transfer_attack: need at least two environments");

    // Frozen extractor: features computed once per environment.
    std::vector<Batch> feat;
    for (const EnvBatch& e : envs.train) feat.push_back({extract_features(model, e.batch.inputs), e.batch.labels});
    Batch test_feat{extract_features(model, envs.test.batch.inputs), envs.test.batch.labels};

    int64_t c = model.head.classes(), d = model.head.features();
    Tensor star = model.head.flat();
    Tensor theta = star;

    auto project = [&](Tensor& th) {
        double r2 = 0.0;
        for (int64_t i = 0; i < th.numel(); ++i) {
            double dv = th.data[static_cast<size_t>(i)] - star.data[static_cast<size_t>(i)];
            r2 += dv * dv;
        }
        double r = std::sqrt(r2);
        if (r > cfg.delta) {
            double s = cfg.delta / r;
            for (int64_t i = 0; i < th.numel(); ++i)
                th.data[static_cast<size_t>(i)] =
                    star.data[static_cast<size_t>(i)] +
                    s * (th.data[static_cast<size_t>(i)] - star.data[static_cast<size_t>(i)]);
            return cfg.delta;
        }
        return r;
    };

    auto env_loss = [&](const Tensor& th, size_t e) {
        return forward_reference(head_only(ClassifierHead::from_flat(th, c, d)), feat[e]).loss;
    };

    AttackResult res;
    bool have_worst = false;
    Tensor worst_theta = theta;
    for (int round = 0; round < cfg.rounds; ++round) {
        size_t i = 0, j = 0;
        double li = -1e300, lj = 1e300;
        for (size_t e = 0; e < feat.size(); ++e) {
            double l = env_loss(theta, e);
            if (l > li) { li = l; i = e; }
            if (l < lj) { lj = l; j = e; }
        }
        double radius = 0.0;
        for (int s = 0; s < cfg.ascent_steps; ++s) {
            ClassifierHead h = ClassifierHead::from_flat(theta, c, d);
            Model hm = head_only(h);
            ForwardResult fi = forward_reference(hm, feat[i]);
            ForwardResult fj = forward_reference(hm, feat[j]);
            Tensor gi = head_grad(fi.features, fi.probs, feat[i].labels).flat();
            Tensor gj = head_grad(fj.features, fj.probs, feat[j].labels).flat();
            for (int64_t k = 0; k < theta.numel(); ++k)
                theta.data[static_cast<size_t>(k)] +=
                    cfg.ascent_lr * (gi.data[static_cast<size_t>(k)] - gj.data[static_cast<size_t>(k)]);
            radius = project(theta);
        }
        double gap = env_loss(theta, i) - env_loss(theta, j);
        res.trajectory.push_back({gap, radius});
        if (!have_worst || gap > res.worst_gap) {
            res.worst_gap = gap;
            worst_theta = theta;
            have_worst = true;
        }
    }
    res.test_accuracy_at_worst =
        evaluate(head_only(ClassifierHead::from_flat(worst_theta, c, d)), test_feat).accuracy;
    return res;
}

std::vector<FgsmPoint> fgsm_eval(const Model& model, const Batch& batch, const std::vector<double>& epsilons) {
    validate_batch(batch);
    for (double e : epsilons)
        if (e < 0.0) throw std::invalid_argument("fgsm_eval: epsilon must be >= 0");

    Tape tape;
    NodeId x = tape.leaf(batch.inputs, true);
    NodeId y = tape.constant(batch.labels);
    TapedModel tm = stage_params(tape, model);
    ForwardNodes fn = forward_on_tape(tape, tm, x, y);
    std::vector<NodeId> wrt{x};
    GradMap gm = tape.backward(fn.loss, nullptr, &wrt);
    Tensor gx = gm.count(x) ? gm.at(x) : Tensor::zeros(batch.inputs.shape);

    double lo = *std::min_element(batch.inputs.data.begin(), batch.inputs.data.end());
    double hi = *std::max_element(batch.inputs.data.begin(), batch.inputs.data.end());

    std::vector<FgsmPoint> out;
    for (double eps : epsilons) {
        Batch adv{batch.inputs, batch.labels};
        if (eps != 0.0) {
            for (size_t i = 0; i < adv.inputs.data.size(); ++i) {
                double g = gx.data[i];
                double sgn = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
                adv.inputs.data[i] = std::clamp(adv.inputs.data[i] + eps * sgn, lo, hi);
            }
        }
        EvalResult ev = evaluate(model, adv);
        out.push_back({eps, ev.accuracy, ev.loss});
    }
    return out;
}

std::map<std::string, MetricStats> aggregate_runs(const std::vector<std::map<std::string, double>>& summaries) {
    if (summaries.empty()) throw std::invalid_argument("aggregate_runs: need at least one run");
    for (const auto& s : summaries)
        if (s.size() != summaries.front().size())
            throw std::invalid_argument("aggregate_runs: summaries disagree on metric keys");
    std::map<std::string, MetricStats> out;
    double n = static_cast<double>(summaries.size());
    for (const auto& [key, v0] : summaries.front()) {
        double mean = 0.0;
        for (const auto& s : summaries) {
            auto it = s.find(key);
            if (it == s.end()) throw std::invalid_argument("aggregate_runs: missing metric " + key);
            mean += it->second;
        }
        mean /= n;
        double var = 0.0;
        for (const auto& s : summaries) {
            double dv = s.at(key) - mean;
            var += dv * dv;
        }
        out[key] = {mean, std::sqrt(var / n)};
    }
    return out;
}

}  // namespace hessalign
