#include "hessalign/objectives.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace hessalign {

const char* method_name(Method m) {
    switch (m) {
        case Method::Erm: return "erm";
        case Method::Irm: return "irm";
        case Method::Vrex: return "vrex";
        case Method::GradVar: return "gradvar";
        case Method::Hgp: return "hgp";
        case Method::Hutchinson: return "hutchinson";
        case Method::ExactHessian: return "exact_hessian";
    }
    return "unknown";
}

Method method_from_name(const std::string& s) {
    static const std::pair<const char*, Method> table[] = {
        {"erm", Method::Erm},       {"irm", Method::Irm},
        {"vrex", Method::Vrex},     {"gradvar", Method::GradVar},
        {"hgp", Method::Hgp},       {"hutchinson", Method::Hutchinson},
        {"exact_hessian", Method::ExactHessian},
    };
    for (const auto& [n, m] : table)
        if (s == n) return m;
    throw std::invalid_argument("unknown method: " + s);
}

void PenaltyConfig::validate() const {
    if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("penalty weights must be >= 0");
    if (anneal_step < 0) throw std::invalid_argument("anneal_step must be >= 0");
    if (hutchinson_samples < 1) throw std::invalid_argument("hutchinson_samples must be >= 1");
}

namespace {

// Fixed-order helpers for building taped reductions.

NodeId scale_node(Tape& t, NodeId x, double s) { return t.record(Op::Mul, {x, t.constant(Tensor::scalar(s))}); }

NodeId sub_node(Tape& t, NodeId a, NodeId b) { return t.record(Op::Add, {a, scale_node(t, b, -1.0)}); }

NodeId mean_of(Tape& t, const std::vector<NodeId>& xs) {
    NodeId acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) acc = t.record(Op::Add, {acc, xs[i]});
    return scale_node(t, acc, 1.0 / static_cast<double>(xs.size()));
}

NodeId sumsq_node(Tape& t, NodeId x) {
    if (t.value(x).rank() == 1) return t.record(Op::Dot, {x, x});
    return t.record(Op::Sum, {t.record(Op::Square, {x})}, {.axis = -1});
}

// (1/n) sum_e |x_e - xbar|^2, the alignment-variance pattern shared by every
// penalty term.
NodeId variance_term(Tape& t, const std::vector<NodeId>& xs) {
    NodeId xbar = mean_of(t, xs);
    std::vector<NodeId> sq;
    sq.reserve(xs.size());
    for (NodeId x : xs) sq.push_back(sumsq_node(t, sub_node(t, x, xbar)));
    return mean_of(t, sq);
}

NodeId taped_head_grad_flat(Tape& t, NodeId loss, const std::vector<NodeId>& head) {
    auto g = t.backward_taped(loss, head);
    std::vector<NodeId> parts;
    for (NodeId p : head) {
        auto it = g.find(p);
        parts.push_back(it != g.end() ? it->second : t.constant(Tensor::zeros(t.value(p).shape)));
    }
    return t.flatten_nodes(parts);
}

}  // namespace

ObjectiveResult compute_objective(const Model& model, const std::vector<EnvBatch>& envs, Method method, double alpha,
                                  double beta, const ObjectiveOptions& opts) {
    if (envs.empty()) throw std::invalid_argument("compute_objective: need at least one environment");
    if (method == Method::Hutchinson && opts.probe_stream == nullptr)
        throw std::invalid_argument("hutchinson objective requires a probe stream");

    // Reduction order is fixed by environment name so caller-side permutation
    // cannot change any value.
    std::vector<size_t> order(envs.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return envs[a].name < envs[b].name; });

    Tape tape;
    TapedModel tm = stage_params(tape, model);
    const std::vector<NodeId> head = tm.head_params();
    const std::vector<NodeId> all = tm.all_params();
    int64_t m = model.head.flat_dim();

    ObjectiveResult res;
    std::vector<NodeId> loss_nodes;
    std::vector<NodeId> grad_nodes;     // flat head gradients per env
    std::vector<NodeId> align_nodes;    // HGP vectors or Hutchinson diagonals per env
    std::vector<NodeId> irm_penalties;  // squared scale-gradient per env

    // Hutchinson probes are drawn once per call and shared across
    // environments, so identical environments incur zero penalty.
    std::vector<NodeId> probes;
    if (method == Method::Hutchinson) {
        for (int s = 0; s < opts.hutchinson_samples; ++s) probes.push_back(tape.constant(opts.probe_stream->next(m)));
    }

    // Per-pair exact-Hessian blocks: [env][pair] = {M1, m2, m3}.
    std::vector<std::vector<std::array<NodeId, 3>>> hess_blocks;

    for (size_t oi : order) {
        const EnvBatch& env = envs[oi];
        validate_batch(env.batch);
        NodeId x = tape.constant(env.batch.inputs);
        NodeId y = tape.constant(env.batch.labels);

        NodeId loss;
        NodeId features = -1, probs = -1;
        if (method == Method::Irm) {
            // Scale logits by a unit multiplier and penalize the squared
            // gradient of the loss w.r.t. it.
            NodeId h = x;
            for (size_t i = 0; i < tm.layers.size(); ++i) {
                NodeId lin = tape.record(Op::MatMul, {h, tm.layers[i].first});
                lin = tape.record(Op::Add, {lin, tm.layers[i].second});
                h = tm.acts[i] == Activation::Relu ? tape.record(Op::Relu, {lin}) : lin;
            }
            NodeId logits = tape.record(Op::MatMul, {h, tm.head_W}, {.t_b = true});
            logits = tape.record(Op::Add, {logits, tm.head_b});
            NodeId scale = tape.leaf(Tensor::scalar(1.0), true);
            NodeId scaled = tape.record(Op::Mul, {logits, scale});
            CeNodes ce = cross_entropy_on_tape(tape, scaled, y);
            loss = ce.loss;
            auto sg = tape.backward_taped(loss, {scale});
            NodeId ds = sg.count(scale) ? sg.at(scale) : tape.constant(Tensor::scalar(0.0));
            irm_penalties.push_back(tape.record(Op::Square, {ds}));
        } else {
            ForwardNodes fn = forward_on_tape(tape, tm, x, y);
            loss = fn.loss;
            features = fn.features;
            probs = fn.probs;
        }
        loss_nodes.push_back(loss);

        if (method == Method::GradVar || method == Method::Hgp || method == Method::Hutchinson ||
            method == Method::ExactHessian) {
            NodeId gflat = taped_head_grad_flat(tape, loss, head);
            grad_nodes.push_back(gflat);

            if (method == Method::Hgp) {
                NodeId sq = tape.record(Op::Dot, {gflat, gflat});
                if (std::sqrt(tape.value(sq).scalar_value()) < kNormFloor) {
                    res.degenerate_gradient = true;
                    align_nodes.push_back(tape.constant(Tensor::zeros({m})));
                } else {
                    NodeId gnorm = tape.record(Op::Sqrt, {sq});
                    NodeId norm_grad = taped_head_grad_flat(tape, gnorm, head);
                    align_nodes.push_back(tape.record(Op::Mul, {norm_grad, gnorm}));
                }
            } else if (method == Method::Hutchinson) {
                std::vector<NodeId> samples;
                samples.reserve(probes.size());
                for (NodeId r : probes) {
                    NodeId proj = tape.record(Op::Dot, {gflat, r});
                    NodeId hvp = taped_head_grad_flat(tape, proj, head);
                    samples.push_back(tape.record(Op::Mul, {hvp, r}));
                }
                align_nodes.push_back(mean_of(tape, samples));
            } else if (method == Method::ExactHessian) {
                int64_t n = env.batch.size();
                int64_t c = model.head.classes();
                double inv_n = 1.0 / static_cast<double>(n);
                std::vector<NodeId> cols;
                for (int64_t p = 0; p < c; ++p) {
                    Tensor ep = Tensor::zeros({c, 1});
                    ep.data[static_cast<size_t>(p)] = 1.0;
                    NodeId col = tape.record(Op::MatMul, {probs, tape.constant(std::move(ep))});
                    cols.push_back(tape.record(Op::Reshape, {col}, {.target_shape = {n}}));
                }
                std::vector<std::array<NodeId, 3>> blocks;
                for (int64_t p = 0; p < c; ++p) {
                    for (int64_t u = 0; u < c; ++u) {
                        // s_i = prob_p(i) * (delta_pu - prob_u(i))
                        NodeId neg_u = scale_node(tape, cols[static_cast<size_t>(u)], -1.0);
                        NodeId factor = p == u ? tape.record(Op::Add, {neg_u, tape.constant(Tensor::scalar(1.0))})
                                               : neg_u;
                        NodeId s = tape.record(Op::Mul, {cols[static_cast<size_t>(p)], factor});
                        NodeId sb = tape.record(Op::Broadcast, {s},
                                                {.axis = 1, .target_shape = {n, model.head.features()}});
                        NodeId zs = tape.record(Op::Mul, {features, sb});
                        NodeId m1 = scale_node(tape, tape.record(Op::MatMul, {features, zs}, {.t_a = true}), inv_n);
                        NodeId scol = tape.record(Op::Reshape, {s}, {.target_shape = {n, 1}});
                        NodeId m2 =
                            scale_node(tape, tape.record(Op::MatMul, {features, scol}, {.t_a = true}), inv_n);
                        NodeId m3 = scale_node(tape, tape.record(Op::Sum, {s}, {.axis = -1}), inv_n);
                        blocks.push_back({m1, m2, m3});
                    }
                }
                hess_blocks.push_back(std::move(blocks));
            }
        }
    }

    NodeId erm = mean_of(tape, loss_nodes);

    NodeId hessian_node = -1;
    NodeId gradient_node = -1;
    switch (method) {
        case Method::Erm:
            break;
        case Method::Vrex:
            gradient_node = variance_term(tape, loss_nodes);
            break;
        case Method::Irm:
            gradient_node = mean_of(tape, irm_penalties);
            break;
        case Method::GradVar:
            gradient_node = variance_term(tape, grad_nodes);
            break;
        case Method::Hgp:
        case Method::Hutchinson:
            hessian_node = variance_term(tape, align_nodes);
            gradient_node = variance_term(tape, grad_nodes);
            break;
        case Method::ExactHessian: {
            // |H_e - Hbar|_F^2 decomposes over the c*c class-pair blocks of
            // the Kronecker structure; the feature/bias cross block counts
            // twice.
            size_t pairs = hess_blocks.front().size();
            std::vector<NodeId> per_env_terms(hess_blocks.size(), -1);
            for (size_t pi = 0; pi < pairs; ++pi) {
                for (int part = 0; part < 3; ++part) {
                    std::vector<NodeId> xs;
                    for (const auto& env_blocks : hess_blocks) xs.push_back(env_blocks[pi][part]);
                    NodeId xbar = mean_of(tape, xs);
                    for (size_t e = 0; e < xs.size(); ++e) {
                        NodeId diff = sub_node(tape, xs[e], xbar);
                        NodeId ss = part == 2 ? tape.record(Op::Square, {diff}) : sumsq_node(tape, diff);
                        if (part == 1) ss = scale_node(tape, ss, 2.0);
                        per_env_terms[e] = per_env_terms[e] < 0 ? ss : tape.record(Op::Add, {per_env_terms[e], ss});
                    }
                }
            }
            hessian_node = mean_of(tape, per_env_terms);
            gradient_node = variance_term(tape, grad_nodes);
            break;
        }
    }

    NodeId total = erm;
    if (hessian_node >= 0 && alpha != 0.0)
        total = tape.record(Op::Add, {total, scale_node(tape, hessian_node, alpha)});
    if (gradient_node >= 0 && beta != 0.0)
        total = tape.record(Op::Add, {total, scale_node(tape, gradient_node, beta)});

    res.breakdown.erm_term = tape.value(erm).scalar_value();
    res.breakdown.hessian_term = hessian_node >= 0 ? tape.value(hessian_node).scalar_value() : 0.0;
    res.breakdown.gradient_term = gradient_node >= 0 ? tape.value(gradient_node).scalar_value() : 0.0;
    res.breakdown.total = res.breakdown.erm_term + alpha * res.breakdown.hessian_term +
                          beta * res.breakdown.gradient_term;
    for (NodeId l : loss_nodes) res.breakdown.per_env_losses.push_back(tape.value(l).scalar_value());

    if (opts.compute_grads) {
        Tensor seed = Tensor::scalar(opts.grad_scale);
        GradMap gm = tape.backward(total, &seed, &all);
        auto grab = [&](NodeId id) {
            auto it = gm.find(id);
            return it != gm.end() ? it->second : Tensor::zeros(tape.value(id).shape);
        };
        for (const auto& [w, b] : tm.layers) res.grads.layers.emplace_back(grab(w), grab(b));
        res.grads.head_W = grab(tm.head_W);
        res.grads.head_b = grab(tm.head_b);
    }
    return res;
}

namespace {

ObjectiveBreakdown run_breakdown(const Model& model, const std::vector<EnvBatch>& envs, Method method, double alpha,
                                 double beta, RademacherStream* stream = nullptr, int samples = 100) {
    ObjectiveOptions opts;
    opts.compute_grads = false;
    opts.probe_stream = stream;
    opts.hutchinson_samples = samples;
    return compute_objective(model, envs, method, alpha, beta, opts).breakdown;
}

}  // namespace

ObjectiveBreakdown erm_objective(const Model& model, const std::vector<EnvBatch>& envs) {
    return run_breakdown(model, envs, Method::Erm, 0.0, 0.0);
}

ObjectiveBreakdown hgp_objective(const Model& model, const std::vector<EnvBatch>& envs, const PenaltyConfig& cfg) {
    return run_breakdown(model, envs, Method::Hgp, cfg.alpha, cfg.beta);
}

ObjectiveBreakdown hutchinson_objective(const Model& model, const std::vector<EnvBatch>& envs,
                                        const PenaltyConfig& cfg, RademacherStream& stream) {
    return run_breakdown(model, envs, Method::Hutchinson, cfg.alpha, cfg.beta, &stream, cfg.hutchinson_samples);
}

ObjectiveBreakdown irm_objective(const Model& model, const std::vector<EnvBatch>& envs, const PenaltyConfig& cfg) {
    return run_breakdown(model, envs, Method::Irm, cfg.alpha, cfg.beta);
}

ObjectiveBreakdown vrex_objective(const Model& model, const std::vector<EnvBatch>& envs, const PenaltyConfig& cfg) {
    return run_breakdown(model, envs, Method::Vrex, cfg.alpha, cfg.beta);
}

ObjectiveBreakdown gradvar_objective(const Model& model, const std::vector<EnvBatch>& envs,
                                     const PenaltyConfig& cfg) {
    return run_breakdown(model, envs, Method::GradVar, cfg.alpha, cfg.beta);
}

double exact_hessian_variance(const Model& model, const std::vector<EnvBatch>& envs) {
    if (envs.empty()) return 0.0;
    std::vector<HeadHessian> hs;
    for (const EnvBatch& env : envs) {
        ForwardResult fr = forward_reference(model, env.batch);
        hs.push_back(head_hessian(fr.features, fr.probs));
    }
    int64_t mm = hs.front().mat.numel();
    std::vector<double> mean(static_cast<size_t>(mm), 0.0);
    for (const HeadHessian& h : hs)
        for (int64_t i = 0; i < mm; ++i) mean[static_cast<size_t>(i)] += h.mat.data[static_cast<size_t>(i)];
    for (double& v : mean) v /= static_cast<double>(hs.size());
    double acc = 0.0;
    for (const HeadHessian& h : hs) {
        double s = 0.0;
        for (int64_t i = 0; i < mm; ++i) {
            double d = h.mat.data[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)];
            s += d * d;
        }
        acc += s;
    }
    return acc;
}

double hessian_pair_distance(const Model& model, const std::vector<EnvBatch>& envs) {
    if (envs.size() < 2) return 0.0;
    ForwardResult f0 = forward_reference(model, envs[0].batch);
    ForwardResult f1 = forward_reference(model, envs[1].batch);
    return head_hessian(f0.features, f0.probs).frobenius_distance(head_hessian(f1.features, f1.probs));
}

}  // namespace hessalign
