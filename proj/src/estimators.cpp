#include "hessalign/estimators.hpp"

#include <cmath>

namespace hessalign {

Tensor RademacherStream::next(int64_t m) {
    Tensor out = Tensor::zeros({m});
    for (double& v : out.data) v = (rng_() & 1ull) ? 1.0 : -1.0;
    return out;
}

Tensor hgp_closed_form(const Tensor& features, const Tensor& probs, const Tensor& labels) {
    HeadGradient g = head_grad(features, probs, labels);
    return head_hvp(features, probs, g.flat());
}

HgpResult hgp_via_norm_grad(Tape& tape, NodeId loss, const std::vector<NodeId>& head_params) {
    if (!tape.value(loss).is_scalar()) throw ShapeError("hgp_via_norm_grad: loss must be scalar");
    int64_t m = 0;
    for (NodeId p : head_params) m += tape.value(p).numel();

    auto g = tape.backward_taped(loss, head_params);  // pass 1
    std::vector<NodeId> parts;
    for (NodeId p : head_params) {
        auto it = g.find(p);
        parts.push_back(it != g.end() ? it->second : tape.constant(Tensor::zeros(tape.value(p).shape)));
    }
    NodeId gflat = tape.flatten_nodes(parts);
    NodeId sq = tape.record(Op::Dot, {gflat, gflat});
    double norm = std::sqrt(tape.value(sq).scalar_value());
    if (norm < kNormFloor) return {Tensor::zeros({m}), true};

    NodeId gnorm = tape.record(Op::Sqrt, {sq});
    GradMap gm = tape.backward(gnorm, nullptr, &head_params);  // pass 2
    Tensor norm_grad = flatten_grads(tape, gm, head_params);
    for (double& v : norm_grad.data) v *= norm;
    return {std::move(norm_grad), false};
}

Tensor hutchinson_diag(const Tensor& features, const Tensor& probs, int num_samples, RademacherStream& stream) {
    if (num_samples < 1) throw std::invalid_argument("hutchinson_diag: num_samples must be >= 1");
    int64_t d = features.cols(), c = probs.cols();
    int64_t m = c * (d + 1);
    Tensor acc = Tensor::zeros({m});
    for (int s = 0; s < num_samples; ++s) {
        Tensor r = stream.next(m);
        Tensor hv = head_hvp(features, probs, r);
        for (int64_t i = 0; i < m; ++i)
            acc.data[static_cast<size_t>(i)] += r.data[static_cast<size_t>(i)] * hv.data[static_cast<size_t>(i)];
    }
    for (double& v : acc.data) v /= static_cast<double>(num_samples);
    return acc;
}

Tensor exact_diag(const Tensor& features, const Tensor& probs) {
    int64_t n = features.rows(), d = features.cols(), c = probs.cols();
    int64_t m = c * (d + 1);
    Tensor out = Tensor::zeros({m});
    double inv_n = 1.0 / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t p = 0; p < c; ++p) {
            double s = probs.at(i, p) * (1.0 - probs.at(i, p)) * inv_n;
            out.data[static_cast<size_t>(c * d + p)] += s;
            for (int64_t q = 0; q < d; ++q) {
                double z = features.at(i, q);
                out.data[static_cast<size_t>(p * d + q)] += s * z * z;
            }
        }
    }
    return out;
}

}  // namespace hessalign
