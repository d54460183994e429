#pragma once

#include <cstdint>
#include <random>

#include "hessalign/head_calculus.hpp"
#include "hessalign/tape.hpp"

namespace hessalign {

// Seeded stream of probe vectors with independent +/-1 coordinates.
class RademacherStream {
public:
    explicit RademacherStream(uint64_t seed) : rng_(seed) {}
    Tensor next(int64_t m);

private:
    std::mt19937_64 rng_;
};

// Below this gradient norm the norm-gradient identity divides by ~0; the
// product is returned as zero with the degenerate flag set (H g -> 0 as g -> 0).
inline constexpr double kNormFloor = 1e-12;

struct HgpResult {
    Tensor hgp;
    bool degenerate = false;
};

// Exact H g via the closed-form Hessian-vector product applied to the
// closed-form head gradient.
Tensor hgp_closed_form(const Tensor& features, const Tensor& probs, const Tensor& labels);

// H g as |grad| * d|grad|/dtheta: one taped backward pass for the gradient,
// one plain backward pass for the norm gradient.
HgpResult hgp_via_norm_grad(Tape& tape, NodeId loss, const std::vector<NodeId>& head_params);

// Unbiased Hessian-diagonal estimate: mean over probes of r (Hadamard) H r.
Tensor hutchinson_diag(const Tensor& features, const Tensor& probs, int num_samples, RademacherStream& stream);

// Exact diagonal of the head Hessian (the estimator's oracle).
Tensor exact_diag(const Tensor& features, const Tensor& probs);

}  // namespace hessalign
