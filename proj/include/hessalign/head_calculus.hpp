#pragma once

#include <functional>
#include <string>

#include "hessalign/tensor.hpp"

namespace hessalign {

// Closed-form gradient of the batch-mean cross-entropy loss w.r.t. a linear
// softmax head. Flattening order: W row-major, then b.
struct HeadGradient {
    Tensor dW;  // c x d
    Tensor db;  // c
    Tensor flat() const;
};

// Dense symmetric Hessian over the flattened head parameter space,
// m = c * (d + 1). Entry layout matches HeadGradient::flat().
struct HeadHessian {
    int64_t c = 0;
    int64_t d = 0;
    Tensor mat;  // m x m

    int64_t dim() const { return c * (d + 1); }
    double& at(int64_t i, int64_t j) { return mat.at(i, j); }
    double at(int64_t i, int64_t j) const { return mat.at(i, j); }
    int64_t widx(int64_t p, int64_t q) const { return p * d + q; }
    int64_t bidx(int64_t p) const { return c * d + p; }
    Tensor diagonal() const;
    double frobenius_distance(const HeadHessian& other) const;
};

HeadGradient head_grad(const Tensor& features, const Tensor& probs, const Tensor& labels);

// Batch mean of per-sample (diag(p) - p p^T) kron (z~ z~^T), z~ = [z; 1].
// Label-free by construction.
HeadHessian head_hessian(const Tensor& features, const Tensor& probs);

// head_hessian * v without materializing the dense matrix; O(n c d).
Tensor head_hvp(const Tensor& features, const Tensor& probs, const Tensor& v);

// Scalar activation with first and second derivatives, for the MSE head.
struct ActivationTriple {
    std::string name;
    std::function<double(double)> f;
    std::function<double(double)> df;
    std::function<double(double)> ddf;

    static ActivationTriple identity();
    static ActivationTriple tanh();
    static ActivationTriple sigmoid();
};

struct RegressionHeadGrad {
    Tensor dw;  // d
    double db = 0.0;
    Tensor flat() const;  // w entries then b
};

// Single-sample MSE head, loss 0.5 (sigma(w.z + b) - y)^2.
RegressionHeadGrad regression_head_grad(const Tensor& z, const Tensor& w, double b, double y,
                                        const ActivationTriple& act);
// (d+1) x (d+1) symmetric matrix, order: w entries then b.
Tensor regression_head_hessian(const Tensor& z, const Tensor& w, double b, double y, const ActivationTriple& act);

}  // namespace hessalign
