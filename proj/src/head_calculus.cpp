#include "hessalign/head_calculus.hpp"

#include <cmath>

namespace hessalign {

namespace {

void check_batch_shapes(const Tensor& features, const Tensor& probs) {
    if (features.rank() != 2 || probs.rank() != 2) throw ShapeError("head calculus: rank-2 inputs required");
    if (features.rows() != probs.rows()) throw ShapeError("head calculus: row count mismatch");
}

}  // namespace

Tensor HeadGradient::flat() const {
    Tensor Wf = dW;
    Wf.shape = {dW.numel()};
    std::vector<const Tensor*> ps = {&Wf, &db};
    return kernels::concat(ps);
}

Tensor HeadHessian::diagonal() const {
    int64_t m = dim();
    Tensor out = Tensor::zeros({m});
    for (int64_t i = 0; i < m; ++i) out.data[static_cast<size_t>(i)] = mat.at(i, i);
    return out;
}

double HeadHessian::frobenius_distance(const HeadHessian& other) const {
    if (mat.shape != other.mat.shape) throw ShapeError("frobenius_distance: dimension mismatch");
    double s = 0.0;
    for (size_t i = 0; i < mat.data.size(); ++i) {
        double diff = mat.data[i] - other.mat.data[i];
        s += diff * diff;
    }
    return std::sqrt(s);
}

HeadGradient head_grad(const Tensor& features, const Tensor& probs, const Tensor& labels) {
    check_batch_shapes(features, probs);
    if (probs.shape != labels.shape) throw ShapeError("head_grad: probs/labels shape mismatch");
    int64_t n = features.rows(), d = features.cols(), c = probs.cols();
    HeadGradient g;
    g.dW = Tensor::zeros({c, d});
    g.db = Tensor::zeros({c});
    double inv_n = 1.0 / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t p = 0; p < c; ++p) {
            double err = probs.at(i, p) - labels.at(i, p);
            g.db.data[static_cast<size_t>(p)] += err * inv_n;
            for (int64_t q = 0; q < d; ++q) g.dW.at(p, q) += err * features.at(i, q) * inv_n;
        }
    }
    return g;
}

HeadHessian head_hessian(const Tensor& features, const Tensor& probs) {
    check_batch_shapes(features, probs);
    int64_t n = features.rows(), d = features.cols(), c = probs.cols();
    int64_t m = c * (d + 1);
    HeadHessian h;
    h.c = c;
    h.d = d;
    h.mat = Tensor::zeros({m, m});
    double inv_n = 1.0 / static_cast<double>(n);
    std::vector<double> zt(static_cast<size_t>(d + 1));
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t q = 0; q < d; ++q) zt[static_cast<size_t>(q)] = features.at(i, q);
        zt[static_cast<size_t>(d)] = 1.0;
        for (int64_t p = 0; p < c; ++p) {
            for (int64_t u = 0; u < c; ++u) {
                double s = probs.at(i, p) * ((p == u ? 1.0 : 0.0) - probs.at(i, u)) * inv_n;
                if (s == 0.0) continue;
                for (int64_t q = 0; q <= d; ++q) {
                    int64_t row = q < d ? h.widx(p, q) : h.bidx(p);
                    double sq = s * zt[static_cast<size_t>(q)];
                    for (int64_t v = 0; v <= d; ++v) {
                        int64_t col = v < d ? h.widx(u, v) : h.bidx(u);
                        h.mat.at(row, col) += sq * zt[static_cast<size_t>(v)];
                    }
                }
            }
        }
    }
    return h;
}

Tensor head_hvp(const Tensor& features, const Tensor& probs, const Tensor& v) {
    check_batch_shapes(features, probs);
    int64_t n = features.rows(), d = features.cols(), c = probs.cols();
    int64_t m = c * (d + 1);
    if (v.numel() != m) throw ShapeError("head_hvp: vector length mismatch");
    Tensor out = Tensor::zeros({m});
    double inv_n = 1.0 / static_cast<double>(n);
    std::vector<double> t(static_cast<size_t>(c));
    for (int64_t i = 0; i < n; ++i) {
        // t = V~ z~ with V~ = [V, vb]
        double pt = 0.0;
        for (int64_t p = 0; p < c; ++p) {
            double acc = v.data[static_cast<size_t>(c * d + p)];
            for (int64_t q = 0; q < d; ++q) acc += v.data[static_cast<size_t>(p * d + q)] * features.at(i, q);
            t[static_cast<size_t>(p)] = acc;
            pt += probs.at(i, p) * acc;
        }
        // w = (diag(p) - p p^T) t, result block = w kron z~
        for (int64_t p = 0; p < c; ++p) {
            double w = probs.at(i, p) * (t[static_cast<size_t>(p)] - pt) * inv_n;
            out.data[static_cast<size_t>(c * d + p)] += w;
            for (int64_t q = 0; q < d; ++q) out.data[static_cast<size_t>(p * d + q)] += w * features.at(i, q);
        }
    }
    return out;
}

ActivationTriple ActivationTriple::identity() {
    return {"identity", [](double a) { return a; }, [](double) { return 1.0; }, [](double) { return 0.0; }};
}

ActivationTriple ActivationTriple::tanh() {
    return {"tanh", [](double a) { return std::tanh(a); },
            [](double a) {
                double t = std::tanh(a);
                return 1.0 - t * t;
            },
            [](double a) {
                double t = std::tanh(a);
                return -2.0 * t * (1.0 - t * t);
            }};
}

ActivationTriple ActivationTriple::sigmoid() {
    auto sig = [](double a) { return 1.0 / (1.0 + std::exp(-a)); };
    return {"sigmoid", sig,
            [sig](double a) {
                double s = sig(a);
                return s * (1.0 - s);
            },
            [sig](double a) {
                double s = sig(a);
                return s * (1.0 - s) * (1.0 - 2.0 * s);
            }};
}

Tensor RegressionHeadGrad::flat() const {
    Tensor out = Tensor::zeros({dw.numel() + 1});
    std::copy(dw.data.begin(), dw.data.end(), out.data.begin());
    out.data.back() = db;
    return out;
}

RegressionHeadGrad regression_head_grad(const Tensor& z, const Tensor& w, double b, double y,
                                        const ActivationTriple& act) {
    if (z.numel() != w.numel()) throw ShapeError("regression_head_grad: z/w length mismatch");
    double a = b;
    for (size_t i = 0; i < z.data.size(); ++i) a += w.data[i] * z.data[i];
    double yhat = act.f(a);
    double factor = (yhat - y) * act.df(a);
    RegressionHeadGrad g;
    g.dw = Tensor::zeros({z.numel()});
    for (size_t i = 0; i < z.data.size(); ++i) g.dw.data[i] = factor * z.data[i];
    g.db = factor;
    return g;
}

Tensor regression_head_hessian(const Tensor& z, const Tensor& w, double b, double y, const ActivationTriple& act) {
    if (z.numel() != w.numel()) throw ShapeError("regression_head_hessian: z/w length mismatch");
    double a = b;
    for (size_t i = 0; i < z.data.size(); ++i) a += w.data[i] * z.data[i];
    double yhat = act.f(a);
    double coeff = act.df(a) * act.df(a) + (yhat - y) * act.ddf(a);
    int64_t d = z.numel();
    Tensor h = Tensor::zeros({d + 1, d + 1});
    std::vector<double> zt(static_cast<size_t>(d + 1));
    for (int64_t i = 0; i < d; ++i) zt[static_cast<size_t>(i)] = z.data[static_cast<size_t>(i)];
    zt[static_cast<size_t>(d)] = 1.0;
    for (int64_t i = 0; i <= d; ++i)
        for (int64_t k = 0; k <= d; ++k) h.at(i, k) = coeff * zt[static_cast<size_t>(i)] * zt[static_cast<size_t>(k)];
    return h;
}

}  // namespace hessalign
