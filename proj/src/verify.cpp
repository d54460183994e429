#include "hessalign/verify.hpp"

#include <cmath>
#include <ostream>
#include <random>

#include "hessalign/estimators.hpp"
#include "hessalign/head_calculus.hpp"
#include "hessalign/objectives.hpp"

namespace hessalign {

namespace {

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

Batch random_batch(std::mt19937_64& rng, int64_t n, int64_t dim, int64_t c) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Tensor x = Tensor::zeros({n, dim});
    for (double& v : x.data) v = gauss(rng);
    Tensor y = Tensor::zeros({n, c});
    for (int64_t i = 0; i < n; ++i) y.at(i, static_cast<int64_t>(rng() % static_cast<uint64_t>(c))) = 1.0;
    return {std::move(x), std::move(y)};
}

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double v : t.data) m = std::max(m, std::abs(v));
    return m;
}

// Central-difference gradient of a scalar function of the model parameters.
template <class F>
double fd_gradient_error(Model model, const ModelGrads& grads, F loss_at, double h) {
    std::vector<Tensor*> ps = param_tensors(model);
    std::vector<const Tensor*> gs;
    for (const auto& [w, b] : grads.layers) {
        gs.push_back(&w);
        gs.push_back(&b);
    }
    gs.push_back(&grads.head_W);
    gs.push_back(&grads.head_b);

    double err = 0.0;
    for (size_t k = 0; k < ps.size(); ++k) {
        for (size_t i = 0; i < ps[k]->data.size(); ++i) {
            double orig = ps[k]->data[i];
            ps[k]->data[i] = orig + h;
            double lp = loss_at(model);
            ps[k]->data[i] = orig - h;
            double lm = loss_at(model);
            ps[k]->data[i] = orig;
            double fd = (lp - lm) / (2.0 * h);
            err = std::max(err, std::abs(fd - gs[k]->data[i]));
        }
    }
    return err;
}

VerifyCheck check_fd_model_gradient() {
    std::mt19937_64 rng(11);
    Model model = init_params({4, 6, 2}, 11);
    std::vector<EnvBatch> envs{{"e", random_batch(rng, 12, 4, 2)}};
    ObjectiveOptions opts;
    ObjectiveResult res = compute_objective(model, envs, Method::Erm, 0.0, 0.0, opts);
    double err = fd_gradient_error(
        model, res.grads, [&](const Model& m) { return forward_reference(m, envs[0].batch).loss; }, 1e-6);
    return {"fd-gradient-full-model", err < 1e-6, err, 1e-6};
}

VerifyCheck check_fd_head_hessian() {
    std::mt19937_64 rng(23);
    Model model = init_params({3, 2}, 23);  // identity extractor, head 2x3
    Batch batch = random_batch(rng, 10, 3, 2);
    ForwardResult fr = forward_reference(model, batch);
    HeadHessian H = head_hessian(fr.features, fr.probs);

    int64_t c = 2, d = 3, m = H.dim();
    const double h = 1e-4;
    auto loss_at = [&](const Tensor& flat) {
        Model pm = model;
        pm.head = ClassifierHead::from_flat(flat, c, d);
        return forward_reference(pm, batch).loss;
    };
    Tensor base = model.head.flat();
    double scale = std::max(max_abs(H.mat), 1.0);
    double err = 0.0;
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < m; ++j) {
            Tensor t = base;
            auto bump = [&](int64_t k, double dv) { t.data[static_cast<size_t>(k)] += dv; };
            t = base; bump(i, h); bump(j, h); double pp = loss_at(t);
            t = base; bump(i, h); bump(j, -h); double pm_ = loss_at(t);
            t = base; bump(i, -h); bump(j, h); double mp = loss_at(t);
            t = base; bump(i, -h); bump(j, -h); double mm = loss_at(t);
            double fd = (pp - pm_ - mp + mm) / (4.0 * h * h);
            err = std::max(err, std::abs(fd - H.at(i, j)) / scale);
        }
    }
    return {"fd-head-hessian", err < 1e-5, err, 1e-5};
}

VerifyCheck check_hvp_dense() {
    std::mt19937_64 rng(37);
    Model model = init_params({4, 2}, 37);
    Batch batch = random_batch(rng, 8, 4, 2);
    ForwardResult fr = forward_reference(model, batch);
    HeadHessian H = head_hessian(fr.features, fr.probs);
    int64_t m = H.dim();
    std::normal_distribution<double> gauss(0.0, 1.0);
    double err = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
        Tensor v = Tensor::zeros({m});
        if (rep < 3) {
            v.data[static_cast<size_t>(rep)] = 1.0;  // basis probes
        } else {
            for (double& x : v.data) x = gauss(rng);
        }
        Tensor fast = head_hvp(fr.features, fr.probs, v);
        for (int64_t i = 0; i < m; ++i) {
            double dense = 0.0;
            for (int64_t j = 0; j < m; ++j) dense += H.at(i, j) * v.data[static_cast<size_t>(j)];
            err = std::max(err, std::abs(dense - fast.data[static_cast<size_t>(i)]));
        }
    }
    return {"hvp-vs-dense", err < 1e-10, err, 1e-10};
}

VerifyCheck check_regression_fd() {
    std::mt19937_64 rng(41);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double err = 0.0;
    for (const ActivationTriple& act : {ActivationTriple::identity(), ActivationTriple::tanh(),
                                        ActivationTriple::sigmoid()}) {
        int64_t d = 3;
        Tensor z = Tensor::zeros({d}), w = Tensor::zeros({d});
        for (double& v : z.data) v = gauss(rng);
        for (double& v : w.data) v = gauss(rng);
        double b = gauss(rng), y = gauss(rng);
        auto loss_at = [&](const Tensor& wv, double bv) {
            double a = bv;
            for (int64_t i = 0; i < d; ++i)
                a += wv.data[static_cast<size_t>(i)] * z.data[static_cast<size_t>(i)];
            double diff = act.f(a) - y;
            return 0.5 * diff * diff;
        };
        RegressionHeadGrad g = regression_head_grad(z, w, b, y, act);
        const double h = 1e-6;
        for (int64_t i = 0; i < d; ++i) {
            Tensor wp = w, wm = w;
            wp.data[static_cast<size_t>(i)] += h;
            wm.data[static_cast<size_t>(i)] -= h;
            double fd = (loss_at(wp, b) - loss_at(wm, b)) / (2.0 * h);
            err = std::max(err, std::abs(fd - g.dw.data[static_cast<size_t>(i)]));
        }
        err = std::max(err, std::abs((loss_at(w, b + h) - loss_at(w, b - h)) / (2.0 * h) - g.db));

        Tensor H = regression_head_hessian(z, w, b, y, act);
        const double h2 = 1e-4;
        auto flat_loss = [&](const Tensor& flat) {
            Tensor wv({d}, std::vector<double>(flat.data.begin(), flat.data.begin() + d));
            return loss_at(wv, flat.data[static_cast<size_t>(d)]);
        };
        Tensor base = Tensor::zeros({d + 1});
        for (int64_t i = 0; i < d; ++i) base.data[static_cast<size_t>(i)] = w.data[static_cast<size_t>(i)];
        base.data[static_cast<size_t>(d)] = b;
        for (int64_t i = 0; i <= d; ++i) {
            for (int64_t j = 0; j <= d; ++j) {
                Tensor t = base;
                t.data[static_cast<size_t>(i)] += h2;
                t.data[static_cast<size_t>(j)] += h2;
                double pp = flat_loss(t);
                t = base;
                t.data[static_cast<size_t>(i)] += h2;
                t.data[static_cast<size_t>(j)] -= h2;
                double pm_ = flat_loss(t);
                t = base;
                t.data[static_cast<size_t>(i)] -= h2;
                t.data[static_cast<size_t>(j)] += h2;
                double mp = flat_loss(t);
                t = base;
                t.data[static_cast<size_t>(i)] -= h2;
                t.data[static_cast<size_t>(j)] -= h2;
                double mm = flat_loss(t);
                double fd = (pp - pm_ - mp + mm) / (4.0 * h2 * h2);
                err = std::max(err, std::abs(fd - H.at(i, j)));
            }
        }
    }
    return {"regression-head-fd", err < 1e-5, err, 1e-5};
}

VerifyCheck check_norm_grad_identity() {
    std::mt19937_64 rng(53);
    double err = 0.0;
    bool two_passes = true;
    for (int rep = 0; rep < 100; ++rep) {
        Model model = init_params({3, 2}, 1000 + static_cast<uint64_t>(rep));
        Batch batch = random_batch(rng, 6, 3, 2);
        ForwardResult fr = forward_reference(model, batch);
        Tensor exact = hgp_closed_form(fr.features, fr.probs, batch.labels);

        Tape tape;
        TapedModel tm = stage_params(tape, model);
        ForwardNodes fn = forward_on_tape(tape, tm, batch);
        int before = tape.backward_pass_count();
        HgpResult got = hgp_via_norm_grad(tape, fn.loss, tm.head_params());
        if (tape.backward_pass_count() - before != 2) two_passes = false;
        if (got.degenerate) continue;
        for (int64_t i = 0; i < exact.numel(); ++i)
            err = std::max(err,
                           std::abs(exact.data[static_cast<size_t>(i)] - got.hgp.data[static_cast<size_t>(i)]));
    }
    return {"eq18-norm-grad-identity", err < 1e-8 && two_passes, err, 1e-8};
}

VerifyCheck check_hutchinson_slope() {
    std::mt19937_64 rng(67);
    Model model = init_params({6, 2}, 67);
    Batch batch = random_batch(rng, 16, 6, 2);
    ForwardResult fr = forward_reference(model, batch);
    Tensor exact = exact_diag(fr.features, fr.probs);

    std::vector<double> counts{1e2, 1e3, 1e4};
    std::vector<double> log_err;
    for (double cd : counts) {
        int count = static_cast<int>(cd);
        double mean_err = 0.0;
        const int reps = 5;
        for (int r = 0; r < reps; ++r) {
            RademacherStream stream(100 + static_cast<uint64_t>(r));
            Tensor est = hutchinson_diag(fr.features, fr.probs, count, stream);
            double e2 = 0.0;
            for (int64_t i = 0; i < est.numel(); ++i) {
                double dv = est.data[static_cast<size_t>(i)] - exact.data[static_cast<size_t>(i)];
                e2 += dv * dv;
            }
            mean_err += std::sqrt(e2);
        }
        log_err.push_back(std::log10(mean_err / reps));
    }
    // least-squares slope of log10(error) against log10(samples)
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < counts.size(); ++i) {
        double x = std::log10(counts[i]);
        sx += x;
        sy += log_err[i];
        sxx += x * x;
        sxy += x * log_err[i];
    }
    double n = static_cast<double>(counts.size());
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    bool ok = slope > -0.6 && slope < -0.4;
    return {"eq19-hutchinson-slope", ok, slope, 0.1};
}

VerifyCheck check_objective_fd() {
    std::mt19937_64 rng(79);
    Model model = init_params({3, 4, 2}, 79);
    std::vector<EnvBatch> envs{{"a", random_batch(rng, 8, 3, 2)}, {"b", random_batch(rng, 8, 3, 2)}};

    double err = 0.0;
    for (Method method : {Method::Hgp, Method::Hutchinson, Method::ExactHessian, Method::Irm, Method::Vrex,
                          Method::GradVar}) {
        auto total_at = [&](const Model& m) {
            ObjectiveOptions o;
            o.compute_grads = false;
            RademacherStream stream(5);
            o.probe_stream = &stream;
            o.hutchinson_samples = 3;
            return compute_objective(m, envs, method, 0.7, 0.3, o).breakdown.total;
        };
        ObjectiveOptions o;
        o.compute_grads = true;
        RademacherStream stream(5);
        o.probe_stream = &stream;
        o.hutchinson_samples = 3;
        ObjectiveResult res = compute_objective(model, envs, method, 0.7, 0.3, o);
        err = std::max(err, fd_gradient_error(model, res.grads, total_at, 1e-5));
    }
    return {"fd-objective-gradients", err < 1e-5, err, 1e-5};
}

}  // namespace

std::vector<VerifyCheck> run_verification() {
    return {check_fd_model_gradient(), check_fd_head_hessian(),  check_hvp_dense(),    check_regression_fd(),
            check_norm_grad_identity(), check_hutchinson_slope(), check_objective_fd()};
}

bool print_verification(std::ostream& os) {
    bool all = true;
    for (const VerifyCheck& c : run_verification()) {
        os << (c.passed ? "PASS" : "FAIL") << "  " << c.name << "  observed=" << c.max_error
           << " tolerance=" << c.tolerance << "\n";
        all = all && c.passed;
    }
    return all;
}

}  // namespace hessalign
