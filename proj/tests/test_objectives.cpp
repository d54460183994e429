#include <doctest.h>

#include <cmath>
#include <random>

#include "hessalign/objectives.hpp"

using namespace hessalign;

namespace {

Batch random_batch(std::mt19937_64& rng, int64_t n, int64_t dim) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Tensor x = Tensor::zeros({n, dim});
    for (double& v : x.data) v = gauss(rng);
    Tensor y = Tensor::zeros({n, 2});
    for (int64_t i = 0; i < n; ++i) y.at(i, static_cast<int64_t>(rng() & 1ull)) = 1.0;
    return {std::move(x), std::move(y)};
}

struct Setup {
    Model model;
    std::vector<EnvBatch> envs;
};

Setup make_setup(uint64_t seed, bool identical = false) {
    std::mt19937_64 rng(seed);
    Setup s;
    s.model = init_params({3, 4, 2}, seed);
    Batch a = random_batch(rng, 10, 3);
    Batch b = identical ? a : random_batch(rng, 10, 3);
    s.envs = {{"a", a}, {"b", b}};
    return s;
}

}  // namespace

TEST_CASE("erm is the mean of per-environment losses") {
    Setup s = make_setup(71);
    ObjectiveBreakdown bd = erm_objective(s.model, s.envs);
    double manual = 0.0;
    for (const EnvBatch& e : s.envs) manual += forward_reference(s.model, e.batch).loss;
    manual /= 2.0;
    CHECK(bd.erm_term == doctest::Approx(manual).epsilon(1e-12));
    CHECK(bd.total == bd.erm_term);
    CHECK(bd.hessian_term == 0.0);
    CHECK(bd.gradient_term == 0.0);
    CHECK(bd.per_env_losses.size() == 2);

    Setup ident = make_setup(73, true);
    ObjectiveBreakdown same = erm_objective(ident.model, ident.envs);
    CHECK(same.erm_term == doctest::Approx(forward_reference(ident.model, ident.envs[0].batch).loss).epsilon(1e-14));
    CHECK_THROWS_AS(erm_objective(s.model, {}), std::invalid_argument);
}

TEST_CASE("identical environments zero out every alignment penalty") {
    Setup s = make_setup(79, true);
    PenaltyConfig cfg;
    cfg.alpha = 1.0;
    cfg.beta = 1.0;
    CHECK(hgp_objective(s.model, s.envs, cfg).hessian_term == doctest::Approx(0.0).epsilon(1e-20));
    CHECK(hgp_objective(s.model, s.envs, cfg).gradient_term == doctest::Approx(0.0).epsilon(1e-20));
    CHECK(vrex_objective(s.model, s.envs, cfg).gradient_term == doctest::Approx(0.0).epsilon(1e-20));
    CHECK(gradvar_objective(s.model, s.envs, cfg).gradient_term == doctest::Approx(0.0).epsilon(1e-20));
    RademacherStream stream(1);
    CHECK(hutchinson_objective(s.model, s.envs, cfg, stream).hessian_term == doctest::Approx(0.0).epsilon(1e-20));
    ObjectiveOptions opts;
    opts.compute_grads = false;
    CHECK(compute_objective(s.model, s.envs, Method::ExactHessian, 1.0, 1.0, opts).breakdown.hessian_term ==
          doctest::Approx(0.0).epsilon(1e-20));
}

TEST_CASE("zero weights reduce every method to erm") {
    Setup s = make_setup(83);
    ObjectiveBreakdown erm = erm_objective(s.model, s.envs);
    PenaltyConfig cfg;
    cfg.alpha = 0.0;
    cfg.beta = 0.0;
    CHECK(hgp_objective(s.model, s.envs, cfg).total == erm.total);
    CHECK(vrex_objective(s.model, s.envs, cfg).total == erm.total);
    CHECK(irm_objective(s.model, s.envs, cfg).total == erm.total);
    RademacherStream stream(2);
    CHECK(hutchinson_objective(s.model, s.envs, cfg, stream).total == erm.total);
}

TEST_CASE("vrex penalty is the population variance of environment losses") {
    Setup s = make_setup(89);
    PenaltyConfig cfg;
    cfg.beta = 1.0;
    ObjectiveBreakdown bd = vrex_objective(s.model, s.envs, cfg);
    double l0 = bd.per_env_losses[0], l1 = bd.per_env_losses[1];
    double mean = 0.5 * (l0 + l1);
    double var = 0.5 * ((l0 - mean) * (l0 - mean) + (l1 - mean) * (l1 - mean));
    CHECK(bd.gradient_term == doctest::Approx(var).epsilon(1e-12));
}

TEST_CASE("gradvar penalty matches closed-form head gradients") {
    Setup s = make_setup(97);
    PenaltyConfig cfg;
    cfg.beta = 1.0;
    ObjectiveBreakdown bd = gradvar_objective(s.model, s.envs, cfg);
    std::vector<Tensor> gs;
    for (const EnvBatch& e : s.envs) {
        ForwardResult fr = forward_reference(s.model, e.batch);
        gs.push_back(head_grad(fr.features, fr.probs, e.batch.labels).flat());
    }
    double manual = 0.0;
    for (int64_t i = 0; i < gs[0].numel(); ++i) {
        double m = 0.5 * (gs[0].data[static_cast<size_t>(i)] + gs[1].data[static_cast<size_t>(i)]);
        double d0 = gs[0].data[static_cast<size_t>(i)] - m;
        double d1 = gs[1].data[static_cast<size_t>(i)] - m;
        manual += 0.5 * (d0 * d0 + d1 * d1);
    }
    CHECK(bd.gradient_term == doctest::Approx(manual).epsilon(1e-10));
    // the hgp objective shares the same gradient term
    ObjectiveBreakdown hb = hgp_objective(s.model, s.envs, cfg);
    CHECK(hb.gradient_term == doctest::Approx(bd.gradient_term).epsilon(1e-12));
}

TEST_CASE("hgp hessian term matches closed-form hessian-gradient products") {
    Setup s = make_setup(101);
    PenaltyConfig cfg;
    cfg.alpha = 1.0;
    cfg.beta = 0.0;
    ObjectiveBreakdown bd = hgp_objective(s.model, s.envs, cfg);
    std::vector<Tensor> hgps;
    for (const EnvBatch& e : s.envs) {
        ForwardResult fr = forward_reference(s.model, e.batch);
        hgps.push_back(hgp_closed_form(fr.features, fr.probs, e.batch.labels));
    }
    double manual = 0.0;
    for (int64_t i = 0; i < hgps[0].numel(); ++i) {
        double m = 0.5 * (hgps[0].data[static_cast<size_t>(i)] + hgps[1].data[static_cast<size_t>(i)]);
        double d0 = hgps[0].data[static_cast<size_t>(i)] - m;
        double d1 = hgps[1].data[static_cast<size_t>(i)] - m;
        manual += 0.5 * (d0 * d0 + d1 * d1);
    }
    CHECK(bd.hessian_term == doctest::Approx(manual).epsilon(1e-8));
}

TEST_CASE("exact-hessian penalty matches dense frobenius variance") {
    Setup s = make_setup(103);
    ObjectiveOptions opts;
    opts.compute_grads = false;
    ObjectiveBreakdown bd =
        compute_objective(s.model, s.envs, Method::ExactHessian, 1.0, 0.0, opts).breakdown;
    std::vector<HeadHessian> hs;
    for (const EnvBatch& e : s.envs) {
        ForwardResult fr = forward_reference(s.model, e.batch);
        hs.push_back(head_hessian(fr.features, fr.probs));
    }
    double manual = 0.0;
    for (int64_t i = 0; i < hs[0].mat.numel(); ++i) {
        double m = 0.5 * (hs[0].mat.data[static_cast<size_t>(i)] + hs[1].mat.data[static_cast<size_t>(i)]);
        double d0 = hs[0].mat.data[static_cast<size_t>(i)] - m;
        double d1 = hs[1].mat.data[static_cast<size_t>(i)] - m;
        manual += 0.5 * (d0 * d0 + d1 * d1);
    }
    CHECK(bd.hessian_term == doctest::Approx(manual).epsilon(1e-10));
}

TEST_CASE("hutchinson penalty matches a manual estimate with the same probes") {
    Setup s = make_setup(107);
    int64_t m = s.model.head.flat_dim();
    const int samples = 4;
    RademacherStream probe_src(21);
    std::vector<Tensor> probes;
    for (int i = 0; i < samples; ++i) probes.push_back(probe_src.next(m));
    std::vector<Tensor> diags;
    for (const EnvBatch& e : s.envs) {
        ForwardResult fr = forward_reference(s.model, e.batch);
        Tensor acc = Tensor::zeros({m});
        for (const Tensor& r : probes) {
            Tensor hv = head_hvp(fr.features, fr.probs, r);
            for (int64_t i = 0; i < m; ++i)
                acc.data[static_cast<size_t>(i)] +=
                    r.data[static_cast<size_t>(i)] * hv.data[static_cast<size_t>(i)] / samples;
        }
        diags.push_back(std::move(acc));
    }
    double manual = 0.0;
    for (int64_t i = 0; i < m; ++i) {
        double mean = 0.5 * (diags[0].data[static_cast<size_t>(i)] + diags[1].data[static_cast<size_t>(i)]);
        double d0 = diags[0].data[static_cast<size_t>(i)] - mean;
        double d1 = diags[1].data[static_cast<size_t>(i)] - mean;
        manual += 0.5 * (d0 * d0 + d1 * d1);
    }
    ObjectiveOptions opts;
    opts.compute_grads = false;
    RademacherStream stream(21);
    opts.probe_stream = &stream;
    opts.hutchinson_samples = samples;
    ObjectiveBreakdown bd = compute_objective(s.model, s.envs, Method::Hutchinson, 1.0, 0.0, opts).breakdown;
    CHECK(bd.hessian_term == doctest::Approx(manual).epsilon(1e-8));
}

TEST_CASE("irm penalty equals the hand-computed scale derivative") {
    Setup s = make_setup(109);
    PenaltyConfig cfg;
    cfg.beta = 1.0;
    ObjectiveBreakdown bd = irm_objective(s.model, s.envs, cfg);
    double manual = 0.0;
    for (const EnvBatch& e : s.envs) {
        ForwardResult fr = forward_reference(s.model, e.batch);
        // dL/ds at s=1: mean over samples of sum_k (p_k - y_k) * logit_k
        Tensor logits = kernels::add(kernels::matmul(fr.features, s.model.head.W, false, true), s.model.head.b);
        double ds = 0.0;
        int64_t n = logits.rows();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t k = 0; k < 2; ++k)
                ds += (fr.probs.at(i, k) - e.batch.labels.at(i, k)) * logits.at(i, k) / static_cast<double>(n);
        manual += ds * ds / 2.0;
    }
    CHECK(bd.gradient_term == doctest::Approx(manual).epsilon(1e-10));
}

TEST_CASE("environment order never changes objective values") {
    Setup s = make_setup(113);
    std::vector<EnvBatch> flipped{s.envs[1], s.envs[0]};
    for (Method method : {Method::Erm, Method::Irm, Method::Vrex, Method::GradVar, Method::Hgp,
                          Method::Hutchinson, Method::ExactHessian}) {
        ObjectiveOptions opts;
        opts.compute_grads = true;
        RademacherStream sa(33), sb(33);
        opts.probe_stream = &sa;
        opts.hutchinson_samples = 3;
        ObjectiveResult r1 = compute_objective(s.model, s.envs, method, 0.5, 0.25, opts);
        opts.probe_stream = &sb;
        ObjectiveResult r2 = compute_objective(s.model, flipped, method, 0.5, 0.25, opts);
        CHECK(r1.breakdown.total == r2.breakdown.total);
        CHECK(r1.breakdown.per_env_losses == r2.breakdown.per_env_losses);
        CHECK(r1.grads.head_W.data == r2.grads.head_W.data);
        CHECK(r1.grads.layers[0].first.data == r2.grads.layers[0].first.data);
    }
}

TEST_CASE("breakdown invariant total = erm + alpha*h + beta*g") {
    Setup s = make_setup(127);
    ObjectiveOptions opts;
    opts.compute_grads = false;
    RademacherStream stream(4);
    opts.probe_stream = &stream;
    opts.hutchinson_samples = 3;
    for (Method method : {Method::Hgp, Method::Hutchinson, Method::ExactHessian, Method::Vrex, Method::GradVar}) {
        ObjectiveBreakdown bd = compute_objective(s.model, s.envs, method, 0.8, 0.4, opts).breakdown;
        CHECK(std::abs(bd.total - (bd.erm_term + 0.8 * bd.hessian_term + 0.4 * bd.gradient_term)) < 1e-10);
    }
}

TEST_CASE("penalty config validation and anneal schedule") {
    PenaltyConfig cfg;
    cfg.anneal_step = 190;
    cfg.pre_anneal_value = 1.0;
    cfg.post_anneal_value = 91257.18;
    cfg.alpha = 1.0;
    cfg.beta = 1.0;
    CHECK(cfg.effective_alpha(0) == 1.0);
    CHECK(cfg.effective_alpha(189) == 1.0);
    CHECK(cfg.effective_alpha(190) == doctest::Approx(91257.18));
    CHECK(cfg.effective_beta(500) == doctest::Approx(91257.18));
    PenaltyConfig bad;
    bad.alpha = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_THROWS_AS(method_from_name("fishr"), std::invalid_argument);
    CHECK(method_from_name("hutchinson") == Method::Hutchinson);
}

TEST_CASE("exact hessian variance diagnostics") {
    Setup s = make_setup(131);
    CHECK(exact_hessian_variance(s.model, {s.envs[0]}) == 0.0);
    std::vector<EnvBatch> same{{"a", s.envs[0].batch}, {"b", s.envs[0].batch}};
    CHECK(exact_hessian_variance(s.model, same) == doctest::Approx(0.0).epsilon(1e-20));
    // n=2 relation: variance = 0.5 * pair_distance^2
    double var = exact_hessian_variance(s.model, s.envs);
    double dist = hessian_pair_distance(s.model, s.envs);
    CHECK(var == doctest::Approx(0.5 * dist * dist).epsilon(1e-10));
    CHECK(hessian_pair_distance(s.model, {s.envs[0]}) == 0.0);
}
