#include <doctest.h>

#include <cmath>
#include <random>

#include "hessalign/estimators.hpp"
#include "hessalign/model.hpp"

using namespace hessalign;

namespace {

struct Fixture {
    Model model;
    Batch batch;
    ForwardResult fr;
};

Fixture make_fixture(uint64_t seed, int64_t n = 8, int64_t d = 3) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Fixture fx;
    fx.model = init_params({d, 2}, seed);
    fx.batch.inputs = Tensor::zeros({n, d});
    for (double& v : fx.batch.inputs.data) v = gauss(rng);
    fx.batch.labels = Tensor::zeros({n, 2});
    for (int64_t i = 0; i < n; ++i) fx.batch.labels.at(i, static_cast<int64_t>(rng() & 1ull)) = 1.0;
    fx.fr = forward_reference(fx.model, fx.batch);
    return fx;
}

}  // namespace

TEST_CASE("rademacher stream draws +/-1 and is reproducible") {
    RademacherStream a(9), b(9);
    Tensor ra = a.next(64), rb = b.next(64);
    CHECK(ra.data == rb.data);
    int plus = 0;
    for (double v : ra.data) {
        CHECK((v == 1.0 || v == -1.0));
        if (v == 1.0) ++plus;
    }
    CHECK(plus > 10);
    CHECK(plus < 54);
}

TEST_CASE("closed-form HGP is the dense hessian times gradient") {
    Fixture fx = make_fixture(51);
    Tensor hgp = hgp_closed_form(fx.fr.features, fx.fr.probs, fx.batch.labels);
    HeadHessian H = head_hessian(fx.fr.features, fx.fr.probs);
    Tensor g = head_grad(fx.fr.features, fx.fr.probs, fx.batch.labels).flat();
    for (int64_t i = 0; i < H.dim(); ++i) {
        double dense = 0.0;
        for (int64_t j = 0; j < H.dim(); ++j) dense += H.at(i, j) * g.data[static_cast<size_t>(j)];
        CHECK(std::abs(dense - hgp.data[static_cast<size_t>(i)]) < 1e-10);
    }
    // zero gradient -> zero product
    Tensor z({1, 2}, {1.0, -1.0});
    Tensor exact({1, 2}, {1.0, 0.0});
    Tensor zero = hgp_closed_form(z, exact, exact);
    for (double v : zero.data) CHECK(v == 0.0);
}

TEST_CASE("norm-gradient identity on a quadratic returns A^2 theta") {
    Tensor A({2, 2}, {2.0, 1.0, 1.0, 3.0});
    Tensor th0({2}, {0.5, -1.0});
    Tape tape;
    NodeId th = tape.leaf(th0);
    NodeId col = tape.record(Op::Reshape, {th}, {.target_shape = {2, 1}});
    NodeId Ath = tape.record(Op::Reshape, {tape.record(Op::MatMul, {tape.constant(A), col})}, {.target_shape = {2}});
    NodeId loss = tape.record(Op::Mul, {tape.record(Op::Dot, {th, Ath}), tape.constant(Tensor::scalar(0.5))});
    HgpResult res = hgp_via_norm_grad(tape, loss, {th});
    REQUIRE_FALSE(res.degenerate);
    // g = A theta, H = A -> H g = A^2 theta
    std::vector<double> a2th{2.0 * (2.0 * 0.5 + 1.0 * -1.0) + 1.0 * (1.0 * 0.5 + 3.0 * -1.0),
                             1.0 * (2.0 * 0.5 + 1.0 * -1.0) + 3.0 * (1.0 * 0.5 + 3.0 * -1.0)};
    CHECK(res.hgp.data[0] == doctest::Approx(a2th[0]).epsilon(1e-10));
    CHECK(res.hgp.data[1] == doctest::Approx(a2th[1]).epsilon(1e-10));
}

TEST_CASE("norm-gradient identity uses exactly two backward passes") {
    Fixture fx = make_fixture(53);
    Tape tape;
    TapedModel tm = stage_params(tape, fx.model);
    ForwardNodes fn = forward_on_tape(tape, tm, fx.batch);
    int before = tape.backward_pass_count();
    HgpResult res = hgp_via_norm_grad(tape, fn.loss, tm.head_params());
    CHECK(tape.backward_pass_count() - before == 2);
    Tensor exact = hgp_closed_form(fx.fr.features, fx.fr.probs, fx.batch.labels);
    REQUIRE_FALSE(res.degenerate);
    for (int64_t i = 0; i < exact.numel(); ++i)
        CHECK(std::abs(res.hgp.data[static_cast<size_t>(i)] - exact.data[static_cast<size_t>(i)]) < 1e-8);
}

TEST_CASE("degenerate gradient is flagged and returns zeros") {
    // zero features and balanced labels: head gradient is exactly zero
    Model m;
    m.head.W = Tensor::zeros({2, 2});
    m.head.b = Tensor::zeros({2});
    Batch batch;
    batch.inputs = Tensor::zeros({2, 2});
    batch.labels = Tensor({2, 2}, {1, 0, 0, 1});
    Tape tape;
    TapedModel tm = stage_params(tape, m);
    ForwardNodes fn = forward_on_tape(tape, tm, batch);
    HgpResult res = hgp_via_norm_grad(tape, fn.loss, tm.head_params());
    CHECK(res.degenerate);
    for (double v : res.hgp.data) CHECK(v == 0.0);
}

TEST_CASE("exact diagonal hand case and dense agreement") {
    Tensor z({1, 1}, {1.0});
    Tensor probs({1, 2}, {0.5, 0.5});
    Tensor diag = exact_diag(z, probs);
    for (double v : diag.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));

    Fixture fx = make_fixture(57);
    HeadHessian H = head_hessian(fx.fr.features, fx.fr.probs);
    Tensor d = exact_diag(fx.fr.features, fx.fr.probs);
    for (int64_t i = 0; i < H.dim(); ++i) {
        CHECK(d.data[static_cast<size_t>(i)] == doctest::Approx(H.at(i, i)).epsilon(1e-12));
        CHECK(d.data[static_cast<size_t>(i)] >= 0.0);
    }
}

TEST_CASE("hutchinson determinism and single-sample identity on diagonal matrices") {
    Fixture fx = make_fixture(59);
    RademacherStream s1(3), s2(3);
    Tensor e1 = hutchinson_diag(fx.fr.features, fx.fr.probs, 10, s1);
    Tensor e2 = hutchinson_diag(fx.fr.features, fx.fr.probs, 10, s2);
    CHECK(e1.data == e2.data);

    // r (hadamard) (D r) = D for any Rademacher r, since r*r = 1
    std::vector<double> D{0.5, 2.0, -1.0, 0.0};
    RademacherStream s(11);
    Tensor r = s.next(4);
    for (size_t i = 0; i < 4; ++i) {
        double est = r.data[i] * (D[i] * r.data[i]);
        CHECK(est == D[i]);
    }
}

TEST_CASE("hutchinson converges to the exact diagonal") {
    Fixture fx = make_fixture(61, 16, 4);
    Tensor exact = exact_diag(fx.fr.features, fx.fr.probs);
    double mx = 0.0;
    for (double v : exact.data) mx = std::max(mx, std::abs(v));
    RademacherStream stream(13);
    Tensor est = hutchinson_diag(fx.fr.features, fx.fr.probs, 10000, stream);
    for (int64_t i = 0; i < exact.numel(); ++i) {
        double e = exact.data[static_cast<size_t>(i)];
        if (std::abs(e) > 0.01 * mx)
            CHECK(std::abs(est.data[static_cast<size_t>(i)] - e) / std::abs(e) < 0.05);
    }
    CHECK_THROWS_AS(hutchinson_diag(fx.fr.features, fx.fr.probs, 0, stream), std::invalid_argument);
}
