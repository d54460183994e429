#include <doctest.h>

#include "hessalign/tensor.hpp"

using namespace hessalign;

TEST_CASE("tensor shape/data consistency is enforced") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({0}), ShapeError);
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at(1, 2) == 6.0);
}

TEST_CASE("add is elementwise for equal shapes") {
    Tensor x({2, 2}, {1, 2, 3, 4});
    Tensor y({2, 2}, {10, 20, 30, 40});
    Tensor z = kernels::add(x, y);
    CHECK(z.data == std::vector<double>{11, 22, 33, 44});
}

TEST_CASE("add supports scalar and row-bias broadcasting only") {
    Tensor x({2, 2}, {1, 2, 3, 4});
    CHECK(kernels::add(x, Tensor::scalar(1.0)).data == std::vector<double>{2, 3, 4, 5});
    Tensor bias({2}, {10, 20});
    CHECK(kernels::add(x, bias).data == std::vector<double>{11, 22, 13, 24});
    Tensor bad({3}, {1, 2, 3});
    CHECK_THROWS_AS(kernels::add(x, bad), ShapeError);
}

TEST_CASE("matmul shapes and values") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b({3, 1}, {1, 1, 1});
    Tensor c = kernels::matmul(a, b, false, false);
    CHECK(c.shape == std::vector<int64_t>{2, 1});
    CHECK(c.data == std::vector<double>{6, 15});
    CHECK_THROWS_AS(kernels::matmul(a, a, false, false), ShapeError);
}

TEST_CASE("matmul transpose flags agree with explicit transposition") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b({2, 3}, {1, 0, 2, 0, 1, 1});
    // a * b^T
    Tensor ref = Tensor::zeros({2, 2});
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 2; ++j)
            for (int64_t k = 0; k < 3; ++k) ref.at(i, j) += a.at(i, k) * b.at(j, k);
    CHECK(kernels::matmul(a, b, false, true).data == ref.data);
    // a^T * b
    Tensor ref2 = Tensor::zeros({3, 3});
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 3; ++j)
            for (int64_t k = 0; k < 2; ++k) ref2.at(i, j) += a.at(k, i) * b.at(k, j);
    CHECK(kernels::matmul(a, b, true, false).data == ref2.data);
}

TEST_CASE("reductions") {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(kernels::sum(x, -1).scalar_value() == 21.0);
    CHECK(kernels::sum(x, 0).data == std::vector<double>{5, 7, 9});
    CHECK(kernels::sum(x, 1).data == std::vector<double>{6, 15});
    CHECK(kernels::mean(x).scalar_value() == 3.5);
    Tensor v({3}, {1, 2, 3});
    CHECK(kernels::dot(v, v).scalar_value() == 14.0);
}

TEST_CASE("broadcast along both axes") {
    Tensor row({3}, {1, 2, 3});
    Tensor r = kernels::broadcast(row, {2, 3}, 0);
    CHECK(r.data == std::vector<double>{1, 2, 3, 1, 2, 3});
    Tensor col({2}, {5, 6});
    Tensor c = kernels::broadcast(col, {2, 3}, 1);
    CHECK(c.data == std::vector<double>{5, 5, 5, 6, 6, 6});
    Tensor s = kernels::broadcast(Tensor::scalar(7.0), {2, 2}, -1);
    CHECK(s.data == std::vector<double>{7, 7, 7, 7});
}

TEST_CASE("slice and concat round-trip") {
    Tensor v({5}, {1, 2, 3, 4, 5});
    Tensor a = kernels::slice(v, 0, 2);
    Tensor b = kernels::slice(v, 2, 3);
    CHECK(kernels::concat({&a, &b}).data == v.data);
    CHECK_THROWS_AS(kernels::slice(v, 4, 2), ShapeError);
}

TEST_CASE("op names round-trip and unknown op is rejected") {
    for (Op op : {Op::Add, Op::MatMul, Op::Relu, Op::Broadcast, Op::Concat, Op::Reshape})
        CHECK(op_from_name(op_name(op)) == op);
    CHECK_THROWS_AS(op_from_name("conv2d"), std::invalid_argument);
}
