#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hessalign {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NonFiniteError : std::runtime_error {
    explicit NonFiniteError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major tensor of 64-bit floats. Scalars are shape {1}.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != static_cast<size_t>(numel_of(shape)))
            throw ShapeError("tensor data length does not match shape");
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d <= 0) throw ShapeError("non-positive dimension in shape");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int64_t> s) {
        int64_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
    }
    static Tensor full(std::vector<int64_t> s, double v) {
        int64_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), v));
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t rows() const { return shape.at(0); }
    int64_t cols() const { return shape.at(1); }
    bool is_scalar() const { return data.size() == 1; }
    double scalar_value() const {
        if (!is_scalar()) throw ShapeError("tensor is not a scalar");
        return data[0];
    }
    double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
    double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

enum class Op {
    Leaf,
    Add,
    Mul,
    MatMul,
    Relu,
    Exp,
    Log,
    Square,
    Sqrt,
    Recip,
    Sum,
    Mean,
    Dot,
    Broadcast,
    Slice,
    Concat,
    Reshape,
};

const char* op_name(Op op);
Op op_from_name(const std::string& name);

struct OpAttrs {
    int axis = -1;                      // Sum: -1 all, 0 reduce rows, 1 reduce cols; Broadcast: expanded axis
    bool t_a = false, t_b = false;      // MatMul transpose flags
    int64_t start = 0, length = 0;      // Slice (rank-1)
    std::vector<int64_t> target_shape;  // Broadcast / Reshape
};

namespace kernels {

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b, bool t_a, bool t_b);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor recip(const Tensor& x);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor broadcast(const Tensor& x, const std::vector<int64_t>& target, int axis);
Tensor slice(const Tensor& x, int64_t start, int64_t length);
Tensor concat(const std::vector<const Tensor*>& xs);
Tensor reshape(const Tensor& x, const std::vector<int64_t>& target);

}  // namespace kernels

// Evaluates one primitive; the single execution path shared by the tape and
// the tape-free reference evaluator.
Tensor eval_op(Op op, const OpAttrs& attrs, const std::vector<const Tensor*>& inputs);

}  // namespace hessalign
