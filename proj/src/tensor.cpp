#include "hessalign/tensor.hpp"

#include <cmath>

namespace hessalign {

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::MatMul: return "matmul";
        case Op::Relu: return "relu";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Square: return "square";
        case Op::Sqrt: return "sqrt";
        case Op::Recip: return "recip";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Dot: return "dot";
        case Op::Broadcast: return "broadcast";
        case Op::Slice: return "slice";
        case Op::Concat: return "concat";
        case Op::Reshape: return "reshape";
    }
    return "unknown";
}

Op op_from_name(const std::string& name) {
    static const std::pair<const char*, Op> table[] = {
        {"leaf", Op::Leaf},         {"add", Op::Add},     {"mul", Op::Mul},
        {"matmul", Op::MatMul},     {"relu", Op::Relu},   {"exp", Op::Exp},
        {"log", Op::Log},           {"square", Op::Square}, {"sqrt", Op::Sqrt},
        {"recip", Op::Recip},       {"sum", Op::Sum},     {"mean", Op::Mean},
        {"dot", Op::Dot},           {"broadcast", Op::Broadcast},
        {"slice", Op::Slice},       {"concat", Op::Concat}, {"reshape", Op::Reshape},
    };
    for (const auto& [n, op] : table)
        if (name == n) return op;
    throw std::invalid_argument("unknown op_kind: " + name);
}

namespace kernels {

namespace {

template <class F>
Tensor map1(const Tensor& x, F f) {
    Tensor out = x;
    for (double& v : out.data) v = f(v);
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) {
        Tensor out = a;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
        return out;
    }
    if (b.is_scalar()) {
        double s = b.data[0];
        return map1(a, [s](double v) { return v + s; });
    }
    // row bias: a is n x c, b is c
    if (a.rank() == 2 && b.rank() == 1 && b.shape[0] == a.cols()) {
        Tensor out = a;
        int64_t n = a.rows(), c = a.cols();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < c; ++j) out.data[static_cast<size_t>(i * c + j)] += b.data[static_cast<size_t>(j)];
        return out;
    }
    throw ShapeError("add: incompatible shapes");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) {
        Tensor out = a;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
        return out;
    }
    if (b.is_scalar()) {
        double s = b.data[0];
        return map1(a, [s](double v) { return v * s; });
    }
    if (a.is_scalar()) {
        double s = a.data[0];
        return map1(b, [s](double v) { return v * s; });
    }
    throw ShapeError("mul: incompatible shapes");
}

Tensor matmul(const Tensor& a, const Tensor& b, bool t_a, bool t_b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: rank-2 operands required");
    int64_t m = t_a ? a.cols() : a.rows();
    int64_t k = t_a ? a.rows() : a.cols();
    int64_t kb = t_b ? b.cols() : b.rows();
    int64_t n = t_b ? b.rows() : b.cols();
    if (k != kb) throw ShapeError("matmul: inner-dimension mismatch");
    Tensor out = Tensor::zeros({m, n});
    const double* ad = a.data.data();
    const double* bd = b.data.data();
    double* od = out.data.data();
    int64_t lda = a.cols(), ldb = b.cols();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            double av = t_a ? ad[p * lda + i] : ad[i * lda + p];
            if (av == 0.0) continue;
            const double* brow = t_b ? nullptr : bd + p * ldb;
            double* orow = od + i * n;
            if (!t_b) {
                for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            } else {
                for (int64_t j = 0; j < n; ++j) orow[j] += av * bd[j * ldb + p];
            }
        }
    }
    return out;
}

Tensor relu(const Tensor& x) {
    return map1(x, [](double v) { return v > 0.0 ? v : 0.0; });
}
Tensor exp(const Tensor& x) {
    return map1(x, [](double v) { return std::exp(v); });
}
Tensor log(const Tensor& x) {
    return map1(x, [](double v) { return std::log(v); });
}
Tensor square(const Tensor& x) {
    return map1(x, [](double v) { return v * v; });
}
Tensor sqrt(const Tensor& x) {
    return map1(x, [](double v) { return std::sqrt(v); });
}
Tensor recip(const Tensor& x) {
    return map1(x, [](double v) { return 1.0 / v; });
}

Tensor sum(const Tensor& x, int axis) {
    if (axis < 0) {
        double s = 0.0;
        for (double v : x.data) s += v;
        return Tensor::scalar(s);
    }
    if (x.rank() != 2) throw ShapeError("sum: axis reduction requires rank-2 input");
    int64_t n = x.rows(), c = x.cols();
    if (axis == 0) {
        Tensor out = Tensor::zeros({c});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < c; ++j) out.data[static_cast<size_t>(j)] += x.at(i, j);
        return out;
    }
    if (axis == 1) {
        Tensor out = Tensor::zeros({n});
        for (int64_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (int64_t j = 0; j < c; ++j) s += x.at(i, j);
            out.data[static_cast<size_t>(i)] = s;
        }
        return out;
    }
    throw ShapeError("sum: invalid axis");
}

Tensor mean(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data) s += v;
    return Tensor::scalar(s / static_cast<double>(x.numel()));
}

Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return Tensor::scalar(s);
}

Tensor broadcast(const Tensor& x, const std::vector<int64_t>& target, int axis) {
    Tensor out = Tensor::zeros(target);
    if (x.is_scalar()) {
        double v = x.data[0];
        for (double& o : out.data) o = v;
        return out;
    }
    if (out.rank() != 2 || x.rank() != 1) throw ShapeError("broadcast: unsupported shapes");
    int64_t n = out.rows(), c = out.cols();
    if (axis == 0) {
        // row vector of length c replicated over rows
        if (x.shape[0] != c) throw ShapeError("broadcast: row length mismatch");
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < c; ++j) out.at(i, j) = x.data[static_cast<size_t>(j)];
        return out;
    }
    if (axis == 1) {
        // column vector of length n replicated over columns
        if (x.shape[0] != n) throw ShapeError("broadcast: column length mismatch");
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < c; ++j) out.at(i, j) = x.data[static_cast<size_t>(i)];
        return out;
    }
    throw ShapeError("broadcast: invalid axis");
}

Tensor slice(const Tensor& x, int64_t start, int64_t length) {
    if (x.rank() != 1) throw ShapeError("slice: rank-1 input required");
    if (start < 0 || length <= 0 || start + length > x.numel()) throw ShapeError("slice: range out of bounds");
    return Tensor({length}, std::vector<double>(x.data.begin() + start, x.data.begin() + start + length));
}

Tensor concat(const std::vector<const Tensor*>& xs) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    int64_t total = 0;
    for (const Tensor* x : xs) {
        if (x->rank() != 1) throw ShapeError("concat: rank-1 inputs required");
        total += x->numel();
    }
    Tensor out = Tensor::zeros({total});
    size_t off = 0;
    for (const Tensor* x : xs) {
        std::copy(x->data.begin(), x->data.end(), out.data.begin() + static_cast<int64_t>(off));
        off += x->data.size();
    }
    return out;
}

Tensor reshape(const Tensor& x, const std::vector<int64_t>& target) {
    if (Tensor::numel_of(target) != x.numel()) throw ShapeError("reshape: element count mismatch");
    return Tensor(target, x.data);
}

}  // namespace kernels

Tensor eval_op(Op op, const OpAttrs& attrs, const std::vector<const Tensor*>& in) {
    auto need = [&](size_t n) {
        if (in.size() != n) throw ShapeError(std::string(op_name(op)) + ": wrong number of inputs");
    };
    switch (op) {
        case Op::Leaf: throw std::logic_error("eval_op on leaf");
        case Op::Add: need(2); return kernels::add(*in[0], *in[1]);
        case Op::Mul: need(2); return kernels::mul(*in[0], *in[1]);
        case Op::MatMul: need(2); return kernels::matmul(*in[0], *in[1], attrs.t_a, attrs.t_b);
        case Op::Relu: need(1); return kernels::relu(*in[0]);
        case Op::Exp: need(1); return kernels::exp(*in[0]);
        case Op::Log: need(1); return kernels::log(*in[0]);
        case Op::Square: need(1); return kernels::square(*in[0]);
        case Op::Sqrt: need(1); return kernels::sqrt(*in[0]);
        case Op::Recip: need(1); return kernels::recip(*in[0]);
        case Op::Sum: need(1); return kernels::sum(*in[0], attrs.axis);
        case Op::Mean: need(1); return kernels::mean(*in[0]);
        case Op::Dot: need(2); return kernels::dot(*in[0], *in[1]);
        case Op::Broadcast: need(1); return kernels::broadcast(*in[0], attrs.target_shape, attrs.axis);
        case Op::Slice: need(1); return kernels::slice(*in[0], attrs.start, attrs.length);
        case Op::Concat: return kernels::concat(in);
        case Op::Reshape: need(1); return kernels::reshape(*in[0], attrs.target_shape);
    }
    throw std::logic_error("unreachable op");
}

}  // namespace hessalign
