#include "hessalign/tape.hpp"

#include <cmath>
#include <functional>

namespace hessalign {

namespace {

struct EagerCtx {
    const Tape& tape;
    using V = Tensor;
    V apply(Op op, const OpAttrs& attrs, const std::vector<const Tensor*>& ins) { return eval_op(op, attrs, ins); }
    V apply1(Op op, const V& a, OpAttrs attrs = {}) { return apply(op, attrs, {&a}); }
    V apply2(Op op, const V& a, const V& b, OpAttrs attrs = {}) { return apply(op, attrs, {&a, &b}); }
    V wrap(NodeId id) { return tape.value(id); }
    V constant(Tensor v) { return v; }
};

struct TapedCtx {
    Tape& tape;
    using V = NodeId;
    V apply1(Op op, V a, OpAttrs attrs = {}) { return tape.record(op, {a}, std::move(attrs)); }
    V apply2(Op op, V a, V b, OpAttrs attrs = {}) { return tape.record(op, {a, b}, std::move(attrs)); }
    V wrap(NodeId id) { return id; }
    V constant(Tensor v) { return tape.constant(std::move(v)); }
};

// Computes the adjoint contribution of `dy` to each input of node `id`.
// `wanted[k]` masks inputs whose contribution is needed; `emit(k, v)` receives
// the rest. All contributions are expressed through eval_op primitives so the
// same rules serve both the eager and the taped sweep.
template <class Ctx>
void push_vjps(const Tape& t, NodeId id, const typename Ctx::V& dy, Ctx& ctx, const std::vector<bool>& wanted,
               const std::function<void(size_t, typename Ctx::V)>& emit) {
    using V = typename Ctx::V;
    const TapeNode& n = t.node(id);
    auto in_val = [&](size_t k) -> const Tensor& { return t.value(n.inputs[k]); };
    auto mulc = [&](V a, double s) { return ctx.apply2(Op::Mul, std::move(a), ctx.constant(Tensor::scalar(s))); };

    switch (n.op) {
        case Op::Leaf:
            return;
        case Op::Add: {
            const Tensor& a = in_val(0);
            const Tensor& b = in_val(1);
            if (wanted[0]) emit(0, dy);
            if (wanted[1]) {
                if (a.same_shape(b)) {
                    emit(1, dy);
                } else if (b.is_scalar()) {
                    emit(1, ctx.apply1(Op::Sum, dy, {.axis = -1}));
                } else {  // row bias
                    emit(1, ctx.apply1(Op::Sum, dy, {.axis = 0}));
                }
            }
            return;
        }
        case Op::Mul: {
            const Tensor& a = in_val(0);
            const Tensor& b = in_val(1);
            if (a.same_shape(b)) {
                if (wanted[0]) emit(0, ctx.apply2(Op::Mul, dy, ctx.wrap(n.inputs[1])));
                if (wanted[1]) emit(1, ctx.apply2(Op::Mul, dy, ctx.wrap(n.inputs[0])));
            } else if (b.is_scalar()) {
                if (wanted[0]) emit(0, ctx.apply2(Op::Mul, dy, ctx.wrap(n.inputs[1])));
                if (wanted[1])
                    emit(1, ctx.apply1(Op::Sum, ctx.apply2(Op::Mul, dy, ctx.wrap(n.inputs[0])), {.axis = -1}));
            } else {  // a scalar
                if (wanted[0])
                    emit(0, ctx.apply1(Op::Sum, ctx.apply2(Op::Mul, dy, ctx.wrap(n.inputs[1])), {.axis = -1}));
                if (wanted[1]) emit(1, ctx.apply2(Op::Mul, dy, ctx.wrap(n.inputs[0])));
            }
            return;
        }
        case Op::MatMul: {
            bool ta = n.attrs.t_a, tb = n.attrs.t_b;
            V B = ctx.wrap(n.inputs[1]);
            if (wanted[0]) {
                if (!ta)
                    emit(0, ctx.apply2(Op::MatMul, dy, std::move(B), {.t_a = false, .t_b = !tb}));
                else
                    emit(0, ctx.apply2(Op::MatMul, std::move(B), dy, {.t_a = tb, .t_b = true}));
            }
            if (wanted[1]) {
                V A2 = ctx.wrap(n.inputs[0]);
                if (!tb)
                    emit(1, ctx.apply2(Op::MatMul, std::move(A2), dy, {.t_a = !ta, .t_b = false}));
                else
                    emit(1, ctx.apply2(Op::MatMul, dy, std::move(A2), {.t_a = true, .t_b = ta}));
            }
            return;
        }
        case Op::Relu: {
            if (!wanted[0]) return;
            // Subgradient 0 at exactly 0; mask is a constant, so second
            // derivatives through relu are zero.
            Tensor mask = in_val(0);
            for (double& v : mask.data) v = v > 0.0 ? 1.0 : 0.0;
            emit(0, ctx.apply2(Op::Mul, dy, ctx.constant(std::move(mask))));
            return;
        }
        case Op::Exp:
            if (wanted[0]) emit(0, ctx.apply2(Op::Mul, dy, ctx.wrap(id)));
            return;
        case Op::Log:
            if (wanted[0]) emit(0, ctx.apply2(Op::Mul, dy, ctx.apply1(Op::Recip, ctx.wrap(n.inputs[0]))));
            return;
        case Op::Square:
            if (wanted[0]) emit(0, mulc(ctx.apply2(Op::Mul, dy, ctx.wrap(n.inputs[0])), 2.0));
            return;
        case Op::Sqrt:
            if (wanted[0]) emit(0, mulc(ctx.apply2(Op::Mul, dy, ctx.apply1(Op::Recip, ctx.wrap(id))), 0.5));
            return;
        case Op::Recip: {
            if (!wanted[0]) return;
            V sq = ctx.apply2(Op::Mul, ctx.wrap(id), ctx.wrap(id));
            emit(0, mulc(ctx.apply2(Op::Mul, dy, std::move(sq)), -1.0));
            return;
        }
        case Op::Sum: {
            if (!wanted[0]) return;
            emit(0, ctx.apply1(Op::Broadcast, dy, {.axis = n.attrs.axis, .target_shape = in_val(0).shape}));
            return;
        }
        case Op::Mean: {
            if (!wanted[0]) return;
            V g = ctx.apply1(Op::Broadcast, dy, {.axis = -1, .target_shape = in_val(0).shape});
            emit(0, mulc(std::move(g), 1.0 / static_cast<double>(in_val(0).numel())));
            return;
        }
        case Op::Dot: {
            for (size_t k = 0; k < 2; ++k) {
                if (!wanted[k]) continue;
                V g = ctx.apply2(Op::Mul, ctx.wrap(n.inputs[1 - k]), dy);
                if (in_val(k).shape != in_val(1 - k).shape)
                    g = ctx.apply1(Op::Reshape, std::move(g), {.target_shape = in_val(k).shape});
                emit(k, std::move(g));
            }
            return;
        }
        case Op::Broadcast: {
            if (!wanted[0]) return;
            int axis = in_val(0).is_scalar() ? -1 : n.attrs.axis;
            emit(0, ctx.apply1(Op::Sum, dy, {.axis = axis}));
            return;
        }
        case Op::Slice: {
            if (!wanted[0]) return;
            int64_t total = in_val(0).numel();
            int64_t s = n.attrs.start, l = n.attrs.length;
            std::vector<V> parts;
            if (s > 0) parts.push_back(ctx.constant(Tensor::zeros({s})));
            parts.push_back(dy);
            if (s + l < total) parts.push_back(ctx.constant(Tensor::zeros({total - s - l})));
            if (parts.size() == 1) {
                emit(0, std::move(parts[0]));
            } else if constexpr (std::is_same_v<Ctx, TapedCtx>) {
                emit(0, ctx.tape.record(Op::Concat, parts));
            } else {
                std::vector<const Tensor*> ps;
                for (const auto& p : parts) ps.push_back(&p);
                emit(0, eval_op(Op::Concat, {}, ps));
            }
            return;
        }
        case Op::Concat: {
            int64_t off = 0;
            for (size_t k = 0; k < n.inputs.size(); ++k) {
                int64_t len = in_val(k).numel();
                if (wanted[k]) emit(k, ctx.apply1(Op::Slice, dy, {.start = off, .length = len}));
                off += len;
            }
            return;
        }
        case Op::Reshape:
            if (wanted[0]) emit(0, ctx.apply1(Op::Reshape, dy, {.target_shape = in_val(0).shape}));
            return;
    }
}

}  // namespace

const TapeNode& Tape::node(NodeId id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("node id not on tape");
    return nodes_[static_cast<size_t>(id)];
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
    if (!value.all_finite()) throw NonFiniteError("leaf value contains NaN/Inf");
    TapeNode n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return size() - 1;
}

NodeId Tape::record(Op op, std::vector<NodeId> inputs, OpAttrs attrs) {
    if (op == Op::Leaf) throw std::invalid_argument("use leaf() to add leaves");
    std::vector<const Tensor*> vals;
    vals.reserve(inputs.size());
    bool rg = false;
    for (NodeId id : inputs) {
        const TapeNode& in = node(id);  // validates id
        vals.push_back(&in.value);
        rg = rg || in.requires_grad;
    }
    if (op == Op::Relu) {
        for (double v : vals[0]->data)
            if (v == 0.0) {
                nondiff_point_ = true;
                break;
            }
    }
    TapeNode n;
    n.op = op;
    n.attrs = std::move(attrs);
    n.inputs = std::move(inputs);
    n.value = eval_op(op, n.attrs, vals);
    n.requires_grad = rg;
    if (!n.value.all_finite())
        throw NonFiniteError(std::string("non-finite result from op ") + op_name(op));
    nodes_.push_back(std::move(n));
    return size() - 1;
}

GradMap Tape::backward(NodeId root, const Tensor* seed, const std::vector<NodeId>* wrt) const {
    const TapeNode& r = node(root);
    Tensor s;
    if (seed) {
        if (seed->shape != r.value.shape) throw ShapeError("backward: seed shape mismatch");
        s = *seed;
    } else {
        s = Tensor::full(r.value.shape, 1.0);
    }
    ++backward_passes_;

    std::vector<bool> dep;
    if (wrt) {
        dep.assign(static_cast<size_t>(root) + 1, false);
        for (NodeId w : *wrt)
            if (w <= root) dep[static_cast<size_t>(w)] = true;
        for (NodeId i = 0; i <= root; ++i) {
            if (dep[static_cast<size_t>(i)]) continue;
            for (NodeId j : nodes_[static_cast<size_t>(i)].inputs)
                if (dep[static_cast<size_t>(j)]) {
                    dep[static_cast<size_t>(i)] = true;
                    break;
                }
        }
    }

    std::vector<std::optional<Tensor>> adj(static_cast<size_t>(root) + 1);
    adj[static_cast<size_t>(root)] = std::move(s);
    EagerCtx ctx{*this};
    for (NodeId i = root; i >= 0; --i) {
        if (!adj[static_cast<size_t>(i)]) continue;
        if (wrt && i != root && !dep[static_cast<size_t>(i)]) continue;
        const TapeNode& n = nodes_[static_cast<size_t>(i)];
        if (n.op == Op::Leaf) continue;
        std::vector<bool> wanted(n.inputs.size(), true);
        if (wrt)
            for (size_t k = 0; k < n.inputs.size(); ++k) wanted[k] = dep[static_cast<size_t>(n.inputs[k])];
        push_vjps<EagerCtx>(*this, i, *adj[static_cast<size_t>(i)], ctx, wanted, [&](size_t k, Tensor g) {
            NodeId j = n.inputs[k];
            auto& slot = adj[static_cast<size_t>(j)];
            if (slot)
                slot = kernels::add(*slot, g);
            else
                slot = std::move(g);
        });
    }
    GradMap out;
    for (NodeId i = 0; i <= root; ++i)
        if (adj[static_cast<size_t>(i)]) out.emplace(i, std::move(*adj[static_cast<size_t>(i)]));
    return out;
}

std::unordered_map<NodeId, NodeId> Tape::backward_taped(NodeId root, const std::vector<NodeId>& wrt) {
    const TapeNode& r = node(root);
    const int snapshot = size();
    ++backward_passes_;

    std::vector<bool> dep(static_cast<size_t>(snapshot), false);
    for (NodeId w : wrt) {
        node(w);  // validates
        dep[static_cast<size_t>(w)] = true;
    }
    for (NodeId i = 0; i < snapshot; ++i) {
        if (dep[static_cast<size_t>(i)]) continue;
        for (NodeId j : nodes_[static_cast<size_t>(i)].inputs)
            if (dep[static_cast<size_t>(j)]) {
                dep[static_cast<size_t>(i)] = true;
                break;
            }
    }

    std::vector<NodeId> adj(static_cast<size_t>(snapshot), -1);
    adj[static_cast<size_t>(root)] = constant(Tensor::full(r.value.shape, 1.0));
    TapedCtx ctx{*this};
    for (NodeId i = root; i >= 0; --i) {
        NodeId a = adj[static_cast<size_t>(i)];
        if (a < 0 || !dep[static_cast<size_t>(i)]) continue;
        const TapeNode n = nodes_[static_cast<size_t>(i)];  // copy: tape grows below
        if (n.op == Op::Leaf) continue;
        std::vector<bool> wanted(n.inputs.size());
        for (size_t k = 0; k < n.inputs.size(); ++k) wanted[k] = dep[static_cast<size_t>(n.inputs[k])];
        push_vjps<TapedCtx>(*this, i, a, ctx, wanted, [&](size_t k, NodeId g) {
            NodeId j = n.inputs[k];
            NodeId& slot = adj[static_cast<size_t>(j)];
            slot = slot < 0 ? g : record(Op::Add, {slot, g});
        });
    }
    std::unordered_map<NodeId, NodeId> out;
    for (NodeId w : wrt)
        if (adj[static_cast<size_t>(w)] >= 0) out.emplace(w, adj[static_cast<size_t>(w)]);
    return out;
}

NodeId Tape::flatten_nodes(const std::vector<NodeId>& ids) {
    std::vector<NodeId> flat;
    flat.reserve(ids.size());
    for (NodeId id : ids) {
        NodeId f = id;
        if (value(id).rank() != 1) f = record(Op::Reshape, {id}, {.target_shape = {value(id).numel()}});
        flat.push_back(f);
    }
    if (flat.size() == 1) return flat[0];
    return record(Op::Concat, flat);
}

Tensor Tape::grad_of_grad(NodeId loss, const std::vector<NodeId>& wrt, const Tensor& probe) {
    if (!value(loss).is_scalar()) throw ShapeError("grad_of_grad: loss must be scalar");
    int64_t m = 0;
    for (NodeId w : wrt) m += value(w).numel();
    if (probe.numel() != m) throw ShapeError("grad_of_grad: probe length mismatch");

    auto g = backward_taped(loss, wrt);
    std::vector<NodeId> parts;
    parts.reserve(wrt.size());
    for (NodeId w : wrt) {
        auto it = g.find(w);
        if (it != g.end())
            parts.push_back(it->second);
        else
            parts.push_back(constant(Tensor::zeros(value(w).shape)));
    }
    NodeId gflat = flatten_nodes(parts);
    NodeId s = record(Op::Dot, {gflat, constant(probe)});
    GradMap gm = backward(s, nullptr, &wrt);
    return flatten_grads(*this, gm, wrt);
}

Tensor flatten_grads(const Tape& tape, const GradMap& grads, const std::vector<NodeId>& wrt) {
    std::vector<Tensor> parts;
    std::vector<const Tensor*> ptrs;
    parts.reserve(wrt.size());
    for (NodeId w : wrt) {
        auto it = grads.find(w);
        Tensor t = it != grads.end() ? it->second : Tensor::zeros(tape.value(w).shape);
        t.shape = {t.numel()};
        parts.push_back(std::move(t));
    }
    for (const Tensor& p : parts) ptrs.push_back(&p);
    return kernels::concat(ptrs);
}

}  // namespace hessalign
