#pragma once

#include <optional>
#include <unordered_map>
#include <vector>

#include "hessalign/tensor.hpp"

namespace hessalign {

using NodeId = int;
using GradMap = std::unordered_map<NodeId, Tensor>;

struct TapeNode {
    Op op = Op::Leaf;
    OpAttrs attrs;
    std::vector<NodeId> inputs;
    Tensor value;
    bool requires_grad = false;
};

// Append-only computation record. Values are computed eagerly on record();
// inputs always reference strictly earlier nodes. backward() is a pure read;
// backward_taped() appends the adjoint computation as new nodes so it can be
// differentiated again (double backprop).
class Tape {
public:
    NodeId leaf(Tensor value, bool requires_grad = true);
    NodeId constant(Tensor value) { return leaf(std::move(value), false); }
    NodeId record(Op op, std::vector<NodeId> inputs, OpAttrs attrs = {});

    const Tensor& value(NodeId id) const { return node(id).value; }
    const TapeNode& node(NodeId id) const;
    int size() const { return static_cast<int>(nodes_.size()); }

    // Number of backward sweeps performed on this tape (either flavor).
    int backward_pass_count() const { return backward_passes_; }
    // Set when a relu was recorded at an input containing an exact zero,
    // where the second derivative convention (subgradient 0) kicks in.
    bool nondifferentiable_point() const { return nondiff_point_; }

    // Adjoints of root w.r.t. every ancestor. Does not modify the tape.
    // When `wrt` is given, propagation is pruned to paths reaching it.
    GradMap backward(NodeId root, const Tensor* seed = nullptr, const std::vector<NodeId>* wrt = nullptr) const;

    // Adjoints as tape nodes, pruned to paths reaching `wrt`. Returns
    // wrt id -> adjoint node id; parameters unreachable from root are absent.
    std::unordered_map<NodeId, NodeId> backward_taped(NodeId root, const std::vector<NodeId>& wrt);

    // Exact Hessian-vector product: d/dtheta (dL/dtheta . probe) over the
    // flattened `wrt` parameters, via a taped first backward pass followed by
    // a plain second one.
    Tensor grad_of_grad(NodeId loss, const std::vector<NodeId>& wrt, const Tensor& probe);

    // Flattens taped values/adjoints over wrt order into a single rank-1 node.
    NodeId flatten_nodes(const std::vector<NodeId>& ids);

private:
    std::vector<TapeNode> nodes_;
    mutable int backward_passes_ = 0;
    bool nondiff_point_ = false;
};

// Flattened gradient over a parameter list, zeros where a parameter does not
// influence the root.
Tensor flatten_grads(const Tape& tape, const GradMap& grads, const std::vector<NodeId>& wrt);

}  // namespace hessalign
