#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hessalign/tape.hpp"
#include "hessalign/tensor.hpp"

namespace hessalign {

enum class Activation { Relu, Identity };

// Linear classifier head: logits = z W^T + b. Flattening order is W
// row-major, then b; everything m-dimensional in the project uses it.
struct ClassifierHead {
    Tensor W;  // c x d
    Tensor b;  // c

    int64_t classes() const { return W.rows(); }
    int64_t features() const { return W.cols(); }
    int64_t flat_dim() const { return classes() * (features() + 1); }
    Tensor flat() const;
    static ClassifierHead from_flat(const Tensor& v, int64_t c, int64_t d);
};

struct Layer {
    Tensor W;  // in x out
    Tensor b;  // out
    Activation act = Activation::Relu;
};

struct FeatureExtractorParams {
    std::vector<Layer> layers;  // may be empty (identity extractor)
};

struct Model {
    FeatureExtractorParams extractor;
    ClassifierHead head;
};

struct Batch {
    Tensor inputs;  // n x input_dim
    Tensor labels;  // n x c, one-hot rows
    int64_t size() const { return inputs.rows(); }
};

void validate_batch(const Batch& batch);

// Deterministic init: weights uniform(-s, s) with s = 1/sqrt(fan_in), biases
// zero. layer_sizes = [input, hidden..., classes]; hidden layers use relu.
Model init_params(const std::vector<int64_t>& layer_sizes, uint64_t seed);

Tensor softmax(const Tensor& logits_row);

// Parameter leaves staged on a tape.
struct TapedModel {
    std::vector<std::pair<NodeId, NodeId>> layers;  // (W, b) per hidden layer
    std::vector<Activation> acts;
    NodeId head_W = -1;
    NodeId head_b = -1;
    std::vector<NodeId> all_params() const;
    std::vector<NodeId> head_params() const { return {head_W, head_b}; }
};

TapedModel stage_params(Tape& tape, const Model& model);

struct ForwardNodes {
    NodeId features = -1;
    NodeId logits = -1;
    NodeId probs = -1;
    NodeId loss = -1;
};

struct CeNodes {
    NodeId probs = -1;
    NodeId loss = -1;
};

// Softmax cross-entropy from logit nodes (log-sum-exp with a constant
// row-max shift, so softmax gradients are exact).
CeNodes cross_entropy_on_tape(Tape& tape, NodeId logits, NodeId labels);

ForwardNodes forward_on_tape(Tape& tape, const TapedModel& model, NodeId inputs, NodeId labels);
// Convenience: stages inputs/labels as constant leaves.
ForwardNodes forward_on_tape(Tape& tape, const TapedModel& model, const Batch& batch);

struct ForwardResult {
    Tensor features;
    Tensor probs;
    double loss = 0.0;
};

// Tape-free evaluator mirroring the taped op sequence step for step.
ForwardResult forward_reference(const Model& model, const Batch& batch);

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

// Accuracy by argmax of probs vs argmax of label, ties toward lower index.
EvalResult evaluate(const Model& model, const Batch& batch);

std::string checkpoint_to_json(const Model& model);
Model checkpoint_from_json(const std::string& text);
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace hessalign
