#include "hessalign/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

namespace hessalign {

Tensor ClassifierHead::flat() const {
    Tensor Wf = W;
    Wf.shape = {W.numel()};
    std::vector<const Tensor*> ps = {&Wf, &b};
    return kernels::concat(ps);
}

ClassifierHead ClassifierHead::from_flat(const Tensor& v, int64_t c, int64_t d) {
    if (v.numel() != c * (d + 1)) throw ShapeError("from_flat: length mismatch");
    ClassifierHead h;
    h.W = Tensor({c, d}, std::vector<double>(v.data.begin(), v.data.begin() + c * d));
    h.b = Tensor({c}, std::vector<double>(v.data.begin() + c * d, v.data.end()));
    return h;
}

void validate_batch(const Batch& batch) {
    if (batch.inputs.rank() != 2 || batch.labels.rank() != 2) throw ShapeError("batch tensors must be rank 2");
    if (batch.inputs.rows() != batch.labels.rows()) throw ShapeError("batch inputs/labels row mismatch");
    for (int64_t i = 0; i < batch.labels.rows(); ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < batch.labels.cols(); ++j) {
            double v = batch.labels.at(i, j);
            if (v != 0.0 && v != 1.0) throw ShapeError("labels must be one-hot");
            s += v;
        }
        if (s != 1.0) throw ShapeError("each label row must sum to exactly 1");
    }
}

Model init_params(const std::vector<int64_t>& layer_sizes, uint64_t seed) {
    if (layer_sizes.size() < 2) throw std::invalid_argument("init_params: need at least input and output sizes");
    for (int64_t s : layer_sizes)
        if (s <= 0) throw std::invalid_argument("init_params: zero-width layer");
    std::mt19937_64 rng(seed);
    auto draw = [&](int64_t fan_in, int64_t count) {
        double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-s, s);
        std::vector<double> out(static_cast<size_t>(count));
        for (double& v : out) v = dist(rng);
        return out;
    };
    Model m;
    size_t L = layer_sizes.size();
    for (size_t i = 0; i + 2 < L; ++i) {
        Layer layer;
        int64_t in = layer_sizes[i], out = layer_sizes[i + 1];
        layer.W = Tensor({in, out}, draw(in, in * out));
        layer.b = Tensor::zeros({out});
        layer.act = Activation::Relu;
        m.extractor.layers.push_back(std::move(layer));
    }
    int64_t d = layer_sizes[L - 2], c = layer_sizes[L - 1];
    m.head.W = Tensor({c, d}, draw(d, c * d));
    m.head.b = Tensor::zeros({c});
    return m;
}

Tensor softmax(const Tensor& logits) {
    if (!logits.all_finite()) throw NonFiniteError("softmax: non-finite logits");
    double mx = *std::max_element(logits.data.begin(), logits.data.end());
    Tensor out = logits;
    double s = 0.0;
    for (double& v : out.data) {
        v = std::exp(v - mx);
        s += v;
    }
    for (double& v : out.data) v /= s;
    return out;
}

std::vector<NodeId> TapedModel::all_params() const {
    std::vector<NodeId> out;
    for (const auto& [w, b] : layers) {
        out.push_back(w);
        out.push_back(b);
    }
    out.push_back(head_W);
    out.push_back(head_b);
    return out;
}

TapedModel stage_params(Tape& tape, const Model& model) {
    TapedModel tm;
    for (const Layer& l : model.extractor.layers) {
        tm.layers.emplace_back(tape.leaf(l.W), tape.leaf(l.b));
        tm.acts.push_back(l.act);
    }
    tm.head_W = tape.leaf(model.head.W);
    tm.head_b = tape.leaf(model.head.b);
    return tm;
}

CeNodes cross_entropy_on_tape(Tape& tape, NodeId logits, NodeId labels) {
    const Tensor& lv = tape.value(logits);
    int64_t n = lv.rows(), c = lv.cols();
    Tensor rowmax = Tensor::zeros({n});
    for (int64_t i = 0; i < n; ++i) {
        double mx = lv.at(i, 0);
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, lv.at(i, j));
        rowmax.data[static_cast<size_t>(i)] = mx;
    }
    // Constant shift: softmax is shift invariant, so gradients are exact.
    NodeId shift = tape.record(Op::Broadcast, {tape.constant(std::move(rowmax))},
                               {.axis = 1, .target_shape = {n, c}});
    NodeId neg_shift = tape.record(Op::Mul, {shift, tape.constant(Tensor::scalar(-1.0))});
    NodeId shifted = tape.record(Op::Add, {logits, neg_shift});
    NodeId e = tape.record(Op::Exp, {shifted});
    NodeId rowsum = tape.record(Op::Sum, {e}, {.axis = 1});
    NodeId inv = tape.record(Op::Recip, {rowsum});
    NodeId inv_b = tape.record(Op::Broadcast, {inv}, {.axis = 1, .target_shape = {n, c}});
    CeNodes out;
    out.probs = tape.record(Op::Mul, {e, inv_b});
    NodeId log_z = tape.record(Op::Log, {rowsum});
    NodeId picked = tape.record(Op::Sum, {tape.record(Op::Mul, {shifted, labels})}, {.axis = 1});
    NodeId neg_picked = tape.record(Op::Mul, {picked, tape.constant(Tensor::scalar(-1.0))});
    out.loss = tape.record(Op::Mean, {tape.record(Op::Add, {log_z, neg_picked})});
    return out;
}

ForwardNodes forward_on_tape(Tape& tape, const TapedModel& model, NodeId inputs, NodeId labels) {
    NodeId h = inputs;
    for (size_t i = 0; i < model.layers.size(); ++i) {
        NodeId lin = tape.record(Op::MatMul, {h, model.layers[i].first});
        lin = tape.record(Op::Add, {lin, model.layers[i].second});
        h = model.acts[i] == Activation::Relu ? tape.record(Op::Relu, {lin}) : lin;
    }
    ForwardNodes out;
    out.features = h;
    NodeId logits = tape.record(Op::MatMul, {h, model.head_W}, {.t_b = true});
    logits = tape.record(Op::Add, {logits, model.head_b});
    out.logits = logits;
    CeNodes ce = cross_entropy_on_tape(tape, logits, labels);
    out.probs = ce.probs;
    out.loss = ce.loss;
    return out;
}

ForwardNodes forward_on_tape(Tape& tape, const TapedModel& model, const Batch& batch) {
    validate_batch(batch);
    NodeId x = tape.constant(batch.inputs);
    NodeId y = tape.constant(batch.labels);
    return forward_on_tape(tape, model, x, y);
}

ForwardResult forward_reference(const Model& model, const Batch& batch) {
    validate_batch(batch);
    Tensor h = batch.inputs;
    for (const Layer& l : model.extractor.layers) {
        h = kernels::add(kernels::matmul(h, l.W, false, false), l.b);
        if (l.act == Activation::Relu) h = kernels::relu(h);
    }
    ForwardResult out;
    out.features = h;
    Tensor logits = kernels::add(kernels::matmul(h, model.head.W, false, true), model.head.b);
    int64_t n = logits.rows(), c = logits.cols();
    Tensor rowmax = Tensor::zeros({n});
    for (int64_t i = 0; i < n; ++i) {
        double mx = logits.at(i, 0);
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
        rowmax.data[static_cast<size_t>(i)] = mx;
    }
    Tensor shift = kernels::broadcast(rowmax, {n, c}, 1);
    Tensor shifted = kernels::add(logits, kernels::mul(shift, Tensor::scalar(-1.0)));
    Tensor e = kernels::exp(shifted);
    Tensor rowsum = kernels::sum(e, 1);
    Tensor inv = kernels::recip(rowsum);
    out.probs = kernels::mul(e, kernels::broadcast(inv, {n, c}, 1));
    Tensor log_z = kernels::log(rowsum);
    Tensor picked = kernels::sum(kernels::mul(shifted, batch.labels), 1);
    Tensor per = kernels::add(log_z, kernels::mul(picked, Tensor::scalar(-1.0)));
    out.loss = kernels::mean(per).scalar_value();
    return out;
}

EvalResult evaluate(const Model& model, const Batch& batch) {
    ForwardResult fr = forward_reference(model, batch);
    int64_t n = fr.probs.rows(), c = fr.probs.cols();
    int64_t correct = 0;
    for (int64_t i = 0; i < n; ++i) {
        int64_t pred = 0;
        for (int64_t j = 1; j < c; ++j)
            if (fr.probs.at(i, j) > fr.probs.at(i, pred)) pred = j;
        int64_t truth = 0;
        for (int64_t j = 1; j < c; ++j)
            if (batch.labels.at(i, j) > batch.labels.at(i, truth)) truth = j;
        if (pred == truth) ++correct;
    }
    return {fr.loss, static_cast<double>(correct) / static_cast<double>(n)};
}

namespace {

nlohmann::json tensor_to_json(const Tensor& t) {
    return nlohmann::json{{"shape", t.shape}, {"data", t.data}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
    return Tensor(j.at("shape").get<std::vector<int64_t>>(), j.at("data").get<std::vector<double>>());
}

const char* act_name(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

Activation act_from_name(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "identity") return Activation::Identity;
    throw std::invalid_argument("unknown activation: " + s);
}

}  // namespace

std::string checkpoint_to_json(const Model& model) {
    nlohmann::json j;
    j["format"] = "hessalign-checkpoint";
    j["version"] = 1;
    j["layers"] = nlohmann::json::array();
    for (const Layer& l : model.extractor.layers)
        j["layers"].push_back({{"act", act_name(l.act)}, {"W", tensor_to_json(l.W)}, {"b", tensor_to_json(l.b)}});
    j["head"] = {{"W", tensor_to_json(model.head.W)}, {"b", tensor_to_json(model.head.b)}};
    return j.dump(2);
}

Model checkpoint_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (j.at("format") != "hessalign-checkpoint") throw std::runtime_error("not a hessalign checkpoint");
    Model m;
    for (const auto& lj : j.at("layers"))
        m.extractor.layers.push_back(
            {tensor_from_json(lj.at("W")), tensor_from_json(lj.at("b")), act_from_name(lj.at("act"))});
    m.head.W = tensor_from_json(j.at("head").at("W"));
    m.head.b = tensor_from_json(j.at("head").at("b"));
    return m;
}

void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    f << checkpoint_to_json(model) << "\n";
}

Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return checkpoint_from_json(text);
}

}  // namespace hessalign
