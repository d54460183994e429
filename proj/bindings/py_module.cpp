#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hessalign/config.hpp"
#include "hessalign/estimators.hpp"
#include "hessalign/eval.hpp"
#include "hessalign/training.hpp"
#include "hessalign/verify.hpp"

namespace py = pybind11;
using namespace hessalign;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int64_t> shape(static_cast<size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    return py::array_t<double>(shape, t.data.data());
}

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::dict summary_dict(const TrainResult& r, const EnvironmentSet& envs) {
    EvalResult test = evaluate(r.model, envs.test.batch);
    py::dict d;
    d["test_accuracy"] = test.accuracy;
    d["test_loss"] = test.loss;
    py::dict per_env;
    for (const EnvBatch& e : envs.train) {
        EvalResult ev = evaluate(r.model, e.batch);
        per_env[py::str(e.name)] = py::make_tuple(ev.loss, ev.accuracy);
    }
    d["train_envs"] = per_env;
    d["steps_recorded"] = r.records.size();
    d["hessian_distance_final"] = r.records.empty() ? 0.0 : r.records.back().hessian_distance;
    return d;
}

}  // namespace

PYBIND11_MODULE(_hessalign, m) {
    m.doc() = "Hessian-alignment toolkit for domain generalization";
    m.attr("__version__") = kVersion;

    m.def(
        "head_grad",
        [](const Arr& features, const Arr& probs, const Arr& labels) {
            return to_array(head_grad(to_tensor(features), to_tensor(probs), to_tensor(labels)).flat());
        },
        py::arg("features"), py::arg("probs"), py::arg("labels"),
        "Closed-form classifier-head gradient, flattened to c*(d+1).");

    m.def(
        "head_hessian",
        [](const Arr& features, const Arr& probs) {
            return to_array(head_hessian(to_tensor(features), to_tensor(probs)).mat);
        },
        py::arg("features"), py::arg("probs"), "Dense classifier-head Hessian, shape (c*(d+1), c*(d+1)).");

    m.def(
        "head_hvp",
        [](const Arr& features, const Arr& probs, const Arr& v) {
            return to_array(head_hvp(to_tensor(features), to_tensor(probs), to_tensor(v)));
        },
        py::arg("features"), py::arg("probs"), py::arg("v"),
        "Head Hessian-vector product without materializing the Hessian.");

    m.def(
        "hgp_closed_form",
        [](const Arr& features, const Arr& probs, const Arr& labels) {
            return to_array(hgp_closed_form(to_tensor(features), to_tensor(probs), to_tensor(labels)));
        },
        py::arg("features"), py::arg("probs"), py::arg("labels"), "Hessian-gradient product H.g for the head.");

    m.def(
        "hutchinson_diag",
        [](const Arr& features, const Arr& probs, int num_samples, uint64_t seed) {
            RademacherStream stream(seed);
            return to_array(hutchinson_diag(to_tensor(features), to_tensor(probs), num_samples, stream));
        },
        py::arg("features"), py::arg("probs"), py::arg("num_samples"), py::arg("seed") = 0,
        "Rademacher-probe estimate of the head-Hessian diagonal.");

    m.def(
        "exact_diag",
        [](const Arr& features, const Arr& probs) {
            return to_array(exact_diag(to_tensor(features), to_tensor(probs)));
        },
        py::arg("features"), py::arg("probs"), "Exact head-Hessian diagonal.");

    m.def(
        "generate_environment",
        [](const std::string& name, int64_t n_samples, double label_noise, double color_correlation,
           double class_balance, uint64_t seed) {
            Batch b = generate_environment({name, n_samples, label_noise, color_correlation, class_balance, seed});
            return py::make_tuple(to_array(b.inputs), to_array(b.labels));
        },
        py::arg("name"), py::arg("n_samples"), py::arg("label_noise") = 0.25, py::arg("color_correlation") = 0.9,
        py::arg("class_balance") = 0.5, py::arg("seed") = 0,
        "Synthetic correlation-shift environment; returns (inputs, one-hot labels).");

    m.def(
        "train_from_json",
        [](const std::string& config_json, uint64_t run_index) {
            ExperimentConfig cfg = config_from_json(config_json);
            uint64_t seed = cfg.seed_base + run_index;
            EnvironmentSet envs = build_dataset(cfg, seed);
            Model init = init_params(cfg.layer_sizes, seed);
            TrainConfig tc = cfg.train;
            tc.seed = seed;
            TrainResult r = train(envs, init, tc);
            return summary_dict(r, envs);
        },
        py::arg("config_json"), py::arg("run_index") = 0,
        "Run one training seed from an experiment-config JSON string.");

    m.def(
        "verify",
        [] {
            py::list out;
            for (const VerifyCheck& c : run_verification()) {
                py::dict d;
                d["name"] = c.name;
                d["passed"] = c.passed;
                d["max_error"] = c.max_error;
                d["tolerance"] = c.tolerance;
                out.append(d);
            }
            return out;
        },
        "Run the independent-oracle verification suite.");
}
