#include "hessalign/config.hpp"

#include <fstream>

#include <json.hpp>

namespace hessalign {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& ctx, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) { ok = true; break; }
        if (!ok) throw ConfigError(ctx + ": unknown key '" + key + "'");
    }
}

template <class T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

EnvironmentSpec env_spec_from_json(const json& j, const std::string& ctx) {
    check_keys(j, ctx, {"name", "n_samples", "label_noise", "color_correlation", "class_balance", "seed"});
    EnvironmentSpec s;
    if (!j.contains("name") || !j.contains("n_samples"))
        throw ConfigError(ctx + ": 'name' and 'n_samples' are required");
    s.name = j.at("name").get<std::string>();
    s.n_samples = j.at("n_samples").get<int64_t>();
    get_if(j, "label_noise", s.label_noise);
    get_if(j, "color_correlation", s.color_correlation);
    get_if(j, "class_balance", s.class_balance);
    get_if(j, "seed", s.seed);
    return s;
}

json env_spec_to_json(const EnvironmentSpec& s) {
    return json{{"name", s.name},
                {"n_samples", s.n_samples},
                {"label_noise", s.label_noise},
                {"color_correlation", s.color_correlation},
                {"class_balance", s.class_balance},
                {"seed", s.seed}};
}

PenaltyConfig penalty_from_json(const json& j) {
    check_keys(j, "train.penalty",
               {"method", "alpha", "beta", "anneal_step", "pre_anneal_value", "post_anneal_value",
                "hutchinson_samples"});
    PenaltyConfig p;
    if (j.contains("method")) p.method = method_from_name(j.at("method").get<std::string>());
    get_if(j, "alpha", p.alpha);
    get_if(j, "beta", p.beta);
    get_if(j, "anneal_step", p.anneal_step);
    get_if(j, "pre_anneal_value", p.pre_anneal_value);
    get_if(j, "post_anneal_value", p.post_anneal_value);
    get_if(j, "hutchinson_samples", p.hutchinson_samples);
    return p;
}

TrainConfig train_from_json(const json& j) {
    check_keys(j, "train",
               {"steps", "learning_rate", "l2_weight", "penalty", "optimizer", "record_every",
                "rescale_after_anneal"});
    TrainConfig t;
    get_if(j, "steps", t.steps);
    get_if(j, "learning_rate", t.learning_rate);
    get_if(j, "l2_weight", t.l2_weight);
    if (j.contains("penalty")) t.penalty = penalty_from_json(j.at("penalty"));
    if (j.contains("optimizer")) t.optimizer = optimizer_from_name(j.at("optimizer").get<std::string>());
    get_if(j, "record_every", t.record_every);
    get_if(j, "rescale_after_anneal", t.rescale_after_anneal);
    return t;
}

DatasetConfig dataset_from_json(const json& j) {
    check_keys(j, "dataset", {"type", "train", "test", "images", "labels"});
    DatasetConfig d;
    std::string type = j.value("type", "synthetic");
    if (type == "synthetic")
        d.type = DatasetType::Synthetic;
    else if (type == "cmnist_idx")
        d.type = DatasetType::CmnistIdx;
    else
        throw ConfigError("dataset.type: unknown value '" + type + "'");
    if (!j.contains("train") || !j.contains("test")) throw ConfigError("dataset: 'train' and 'test' are required");
    int idx = 0;
    for (const auto& e : j.at("train"))
        d.train.push_back(env_spec_from_json(e, "dataset.train[" + std::to_string(idx++) + "]"));
    d.test = env_spec_from_json(j.at("test"), "dataset.test");
    get_if(j, "images", d.images_path);
    get_if(j, "labels", d.labels_path);
    if (d.type == DatasetType::CmnistIdx && (d.images_path.empty() || d.labels_path.empty()))
        throw ConfigError("dataset: cmnist_idx requires 'images' and 'labels' paths");
    return d;
}

AttackSettings attack_from_json(const json& j) {
    check_keys(j, "attack", {"deltas", "ascent_lr", "ascent_steps", "rounds"});
    AttackSettings a;
    get_if(j, "deltas", a.deltas);
    get_if(j, "ascent_lr", a.base.ascent_lr);
    get_if(j, "ascent_steps", a.base.ascent_steps);
    get_if(j, "rounds", a.base.rounds);
    return a;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (layer_sizes.size() < 2) throw ConfigError("model.layer_sizes: need at least input and output sizes");
    for (int64_t s : layer_sizes)
        if (s <= 0) throw ConfigError("model.layer_sizes: sizes must be > 0");
    if (run_count < 1) throw ConfigError("run_count must be >= 1");
    if (dataset.train.size() < 2) throw ConfigError("dataset: need at least two train environments");
    try {
        for (const EnvironmentSpec& s : dataset.train) s.validate();
        dataset.test.validate();
        train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    for (double dl : attack.deltas)
        if (dl < 0.0) throw ConfigError("attack.deltas: values must be >= 0");
    for (double e : fgsm.epsilons)
        if (e < 0.0) throw ConfigError("fgsm.epsilons: values must be >= 0");
}

ExperimentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    check_keys(j, "config",
               {"dataset", "model", "train", "output_dir", "run_count", "seed_base", "attack", "fgsm"});
    ExperimentConfig cfg;
    try {
        if (!j.contains("dataset")) throw ConfigError("config: 'dataset' is required");
        cfg.dataset = dataset_from_json(j.at("dataset"));
        if (j.contains("model")) {
            check_keys(j.at("model"), "model", {"layer_sizes"});
            get_if(j.at("model"), "layer_sizes", cfg.layer_sizes);
        }
        if (j.contains("train")) cfg.train = train_from_json(j.at("train"));
        get_if(j, "output_dir", cfg.output_dir);
        get_if(j, "run_count", cfg.run_count);
        get_if(j, "seed_base", cfg.seed_base);
        if (j.contains("attack")) cfg.attack = attack_from_json(j.at("attack"));
        if (j.contains("fgsm")) {
            check_keys(j.at("fgsm"), "fgsm", {"epsilons"});
            get_if(j.at("fgsm"), "epsilons", cfg.fgsm.epsilons);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return config_from_json(text);
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json d;
    d["type"] = cfg.dataset.type == DatasetType::Synthetic ? "synthetic" : "cmnist_idx";
    d["train"] = json::array();
    for (const EnvironmentSpec& s : cfg.dataset.train) d["train"].push_back(env_spec_to_json(s));
    d["test"] = env_spec_to_json(cfg.dataset.test);
    if (cfg.dataset.type == DatasetType::CmnistIdx) {
        d["images"] = cfg.dataset.images_path;
        d["labels"] = cfg.dataset.labels_path;
    }
    const PenaltyConfig& p = cfg.train.penalty;
    json j{{"dataset", d},
           {"model", {{"layer_sizes", cfg.layer_sizes}}},
           {"train",
            {{"steps", cfg.train.steps},
             {"learning_rate", cfg.train.learning_rate},
             {"l2_weight", cfg.train.l2_weight},
             {"optimizer", optimizer_name(cfg.train.optimizer)},
             {"record_every", cfg.train.record_every},
             {"rescale_after_anneal", cfg.train.rescale_after_anneal},
             {"penalty",
              {{"method", method_name(p.method)},
               {"alpha", p.alpha},
               {"beta", p.beta},
               {"anneal_step", p.anneal_step},
               {"pre_anneal_value", p.pre_anneal_value},
               {"post_anneal_value", p.post_anneal_value},
               {"hutchinson_samples", p.hutchinson_samples}}}}},
           {"output_dir", cfg.output_dir},
           {"run_count", cfg.run_count},
           {"seed_base", cfg.seed_base},
           {"attack",
            {{"deltas", cfg.attack.deltas},
             {"ascent_lr", cfg.attack.base.ascent_lr},
             {"ascent_steps", cfg.attack.base.ascent_steps},
             {"rounds", cfg.attack.base.rounds}}},
           {"fgsm", {{"epsilons", cfg.fgsm.epsilons}}}};
    return j.dump(2);
}

EnvironmentSet build_dataset(const ExperimentConfig& cfg, uint64_t run_seed) {
    auto offset = [&](EnvironmentSpec s) {
        s.seed = s.seed + 1000003ull * run_seed;
        return s;
    };
    std::vector<EnvironmentSpec> train;
    for (const EnvironmentSpec& s : cfg.dataset.train) train.push_back(offset(s));
    EnvironmentSpec test = offset(cfg.dataset.test);
    if (cfg.dataset.type == DatasetType::Synthetic) return generate_synthetic(train, test);
    MnistData data = load_mnist_idx(cfg.dataset.images_path, cfg.dataset.labels_path);
    return build_cmnist(data, train, test);
}

}  // namespace hessalign
