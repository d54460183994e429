#include "hessalign/environments.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace hessalign {

void EnvironmentSpec::validate() const {
    auto prob = [&](double p, const char* field) {
        if (p < 0.0 || p > 1.0)
            throw std::invalid_argument("environment '" + name + "': " + field + " must be in [0, 1]");
    };
    if (n_samples <= 0) throw std::invalid_argument("environment '" + name + "': n_samples must be > 0");
    prob(label_noise, "label_noise");
    prob(color_correlation, "color_correlation");
    prob(class_balance, "class_balance");
}

std::vector<EnvBatch> EnvironmentSet::all() const {
    std::vector<EnvBatch> out = train;
    out.push_back(test);
    return out;
}

namespace {

Tensor one_hot_labels(const std::vector<int>& ys) {
    Tensor labels = Tensor::zeros({static_cast<int64_t>(ys.size()), 2});
    for (size_t i = 0; i < ys.size(); ++i) labels.at(static_cast<int64_t>(i), ys[i]) = 1.0;
    return labels;
}

}  // namespace

Batch generate_environment(const EnvironmentSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.1);

    int64_t n = spec.n_samples;
    Tensor inputs = Tensor::zeros({n, 4});
    std::vector<int> ys(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        int y = uni(rng) < spec.class_balance ? 0 : 1;
        int u = uni(rng) < spec.label_noise ? 1 - y : y;
        int v = uni(rng) < 1.0 - spec.color_correlation ? 1 - y : y;
        ys[static_cast<size_t>(i)] = y;
        // Four noise draws per sample keep the stream length fixed; inactive
        // one-hot coordinates stay exactly zero.
        for (int64_t j = 0; j < 4; ++j) {
            double eps = noise(rng);
            int active = j < 2 ? (j == u) : (j - 2 == v);
            if (active) inputs.at(i, j) = 1.0 + eps;
        }
    }
    return {std::move(inputs), one_hot_labels(ys)};
}

EnvironmentSet generate_synthetic(const std::vector<EnvironmentSpec>& train_specs, const EnvironmentSpec& test_spec) {
    if (train_specs.size() < 2) throw std::invalid_argument("generate_synthetic: need at least two train environments");
    EnvironmentSet set;
    for (const EnvironmentSpec& s : train_specs) set.train.push_back({s.name, generate_environment(s)});
    set.test = {test_spec.name, generate_environment(test_spec)};
    return set;
}

namespace {

uint32_t read_be32(std::istream& f, const std::string& path, int64_t offset) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f)
        throw std::runtime_error(path + ": truncated at offset " + std::to_string(offset));
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

}  // namespace

MnistData load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw std::runtime_error("cannot open IDX images file: " + images_path);
    uint32_t magic = read_be32(imgs, images_path, 0);
    if (magic != 0x00000803u) {
        std::ostringstream os;
        os << images_path << ": bad magic 0x" << std::hex << magic << " at offset 0 (expected 0x803)";
        throw std::runtime_error(os.str());
    }
    uint32_t n = read_be32(imgs, images_path, 4);
    uint32_t rows = read_be32(imgs, images_path, 8);
    uint32_t cols = read_be32(imgs, images_path, 12);
    if (rows != 28 || cols != 28)
        throw std::runtime_error(images_path + ": expected 28x28 images, got " + std::to_string(rows) + "x" +
                                 std::to_string(cols));

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw std::runtime_error("cannot open IDX labels file: " + labels_path);
    uint32_t lmagic = read_be32(labs, labels_path, 0);
    if (lmagic != 0x00000801u) {
        std::ostringstream os;
        os << labels_path << ": bad magic 0x" << std::hex << lmagic << " at offset 0 (expected 0x801)";
        throw std::runtime_error(os.str());
    }
    uint32_t ln = read_be32(labs, labels_path, 4);
    if (ln != n)
        throw std::runtime_error("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(ln) +
                                 " labels");

    MnistData out;
    out.n = n;
    std::vector<unsigned char> buf(static_cast<size_t>(n) * 28 * 28);
    imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (imgs.gcount() != static_cast<std::streamsize>(buf.size()))
        throw std::runtime_error(images_path + ": truncated at offset " + std::to_string(16 + imgs.gcount()));
    out.pixels.resize(buf.size());
    for (size_t i = 0; i < buf.size(); ++i) out.pixels[i] = static_cast<double>(buf[i]) / 255.0;

    out.labels.resize(static_cast<size_t>(n));
    labs.read(reinterpret_cast<char*>(out.labels.data()), static_cast<std::streamsize>(n));
    if (labs.gcount() != static_cast<std::streamsize>(n))
        throw std::runtime_error(labels_path + ": truncated at offset " + std::to_string(8 + labs.gcount()));
    for (uint8_t d : out.labels)
        if (d > 9) throw std::runtime_error(labels_path + ": label out of range");
    return out;
}

namespace {

Batch cmnist_environment(const MnistData& data, const EnvironmentSpec& spec, int64_t pool_start) {
    spec.validate();
    if (pool_start + spec.n_samples > data.n)
        throw std::runtime_error("build_cmnist: insufficient samples for environment '" + spec.name + "'");
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    int64_t n = spec.n_samples;
    Tensor inputs = Tensor::zeros({n, 2 * 14 * 14});
    std::vector<int> ys(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        int64_t src = pool_start + i;
        int y = data.labels[static_cast<size_t>(src)] < 5 ? 0 : 1;
        if (uni(rng) < spec.label_noise) y = 1 - y;
        int v = uni(rng) < 1.0 - spec.color_correlation ? 1 - y : y;
        ys[static_cast<size_t>(i)] = y;
        const double* img = data.pixels.data() + src * 28 * 28;
        for (int64_t r = 0; r < 14; ++r) {
            for (int64_t c = 0; c < 14; ++c) {
                double pooled = (img[(2 * r) * 28 + 2 * c] + img[(2 * r) * 28 + 2 * c + 1] +
                                 img[(2 * r + 1) * 28 + 2 * c] + img[(2 * r + 1) * 28 + 2 * c + 1]) /
                                4.0;
                // channel picked by the color bit; the other stays zero
                inputs.at(i, v * 14 * 14 + r * 14 + c) = pooled;
            }
        }
    }
    return {std::move(inputs), one_hot_labels(ys)};
}

}  // namespace

EnvironmentSet build_cmnist(const MnistData& data, const std::vector<EnvironmentSpec>& train_specs,
                            const EnvironmentSpec& test_spec) {
    if (train_specs.size() < 2) throw std::invalid_argument("build_cmnist: need at least two train environments");
    EnvironmentSet set;
    int64_t off = 0;
    for (const EnvironmentSpec& s : train_specs) {
        set.train.push_back({s.name, cmnist_environment(data, s, off)});
        off += s.n_samples;
    }
    set.test = {test_spec.name, cmnist_environment(data, test_spec, off)};
    return set;
}

namespace {

nlohmann::json batch_to_json(const EnvBatch& env) {
    return nlohmann::json{{"name", env.name},
                          {"inputs", {{"shape", env.batch.inputs.shape}, {"data", env.batch.inputs.data}}},
                          {"labels", {{"shape", env.batch.labels.shape}, {"data", env.batch.labels.data}}}};
}

EnvBatch batch_from_json(const nlohmann::json& j) {
    EnvBatch env;
    env.name = j.at("name").get<std::string>();
    env.batch.inputs = Tensor(j.at("inputs").at("shape").get<std::vector<int64_t>>(),
                              j.at("inputs").at("data").get<std::vector<double>>());
    env.batch.labels = Tensor(j.at("labels").at("shape").get<std::vector<int64_t>>(),
                              j.at("labels").at("data").get<std::vector<double>>());
    return env;
}

}  // namespace

void save_environment_set(const EnvironmentSet& set, const std::string& path) {
    nlohmann::json j;
    j["format"] = "hessalign-dataset";
    j["version"] = 1;
    j["convention"] = "color_correlation is the probability the color bit matches the label; "
                      "a signed -90% correlation is match-probability 0.1";
    j["train"] = nlohmann::json::array();
    for (const EnvBatch& e : set.train) j["train"].push_back(batch_to_json(e));
    j["test"] = batch_to_json(set.test);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open dataset file for writing: " + path);
    f << j.dump(2) << "\n";
}

EnvironmentSet load_environment_set(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open dataset file: " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    if (j.at("format") != "hessalign-dataset") throw std::runtime_error("not a hessalign dataset file");
    EnvironmentSet set;
    for (const auto& e : j.at("train")) set.train.push_back(batch_from_json(e));
    set.test = batch_from_json(j.at("test"));
    return set;
}

}  // namespace hessalign
