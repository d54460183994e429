#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "hessalign/config.hpp"
#include "hessalign/eval.hpp"
#include "hessalign/training.hpp"
#include "hessalign/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hessalign;

namespace {

constexpr int kExitGeneric = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

int thread_cap() {
    if (const char* env = std::getenv("HESSALIGN_THREADS")) {
        int v = std::atoi(env);
        if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    f << text;
}

json stamp(const ExperimentConfig& cfg) {
    return json{{"version", kVersion}, {"config", json::parse(config_to_json(cfg))}};
}

std::map<std::string, double> run_summary_metrics(const TrainResult& result) {
    const MetricsRecord& last = result.records.back();
    double train_acc = 0.0, train_loss = 0.0;
    for (size_t i = 0; i < last.env_loss.size(); ++i) {
        train_loss += last.env_loss[i];
        train_acc += last.env_accuracy[i];
    }
    train_loss /= static_cast<double>(last.env_loss.size());
    train_acc /= static_cast<double>(last.env_accuracy.size());
    return {{"test_accuracy", last.test_accuracy},
            {"test_loss", last.test_loss},
            {"train_accuracy", train_acc},
            {"train_loss", train_loss},
            {"gradient_penalty_final", last.gradient_penalty},
            {"hessian_penalty_final", last.hessian_penalty},
            {"hessian_distance_final", last.hessian_distance}};
}

struct RunOutput {
    uint64_t seed = 0;
    std::map<std::string, double> metrics;
};

RunOutput execute_run(const ExperimentConfig& cfg, uint64_t run_index, const fs::path& outdir) {
    uint64_t seed = cfg.seed_base + run_index;
    EnvironmentSet envs = build_dataset(cfg, seed);
    Model init = init_params(cfg.layer_sizes, seed);
    TrainConfig tc = cfg.train;
    tc.seed = seed;

    auto t0 = std::chrono::steady_clock::now();
    TrainResult result = train(envs, init, tc);
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::path run_dir = outdir / ("run_" + std::to_string(seed));
    fs::create_directories(run_dir);
    std::vector<std::string> env_names;
    for (const EnvBatch& e : envs.train) env_names.push_back(e.name);
    write_metrics_csv((run_dir / "metrics.csv").string(), result.records, env_names);
    save_checkpoint(result.model, (run_dir / "checkpoint.json").string());
    // Wall time lives in a sidecar so metrics/summary stay byte-identical
    // across reruns.
    write_text(run_dir / "timing.txt", "total_seconds " + std::to_string(seconds) + "\n");

    RunOutput out{seed, run_summary_metrics(result)};
    json summary = stamp(cfg);
    summary["format"] = "hessalign-summary";
    summary["seed"] = seed;
    summary["metrics"] = out.metrics;
    write_text(run_dir / "summary.json", summary.dump(2) + "\n");
    return out;
}

int cmd_train(const std::string& config_path, const std::string& out_override, int seeds_override, bool parallel) {
    ExperimentConfig cfg = load_config(config_path);
    if (!out_override.empty()) cfg.output_dir = out_override;
    if (seeds_override > 0) cfg.run_count = seeds_override;
    fs::path outdir = cfg.output_dir;
    fs::create_directories(outdir);

    std::vector<RunOutput> runs(static_cast<size_t>(cfg.run_count));
    if (parallel && cfg.run_count > 1) {
        int workers = std::min(thread_cap(), cfg.run_count);
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (int i = next.fetch_add(1); i < cfg.run_count; i = next.fetch_add(1))
                        runs[static_cast<size_t>(i)] = execute_run(cfg, static_cast<uint64_t>(i), outdir);
                } catch (...) {
                    errors[static_cast<size_t>(w)] = std::current_exception();
                }
            });
        }
        for (std::thread& t : pool) t.join();
        for (const std::exception_ptr& e : errors)
            if (e) std::rethrow_exception(e);
    } else {
        for (int i = 0; i < cfg.run_count; ++i)
            runs[static_cast<size_t>(i)] = execute_run(cfg, static_cast<uint64_t>(i), outdir);
    }

    std::vector<std::map<std::string, double>> summaries;
    for (const RunOutput& r : runs) summaries.push_back(r.metrics);
    json agg = stamp(cfg);
    agg["format"] = "hessalign-aggregate";
    agg["runs"] = cfg.run_count;
    json metrics = json::object();
    for (const auto& [name, stats] : aggregate_runs(summaries))
        metrics[name] = {{"mean", stats.mean}, {"std", stats.std_dev}};
    agg["metrics"] = metrics;
    write_text(outdir / "aggregate.json", agg.dump(2) + "\n");

    std::cout << "wrote " << cfg.run_count << " run(s) to " << outdir.string() << "\n";
    for (const auto& [name, stats] : aggregate_runs(summaries))
        std::cout << "  " << name << ": " << stats.mean << " +/- " << stats.std_dev << "\n";
    return 0;
}

int cmd_attack(const std::string& config_path, const std::string& checkpoint_path, const std::string& out_override) {
    ExperimentConfig cfg = load_config(config_path);
    if (!fs::exists(checkpoint_path)) throw ConfigError("checkpoint not found: " + checkpoint_path);
    Model model = load_checkpoint(checkpoint_path);
    EnvironmentSet envs = build_dataset(cfg, cfg.seed_base);

    fs::path outdir = out_override.empty() ? fs::path(cfg.output_dir) : fs::path(out_override);
    fs::create_directories(outdir);

    json curves = stamp(cfg);
    curves["format"] = "hessalign-attack";
    curves["points"] = json::array();
    std::string csv = "delta,worst_gap,test_accuracy_at_worst\n";
    for (double delta : cfg.attack.deltas) {
        AttackConfig ac = cfg.attack.base;
        ac.delta = delta;
        AttackResult res = transfer_attack(model, envs, ac);
        json traj = json::array();
        for (const AttackRound& r : res.trajectory) traj.push_back({{"gap", r.gap}, {"radius", r.radius}});
        curves["points"].push_back({{"delta", delta},
                                    {"worst_gap", res.worst_gap},
                                    {"test_accuracy_at_worst", res.test_accuracy_at_worst},
                                    {"trajectory", traj}});
        char row[128];
        std::snprintf(row, sizeof(row), "%.17g,%.17g,%.17g\n", delta, res.worst_gap, res.test_accuracy_at_worst);
        csv += row;
        std::cout << "delta=" << delta << " worst_gap=" << res.worst_gap
                  << " test_acc=" << res.test_accuracy_at_worst << "\n";
    }
    write_text(outdir / "attack.json", curves.dump(2) + "\n");
    write_text(outdir / "attack.csv", csv);
    return 0;
}

int cmd_fgsm(const std::string& config_path, const std::string& checkpoint_path, const std::string& out_override) {
    ExperimentConfig cfg = load_config(config_path);
    if (!fs::exists(checkpoint_path)) throw ConfigError("checkpoint not found: " + checkpoint_path);
    Model model = load_checkpoint(checkpoint_path);
    EnvironmentSet envs = build_dataset(cfg, cfg.seed_base);

    fs::path outdir = out_override.empty() ? fs::path(cfg.output_dir) : fs::path(out_override);
    fs::create_directories(outdir);

    std::vector<FgsmPoint> points = fgsm_eval(model, envs.test.batch, cfg.fgsm.epsilons);
    json out = stamp(cfg);
    out["format"] = "hessalign-fgsm";
    out["points"] = json::array();
    std::string csv = "epsilon,accuracy,loss\n";
    for (const FgsmPoint& p : points) {
        out["points"].push_back({{"epsilon", p.epsilon}, {"accuracy", p.accuracy}, {"loss", p.loss}});
        char row[128];
        std::snprintf(row, sizeof(row), "%.17g,%.17g,%.17g\n", p.epsilon, p.accuracy, p.loss);
        csv += row;
        std::cout << "epsilon=" << p.epsilon << " accuracy=" << p.accuracy << "\n";
    }
    write_text(outdir / "fgsm.json", out.dump(2) + "\n");
    write_text(outdir / "fgsm.csv", csv);
    return 0;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_path) {
    ExperimentConfig cfg = load_config(config_path);
    EnvironmentSet envs = build_dataset(cfg, cfg.seed_base);
    fs::path out = out_path.empty() ? fs::path(cfg.output_dir) / "dataset.json" : fs::path(out_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_environment_set(envs, out.string());
    std::cout << "wrote dataset to " << out.string() << "\n";
    return 0;
}

int cmd_check_recipe(const std::string& recipe_path) {
    std::ifstream f(recipe_path, std::ios::binary);
    if (!f) throw ConfigError("cannot open recipe file: " + recipe_path);
    json recipe = json::parse(f);
    std::string name = recipe.value("name", recipe_path);
    fs::path agg_path = fs::path(recipe.at("output_dir").get<std::string>()) / "aggregate.json";
    if (!fs::exists(agg_path)) throw ConfigError("recipe outputs missing: " + agg_path.string());
    std::ifstream af(agg_path, std::ios::binary);
    json agg = json::parse(af);

    bool all = true;
    std::cout << "recipe " << name << "\n";
    for (const json& band : recipe.at("bands")) {
        std::string metric = band.at("metric").get<std::string>();
        double mean = agg.at("metrics").at(metric).at("mean").get<double>();
        bool ok = true;
        if (band.contains("min") && mean < band.at("min").get<double>()) ok = false;
        if (band.contains("max") && mean > band.at("max").get<double>()) ok = false;
        std::cout << (ok ? "PASS" : "FAIL") << "  " << metric << " = " << mean;
        if (band.contains("min")) std::cout << "  min=" << band.at("min").get<double>();
        if (band.contains("max")) std::cout << "  max=" << band.at("max").get<double>();
        std::cout << "\n";
        all = all && ok;
    }
    return all ? 0 : kExitGeneric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hessian-alignment domain generalization toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_path, checkpoint_path, recipe_path;
    int seeds = 0;
    bool parallel = false;

    CLI::App* train_cmd = app.add_subcommand("train", "train models over one or more seeds");
    train_cmd->add_option("--config", config_path, "experiment config JSON")->required();
    train_cmd->add_option("--out", out_path, "override output directory");
    train_cmd->add_option("--seeds", seeds, "override run count");
    train_cmd->add_flag("--parallel", parallel, "run seeds in parallel (HESSALIGN_THREADS caps workers)");

    CLI::App* verify_cmd = app.add_subcommand("verify", "run the numerical oracle suite");

    CLI::App* attack_cmd = app.add_subcommand("attack", "projected-ascent transferability attack");
    attack_cmd->add_option("--config", config_path, "experiment config JSON")->required();
    attack_cmd->add_option("--checkpoint", checkpoint_path, "trained model checkpoint")->required();
    attack_cmd->add_option("--out", out_path, "override output directory");

    CLI::App* fgsm_cmd = app.add_subcommand("fgsm", "FGSM adversarial-shift evaluation");
    fgsm_cmd->add_option("--config", config_path, "experiment config JSON")->required();
    fgsm_cmd->add_option("--checkpoint", checkpoint_path, "trained model checkpoint")->required();
    fgsm_cmd->add_option("--out", out_path, "override output directory");

    CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate and export a dataset file");
    gen_cmd->add_option("--config", config_path, "experiment config JSON")->required();
    gen_cmd->add_option("--out", out_path, "dataset output path");

    CLI::App* recipe_cmd = app.add_subcommand("check-recipe", "compare recorded outputs to a recipe's bands");
    recipe_cmd->add_option("--recipe", recipe_path, "recipe JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(config_path, out_path, seeds, parallel);
        if (verify_cmd->parsed()) return print_verification(std::cout) ? 0 : kExitGeneric;
        if (attack_cmd->parsed()) return cmd_attack(config_path, checkpoint_path, out_path);
        if (fgsm_cmd->parsed()) return cmd_fgsm(config_path, checkpoint_path, out_path);
        if (gen_cmd->parsed()) return cmd_gen_data(config_path, out_path);
        if (recipe_cmd->parsed()) return cmd_check_recipe(recipe_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        std::cerr << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitGeneric;
    }
    return 0;
}
