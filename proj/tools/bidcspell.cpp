// bidcspell: synthetic-corpus spelling-check experiments with a
// bi-directional detector-corrector model. Subcommands cover data
// generation, training, evaluation, ablations, sweeps, gradient checks and
// one-line correction.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bidc/corpus.hpp"
#include "bidc/errors.hpp"
#include "bidc/evaluation.hpp"
#include "bidc/experiment.hpp"
#include "bidc/logging.hpp"
#include "bidc/model.hpp"
#include "bidc/training.hpp"

namespace fs = std::filesystem;
using namespace bidc;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
};

ExperimentConfig load_config(const GlobalArgs& g) {
    ExperimentConfig c;
    if (!g.config_path.empty()) c = load_experiment_config(g.config_path);
    if (g.seed_set) c.train.seed = g.seed;
    return c;
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << content;
}

DatasetBundle load_data_dir(const std::string& dir) {
    if (dir.empty()) throw ConfigError("--data directory is required");
    return load_datasets(dir);
}

void check_vocab_compat(const LoadedCheckpoint& ck, const Vocab& vocab) {
    if (!ck.vocab_hash.empty() && ck.vocab_hash != vocab.hash_hex()) {
        throw DataError("checkpoint vocabulary hash " + ck.vocab_hash +
                        " does not match dataset vocabulary " + vocab.hash_hex());
    }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) seeds.push_back(std::stoull(item));
    }
    if (seeds.empty()) throw ConfigError("seed list is empty");
    return seeds;
}

int cmd_gen_data(const GlobalArgs& g) {
    ExperimentConfig config = load_config(g);
    DatasetBundle bundle = generate_datasets(config.corpus);
    write_datasets(g.out_dir, bundle, config.corpus);
    log_info("wrote train/dev/test.tsv, vocab.txt and manifest.json to " + g.out_dir);
    return 0;
}

struct TrainArgs {
    std::string data_dir;
    std::string resume_path;
    std::string mode;
    double lambda = -1.0;
    long layers = -1;
    long epochs = -1;
    double lr = -1.0;
};

int cmd_train(const GlobalArgs& g, const TrainArgs& a) {
    ExperimentConfig config = load_config(g);
    if (!a.mode.empty()) config.model.mode = mode_from_name(a.mode);
    if (a.lambda >= 0.0) {
        config.model.lambda = a.lambda;
        config.train.lambda = a.lambda;
    }
    if (a.layers > 0) config.model.interaction_layers = static_cast<std::size_t>(a.layers);
    if (a.epochs >= 0) config.train.epochs = static_cast<std::size_t>(a.epochs);
    if (a.lr > 0.0) config.train.learning_rate = a.lr;

    DatasetBundle data = load_data_dir(a.data_dir);
    config.model.vocab_size = data.vocab.size();
    config.model.validate();

    ResumeState resume;
    const ResumeState* resume_ptr = nullptr;
    if (!a.resume_path.empty()) {
        LoadedCheckpoint ck = load_checkpoint(a.resume_path);
        check_vocab_compat(ck, data.vocab);
        if (!ck.opt) throw DataError("checkpoint lacks optimizer state, cannot resume");
        resume.params = ck.params.snapshot_values();
        resume.opt = std::move(*ck.opt);
        resume.next_epoch = ck.next_epoch;
        config.model = ck.config;
        resume_ptr = &resume;
        log_info("resuming from epoch " + std::to_string(resume.next_epoch));
    }

    TrainResult result = train(config.model, data.train, data.dev, config.train, resume_ptr);

    fs::create_directories(g.out_dir);
    const std::string hash = data.vocab.hash_hex();
    ModelParams best = init_params(config.model, 0);
    best.restore_values(result.best_params);
    save_checkpoint((fs::path(g.out_dir) / "checkpoint.bidc").string(), config.model, best, hash);
    ModelParams last = init_params(config.model, 0);
    last.restore_values(result.final_params);
    save_checkpoint((fs::path(g.out_dir) / "last.bidc").string(), config.model, last, hash,
                    &result.final_opt, result.next_epoch);
    write_text_file(fs::path(g.out_dir) / "train_log.jsonl", train_log_jsonl(result.log));
    log_info("best dev correction F1 " + std::to_string(result.best_dev_cor_f1) + " at epoch " +
             std::to_string(result.best_epoch));
    return 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& checkpoint_path, const std::string& data_dir,
             const std::string& split, const std::string& report_path) {
    ExperimentConfig config = load_config(g);
    LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
    DatasetBundle data = load_data_dir(data_dir);
    check_vocab_compat(ck, data.vocab);
    Model model(ck.config, std::move(ck.params));
    const std::vector<Sample>* set = &data.test;
    if (split == "dev") set = &data.dev;
    else if (split == "train") set = &data.train;
    else if (split != "test") throw ConfigError("unknown split '" + split + "'");
    EvalReport report = evaluate_model(model, *set, config.eval.batch_size);
    const std::string json_text = report_to_json(report).dump(2) + "\n";
    if (!report_path.empty()) {
        write_text_file(report_path, json_text);
        std::cout << render_report_table(report);
    } else {
        std::cout << json_text;
    }
    return 0;
}

int cmd_ablate(const GlobalArgs& g, const std::string& data_dir, const std::string& seeds_text) {
    ExperimentConfig config = load_config(g);
    DatasetBundle data = load_data_dir(data_dir);
    config.model.vocab_size = data.vocab.size();
    const auto seeds = parse_seed_list(seeds_text);
    AblateResult result = run_ablation(config, data, seeds, g.threads);
    fs::create_directories(g.out_dir);
    write_text_file(fs::path(g.out_dir) / "ablation.json", ablation_json(result).dump(2) + "\n");
    write_text_file(fs::path(g.out_dir) / "ablation.csv", ablation_csv(result));
    std::cout << ablation_table(result);
    return 0;
}

int cmd_sweep(const GlobalArgs& g, const std::string& data_dir, const std::string& kind,
              const std::string& grid_text, bool inference_only) {
    ExperimentConfig config = load_config(g);
    DatasetBundle data = load_data_dir(data_dir);
    config.model.vocab_size = data.vocab.size();
    config.sweep.kind = sweep_kind_from_name(kind);
    config.sweep.inference_only = inference_only;
    if (!grid_text.empty()) {
        std::vector<double> grid;
        std::stringstream ss(grid_text);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) grid.push_back(std::stod(item));
        }
        switch (config.sweep.kind) {
            case SweepKind::Gates: config.sweep.gate_grid = grid; break;
            case SweepKind::Lambda: config.sweep.lambda_grid = grid; break;
            case SweepKind::Layers:
                config.sweep.layer_grid.clear();
                for (double v : grid) {
                    config.sweep.layer_grid.push_back(static_cast<std::size_t>(v));
                }
                break;
        }
    }
    SweepResult result = run_sweep(config, data, g.threads);
    fs::create_directories(g.out_dir);
    write_text_file(fs::path(g.out_dir) / "sweep.json", sweep_json(result).dump(2) + "\n");
    write_text_file(fs::path(g.out_dir) / "sweep.csv", sweep_csv(result));
    std::cout << sweep_csv(result);
    return 0;
}

int cmd_gradcheck(const std::string& seeds_text, double eps, double tol) {
    ModelConfig tiny;
    tiny.vocab_size = 20;
    tiny.d_h = 8;
    tiny.d_ff = 16;
    tiny.n_heads = 1;
    tiny.det_depth = 1;
    tiny.cor_depth = 1;
    tiny.interaction_layers = 1;
    tiny.max_len = 8;
    ModelCheckSpec spec;
    spec.eps = eps;
    spec.tol = tol;
    bool all_pass = true;
    for (const Mode mode : {Mode::BiDC, Mode::D2C, Mode::COnly}) {
        tiny.mode = mode;
        for (std::uint64_t seed : parse_seed_list(seeds_text)) {
            GradCheckReport report = check_model_gradients(tiny, seed, spec);
            std::cout << mode_name(mode) << " seed " << seed << ": "
                      << (report.pass ? "pass" : "FAIL") << " (worst " << report.worst_param
                      << " rel err " << report.worst_rel_err << ")\n";
            if (!report.pass) {
                std::cout << render_report(report);
                all_pass = false;
            }
        }
    }
    if (!all_pass) throw NumericError("gradient check failed");
    return 0;
}

int cmd_correct(const std::string& checkpoint_path, const std::string& data_dir,
                std::string line) {
    LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
    DatasetBundle data = load_data_dir(data_dir);
    check_vocab_compat(ck, data.vocab);
    Model model(ck.config, std::move(ck.params));
    if (line.empty()) {
        std::cout << '\n';
        return 0;
    }
    const auto tokens = utf8_split(line);
    std::vector<int> ids;
    std::vector<bool> unknown;
    for (const auto& t : tokens) {
        const int id = data.vocab.id_or_unk(t);
        if (id == Vocab::kUnk) {
            std::cerr << "warning: unknown token '" << t << "' at position " << ids.size()
                      << ", left uncorrected\n";
        }
        ids.push_back(id);
        unknown.push_back(id == Vocab::kUnk);
    }
    SentencePrediction pred = model.predict(ids);
    std::string corrected, marks;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (unknown[i]) {
            corrected += tokens[i];
            marks += ' ';
        } else {
            corrected += data.vocab.token(pred.corrected[i]);
            marks += pred.det_labels[i] == 1 ? '^' : ' ';
        }
    }
    std::cout << corrected << '\n' << marks << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bi-directional detector-corrector spelling check experiments"};
    app.fallthrough();
    GlobalArgs g;
    app.add_option("--config", g.config_path, "experiment config JSON");
    app.add_option("--out", g.out_dir, "output directory");
    auto* seed_opt = app.add_option("--seed", g.seed, "training seed override");
    app.add_option("--threads", g.threads, "worker threads for grid/ablation runs");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");

    auto* tr = app.add_subcommand("train", "train a model");
    TrainArgs train_args;
    tr->add_option("--data", train_args.data_dir, "dataset directory")->required();
    tr->add_option("--resume", train_args.resume_path, "checkpoint with optimizer state");
    tr->add_option("--mode", train_args.mode, "bidc | d2c | c-only");
    tr->add_option("--lambda", train_args.lambda, "loss mixing weight in [0,1]");
    tr->add_option("--layers", train_args.layers, "interaction layer count");
    tr->add_option("--epochs", train_args.epochs, "training epochs");
    tr->add_option("--lr", train_args.lr, "learning rate");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_checkpoint, eval_data, eval_split = "test", eval_report;
    ev->add_option("--checkpoint", eval_checkpoint, "checkpoint path")->required();
    ev->add_option("--data", eval_data, "dataset directory")->required();
    ev->add_option("--split", eval_split, "train | dev | test");
    ev->add_option("--report", eval_report, "write report JSON here (table goes to stdout)");

    auto* ab = app.add_subcommand("ablate", "train c-only/d2c/bidc over seeds");
    std::string ablate_data, ablate_seeds = "0,1,2";
    ab->add_option("--data", ablate_data, "dataset directory")->required();
    ab->add_option("--seeds", ablate_seeds, "comma-separated seed list");

    auto* sw = app.add_subcommand("sweep", "grid sweep over gates, lambda or layers");
    std::string sweep_data, sweep_kind, sweep_grid;
    bool sweep_inference_only = false;
    sw->add_option("--data", sweep_data, "dataset directory")->required();
    sw->add_option("--kind", sweep_kind, "gates | lambda | layers")->required();
    sw->add_option("--grid", sweep_grid, "comma-separated grid values");
    sw->add_flag("--inference-only", sweep_inference_only,
                 "gates only: train once, override gates at inference");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check on a tiny model");
    std::string gc_seeds = "0,1,2,3,4";
    double gc_eps = 1e-5, gc_tol = 1e-4;
    gc->add_option("--seeds", gc_seeds, "comma-separated seed list");
    gc->add_option("--eps", gc_eps, "finite-difference step");
    gc->add_option("--tol", gc_tol, "max relative error");

    auto* co = app.add_subcommand("correct", "correct one line of text");
    std::string correct_checkpoint, correct_data, correct_text;
    co->add_option("--checkpoint", correct_checkpoint, "checkpoint path")->required();
    co->add_option("--data", correct_data, "dataset directory (for the vocabulary)");
    co->add_option("text", correct_text, "line to correct (default: read stdin)");

    app.require_subcommand(1);
    try {
        app.parse(argc, argv);
        g.seed_set = seed_opt->count() > 0;
        if (gen->parsed()) return cmd_gen_data(g);
        if (tr->parsed()) return cmd_train(g, train_args);
        if (ev->parsed()) return cmd_eval(g, eval_checkpoint, eval_data, eval_split, eval_report);
        if (ab->parsed()) return cmd_ablate(g, ablate_data, ablate_seeds);
        if (sw->parsed()) return cmd_sweep(g, sweep_data, sweep_kind, sweep_grid,
                                           sweep_inference_only);
        if (gc->parsed()) return cmd_gradcheck(gc_seeds, gc_eps, gc_tol);
        if (co->parsed()) {
            if (correct_text.empty() && !std::cin.eof()) std::getline(std::cin, correct_text);
            return cmd_correct(correct_checkpoint, correct_data, correct_text);
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
