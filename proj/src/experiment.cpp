#include "bidc/experiment.hpp"

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "bidc/errors.hpp"
#include "bidc/logging.hpp"

namespace bidc {

namespace fs = std::filesystem;
using nlohmann::json;

SweepKind sweep_kind_from_name(const std::string& name) {
    if (name == "gates") return SweepKind::Gates;
    if (name == "lambda") return SweepKind::Lambda;
    if (name == "layers") return SweepKind::Layers;
    throw ConfigError("unknown sweep kind '" + name + "' (expected gates, lambda or layers)");
}

std::string sweep_kind_name(SweepKind kind) {
    switch (kind) {
        case SweepKind::Gates: return "gates";
        case SweepKind::Lambda: return "lambda";
        case SweepKind::Layers: return "layers";
    }
    return "gates";
}

void SweepSpec::validate() const {
    if (gate_grid.empty() || lambda_grid.empty() || layer_grid.empty()) {
        throw ConfigError("sweep grids must be non-empty");
    }
    for (double v : gate_grid) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("gate grid values must lie in [0,1]");
    }
    for (double v : lambda_grid) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("lambda grid values must lie in [0,1]");
    }
    for (std::size_t v : layer_grid) {
        if (v == 0) throw ConfigError("layer grid values must be at least 1");
    }
}

void EvalSpec::validate() const {
    if (batch_size == 0) throw ConfigError("eval batch_size must be positive");
}

namespace {

void reject_unknown_keys(const json& j, const char* section,
                         std::initializer_list<const char*> known) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) {
            throw ConfigError(std::string("config: unknown key '") + it.key() + "' in " + section);
        }
    }
}

template <typename T>
void read_field(const json& j, const char* key, T& dest) {
    if (j.contains(key)) dest = j.at(key).get<T>();
}

void read_override(const json& j, const char* key, std::optional<double>& dest) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null()) {
        dest = std::nullopt;
    } else {
        dest = j.at(key).get<double>();
    }
}

}  // namespace

ExperimentConfig experiment_from_json(const json& j) {
    reject_unknown_keys(j, "top level", {"corpus", "model", "train", "eval", "sweep"});
    ExperimentConfig c;
    if (j.contains("corpus")) {
        const json& s = j.at("corpus");
        reject_unknown_keys(s, "corpus",
                            {"vocab_size", "min_len", "max_len", "error_rate", "grammar_seed",
                             "seed", "train", "dev", "test", "branching", "damping",
                             "confusables_min", "confusables_max"});
        read_field(s, "vocab_size", c.corpus.vocab_size);
        read_field(s, "min_len", c.corpus.min_len);
        read_field(s, "max_len", c.corpus.max_len);
        read_field(s, "error_rate", c.corpus.error_rate);
        read_field(s, "grammar_seed", c.corpus.grammar_seed);
        read_field(s, "seed", c.corpus.seed);
        read_field(s, "train", c.corpus.train);
        read_field(s, "dev", c.corpus.dev);
        read_field(s, "test", c.corpus.test);
        read_field(s, "branching", c.corpus.branching);
        read_field(s, "damping", c.corpus.damping);
        read_field(s, "confusables_min", c.corpus.confusables_min);
        read_field(s, "confusables_max", c.corpus.confusables_max);
        c.corpus.validate();
    }
    if (j.contains("model")) {
        const json& s = j.at("model");
        reject_unknown_keys(s, "model",
                            {"vocab_size", "d_h", "d_ff", "n_heads", "det_depth", "cor_depth",
                             "interaction_layers", "max_len", "lambda", "mode",
                             "gate_override_alpha", "gate_override_beta"});
        read_field(s, "vocab_size", c.model.vocab_size);
        read_field(s, "d_h", c.model.d_h);
        read_field(s, "d_ff", c.model.d_ff);
        read_field(s, "n_heads", c.model.n_heads);
        read_field(s, "det_depth", c.model.det_depth);
        read_field(s, "cor_depth", c.model.cor_depth);
        read_field(s, "interaction_layers", c.model.interaction_layers);
        read_field(s, "max_len", c.model.max_len);
        read_field(s, "lambda", c.model.lambda);
        if (s.contains("mode")) c.model.mode = mode_from_name(s.at("mode").get<std::string>());
        read_override(s, "gate_override_alpha", c.model.gate_override_alpha);
        read_override(s, "gate_override_beta", c.model.gate_override_beta);
        c.model.validate();
    }
    if (j.contains("train")) {
        const json& s = j.at("train");
        reject_unknown_keys(s, "train",
                            {"epochs", "batch_size", "learning_rate", "lambda", "weight_decay",
                             "beta1", "beta2", "eps", "clip_norm", "seed", "eval_every"});
        read_field(s, "epochs", c.train.epochs);
        read_field(s, "batch_size", c.train.batch_size);
        read_field(s, "learning_rate", c.train.learning_rate);
        read_field(s, "lambda", c.train.lambda);
        read_field(s, "weight_decay", c.train.weight_decay);
        read_field(s, "beta1", c.train.beta1);
        read_field(s, "beta2", c.train.beta2);
        read_field(s, "eps", c.train.eps);
        read_field(s, "clip_norm", c.train.clip_norm);
        read_field(s, "seed", c.train.seed);
        read_field(s, "eval_every", c.train.eval_every);
        c.train.validate();
    }
    if (j.contains("eval")) {
        const json& s = j.at("eval");
        reject_unknown_keys(s, "eval", {"batch_size"});
        read_field(s, "batch_size", c.eval.batch_size);
        c.eval.validate();
    }
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        reject_unknown_keys(s, "sweep",
                            {"kind", "gate_grid", "lambda_grid", "layer_grid", "inference_only"});
        if (s.contains("kind")) c.sweep.kind = sweep_kind_from_name(s.at("kind").get<std::string>());
        read_field(s, "gate_grid", c.sweep.gate_grid);
        read_field(s, "lambda_grid", c.sweep.lambda_grid);
        read_field(s, "layer_grid", c.sweep.layer_grid);
        read_field(s, "inference_only", c.sweep.inference_only);
        c.sweep.validate();
    }
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return experiment_from_json(j);
}

json experiment_to_json(const ExperimentConfig& c) {
    json j;
    j["corpus"] = {{"vocab_size", c.corpus.vocab_size},
                   {"min_len", c.corpus.min_len},
                   {"max_len", c.corpus.max_len},
                   {"error_rate", c.corpus.error_rate},
                   {"grammar_seed", c.corpus.grammar_seed},
                   {"seed", c.corpus.seed},
                   {"train", c.corpus.train},
                   {"dev", c.corpus.dev},
                   {"test", c.corpus.test},
                   {"branching", c.corpus.branching},
                   {"damping", c.corpus.damping},
                   {"confusables_min", c.corpus.confusables_min},
                   {"confusables_max", c.corpus.confusables_max}};
    j["model"] = {{"vocab_size", c.model.vocab_size},
                  {"d_h", c.model.d_h},
                  {"d_ff", c.model.d_ff},
                  {"n_heads", c.model.n_heads},
                  {"det_depth", c.model.det_depth},
                  {"cor_depth", c.model.cor_depth},
                  {"interaction_layers", c.model.interaction_layers},
                  {"max_len", c.model.max_len},
                  {"lambda", c.model.lambda},
                  {"mode", mode_name(c.model.mode)}};
    j["model"]["gate_override_alpha"] =
        c.model.gate_override_alpha ? json(*c.model.gate_override_alpha) : json(nullptr);
    j["model"]["gate_override_beta"] =
        c.model.gate_override_beta ? json(*c.model.gate_override_beta) : json(nullptr);
    j["train"] = {{"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"learning_rate", c.train.learning_rate},
                  {"lambda", c.train.lambda},
                  {"weight_decay", c.train.weight_decay},
                  {"beta1", c.train.beta1},
                  {"beta2", c.train.beta2},
                  {"eps", c.train.eps},
                  {"clip_norm", c.train.clip_norm},
                  {"seed", c.train.seed},
                  {"eval_every", c.train.eval_every}};
    j["eval"] = {{"batch_size", c.eval.batch_size}};
    j["sweep"] = {{"kind", sweep_kind_name(c.sweep.kind)},
                  {"gate_grid", c.sweep.gate_grid},
                  {"lambda_grid", c.sweep.lambda_grid},
                  {"layer_grid", c.sweep.layer_grid},
                  {"inference_only", c.sweep.inference_only}};
    return j;
}

DatasetBundle generate_datasets(const CorpusSpec& spec) {
    spec.validate();
    DatasetBundle b;
    b.vocab = Vocab::synthetic(spec.vocab_size, spec.grammar_seed);
    const MarkovChain chain =
        MarkovChain::build(b.vocab, spec.grammar_seed, spec.branching, spec.damping);
    const ConfusionTable table =
        ConfusionTable::build(b.vocab, spec.grammar_seed, spec.confusables_min,
                              spec.confusables_max);
    // Disjoint per-sentence seed streams for the three splits.
    b.train = generate_corpus(chain, table, spec, spec.train, 0);
    b.dev = generate_corpus(chain, table, spec, spec.dev, spec.train);
    b.test = generate_corpus(chain, table, spec, spec.test, spec.train + spec.dev);
    return b;
}

void write_datasets(const std::string& dir, const DatasetBundle& bundle, const CorpusSpec& spec) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
    bundle.vocab.save((fs::path(dir) / "vocab.txt").string());
    save_tsv((fs::path(dir) / "train.tsv").string(), bundle.train, bundle.vocab);
    save_tsv((fs::path(dir) / "dev.tsv").string(), bundle.dev, bundle.vocab);
    save_tsv((fs::path(dir) / "test.tsv").string(), bundle.test, bundle.vocab);
    std::ofstream manifest((fs::path(dir) / "manifest.json").string(), std::ios::binary);
    if (!manifest) throw DataError("cannot write manifest in " + dir);
    manifest << manifest_json(spec, bundle.vocab);
}

DatasetBundle load_datasets(const std::string& dir) {
    DatasetBundle b;
    b.vocab = Vocab::load((fs::path(dir) / "vocab.txt").string());
    b.train = load_tsv((fs::path(dir) / "train.tsv").string(), b.vocab).samples;
    b.dev = load_tsv((fs::path(dir) / "dev.tsv").string(), b.vocab).samples;
    b.test = load_tsv((fs::path(dir) / "test.tsv").string(), b.vocab).samples;
    return b;
}

void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

RunScore train_and_score(const ModelConfig& mc, const TrainConfig& tc,
                         const DatasetBundle& data) {
    TrainResult result = train(mc, data.train, data.dev, tc);
    ModelParams params = init_params(mc, 0);
    params.restore_values(result.best_params);
    Model model(mc, std::move(params));
    EvalReport report = evaluate_model(model, data.test);
    RunScore score;
    score.det_f1 = report.sentence_detection.f1;
    score.cor_f1 = report.sentence_correction.f1;
    score.hard_det_f1 = report.hard_detection.f1;
    score.char_consistency = report.consistency.character_level;
    score.sent_consistency = report.consistency.sentence_level;
    return score;
}

AblateResult run_ablation(const ExperimentConfig& config, const DatasetBundle& data,
                          const std::vector<std::uint64_t>& seeds, std::size_t threads) {
    if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
    const Mode modes[3] = {Mode::COnly, Mode::D2C, Mode::BiDC};
    AblateResult result;
    result.runs.resize(seeds.size() * 3);
    parallel_for(result.runs.size(), threads, [&](std::size_t i) {
        const std::size_t seed_idx = i / 3;
        const Mode mode = modes[i % 3];
        ModelConfig mc = config.model;
        mc.mode = mode;
        mc.gate_override_alpha.reset();
        mc.gate_override_beta.reset();
        TrainConfig tc = config.train;
        tc.seed = seeds[seed_idx];
        AblateRun& run = result.runs[i];
        run.mode = mode;
        run.seed = seeds[seed_idx];
        log_debug("ablation: training " + mode_name(mode) + " seed " +
                  std::to_string(seeds[seed_idx]));
        run.score = train_and_score(mc, tc, data);
        log_info("ablation: " + mode_name(mode) + " seed " + std::to_string(seeds[seed_idx]) +
                 " cor F1 " + std::to_string(run.score.cor_f1));
    });
    for (std::size_t m = 0; m < 3; ++m) {
        double det = 0.0, cor = 0.0;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            det += result.runs[s * 3 + m].score.det_f1;
            cor += result.runs[s * 3 + m].score.cor_f1;
        }
        result.mean_det_f1[m] = det / static_cast<double>(seeds.size());
        result.mean_cor_f1[m] = cor / static_cast<double>(seeds.size());
    }
    return result;
}

std::string ablation_table(const AblateResult& result) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "mode     seed   det-F1   cor-F1\n";
    for (const auto& run : result.runs) {
        os << std::left << std::setw(9) << mode_name(run.mode) << std::setw(7) << run.seed
           << std::setw(9) << run.score.det_f1 << run.score.cor_f1 << '\n';
    }
    os << "\nmode     mean-det-F1  mean-cor-F1  delta-det  delta-cor\n";
    static const char* names[3] = {"c-only", "d2c", "bidc"};
    for (std::size_t m = 0; m < 3; ++m) {
        os << std::left << std::setw(9) << names[m] << std::setw(13) << result.mean_det_f1[m]
           << std::setw(13) << result.mean_cor_f1[m] << std::setw(11)
           << result.mean_det_f1[m] - result.mean_det_f1[0]
           << result.mean_cor_f1[m] - result.mean_cor_f1[0] << '\n';
    }
    return os.str();
}

json ablation_json(const AblateResult& result) {
    json j;
    j["runs"] = json::array();
    for (const auto& run : result.runs) {
        j["runs"].push_back({{"mode", mode_name(run.mode)},
                             {"seed", run.seed},
                             {"det_f1", run.score.det_f1},
                             {"cor_f1", run.score.cor_f1},
                             {"hard_det_f1", run.score.hard_det_f1},
                             {"char_consistency", run.score.char_consistency}});
    }
    static const char* names[3] = {"c-only", "d2c", "bidc"};
    for (std::size_t m = 0; m < 3; ++m) {
        j["mean"][names[m]] = {{"det_f1", result.mean_det_f1[m]},
                               {"cor_f1", result.mean_cor_f1[m]},
                               {"delta_det_f1", result.mean_det_f1[m] - result.mean_det_f1[0]},
                               {"delta_cor_f1", result.mean_cor_f1[m] - result.mean_cor_f1[0]}};
    }
    return j;
}

std::string ablation_csv(const AblateResult& result) {
    std::ostringstream os;
    os << "mode,seed,det_f1,cor_f1,hard_det_f1,char_consistency\n";
    for (const auto& run : result.runs) {
        char buf[192];
        std::snprintf(buf, sizeof(buf), "%s,%llu,%.6f,%.6f,%.6f,%.6f\n",
                      mode_name(run.mode).c_str(),
                      static_cast<unsigned long long>(run.seed), run.score.det_f1,
                      run.score.cor_f1, run.score.hard_det_f1, run.score.char_consistency);
        os << buf;
    }
    return os.str();
}

SweepResult run_sweep(const ExperimentConfig& config, const DatasetBundle& data,
                      std::size_t threads) {
    config.sweep.validate();
    SweepResult result;
    result.kind = config.sweep.kind;

    std::vector<SweepCell> cells;
    switch (config.sweep.kind) {
        case SweepKind::Gates:
            for (double a : config.sweep.gate_grid) {
                for (double b : config.sweep.gate_grid) {
                    SweepCell cell;
                    cell.alpha = a;
                    cell.beta = b;
                    cell.lambda = config.train.lambda;
                    cell.layers = config.model.interaction_layers;
                    cells.push_back(cell);
                }
            }
            break;
        case SweepKind::Lambda:
            for (double l : config.sweep.lambda_grid) {
                SweepCell cell;
                cell.lambda = l;
                cell.layers = config.model.interaction_layers;
                cells.push_back(cell);
            }
            break;
        case SweepKind::Layers:
            for (std::size_t n : config.sweep.layer_grid) {
                SweepCell cell;
                cell.lambda = config.train.lambda;
                cell.layers = n;
                cells.push_back(cell);
            }
            break;
    }
    result.cells = std::move(cells);

    // inference_only trains one base model and only re-applies the gate
    // overrides at prediction time; grid cells then share the weights.
    std::vector<Array> base_params;
    if (config.sweep.kind == SweepKind::Gates && config.sweep.inference_only) {
        ModelConfig mc = config.model;
        mc.mode = Mode::BiDC;
        mc.gate_override_alpha.reset();
        mc.gate_override_beta.reset();
        TrainResult tr = train(mc, data.train, data.dev, config.train);
        base_params = tr.best_params;
    }

    parallel_for(result.cells.size(), threads, [&](std::size_t i) {
        SweepCell& cell = result.cells[i];
        ModelConfig mc = config.model;
        TrainConfig tc = config.train;
        switch (config.sweep.kind) {
            case SweepKind::Gates:
                mc.mode = Mode::BiDC;
                mc.gate_override_alpha = cell.alpha;
                mc.gate_override_beta = cell.beta;
                break;
            case SweepKind::Lambda:
                mc.lambda = cell.lambda;
                tc.lambda = cell.lambda;
                break;
            case SweepKind::Layers:
                mc.interaction_layers = cell.layers;
                break;
        }
        log_debug("sweep cell " + std::to_string(i + 1) + "/" +
                  std::to_string(result.cells.size()));
        if (config.sweep.kind == SweepKind::Gates && config.sweep.inference_only) {
            // Same weights, overridden gates.
            ModelParams override_params = init_params(mc, 0);
            override_params.restore_values(base_params);
            Model model(mc, std::move(override_params));
            EvalReport report = evaluate_model(model, data.test);
            cell.score.det_f1 = report.sentence_detection.f1;
            cell.score.cor_f1 = report.sentence_correction.f1;
            cell.score.hard_det_f1 = report.hard_detection.f1;
            cell.score.char_consistency = report.consistency.character_level;
            cell.score.sent_consistency = report.consistency.sentence_level;
        } else {
            cell.score = train_and_score(mc, tc, data);
        }
    });
    return result;
}

json sweep_json(const SweepResult& result) {
    json j;
    j["kind"] = sweep_kind_name(result.kind);
    j["cells"] = json::array();
    for (const auto& c : result.cells) {
        json cell = {{"det_f1", c.score.det_f1},
                     {"cor_f1", c.score.cor_f1},
                     {"hard_det_f1", c.score.hard_det_f1}};
        switch (result.kind) {
            case SweepKind::Gates:
                cell["alpha"] = c.alpha;
                cell["beta"] = c.beta;
                break;
            case SweepKind::Lambda: cell["lambda"] = c.lambda; break;
            case SweepKind::Layers: cell["layers"] = c.layers; break;
        }
        j["cells"].push_back(cell);
    }
    return j;
}

std::string sweep_csv(const SweepResult& result) {
    std::ostringstream os;
    switch (result.kind) {
        case SweepKind::Gates: os << "alpha,beta,det_f1,cor_f1,hard_det_f1\n"; break;
        case SweepKind::Lambda: os << "lambda,det_f1,cor_f1,hard_det_f1\n"; break;
        case SweepKind::Layers: os << "layers,det_f1,cor_f1,hard_det_f1\n"; break;
    }
    for (const auto& c : result.cells) {
        char buf[192];
        switch (result.kind) {
            case SweepKind::Gates:
                std::snprintf(buf, sizeof(buf), "%.3f,%.3f,%.6f,%.6f,%.6f\n", c.alpha, c.beta,
                              c.score.det_f1, c.score.cor_f1, c.score.hard_det_f1);
                break;
            case SweepKind::Lambda:
                std::snprintf(buf, sizeof(buf), "%.3f,%.6f,%.6f,%.6f\n", c.lambda,
                              c.score.det_f1, c.score.cor_f1, c.score.hard_det_f1);
                break;
            case SweepKind::Layers:
                std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f\n", c.layers,
                              c.score.det_f1, c.score.cor_f1, c.score.hard_det_f1);
                break;
        }
        os << buf;
    }
    return os.str();
}

}  // namespace bidc
