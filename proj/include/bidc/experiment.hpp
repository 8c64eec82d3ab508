#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bidc/corpus.hpp"
#include "bidc/evaluation.hpp"
#include "bidc/model.hpp"
#include "bidc/training.hpp"

namespace bidc {

enum class SweepKind { Gates, Lambda, Layers };

SweepKind sweep_kind_from_name(const std::string& name);
std::string sweep_kind_name(SweepKind kind);

struct SweepSpec {
    SweepKind kind = SweepKind::Gates;
    std::vector<double> gate_grid = {0.0, 0.25, 0.5, 0.75, 1.0};
    std::vector<double> lambda_grid = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<std::size_t> layer_grid = {1, 2, 3, 4};
    bool inference_only = false;

    void validate() const;
};

struct EvalSpec {
    std::size_t batch_size = 64;

    void validate() const;
};

/// One JSON document capturing a whole experiment; unknown keys anywhere are
/// rejected so a config file cannot silently drift from the schema.
struct ExperimentConfig {
    CorpusSpec corpus;
    ModelConfig model;
    TrainConfig train;
    EvalSpec eval;
    SweepSpec sweep;
};

ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);
nlohmann::json experiment_to_json(const ExperimentConfig& config);

struct DatasetBundle {
    Vocab vocab;
    std::vector<Sample> train;
    std::vector<Sample> dev;
    std::vector<Sample> test;
};

DatasetBundle generate_datasets(const CorpusSpec& spec);
void write_datasets(const std::string& dir, const DatasetBundle& bundle, const CorpusSpec& spec);
DatasetBundle load_datasets(const std::string& dir);

/// Runs tasks 0..count-1 on up to `threads` workers. Tasks must be
/// independent; results keyed by index stay in task order.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

struct RunScore {
    double det_f1 = 0.0;       // diff-based sentence detection F1
    double cor_f1 = 0.0;       // sentence correction F1
    double hard_det_f1 = 0.0;  // classifier-based sentence detection F1
    double char_consistency = 0.0;
    double sent_consistency = 0.0;
};

/// Train with the given configs and score the best checkpoint on `test`.
RunScore train_and_score(const ModelConfig& mc, const TrainConfig& tc,
                         const DatasetBundle& data);

struct AblateRun {
    Mode mode = Mode::BiDC;
    std::uint64_t seed = 0;
    RunScore score;
};

struct AblateResult {
    std::vector<AblateRun> runs;  // grouped by seed, modes in fixed order
    double mean_det_f1[3] = {0, 0, 0};  // indexed by c-only, d2c, bidc
    double mean_cor_f1[3] = {0, 0, 0};
};

AblateResult run_ablation(const ExperimentConfig& config, const DatasetBundle& data,
                          const std::vector<std::uint64_t>& seeds, std::size_t threads);
std::string ablation_table(const AblateResult& result);
nlohmann::json ablation_json(const AblateResult& result);
std::string ablation_csv(const AblateResult& result);

struct SweepCell {
    double alpha = 0.0;
    double beta = 0.0;
    double lambda = 0.0;
    std::size_t layers = 0;
    RunScore score;
};

struct SweepResult {
    SweepKind kind = SweepKind::Gates;
    std::vector<SweepCell> cells;
};

SweepResult run_sweep(const ExperimentConfig& config, const DatasetBundle& data,
                      std::size_t threads);
nlohmann::json sweep_json(const SweepResult& result);
std::string sweep_csv(const SweepResult& result);

}  // namespace bidc
