#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bidc/corpus.hpp"
#include "bidc/model.hpp"

namespace bidc {

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double learning_rate = 3e-3;  // desk-scale default; 5e-5 remains selectable
    double lambda = 0.8;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // 0 disables clipping
    std::uint64_t seed = 0;
    std::size_t eval_every = 1;

    void validate() const;
};

struct AdamState {
    std::vector<Array> m;
    std::vector<Array> v;
    long step = 0;

    static AdamState like(const ModelParams& params);
};

/// Decoupled-weight-decay Adam update over all parameters. Throws
/// NumericError naming the parameter when a gradient is non-finite.
void adamw_step(ModelParams& params, AdamState& state, const TrainConfig& config);

/// Scale all gradients so the global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
double clip_gradients(ModelParams& params, double max_norm);

struct StepRecord {
    double loss = 0.0;
    double loss_cor = 0.0;
    double loss_det = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double mean_loss = 0.0;
    double mean_loss_cor = 0.0;
    double mean_loss_det = 0.0;
    double dev_det_f1 = 0.0;
    double dev_cor_f1 = 0.0;
    double wall_seconds = 0.0;
};

struct ResumeState {
    std::vector<Array> params;
    AdamState opt;
    std::size_t next_epoch = 0;
};

struct TrainResult {
    ModelConfig config;
    std::vector<Array> best_params;
    std::vector<Array> final_params;
    AdamState final_opt;
    std::size_t next_epoch = 0;
    std::size_t best_epoch = 0;  // 0 = never evaluated
    double best_dev_cor_f1 = 0.0;
    std::vector<EpochRecord> log;
    std::vector<StepRecord> steps;
};

/// Deterministic mini-batch training. Shuffling is keyed by (seed, epoch), so
/// resuming from an epoch boundary reproduces the uninterrupted run.
TrainResult train(const ModelConfig& model_config, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& dev_set, const TrainConfig& train_config,
                  const ResumeState* resume = nullptr);

Batch make_training_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                          std::size_t begin, std::size_t end);

std::string train_log_jsonl(const std::vector<EpochRecord>& log);

// --- checkpoint file format --------------------------------------------
// "BIDC1\n", then a textual header (config fields, vocab hash, one line per
// parameter with its shape, optional optimizer line), then "data\n" and raw
// little-endian f64 arrays in header order. Load followed by save is
// byte-identical.

struct LoadedCheckpoint {
    ModelConfig config;
    ModelParams params;
    std::string vocab_hash;
    std::optional<AdamState> opt;
    std::size_t next_epoch = 0;
};

void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const ModelParams& params, const std::string& vocab_hash,
                     const AdamState* opt = nullptr, std::size_t next_epoch = 0);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace bidc
