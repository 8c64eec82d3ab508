#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bidc/corpus.hpp"
#include "bidc/model.hpp"

namespace bidc {

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long tp = 0;
    long fp = 0;
    long fn = 0;
    bool zero_denominator = false;  // precision or recall had an empty denominator

    void finalize();
};

struct ConsistencyScores {
    double character_level = 0.0;
    double sentence_level = 0.0;
    long consistent_positions = 0;
    long total_positions = 0;
    long consistent_sentences = 0;
    long total_sentences = 0;
};

/// Sentence-level scores follow the exact-position-set convention: a sentence
/// counts as detection-correct only when the set of changed positions equals
/// the gold error set, and as correction-correct when additionally every
/// output token matches the target. "Detection" is diff-based (corrector
/// output vs source); hard detection uses the detection classifier labels.
struct EvalReport {
    Prf sentence_detection;
    Prf sentence_correction;
    Prf character_detection;
    Prf character_correction;
    Prf hard_detection;
    ConsistencyScores consistency;
};

EvalReport evaluate(const std::vector<SentencePrediction>& predictions,
                    const std::vector<Sample>& gold);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
std::string render_report_table(const EvalReport& report);

/// Run a model over a dataset and score it. Batched for throughput.
EvalReport evaluate_model(const Model& model, const std::vector<Sample>& dataset,
                          std::size_t batch_size = 64);
std::vector<SentencePrediction> predict_dataset(const Model& model,
                                                const std::vector<Sample>& dataset,
                                                std::size_t batch_size = 64);

}  // namespace bidc
