#include "bidc/evaluation.hpp"

#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bidc/errors.hpp"

namespace bidc {

void Prf::finalize() {
    const long pd = tp + fp;
    const long rd = tp + fn;
    zero_denominator = pd == 0 || rd == 0;
    precision = pd == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(pd);
    recall = rd == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(rd);
    f1 = precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

namespace {

std::vector<std::size_t> changed_positions(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) out.push_back(i);
    }
    return out;
}

// Sentence-level TP/FP/FN for one sentence given the model's error-position
// set and, for correction, whether the output equals the target everywhere.
void tally_sentence(Prf& prf, const std::vector<std::size_t>& flagged,
                    const std::vector<std::size_t>& gold, bool output_matches) {
    const bool is_tp = !gold.empty() && flagged == gold && output_matches;
    if (is_tp) {
        ++prf.tp;
        return;
    }
    if (!flagged.empty()) ++prf.fp;
    if (!gold.empty()) ++prf.fn;
}

}  // namespace

EvalReport evaluate(const std::vector<SentencePrediction>& predictions,
                    const std::vector<Sample>& gold) {
    if (predictions.size() != gold.size()) {
        throw DataError("evaluation: " + std::to_string(predictions.size()) +
                        " predictions vs " + std::to_string(gold.size()) + " gold samples");
    }
    EvalReport r;
    for (std::size_t s = 0; s < gold.size(); ++s) {
        const Sample& g = gold[s];
        const SentencePrediction& p = predictions[s];
        if (p.corrected.size() != g.source.size() || p.det_labels.size() != g.source.size()) {
            throw DataError("evaluation: prediction length mismatch at sentence " +
                            std::to_string(s));
        }
        const auto flagged = changed_positions(p.corrected, g.source);
        const auto gold_err = changed_positions(g.target, g.source);
        const bool exact = p.corrected == g.target;

        tally_sentence(r.sentence_detection, flagged, gold_err, true);
        tally_sentence(r.sentence_correction, flagged, gold_err, exact);

        std::vector<std::size_t> hard_flagged;
        for (std::size_t i = 0; i < p.det_labels.size(); ++i) {
            if (p.det_labels[i] == 1) hard_flagged.push_back(i);
        }
        tally_sentence(r.hard_detection, hard_flagged, gold_err, true);

        bool all_consistent = true;
        for (std::size_t i = 0; i < g.source.size(); ++i) {
            const bool model_changed = p.corrected[i] != g.source[i];
            const bool gold_error = g.target[i] != g.source[i];
            if (model_changed && gold_error) {
                ++r.character_detection.tp;
                if (p.corrected[i] == g.target[i]) ++r.character_correction.tp;
                else {
                    ++r.character_correction.fp;
                    ++r.character_correction.fn;
                }
            } else if (model_changed) {
                ++r.character_detection.fp;
                ++r.character_correction.fp;
            } else if (gold_error) {
                ++r.character_detection.fn;
                ++r.character_correction.fn;
            }
            const bool consistent = (p.det_labels[i] == 1) == model_changed;
            r.consistency.consistent_positions += consistent ? 1 : 0;
            ++r.consistency.total_positions;
            all_consistent = all_consistent && consistent;
        }
        r.consistency.consistent_sentences += all_consistent ? 1 : 0;
        ++r.consistency.total_sentences;
    }
    r.sentence_detection.finalize();
    r.sentence_correction.finalize();
    r.character_detection.finalize();
    r.character_correction.finalize();
    r.hard_detection.finalize();
    r.consistency.character_level =
        r.consistency.total_positions == 0
            ? 0.0
            : static_cast<double>(r.consistency.consistent_positions) /
                  static_cast<double>(r.consistency.total_positions);
    r.consistency.sentence_level =
        r.consistency.total_sentences == 0
            ? 0.0
            : static_cast<double>(r.consistency.consistent_sentences) /
                  static_cast<double>(r.consistency.total_sentences);
    return r;
}

namespace {

nlohmann::json prf_to_json(const Prf& p) {
    return {{"precision", p.precision}, {"recall", p.recall},   {"f1", p.f1},
            {"tp", p.tp},               {"fp", p.fp},           {"fn", p.fn},
            {"zero_denominator", p.zero_denominator}};
}

Prf prf_from_json(const nlohmann::json& j) {
    Prf p;
    p.precision = j.at("precision").get<double>();
    p.recall = j.at("recall").get<double>();
    p.f1 = j.at("f1").get<double>();
    p.tp = j.at("tp").get<long>();
    p.fp = j.at("fp").get<long>();
    p.fn = j.at("fn").get<long>();
    p.zero_denominator = j.at("zero_denominator").get<bool>();
    return p;
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["sentence"] = {{"detection", prf_to_json(r.sentence_detection)},
                     {"correction", prf_to_json(r.sentence_correction)}};
    j["character"] = {{"detection", prf_to_json(r.character_detection)},
                      {"correction", prf_to_json(r.character_correction)}};
    j["hard_detection"] = prf_to_json(r.hard_detection);
    j["consistency"] = {{"character_level", r.consistency.character_level},
                        {"sentence_level", r.consistency.sentence_level},
                        {"consistent_positions", r.consistency.consistent_positions},
                        {"total_positions", r.consistency.total_positions},
                        {"consistent_sentences", r.consistency.consistent_sentences},
                        {"total_sentences", r.consistency.total_sentences}};
    return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.sentence_detection = prf_from_json(j.at("sentence").at("detection"));
    r.sentence_correction = prf_from_json(j.at("sentence").at("correction"));
    r.character_detection = prf_from_json(j.at("character").at("detection"));
    r.character_correction = prf_from_json(j.at("character").at("correction"));
    r.hard_detection = prf_from_json(j.at("hard_detection"));
    const auto& c = j.at("consistency");
    r.consistency.character_level = c.at("character_level").get<double>();
    r.consistency.sentence_level = c.at("sentence_level").get<double>();
    r.consistency.consistent_positions = c.at("consistent_positions").get<long>();
    r.consistency.total_positions = c.at("total_positions").get<long>();
    r.consistency.consistent_sentences = c.at("consistent_sentences").get<long>();
    r.consistency.total_sentences = c.at("total_sentences").get<long>();
    return r;
}

std::string render_report_table(const EvalReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    auto row = [&os](const char* name, const Prf& p) {
        os << "  " << std::left << std::setw(22) << name << " P=" << p.precision
           << " R=" << p.recall << " F1=" << p.f1 << "  (tp=" << p.tp << " fp=" << p.fp
           << " fn=" << p.fn << (p.zero_denominator ? ", zero denominator)" : ")") << '\n';
    };
    os << "sentence level\n";
    row("detection", r.sentence_detection);
    row("correction", r.sentence_correction);
    row("hard detection", r.hard_detection);
    os << "character level\n";
    row("detection", r.character_detection);
    row("correction", r.character_correction);
    os << "consistency\n"
       << "  character level        " << r.consistency.character_level << '\n'
       << "  sentence level         " << r.consistency.sentence_level << '\n';
    return os.str();
}

std::vector<SentencePrediction> predict_dataset(const Model& model,
                                                const std::vector<Sample>& dataset,
                                                std::size_t batch_size) {
    std::vector<SentencePrediction> out;
    out.reserve(dataset.size());
    for (std::size_t begin = 0; begin < dataset.size(); begin += batch_size) {
        const std::size_t end = std::min(dataset.size(), begin + batch_size);
        std::vector<std::vector<int>> sentences;
        sentences.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) sentences.push_back(dataset[i].source);
        Batch b = make_batch(sentences, Vocab::kPad, true);
        auto preds = model.predict_batch(b);
        for (auto& p : preds) out.push_back(std::move(p));
    }
    return out;
}

EvalReport evaluate_model(const Model& model, const std::vector<Sample>& dataset,
                          std::size_t batch_size) {
    return evaluate(predict_dataset(model, dataset, batch_size), dataset);
}

}  // namespace bidc
