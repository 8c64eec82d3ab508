#include "bidc/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "bidc/errors.hpp"
#include "bidc/evaluation.hpp"

namespace bidc {

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1]");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("betas must lie in [0,1)");
    }
    if (!(eps > 0.0)) throw ConfigError("adam eps must be positive");
    if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
    if (eval_every == 0) throw ConfigError("eval_every must be positive");
}

AdamState AdamState::like(const ModelParams& params) {
    AdamState s;
    s.m.reserve(params.entries.size());
    s.v.reserve(params.entries.size());
    for (const auto& e : params.entries) {
        s.m.push_back(Array::zeros_like(e.node->value));
        s.v.push_back(Array::zeros_like(e.node->value));
    }
    return s;
}

void adamw_step(ModelParams& params, AdamState& state, const TrainConfig& config) {
    if (state.m.size() != params.entries.size()) {
        throw ConfigError("optimizer state does not match parameter set");
    }
    const long t = ++state.step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
    for (std::size_t pi = 0; pi < params.entries.size(); ++pi) {
        auto& node = *params.entries[pi].node;
        Array& m = state.m[pi];
        Array& v = state.v[pi];
        for (std::size_t i = 0; i < node.value.size(); ++i) {
            const double g = node.grad[i];
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient in parameter " +
                                   params.entries[pi].name);
            }
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            node.value[i] -= config.learning_rate * (m_hat / (std::sqrt(v_hat) + config.eps));
            node.value[i] -= config.learning_rate * config.weight_decay * node.value[i];
        }
    }
}

double clip_gradients(ModelParams& params, double max_norm) {
    double sq = 0.0;
    for (const auto& e : params.entries) {
        for (std::size_t i = 0; i < e.node->grad.size(); ++i) {
            sq += e.node->grad[i] * e.node->grad[i];
        }
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& e : params.entries) {
            for (std::size_t i = 0; i < e.node->grad.size(); ++i) e.node->grad[i] *= scale;
        }
    }
    return norm;
}

Batch make_training_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                          std::size_t begin, std::size_t end) {
    std::size_t max_len = 0;
    for (std::size_t i = begin; i < end; ++i) {
        max_len = std::max(max_len, samples[idx[i]].source.size());
    }
    Batch b;
    b.offsets.push_back(0);
    for (std::size_t i = begin; i < end; ++i) {
        const Sample& s = samples[idx[i]];
        for (std::size_t j = 0; j < max_len; ++j) {
            const bool real = j < s.source.size();
            b.token_ids.push_back(real ? s.source[j] : Vocab::kPad);
            b.positions.push_back(static_cast<int>(j));
            b.mask.push_back(real ? 1 : 0);
            b.det_labels.push_back(real ? s.det_labels[j] : 0);
            b.cor_targets.push_back(real ? s.target[j] : Vocab::kPad);
        }
        b.offsets.push_back(b.token_ids.size());
    }
    return b;
}

TrainResult train(const ModelConfig& model_config, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& dev_set, const TrainConfig& train_config,
                  const ResumeState* resume) {
    model_config.validate();
    train_config.validate();
    if (train_set.empty()) throw DataError("training set is empty");

    Model model(model_config, train_config.seed);
    AdamState opt = AdamState::like(model.params());
    std::size_t start_epoch = 0;
    if (resume) {
        model.params().restore_values(resume->params);
        opt = resume->opt;
        start_epoch = resume->next_epoch;
    }

    TrainResult result;
    result.config = model_config;
    result.best_params = model.params().snapshot_values();
    result.best_dev_cor_f1 = -1.0;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = start_epoch; epoch < train_config.epochs; ++epoch) {
        const auto wall_start = std::chrono::steady_clock::now();
        Rng shuffle_rng(mix_seed(train_config.seed, 0xe90cULL + epoch));
        std::iota(order.begin(), order.end(), 0);
        shuffle_rng.shuffle(order);

        double loss_weighted = 0.0, loss_cor_weighted = 0.0, loss_det_weighted = 0.0;
        std::size_t positions = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += train_config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + train_config.batch_size);
            Batch batch = make_training_batch(train_set, order, begin, end);
            model.params().zero_grads();
            ForwardTrace trace = model.forward(batch);
            LossParts parts = model.loss(trace, batch, train_config.lambda);
            const double loss_value = parts.total->value[0];
            if (!std::isfinite(loss_value)) {
                throw NumericError("loss diverged at epoch " + std::to_string(epoch + 1) +
                                   ", step " + std::to_string(begin / train_config.batch_size));
            }
            backward(parts.total);
            clip_gradients(model.params(), train_config.clip_norm);
            adamw_step(model.params(), opt, train_config);

            StepRecord step;
            step.loss = loss_value;
            step.loss_cor = parts.correction->value[0];
            step.loss_det = parts.detection ? parts.detection->value[0] : 0.0;
            result.steps.push_back(step);

            std::size_t unmasked = 0;
            for (auto f : batch.mask) unmasked += f;
            loss_weighted += loss_value * static_cast<double>(unmasked);
            loss_cor_weighted += step.loss_cor * static_cast<double>(unmasked);
            loss_det_weighted += step.loss_det * static_cast<double>(unmasked);
            positions += unmasked;
        }

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.mean_loss = loss_weighted / static_cast<double>(positions);
        rec.mean_loss_cor = loss_cor_weighted / static_cast<double>(positions);
        rec.mean_loss_det = loss_det_weighted / static_cast<double>(positions);
        const bool eval_now =
            !dev_set.empty() &&
            ((epoch + 1 - start_epoch) % train_config.eval_every == 0 ||
             epoch + 1 == train_config.epochs);
        if (eval_now) {
            EvalReport report = evaluate_model(model, dev_set);
            rec.dev_det_f1 = report.sentence_detection.f1;
            rec.dev_cor_f1 = report.sentence_correction.f1;
            if (rec.dev_cor_f1 > result.best_dev_cor_f1) {
                result.best_dev_cor_f1 = rec.dev_cor_f1;
                result.best_epoch = epoch + 1;
                result.best_params = model.params().snapshot_values();
            }
        }
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
        result.log.push_back(rec);
    }

    if (result.best_dev_cor_f1 < 0.0) {
        result.best_dev_cor_f1 = 0.0;
        result.best_params = model.params().snapshot_values();
    }
    result.final_params = model.params().snapshot_values();
    result.final_opt = std::move(opt);
    result.next_epoch = train_config.epochs;
    return result;
}

std::string train_log_jsonl(const std::vector<EpochRecord>& log) {
    std::ostringstream os;
    for (const auto& r : log) {
        char buf[320];
        std::snprintf(buf, sizeof(buf),
                      "{\"epoch\":%zu,\"loss\":%.17g,\"loss_cor\":%.17g,\"loss_det\":%.17g,"
                      "\"dev_det_f1\":%.17g,\"dev_cor_f1\":%.17g,\"wall_seconds\":%.3f}\n",
                      r.epoch, r.mean_loss, r.mean_loss_cor, r.mean_loss_det, r.dev_det_f1,
                      r.dev_cor_f1, r.wall_seconds);
        os << buf;
    }
    return os.str();
}

// --- checkpoint io ----------------------------------------------------------

namespace {

constexpr char kMagic[] = "BIDC1\n";

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_override(const std::optional<double>& v) {
    return v ? format_double(*v) : "none";
}

std::optional<double> parse_override(const std::string& s) {
    if (s == "none") return std::nullopt;
    return std::stod(s);
}

void write_header(std::ostream& out, const ModelConfig& c, const ModelParams& params,
                  const std::string& vocab_hash, const AdamState* opt, std::size_t next_epoch) {
    out << kMagic;
    out << "config vocab_size " << c.vocab_size << '\n';
    out << "config d_h " << c.d_h << '\n';
    out << "config d_ff " << c.d_ff << '\n';
    out << "config n_heads " << c.n_heads << '\n';
    out << "config det_depth " << c.det_depth << '\n';
    out << "config cor_depth " << c.cor_depth << '\n';
    out << "config interaction_layers " << c.interaction_layers << '\n';
    out << "config max_len " << c.max_len << '\n';
    out << "config lambda " << format_double(c.lambda) << '\n';
    out << "config mode " << mode_name(c.mode) << '\n';
    out << "config gate_override_alpha " << format_override(c.gate_override_alpha) << '\n';
    out << "config gate_override_beta " << format_override(c.gate_override_beta) << '\n';
    out << "vocab_hash " << (vocab_hash.empty() ? "none" : vocab_hash) << '\n';
    for (const auto& e : params.entries) {
        out << "param " << e.name;
        for (std::size_t d : e.node->value.shape()) out << ' ' << d;
        out << '\n';
    }
    if (opt) {
        out << "opt adamw step " << opt->step << " next_epoch " << next_epoch << '\n';
    }
    out << "data\n";
}

void write_array(std::ostream& out, const Array& a) {
    out.write(reinterpret_cast<const char*>(a.data()),
              static_cast<std::streamsize>(a.size() * sizeof(double)));
}

void read_array(std::istream& in, Array& a, const std::string& path) {
    in.read(reinterpret_cast<char*>(a.data()),
            static_cast<std::streamsize>(a.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(a.size() * sizeof(double))) {
        throw DataError("checkpoint truncated: " + path);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const ModelParams& params, const std::string& vocab_hash,
                     const AdamState* opt, std::size_t next_epoch) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path);
    write_header(out, config, params, vocab_hash, opt, next_epoch);
    for (const auto& e : params.entries) write_array(out, e.node->value);
    if (opt) {
        for (const auto& a : opt->m) write_array(out, a);
        for (const auto& a : opt->v) write_array(out, a);
    }
    if (!out) throw DataError("write failure on checkpoint " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint " + path);

    std::string magic(6, '\0');
    in.read(magic.data(), 6);
    if (in.gcount() != 6 || magic != kMagic) {
        throw DataError("not a checkpoint (bad magic): " + path);
    }

    LoadedCheckpoint ck;
    std::vector<std::pair<std::string, std::vector<std::size_t>>> header_params;
    bool has_opt = false;
    std::string line;
    while (std::getline(in, line)) {
        if (line == "data") break;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "config") {
            std::string key, value;
            ls >> key >> value;
            auto& c = ck.config;
            if (key == "vocab_size") c.vocab_size = std::stoull(value);
            else if (key == "d_h") c.d_h = std::stoull(value);
            else if (key == "d_ff") c.d_ff = std::stoull(value);
            else if (key == "n_heads") c.n_heads = std::stoull(value);
            else if (key == "det_depth") c.det_depth = std::stoull(value);
            else if (key == "cor_depth") c.cor_depth = std::stoull(value);
            else if (key == "interaction_layers") c.interaction_layers = std::stoull(value);
            else if (key == "max_len") c.max_len = std::stoull(value);
            else if (key == "lambda") c.lambda = std::stod(value);
            else if (key == "mode") c.mode = mode_from_name(value);
            else if (key == "gate_override_alpha") c.gate_override_alpha = parse_override(value);
            else if (key == "gate_override_beta") c.gate_override_beta = parse_override(value);
            else throw DataError("checkpoint " + path + ": unknown config field " + key);
        } else if (kind == "vocab_hash") {
            std::string value;
            ls >> value;
            ck.vocab_hash = value == "none" ? "" : value;
        } else if (kind == "param") {
            std::string name;
            ls >> name;
            std::vector<std::size_t> shape;
            std::size_t d;
            while (ls >> d) shape.push_back(d);
            header_params.emplace_back(name, shape);
        } else if (kind == "opt") {
            std::string algo, key;
            ls >> algo >> key;
            if (algo != "adamw" || key != "step") {
                throw DataError("checkpoint " + path + ": unsupported optimizer line");
            }
            AdamState st;
            ls >> st.step;
            ls >> key;  // "next_epoch"
            ls >> ck.next_epoch;
            ck.opt = std::move(st);
            has_opt = true;
        } else {
            throw DataError("checkpoint " + path + ": unrecognized header line '" + line + "'");
        }
    }
    if (line != "data") throw DataError("checkpoint truncated (no data section): " + path);

    // The parameter registry is rebuilt from the config; the header must agree.
    ck.params = init_params(ck.config, 0);
    if (header_params.size() != ck.params.entries.size()) {
        throw DataError("checkpoint " + path + ": header lists " +
                        std::to_string(header_params.size()) + " parameters, config implies " +
                        std::to_string(ck.params.entries.size()));
    }
    for (std::size_t i = 0; i < header_params.size(); ++i) {
        const auto& [name, shape] = header_params[i];
        auto& entry = ck.params.entries[i];
        if (name != entry.name || shape != entry.node->value.shape()) {
            throw DataError("checkpoint " + path + ": parameter " + std::to_string(i) +
                            " is " + name + ", expected " + entry.name);
        }
    }
    for (auto& entry : ck.params.entries) read_array(in, entry.node->value, path);
    if (has_opt) {
        ck.opt->m.reserve(ck.params.entries.size());
        ck.opt->v.reserve(ck.params.entries.size());
        for (const auto& e : ck.params.entries) {
            ck.opt->m.push_back(Array::zeros_like(e.node->value));
        }
        for (const auto& e : ck.params.entries) {
            ck.opt->v.push_back(Array::zeros_like(e.node->value));
        }
        for (auto& a : ck.opt->m) read_array(in, a, path);
        for (auto& a : ck.opt->v) read_array(in, a, path);
    }
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0) {
        throw DataError("checkpoint " + path + ": trailing bytes after data section");
    }
    return ck;
}

}  // namespace bidc
