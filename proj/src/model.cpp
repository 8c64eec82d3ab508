#include "bidc/model.hpp"

#include <algorithm>
#include <cmath>

#include "bidc/errors.hpp"

namespace bidc {

std::string mode_name(Mode mode) {
    switch (mode) {
        case Mode::BiDC: return "bidc";
        case Mode::D2C: return "d2c";
        case Mode::COnly: return "c-only";
    }
    return "bidc";
}

Mode mode_from_name(const std::string& name) {
    if (name == "bidc") return Mode::BiDC;
    if (name == "d2c") return Mode::D2C;
    if (name == "c-only") return Mode::COnly;
    throw ConfigError("unknown mode '" + name + "' (expected bidc, d2c or c-only)");
}

void ModelConfig::validate() const {
    if (vocab_size < 3) throw ConfigError("vocab_size must leave room for pad/unk plus content");
    if (d_h < 2) throw ConfigError("d_h must be at least 2");
    if (n_heads == 0 || d_h % n_heads != 0) {
        throw ConfigError("d_h (" + std::to_string(d_h) + ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
    }
    if (d_ff == 0) throw ConfigError("d_ff must be positive");
    if (max_len == 0) throw ConfigError("max_len must be positive");
    if (cor_depth == 0) throw ConfigError("correction encoder depth must be at least 1");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1]");
    for (const auto& g : {gate_override_alpha, gate_override_beta}) {
        if (g && !(*g >= 0.0 && *g <= 1.0)) {
            throw ConfigError("gate override must lie in [0,1]");
        }
    }
    if (mode == Mode::COnly) {
        if (gate_override_alpha || gate_override_beta) {
            throw ConfigError("gate overrides have no meaning in c-only mode");
        }
        return;
    }
    if (det_depth == 0) throw ConfigError("detection encoder depth must be at least 1");
    if (interaction_layers == 0) {
        throw ConfigError("bidc/d2c modes need at least one interaction layer");
    }
    if (mode == Mode::D2C) {
        if (gate_override_alpha && *gate_override_alpha != 0.0) {
            throw ConfigError("d2c mode fixes the alpha gate to 0.0");
        }
        if (gate_override_beta) {
            throw ConfigError("d2c mode leaves the beta gate learned");
        }
    }
}

std::optional<double> ModelConfig::effective_alpha_override() const {
    if (mode == Mode::D2C) return 0.0;
    return gate_override_alpha;
}

NodePtr ModelParams::add(const std::string& name, Array value) {
    auto node = leaf(std::move(value));
    index.emplace(name, entries.size());
    entries.push_back({name, node});
    return node;
}

const NodePtr& ModelParams::at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("unknown parameter '" + name + "'");
    return entries[it->second].node;
}

std::size_t ModelParams::total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.node->value.size();
    return n;
}

void ModelParams::zero_grads() {
    for (auto& e : entries) e.node->zero_grad();
}

std::vector<Array> ModelParams::snapshot_values() const {
    std::vector<Array> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.node->value);
    return out;
}

void ModelParams::restore_values(const std::vector<Array>& values) {
    if (values.size() != entries.size()) {
        throw ConfigError("parameter snapshot size mismatch");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!values[i].same_shape(entries[i].node->value)) {
            throw ConfigError("parameter snapshot shape mismatch at " + entries[i].name);
        }
        entries[i].node->value = values[i];
    }
}

namespace {

Array xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Array w({fan_in, fan_out});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-limit, limit);
    return w;
}

Array normal_table(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Array t({rows, cols});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = stddev * rng.normal();
    return t;
}

void add_linear(ModelParams& p, const std::string& prefix, std::size_t in, std::size_t out,
                Rng& rng) {
    p.add(prefix + ".w", xavier_uniform(in, out, rng));
    p.add(prefix + ".b", Array({out}));
}

void add_layer_norm(ModelParams& p, const std::string& prefix, std::size_t width) {
    p.add(prefix + ".gain", Array::full({width}, 1.0));
    p.add(prefix + ".bias", Array({width}));
}

void add_encoder_stack(ModelParams& p, const std::string& prefix, std::size_t depth,
                       const ModelConfig& c, Rng& rng) {
    for (std::size_t l = 0; l < depth; ++l) {
        const std::string lp = prefix + "." + std::to_string(l);
        add_linear(p, lp + ".attn.q", c.d_h, c.d_h, rng);
        add_linear(p, lp + ".attn.k", c.d_h, c.d_h, rng);
        add_linear(p, lp + ".attn.v", c.d_h, c.d_h, rng);
        add_linear(p, lp + ".attn.o", c.d_h, c.d_h, rng);
        add_layer_norm(p, lp + ".ln1", c.d_h);
        add_linear(p, lp + ".ffn.1", c.d_h, c.d_ff, rng);
        add_linear(p, lp + ".ffn.2", c.d_ff, c.d_h, rng);
        add_layer_norm(p, lp + ".ln2", c.d_h);
    }
    add_layer_norm(p, prefix + ".final_ln", c.d_h);
}

}  // namespace

ModelParams init_params(const ModelConfig& c, std::uint64_t seed) {
    c.validate();
    Rng rng(mix_seed(seed, 0x70a7a35ULL));
    ModelParams p;
    p.add("embedding", normal_table(c.vocab_size, c.d_h, 0.02, rng));
    p.add("pos_embedding", normal_table(c.max_len, c.d_h, 0.02, rng));
    add_layer_norm(p, "embed_ln", c.d_h);
    if (c.has_detection_branch()) {
        add_encoder_stack(p, "enc_det", c.det_depth, c, rng);
    }
    add_encoder_stack(p, "enc_cor", c.cor_depth, c, rng);
    if (c.has_detection_branch()) {
        for (std::size_t i = 0; i < c.interaction_layers; ++i) {
            const std::string ip = "inter." + std::to_string(i);
            p.add(ip + ".cross_det.q", xavier_uniform(c.d_h, c.d_h, rng));
            p.add(ip + ".cross_det.k", xavier_uniform(c.d_h, c.d_h, rng));
            p.add(ip + ".cross_det.v", xavier_uniform(c.d_h, c.d_h, rng));
            p.add(ip + ".cross_cor.q", xavier_uniform(c.d_h, c.d_h, rng));
            p.add(ip + ".cross_cor.k", xavier_uniform(c.d_h, c.d_h, rng));
            p.add(ip + ".cross_cor.v", xavier_uniform(c.d_h, c.d_h, rng));
            add_linear(p, ip + ".gate_det", 2 * c.d_h, c.d_h, rng);
            add_linear(p, ip + ".gate_cor", 2 * c.d_h, c.d_h, rng);
            add_layer_norm(p, ip + ".ln_gate_det", c.d_h);
            add_layer_norm(p, ip + ".ln_gate_cor", c.d_h);
            add_linear(p, ip + ".fuse.1", 2 * c.d_h, c.d_ff, rng);
            add_linear(p, ip + ".fuse.2", c.d_ff, c.d_h, rng);
            add_layer_norm(p, ip + ".ln_out", c.d_h);
        }
        add_linear(p, "head_det", c.d_h, 2, rng);
    }
    add_linear(p, "head_cor", c.d_h, c.vocab_size, rng);
    return p;
}

std::size_t expected_param_count(const ModelConfig& c) {
    const std::size_t linear = c.d_h * c.d_h + c.d_h;
    const std::size_t ln = 2 * c.d_h;
    const std::size_t ffn = c.d_h * c.d_ff + c.d_ff + c.d_ff * c.d_h + c.d_h;
    const std::size_t enc_layer = 4 * linear + 2 * ln + ffn;
    std::size_t n = c.vocab_size * c.d_h + c.max_len * c.d_h;  // embeddings
    n += ln;  // embedding LN, shared by both encoders
    n += c.cor_depth * enc_layer + ln;  // stack plus its final LN
    n += c.d_h * c.vocab_size + c.vocab_size;  // correction head
    if (!c.has_detection_branch()) return n;
    n += c.det_depth * enc_layer + ln;
    const std::size_t inter_layer = 6 * c.d_h * c.d_h                       // cross q/k/v both sides
                                    + 2 * (2 * c.d_h * c.d_h + c.d_h)      // gates
                                    + 3 * ln                               // gate LNs + shared out LN
                                    + 2 * c.d_h * c.d_ff + c.d_ff + c.d_ff * c.d_h + c.d_h;  // fusion
    n += c.interaction_layers * inter_layer;
    n += c.d_h * 2 + 2;  // detection head
    return n;
}

Batch make_batch(const std::vector<std::vector<int>>& sentences, std::size_t pad_id,
                 bool pad_to_max) {
    Batch b;
    std::size_t max_len = 0;
    for (const auto& s : sentences) max_len = std::max(max_len, s.size());
    b.offsets.push_back(0);
    for (const auto& s : sentences) {
        if (s.empty()) throw DataError("batch: empty sentence");
        const std::size_t padded = pad_to_max ? max_len : s.size();
        for (std::size_t i = 0; i < padded; ++i) {
            const bool real = i < s.size();
            b.token_ids.push_back(real ? s[i] : static_cast<int>(pad_id));
            b.positions.push_back(static_cast<int>(i));
            b.mask.push_back(real ? 1 : 0);
        }
        b.offsets.push_back(b.token_ids.size());
    }
    return b;
}

Model::Model(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(init_params(config_, seed)) {}

Model::Model(ModelConfig config, ModelParams params)
    : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
}

NodePtr scaled_attention(const NodePtr& q, const NodePtr& k, const NodePtr& v,
                         const std::vector<std::uint8_t>& key_mask, std::size_t n_heads) {
    const std::size_t width = q->value.cols();
    if (n_heads == 0 || width % n_heads != 0) {
        throw ConfigError("attention width " + std::to_string(width) +
                          " not divisible by head count " + std::to_string(n_heads));
    }
    const std::size_t d_k = width / n_heads;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(d_k));
    NodePtr merged;
    for (std::size_t h = 0; h < n_heads; ++h) {
        NodePtr qh = n_heads == 1 ? q : slice_cols(q, h * d_k, d_k);
        NodePtr kh = n_heads == 1 ? k : slice_cols(k, h * d_k, d_k);
        NodePtr vh = n_heads == 1 ? v : slice_cols(v, h * d_k, d_k);
        NodePtr probs = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt_dk), key_mask);
        NodePtr out = matmul(probs, vh);
        merged = merged ? concat_cols(merged, out) : out;
    }
    return merged;
}

GatedMergeResult gated_merge(const NodePtr& update, const NodePtr& prev, const NodePtr& gate_w,
                             const NodePtr& gate_b, const NodePtr& ln_gain,
                             const NodePtr& ln_bias, std::optional<double> override_value) {
    GatedMergeResult r;
    if (override_value) {
        if (!(*override_value >= 0.0 && *override_value <= 1.0)) {
            throw ConfigError("gate override must lie in [0,1]");
        }
        r.gate = leaf(Array::full(update->value.shape(), *override_value));
    } else {
        NodePtr both = concat_cols(update, prev);
        r.gate = sigmoid(add_rowvec(matmul(both, gate_w), gate_b));
    }
    NodePtr mixed = add(mul(r.gate, update), mul(scale(r.gate, -1.0, 1.0), prev));
    r.state = layer_norm(mixed, ln_gain, ln_bias);
    return r;
}

FusedStates fuse_ffn(const NodePtr& det_state, const NodePtr& cor_state, const NodePtr& w1,
                     const NodePtr& b1, const NodePtr& w2, const NodePtr& b2,
                     const NodePtr& ln_gain, const NodePtr& ln_bias) {
    NodePtr joint = concat_cols(det_state, cor_state);
    NodePtr fused = add_rowvec(matmul(relu(add_rowvec(matmul(joint, w1), b1)), w2), b2);
    FusedStates out;
    out.det = layer_norm(add(det_state, fused), ln_gain, ln_bias);
    out.cor = layer_norm(add(cor_state, fused), ln_gain, ln_bias);
    return out;
}

NodePtr Model::attention(const NodePtr& q, const NodePtr& k, const NodePtr& v,
                         const Batch& batch) const {
    std::vector<NodePtr> blocks;
    blocks.reserve(batch.sentences());
    for (std::size_t s = 0; s < batch.sentences(); ++s) {
        const std::size_t start = batch.offsets[s];
        const std::size_t len = batch.sentence_len(s);
        std::vector<std::uint8_t> key_mask(batch.mask.begin() + static_cast<long>(start),
                                           batch.mask.begin() + static_cast<long>(start + len));
        blocks.push_back(scaled_attention(slice_rows(q, start, len), slice_rows(k, start, len),
                                          slice_rows(v, start, len), key_mask, config_.n_heads));
    }
    return blocks.size() == 1 ? blocks.front() : concat_rows(blocks);
}

NodePtr Model::encoder_layer(const NodePtr& x, const Batch& batch,
                             const std::string& prefix) const {
    // pre-LN residual blocks; trains at a constant learning rate without
    // the warmup a post-LN stack would need
    const auto& p = params_;
    NodePtr normed = layer_norm(x, p.at(prefix + ".ln1.gain"), p.at(prefix + ".ln1.bias"));
    NodePtr q = add_rowvec(matmul(normed, p.at(prefix + ".attn.q.w")), p.at(prefix + ".attn.q.b"));
    NodePtr k = add_rowvec(matmul(normed, p.at(prefix + ".attn.k.w")), p.at(prefix + ".attn.k.b"));
    NodePtr v = add_rowvec(matmul(normed, p.at(prefix + ".attn.v.w")), p.at(prefix + ".attn.v.b"));
    NodePtr attn = attention(q, k, v, batch);
    NodePtr proj = add_rowvec(matmul(attn, p.at(prefix + ".attn.o.w")), p.at(prefix + ".attn.o.b"));
    NodePtr h = add(x, proj);
    NodePtr normed2 = layer_norm(h, p.at(prefix + ".ln2.gain"), p.at(prefix + ".ln2.bias"));
    NodePtr inner =
        relu(add_rowvec(matmul(normed2, p.at(prefix + ".ffn.1.w")), p.at(prefix + ".ffn.1.b")));
    NodePtr ffn = add_rowvec(matmul(inner, p.at(prefix + ".ffn.2.w")), p.at(prefix + ".ffn.2.b"));
    return add(h, ffn);
}

NodePtr Model::encode(const NodePtr& x, const Batch& batch, bool detection_branch) const {
    if (detection_branch && !config_.has_detection_branch()) {
        throw ConfigError("detection encoder absent in c-only mode");
    }
    const std::string base = detection_branch ? "enc_det" : "enc_cor";
    const std::size_t depth = detection_branch ? config_.det_depth : config_.cor_depth;
    NodePtr h = x;
    for (std::size_t l = 0; l < depth; ++l) {
        h = encoder_layer(h, batch, base + "." + std::to_string(l));
    }
    return layer_norm(h, params_.at(base + ".final_ln.gain"), params_.at(base + ".final_ln.bias"));
}

NodePtr Model::cross_attend(const NodePtr& query_state, const NodePtr& kv_state,
                            const Batch& batch, const std::string& prefix) const {
    const auto& p = params_;
    NodePtr q = matmul(query_state, p.at(prefix + ".q"));
    NodePtr k = matmul(kv_state, p.at(prefix + ".k"));
    NodePtr v = matmul(kv_state, p.at(prefix + ".v"));
    return attention(q, k, v, batch);
}

ForwardTrace Model::forward(const Batch& batch) const {
    if (batch.sentences() == 0) throw DataError("forward: empty batch");
    for (std::size_t s = 0; s < batch.sentences(); ++s) {
        if (batch.sentence_len(s) > config_.max_len) {
            throw DataError("forward: sentence of length " +
                            std::to_string(batch.sentence_len(s)) + " exceeds max_len " +
                            std::to_string(config_.max_len));
        }
    }
    const auto& p = params_;
    NodePtr x = add(embedding_lookup(p.at("embedding"), batch.token_ids),
                    embedding_lookup(p.at("pos_embedding"), batch.positions));
    // BERT-style normalization of the embedding sum, shared by both encoders;
    // raw N(0, 0.02) rows would leave first-layer attention nearly uniform.
    x = layer_norm(x, p.at("embed_ln.gain"), p.at("embed_ln.bias"));

    ForwardTrace trace;
    if (config_.mode == Mode::COnly) {
        NodePtr h = encode(x, batch, false);
        trace.h_cor = h;
        trace.cor_logits = add_rowvec(matmul(h, p.at("head_cor.w")), p.at("head_cor.b"));
        return trace;
    }

    NodePtr h_det = encode(x, batch, true);
    NodePtr h_cor = encode(x, batch, false);
    const auto alpha_override = config_.effective_alpha_override();
    for (std::size_t i = 0; i < config_.interaction_layers; ++i) {
        const std::string ip = "inter." + std::to_string(i);
        NodePtr upd_det = cross_attend(h_det, h_cor, batch, ip + ".cross_det");
        NodePtr upd_cor = cross_attend(h_cor, h_det, batch, ip + ".cross_cor");
        GatedMergeResult det_merge =
            gated_merge(upd_det, h_det, p.at(ip + ".gate_det.w"), p.at(ip + ".gate_det.b"),
                        p.at(ip + ".ln_gate_det.gain"), p.at(ip + ".ln_gate_det.bias"),
                        alpha_override);
        GatedMergeResult cor_merge =
            gated_merge(upd_cor, h_cor, p.at(ip + ".gate_cor.w"), p.at(ip + ".gate_cor.b"),
                        p.at(ip + ".ln_gate_cor.gain"), p.at(ip + ".ln_gate_cor.bias"),
                        config_.gate_override_beta);
        trace.alpha.push_back(det_merge.gate);
        trace.beta.push_back(cor_merge.gate);
        FusedStates fused =
            fuse_ffn(det_merge.state, cor_merge.state, p.at(ip + ".fuse.1.w"),
                     p.at(ip + ".fuse.1.b"), p.at(ip + ".fuse.2.w"), p.at(ip + ".fuse.2.b"),
                     p.at(ip + ".ln_out.gain"), p.at(ip + ".ln_out.bias"));
        h_det = fused.det;
        h_cor = fused.cor;
    }
    trace.h_det = h_det;
    trace.h_cor = h_cor;
    trace.det_logits = add_rowvec(matmul(h_det, p.at("head_det.w")), p.at("head_det.b"));
    trace.cor_logits = add_rowvec(matmul(h_cor, p.at("head_cor.w")), p.at("head_cor.b"));
    return trace;
}

LossParts Model::loss(const ForwardTrace& trace, const Batch& batch, double lambda) const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1]");
    LossParts parts;
    parts.correction = cross_entropy(trace.cor_logits, batch.cor_targets, batch.mask);
    if (config_.mode == Mode::COnly) {
        parts.total = parts.correction;
        return parts;
    }
    parts.detection = cross_entropy(trace.det_logits, batch.det_labels, batch.mask);
    parts.total = add(scale(parts.correction, lambda), scale(parts.detection, 1.0 - lambda));
    return parts;
}

std::vector<SentencePrediction> Model::predict_batch(const Batch& batch) const {
    ForwardTrace trace = forward(batch);
    const Array& cor = trace.cor_logits->value;
    const Array* det = trace.det_logits ? &trace.det_logits->value : nullptr;
    std::vector<SentencePrediction> out(batch.sentences());
    for (std::size_t s = 0; s < batch.sentences(); ++s) {
        SentencePrediction& pred = out[s];
        for (std::size_t r = batch.offsets[s]; r < batch.offsets[s + 1]; ++r) {
            if (!batch.mask[r]) continue;
            const int input_id = batch.token_ids[r];
            std::size_t best = 0;
            for (std::size_t j = 1; j < cor.cols(); ++j) {
                if (cor.at(r, j) > cor.at(r, best)) best = j;
            }
            if (cor.at(r, static_cast<std::size_t>(input_id)) == cor.at(r, best)) {
                best = static_cast<std::size_t>(input_id);
            }
            pred.corrected.push_back(static_cast<int>(best));
            pred.det_labels.push_back(det && det->at(r, 1) > det->at(r, 0) ? 1 : 0);
        }
    }
    return out;
}

SentencePrediction Model::predict(const std::vector<int>& ids) const {
    Batch b = make_batch({ids}, 0, false);
    return predict_batch(b).front();
}

GradCheckReport check_model_gradients(const ModelConfig& config, std::uint64_t seed,
                                      const ModelCheckSpec& spec) {
    Model model(config, seed);
    Rng rng(mix_seed(seed, 0x9c0de));
    Batch batch;
    batch.offsets.push_back(0);
    for (std::size_t s = 0; s < spec.sentences; ++s) {
        for (std::size_t i = 0; i < spec.seq_len; ++i) {
            batch.token_ids.push_back(2 + static_cast<int>(rng.below(config.vocab_size - 2)));
            batch.positions.push_back(static_cast<int>(i));
            batch.mask.push_back(1);
            batch.cor_targets.push_back(2 + static_cast<int>(rng.below(config.vocab_size - 2)));
            batch.det_labels.push_back(static_cast<int>(rng.below(2)));
        }
        batch.offsets.push_back(batch.token_ids.size());
    }
    auto f = [&]() { return model.loss(model.forward(batch), batch, spec.lambda).total; };
    return grad_check(f, model.params().entries, spec.eps, spec.tol);
}

}  // namespace bidc
