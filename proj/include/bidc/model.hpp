#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "bidc/autograd.hpp"
#include "bidc/gradcheck.hpp"
#include "bidc/rng.hpp"

namespace bidc {

enum class Mode { BiDC, D2C, COnly };

std::string mode_name(Mode mode);
Mode mode_from_name(const std::string& name);

struct ModelConfig {
    std::size_t vocab_size = 202;
    std::size_t d_h = 64;
    std::size_t d_ff = 128;
    std::size_t n_heads = 1;
    std::size_t det_depth = 2;
    std::size_t cor_depth = 4;
    std::size_t interaction_layers = 2;
    std::size_t max_len = 64;
    double lambda = 0.8;
    Mode mode = Mode::BiDC;
    std::optional<double> gate_override_alpha;
    std::optional<double> gate_override_beta;

    void validate() const;  // throws ConfigError
    bool has_detection_branch() const { return mode != Mode::COnly; }
    /// Alpha override actually applied in forward; D2C pins it to 0.
    std::optional<double> effective_alpha_override() const;
};

/// All trainable weights, in a fixed registration order. Initialization draws
/// from a single seeded stream, so two configs with identical parameter sets
/// and seeds hold bitwise-identical values.
struct ModelParams {
    std::vector<NamedParam> entries;
    std::unordered_map<std::string, std::size_t> index;

    NodePtr add(const std::string& name, Array value);
    const NodePtr& at(const std::string& name) const;
    std::size_t total_elements() const;
    void zero_grads();
    std::vector<Array> snapshot_values() const;
    void restore_values(const std::vector<Array>& values);
};

ModelParams init_params(const ModelConfig& config, std::uint64_t seed);
/// Closed-form parameter census; tested against init_params allocation.
std::size_t expected_param_count(const ModelConfig& config);

/// A batch is a flat row-per-position layout: sentence s owns rows
/// [offsets[s], offsets[s+1]). Pad positions carry mask 0 and are excluded
/// from attention keys and from the loss.
struct Batch {
    std::vector<int> token_ids;
    std::vector<int> positions;
    std::vector<std::uint8_t> mask;
    std::vector<int> det_labels;   // empty when unlabeled
    std::vector<int> cor_targets;  // empty when unlabeled
    std::vector<std::size_t> offsets;  // size = sentences + 1

    std::size_t sentences() const { return offsets.empty() ? 0 : offsets.size() - 1; }
    std::size_t total_rows() const { return token_ids.size(); }
    std::size_t sentence_len(std::size_t s) const { return offsets[s + 1] - offsets[s]; }
};

struct ForwardTrace {
    NodePtr det_logits;  // [T x 2]; null in C-only mode
    NodePtr cor_logits;  // [T x V]
    std::vector<NodePtr> alpha;  // per interaction layer, [T x d_h]
    std::vector<NodePtr> beta;
    NodePtr h_det;  // final task states [T x d_h]; h_det null in C-only mode
    NodePtr h_cor;
};

struct LossParts {
    NodePtr total;
    NodePtr correction;
    NodePtr detection;  // null in C-only mode
};

struct SentencePrediction {
    std::vector<int> det_labels;
    std::vector<int> corrected;
};

/// Scaled dot-product attention over one sentence block; keys with mask 0 are
/// excluded from the softmax. d_k = cols / n_heads.
NodePtr scaled_attention(const NodePtr& q, const NodePtr& k, const NodePtr& v,
                         const std::vector<std::uint8_t>& key_mask, std::size_t n_heads);

struct GatedMergeResult {
    NodePtr state;  // LN(g * update + (1-g) * prev)
    NodePtr gate;
};

/// g = sigmoid(W [update, prev] + b), or a constant when overridden.
GatedMergeResult gated_merge(const NodePtr& update, const NodePtr& prev, const NodePtr& gate_w,
                             const NodePtr& gate_b, const NodePtr& ln_gain,
                             const NodePtr& ln_bias, std::optional<double> override_value);

struct FusedStates {
    NodePtr det;
    NodePtr cor;
};

/// Shared fusion FFN over the concatenated task states; both outputs add the
/// same fused features and go through the same LN parameters.
FusedStates fuse_ffn(const NodePtr& det_state, const NodePtr& cor_state, const NodePtr& w1,
                     const NodePtr& b1, const NodePtr& w2, const NodePtr& b2,
                     const NodePtr& ln_gain, const NodePtr& ln_bias);

class Model {
public:
    Model(ModelConfig config, std::uint64_t seed);
    Model(ModelConfig config, ModelParams params);

    const ModelConfig& config() const { return config_; }
    ModelParams& params() { return params_; }
    const ModelParams& params() const { return params_; }

    ForwardTrace forward(const Batch& batch) const;
    /// lambda * L_cor + (1 - lambda) * L_det over unmasked positions;
    /// C-only mode returns L_cor regardless of lambda.
    LossParts loss(const ForwardTrace& trace, const Batch& batch, double lambda) const;

    /// Argmax decode for one sentence. Correction ties break toward the input
    /// token id, detection ties toward label 0.
    SentencePrediction predict(const std::vector<int>& ids) const;
    std::vector<SentencePrediction> predict_batch(const Batch& batch) const;

private:
    NodePtr encode(const NodePtr& x, const Batch& batch, bool detection_branch) const;
    NodePtr attention(const NodePtr& q, const NodePtr& k, const NodePtr& v,
                      const Batch& batch) const;
    NodePtr encoder_layer(const NodePtr& x, const Batch& batch, const std::string& prefix) const;
    NodePtr cross_attend(const NodePtr& query_state, const NodePtr& kv_state, const Batch& batch,
                         const std::string& prefix) const;
    ModelConfig config_;
    ModelParams params_;
};

Batch make_batch(const std::vector<std::vector<int>>& sentences,
                 std::size_t pad_id, bool pad_to_max);

struct ModelCheckSpec {
    std::size_t seq_len = 5;
    std::size_t sentences = 3;  // multiple probe sentences keep gradients away
                                // from the finite-difference noise floor
    double lambda = 0.8;
    double eps = 1e-5;
    double tol = 1e-4;
};

/// Finite-difference check of the full loss over every parameter of a model
/// built from `config` with `seed`; the probe sentence and labels are drawn
/// from the same seed.
GradCheckReport check_model_gradients(const ModelConfig& config, std::uint64_t seed,
                                      const ModelCheckSpec& spec = {});

}  // namespace bidc
