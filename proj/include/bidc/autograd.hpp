#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "bidc/array.hpp"

namespace bidc {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the reverse-mode graph. `value` is immutable while a graph
/// built on top of it is alive; `grad` is mutated only inside backward().
/// Leaves (parameters, constants) have no parents and no backprop closure;
/// their values may be updated by the owner between graph constructions.
struct Node {
    Array value;
    Array grad;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;  // pulls this->grad into parents' grads

    explicit Node(Array v) : value(std::move(v)), grad(Array::zeros_like(value)) {}

    void zero_grad() { grad.fill(0.0); }
};

NodePtr leaf(Array value);

// --- graph-building ops -----------------------------------------------------

NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr transpose(const NodePtr& a);

NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
/// factor * a + shift, elementwise.
NodePtr scale(const NodePtr& a, double factor, double shift = 0.0);
NodePtr relu(const NodePtr& a);
NodePtr sigmoid(const NodePtr& a);
/// a [m x n] plus a rank-1 vector v [n] broadcast over rows.
NodePtr add_rowvec(const NodePtr& a, const NodePtr& v);

NodePtr softmax_rows(const NodePtr& a);
/// Masked variant: key_mask has one flag per column; columns with flag 0 are
/// excluded from the max/sum entirely (probability exactly 0, no gradient).
NodePtr softmax_rows(const NodePtr& a, const std::vector<std::uint8_t>& key_mask);

NodePtr layer_norm(const NodePtr& a, const NodePtr& gain, const NodePtr& bias, double eps = 1e-5);

NodePtr concat_cols(const NodePtr& a, const NodePtr& b);
NodePtr slice_cols(const NodePtr& a, std::size_t start, std::size_t count);
NodePtr slice_rows(const NodePtr& a, std::size_t start, std::size_t count);
NodePtr concat_rows(const std::vector<NodePtr>& parts);

NodePtr embedding_lookup(const NodePtr& table, const std::vector<int>& ids);

/// Mean over unmasked rows of -log softmax(logits)[target]. Throws DataError
/// when every row is masked.
NodePtr cross_entropy(const NodePtr& logits, const std::vector<int>& targets,
                      const std::vector<std::uint8_t>& mask);

NodePtr sum(const NodePtr& a);

/// Reverse-mode sweep from a scalar root. Accumulates into every reachable
/// node's grad; visits each node exactly once in reverse topological order.
void backward(const NodePtr& root);

/// While a sink is installed (per thread), every relu evaluation appends one
/// sign flag per element. The gradient checker compares sign traces across
/// perturbed evaluations to spot kink crossings, where central differences
/// are invalid. Pass nullptr to stop recording.
void set_relu_sign_trace(std::vector<std::uint8_t>* sink);

}  // namespace bidc
