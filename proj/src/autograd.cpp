#include "bidc/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <unordered_set>

#include "bidc/errors.hpp"

namespace bidc {

namespace {

NodePtr make_node(Array value, std::vector<NodePtr> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>(std::move(value));
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    return n;
}

void require_same_shape(const char* op, const NodePtr& a, const NodePtr& b) {
    if (!a->value.same_shape(b->value)) {
        throw ShapeError(std::string(op) + ": operand shapes disagree, " + a->value.shape_str() +
                         " vs " + b->value.shape_str());
    }
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

NodePtr leaf(Array value) {
    return std::make_shared<Node>(std::move(value));
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    Array out = matmul_values(a->value, b->value);  // shape check inside
    NodePtr pa = a, pb = b;
    return make_node(std::move(out), {a, b}, [pa, pb](Node& n) {
        matmul_nt_acc(n.grad, pb->value, pa->grad);  // dA += dC * B^T
        matmul_tn_acc(pa->value, n.grad, pb->grad);  // dB += A^T * dC
    });
}

NodePtr transpose(const NodePtr& a) {
    NodePtr pa = a;
    return make_node(transpose_values(a->value), {a}, [pa](Node& n) {
        Array t = transpose_values(n.grad);
        for (std::size_t i = 0; i < t.size(); ++i) pa->grad[i] += t[i];
    });
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
    require_same_shape("add", a, b);
    Array out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
    NodePtr pa = a, pb = b;
    return make_node(std::move(out), {a, b}, [pa, pb](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            pa->grad[i] += n.grad[i];
            pb->grad[i] += n.grad[i];
        }
    });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
    require_same_shape("sub", a, b);
    Array out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
    NodePtr pa = a, pb = b;
    return make_node(std::move(out), {a, b}, [pa, pb](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            pa->grad[i] += n.grad[i];
            pb->grad[i] -= n.grad[i];
        }
    });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
    require_same_shape("mul", a, b);
    Array out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
    NodePtr pa = a, pb = b;
    return make_node(std::move(out), {a, b}, [pa, pb](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            pa->grad[i] += n.grad[i] * pb->value[i];
            pb->grad[i] += n.grad[i] * pa->value[i];
        }
    });
}

NodePtr scale(const NodePtr& a, double factor, double shift) {
    Array out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * out[i] + shift;
    NodePtr pa = a;
    return make_node(std::move(out), {a}, [pa, factor](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += factor * n.grad[i];
    });
}

namespace {
thread_local std::vector<std::uint8_t>* g_relu_sign_trace = nullptr;
}

void set_relu_sign_trace(std::vector<std::uint8_t>* sink) {
    g_relu_sign_trace = sink;
}

NodePtr relu(const NodePtr& a) {
    Array out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    if (g_relu_sign_trace) {
        for (std::size_t i = 0; i < a->value.size(); ++i) {
            g_relu_sign_trace->push_back(a->value[i] > 0.0 ? 1 : 0);
        }
    }
    NodePtr pa = a;
    return make_node(std::move(out), {a}, [pa](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (pa->value[i] > 0.0) pa->grad[i] += n.grad[i];
        }
    });
}

NodePtr sigmoid(const NodePtr& a) {
    Array out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(out[i]);
    NodePtr pa = a;
    return make_node(std::move(out), {a}, [pa](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double s = n.value[i];
            pa->grad[i] += n.grad[i] * s * (1.0 - s);
        }
    });
}

NodePtr add_rowvec(const NodePtr& a, const NodePtr& v) {
    const std::size_t m = a->value.rows(), c = a->value.cols();
    if (v->value.rank() != 1 || v->value.size() != c) {
        throw ShapeError("add_rowvec: " + a->value.shape_str() + " + " + v->value.shape_str());
    }
    Array out = a->value;
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] += v->value[j];
    }
    NodePtr pa = a, pv = v;
    return make_node(std::move(out), {a, v}, [pa, pv, m, c](Node& n) {
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < c; ++j) {
                pa->grad[r * c + j] += n.grad[r * c + j];
                pv->grad[j] += n.grad[r * c + j];
            }
        }
    });
}

namespace {

NodePtr softmax_rows_impl(const NodePtr& a, const std::vector<std::uint8_t>* key_mask) {
    const std::size_t m = a->value.rows(), c = a->value.cols();
    if (key_mask && key_mask->size() != c) {
        throw ShapeError("softmax_rows: mask length " + std::to_string(key_mask->size()) +
                         " vs " + a->value.shape_str());
    }
    Array out({m, c});
    for (std::size_t r = 0; r < m; ++r) {
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j < c; ++j) {
            if (key_mask && !(*key_mask)[j]) continue;
            mx = std::max(mx, a->value.at(r, j));
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (key_mask && !(*key_mask)[j]) {
                out.at(r, j) = 0.0;
                continue;
            }
            const double e = std::exp(a->value.at(r, j) - mx);
            out.at(r, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < c; ++j) out.at(r, j) /= denom;
    }
    NodePtr pa = a;
    return make_node(std::move(out), {a}, [pa, m, c](Node& n) {
        for (std::size_t r = 0; r < m; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += n.grad.at(r, j) * n.value.at(r, j);
            for (std::size_t j = 0; j < c; ++j) {
                pa->grad.at(r, j) += n.value.at(r, j) * (n.grad.at(r, j) - dot);
            }
        }
    });
}

}  // namespace

NodePtr softmax_rows(const NodePtr& a) { return softmax_rows_impl(a, nullptr); }

NodePtr softmax_rows(const NodePtr& a, const std::vector<std::uint8_t>& key_mask) {
    bool any = false;
    for (auto f : key_mask) any = any || f;
    if (!any) throw DataError("softmax_rows: every key is masked");
    return softmax_rows_impl(a, &key_mask);
}

NodePtr layer_norm(const NodePtr& a, const NodePtr& gain, const NodePtr& bias, double eps) {
    const std::size_t m = a->value.rows(), c = a->value.cols();
    if (c < 2) {
        throw ConfigError("layer_norm: needs at least 2 features, got " + a->value.shape_str());
    }
    if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
    if (gain->value.size() != c || bias->value.size() != c) {
        throw ShapeError("layer_norm: gain " + gain->value.shape_str() + " / bias " +
                         bias->value.shape_str() + " vs input " + a->value.shape_str());
    }
    Array out({m, c});
    Array xhat({m, c});
    std::vector<double> inv_std(m);
    for (std::size_t r = 0; r < m; ++r) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += a->value.at(r, j);
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = a->value.at(r, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            const double xh = (a->value.at(r, j) - mean) * inv_std[r];
            xhat.at(r, j) = xh;
            out.at(r, j) = gain->value[j] * xh + bias->value[j];
        }
    }
    NodePtr pa = a, pg = gain, pb = bias;
    auto xhat_ptr = std::make_shared<Array>(std::move(xhat));
    auto istd_ptr = std::make_shared<std::vector<double>>(std::move(inv_std));
    return make_node(std::move(out), {a, gain, bias}, [pa, pg, pb, xhat_ptr, istd_ptr, m,
                                                       c](Node& n) {
        for (std::size_t r = 0; r < m; ++r) {
            double mean_w = 0.0, mean_wx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                const double w = n.grad.at(r, j) * pg->value[j];
                mean_w += w;
                mean_wx += w * xhat_ptr->at(r, j);
            }
            mean_w /= static_cast<double>(c);
            mean_wx /= static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j) {
                const double w = n.grad.at(r, j) * pg->value[j];
                pa->grad.at(r, j) +=
                    (*istd_ptr)[r] * (w - mean_w - xhat_ptr->at(r, j) * mean_wx);
                pg->grad[j] += n.grad.at(r, j) * xhat_ptr->at(r, j);
                pb->grad[j] += n.grad.at(r, j);
            }
        }
    });
}

NodePtr concat_cols(const NodePtr& a, const NodePtr& b) {
    const std::size_t m = a->value.rows();
    if (b->value.rows() != m) {
        throw ShapeError("concat_cols: row counts disagree, " + a->value.shape_str() + " vs " +
                         b->value.shape_str());
    }
    const std::size_t ca = a->value.cols(), cb = b->value.cols();
    Array out({m, ca + cb});
    for (std::size_t r = 0; r < m; ++r) {
        std::memcpy(&out.at(r, 0), &a->value.data()[r * ca], ca * sizeof(double));
        std::memcpy(&out.at(r, ca), &b->value.data()[r * cb], cb * sizeof(double));
    }
    NodePtr pa = a, pb = b;
    return make_node(std::move(out), {a, b}, [pa, pb, m, ca, cb](Node& n) {
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < ca; ++j) pa->grad[r * ca + j] += n.grad.at(r, j);
            for (std::size_t j = 0; j < cb; ++j) pb->grad[r * cb + j] += n.grad.at(r, ca + j);
        }
    });
}

NodePtr slice_cols(const NodePtr& a, std::size_t start, std::size_t count) {
    const std::size_t m = a->value.rows(), c = a->value.cols();
    if (start + count > c) {
        throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + a->value.shape_str());
    }
    Array out({m, count});
    for (std::size_t r = 0; r < m; ++r) {
        std::memcpy(&out.at(r, 0), &a->value.data()[r * c + start], count * sizeof(double));
    }
    NodePtr pa = a;
    return make_node(std::move(out), {a}, [pa, start, count, m, c](Node& n) {
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < count; ++j) {
                pa->grad[r * c + start + j] += n.grad.at(r, j);
            }
        }
    });
}

NodePtr slice_rows(const NodePtr& a, std::size_t start, std::size_t count) {
    const std::size_t m = a->value.rows(), c = a->value.cols();
    if (start + count > m) {
        throw ShapeError("slice_rows: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + a->value.shape_str());
    }
    Array out({count, c});
    std::memcpy(out.data(), a->value.data() + start * c, count * c * sizeof(double));
    NodePtr pa = a;
    return make_node(std::move(out), {a}, [pa, start, count, c](Node& n) {
        for (std::size_t i = 0; i < count * c; ++i) pa->grad[start * c + i] += n.grad[i];
    });
}

NodePtr concat_rows(const std::vector<NodePtr>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no operands");
    const std::size_t c = parts.front()->value.cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        if (p->value.cols() != c) {
            throw ShapeError("concat_rows: column counts disagree, " +
                             parts.front()->value.shape_str() + " vs " + p->value.shape_str());
        }
        m += p->value.rows();
    }
    Array out({m, c});
    std::size_t row = 0;
    for (const auto& p : parts) {
        std::memcpy(out.data() + row * c, p->value.data(), p->value.size() * sizeof(double));
        row += p->value.rows();
    }
    std::vector<NodePtr> parents = parts;
    return make_node(std::move(out), parts, [parents, c](Node& n) {
        std::size_t row = 0;
        for (const auto& p : parents) {
            const std::size_t sz = p->value.size();
            for (std::size_t i = 0; i < sz; ++i) p->grad[i] += n.grad[row * c + i];
            row += p->value.rows();
        }
    });
}

NodePtr embedding_lookup(const NodePtr& table, const std::vector<int>& ids) {
    const std::size_t v = table->value.rows(), d = table->value.cols();
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw DataError("embedding_lookup: id " + std::to_string(id) + " outside [0, " +
                            std::to_string(v) + ")");
        }
    }
    Array out({ids.size(), d});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        std::memcpy(&out.at(r, 0), &table->value.data()[static_cast<std::size_t>(ids[r]) * d],
                    d * sizeof(double));
    }
    NodePtr pt = table;
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    return make_node(std::move(out), {table}, [pt, ids_copy, d](Node& n) {
        for (std::size_t r = 0; r < ids_copy->size(); ++r) {
            double* dst = &pt->grad[static_cast<std::size_t>((*ids_copy)[r]) * d];
            for (std::size_t j = 0; j < d; ++j) dst[j] += n.grad.at(r, j);
        }
    });
}

NodePtr cross_entropy(const NodePtr& logits, const std::vector<int>& targets,
                      const std::vector<std::uint8_t>& mask) {
    const std::size_t m = logits->value.rows(), c = logits->value.cols();
    if (targets.size() != m || mask.size() != m) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                         std::to_string(mask.size()) + " mask flags vs logits " +
                         logits->value.shape_str());
    }
    std::size_t active = 0;
    for (std::size_t r = 0; r < m; ++r) {
        if (!mask[r]) continue;
        ++active;
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= c) {
            throw DataError("cross_entropy: target " + std::to_string(targets[r]) +
                            " outside [0, " + std::to_string(c) + ") at row " + std::to_string(r));
        }
    }
    if (active == 0) throw DataError("cross_entropy: every position is masked");

    // Per-row log-sum-exp with max shift; keep softmax rows for the backward pass.
    auto probs = std::make_shared<Array>(Array({m, c}));
    double total = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        if (!mask[r]) continue;
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, logits->value.at(r, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(logits->value.at(r, j) - mx);
            probs->at(r, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < c; ++j) probs->at(r, j) /= denom;
        total += mx + std::log(denom) - logits->value.at(r, static_cast<std::size_t>(targets[r]));
    }
    const double inv_n = 1.0 / static_cast<double>(active);

    NodePtr pl = logits;
    auto targets_copy = std::make_shared<std::vector<int>>(targets);
    auto mask_copy = std::make_shared<std::vector<std::uint8_t>>(mask);
    return make_node(Array::scalar(total * inv_n), {logits},
                     [pl, probs, targets_copy, mask_copy, inv_n, m, c](Node& n) {
                         const double g = n.grad[0] * inv_n;
                         for (std::size_t r = 0; r < m; ++r) {
                             if (!(*mask_copy)[r]) continue;
                             for (std::size_t j = 0; j < c; ++j) {
                                 pl->grad.at(r, j) += g * probs->at(r, j);
                             }
                             pl->grad.at(r, static_cast<std::size_t>((*targets_copy)[r])) -= g;
                         }
                     });
}

NodePtr sum(const NodePtr& a) {
    double total = 0.0;
    for (std::size_t i = 0; i < a->value.size(); ++i) total += a->value[i];
    NodePtr pa = a;
    return make_node(Array::scalar(total), {a}, [pa](Node& n) {
        for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += n.grad[0];
    });
}

void backward(const NodePtr& root) {
    if (!root || root->value.size() != 1) {
        throw NumericError("backward: root must be a scalar node");
    }
    // Iterative post-order DFS; each node enters `order` exactly once.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_parent < top.node->parents.size()) {
            Node* parent = top.node->parents[top.next_parent++].get();
            if (visited.insert(parent).second) {
                stack.push_back({parent, 0});
            }
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop(**it);
    }
}

}  // namespace bidc
