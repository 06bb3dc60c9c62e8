// SPDX-License-Identifier: Apache-2.0
#include "metapoint/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "metapoint/geometry.hpp"

namespace metapoint::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

void require(bool ok, const char* op, const std::string& what) {
    if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), op,
            "shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

// Creates the output node; wires parents and backward only when some input
// needs a gradient and recording is enabled.
std::shared_ptr<Node> make_output(int rows, int cols, std::initializer_list<const Var*> inputs) {
    auto out = std::make_shared<Node>();
    out->rows = rows;
    out->cols = cols;
    out->value.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    if (!g_grad_enabled) return out;
    for (const Var* in : inputs) {
        if (in->defined() && in->requires_grad()) out->requires_grad = true;
    }
    if (out->requires_grad) {
        for (const Var* in : inputs) out->parents.push_back(in->shared());
    }
    return out;
}

std::shared_ptr<Node> make_output(int rows, int cols, std::span<const Var> inputs) {
    auto out = std::make_shared<Node>();
    out->rows = rows;
    out->cols = cols;
    out->value.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    if (!g_grad_enabled) return out;
    for (const Var& in : inputs) {
        if (in.requires_grad()) out->requires_grad = true;
    }
    if (out->requires_grad) {
        for (const Var& in : inputs) out->parents.push_back(in.shared());
    }
    return out;
}

inline bool wants(Node* n) { return n->requires_grad; }

ConstMapMat cmap(const Node& n) { return {n.value.data(), n.rows, n.cols}; }

}  // namespace

Var Var::constant(int rows, int cols, std::vector<double> data) {
    if (data.size() != static_cast<std::size_t>(rows) * cols) {
        throw std::invalid_argument("Var::constant: data size does not match shape");
    }
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(data);
    return Var(std::move(n));
}

Var Var::zeros(int rows, int cols) {
    return constant(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0));
}

Var Var::parameter(int rows, int cols, std::vector<double> data) {
    Var v = constant(rows, cols, std::move(data));
    v.node_->requires_grad = true;
    return v;
}

std::span<const double> Var::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Var::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
    require(loss.rows() == 1 && loss.cols() == 1, "backward", "loss must be 1x1");
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
    visited.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (n->backward_fn) n->ensure_grad();
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward_fn) continue;
        for (auto& p : n->parents) {
            if (p->requires_grad) p->ensure_grad();
        }
        n->backward_fn(*n);
        // Interior gradients are not needed after propagation.
        if (n != loss.node()) std::vector<double>().swap(n->grad);
    }
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    auto out = make_output(a.rows(), a.cols(), {&a, &b});
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.value()[i] + b.value()[i];
    if (out->requires_grad) {
        out->backward_fn = [](Node& self) {
            for (auto& p : self.parents) {
                if (!wants(p.get())) continue;
                for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
            }
        };
    }
    return Var(out);
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    auto out = make_output(a.rows(), a.cols(), {&a, &b});
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.value()[i] - b.value()[i];
    if (out->requires_grad) {
        out->backward_fn = [](Node& self) {
            Node* pa = self.parents[0].get();
            Node* pb = self.parents[1].get();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (wants(pa)) pa->grad[i] += self.grad[i];
                if (wants(pb)) pb->grad[i] -= self.grad[i];
            }
        };
    }
    return Var(out);
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    auto out = make_output(a.rows(), a.cols(), {&a, &b});
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.value()[i] * b.value()[i];
    if (out->requires_grad) {
        out->backward_fn = [](Node& self) {
            Node* pa = self.parents[0].get();
            Node* pb = self.parents[1].get();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (wants(pa)) pa->grad[i] += self.grad[i] * pb->value[i];
                if (wants(pb)) pb->grad[i] += self.grad[i] * pa->value[i];
            }
        };
    }
    return Var(out);
}

Var scale(const Var& a, double s) {
    auto out = make_output(a.rows(), a.cols(), {&a});
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.value()[i] * s;
    if (out->requires_grad) {
        out->backward_fn = [s](Node& self) {
            Node* p = self.parents[0].get();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * s;
        };
    }
    return Var(out);
}

Var add_scalar(const Var& a, double s) {
    auto out = make_output(a.rows(), a.cols(), {&a});
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.value()[i] + s;
    if (out->requires_grad) {
        out->backward_fn = [](Node& self) {
            Node* p = self.parents[0].get();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        };
    }
    return Var(out);
}

Var add_row(const Var& a, const Var& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "add_row", "row must be 1 x cols");
    auto out = make_output(a.rows(), a.cols(), {&a, &row});
    const int c = a.cols();
    for (int r = 0; r < a.rows(); ++r) {
        for (int j = 0; j < c; ++j) out->value[r * c + j] = a.at(r, j) + row.value()[j];
    }
    if (out->requires_grad) {
        out->backward_fn = [c](Node& self) {
            Node* pa = self.parents[0].get();
            Node* pr = self.parents[1].get();
            for (int r = 0; r < self.rows; ++r) {
                for (int j = 0; j < c; ++j) {
                    const double g = self.grad[r * c + j];
                    if (wants(pa)) pa->grad[r * c + j] += g;
                    if (wants(pr)) pr->grad[j] += g;
                }
            }
        };
    }
    return Var(out);
}

Var relu(const Var& a) {
    auto out = make_output(a.rows(), a.cols(), {&a});
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = std::max(a.value()[i], 0.0);
    if (out->requires_grad) {
        out->backward_fn = [](Node& self) {
            Node* p = self.parents[0].get();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (p->value[i] > 0.0) p->grad[i] += self.grad[i];
            }
        };
    }
    return Var(out);
}

Var leaky_relu(const Var& a, double slope) {
    auto out = make_output(a.rows(), a.cols(), {&a});
    for (std::size_t i = 0; i < out->value.size(); ++i) {
        const double x = a.value()[i];
        out->value[i] = x > 0.0 ? x : slope * x;
    }
    if (out->requires_grad) {
        out->backward_fn = [slope](Node& self) {
            Node* p = self.parents[0].get();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                p->grad[i] += p->value[i] > 0.0 ? self.grad[i] : slope * self.grad[i];
            }
        };
    }
    return Var(out);
}

Var sigmoid(const Var& a) {
    auto out = make_output(a.rows(), a.cols(), {&a});
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = metapoint::sigmoid(a.value()[i]);
    if (out->requires_grad) {
        out->backward_fn = [](Node& self) {
            Node* p = self.parents[0].get();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double s = self.value[i];
                p->grad[i] += self.grad[i] * s * (1.0 - s);
            }
        };
    }
    return Var(out);
}

Var abs(const Var& a) {
    auto out = make_output(a.rows(), a.cols(), {&a});
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = std::fabs(a.value()[i]);
    if (out->requires_grad) {
        out->backward_fn = [](Node& self) {
            Node* p = self.parents[0].get();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double v = p->value[i];
                if (v > 0.0) p->grad[i] += self.grad[i];
                else if (v < 0.0) p->grad[i] -= self.grad[i];
            }
        };
    }
    return Var(out);
}

Var logit(const Var& a, double eps) {
    auto out = make_output(a.rows(), a.cols(), {&a});
    for (std::size_t i = 0; i < out->value.size(); ++i) {
        const double c = std::clamp(a.value()[i], eps, 1.0 - eps);
        out->value[i] = std::log(c / (1.0 - c));
    }
    if (out->requires_grad) {
        out->backward_fn = [eps](Node& self) {
            Node* p = self.parents[0].get();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double v = p->value[i];
                if (v > eps && v < 1.0 - eps) p->grad[i] += self.grad[i] / (v * (1.0 - v));
            }
        };
    }
    return Var(out);
}

Var sum(const Var& a) {
    auto out = make_output(1, 1, {&a});
    double s = 0.0;
    for (double v : a.value()) s += v;
    out->value[0] = s;
    if (out->requires_grad) {
        out->backward_fn = [](Node& self) {
            Node* p = self.parents[0].get();
            for (double& g : p->grad) g += self.grad[0];
        };
    }
    return Var(out);
}

Var mean(const Var& a) {
    require(a.size() > 0, "mean", "empty input");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var sum_cols(const Var& a) {
    auto out = make_output(a.rows(), 1, {&a});
    const int c = a.cols();
    for (int r = 0; r < a.rows(); ++r) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += a.at(r, j);
        out->value[r] = s;
    }
    if (out->requires_grad) {
        out->backward_fn = [c](Node& self) {
            Node* p = self.parents[0].get();
            for (int r = 0; r < self.rows; ++r) {
                for (int j = 0; j < c; ++j) p->grad[r * c + j] += self.grad[r];
            }
        };
    }
    return Var(out);
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
    require(a.cols() == b.rows(), "matmul", "inner dimensions differ");
    auto out = make_output(a.rows(), b.cols(), {&a, &b});
    MapMat(out->value.data(), out->rows, out->cols).noalias() = cmap(*a.node()) * cmap(*b.node());
    if (out->requires_grad) {
        out->backward_fn = [](Node& self) {
            Node* pa = self.parents[0].get();
            Node* pb = self.parents[1].get();
            ConstMapMat g(self.grad.data(), self.rows, self.cols);
            if (wants(pa)) MapMat(pa->grad.data(), pa->rows, pa->cols).noalias() += g * cmap(*pb).transpose();
            if (wants(pb)) MapMat(pb->grad.data(), pb->rows, pb->cols).noalias() += cmap(*pa).transpose() * g;
        };
    }
    return Var(out);
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    require(x.cols() == weight.rows(), "linear", "input width differs from weight rows");
    require(bias.rows() == 1 && bias.cols() == weight.cols(), "linear", "bias must be 1 x out");
    auto out = make_output(x.rows(), weight.cols(), {&x, &weight, &bias});
    MapMat o(out->value.data(), out->rows, out->cols);
    o.noalias() = cmap(*x.node()) * cmap(*weight.node());
    o.rowwise() += cmap(*bias.node()).row(0);
    if (out->requires_grad) {
        out->backward_fn = [](Node& self) {
            Node* px = self.parents[0].get();
            Node* pw = self.parents[1].get();
            Node* pb = self.parents[2].get();
            ConstMapMat g(self.grad.data(), self.rows, self.cols);
            if (wants(px)) MapMat(px->grad.data(), px->rows, px->cols).noalias() += g * cmap(*pw).transpose();
            if (wants(pw)) MapMat(pw->grad.data(), pw->rows, pw->cols).noalias() += cmap(*px).transpose() * g;
            if (wants(pb)) MapMat(pb->grad.data(), 1, pb->cols) += g.colwise().sum();
        };
    }
    return Var(out);
}

// ---------------------------------------------------------------------------
// Structural

Var concat_cols(std::span<const Var> parts) {
    require(!parts.empty(), "concat_cols", "no inputs");
    const int rows = parts[0].rows();
    int cols = 0;
    for (const auto& p : parts) {
        require(p.rows() == rows, "concat_cols", "row counts differ");
        cols += p.cols();
    }
    auto out = make_output(rows, cols, parts);
    std::vector<int> offsets;
    int off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        for (int r = 0; r < rows; ++r) {
            std::copy_n(p.value().data() + static_cast<std::size_t>(r) * p.cols(), p.cols(),
                        out->value.data() + static_cast<std::size_t>(r) * cols + off);
        }
        off += p.cols();
    }
    if (out->requires_grad) {
        out->backward_fn = [offsets = std::move(offsets)](Node& self) {
            for (std::size_t k = 0; k < self.parents.size(); ++k) {
                Node* p = self.parents[k].get();
                if (!wants(p)) continue;
                for (int r = 0; r < self.rows; ++r) {
                    for (int j = 0; j < p->cols; ++j) {
                        p->grad[static_cast<std::size_t>(r) * p->cols + j] +=
                            self.grad[static_cast<std::size_t>(r) * self.cols + offsets[k] + j];
                    }
                }
            }
        };
    }
    return Var(out);
}

Var slice_cols(const Var& a, int start, int count) {
    require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols", "range out of bounds");
    auto out = make_output(a.rows(), count, {&a});
    for (int r = 0; r < a.rows(); ++r) {
        for (int j = 0; j < count; ++j) out->value[r * count + j] = a.at(r, start + j);
    }
    if (out->requires_grad) {
        out->backward_fn = [start](Node& self) {
            Node* p = self.parents[0].get();
            for (int r = 0; r < self.rows; ++r) {
                for (int j = 0; j < self.cols; ++j) p->grad[r * p->cols + start + j] += self.grad[r * self.cols + j];
            }
        };
    }
    return Var(out);
}

Var gather_rows(const Var& a, std::span<const int> rows) {
    for (int r : rows) require(r >= 0 && r < a.rows(), "gather_rows", "row index out of range");
    auto out = make_output(static_cast<int>(rows.size()), a.cols(), {&a});
    const int c = a.cols();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(a.value().data() + static_cast<std::size_t>(rows[i]) * c, c, out->value.data() + i * c);
    }
    if (out->requires_grad) {
        out->backward_fn = [idx = std::vector<int>(rows.begin(), rows.end()), c](Node& self) {
            Node* p = self.parents[0].get();
            for (std::size_t i = 0; i < idx.size(); ++i) {
                for (int j = 0; j < c; ++j) p->grad[static_cast<std::size_t>(idx[i]) * c + j] += self.grad[i * c + j];
            }
        };
    }
    return Var(out);
}

// ---------------------------------------------------------------------------
// Normalization

Var softmax_groups(const Var& a, int group) {
    require(group > 0 && a.cols() % group == 0, "softmax_groups", "cols not divisible by group");
    auto out = make_output(a.rows(), a.cols(), {&a});
    const std::size_t n = a.size();
    for (std::size_t base = 0; base < n; base += group) {
        double mx = a.value()[base];
        for (int j = 1; j < group; ++j) mx = std::max(mx, a.value()[base + j]);
        double z = 0.0;
        for (int j = 0; j < group; ++j) z += (out->value[base + j] = std::exp(a.value()[base + j] - mx));
        for (int j = 0; j < group; ++j) out->value[base + j] /= z;
    }
    if (out->requires_grad) {
        out->backward_fn = [group](Node& self) {
            Node* p = self.parents[0].get();
            for (std::size_t base = 0; base < self.value.size(); base += group) {
                double dot = 0.0;
                for (int j = 0; j < group; ++j) dot += self.grad[base + j] * self.value[base + j];
                for (int j = 0; j < group; ++j) {
                    p->grad[base + j] += self.value[base + j] * (self.grad[base + j] - dot);
                }
            }
        };
    }
    return Var(out);
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const int c = x.cols();
    require(gamma.rows() == 1 && gamma.cols() == c && beta.rows() == 1 && beta.cols() == c, "layer_norm",
            "gamma/beta must be 1 x cols");
    auto out = make_output(x.rows(), c, {&x, &gamma, &beta});
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(static_cast<std::size_t>(x.rows()));
    for (int r = 0; r < x.rows(); ++r) {
        const double* row = x.value().data() + static_cast<std::size_t>(r) * c;
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += row[j];
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= c;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (int j = 0; j < c; ++j) {
            const double h = (row[j] - mu) * is;
            xhat[r * c + j] = h;
            out->value[r * c + j] = h * gamma.value()[j] + beta.value()[j];
        }
    }
    if (out->requires_grad) {
        out->backward_fn = [c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            Node* px = self.parents[0].get();
            Node* pg = self.parents[1].get();
            Node* pb = self.parents[2].get();
            for (int r = 0; r < self.rows; ++r) {
                double sum_g = 0.0;
                double sum_gh = 0.0;
                for (int j = 0; j < c; ++j) {
                    const std::size_t i = static_cast<std::size_t>(r) * c + j;
                    const double g = self.grad[i];
                    if (wants(pg)) pg->grad[j] += g * xhat[i];
                    if (wants(pb)) pb->grad[j] += g;
                    const double dh = g * pg->value[j];
                    sum_g += dh;
                    sum_gh += dh * xhat[i];
                }
                if (!wants(px)) continue;
                for (int j = 0; j < c; ++j) {
                    const std::size_t i = static_cast<std::size_t>(r) * c + j;
                    const double dh = self.grad[i] * pg->value[j];
                    px->grad[i] += inv_std[r] * (dh - sum_g / c - xhat[i] * sum_gh / c);
                }
            }
        };
    }
    return Var(out);
}

Var bce_mean(const Var& prob, std::span<const double> targets, double eps) {
    require(prob.size() == targets.size(), "bce_mean", "target count differs from prediction count");
    require(prob.size() > 0, "bce_mean", "empty input");
    auto out = make_output(1, 1, {&prob});
    const double n = static_cast<double>(prob.size());
    double total = 0.0;
    for (std::size_t i = 0; i < prob.size(); ++i) {
        const double p = std::clamp(prob.value()[i], eps, 1.0 - eps);
        total -= targets[i] * std::log(p) + (1.0 - targets[i]) * std::log(1.0 - p);
    }
    out->value[0] = total / n;
    if (out->requires_grad) {
        out->backward_fn = [t = std::vector<double>(targets.begin(), targets.end()), eps, n](Node& self) {
            Node* p = self.parents[0].get();
            for (std::size_t i = 0; i < t.size(); ++i) {
                const double v = p->value[i];
                if (v <= eps || v >= 1.0 - eps) continue;
                p->grad[i] += self.grad[0] * (-t[i] / v + (1.0 - t[i]) / (1.0 - v)) / n;
            }
        };
    }
    return Var(out);
}

// ---------------------------------------------------------------------------
// Convolution

Var conv2d(const Var& x, int height, int width, const Var& weight, const Var& bias, int kernel, int stride,
           int pad) {
    require(x.rows() == height * width, "conv2d", "input rows differ from height*width");
    const int cin = x.cols();
    const int cout = weight.cols();
    require(weight.rows() == kernel * kernel * cin, "conv2d", "weight rows must be k*k*C_in");
    require(bias.rows() == 1 && bias.cols() == cout, "conv2d", "bias must be 1 x C_out");
    const int ho = (height + 2 * pad - kernel) / stride + 1;
    const int wo = (width + 2 * pad - kernel) / stride + 1;
    const int patch = kernel * kernel * cin;

    // im2col: column matrix (ho*wo) x patch; -1 marks zero padding.
    std::vector<int> src(static_cast<std::size_t>(ho) * wo * kernel * kernel, -1);
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            for (int ky = 0; ky < kernel; ++ky) {
                for (int kx = 0; kx < kernel; ++kx) {
                    const int iy = oy * stride - pad + ky;
                    const int ix = ox * stride - pad + kx;
                    if (iy >= 0 && iy < height && ix >= 0 && ix < width) {
                        src[((static_cast<std::size_t>(oy) * wo + ox) * kernel + ky) * kernel + kx] = iy * width + ix;
                    }
                }
            }
        }
    }
    auto cols_buf = std::make_shared<std::vector<double>>(static_cast<std::size_t>(ho) * wo * patch, 0.0);
    const std::size_t taps = static_cast<std::size_t>(kernel) * kernel;
    for (std::size_t o = 0; o < static_cast<std::size_t>(ho) * wo; ++o) {
        for (std::size_t t = 0; t < taps; ++t) {
            const int s = src[o * taps + t];
            if (s < 0) continue;
            std::copy_n(x.value().data() + static_cast<std::size_t>(s) * cin, cin,
                        cols_buf->data() + o * patch + t * cin);
        }
    }

    auto out = make_output(ho * wo, cout, {&x, &weight, &bias});
    MapMat o(out->value.data(), ho * wo, cout);
    o.noalias() = ConstMapMat(cols_buf->data(), ho * wo, patch) * cmap(*weight.node());
    o.rowwise() += cmap(*bias.node()).row(0);
    if (out->requires_grad) {
        out->backward_fn = [cols_buf, src = std::move(src), ho, wo, patch, cin, taps](Node& self) {
            Node* px = self.parents[0].get();
            Node* pw = self.parents[1].get();
            Node* pb = self.parents[2].get();
            ConstMapMat g(self.grad.data(), self.rows, self.cols);
            ConstMapMat colm(cols_buf->data(), ho * wo, patch);
            if (wants(pw)) MapMat(pw->grad.data(), pw->rows, pw->cols).noalias() += colm.transpose() * g;
            if (wants(pb)) MapMat(pb->grad.data(), 1, pb->cols) += g.colwise().sum();
            if (wants(px)) {
                RowMat dcol = g * cmap(*pw).transpose();
                for (std::size_t oi = 0; oi < static_cast<std::size_t>(ho) * wo; ++oi) {
                    for (std::size_t t = 0; t < taps; ++t) {
                        const int s = src[oi * taps + t];
                        if (s < 0) continue;
                        double* dst = px->grad.data() + static_cast<std::size_t>(s) * cin;
                        const double* d = dcol.data() + oi * patch + t * cin;
                        for (int c = 0; c < cin; ++c) dst[c] += d[c];
                    }
                }
            }
        };
    }
    return Var(out);
}

// ---------------------------------------------------------------------------
// Attention

Var multi_head_attention(const Var& q, const Var& k, const Var& v, int heads, std::vector<double>* weights_out) {
    require_same_shape(q, k, "multi_head_attention");
    require_same_shape(q, v, "multi_head_attention");
    const int n = q.rows();
    const int d = q.cols();
    require(heads > 0 && d % heads == 0, "multi_head_attention", "dim not divisible by heads");
    const int dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    auto attn = std::make_shared<std::vector<double>>(static_cast<std::size_t>(heads) * n * n);
    auto out = make_output(n, d, {&q, &k, &v});
    ConstMapMat qm = cmap(*q.node());
    ConstMapMat km = cmap(*k.node());
    ConstMapMat vm = cmap(*v.node());
    MapMat om(out->value.data(), n, d);
    for (int h = 0; h < heads; ++h) {
        MapMat a(attn->data() + static_cast<std::size_t>(h) * n * n, n, n);
        a.noalias() = qm.middleCols(h * dh, dh) * km.middleCols(h * dh, dh).transpose();
        a *= inv_sqrt;
        for (int i = 0; i < n; ++i) {
            const double mx = a.row(i).maxCoeff();
            a.row(i) = (a.row(i).array() - mx).exp();
            a.row(i) /= a.row(i).sum();
        }
        om.middleCols(h * dh, dh).noalias() = a * vm.middleCols(h * dh, dh);
    }
    if (weights_out != nullptr) *weights_out = *attn;
    if (out->requires_grad) {
        out->backward_fn = [attn, heads, dh, n, inv_sqrt](Node& self) {
            Node* pq = self.parents[0].get();
            Node* pk = self.parents[1].get();
            Node* pv = self.parents[2].get();
            ConstMapMat g(self.grad.data(), n, self.cols);
            ConstMapMat qm2 = cmap(*pq);
            ConstMapMat km2 = cmap(*pk);
            ConstMapMat vm2 = cmap(*pv);
            for (int h = 0; h < heads; ++h) {
                ConstMapMat a(attn->data() + static_cast<std::size_t>(h) * n * n, n, n);
                const auto gh = g.middleCols(h * dh, dh);
                if (wants(pv)) MapMat(pv->grad.data(), n, self.cols).middleCols(h * dh, dh).noalias() += a.transpose() * gh;
                RowMat da = gh * vm2.middleCols(h * dh, dh).transpose();
                // softmax backward, then scale
                RowMat ds(n, n);
                for (int i = 0; i < n; ++i) {
                    const double dot = (da.row(i).array() * a.row(i).array()).sum();
                    ds.row(i) = a.row(i).array() * (da.row(i).array() - dot) * inv_sqrt;
                }
                if (wants(pq)) MapMat(pq->grad.data(), n, self.cols).middleCols(h * dh, dh).noalias() += ds * km2.middleCols(h * dh, dh);
                if (wants(pk)) MapMat(pk->grad.data(), n, self.cols).middleCols(h * dh, dh).noalias() += ds.transpose() * qm2.middleCols(h * dh, dh);
            }
        };
    }
    return Var(out);
}

Var deformable_sample(std::span<const SampledLevel> levels, const Var& locations, const Var& weights, int heads,
                      int points) {
    require(!levels.empty(), "deformable_sample", "no levels");
    const int nlev = static_cast<int>(levels.size());
    const int d = levels[0].values.cols();
    require(heads > 0 && d % heads == 0, "deformable_sample", "dim not divisible by heads");
    for (const auto& lv : levels) {
        require(lv.values.cols() == d, "deformable_sample", "levels differ in channel width");
        require(lv.values.rows() == lv.height * lv.width, "deformable_sample", "level rows differ from H*W");
    }
    const int slots = heads * nlev * points;
    const int nq = locations.rows();
    require(locations.cols() == 2 * slots, "deformable_sample", "locations must be Q x heads*levels*points*2");
    require(weights.rows() == nq && weights.cols() == slots, "deformable_sample", "weights must be Q x slots");
    const int dh = d / heads;

    std::vector<Var> inputs;
    inputs.reserve(levels.size() + 2);
    inputs.push_back(locations);
    inputs.push_back(weights);
    for (const auto& lv : levels) inputs.push_back(lv.values);
    auto out = make_output(nq, d, std::span<const Var>(inputs));

    std::vector<std::pair<int, int>> shapes;
    for (const auto& lv : levels) shapes.emplace_back(lv.height, lv.width);

    auto taps = std::make_shared<std::vector<BilinearTaps>>(static_cast<std::size_t>(nq) * slots);
    for (int qi = 0; qi < nq; ++qi) {
        double* orow = out->value.data() + static_cast<std::size_t>(qi) * d;
        for (int h = 0; h < heads; ++h) {
            for (int l = 0; l < nlev; ++l) {
                const double* vals = levels[l].values.value().data();
                for (int s = 0; s < points; ++s) {
                    const int slot = (h * nlev + l) * points + s;
                    const double x = locations.at(qi, 2 * slot);
                    const double y = locations.at(qi, 2 * slot + 1);
                    const double w = weights.at(qi, slot);
                    auto& tp = (*taps)[static_cast<std::size_t>(qi) * slots + slot];
                    tp = bilinear_taps(shapes[l].first, shapes[l].second, x, y);
                    for (int t = 0; t < 4; ++t) {
                        const double tw = w * tp.weight[t];
                        const double* src = vals + static_cast<std::size_t>(tp.index[t]) * d + h * dh;
                        for (int c = 0; c < dh; ++c) orow[h * dh + c] += tw * src[c];
                    }
                }
            }
        }
    }
    if (out->requires_grad) {
        out->backward_fn = [taps, heads, nlev, points, slots, dh, d](Node& self) {
            Node* ploc = self.parents[0].get();
            Node* pw = self.parents[1].get();
            for (int qi = 0; qi < self.rows; ++qi) {
                const double* g = self.grad.data() + static_cast<std::size_t>(qi) * d;
                for (int h = 0; h < heads; ++h) {
                    for (int l = 0; l < nlev; ++l) {
                        Node* pv = self.parents[2 + l].get();
                        const double* vals = pv->value.data();
                        for (int s = 0; s < points; ++s) {
                            const int slot = (h * nlev + l) * points + s;
                            const auto& tp = (*taps)[static_cast<std::size_t>(qi) * slots + slot];
                            const double w = pw->value[static_cast<std::size_t>(qi) * slots + slot];
                            double dw = 0.0;
                            double dx = 0.0;
                            double dy = 0.0;
                            for (int t = 0; t < 4; ++t) {
                                const std::size_t off = static_cast<std::size_t>(tp.index[t]) * d + h * dh;
                                double dot = 0.0;
                                for (int c = 0; c < dh; ++c) dot += g[h * dh + c] * vals[off + c];
                                dw += tp.weight[t] * dot;
                                dx += tp.dweight_dx[t] * dot;
                                dy += tp.dweight_dy[t] * dot;
                                if (wants(pv)) {
                                    const double tw = w * tp.weight[t];
                                    for (int c = 0; c < dh; ++c) pv->grad[off + c] += tw * g[h * dh + c];
                                }
                            }
                            if (wants(pw)) pw->grad[static_cast<std::size_t>(qi) * slots + slot] += dw;
                            if (wants(ploc)) {
                                ploc->grad[static_cast<std::size_t>(qi) * 2 * slots + 2 * slot] += w * dx;
                                ploc->grad[static_cast<std::size_t>(qi) * 2 * slots + 2 * slot + 1] += w * dy;
                            }
                        }
                    }
                }
            }
        };
    }
    return Var(out);
}

Var sine_position_encoding(const Var& points, int dim, double temperature) {
    require(points.cols() == 2, "sine_position_encoding", "points must be Q x 2");
    require(dim > 0 && dim % 4 == 0, "sine_position_encoding", "dim must be a multiple of 4");
    const int nf = dim / 4;
    std::vector<double> freqs(static_cast<std::size_t>(nf));
    for (int f = 0; f < nf; ++f) {
        freqs[f] = 2.0 * std::numbers::pi / std::pow(temperature, static_cast<double>(f) / nf);
    }
    auto out = make_output(points.rows(), dim, {&points});
    // layout per row: [sin(x f), cos(x f), sin(y f), cos(y f)] blocks of nf
    for (int r = 0; r < points.rows(); ++r) {
        for (int axis = 0; axis < 2; ++axis) {
            const double v = points.at(r, axis);
            for (int f = 0; f < nf; ++f) {
                out->value[r * dim + axis * 2 * nf + f] = std::sin(v * freqs[f]);
                out->value[r * dim + axis * 2 * nf + nf + f] = std::cos(v * freqs[f]);
            }
        }
    }
    if (out->requires_grad) {
        out->backward_fn = [freqs = std::move(freqs), nf, dim](Node& self) {
            Node* p = self.parents[0].get();
            for (int r = 0; r < self.rows; ++r) {
                for (int axis = 0; axis < 2; ++axis) {
                    double acc = 0.0;
                    for (int f = 0; f < nf; ++f) {
                        const double s = self.value[r * dim + axis * 2 * nf + f];
                        const double c = self.value[r * dim + axis * 2 * nf + nf + f];
                        acc += self.grad[r * dim + axis * 2 * nf + f] * c * freqs[f];
                        acc -= self.grad[r * dim + axis * 2 * nf + nf + f] * s * freqs[f];
                    }
                    p->grad[r * 2 + axis] += acc;
                }
            }
        };
    }
    return Var(out);
}

}  // namespace metapoint::ag
