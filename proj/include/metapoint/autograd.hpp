// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value in the model is a 2-D array (rows x cols); feature
// maps are stored as (H*W) x C with the spatial shape carried alongside.

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace metapoint::ag {

struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(int rows, int cols, std::vector<double> data);
    static Var zeros(int rows, int cols);
    static Var scalar(double v) { return constant(1, 1, {v}); }
    /// Leaf that accumulates gradients across backward passes.
    static Var parameter(int rows, int cols, std::vector<double> data);

    [[nodiscard]] bool defined() const { return node_ != nullptr; }
    [[nodiscard]] int rows() const { return node_->rows; }
    [[nodiscard]] int cols() const { return node_->cols; }
    [[nodiscard]] std::size_t size() const { return node_->value.size(); }
    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }

    [[nodiscard]] std::span<const double> value() const { return node_->value; }
    [[nodiscard]] std::span<double> mutable_value() { return node_->value; }
    [[nodiscard]] double at(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * cols() + c]; }
    [[nodiscard]] double item() const { return node_->value.at(0); }

    /// Gradient buffer; zero-filled if nothing has been accumulated yet.
    [[nodiscard]] std::span<const double> grad() const;
    void zero_grad();

    [[nodiscard]] Node* node() const { return node_.get(); }
    [[nodiscard]] const std::shared_ptr<Node>& shared() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Disables graph construction on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

[[nodiscard]] bool grad_enabled();

/// Runs reverse accumulation from a 1x1 output.
void backward(const Var& loss);

// Elementwise and structural ops. Shapes are checked and mismatches throw
// std::invalid_argument.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // broadcast 1 x cols over rows
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var sigmoid(const Var& a);
Var abs(const Var& a);
/// log(p / (1 - p)) with p clamped to [eps, 1 - eps]; zero gradient where clamped.
Var logit(const Var& a, double eps);
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_cols(const Var& a);  // rows x cols -> rows x 1

Var matmul(const Var& a, const Var& b);
/// x * weight + bias, with weight (in x out) and bias (1 x out).
Var linear(const Var& x, const Var& weight, const Var& bias);

Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& a, int start, int count);
Var gather_rows(const Var& a, std::span<const int> rows);

/// Softmax over consecutive column groups of width `group` in every row.
Var softmax_groups(const Var& a, int group);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Mean binary cross-entropy of probabilities against fixed 0/1 targets,
/// with probabilities clamped to [eps, 1 - eps].
Var bce_mean(const Var& prob, std::span<const double> targets, double eps);

/// 2-D convolution on an (H*W) x C_in map. weight is (k*k*C_in) x C_out in
/// (ky, kx, c_in) order, bias is 1 x C_out. Output is (Ho*Wo) x C_out.
Var conv2d(const Var& x, int height, int width, const Var& weight, const Var& bias,
           int kernel, int stride, int pad);

/// Multi-head scaled dot-product attention. q, k, v are (Q x D), output is
/// (Q x D). If weights_out is non-null it receives heads x Q x Q softmax rows.
Var multi_head_attention(const Var& q, const Var& k, const Var& v, int heads,
                         std::vector<double>* weights_out = nullptr);

struct SampledLevel {
    Var values;  // (H*W) x D
    int height = 0;
    int width = 0;
};

/// Multi-scale deformable sampling. locations is Q x (heads*levels*points*2)
/// of absolute normalized (x, y); weights is Q x (heads*levels*points) and is
/// expected to be normalized per head. Output is Q x D with head h reading
/// channels [h*D/heads, (h+1)*D/heads).
Var deformable_sample(std::span<const SampledLevel> levels, const Var& locations,
                      const Var& weights, int heads, int points);

/// Fixed sinusoidal encoding of Q x 2 normalized points into Q x dim.
Var sine_position_encoding(const Var& points, int dim, double temperature = 10000.0);

}  // namespace metapoint::ag
