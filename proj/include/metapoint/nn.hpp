// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "metapoint/autograd.hpp"

namespace metapoint::nn {

/// Named, ordered collection of trainable arrays. Names are dot paths such
/// as "decoder_meta.layer0.self_attn.q.weight".
class ParameterStore {
public:
    ag::Var& create(const std::string& name, int rows, int cols, std::vector<double> init);
    [[nodiscard]] ag::Var& get(const std::string& name);
    [[nodiscard]] const ag::Var& get(const std::string& name) const;
    [[nodiscard]] bool contains(const std::string& name) const { return index_.contains(name); }

    [[nodiscard]] const std::vector<std::string>& names() const { return order_; }
    [[nodiscard]] std::size_t count() const { return order_.size(); }
    [[nodiscard]] std::size_t scalar_count() const;

    void zero_grad();

private:
    std::vector<std::string> order_;
    std::map<std::string, ag::Var> index_;
};

enum class Init { Zeros, Ones, XavierUniform, KaimingNormal, Normal002 };

/// Deterministic initializer for a rows x cols array.
std::vector<double> initialize(Init kind, int rows, int cols, std::mt19937_64& rng);

class Linear {
public:
    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, int in, int out, std::mt19937_64& rng,
           Init weight_init = Init::XavierUniform);

    [[nodiscard]] ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight_, bias_); }
    [[nodiscard]] int in_features() const { return weight_.rows(); }
    [[nodiscard]] int out_features() const { return weight_.cols(); }
    [[nodiscard]] ag::Var& weight() { return weight_; }
    [[nodiscard]] ag::Var& bias() { return bias_; }

private:
    ag::Var weight_;
    ag::Var bias_;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParameterStore& store, const std::string& name, int dim);

    [[nodiscard]] ag::Var operator()(const ag::Var& x) const { return ag::layer_norm(x, gamma_, beta_); }

private:
    ag::Var gamma_;
    ag::Var beta_;
};

/// Sets every entry of a parameter to zero in place.
void fill_zero(ag::Var& v);

}  // namespace metapoint::nn
