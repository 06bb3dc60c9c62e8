// SPDX-License-Identifier: Apache-2.0
#include "metapoint/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metapoint::nn {

ag::Var& ParameterStore::create(const std::string& name, int rows, int cols, std::vector<double> init) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    order_.push_back(name);
    return index_.emplace(name, ag::Var::parameter(rows, cols, std::move(init))).first->second;
}

ag::Var& ParameterStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

const ag::Var& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : index_) n += v.size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& [_, v] : index_) v.zero_grad();
}

std::vector<double> initialize(Init kind, int rows, int cols, std::mt19937_64& rng) {
    const auto n = static_cast<std::size_t>(rows) * cols;
    std::vector<double> out(n, 0.0);
    switch (kind) {
        case Init::Zeros:
            break;
        case Init::Ones:
            std::fill(out.begin(), out.end(), 1.0);
            break;
        case Init::XavierUniform: {
            const double a = std::sqrt(6.0 / (rows + cols));
            std::uniform_real_distribution<double> dist(-a, a);
            for (auto& v : out) v = dist(rng);
            break;
        }
        case Init::KaimingNormal: {
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / rows));
            for (auto& v : out) v = dist(rng);
            break;
        }
        case Init::Normal002: {
            std::normal_distribution<double> dist(0.0, 0.02);
            for (auto& v : out) v = dist(rng);
            break;
        }
    }
    return out;
}

Linear::Linear(ParameterStore& store, const std::string& name, int in, int out, std::mt19937_64& rng,
               Init weight_init)
    : weight_(store.create(name + ".weight", in, out, initialize(weight_init, in, out, rng))),
      bias_(store.create(name + ".bias", 1, out, initialize(Init::Zeros, 1, out, rng))) {}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, int dim) {
    std::mt19937_64 unused(0);
    gamma_ = store.create(name + ".gamma", 1, dim, initialize(Init::Ones, 1, dim, unused));
    beta_ = store.create(name + ".beta", 1, dim, initialize(Init::Zeros, 1, dim, unused));
}

void fill_zero(ag::Var& v) {
    auto vals = v.mutable_value();
    std::fill(vals.begin(), vals.end(), 0.0);
}

}  // namespace metapoint::nn
