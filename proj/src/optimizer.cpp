// SPDX-License-Identifier: Apache-2.0
#include "metapoint/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace metapoint {

Adam::Adam(const nn::ParameterStore& store, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& name : store.names()) {
        const std::size_t n = store.get(name).size();
        moments_.push_back({std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
    }
}

void Adam::step(nn::ParameterStore& store) {
    if (store.count() != moments_.size()) throw std::logic_error("Adam: parameter store changed shape");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto& names = store.names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        ag::Var& p = store.get(names[i]);
        const auto g = p.grad();
        auto w = p.mutable_value();
        auto& [m, v] = moments_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
        }
    }
    store.zero_grad();
}

void Adam::restore(long long steps_taken, std::vector<Moments> moments) {
    if (moments.size() != moments_.size()) throw std::invalid_argument("Adam::restore: moment count mismatch");
    for (std::size_t i = 0; i < moments.size(); ++i) {
        if (moments[i].first.size() != moments_[i].first.size() || moments[i].second.size() != moments_[i].second.size()) {
            throw std::invalid_argument("Adam::restore: moment shape mismatch");
        }
    }
    t_ = steps_taken;
    moments_ = std::move(moments);
}

}  // namespace metapoint
