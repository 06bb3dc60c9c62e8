// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "metapoint/nn.hpp"

namespace metapoint {

/// Adam over every array of a parameter store, in store order.
class Adam {
public:
    struct Moments {
        std::vector<double> first;
        std::vector<double> second;
    };

    explicit Adam(const nn::ParameterStore& store, double learning_rate = 1e-3, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);

    /// Applies one update from the accumulated gradients, then clears them.
    void step(nn::ParameterStore& store);

    [[nodiscard]] long long steps_taken() const { return t_; }
    [[nodiscard]] const std::vector<Moments>& moments() const { return moments_; }
    void restore(long long steps_taken, std::vector<Moments> moments);

private:
    double lr_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<Moments> moments_;
};

}  // namespace metapoint
