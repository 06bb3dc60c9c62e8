// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "metapoint/checkpoint.hpp"
#include "metapoint/episodes.hpp"
#include "metapoint/losses.hpp"
#include "metapoint/model.hpp"
#include "metapoint/optimizer.hpp"

namespace metapoint {

/// Seed of the training episode drawn at a given (0-based) step. Episodes
/// depend only on (run seed, step), so resumed runs see the same stream.
[[nodiscard]] std::uint64_t training_episode_seed(std::uint64_t run_seed, long long step);

struct StepLog {
    long long step = 0;  // 1-based count of completed steps
    LossReport losses;
    int class_id = 0;
};

struct TrainHooks {
    std::function<void(const StepLog&)> on_step;
    /// Called every checkpoint_every steps and after the final step.
    std::function<void(long long step)> on_checkpoint;
};

/// Episodic trainer over a fixed set of classes.
class Trainer {
public:
    Trainer(MetaPointModel& model, const Dataset& dataset, std::vector<int> class_ids);

    /// Runs steps [completed, until). Returns the per-step logs.
    std::vector<StepLog> run(long long until, const TrainHooks& hooks = {});

    /// Loss of the first episode of `step` without updating anything.
    [[nodiscard]] LossReport probe(long long step) const;

    [[nodiscard]] long long completed() const { return completed_; }
    [[nodiscard]] Adam& optimizer() { return optimizer_; }
    [[nodiscard]] Checkpoint checkpoint() const;
    void resume(const Checkpoint& checkpoint);

private:
    [[nodiscard]] Episode episode_at(long long step) const;

    MetaPointModel& model_;
    const Dataset& dataset_;
    std::vector<int> class_ids_;
    Adam optimizer_;
    long long completed_ = 0;
};

}  // namespace metapoint
