// SPDX-License-Identifier: Apache-2.0
#include "metapoint/trainer.hpp"

#include <stdexcept>

namespace metapoint {

std::uint64_t training_episode_seed(std::uint64_t run_seed, long long step) {
    std::uint64_t z = run_seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(step) + 0x7F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Trainer::Trainer(MetaPointModel& model, const Dataset& dataset, std::vector<int> class_ids)
    : model_(model),
      dataset_(dataset),
      class_ids_(std::move(class_ids)),
      optimizer_(model.parameters(), model.config().learning_rate) {
    if (class_ids_.empty()) throw std::invalid_argument("Trainer: no training classes");
    for (int c : class_ids_) {
        if (dataset_.class_record(c).keypoint_count > model_.config().num_meta_points) {
            throw std::invalid_argument("Trainer: class " + std::to_string(c) + " has more keypoints than meta-points");
        }
    }
}

Episode Trainer::episode_at(long long step) const {
    const std::uint64_t base = training_episode_seed(model_.config().seed, step);
    // Redraw the rare episode whose supports share no visible keypoint.
    for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
        Episode ep = sample_episode(dataset_, class_ids_, model_.config().shots, base + attempt);
        const EpisodeView v = view_of(ep);
        if (!active_keypoints(v.supports).empty()) return ep;
    }
    throw std::runtime_error("Trainer: could not draw an episode with visible keypoints");
}

LossReport Trainer::probe(long long step) const {
    ag::NoGradGuard guard;
    const EpisodeView v = view_of(episode_at(step * model_.config().batch_size));
    LossReport report;
    (void)model_.loss(model_.forward(v), v.query, &report);
    return report;
}

std::vector<StepLog> Trainer::run(long long until, const TrainHooks& hooks) {
    std::vector<StepLog> logs;
    const int every = model_.config().checkpoint_every;
    const int batch = model_.config().batch_size;
    while (completed_ < until) {
        StepLog log;
        for (int b = 0; b < batch; ++b) {
            const Episode ep = episode_at(completed_ * batch + b);
            const EpisodeView v = view_of(ep);
            LossReport report;
            const ForwardResult r = model_.forward(v);
            const ag::Var loss = model_.loss(r, v.query, &report);
            ag::backward(batch == 1 ? loss : ag::scale(loss, 1.0 / batch));
            if (b == 0) {
                log.class_id = ep.class_id;
                log.losses = report;
            } else {
                log.losses.reg += report.reg;
                log.losses.vis += report.vis;
                log.losses.full += report.full;
            }
        }
        if (batch > 1) {
            log.losses.reg /= batch;
            log.losses.vis /= batch;
            log.losses.full /= batch;
        }
        optimizer_.step(model_.parameters());
        ++completed_;
        log.step = completed_;
        if (hooks.on_step) hooks.on_step(log);
        logs.push_back(std::move(log));
        if (hooks.on_checkpoint && ((every > 0 && completed_ % every == 0) || completed_ == until)) {
            hooks.on_checkpoint(completed_);
        }
    }
    return logs;
}

Checkpoint Trainer::checkpoint() const {
    return snapshot(model_.config(), completed_, model_.parameters(), &optimizer_);
}

void Trainer::resume(const Checkpoint& checkpoint) {
    restore_parameters(checkpoint, model_.parameters());
    restore_optimizer(checkpoint, optimizer_);
    completed_ = checkpoint.step;
}

}  // namespace metapoint
