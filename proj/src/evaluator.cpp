// SPDX-License-Identifier: Apache-2.0
#include "metapoint/evaluator.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <tuple>
#include <stdexcept>

namespace metapoint {

std::string to_string(EvalMode mode) {
    switch (mode) {
        case EvalMode::MetaPoint: return "metapoint";
        case EvalMode::MetaPointPlus: return "metapoint-plus";
        case EvalMode::Grid: return "grid";
    }
    return "metapoint-plus";
}

EvalMode eval_mode_from_string(const std::string& s) {
    if (s == "metapoint") return EvalMode::MetaPoint;
    if (s == "metapoint-plus") return EvalMode::MetaPointPlus;
    if (s == "grid") return EvalMode::Grid;
    throw std::invalid_argument("unknown eval mode '" + s + "'");
}

double EvalReport::pck_at(double threshold) const {
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (std::fabs(thresholds[i] - threshold) < 1e-12) return pck_mean[i];
    }
    throw std::out_of_range("EvalReport: threshold not evaluated");
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json pck = nlohmann::json::object();
    nlohmann::json pck_std = nlohmann::json::object();
    for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
        char key[32];
        std::snprintf(key, sizeof key, "%g", r.thresholds[i]);
        pck[key] = r.pck_mean[i];
        pck_std[key] = r.pck_std[i];
    }
    return {{"config_hash", r.config_hash}, {"mode", to_string(r.mode)}, {"split", r.split},
            {"shots", r.shots},             {"episodes", r.episodes},     {"skipped", r.skipped},
            {"pck", pck},                   {"pck_std", pck_std},         {"mpck", r.mpck_mean},
            {"mpck_std", r.mpck_std}};
}

std::uint64_t eval_episode_seed(std::uint64_t seed, int index) {
    std::uint64_t z = (seed + 0x51ED270B27ULL) * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(index);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

std::vector<EvalReport> run_modes(const MetaPointModel* model, const Dataset& dataset, std::span<const int> class_ids,
                                  std::span<const EvalMode> modes, const EvalOptions& options, int grid_points) {
    if (options.episodes < 1 || options.seeds.empty()) throw std::invalid_argument("evaluate: need episodes and seeds");
    bool needs_model = false;
    for (EvalMode m : modes) needs_model = needs_model || m != EvalMode::Grid;
    if (needs_model && model == nullptr) throw std::invalid_argument("evaluate: model required for this mode");
    const int grid_m = grid_points > 0 ? grid_points : (model != nullptr ? model->config().num_meta_points : 0);
    if (grid_m <= 0) throw std::invalid_argument("evaluate: grid mode needs a point count");

    // acc[mode][seed]
    std::vector<std::vector<PckAccumulator>> acc(modes.size());
    for (auto& per_mode : acc) per_mode.assign(options.seeds.size(), PckAccumulator(options.thresholds));

    ag::NoGradGuard guard;
    for (std::size_t s = 0; s < options.seeds.size(); ++s) {
        for (int i = 0; i < options.episodes; ++i) {
            const std::uint64_t base = eval_episode_seed(options.seeds[s], i);
            EpisodeView view;
            std::vector<int> active;
            for (std::uint64_t attempt = 0; attempt < 64 && active.empty(); ++attempt) {
                view = view_of(sample_episode(dataset, class_ids, options.shots, base + attempt));
                active = active_keypoints(view.supports);
            }
            const std::size_t k = view.query.keypoints.size();
            const std::unique_ptr<bool[]> mask(new bool[k]());
            for (int a : active) mask[static_cast<std::size_t>(a)] = view.query.mask[static_cast<std::size_t>(a)];
            const std::span<const bool> mask_span(mask.get(), k);
            const double normalizer = view.query.bbox.longest_side();

            std::optional<ForwardResult> forward;
            if (needs_model && !active.empty()) forward = model->forward(view);
            for (std::size_t m = 0; m < modes.size(); ++m) {
                PointSet pred(std::vector<Point2>(k, Point2{0.5, 0.5}));
                if (!active.empty()) {
                    switch (modes[m]) {
                        case EvalMode::MetaPoint: pred = forward->metapoint_prediction(static_cast<int>(k)); break;
                        case EvalMode::MetaPointPlus: pred = forward->refined_prediction(static_cast<int>(k)); break;
                        case EvalMode::Grid: pred = grid_baseline_prediction(view, grid_m); break;
                    }
                }
                acc[m][s].add(pred, view.query.keypoints, mask_span, normalizer);
            }
        }
    }

    std::vector<EvalReport> reports;
    for (std::size_t m = 0; m < modes.size(); ++m) {
        EvalReport r;
        r.mode = modes[m];
        r.shots = options.shots;
        r.thresholds = options.thresholds;
        r.config_hash = model != nullptr ? model->config().structural_hash() : "";
        const std::size_t nt = options.thresholds.size();
        std::vector<std::vector<double>> per_seed;
        std::vector<double> mpcks;
        for (const auto& a : acc[m]) {
            r.episodes += a.episodes();
            r.skipped += a.skipped();
            per_seed.push_back(a.means());
            mpcks.push_back(a.mean_of_thresholds(kMpckThresholds));
        }
        auto mean_std = [](const std::vector<double>& xs) {
            double mu = 0.0;
            for (double x : xs) mu += x;
            mu /= static_cast<double>(xs.size());
            double var = 0.0;
            for (double x : xs) var += (x - mu) * (x - mu);
            return std::pair{mu, std::sqrt(var / static_cast<double>(xs.size()))};
        };
        for (std::size_t t = 0; t < nt; ++t) {
            std::vector<double> xs;
            for (const auto& ps : per_seed) xs.push_back(ps[t]);
            const auto [mu, sd] = mean_std(xs);
            r.pck_mean.push_back(mu);
            r.pck_std.push_back(sd);
        }
        std::tie(r.mpck_mean, r.mpck_std) = mean_std(mpcks);
        reports.push_back(std::move(r));
    }
    return reports;
}

}  // namespace

EvalReport evaluate(const MetaPointModel* model, const Dataset& dataset, std::span<const int> class_ids, EvalMode mode,
                    const EvalOptions& options, int grid_points) {
    const EvalMode modes[] = {mode};
    return run_modes(model, dataset, class_ids, modes, options, grid_points).front();
}

std::vector<EvalReport> evaluate_all(const MetaPointModel& model, const Dataset& dataset, std::span<const int> class_ids,
                                     const EvalOptions& options) {
    const EvalMode modes[] = {EvalMode::MetaPoint, EvalMode::MetaPointPlus, EvalMode::Grid};
    return run_modes(&model, dataset, class_ids, modes, options, 0);
}

}  // namespace metapoint
