// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "metapoint/checkpoint.hpp"
#include "metapoint/evaluator.hpp"
#include "metapoint/model.hpp"
#include "metapoint/trainer.hpp"
#include "metapoint/viz.hpp"
#include "support.hpp"

using namespace metapoint;

namespace {

RunConfig model_config() {
    RunConfig c = testing::tiny_config();
    c.num_meta_points = 16;
    c.checkpoint_every = 1000;
    return c;
}

std::filesystem::path scratch(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("metapoint_model_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

EpisodeView train_view(std::uint64_t seed, int shots = 1) {
    const Dataset& d = testing::tiny_dataset();
    return view_of(sample_episode(d, d.class_ids(Split::Train), shots, seed));
}

bool same(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace

TEST_CASE("active keypoints are the ones visible on every support") {
    const Image im(16, 16);
    AnnotatedImage a{&im, PointSet({{0.1, 0.1}, {0.2, 0.2}, {0.3, 0.3}}), {true, false, true}, {}};
    AnnotatedImage b{&im, PointSet({{0.1, 0.1}, {0.2, 0.2}, {0.3, 0.3}}), {true, true, false}, {}};
    const AnnotatedImage both[] = {a, b};
    CHECK(active_keypoints(both) == std::vector<int>{0});
    const AnnotatedImage one[] = {a};
    CHECK(active_keypoints(one) == std::vector<int>{0, 2});
    CHECK_THROWS_AS((void)active_keypoints(std::span<const AnnotatedImage>{}), std::invalid_argument);
}

TEST_CASE("forward result shapes and prediction scatter") {
    testing::tiny_dataset();
    const MetaPointModel model(model_config());
    const EpisodeView v = train_view(1);
    const ForwardResult r = model.forward(v);
    const int k = static_cast<int>(v.query.keypoints.size());
    CHECK(r.assigned_meta.size() == 2);
    CHECK(r.refined.size() == 2);
    CHECK(r.refined.back().rows() == static_cast<int>(r.active.size()));
    CHECK(r.support.assignment.injective());
    const PointSet meta = r.metapoint_prediction(k);
    const PointSet refined = r.refined_prediction(k);
    CHECK(static_cast<int>(meta.size()) == k);
    for (std::size_t i = 0; i < r.active.size(); ++i) {
        const int row = r.support.assignment.delta[i];
        CHECK(meta[static_cast<std::size_t>(r.active[i])].x == r.query_meta.per_layer.back().points.at(row, 0));
    }
    CHECK(refined.size() == meta.size());
}

TEST_CASE("forward rejects episodes without common visible keypoints and K > M") {
    RunConfig small = model_config();
    small.num_meta_points = 2;
    const MetaPointModel tiny(small);
    CHECK_THROWS_AS((void)tiny.forward(train_view(2)), std::invalid_argument);

    const MetaPointModel model(model_config());
    EpisodeView v = train_view(3);
    for (auto& s : v.supports) s.mask.assign(s.mask.size(), false);
    CHECK_THROWS_AS((void)model.forward(v), std::invalid_argument);
}

TEST_CASE("full loss is reg plus half the visibility loss, and ablations change the objective") {
    const MetaPointModel model(model_config());
    for (std::uint64_t s = 0; s < 10; ++s) {
        const EpisodeView v = train_view(s);
        LossReport report;
        const ag::Var l = model.loss(model.forward(v), v.query, &report);
        CHECK(l.item() == report.full);
        CHECK(report.full == report.reg + 0.5 * report.vis);
        CHECK(report.per_layer_meta.size() == 2);
    }
    RunConfig no_vis = model_config();
    no_vis.ablation.visibility = false;
    const MetaPointModel ablated(no_vis);
    const EpisodeView v = train_view(4);
    LossReport report;
    (void)ablated.loss(ablated.forward(v), v.query, &report);
    CHECK(report.full == report.reg);
}

TEST_CASE("grid baseline never looks at pixels and matches onto the grid") {
    const EpisodeView v = train_view(5);
    const PointSet grid = uniform_grid(16);
    const PointSet p = grid_baseline_prediction(v, 16);
    const auto active = active_keypoints(v.supports);
    for (int k : active) {
        const Point2 q = p[static_cast<std::size_t>(k)];
        CHECK(std::any_of(grid.points().begin(), grid.points().end(), [&](Point2 g) { return g.x == q.x && g.y == q.y; }));
    }
    // predictions come from annotations alone
    EpisodeView blanked = v;
    const Image blank(v.query.image->height, v.query.image->width);
    for (auto& s : blanked.supports) s.image = &blank;
    blanked.query.image = &blank;
    const PointSet q = grid_baseline_prediction(blanked, 16);
    CHECK(same(q.flatten(), p.flatten()));
}

TEST_CASE("config json round trip, settings, validation, and hashing") {
    RunConfig c = model_config();
    c.ablation.support_features = false;
    nlohmann::json j;
    to_json(j, c);
    RunConfig back;
    from_json(j, back);
    CHECK(back == c);

    RunConfig s;
    apply_setting(s, "num_meta_points", "25");
    apply_setting(s, " alpha ", " 0.25 ");
    apply_setting(s, "ablate", "no-vis,plain-l1");
    CHECK(s.num_meta_points == 25);
    CHECK(s.alpha == 0.25);
    CHECK_FALSE(s.ablation.visibility);
    CHECK_FALSE(s.ablation.slacked_loss);
    CHECK(s.effective_alpha() == 0.0);
    CHECK(s.effective_slack() == 0.0);
    CHECK_THROWS_AS(apply_setting(s, "bogus", "1"), std::invalid_argument);
    CHECK_THROWS_AS(apply_setting(s, "ablate", "no-everything"), std::invalid_argument);

    RunConfig bad;
    bad.dim = 30;  // not divisible by four sine frequencies per axis
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    RunConfig h1, h2;
    h2.learning_rate = 0.5;
    CHECK(h1.structural_hash() == h2.structural_hash());
    h2.num_meta_points = 50;
    CHECK(h1.structural_hash() != h2.structural_hash());

    const auto dir = scratch("config");
    {
        std::ofstream f(dir / "run.cfg");
        f << "# comment\nlayers = 2\n\nslack=0.2\n";
    }
    const auto kv = read_key_value_file(dir / "run.cfg");
    CHECK(kv.size() == 2);
    CHECK(kv.at("layers") == "2");
}

TEST_CASE("checkpoint round trip reproduces the forward pass bitwise") {
    MetaPointModel model(model_config());
    std::mt19937_64 rng(5);
    testing::jitter_parameters(model.parameters(), rng, 0.05);
    const auto dir = scratch("ckpt");
    const Adam opt(model.parameters());
    save_checkpoint(dir / "a.bin", snapshot(model.config(), 12, model.parameters(), &opt));
    const Checkpoint loaded = load_checkpoint(dir / "a.bin");
    CHECK(loaded.step == 12);
    CHECK(loaded.config == model.config());
    MetaPointModel fresh(loaded.config);
    restore_parameters(loaded, fresh.parameters());
    const EpisodeView v = train_view(6);
    const ForwardResult a = model.forward(v);
    const ForwardResult b = fresh.forward(v);
    CHECK(same(a.refined.back().value(), b.refined.back().value()));
    CHECK(same(a.query_meta.visibility.value(), b.query_meta.visibility.value()));

    {
        std::ofstream f(dir / "junk.bin", std::ios::binary);
        f << "not a checkpoint";
    }
    CHECK_THROWS_AS((void)load_checkpoint(dir / "junk.bin"), std::runtime_error);
    CHECK_THROWS_AS((void)load_checkpoint(dir / "missing.bin"), std::runtime_error);
    RunConfig other = model_config();
    other.dim = 32;
    MetaPointModel wrong(other);
    CHECK_THROWS_AS(restore_parameters(loaded, wrong.parameters()), std::invalid_argument);
}

TEST_CASE("resumed training continues the uninterrupted run exactly") {
    const Dataset& d = testing::tiny_dataset();
    const auto train = d.class_ids(Split::Train);
    MetaPointModel straight(model_config());
    Trainer t1(straight, d, train);
    (void)t1.run(6);

    MetaPointModel first(model_config());
    Trainer t2(first, d, train);
    (void)t2.run(3);
    const auto dir = scratch("resume");
    save_checkpoint(dir / "c.bin", t2.checkpoint());
    MetaPointModel second(model_config());
    Trainer t3(second, d, train);
    t3.resume(load_checkpoint(dir / "c.bin"));
    CHECK(t3.completed() == 3);
    CHECK(t3.optimizer().steps_taken() == 3);
    (void)t3.run(6);

    CHECK(t1.probe(6).full == t3.probe(6).full);
    for (const auto& name : straight.parameters().names()) {
        CHECK(same(straight.parameters().get(name).value(), second.parameters().get(name).value()));
    }
}

TEST_CASE("training episodes are a pure function of seed and step") {
    CHECK(training_episode_seed(0, 5) == training_episode_seed(0, 5));
    CHECK(training_episode_seed(0, 5) != training_episode_seed(0, 6));
    CHECK(training_episode_seed(1, 5) != training_episode_seed(0, 5));
}

TEST_CASE("checkpoint hook fires on schedule and at the end") {
    const Dataset& d = testing::tiny_dataset();
    RunConfig c = model_config();
    c.checkpoint_every = 2;
    MetaPointModel model(c);
    Trainer t(model, d, d.class_ids(Split::Train));
    std::vector<long long> fired;
    TrainHooks hooks;
    hooks.on_checkpoint = [&](long long s) { fired.push_back(s); };
    int steps = 0;
    hooks.on_step = [&](const StepLog& log) { CHECK(log.step == ++steps); };
    (void)t.run(5, hooks);
    CHECK(fired == std::vector<long long>{2, 4, 5});
}

TEST_CASE("training reduces the loss on a fixed class") {
    const Dataset& d = testing::tiny_dataset();
    RunConfig c = model_config();
    c.learning_rate = 2e-3;
    MetaPointModel model(c);
    const std::vector<int> one_class{d.class_ids(Split::Train).front()};
    Trainer t(model, d, one_class);
    double before = 0.0;
    for (int s = 0; s < 20; ++s) before += t.probe(s).full;
    (void)t.run(200);
    double after = 0.0;
    for (int s = 0; s < 20; ++s) after += t.probe(200 + s).full;
    CHECK(after < 0.8 * before);
}

TEST_CASE("trainer rejects classes with more keypoints than meta-points") {
    const Dataset& d = testing::tiny_dataset();
    RunConfig c = model_config();
    c.num_meta_points = 3;
    MetaPointModel model(c);
    CHECK_THROWS_AS(Trainer(model, d, d.class_ids(Split::Train)), std::invalid_argument);
}

TEST_CASE("evaluation report structure and mode agreement") {
    const Dataset& d = testing::tiny_dataset();
    const MetaPointModel model(model_config());
    EvalOptions opts;
    opts.episodes = 4;
    const auto test = d.class_ids(Split::Test);
    const auto all = evaluate_all(model, d, test, opts);
    REQUIRE(all.size() == 3);
    const EvalReport single = evaluate(&model, d, test, EvalMode::MetaPointPlus, opts);
    CHECK(single.pck_mean == all[1].pck_mean);
    for (const auto& r : all) {
        CHECK(r.thresholds.size() == 4);
        CHECK(r.episodes + r.skipped == 12);
        double m = 0.0;
        for (double p : r.pck_mean) m += p / 4.0;
        CHECK(r.mpck_mean == doctest::Approx(m).epsilon(1e-12));
        for (double s : r.pck_std) CHECK(s >= 0.0);
        CHECK(r.pck_at(0.2) == r.pck_mean[3]);
        const nlohmann::json j = to_json(r);
        CHECK(j.contains("pck"));
        CHECK(j["pck"].contains("0.05"));
        CHECK(j["mode"] == to_string(r.mode));
    }
    CHECK_THROWS((void)all[0].pck_at(0.3));

    const EvalReport grid = evaluate(nullptr, d, test, EvalMode::Grid, opts, 16);
    CHECK(grid.pck_mean == all[2].pck_mean);
    CHECK_THROWS_AS((void)evaluate(nullptr, d, test, EvalMode::MetaPoint, opts), std::invalid_argument);

    for (EvalMode m : {EvalMode::MetaPoint, EvalMode::MetaPointPlus, EvalMode::Grid}) {
        CHECK(eval_mode_from_string(to_string(m)) == m);
    }
}

TEST_CASE("tracking figures skip points whose visibility is at most one half") {
    const Image a(16, 16), b(16, 16), c(16, 16);
    const Image* imgs[] = {&a, &b, &c};
    const Point2 pts[] = {{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}};
    const double vis[] = {0.4, 0.6, 0.5};
    std::vector<bool> drawn;
    const Image fig = viz::tracking_figure(imgs, pts, vis, 2, &drawn);
    CHECK(drawn == std::vector<bool>{false, true, false});
    CHECK(fig.width == 3 * 32);
    CHECK(fig.height == 32);
    // the first tile is untouched, the second has marks
    double first = 0.0, second = 0.0;
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                first += fig.at(y, x, ch);
                second += fig.at(y, x + 32, ch);
            }
        }
    }
    CHECK(first == 0.0);
    CHECK(second > 0.0);
}

TEST_CASE("episode figure has three panels") {
    const MetaPointModel model(model_config());
    const EpisodeView v = train_view(7);
    const Image fig = viz::episode_figure(model, v, 3);
    CHECK(fig.width == 3 * 32 * 3);
    CHECK(fig.height == 32 * 3);
}
