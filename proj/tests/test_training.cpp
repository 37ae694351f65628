#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "cmc/core/error.hpp"
#include "cmc/train/training.hpp"
#include "cmc/volume/phantom.hpp"

using namespace cmc;

namespace {

ModelConfig tiny_model() {
    ModelConfig c;
    c.encoder.stage_depths = {1, 1, 1, 1};
    c.encoder.channels = {4, 8, 8, 16};
    c.encoder.attention_heads = 2;
    c.encoder.local_kernel = 3;
    c.projection_dim = 8;
    return c;
}

TrainConfig tiny_train(int epochs) {
    TrainConfig t;
    t.epochs = epochs;
    t.base_lr = 1e-3;
    t.local_batch = 2;
    t.seed = 11;
    t.augmentation.depth_crop = 16;
    t.augmentation.train_resolution = 32;
    t.augmentation.eval_resolution = 32;
    return t;
}

std::vector<LabeledScan> phantoms(int n, int offset) {
    PhantomConfig base;
    base.size = {16, 32, 32};
    std::vector<LabeledScan> out;
    for (int i = offset; i < offset + n; ++i) {
        auto p = generate_phantom(phantom_for_index(base, 3, i), i % 2);
        out.push_back({p.record.scan_id, i % 2, std::move(p.volume)});
    }
    return out;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path fresh_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("cmc_test_training_" + name);
    std::filesystem::remove_all(d);
    return d;
}

std::vector<Matrix> values(const Model& m) {
    std::vector<Matrix> v;
    for (const auto& p : m.parameters().items()) v.push_back(p.var->value);
    return v;
}

}  // namespace

TEST_CASE("step learning-rate schedule") {
    TrainConfig cfg;
    cfg.epochs = 100;
    cfg.base_lr = 1e-4;
    CHECK(lr_at(0, cfg) == 1e-4);
    CHECK(lr_at(29, cfg) == 1e-4);
    CHECK(lr_at(30, cfg) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(lr_at(79, cfg) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(lr_at(80, cfg) == doctest::Approx(1e-6).epsilon(1e-12));
    CHECK(lr_at(99, cfg) == doctest::Approx(1e-6).epsilon(1e-12));
    cfg.lr_drop_points.clear();
    CHECK(lr_at(99, cfg) == 1e-4);
    CHECK_THROWS_AS(lr_at(100, cfg), InvalidArgument);
    CHECK_THROWS_AS(lr_at(-1, cfg), InvalidArgument);
}

TEST_CASE("sampler visits every scan once per epoch") {
    for (std::size_t n : {8u, 9u, 13u})
        for (int workers : {1, 2, 4}) {
            const auto order = epoch_order(n, 5, 2);
            CHECK(std::set<std::size_t>(order.begin(), order.end()).size() == n);
            const auto plan = plan_epoch(order, workers, 2);
            std::multiset<std::size_t> seen;
            for (const auto& step : plan) {
                REQUIRE(int(step.size()) == workers);
                for (const auto& w : step) {
                    CHECK(w.size() == step[0].size());
                    seen.insert(w.begin(), w.end());
                }
            }
            for (std::size_t i = 0; i < n; ++i) CHECK(seen.count(i) >= 1);
            CHECK(seen.size() - n < std::size_t(workers));
        }
    CHECK(epoch_order(10, 1, 0) == epoch_order(10, 1, 0));
    CHECK(epoch_order(10, 1, 0) != epoch_order(10, 1, 1));
}

TEST_CASE("each worker forwards two raw and two mixed samples per scan") {
    const auto scans = phantoms(2, 0);
    auto cfg = tiny_train(1);
    cfg.workers = 2;
    cfg.local_batch = 1;
    TrainState state{Model(tiny_model(), 1), Adam(cfg.adam)};
    std::vector<std::vector<TrainSample>> w{{{&scans[0].volume, 0, 0}}, {{&scans[1].volume, 1, 1}}};
    const auto rep = train_step(state, cfg, w, 0, 0, 1e-3);
    CHECK(rep.forwarded_per_worker == 4);
    CHECK(rep.rows == 4);
    CHECK(std::isfinite(rep.l_total));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    const auto scans = phantoms(2, 0);
    auto cfg = tiny_train(1);
    TrainState state{Model(tiny_model(), 2), Adam(cfg.adam)};
    const auto before = values(state.model);
    std::vector<std::vector<TrainSample>> w{{{&scans[0].volume, 0, 0}, {&scans[1].volume, 1, 1}}};
    train_step(state, cfg, w, 0, 0, 0.0);
    CHECK(values(state.model) == before);
    train_step(state, cfg, w, 0, 1, 1e-3);
    CHECK(values(state.model) != before);
}

TEST_CASE("two workers match one worker on the same global batch") {
    const auto scans = phantoms(4, 0);
    std::vector<TrainSample> all;
    for (std::size_t i = 0; i < scans.size(); ++i) all.push_back({&scans[i].volume, scans[i].label, i});

    auto one = tiny_train(1);
    one.local_batch = 4;
    TrainState a{Model(tiny_model(), 3), Adam(one.adam)};
    std::vector<std::vector<TrainSample>> w1{all};
    const auto ra = train_step(a, one, w1, 0, 0, 1e-3);

    auto two = one;
    two.workers = 2;
    two.local_batch = 2;
    TrainState b{Model(tiny_model(), 3), Adam(two.adam)};
    std::vector<std::vector<TrainSample>> w2{{all[0], all[1]}, {all[2], all[3]}};
    const auto rb = train_step(b, two, w2, 0, 0, 1e-3);

    CHECK(ra.l_total == doctest::Approx(rb.l_total).epsilon(1e-12));
    const auto va = values(a.model), vb = values(b.model);
    Real worst = 0;
    for (std::size_t k = 0; k < va.size(); ++k) {
        const Real scale = std::max<Real>(va[k].cwiseAbs().maxCoeff(), 1e-12);
        worst = std::max(worst, (va[k] - vb[k]).cwiseAbs().maxCoeff() / scale);
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("non-finite inputs raise TrainingDiverged") {
    auto scans = phantoms(2, 0);
    scans[0].volume.data()[0] = std::numeric_limits<Real>::quiet_NaN();
    scans[0].volume.array() *= std::numeric_limits<Real>::infinity();
    auto cfg = tiny_train(1);
    TrainState state{Model(tiny_model(), 4), Adam(cfg.adam)};
    std::vector<std::vector<TrainSample>> w{{{&scans[0].volume, 0, 0}, {&scans[1].volume, 1, 1}}};
    CHECK_THROWS_AS(train_step(state, cfg, w, 0, 0, 1e-3), TrainingDiverged);
}

TEST_CASE("two-epoch smoke run writes metrics and checkpoints") {
    const auto train = phantoms(8, 0), val = phantoms(4, 100);
    const auto dir = fresh_dir("smoke");
    RunOptions opt;
    opt.out_dir = dir;
    opt.config_hash = "abc123";
    const auto r = run_training(tiny_model(), tiny_train(2), train, val, opt);
    REQUIRE(r.history.size() == 2);
    for (const auto& row : r.history) {
        CHECK(std::isfinite(row.l_total));
        CHECK(row.val_macro_f1 >= 0);
        CHECK(row.val_macro_f1 <= 1);
    }
    CHECK(std::filesystem::exists(dir / "last.ckpt"));
    CHECK(std::filesystem::exists(dir / "best.ckpt"));
    const auto csv = read_file(dir / "metrics.csv");
    CHECK(csv.starts_with("# config_hash abc123\n" + metrics_header() + "\n"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    const auto last = read_checkpoint(dir / "last.ckpt");
    CHECK(last.metadata.at("epoch") == 1);
    CHECK(last.metadata.at("config_hash") == "abc123");
    CHECK(last.find("optimizer.m.classifier.weight"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("runs are deterministic and resume reproduces the history") {
    const auto train = phantoms(6, 0), val = phantoms(4, 100);
    const auto cfg = tiny_train(3);
    RunOptions opt;
    opt.config_hash = "h";

    const auto full_dir = fresh_dir("full");
    opt.out_dir = full_dir;
    const auto full = run_training(tiny_model(), cfg, train, val, opt);
    opt.out_dir = fresh_dir("again");
    const auto again = run_training(tiny_model(), cfg, train, val, opt);
    CHECK(full.history == again.history);

    opt.out_dir = fresh_dir("resumed");
    opt.stop_after_epoch = 0;
    const auto part = run_training(tiny_model(), cfg, train, val, opt);
    CHECK(part.history.size() == 1);
    opt.stop_after_epoch.reset();
    const auto resumed = run_training(tiny_model(), cfg, train, val, opt);
    CHECK(resumed.history == full.history);
    CHECK(resumed.best_epoch == full.best_epoch);
    CHECK(read_file(opt.out_dir / "metrics.csv") == read_file(full_dir / "metrics.csv"));
    CHECK(read_checkpoint(opt.out_dir / "last.ckpt").tensors ==
          read_checkpoint(full_dir / "last.ckpt").tensors);

    opt.config_hash = "other";
    CHECK_THROWS_AS(run_training(tiny_model(), cfg, train, val, opt), InvalidConfig);
    for (auto n : {"full", "again", "resumed"}) std::filesystem::remove_all(fresh_dir(n));
}
