#include "cmc/train/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include "cmc/core/error.hpp"
#include "cmc/core/random.hpp"
#include "cmc/eval/inference.hpp"
#include "cmc/eval/metrics.hpp"
#include "cmc/nn/ops.hpp"

namespace cmc {

void TrainConfig::validate() const {
    if (epochs < 1) throw InvalidConfig("train.epochs must be >= 1");
    if (!(base_lr >= 0)) throw InvalidConfig("train.base_lr must be >= 0");
    for (std::size_t i = 0; i < lr_drop_points.size(); ++i) {
        const double f = lr_drop_points[i];
        if (!(f > 0 && f < 1)) throw InvalidConfig("train.lr_drop_points must lie in (0, 1)");
        if (i > 0 && !(lr_drop_points[i - 1] < f)) throw InvalidConfig("train.lr_drop_points must be sorted");
    }
    if (workers < 1) throw InvalidConfig("train.workers must be >= 1");
    if (local_batch < 1) throw InvalidConfig("train.local_batch must be >= 1");
    if (!(tau > 0)) throw InvalidConfig("loss.tau must be > 0");
    if (!(alpha > 0)) throw InvalidConfig("mixing.alpha must be > 0");
    if (!(adam.weight_decay >= 0)) throw InvalidConfig("train.weight_decay must be >= 0");
    augmentation.validate();
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch >= cfg.epochs)
        throw InvalidArgument("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
    double lr = cfg.base_lr;
    for (double f : cfg.lr_drop_points)
        if (epoch >= std::lround(f * cfg.epochs)) lr /= 10.0;
    return lr;
}

namespace {

struct WorkerGraph {
    std::vector<nn::Var> z, raw_logits, mixed_logits;
    std::vector<int> labels;
    Matrix mixed_labels;
};

void check_finite_grads(const ParameterStore& params, std::uint64_t epoch, std::uint64_t step) {
    for (const auto& p : params.items())
        if (p.var->grad.size() != 0 && !p.var->grad.allFinite())
            throw TrainingDiverged("non-finite gradient in " + p.name + " at epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(step));
}

}  // namespace

StepReport train_step(TrainState& state, const TrainConfig& cfg,
                      std::span<const std::vector<TrainSample>> worker_samples, std::uint64_t epoch,
                      std::uint64_t step, double lr) {
    const int W = int(worker_samples.size());
    if (W < 1) throw InvalidArgument("train_step needs at least one worker");
    const SeedTuple seed{cfg.seed, epoch, step};

    std::vector<WorkerBatch> batches(W);
    for (int w = 0; w < W; ++w) {
        batches[w].rank = w;
        batches[w].seed = seed;
        for (const auto& s : worker_samples[w]) {
            if (!s.volume) throw InvalidArgument("null training volume");
            auto rng = derive_rng({cfg.seed, epoch, s.uid, 0xA06});
            auto views = make_views(*s.volume, s.label, cfg.augmentation, rng);
            batches[w].samples.push_back({std::move(views.view_a), one_hot(s.label)});
            batches[w].samples.push_back({std::move(views.view_b), one_hot(s.label)});
        }
    }
    const auto dispatched = gather_dispatch(batches, cfg.alpha, cfg.mix_policy, cfg.transport);

    auto& model = state.model;
    std::vector<WorkerGraph> graphs(W);
    for (int w = 0; w < W; ++w) {
        const auto& mb = dispatched[w];
        auto& g = graphs[w];
        g.mixed_labels.resize(Index(mb.mixed.size()), 2);
        for (const auto& s : mb.raw) {
            auto out = model.forward(s.volume);
            g.z.push_back(out.projection);
            g.raw_logits.push_back(out.logits);
            g.labels.push_back(s.label[1] > s.label[0] ? 1 : 0);
        }
        for (std::size_t i = 0; i < mb.mixed.size(); ++i) {
            auto features = nn::mean_rows(model.encode_grid(mb.mixed[i].volume));
            g.mixed_logits.push_back(model.classify(features));
            g.mixed_labels.row(Index(i)) = mb.mixed[i].label.transpose();
        }
    }

    // All-gather of per-row outputs in rank order.
    Index rows = 0;
    for (const auto& g : graphs) rows += Index(g.z.size());
    const Index dp = graphs[0].z.at(0)->value.cols(), classes = graphs[0].raw_logits.at(0)->value.cols();
    Matrix z(rows, dp), raw_logits(rows, classes), mixed_logits(rows, classes), mixed_labels(rows, 2);
    std::vector<int> labels;
    std::vector<Index> offsets;
    for (const auto& g : graphs) {
        offsets.push_back(Index(labels.size()));
        for (std::size_t i = 0; i < g.z.size(); ++i) {
            const Index r = Index(labels.size());
            z.row(r) = g.z[i]->value;
            raw_logits.row(r) = g.raw_logits[i]->value;
            mixed_logits.row(r) = g.mixed_logits[i]->value;
            mixed_labels.row(r) = g.mixed_labels.row(Index(i));
            labels.push_back(g.labels[i]);
        }
    }

    loss::SupConOptions opt;
    opt.positives = cfg.positives;
    const auto report = loss::total_loss<Real>(z, raw_logits, labels, mixed_logits, mixed_labels, Real(cfg.tau),
                                               cfg.loss_weights, opt);
    if (!std::isfinite(report.l_total)) {
        char msg[256];
        std::snprintf(msg, sizeof msg,
                      "non-finite loss at epoch %llu, step %llu: l_con=%g l_mix=%g l_clf=%g max|logit|=%g lr=%g",
                      static_cast<unsigned long long>(epoch), static_cast<unsigned long long>(step),
                      double(report.l_con), double(report.l_mix), double(report.l_clf),
                      double(raw_logits.cwiseAbs().maxCoeff()), lr);
        throw TrainingDiverged(msg);
    }

    // Each worker back-propagates its own rows of the global gradient scaled
    // by W; averaging the worker gradients then gives the full gradient.
    auto& params = model.parameters();
    std::vector<Matrix> sum(params.items().size());
    for (int w = 0; w < W; ++w) {
        params.zero_grad();
        auto& g = graphs[w];
        std::vector<nn::Var> roots;
        for (std::size_t i = 0; i < g.z.size(); ++i) {
            const Index r = offsets[w] + Index(i);
            g.z[i]->accumulate(report.grad_z.row(r) * Real(W));
            g.raw_logits[i]->accumulate(report.grad_raw_logits.row(r) * Real(W));
            g.mixed_logits[i]->accumulate(report.grad_mixed_logits.row(r) * Real(W));
            roots.insert(roots.end(), {g.z[i], g.raw_logits[i], g.mixed_logits[i]});
        }
        nn::backward(roots);
        g = {};
        for (std::size_t k = 0; k < params.items().size(); ++k) {
            const auto& grad = params.items()[k].var->grad;
            if (grad.size() == 0) continue;
            if (sum[k].size() == 0)
                sum[k] = grad;
            else
                sum[k] += grad;
        }
    }
    for (std::size_t k = 0; k < params.items().size(); ++k) {
        auto& var = *params.items()[k].var;
        if (sum[k].size() == 0)
            var.grad.resize(0, 0);
        else
            var.grad = sum[k] / Real(W);
    }
    check_finite_grads(params, epoch, step);
    state.optimizer.step(params, lr);

    StepReport out;
    out.l_con = report.l_con;
    out.l_mix = report.l_mix;
    out.l_clf = report.l_clf;
    out.l_total = report.l_total;
    out.forwarded_per_worker = int(dispatched[0].raw.size() + dispatched[0].mixed.size());
    out.rows = int(rows);
    return out;
}

std::string metrics_header() { return "epoch,lr,l_con,l_mix,l_clf,l_total,val_macro_f1,val_f1_0,val_f1_1"; }

std::string format_metric_row(const MetricRow& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.epoch, r.lr, r.l_con,
                  r.l_mix, r.l_clf, r.l_total, r.val_macro_f1, r.val_f1_0, r.val_f1_1);
    return buf;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    auto rng = derive_rng({seed, std::uint64_t(epoch), 0x5A3});
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

std::vector<std::vector<std::vector<std::size_t>>> plan_epoch(std::span<const std::size_t> order, int workers,
                                                              int local_batch) {
    if (order.empty()) throw InvalidArgument("empty training set");
    if (workers < 1 || local_batch < 1) throw InvalidArgument("workers and local_batch must be >= 1");
    const std::size_t per_step = std::size_t(workers) * local_batch;
    std::vector<std::vector<std::vector<std::size_t>>> steps;
    auto emit = [&](std::span<const std::size_t> ids, int local) {
        std::vector<std::vector<std::size_t>> step(workers);
        for (int w = 0; w < workers; ++w)
            step[w].assign(ids.begin() + std::ptrdiff_t(w) * local, ids.begin() + std::ptrdiff_t(w + 1) * local);
        steps.push_back(std::move(step));
    };
    std::size_t i = 0;
    for (; i + per_step <= order.size(); i += per_step) emit(order.subspan(i, per_step), local_batch);
    const std::size_t tail = order.size() - i;
    if (tail == 0) return steps;
    if (tail % std::size_t(workers) == 0) {
        emit(order.subspan(i, tail), int(tail / workers));
    } else {
        const std::size_t local = tail / workers + 1;
        std::vector<std::size_t> ids(order.begin() + std::ptrdiff_t(i), order.end());
        for (std::size_t k = 0; ids.size() < local * workers; ++k) ids.push_back(order[k % order.size()]);
        emit(ids, int(local));
    }
    return steps;
}

namespace {

EvalReport validate(const Model& model, const AugmentationPolicy& policy, std::span<const LabeledScan> val) {
    Matrix probs(Index(val.size()), model.config().classes);
    std::vector<int> labels;
    for (std::size_t i = 0; i < val.size(); ++i) {
        probs.row(Index(i)) = predict(model, val[i].volume, policy);
        labels.push_back(val[i].label);
    }
    return evaluate_probabilities(probs, labels);
}

nlohmann::json history_json(const std::vector<MetricRow>& h) {
    auto arr = nlohmann::json::array();
    for (const auto& r : h)
        arr.push_back({r.epoch, r.lr, r.l_con, r.l_mix, r.l_clf, r.l_total, r.val_macro_f1, r.val_f1_0, r.val_f1_1});
    return arr;
}

std::vector<MetricRow> history_from_json(const nlohmann::json& arr) {
    std::vector<MetricRow> h;
    for (const auto& a : arr)
        h.push_back({a[0].get<int>(), a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]});
    return h;
}

void write_metrics(const std::filesystem::path& file, const std::vector<MetricRow>& history,
                   const std::string& config_hash) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw InvalidArgument("cannot write " + file.string());
    if (!config_hash.empty()) out << "# config_hash " << config_hash << "\n";
    out << metrics_header() << "\n";
    for (const auto& r : history) out << format_metric_row(r) << "\n";
}

}  // namespace

TrainingResult run_training(const ModelConfig& model_cfg, const TrainConfig& cfg, std::span<const LabeledScan> train,
                            std::span<const LabeledScan> val, const RunOptions& options) {
    cfg.validate();
    if (train.empty()) throw InvalidArgument("no training scans");
    if (val.empty()) throw InvalidArgument("no validation scans");
    std::filesystem::create_directories(options.out_dir);
    const auto last_path = options.out_dir / "last.ckpt";
    const auto best_path = options.out_dir / "best.ckpt";
    const auto metrics_path = options.out_dir / "metrics.csv";

    TrainState state{Model(model_cfg, derive_rng({cfg.seed, 0x30DE1})()), Adam(cfg.adam)};
    TrainingResult result;
    result.best_checkpoint = best_path;
    result.last_checkpoint = last_path;
    int start_epoch = 0;

    if (options.resume && std::filesystem::exists(last_path)) {
        const auto ckpt = read_checkpoint(last_path);
        const auto hash = ckpt.metadata.value("config_hash", std::string());
        if (hash != options.config_hash)
            throw InvalidConfig("resume checkpoint " + last_path.string() + " has config hash " + hash +
                                ", expected " + options.config_hash);
        load_pretrained(state.model.parameters(), ckpt, NameMapping{});
        state.optimizer.load(ckpt, state.model.parameters());
        result.history = history_from_json(ckpt.metadata.at("history"));
        result.best_epoch = ckpt.metadata.value("best_epoch", -1);
        result.best_macro_f1 = ckpt.metadata.value("best_macro_f1", -1.0);
        start_epoch = ckpt.metadata.at("epoch").get<int>() + 1;
    } else if (options.init) {
        options.init(state.model);
    }
    write_metrics(metrics_path, result.history, options.config_hash);

    std::vector<TrainSample> samples;
    for (std::size_t i = 0; i < train.size(); ++i) samples.push_back({&train[i].volume, train[i].label, i});

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        const auto order = epoch_order(train.size(), cfg.seed, epoch);
        const auto plan = plan_epoch(order, cfg.workers, cfg.local_batch);
        MetricRow row;
        row.epoch = epoch;
        row.lr = lr;
        double weight = 0;
        for (std::size_t s = 0; s < plan.size(); ++s) {
            std::vector<std::vector<TrainSample>> workers(plan[s].size());
            for (std::size_t w = 0; w < plan[s].size(); ++w)
                for (auto idx : plan[s][w]) workers[w].push_back(samples[idx]);
            const auto rep = train_step(state, cfg, workers, std::uint64_t(epoch), std::uint64_t(s), lr);
            row.l_con += rep.l_con * rep.rows;
            row.l_mix += rep.l_mix * rep.rows;
            row.l_clf += rep.l_clf * rep.rows;
            row.l_total += rep.l_total * rep.rows;
            weight += rep.rows;
        }
        row.l_con /= weight;
        row.l_mix /= weight;
        row.l_clf /= weight;
        row.l_total /= weight;

        const auto report = validate(state.model, cfg.augmentation, val);
        row.val_macro_f1 = report.macro_f1;
        row.val_f1_0 = report.f1_per_class[0];
        row.val_f1_1 = report.f1_per_class[1];
        result.history.push_back(row);
        {
            std::ofstream out(metrics_path, std::ios::app);
            out << format_metric_row(row) << "\n";
        }
        if (options.verbose)
            std::fprintf(stderr, "epoch %d lr %.2g loss %.4f (con %.4f mix %.4f clf %.4f) val macro F1 %.4f\n", epoch,
                         lr, row.l_total, row.l_con, row.l_mix, row.l_clf, row.val_macro_f1);

        const bool improved = row.val_macro_f1 > result.best_macro_f1;
        if (improved) {
            result.best_macro_f1 = row.val_macro_f1;
            result.best_epoch = epoch;
        }
        nlohmann::json meta = {{"epoch", epoch},
                               {"config", options.config},
                               {"config_hash", options.config_hash},
                               {"val_macro_f1", row.val_macro_f1},
                               {"best_epoch", result.best_epoch},
                               {"best_macro_f1", result.best_macro_f1},
                               {"history", history_json(result.history)}};
        if (improved) save_checkpoint(best_path, snapshot(state.model.parameters(), meta));
        auto last = snapshot(state.model.parameters(), meta);
        state.optimizer.save(last, state.model.parameters());
        save_checkpoint(last_path, last);
        if (options.stop_after_epoch && epoch >= *options.stop_after_epoch) break;
    }
    return result;
}

}  // namespace cmc
