#include "cmc/eval/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "cmc/core/error.hpp"

namespace cmc {

Real f1_from_counts(long tp, long fp, long fn) {
    const long denom = 2 * tp + fp + fn;
    return denom == 0 ? Real(0) : Real(2 * tp) / Real(denom);
}

Real macro_f1(std::span<const Real> per_class) {
    if (per_class.empty()) throw InvalidArgument("macro F1 of no classes");
    return std::accumulate(per_class.begin(), per_class.end(), Real(0)) / Real(per_class.size());
}

EvalReport f1_scores(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.empty()) throw InvalidArgument("f1_scores on empty input");
    if (predictions.size() != labels.size()) throw InvalidArgument("predictions/labels length mismatch");
    EvalReport r;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] > 1 || predictions[i] < 0 || predictions[i] > 1)
            throw InvalidArgument("labels and predictions must be 0 or 1");
        ++r.confusion[labels[i]][predictions[i]];
    }
    for (int c = 0; c < 2; ++c) {
        const long tp = r.confusion[c][c];
        const long fp = r.confusion[1 - c][c];
        const long fn = r.confusion[c][1 - c];
        r.f1_per_class[c] = f1_from_counts(tp, fp, fn);
    }
    r.macro_f1 = macro_f1(r.f1_per_class);
    return r;
}

RocCurve roc_auc(std::span<const Real> scores, std::span<const int> labels) {
    if (scores.size() != labels.size() || scores.empty()) throw InvalidArgument("scores/labels length mismatch");
    long pos = 0, neg = 0;
    for (int l : labels) (l == 1 ? pos : neg) += 1;
    if (pos == 0 || neg == 0) throw UndefinedMetric("ROC/AUC undefined when only one class is present");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

    RocCurve c;
    c.points.push_back({0, 0});
    long tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const Real s = scores[order[i]];
        for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] == 1 ? tp : fp) += 1;
        c.points.push_back({Real(fp) / Real(neg), Real(tp) / Real(pos)});
    }
    for (std::size_t k = 1; k < c.points.size(); ++k)
        c.auc += (c.points[k].fpr - c.points[k - 1].fpr) * (c.points[k].tpr + c.points[k - 1].tpr) / 2;
    return c;
}

EvalReport evaluate_probabilities(const Matrix& probabilities, std::span<const int> labels) {
    if (probabilities.cols() != 2 || probabilities.rows() != Index(labels.size()))
        throw InvalidArgument("probabilities must be (B, 2) with one label per row");
    std::vector<int> pred(labels.size());
    for (Index i = 0; i < probabilities.rows(); ++i) pred[i] = probabilities(i, 1) > probabilities(i, 0) ? 1 : 0;
    EvalReport r = f1_scores(pred, labels);
    const bool both = std::find(labels.begin(), labels.end(), 0) != labels.end() &&
                      std::find(labels.begin(), labels.end(), 1) != labels.end();
    if (!both) return r;
    for (int c = 0; c < 2; ++c) {
        std::vector<Real> s(labels.size());
        std::vector<int> y(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            s[i] = probabilities(Index(i), c);
            y[i] = labels[i] == c ? 1 : 0;
        }
        auto roc = roc_auc(s, y);
        r.auc_per_class[c] = roc.auc;
        r.roc_points[c] = std::move(roc.points);
    }
    r.has_roc = true;
    return r;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["f1_per_class"] = f1_per_class;
    j["macro_f1"] = macro_f1;
    j["confusion"] = confusion;
    j["samples"] = samples();
    if (has_roc) j["auc_per_class"] = auc_per_class;
    return j;
}

}  // namespace cmc
