#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cmc/core/types.hpp"

namespace cmc {

struct RocPoint {
    Real fpr = 0;
    Real tpr = 0;
};

struct RocCurve {
    std::vector<RocPoint> points;
    Real auc = 0;
};

/// Binary classification report. Scores are fractions in [0, 1];
/// confusion[true][predicted].
struct EvalReport {
    std::array<Real, 2> f1_per_class{};
    Real macro_f1 = 0;
    std::array<Real, 2> auc_per_class{};
    std::array<std::vector<RocPoint>, 2> roc_points;
    std::array<std::array<long, 2>, 2> confusion{};
    bool has_roc = false;

    long samples() const { return confusion[0][0] + confusion[0][1] + confusion[1][0] + confusion[1][1]; }
    nlohmann::json to_json() const;
};

/// F1 = 2TP / (2TP + FP + FN), with 0 when the denominator is 0.
Real f1_from_counts(long tp, long fp, long fn);

/// Unweighted mean of per-class F1 scores.
Real macro_f1(std::span<const Real> per_class);

/// Per-class F1, macro F1 and the confusion matrix.
EvalReport f1_scores(std::span<const int> predictions, std::span<const int> labels);

/// ROC of `scores` for the positive class against binary labels
/// (1 = positive). Tied scores form one step, so the trapezoidal AUC
/// equals the rank-averaged Mann-Whitney statistic. Throws UndefinedMetric
/// when only one class is present.
RocCurve roc_auc(std::span<const Real> scores, std::span<const int> labels);

/// F1 from argmax of `probabilities` (B x 2) plus per-class ROC/AUC. ROC is
/// skipped (has_roc = false) when only one class is present.
EvalReport evaluate_probabilities(const Matrix& probabilities, std::span<const int> labels);

}  // namespace cmc
