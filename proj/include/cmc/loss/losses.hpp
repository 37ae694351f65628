#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <span>
#include <vector>

#include "cmc/core/error.hpp"
#include "cmc/core/types.hpp"

namespace cmc::loss {

/// How the positive-count normaliser of the contrastive loss is read.
/// `Scans`: N_y counts original scans of class y, so 2N_y - 1 equals the
/// anchor's positive count when both views of every scan are present.
/// `Batch`: N_y counts rows of class y in the 2N batch.
enum class PositiveCount { Scans, Batch };

struct SupConOptions {
    PositiveCount positives = PositiveCount::Scans;
    /// Reject rows whose L2 norm is off by more than 1e-6.
    bool require_unit_rows = true;
};

template <typename Scalar>
struct SupConResult {
    VectorX<Scalar> per_sample;
    /// d(sum_i per_sample_i) / dz
    MatrixX<Scalar> grad;
};

/// Supervised contrastive loss over the rows of z with temperature tau.
/// For anchor i the positives are every j != i sharing its label; the
/// log-softmax runs over every k != i. Anchors without positives give 0.
template <typename Scalar>
SupConResult<Scalar> supcon_loss(const MatrixX<Scalar>& z, std::span<const int> labels, Scalar tau,
                                 const SupConOptions& opt = {}) {
    const Index n = z.rows();
    if (!(tau > 0)) throw InvalidArgument("temperature must be > 0");
    if (n < 2) throw InvalidArgument("contrastive loss needs at least 2 rows");
    if (Index(labels.size()) != n) throw InvalidArgument("labels/rows size mismatch");
    if (opt.require_unit_rows)
        for (Index i = 0; i < n; ++i)
            if (std::abs(z.row(i).norm() - Scalar(1)) > Scalar(1e-6))
                throw InvalidArgument("projection row " + std::to_string(i) + " is not unit-norm");

    const MatrixX<Scalar> sim = (z * z.transpose()) / tau;
    MatrixX<Scalar> g = MatrixX<Scalar>::Zero(n, n);
    SupConResult<Scalar> out;
    out.per_sample = VectorX<Scalar>::Zero(n);

    for (Index i = 0; i < n; ++i) {
        Index same = 0;
        for (Index j = 0; j < n; ++j) same += labels[j] == labels[i];
        const Index positives = same - 1;
        if (positives == 0) continue;
        const Scalar denom = opt.positives == PositiveCount::Scans ? Scalar(same - 1) : Scalar(2 * same - 1);

        Scalar m = -std::numeric_limits<Scalar>::infinity();
        for (Index k = 0; k < n; ++k)
            if (k != i) m = std::max(m, sim(i, k));
        Scalar acc = 0;
        for (Index k = 0; k < n; ++k)
            if (k != i) acc += std::exp(sim(i, k) - m);
        const Scalar lse = m + std::log(acc);

        Scalar pos_sum = 0;
        for (Index j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) pos_sum += sim(i, j);
        out.per_sample[i] = -(pos_sum - Scalar(positives) * lse) / denom;

        for (Index k = 0; k < n; ++k) {
            if (k == i) continue;
            const Scalar softmax = std::exp(sim(i, k) - lse);
            const Scalar is_pos = labels[k] == labels[i] ? Scalar(1) : Scalar(0);
            g(i, k) = -(is_pos - Scalar(positives) * softmax) / denom;
        }
    }
    out.grad = ((g + g.transpose()) * z) / tau;
    return out;
}

template <typename Scalar>
struct CrossEntropyResult {
    Scalar value = 0;
    RowVectorX<Scalar> grad;  // d value / d logits
};

/// -sum_c y_c log softmax(logits)_c for a label on the probability simplex.
template <typename Scalar>
CrossEntropyResult<Scalar> soft_cross_entropy(const RowVectorX<Scalar>& logits, const RowVectorX<Scalar>& soft_label) {
    if (logits.size() != soft_label.size() || logits.size() < 1)
        throw InvalidArgument("logits/label size mismatch");
    if ((soft_label.array() < Scalar(-1e-6)).any() || std::abs(soft_label.sum() - Scalar(1)) > Scalar(1e-6))
        throw InvalidArgument("soft label is off the probability simplex");
    const Scalar m = logits.maxCoeff();
    const Scalar lse = m + std::log((logits.array() - m).exp().sum());
    CrossEntropyResult<Scalar> r;
    r.value = -(soft_label.array() * (logits.array() - lse)).sum();
    const RowVectorX<Scalar> p = (logits.array() - lse).exp().matrix();
    r.grad = p * soft_label.sum() - soft_label;
    return r;
}

struct LossWeights {
    double contrastive = 1.0;
    double mixup = 1.0;
    double classification = 1.0;
};

template <typename Scalar>
struct LossReport {
    Scalar l_con = 0, l_mix = 0, l_clf = 0, l_total = 0;
    VectorX<Scalar> con, mix, clf;  // per-sample components
    MatrixX<Scalar> grad_z, grad_raw_logits, grad_mixed_logits;  // of l_total
};

/// Joint objective over 2N raw rows and 2N mixed rows:
///   l_total = (1/2N) sum_i (w_con L_con^i + w_mix L_mix^i + w_clf L_clf^i)
/// with the contrastive term on the raw projections, the classification
/// term on raw logits against one-hot labels and the mixup term on mixed
/// logits against their soft labels.
template <typename Scalar>
LossReport<Scalar> total_loss(const MatrixX<Scalar>& z, const MatrixX<Scalar>& raw_logits, std::span<const int> labels,
                              const MatrixX<Scalar>& mixed_logits, const MatrixX<Scalar>& mixed_labels, Scalar tau,
                              const LossWeights& w = {}, const SupConOptions& opt = {}) {
    const Index n = z.rows();
    if (raw_logits.rows() != n || mixed_logits.rows() != n || mixed_labels.rows() != n || Index(labels.size()) != n)
        throw InvalidArgument("raw and mixed row counts must match");
    LossReport<Scalar> r;
    auto con = supcon_loss<Scalar>(z, labels, tau, opt);
    r.con = con.per_sample;
    r.mix.resize(n);
    r.clf.resize(n);
    r.grad_raw_logits.resize(n, raw_logits.cols());
    r.grad_mixed_logits.resize(n, mixed_logits.cols());
    for (Index i = 0; i < n; ++i) {
        RowVectorX<Scalar> onehot = RowVectorX<Scalar>::Zero(raw_logits.cols());
        if (labels[i] < 0 || labels[i] >= raw_logits.cols()) throw InvalidArgument("label out of range");
        onehot[labels[i]] = 1;
        auto clf = soft_cross_entropy<Scalar>(raw_logits.row(i), onehot);
        auto mix = soft_cross_entropy<Scalar>(mixed_logits.row(i), mixed_labels.row(i));
        r.clf[i] = clf.value;
        r.mix[i] = mix.value;
        r.grad_raw_logits.row(i) = clf.grad * Scalar(w.classification) / Scalar(n);
        r.grad_mixed_logits.row(i) = mix.grad * Scalar(w.mixup) / Scalar(n);
    }
    r.grad_z = con.grad * Scalar(w.contrastive) / Scalar(n);
    r.l_con = r.con.mean();
    r.l_mix = r.mix.mean();
    r.l_clf = r.clf.mean();
    r.l_total = (Scalar(w.contrastive) * r.con + Scalar(w.mixup) * r.mix + Scalar(w.classification) * r.clf).sum() /
                Scalar(n);
    return r;
}

}  // namespace cmc::loss
