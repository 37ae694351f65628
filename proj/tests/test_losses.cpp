#include <doctest.h>

#include "cmc/core/random.hpp"
#include "loss_oracles.hpp"
#include "test_support.hpp"

using namespace cmc;
using namespace cmc::loss;
using cmc::testing::numeric_gradient;
using cmc::testing::relative_error;
using LD = long double;

namespace {

MatrixX<LD> unit_rows(Index n, Index d, Rng& rng) {
    MatrixX<LD> z = cmc::testing::random_matrix(n, d, rng).cast<LD>();
    for (Index i = 0; i < n; ++i) z.row(i) /= z.row(i).norm();
    return z;
}

std::vector<int> random_labels(Index n, Rng& rng) {
    std::vector<int> l(n);
    for (auto& x : l) x = uniform_int(rng, 0, 1);
    return l;
}

}  // namespace

TEST_CASE("supcon matches the literal summation oracle") {
    Rng rng(1);
    for (auto reading : {PositiveCount::Scans, PositiveCount::Batch})
        for (int trial = 0; trial < 30; ++trial) {
            const Index n = 2 * uniform_int(rng, 1, 4);
            const auto z = unit_rows(n, uniform_int(rng, 2, 16), rng);
            const auto labels = random_labels(n, rng);
            const LD tau = uniform(rng, 0.05, 1.0);
            const auto r = supcon_loss<LD>(z, labels, tau, {reading});
            const auto oracle = cmc::testing::supcon_oracle<LD>(z, labels, tau, reading);
            for (Index i = 0; i < n; ++i) CHECK(double(std::abs(r.per_sample[i] - oracle[i])) < 1e-12);
        }
}

TEST_CASE("supcon positive-count readings") {
    // Two scans of class 0 (four rows) and one of class 1 (two rows): under
    // the scan reading an anchor of class 0 divides by 2*2-1 = 3, under the
    // batch reading by 2*4-1 = 7.
    Rng rng(2);
    const auto z = unit_rows(6, 4, rng);
    const std::vector<int> labels{0, 0, 0, 0, 1, 1};
    const auto scans = supcon_loss<LD>(z, labels, 0.1L, {PositiveCount::Scans});
    const auto batch = supcon_loss<LD>(z, labels, 0.1L, {PositiveCount::Batch});
    CHECK(double(std::abs(scans.per_sample[0] * 3 - batch.per_sample[0] * 7)) < 1e-12);
    CHECK(double(std::abs(scans.per_sample[4] * 1 - batch.per_sample[4] * 3)) < 1e-12);
}

TEST_CASE("supcon edge cases") {
    Rng rng(3);
    const auto z = unit_rows(4, 3, rng);
    const std::vector<int> lonely{0, 1, 1, 1};
    const auto r = supcon_loss<LD>(z, lonely, 0.5L);
    CHECK(r.per_sample[0] == 0);
    CHECK(std::isfinite(double(r.per_sample.sum())));
    CHECK_THROWS_AS(supcon_loss<LD>(z, lonely, 0.0L), InvalidArgument);
    CHECK_THROWS_AS(supcon_loss<LD>(z, lonely, -1.0L), InvalidArgument);
    MatrixX<LD> off = z;
    off.row(1) *= 2;
    CHECK_THROWS_AS(supcon_loss<LD>(off, lonely, 0.5L), InvalidArgument);
}

TEST_CASE("supcon is invariant to a common row permutation") {
    Rng rng(4);
    const auto z = unit_rows(6, 5, rng);
    const auto labels = std::vector<int>{0, 1, 0, 1, 1, 0};
    const std::vector<int> perm{3, 0, 5, 1, 4, 2};
    MatrixX<LD> zp(6, 5);
    std::vector<int> lp(6);
    for (int i = 0; i < 6; ++i) {
        zp.row(i) = z.row(perm[i]);
        lp[i] = labels[perm[i]];
    }
    const auto a = supcon_loss<LD>(z, labels, 0.2L), b = supcon_loss<LD>(zp, lp, 0.2L);
    CHECK(double(std::abs(a.per_sample.sum() - b.per_sample.sum())) < 1e-15);
}

TEST_CASE("supcon gradient matches finite differences") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Index n = 2 * uniform_int(rng, 1, 4);
        const auto z = unit_rows(n, uniform_int(rng, 2, 16), rng);
        const auto labels = random_labels(n, rng);
        const LD tau = uniform(rng, 0.1, 1.0);
        const SupConOptions opt{trial % 2 ? PositiveCount::Batch : PositiveCount::Scans, false};
        const auto analytic = supcon_loss<LD>(z, labels, tau, opt).grad;
        const auto numeric = numeric_gradient<LD>(
            [&](const MatrixX<LD>& x) { return supcon_loss<LD>(x, labels, tau, opt).per_sample.sum(); }, z, 1e-6L);
        CHECK(double(relative_error(analytic, numeric)) < 1e-7);
    }
}

TEST_CASE("soft cross entropy value and gradient") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const Index c = uniform_int(rng, 2, 5);
        RowVectorX<LD> logits = cmc::testing::random_matrix(1, c, rng, 3.0).cast<LD>();
        RowVectorX<LD> y(c);
        for (Index k = 0; k < c; ++k) y[k] = uniform(rng, 0.0, 1.0);
        y /= y.sum();
        const auto r = soft_cross_entropy<LD>(logits, y);
        CHECK(double(std::abs(r.value - cmc::testing::soft_ce_oracle<LD>(logits, y))) < 1e-15);
        const MatrixX<LD> numeric = numeric_gradient<LD>(
            [&](const MatrixX<LD>& x) { return soft_cross_entropy<LD>(RowVectorX<LD>(x), y).value; },
            MatrixX<LD>(logits), 1e-6L);
        CHECK(double(relative_error(MatrixX<LD>(r.grad), numeric)) < 1e-7);
    }
    RowVectorX<LD> bad(2);
    bad << 0.7L, 0.7L;
    CHECK_THROWS_AS(soft_cross_entropy<LD>(RowVectorX<LD>::Zero(2), bad), InvalidArgument);
}

TEST_CASE("total loss equals the component-sum oracle and differentiates") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Index n = 2 * uniform_int(rng, 1, 4);
        const auto z = unit_rows(n, 6, rng);
        const auto labels = random_labels(n, rng);
        const MatrixX<LD> raw = cmc::testing::random_matrix(n, 2, rng).cast<LD>();
        const MatrixX<LD> mixed = cmc::testing::random_matrix(n, 2, rng).cast<LD>();
        MatrixX<LD> soft(n, 2);
        for (Index i = 0; i < n; ++i) {
            const LD lam = uniform(rng, 0.0, 1.0);
            soft(i, 0) = lam;
            soft(i, 1) = 1 - lam;
        }
        const LossWeights w{uniform(rng, 0.1, 2.0), uniform(rng, 0.1, 2.0), uniform(rng, 0.1, 2.0)};
        const LD tau = 0.3L;
        const SupConOptions opt{PositiveCount::Scans, false};
        const auto r = total_loss<LD>(z, raw, labels, mixed, soft, tau, w, opt);

        const auto con = cmc::testing::supcon_oracle<LD>(z, labels, tau, PositiveCount::Scans);
        LD sum = 0;
        for (Index i = 0; i < n; ++i) {
            RowVectorX<LD> onehot = RowVectorX<LD>::Zero(2);
            onehot[labels[i]] = 1;
            sum += LD(w.contrastive) * con[i] + LD(w.mixup) * cmc::testing::soft_ce_oracle<LD>(mixed.row(i), soft.row(i)) +
                   LD(w.classification) * cmc::testing::soft_ce_oracle<LD>(raw.row(i), onehot);
        }
        CHECK(double(std::abs(r.l_total - sum / LD(n))) < 1e-15);

        auto total = [&](const MatrixX<LD>& zz, const MatrixX<LD>& rr, const MatrixX<LD>& mm) {
            return total_loss<LD>(zz, rr, labels, mm, soft, tau, w, opt).l_total;
        };
        const LD h = 1e-6L;
        CHECK(double(relative_error(r.grad_z, numeric_gradient<LD>([&](const MatrixX<LD>& x) { return total(x, raw, mixed); }, z, h))) < 1e-7);
        CHECK(double(relative_error(r.grad_raw_logits, numeric_gradient<LD>([&](const MatrixX<LD>& x) { return total(z, x, mixed); }, raw, h))) < 1e-7);
        CHECK(double(relative_error(r.grad_mixed_logits, numeric_gradient<LD>([&](const MatrixX<LD>& x) { return total(z, raw, x); }, mixed, h))) < 1e-7);
    }
}

TEST_CASE("total loss on a fixed batch is deterministic") {
    Rng rng(8);
    const auto z = unit_rows(4, 3, rng);
    const std::vector<int> labels{0, 0, 1, 1};
    const MatrixX<LD> raw = cmc::testing::random_matrix(4, 2, rng).cast<LD>();
    MatrixX<LD> soft(4, 2);
    soft.setConstant(0.5L);
    const auto a = total_loss<LD>(z, raw, labels, raw, soft, 0.1L);
    const auto b = total_loss<LD>(z, raw, labels, raw, soft, 0.1L);
    CHECK(a.l_total == b.l_total);
    CHECK(a.grad_z == b.grad_z);
}
