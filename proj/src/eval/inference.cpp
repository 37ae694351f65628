#include "cmc/eval/inference.hpp"

#include <cstdio>

#pragma GCC diagnostic push
#pragma GCC diagnostic ignored "-Wdeprecated-enum-enum-conversion"
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#pragma GCC diagnostic pop

#include "cmc/core/random.hpp"
#include "cmc/volume/resample.hpp"

namespace cmc {

RowVector predict_prepared(const Model& model, const CTVolume& prepared) {
    nn::NoGradGuard guard;
    const auto out = model.forward(prepared);
    return softmax_rows(out.logits->value).row(0);
}

RowVector predict(const Model& model, const CTVolume& v, const AugmentationPolicy& policy) {
    return predict_prepared(model, eval_transform(v, policy));
}

RowVector average_probabilities(std::span<const RowVector> rows) {
    if (rows.empty()) throw InvalidArgument("nothing to average");
    RowVector sum = RowVector::Zero(rows[0].size());
    for (const auto& r : rows) {
        if (r.size() != sum.size()) throw InvalidArgument("probability rows differ in length");
        sum += r;
    }
    return sum / Real(rows.size());
}

RowVector predict_tta(const Model& model, const CTVolume& v, const AugmentationPolicy& policy, int n_views,
                      std::uint64_t seed) {
    if (n_views < 1) throw InvalidArgument("n_views must be >= 1");
    const CTVolume base = eval_transform(v, policy);
    std::vector<RowVector> rows{predict_prepared(model, base)};
    const auto tta = tta_policy(policy);
    auto rng = derive_rng({seed, 0x77A});
    for (int k = 0; k < n_views; ++k) rows.push_back(predict_prepared(model, augment(base, tta, rng)));
    return average_probabilities(rows);
}

RowVector ensemble_predict(std::span<const EnsembleMember> members, const CTVolume& v, int tta_views,
                           std::uint64_t seed) {
    if (members.empty()) throw InvalidArgument("ensemble needs at least one model");
    std::vector<RowVector> rows;
    for (const auto& m : members) {
        if (!m.model) throw InvalidArgument("null ensemble member");
        rows.push_back(tta_views > 0 ? predict_tta(*m.model, v, m.policy, tta_views, seed)
                                     : predict(*m.model, v, m.policy));
    }
    return average_probabilities(rows);
}

CAMVolume cam_from_features(const Matrix& features, const Shape3& grid, const RowVector& class_weights,
                            const Shape3& output, int target_class) {
    if (features.rows() != grid.voxels() || features.cols() != class_weights.size())
        throw InvalidArgument("feature grid does not match its shape or the classifier width");
    Volume<Real> coarse(grid);
    coarse.array() = (features * class_weights.transpose()).array().max(0.0);
    CAMVolume cam;
    cam.target_class = target_class;
    cam.heatmap = interpolate_grid(coarse, output);
    const Real lo = cam.heatmap.array().minCoeff(), hi = cam.heatmap.array().maxCoeff();
    if (hi - lo <= Real(0))
        cam.heatmap.array().setZero();
    else
        cam.heatmap.array() = (cam.heatmap.array() - lo) / (hi - lo);
    return cam;
}

CAMVolume compute_cam(const Model& model, const CTVolume& prepared, int target_class) {
    if (target_class < 0 || target_class >= model.config().classes) throw InvalidArgument("target class out of range");
    nn::NoGradGuard guard;
    const auto grid = model.encode_grid(prepared);
    const RowVector w = model.parameters().find("classifier.weight")->var->value.row(target_class);
    return cam_from_features(grid->value, grid->grid, w, prepared.shape(), target_class);
}

void write_cam_overlays(const CTVolume& prepared, const CAMVolume& cam, const std::filesystem::path& dir) {
    if (!(cam.heatmap.shape() == prepared.shape())) throw InvalidArgument("heatmap and volume shapes differ");
    std::filesystem::create_directories(dir);
    for (int t = 0; t < prepared.depth(); ++t) {
        cv::Mat gray(prepared.height(), prepared.width(), CV_8U), heat(prepared.height(), prepared.width(), CV_8U);
        for (int y = 0; y < prepared.height(); ++y)
            for (int x = 0; x < prepared.width(); ++x) {
                gray.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(prepared(t, y, x) * 255.0);
                heat.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(cam.heatmap(t, y, x) * 255.0);
            }
        cv::Mat base, colored, blended;
        cv::cvtColor(gray, base, cv::COLOR_GRAY2BGR);
        cv::applyColorMap(heat, colored, cv::COLORMAP_HOT);
        cv::addWeighted(colored, 0.4, base, 0.6, 0.0, blended);
        char name[32];
        std::snprintf(name, sizeof name, "cam_%04d.png", t);
        cv::imwrite((dir / name).string(), blended);
    }
}

}  // namespace cmc
