#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cmc/volume/volume.hpp"

namespace cmc {

/// Source window and in-plane rotation mapped onto an output plane.
/// The window is given in source pixel units; the rotation turns the
/// window about its own centre (radians).
struct PlaneWindow {
    double y0 = 0, x0 = 0;
    double height = 0, width = 0;
    double angle = 0;
};

namespace detail {

/// Linear interpolation taps for half-pixel-centred sampling along one axis.
struct Taps {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

inline void tap(double src, int n, int& lo, int& hi, double& frac) {
    src = std::clamp(src, 0.0, double(n - 1));
    lo = static_cast<int>(std::floor(src));
    hi = std::min(lo + 1, n - 1);
    frac = src - lo;
}

inline Taps axis_taps(int out, int in, double origin, double extent) {
    Taps t;
    t.lo.resize(out);
    t.hi.resize(out);
    t.frac.resize(out);
    const double step = extent / out;
    for (int i = 0; i < out; ++i) tap(origin + (i + 0.5) * step - 0.5, in, t.lo[i], t.hi[i], t.frac[i]);
    return t;
}

}  // namespace detail

/// Bilinear resample of one H×W plane onto an out_h×out_w grid. With a zero
/// angle the window is axis aligned and coordinates follow the half-pixel
/// convention exactly, so a full-frame window at the source size is an
/// identity map. Coordinates outside the source are clamped to the edge.
template <typename Scalar, typename Src, typename Dst>
void sample_plane(const Src& src, const PlaneWindow& win, Dst&& dst) {
    const int in_h = int(src.rows()), in_w = int(src.cols());
    const int out_h = int(dst.rows()), out_w = int(dst.cols());
    if (win.angle == 0.0) {
        const auto ty = detail::axis_taps(out_h, in_h, win.y0, win.height);
        const auto tx = detail::axis_taps(out_w, in_w, win.x0, win.width);
        for (int y = 0; y < out_h; ++y) {
            const double fy = ty.frac[y];
            for (int x = 0; x < out_w; ++x) {
                const double fx = tx.frac[x];
                const double top = (1 - fx) * double(src(ty.lo[y], tx.lo[x])) + fx * double(src(ty.lo[y], tx.hi[x]));
                const double bot = (1 - fx) * double(src(ty.hi[y], tx.lo[x])) + fx * double(src(ty.hi[y], tx.hi[x]));
                dst(y, x) = Scalar((1 - fy) * top + fy * bot);
            }
        }
        return;
    }
    const double c = std::cos(win.angle), s = std::sin(win.angle);
    const double cy = win.y0 + win.height / 2, cx = win.x0 + win.width / 2;
    const double sy = win.height / out_h, sx = win.width / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double v = (y + 0.5) * sy - win.height / 2;
        for (int x = 0; x < out_w; ++x) {
            const double u = (x + 0.5) * sx - win.width / 2;
            int y0, y1, x0, x1;
            double fy, fx;
            detail::tap(cy + s * u + c * v - 0.5, in_h, y0, y1, fy);
            detail::tap(cx + c * u - s * v - 0.5, in_w, x0, x1, fx);
            const double top = (1 - fx) * double(src(y0, x0)) + fx * double(src(y0, x1));
            const double bot = (1 - fx) * double(src(y1, x0)) + fx * double(src(y1, x1));
            dst(y, x) = Scalar((1 - fy) * top + fy * bot);
        }
    }
}

/// Trilinear resize with half-pixel-centred sampling. Output values are
/// clamped to [0, 1].
template <typename Scalar>
Volume<Scalar> resize_volume(const Volume<Scalar>& v, Shape3 target) {
    if (target.depth < 1 || target.height < 1 || target.width < 1)
        throw InvalidArgument("resize target dims must be >= 1, got " + target.str());
    if (v.empty()) throw InvalidArgument("resize of an empty volume");
    Volume<Scalar> out(target);
    out.scan_id = v.scan_id;
    const PlaneWindow full{0, 0, double(v.height()), double(v.width()), 0};
    const auto tz = detail::axis_taps(target.depth, v.depth(), 0, v.depth());
    MatrixX<Scalar> lo(target.height, target.width), hi(target.height, target.width);
    for (int t = 0; t < target.depth; ++t) {
        sample_plane<Scalar>(v.slice(tz.lo[t]), full, lo);
        auto dst = out.slice(t);
        const double f = tz.frac[t];
        if (f == 0.0) {
            dst = lo;
        } else {
            sample_plane<Scalar>(v.slice(tz.hi[t]), full, hi);
            dst = ((1 - f) * lo.template cast<double>() + f * hi.template cast<double>()).template cast<Scalar>();
        }
    }
    out.array() = out.array().max(Scalar(0)).min(Scalar(1));
    return out;
}

/// Trilinear upsampling of an arbitrary real grid (no clamping). Used for
/// CAM heatmaps.
template <typename Scalar>
Volume<Scalar> interpolate_grid(const Volume<Scalar>& v, Shape3 target) {
    Volume<Scalar> out(target);
    const PlaneWindow full{0, 0, double(v.height()), double(v.width()), 0};
    const auto tz = detail::axis_taps(target.depth, v.depth(), 0, v.depth());
    MatrixX<Scalar> lo(target.height, target.width), hi(target.height, target.width);
    for (int t = 0; t < target.depth; ++t) {
        sample_plane<Scalar>(v.slice(tz.lo[t]), full, lo);
        sample_plane<Scalar>(v.slice(tz.hi[t]), full, hi);
        const double f = tz.frac[t];
        out.slice(t) = ((1 - f) * lo.template cast<double>() + f * hi.template cast<double>()).template cast<Scalar>();
    }
    return out;
}

}  // namespace cmc
