#include "cmc/volume/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <array>
#include <cstdio>

#include "cmc/core/random.hpp"

namespace cmc {

namespace {

struct Ellipsoid {
    double cz, cy, cx;
    double rz, ry, rx;

    double radial2(double z, double y, double x) const {
        const double dz = (z - cz) / rz, dy = (y - cy) / ry, dx = (x - cx) / rx;
        return dz * dz + dy * dy + dx * dx;
    }
};

void validate(const PhantomConfig& c) {
    const auto& s = c.size;
    if (s.depth < 1 || s.height < 8 || s.width < 8)
        throw InvalidConfig("phantom size must be at least (1,8,8), got " + s.str());
    if (c.lesion_count_min < 1 || c.lesion_count_max < c.lesion_count_min)
        throw InvalidConfig("lesion count range must satisfy 1 <= min <= max");
    if (!(c.lesion_radius_min > 0 && c.lesion_radius_max >= c.lesion_radius_min))
        throw InvalidConfig("lesion radius range must satisfy 0 < min <= max");
    if (!(c.lesion_intensity_min <= c.lesion_intensity_max && c.lesion_intensity_max <= 1.0))
        throw InvalidConfig("lesion intensity range must lie in [0,1]");
    // Half-maximum voxels must clear the lung band.
    const double floor_value = c.lung_intensity + 0.5 * (c.lesion_intensity_min - c.lung_intensity) - c.noise;
    if (floor_value <= lung_band_max(c))
        throw InvalidConfig("lesion intensity too close to lung tissue band");
}

}  // namespace

double lung_band_max(const PhantomConfig& cfg) {
    // One 8-bit quantization step of headroom.
    return cfg.lung_intensity + cfg.noise + 1.0 / 255.0;
}

PhantomConfig phantom_for_index(PhantomConfig base, std::uint64_t dataset_seed, int index) {
    base.seed = mix64(dataset_seed ^ mix64(std::uint64_t(index) + 0x51ED));
    return base;
}

Phantom generate_phantom(const PhantomConfig& cfg, int label) {
    if (label != 0 && label != 1) throw InvalidArgument("phantom class must be 0 or 1");
    validate(cfg);
    const Shape3 s = cfg.size;
    auto rng = derive_rng({cfg.seed, 0xC7});

    Phantom p;
    p.volume = CTVolume(s, 0.0);
    p.lung_mask = Mask(s, 0);
    p.lesion_mask = Mask(s, 0);

    const double zc = (s.depth - 1) / 2.0;
    const double body_ry = 0.46 * s.height, body_rx = 0.47 * s.width;
    const double yc = (s.height - 1) / 2.0, xc = (s.width - 1) / 2.0;

    auto jitter = [&] { return 1.0 + uniform(rng, -cfg.lung_jitter, cfg.lung_jitter); };
    const double rz = std::max(0.75, cfg.lung_radius_z * s.depth * jitter());
    std::array<Ellipsoid, 2> lungs{
        Ellipsoid{zc, yc, cfg.lung_center_x_left * (s.width - 1), rz, cfg.lung_radius_y * s.height * jitter(),
                  cfg.lung_radius_x * s.width * jitter()},
        Ellipsoid{zc, yc, cfg.lung_center_x_right * (s.width - 1), rz, cfg.lung_radius_y * s.height * jitter(),
                  cfg.lung_radius_x * s.width * jitter()}};
    if (s.depth == 1) lungs[0].rz = lungs[1].rz = 1.0;

    for (int t = 0; t < s.depth; ++t)
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x) {
                const double dy = (y - yc) / body_ry, dx = (x - xc) / body_rx;
                const double n = uniform(rng, -cfg.noise, cfg.noise);
                if (lungs[0].radial2(t, y, x) <= 1.0 || lungs[1].radial2(t, y, x) <= 1.0) {
                    p.lung_mask(t, y, x) = 1;
                    p.volume(t, y, x) = cfg.lung_intensity + n;
                } else if (dy * dy + dx * dx <= 1.0) {
                    p.volume(t, y, x) = cfg.body_intensity + n;
                }
            }

    if (label == 1) {
        auto in_lung_interior = [&](int t, int y, int x) {
            static constexpr int off[7][3] = {{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                              {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
            for (const auto& o : off) {
                const int tt = t + o[0], yy = y + o[1], xx = x + o[2];
                // Out-of-volume neighbours along a single-slice depth axis do not
                // break containment.
                if (tt < 0 || tt >= s.depth) {
                    if (s.depth == 1) continue;
                    return false;
                }
                if (yy < 0 || yy >= s.height || xx < 0 || xx >= s.width) return false;
                if (!p.lung_mask(tt, yy, xx)) return false;
            }
            return true;
        };

        const int count = uniform_int(rng, cfg.lesion_count_min, cfg.lesion_count_max);
        // Gaussian with the mask at half maximum: radius = sigma * sqrt(2 ln 2).
        const double half_max_k = std::sqrt(2.0 * std::log(2.0));
        for (int k = 0; k < count; ++k) {
            bool placed = false;
            for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
                const auto& lung = lungs[uniform_int(rng, 0, 1)];
                Ellipsoid blob{0, 0, 0, 0, 0, 0};
                const double r = uniform(rng, cfg.lesion_radius_min, cfg.lesion_radius_max) * s.height;
                blob.ry = r * uniform(rng, 0.85, 1.15);
                blob.rx = r * uniform(rng, 0.85, 1.15);
                blob.rz = std::max(0.6, cfg.lesion_depth_radius * s.depth * uniform(rng, 0.8, 1.2));
                blob.cz = uniform(rng, lung.cz - lung.rz + blob.rz, lung.cz + lung.rz - blob.rz);
                blob.cy = uniform(rng, lung.cy - lung.ry + blob.ry, lung.cy + lung.ry - blob.ry);
                blob.cx = uniform(rng, lung.cx - lung.rx + blob.rx, lung.cx + lung.rx - blob.rx);
                if (s.depth == 1) blob.cz = 0;

                const int z0 = std::max(0, int(std::floor(blob.cz - blob.rz))),
                          z1 = std::min(s.depth - 1, int(std::ceil(blob.cz + blob.rz)));
                const int y0 = std::max(0, int(std::floor(blob.cy - blob.ry))),
                          y1 = std::min(s.height - 1, int(std::ceil(blob.cy + blob.ry)));
                const int x0 = std::max(0, int(std::floor(blob.cx - blob.rx))),
                          x1 = std::min(s.width - 1, int(std::ceil(blob.cx + blob.rx)));
                std::vector<std::array<int, 3>> voxels;
                bool ok = true;
                for (int t = z0; t <= z1 && ok; ++t)
                    for (int y = y0; y <= y1 && ok; ++y)
                        for (int x = x0; x <= x1 && ok; ++x) {
                            if (blob.radial2(t, y, x) > 1.0) continue;
                            if (!in_lung_interior(t, y, x)) ok = false;
                            // Keep a one-voxel gap to earlier lesions so each
                            // lesion is its own connected component.
                            for (int dt = -1; dt <= 1 && ok; ++dt)
                                for (int dy = -1; dy <= 1 && ok; ++dy)
                                    for (int dx = -1; dx <= 1 && ok; ++dx) {
                                        const int tt = t + dt, yy = y + dy, xx = x + dx;
                                        if (tt < 0 || tt >= s.depth || yy < 0 || yy >= s.height || xx < 0 ||
                                            xx >= s.width)
                                            continue;
                                        if (p.lesion_mask(tt, yy, xx)) ok = false;
                                    }
                            voxels.push_back({t, y, x});
                        }
                if (!ok || voxels.empty()) continue;

                const double peak = uniform(rng, cfg.lesion_intensity_min, cfg.lesion_intensity_max);
                for (const auto& [t, y, x] : voxels) {
                    const double g = std::exp(-0.5 * blob.radial2(t, y, x) * half_max_k * half_max_k);
                    p.volume(t, y, x) = std::max(p.volume(t, y, x),
                                                 cfg.lung_intensity + (peak - cfg.lung_intensity) * g);
                    p.lesion_mask(t, y, x) = 1;
                }
                placed = true;
            }
            if (!placed)
                throw InvalidConfig("lesion geometry infeasible for phantom size " + s.str() +
                                    " (could not place lesion " + std::to_string(k + 1) + " of " +
                                    std::to_string(count) + ")");
        }
        p.lesion_count = count;
    }

    quantize_8bit(p.volume);
    char id[48];
    std::snprintf(id, sizeof id, "phantom_%016llx", static_cast<unsigned long long>(cfg.seed));
    p.volume.scan_id = id;
    p.record = ScanRecord{id, label, {}};
    return p;
}

}  // namespace cmc
