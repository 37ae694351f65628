#pragma once

#include <algorithm>
#include <string>

#include <Eigen/Dense>

#include "cmc/core/error.hpp"
#include "cmc/core/types.hpp"

namespace cmc {

/// Extent of a volume as (depth, height, width); depth is the slice axis.
struct Shape3 {
    int depth = 0;
    int height = 0;
    int width = 0;

    Index voxels() const noexcept { return Index(depth) * height * width; }
    bool operator==(const Shape3&) const = default;
    std::string str() const {
        return "(" + std::to_string(depth) + "," + std::to_string(height) + "," +
               std::to_string(width) + ")";
    }
};

/// Dense voxel grid stored slice-major, row-major within a slice.
template <typename Scalar>
class Volume {
public:
    using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    using SliceMap = Eigen::Map<MatrixX<Scalar>>;
    using ConstSliceMap = Eigen::Map<const MatrixX<Scalar>>;

    Volume() = default;
    explicit Volume(Shape3 shape, Scalar fill = Scalar(0)) : shape_(shape) {
        if (shape.depth < 1 || shape.height < 1 || shape.width < 1)
            throw InvalidArgument("volume dims must be >= 1, got " + shape.str());
        data_ = Storage::Constant(shape.voxels(), fill);
    }

    const Shape3& shape() const noexcept { return shape_; }
    int depth() const noexcept { return shape_.depth; }
    int height() const noexcept { return shape_.height; }
    int width() const noexcept { return shape_.width; }
    Index size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.size() == 0; }

    Scalar& operator()(int t, int y, int x) { return data_[offset(t, y, x)]; }
    Scalar operator()(int t, int y, int x) const { return data_[offset(t, y, x)]; }

    Storage& array() noexcept { return data_; }
    const Storage& array() const noexcept { return data_; }
    Scalar* data() noexcept { return data_.data(); }
    const Scalar* data() const noexcept { return data_.data(); }

    SliceMap slice(int t) {
        return SliceMap(data_.data() + Index(t) * plane(), shape_.height, shape_.width);
    }
    ConstSliceMap slice(int t) const {
        return ConstSliceMap(data_.data() + Index(t) * plane(), shape_.height, shape_.width);
    }

    Index plane() const noexcept { return Index(shape_.height) * shape_.width; }

    template <typename Other>
    Volume<Other> cast() const {
        Volume<Other> out(shape_);
        out.array() = data_.template cast<Other>();
        out.scan_id = scan_id;
        return out;
    }

    bool operator==(const Volume& o) const {
        return shape_ == o.shape_ && (data_ == o.data_).all();
    }

    std::string scan_id;

private:
    Index offset(int t, int y, int x) const noexcept {
        return (Index(t) * shape_.height + y) * shape_.width + x;
    }

    Shape3 shape_{};
    Storage data_;
};

using CTVolume = Volume<Real>;
using Mask = Volume<std::uint8_t>;

/// Box inside a volume, half-open on every axis.
struct Box3 {
    int z0 = 0, z1 = 0, y0 = 0, y1 = 0, x0 = 0, x1 = 0;

    Index voxels() const noexcept {
        return Index(std::max(0, z1 - z0)) * std::max(0, y1 - y0) * std::max(0, x1 - x0);
    }
    bool within(const Shape3& s) const noexcept {
        return 0 <= z0 && z0 <= z1 && z1 <= s.depth && 0 <= y0 && y0 <= y1 &&
               y1 <= s.height && 0 <= x0 && x0 <= x1 && x1 <= s.width;
    }
    bool contains(int z, int y, int x) const noexcept {
        return z0 <= z && z < z1 && y0 <= y && y < y1 && x0 <= x && x < x1;
    }
    bool operator==(const Box3&) const = default;
};

}  // namespace cmc
