// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <string>

namespace tsplat {

template <typename S> using Vec2 = Eigen::Matrix<S, 2, 1>;
template <typename S> using Vec3 = Eigen::Matrix<S, 3, 1>;
template <typename S> using Vec4 = Eigen::Matrix<S, 4, 1>;
template <typename S> using Mat2 = Eigen::Matrix<S, 2, 2>;
template <typename S> using Mat3 = Eigen::Matrix<S, 3, 3>;
template <typename S> using Mat4 = Eigen::Matrix<S, 4, 4>;
template <typename S> using Mat23 = Eigen::Matrix<S, 2, 3>;
template <typename S> using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Row-per-element table with a fixed number of columns (N x C, row-major).
template <typename S, int C>
using Rows = Eigen::Matrix<S, Eigen::Dynamic, C, (C == 1 ? Eigen::ColMajor : Eigen::RowMajor)>;

/// Row-major dynamic matrix; used for weights, plane grids and batched activations.
template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Flags = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

/// Reductions accumulate in double regardless of the working scalar.
using Accum = double;

/// Number of SH coefficients for degree 3 and the count excluding the DC band.
inline constexpr int kShCoeffs = 16;
inline constexpr int kShRest = 15;

/// A dense H x W raster with C channels stored pixel-major: row (y * width + x), column c.
template <typename T>
struct Raster {
    int width = 0;
    int height = 0;
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> data;

    Raster() = default;
    Raster(int w, int h, int channels, T fill = T(0))
        : width(w), height(h), data(static_cast<Eigen::Index>(w) * h, channels) {
        data.setConstant(fill);
    }

    [[nodiscard]] int channels() const { return static_cast<int>(data.cols()); }
    [[nodiscard]] Eigen::Index pixels() const { return data.rows(); }
    [[nodiscard]] Eigen::Index index(int x, int y) const {
        return static_cast<Eigen::Index>(y) * width + x;
    }
    T& operator()(int x, int y, int c = 0) { return data(index(x, y), c); }
    const T& operator()(int x, int y, int c = 0) const { return data(index(x, y), c); }
    [[nodiscard]] bool same_shape(const Raster& o) const {
        return width == o.width && height == o.height && channels() == o.channels();
    }
};

template <typename S> using Image = Raster<S>;
using Mask = Raster<std::uint8_t>;

enum class Mode { TissueOnly, FullScene };

const char* to_string(Mode mode);
Mode mode_from_string(const std::string& s);

} // namespace tsplat
