#pragma once

// Shared geometry, the scan raster container, seeding, and the little image
// arithmetic the rest of the pipeline needs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace ionimp {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Two images (or an image and an aperture) do not share a geometry.
class GeometryMismatch : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Vectors
// ---------------------------------------------------------------------------

/// In-plane position or offset, nanometers.
struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    constexpr Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
    constexpr Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }
    friend constexpr Vec2 operator+(Vec2 a, const Vec2& b) { return a += b; }
    friend constexpr Vec2 operator-(Vec2 a, const Vec2& b) { return a -= b; }
    friend constexpr Vec2 operator*(double s, const Vec2& v) { return {s * v.x, s * v.y}; }
    friend constexpr bool operator==(const Vec2&, const Vec2&) = default;
};

inline double norm(const Vec2& v) { return std::hypot(v.x, v.y); }

/// Three-component vector; used for crystal directions (dimensionless).
struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend constexpr Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend constexpr Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend constexpr Vec3 operator*(double s, const Vec3& v) { return {s * v.x, s * v.y, s * v.z}; }
    friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

inline Vec3 normalized(const Vec3& v) {
    const double n = norm(v);
    if (!(n > 0.0)) throw InvalidArgument("cannot normalize a zero vector");
    return (1.0 / n) * v;
}

// ---------------------------------------------------------------------------
// Deterministic randomness
// ---------------------------------------------------------------------------

/// Explicit seed handed to every stochastic operation.
struct Seed {
    std::uint64_t value = 0;
    friend constexpr bool operator==(const Seed&, const Seed&) = default;
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Child seed for a named sub-stream. Pure function of (parent, stream).
constexpr Seed derive(Seed parent, std::uint64_t stream) {
    return Seed{splitmix64(parent.value ^ splitmix64(stream + 0x632be59bd9b4e019ULL))};
}

/// Small counter-based engine (SplitMix64). Satisfies UniformRandomBitGenerator,
/// so it plugs into the <random> distributions. Cheap to construct, which is
/// what per-pixel seeding needs.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit constexpr Rng(Seed seed) : state_(seed.value) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    constexpr double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Scan raster
// ---------------------------------------------------------------------------

/// Pixel rectangle inside an image: rows [row, row + rows), cols [col, col + cols).
struct PixelRect {
    std::size_t row = 0;
    std::size_t col = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    bool empty() const { return rows == 0 || cols == 0; }
};

/// Pixelized photon-count raster, row-major. Pixel (i, j) has its center at
/// origin + (j, i) * pixel_size, i.e. columns run along x and rows along y.
class ScanImage {
public:
    static constexpr double kDefaultPixelSize = 25.0;  // nm
    static constexpr double kDefaultDwell = 6e-3;      // s

    ScanImage() = default;

    ScanImage(std::size_t width, std::size_t height, double pixel_size = kDefaultPixelSize,
              double dwell = kDefaultDwell, Vec2 origin = {}, double fill = 0.0)
        : width_(width), height_(height), pixel_size_(pixel_size), dwell_(dwell),
          origin_(origin), counts_(width * height, fill) {
        if (!(pixel_size > 0.0)) throw InvalidArgument("pixel_size must be > 0");
        if (!(dwell >= 0.0)) throw InvalidArgument("dwell must be >= 0");
    }

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t size() const { return counts_.size(); }
    double pixel_size() const { return pixel_size_; }
    double dwell() const { return dwell_; }
    Vec2 origin() const { return origin_; }

    double& at(std::size_t row, std::size_t col) { return counts_[row * width_ + col]; }
    double at(std::size_t row, std::size_t col) const { return counts_[row * width_ + col]; }

    std::vector<double>& data() { return counts_; }
    const std::vector<double>& data() const { return counts_; }

    /// Center of pixel (row, col) in nm.
    Vec2 pixel_center(std::size_t row, std::size_t col) const {
        return {origin_.x + static_cast<double>(col) * pixel_size_,
                origin_.y + static_cast<double>(row) * pixel_size_};
    }

    /// Continuous (col, row) coordinate of a position, in pixel units.
    Vec2 to_pixel(const Vec2& p) const {
        return {(p.x - origin_.x) / pixel_size_, (p.y - origin_.y) / pixel_size_};
    }

    PixelRect full_rect() const { return {0, 0, height_, width_}; }

    bool same_geometry(const ScanImage& o) const {
        return width_ == o.width_ && height_ == o.height_ && pixel_size_ == o.pixel_size_ &&
               origin_ == o.origin_;
    }

    friend bool operator==(const ScanImage&, const ScanImage&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    double pixel_size_ = kDefaultPixelSize;
    double dwell_ = kDefaultDwell;
    Vec2 origin_{};
    std::vector<double> counts_;
};

/// Per-pixel a - b. Metadata is copied from a.
inline ScanImage subtract_images(const ScanImage& a, const ScanImage& b) {
    if (!a.same_geometry(b)) {
        throw GeometryMismatch("subtract_images: width/height/pixel_size/origin differ");
    }
    ScanImage out = a;
    auto& d = out.data();
    const auto& s = b.data();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] -= s[k];
    return out;
}

struct ImageMoments {
    double mean = 0.0;
    double std = 0.0;  // population
    double sum = 0.0;
};

inline void check_rect(const ScanImage& img, const PixelRect& r) {
    if (r.empty()) throw InvalidArgument("empty pixel rectangle");
    if (r.row + r.rows > img.height() || r.col + r.cols > img.width()) {
        throw GeometryMismatch("pixel rectangle exceeds image bounds");
    }
}

inline ImageMoments image_moments(const ScanImage& img, const PixelRect& roi) {
    check_rect(img, roi);
    double sum = 0.0;
    for (std::size_t i = roi.row; i < roi.row + roi.rows; ++i)
        for (std::size_t j = roi.col; j < roi.col + roi.cols; ++j) sum += img.at(i, j);
    const double n = static_cast<double>(roi.rows * roi.cols);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t i = roi.row; i < roi.row + roi.rows; ++i)
        for (std::size_t j = roi.col; j < roi.col + roi.cols; ++j) {
            const double d = img.at(i, j) - mean;
            ss += d * d;
        }
    return {mean, std::sqrt(ss / n), sum};
}

/// Pixel rectangle covering a square of half-width `half_width_nm` around
/// `center`, clipped to the image.
inline PixelRect rect_around(const ScanImage& img, const Vec2& center, double half_width_nm) {
    const Vec2 p = img.to_pixel(center);
    const double h = half_width_nm / img.pixel_size();
    const auto clamp_idx = [](double v, std::size_t n) {
        return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n)));
    };
    const std::size_t c0 = clamp_idx(std::ceil(p.x - h), img.width());
    const std::size_t c1 = clamp_idx(std::floor(p.x + h) + 1.0, img.width());
    const std::size_t r0 = clamp_idx(std::ceil(p.y - h), img.height());
    const std::size_t r1 = clamp_idx(std::floor(p.y + h) + 1.0, img.height());
    return {r0, c0, r1 > r0 ? r1 - r0 : 0, c1 > c0 ? c1 - c0 : 0};
}

}  // namespace ionimp
