#pragma once

// Shared data model: images, label spaces, labelings, epipolar shifts and
// gradient maps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mutseg {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when cached bookkeeping (correspondence counts, layer shapes)
/// disagrees with a fresh recomputation.
class IntegrityError : public Error {
public:
    using Error::Error;
};

struct Pixel {
    int x = 0;
    int y = 0;
    friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Dense row-major 2-D array.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int width, int height, T fill = T{})
        : width_(width), height_(height),
          values_(static_cast<std::size_t>(std::max(width, 0)) * static_cast<std::size_t>(std::max(height, 0)), fill) {
        if (width < 0 || height < 0)
            throw Error("grid dimensions must be non-negative");
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    bool in_bounds(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width_ && y < height_; }
    bool same_shape(int w, int h) const noexcept { return w == width_ && h == height_; }
    template <typename U>
    bool same_shape(const Grid<U>& other) const noexcept { return same_shape(other.width(), other.height()); }

    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    T& operator()(int x, int y) noexcept { return values_[index(x, y)]; }
    const T& operator()(int x, int y) const noexcept { return values_[index(x, y)]; }
    T& operator()(Pixel p) noexcept { return (*this)(p.x, p.y); }
    const T& operator()(Pixel p) const noexcept { return (*this)(p.x, p.y); }
    T& operator[](std::size_t i) noexcept { return values_[i]; }
    const T& operator[](std::size_t i) const noexcept { return values_[i]; }

    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }

    void fill(const T& v) { std::fill(values_.begin(), values_.end(), v); }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<T> values_;
};

/// 8-bit interleaved image with 1 or 3 channels.
class Image {
public:
    Image() = default;
    Image(int width, int height, int channels, std::uint8_t fill = 0)
        : width_(width), height_(height), channels_(channels),
          data_(static_cast<std::size_t>(width) * height * channels, fill) {
        if (width <= 0 || height <= 0)
            throw Error("image dimensions must be positive");
        if (channels != 1 && channels != 3)
            throw Error("image must have 1 or 3 channels, got " + std::to_string(channels));
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int channels() const noexcept { return channels_; }
    bool empty() const noexcept { return data_.empty(); }
    bool in_bounds(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width_ && y < height_; }

    std::uint8_t& at(int x, int y, int c = 0) noexcept { return data_[offset(x, y) + c]; }
    std::uint8_t at(int x, int y, int c = 0) const noexcept { return data_[offset(x, y) + c]; }
    std::span<const std::uint8_t> pixel(int x, int y) const noexcept {
        return {data_.data() + offset(x, y), static_cast<std::size_t>(channels_)};
    }

    std::span<std::uint8_t> data() noexcept { return data_; }
    std::span<const std::uint8_t> data() const noexcept { return data_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t offset(int x, int y) const noexcept {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_;
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<std::uint8_t> data_;
};

/// Largest absolute per-channel difference between two pixels.
inline int channel_max_difference(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) noexcept {
    int best = 0;
    for (std::size_t c = 0; c < a.size() && c < b.size(); ++c)
        best = std::max(best, std::abs(int(a[c]) - int(b[c])));
    return best;
}

/// One rectified, synchronized image pair. View 0 is the left camera.
struct FramePair {
    std::array<Image, 2> views;
    int frame_index = 0;
    bool rectified = true;

    int width() const noexcept { return views[0].width(); }
    int height() const noexcept { return views[0].height(); }

    void validate() const {
        if (views[0].empty() || views[1].empty())
            throw Error("frame " + std::to_string(frame_index) + ": empty view");
        if (views[0].width() != views[1].width() || views[0].height() != views[1].height())
            throw Error("frame " + std::to_string(frame_index) + ": view sizes differ (" +
                        std::to_string(views[0].width()) + "x" + std::to_string(views[0].height()) + " vs " +
                        std::to_string(views[1].width()) + "x" + std::to_string(views[1].height()) + ")");
        if (frame_index < 0)
            throw Error("frame index must be non-negative");
        if (!rectified)
            throw Error("frame " + std::to_string(frame_index) + ": pair is not rectified");
    }
};

struct LabelSpaces {
    int d_max = 1;

    int disparity_count() const noexcept { return d_max + 1; }

    void validate(int width) const {
        if (d_max < 1)
            throw Error("d_max must be >= 1, got " + std::to_string(d_max));
        if (d_max >= width)
            throw Error("d_max (" + std::to_string(d_max) + ") must be smaller than the image width (" +
                        std::to_string(width) + ")");
    }
};

inline constexpr int other_view(int view) noexcept { return 1 - view; }

/// x coordinate of the epipolar match of column `x` at disparity `d`.
/// View 0 shifts left, view 1 shifts right; the result may be out of bounds.
inline constexpr int shifted_x(int x, int d, int view) noexcept { return view == 0 ? x - d : x + d; }

/// Epipolar correspondence r(p, d) in the other view, or nullopt when the
/// shifted column leaves [0, width - 1].
inline std::optional<Pixel> rectified_shift(Pixel p, int d, int view, int width) noexcept {
    const int x = shifted_x(p.x, d, view);
    if (x < 0 || x >= width)
        return std::nullopt;
    return Pixel{x, p.y};
}

/// Binary mask, 1 = foreground.
struct SegmentationLabeling {
    Grid<std::uint8_t> labels;

    SegmentationLabeling() = default;
    SegmentationLabeling(int width, int height, std::uint8_t fill = 0) : labels(width, height, fill) {}

    int width() const noexcept { return labels.width(); }
    int height() const noexcept { return labels.height(); }
    std::size_t foreground_count() const noexcept {
        return static_cast<std::size_t>(std::count(labels.values().begin(), labels.values().end(), std::uint8_t{1}));
    }
    bool is_binary() const noexcept {
        return std::all_of(labels.values().begin(), labels.values().end(), [](std::uint8_t v) { return v <= 1; });
    }

    friend bool operator==(const SegmentationLabeling&, const SegmentationLabeling&) = default;
};

/// Per-pixel disparities of one view plus the correspondence counts N(q)
/// they induce on the other view's pixels.
class DisparityLabeling {
public:
    DisparityLabeling() = default;
    DisparityLabeling(int width, int height, int view, int initial = 0)
        : view_(view), labels_(width, height, initial), counts_(width, height, 0) {
        if (view != 0 && view != 1)
            throw Error("view index must be 0 or 1");
        recount();
    }

    int view() const noexcept { return view_; }
    int width() const noexcept { return labels_.width(); }
    int height() const noexcept { return labels_.height(); }
    const Grid<int>& labels() const noexcept { return labels_; }
    const Grid<int>& counts() const noexcept { return counts_; }
    int label(int x, int y) const noexcept { return labels_(x, y); }
    int count(int x, int y) const noexcept { return counts_(x, y); }

    /// Relabels one pixel and updates the counts of both affected targets.
    void set(int x, int y, int d) noexcept {
        const int old = labels_(x, y);
        if (old == d)
            return;
        const int xo = shifted_x(x, old, view_);
        if (xo >= 0 && xo < width())
            --counts_(xo, y);
        const int xn = shifted_x(x, d, view_);
        if (xn >= 0 && xn < width())
            ++counts_(xn, y);
        labels_(x, y) = d;
    }

    void assign(const Grid<int>& labels) {
        if (!labels.same_shape(labels_))
            throw Error("disparity labels have the wrong shape");
        labels_ = labels;
        recount();
    }

    /// Counts recomputed from the labels, independent of the cached array.
    Grid<int> fresh_counts() const {
        Grid<int> fresh(width(), height(), 0);
        for (int y = 0; y < height(); ++y)
            for (int x = 0; x < width(); ++x) {
                const int xt = shifted_x(x, labels_(x, y), view_);
                if (xt >= 0 && xt < width())
                    ++fresh(xt, y);
            }
        return fresh;
    }

    void recount() { counts_ = fresh_counts(); }

    void verify_counts() const {
        if (fresh_counts() != counts_)
            throw IntegrityError("correspondence counts of view " + std::to_string(view_) +
                                 " disagree with a fresh recount");
    }

    void validate(const LabelSpaces& spaces) const {
        for (int v : labels_.values())
            if (v < 0 || v > spaces.d_max)
                throw Error("disparity label " + std::to_string(v) + " outside [0, " +
                            std::to_string(spaces.d_max) + "]");
    }

    friend bool operator==(const DisparityLabeling& a, const DisparityLabeling& b) {
        return a.view_ == b.view_ && a.labels_ == b.labels_;
    }

private:
    int view_ = 0;
    Grid<int> labels_;
    Grid<int> counts_;
};

/// Channel-max absolute differences across 4-neighbor edges.
/// horizontal(x, y) holds edge (x,y)-(x+1,y); vertical(x, y) holds (x,y)-(x,y+1).
class GradientMap {
public:
    GradientMap() = default;
    explicit GradientMap(const Image& image)
        : horizontal_(image.width(), image.height(), 0.f), vertical_(image.width(), image.height(), 0.f) {
        for (int y = 0; y < image.height(); ++y)
            for (int x = 0; x < image.width(); ++x) {
                if (x + 1 < image.width())
                    horizontal_(x, y) = float(channel_max_difference(image.pixel(x, y), image.pixel(x + 1, y)));
                if (y + 1 < image.height())
                    vertical_(x, y) = float(channel_max_difference(image.pixel(x, y), image.pixel(x, y + 1)));
            }
    }

    int width() const noexcept { return horizontal_.width(); }
    int height() const noexcept { return horizontal_.height(); }
    float horizontal(int x, int y) const noexcept { return horizontal_(x, y); }
    float vertical(int x, int y) const noexcept { return vertical_(x, y); }

    /// Magnitude for the edge between 4-neighbors p and q, in either order.
    float edge(Pixel p, Pixel q) const {
        if (p.y == q.y && std::abs(p.x - q.x) == 1)
            return horizontal_(std::min(p.x, q.x), p.y);
        if (p.x == q.x && std::abs(p.y - q.y) == 1)
            return vertical_(p.x, std::min(p.y, q.y));
        throw Error("pixels are not 4-neighbors");
    }

private:
    Grid<float> horizontal_;
    Grid<float> vertical_;
};

inline GradientMap compute_gradient_map(const Image& image) { return GradientMap(image); }

/// Edge weight that decays with gradient strength; g is the expected
/// contour gradient. Range [0, e - 0.5].
inline double gradient_scale(double grad, double g) noexcept {
    return std::max(std::exp(1.0 - grad / g) - 0.5, 0.0);
}

/// Calls fn(p, q) for every 4-neighbor edge of a width x height lattice.
template <typename Fn>
void for_each_edge(int width, int height, Fn&& fn) {
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            if (x + 1 < width)
                fn(Pixel{x, y}, Pixel{x + 1, y});
            if (y + 1 < height)
                fn(Pixel{x, y}, Pixel{x, y + 1});
        }
}

}  // namespace mutseg
