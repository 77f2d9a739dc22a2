#pragma once

// Dense descriptor fields, affinity cost volumes and saliency maps used by
// the stereo data terms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "mutseg/core.hpp"

namespace mutseg {

enum class DescriptorKind { self_similarity, shape_context };
enum class Cue { appearance, shape };

/// Fixed-length float descriptor per pixel, stored pixel-major.
class DescriptorField {
public:
    DescriptorField() = default;
    DescriptorField(int width, int height, int dims, DescriptorKind kind)
        : width_(width), height_(height), dims_(dims), kind_(kind),
          values_(static_cast<std::size_t>(width) * height * dims, 0.f) {}

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int dims() const noexcept { return dims_; }
    DescriptorKind kind() const noexcept { return kind_; }

    std::span<float> at(int x, int y) noexcept { return {values_.data() + offset(x, y), static_cast<std::size_t>(dims_)}; }
    std::span<const float> at(int x, int y) const noexcept {
        return {values_.data() + offset(x, y), static_cast<std::size_t>(dims_)};
    }
    std::span<const float> values() const noexcept { return values_; }
    std::span<float> values() noexcept { return values_; }

private:
    std::size_t offset(int x, int y) const noexcept {
        return (static_cast<std::size_t>(y) * width_ + x) * static_cast<std::size_t>(dims_);
    }

    int width_ = 0;
    int height_ = 0;
    int dims_ = 0;
    DescriptorKind kind_ = DescriptorKind::self_similarity;
    std::vector<float> values_;
};

// ---------------------------------------------------------------------------
// Local self-similarity

struct SelfSimilarityParams {
    int patch_radius = 2;    // 5x5 center patch
    int window_radius = 20;  // correlation surface radius
    int angular_bins = 20;   // must be a multiple of 4
    int radial_bins = 4;
    double inner_radius = 4.0;  // outer edge of the first radial ring

    int dims() const noexcept { return angular_bins * radial_bins; }
};

namespace detail {

// Angular bin that is exactly equivariant to 90-degree grid rotations: the
// offset is rotated into the first quadrant, binned there, then offset by the
// quadrant index.
inline int quadrant_angular_bin(int dx, int dy, int angular_bins) {
    int quadrant = 0, a = dx, b = dy;
    if (dx > 0 && dy >= 0) {
        quadrant = 0;
    } else if (dx <= 0 && dy > 0) {
        quadrant = 1, a = dy, b = -dx;
    } else if (dx < 0 && dy <= 0) {
        quadrant = 2, a = -dx, b = -dy;
    } else {
        quadrant = 3, a = -dy, b = dx;
    }
    const int per_quadrant = angular_bins / 4;
    const double angle = std::atan2(double(b), double(a));
    const int sub = std::min(per_quadrant - 1, int(angle / (std::numbers::pi / 2) * per_quadrant));
    return quadrant * per_quadrant + sub;
}

inline int log_radial_bin(double r, double inner, double outer, int bins) {
    if (bins <= 1 || r <= inner)
        return 0;
    const double t = std::log(r / inner) / std::log(outer / inner);
    return std::clamp(1 + int(t * (bins - 1) - 1e-12), 1, bins - 1);
}

struct BinnedOffset {
    int dx;
    int dy;
    int bin;
};

inline std::vector<BinnedOffset> self_similarity_offsets(const SelfSimilarityParams& params) {
    std::vector<BinnedOffset> offsets;
    const int r = params.window_radius;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const int r2 = dx * dx + dy * dy;
            if (r2 == 0 || r2 > r * r)
                continue;
            const int angular = quadrant_angular_bin(dx, dy, params.angular_bins);
            const int radial = log_radial_bin(std::sqrt(double(r2)), params.inner_radius, r, params.radial_bins);
            offsets.push_back({dx, dy, radial * params.angular_bins + angular});
        }
    return offsets;
}

// Replicate-padded float copy of one image channel stack.
struct PaddedImage {
    int pad = 0;
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> values;  // (y * width + x) * channels + c, padded coordinates

    PaddedImage(const Image& image, int padding)
        : pad(padding), width(image.width() + 2 * padding), height(image.height() + 2 * padding),
          channels(image.channels()), values(static_cast<std::size_t>(width) * height * channels) {
        for (int y = 0; y < height; ++y) {
            const int sy = std::clamp(y - pad, 0, image.height() - 1);
            for (int x = 0; x < width; ++x) {
                const int sx = std::clamp(x - pad, 0, image.width() - 1);
                for (int c = 0; c < channels; ++c)
                    values[(static_cast<std::size_t>(y) * width + x) * channels + c] = image.at(sx, sy, c);
            }
        }
    }
};

// Patch SSD between every pixel and its neighbor at (dx, dy), evaluated over
// the unpadded image area. Values are sums of integer squares and exact.
inline void patch_ssd(const PaddedImage& img, int image_width, int image_height, int patch_radius, int dx, int dy,
                      std::vector<double>& diff, std::vector<double>& rows, std::vector<double>& out) {
    const int span = 2 * patch_radius + 1;
    const int region_w = image_width + 2 * patch_radius;
    const int region_h = image_height + 2 * patch_radius;
    const int base = img.pad - patch_radius;
    diff.assign(static_cast<std::size_t>(region_w) * region_h, 0.0);
    for (int y = 0; y < region_h; ++y) {
        const int py = base + y;
        const double* a = &img.values[(static_cast<std::size_t>(py) * img.width + base) * img.channels];
        const double* b = &img.values[(static_cast<std::size_t>(py + dy) * img.width + base + dx) * img.channels];
        double* d = &diff[static_cast<std::size_t>(y) * region_w];
        const int n = region_w * img.channels;
        if (img.channels == 1) {
            for (int x = 0; x < region_w; ++x) {
                const double t = a[x] - b[x];
                d[x] = t * t;
            }
        } else {
            for (int i = 0; i < n; ++i) {
                const double t = a[i] - b[i];
                d[i / img.channels] += t * t;
            }
        }
    }
    rows.assign(static_cast<std::size_t>(image_width) * region_h, 0.0);
    for (int y = 0; y < region_h; ++y) {
        const double* d = &diff[static_cast<std::size_t>(y) * region_w];
        double* r = &rows[static_cast<std::size_t>(y) * image_width];
        double acc = 0;
        for (int x = 0; x < span; ++x)
            acc += d[x];
        r[0] = acc;
        for (int x = 1; x < image_width; ++x) {
            acc += d[x + span - 1] - d[x - 1];
            r[x] = acc;
        }
    }
    out.assign(static_cast<std::size_t>(image_width) * image_height, 0.0);
    for (int x = 0; x < image_width; ++x) {
        double acc = 0;
        for (int y = 0; y < span; ++y)
            acc += rows[static_cast<std::size_t>(y) * image_width + x];
        out[x] = acc;
        for (int y = 1; y < image_height; ++y) {
            acc += rows[static_cast<std::size_t>(y + span - 1) * image_width + x] -
                   rows[static_cast<std::size_t>(y - 1) * image_width + x];
            out[static_cast<std::size_t>(y) * image_width + x] = acc;
        }
    }
}

}  // namespace detail

/// Log-polar local self-similarity descriptor. Each bin holds the best
/// normalized patch correlation exp(-SSD / var_auto) among the window offsets
/// falling in it; each descriptor is then stretched to [0, 1].
inline DescriptorField compute_self_similarity_field(const Image& image, const SelfSimilarityParams& params = {}) {
    if (params.angular_bins % 4 != 0)
        throw Error("self-similarity angular bin count must be a multiple of 4");
    const int w = image.width(), h = image.height();
    const int dims = params.dims();
    DescriptorField field(w, h, dims, DescriptorKind::self_similarity);

    const auto offsets = detail::self_similarity_offsets(params);
    const detail::PaddedImage padded(image, params.window_radius + params.patch_radius);
    std::vector<double> diff, rows, ssd;

    std::span<float> best = field.values();
    std::fill(best.begin(), best.end(), std::numeric_limits<float>::infinity());
    std::vector<double> var_auto(static_cast<std::size_t>(w) * h, 0.0);

    for (const auto& o : offsets) {
        detail::patch_ssd(padded, w, h, params.patch_radius, o.dx, o.dy, diff, rows, ssd);
        const bool auto_neighbor = std::abs(o.dx) <= 1 && std::abs(o.dy) <= 1;
        for (std::size_t i = 0; i < ssd.size(); ++i) {
            float& slot = best[i * dims + o.bin];
            slot = std::min(slot, float(ssd[i]));
            if (auto_neighbor)
                var_auto[i] = std::max(var_auto[i], ssd[i]);
        }
    }

    for (std::size_t i = 0; i < var_auto.size(); ++i) {
        const double var = std::max(var_auto[i], 1e-9);
        float* desc = best.data() + i * dims;
        float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
        for (int b = 0; b < dims; ++b) {
            const float v = std::isfinite(desc[b]) ? float(std::exp(-double(desc[b]) / var)) : 0.f;
            desc[b] = v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const float range = hi - lo;
        for (int b = 0; b < dims; ++b)
            desc[b] = range > 1e-12f ? (desc[b] - lo) / range : 0.f;
    }
    return field;
}

// ---------------------------------------------------------------------------
// Shape context

struct ShapeContextParams {
    int radius = 25;  // 50 px wide
    int angular_bins = 10;
    int radial_bins = 3;

    int dims() const noexcept { return angular_bins * radial_bins; }
};

/// Bin of a contour point seen at offset (dx, dy) from the reference pixel;
/// -1 when outside the descriptor disk or at the pixel itself. Radial rings
/// double in width: (0, R/4], (R/4, R/2], (R/2, R].
inline int shape_context_bin(int dx, int dy, const ShapeContextParams& params) {
    const int r2 = dx * dx + dy * dy;
    if (r2 == 0 || r2 > params.radius * params.radius)
        return -1;
    double angle = std::atan2(double(dy), double(dx));
    if (angle < 0)
        angle += 2 * std::numbers::pi;
    const int angular = std::min(params.angular_bins - 1, int(angle / (2 * std::numbers::pi) * params.angular_bins));
    const double r = std::sqrt(double(r2));
    int radial = params.radial_bins - 1;
    double edge = params.radius;
    for (int b = params.radial_bins - 1; b > 0; --b) {
        edge *= 0.5;
        if (r <= edge)
            radial = b - 1;
    }
    return radial * params.angular_bins + angular;
}

/// Foreground pixels with at least one background 4-neighbor.
inline std::vector<Pixel> contour_points(const SegmentationLabeling& mask) {
    std::vector<Pixel> points;
    const auto& m = mask.labels;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (!m(x, y))
                continue;
            const bool edge = (x > 0 && !m(x - 1, y)) || (x + 1 < m.width() && !m(x + 1, y)) ||
                              (y > 0 && !m(x, y - 1)) || (y + 1 < m.height() && !m(x, y + 1));
            if (edge)
                points.push_back({x, y});
        }
    return points;
}

/// Log-polar histogram of contour points around each pixel, L1-normalized.
inline DescriptorField compute_shape_context_field(const SegmentationLabeling& mask,
                                                   const ShapeContextParams& params = {}) {
    const int w = mask.width(), h = mask.height(), dims = params.dims();
    DescriptorField field(w, h, dims, DescriptorKind::shape_context);

    struct Stamp {
        int dx, dy, bin;
    };
    std::vector<Stamp> stamps;
    for (int dy = -params.radius; dy <= params.radius; ++dy)
        for (int dx = -params.radius; dx <= params.radius; ++dx)
            if (const int bin = shape_context_bin(dx, dy, params); bin >= 0)
                stamps.push_back({dx, dy, bin});

    std::span<float> values = field.values();
    std::vector<float> totals(static_cast<std::size_t>(w) * h, 0.f);
    for (const Pixel q : contour_points(mask)) {
        // q sits at offset (dx, dy) from p = q - (dx, dy)
        for (const auto& s : stamps) {
            const int px = q.x - s.dx, py = q.y - s.dy;
            if (px < 0 || py < 0 || px >= w || py >= h)
                continue;
            const std::size_t i = static_cast<std::size_t>(py) * w + px;
            values[i * dims + s.bin] += 1.f;
            totals[i] += 1.f;
        }
    }
    for (std::size_t i = 0; i < totals.size(); ++i)
        if (totals[i] > 0)
            for (int b = 0; b < dims; ++b)
                values[i * dims + b] /= totals[i];
    return field;
}

// ---------------------------------------------------------------------------
// Affinity cost volumes

/// A[p][d]: mean of quantized descriptor L2 distances over a square window
/// around p at disparity d. Entries whose epipolar target leaves the image
/// are 0.
class AffinityCostVolume {
public:
    AffinityCostVolume() = default;
    AffinityCostVolume(int width, int height, int labels)
        : width_(width), height_(height), labels_(labels),
          values_(static_cast<std::size_t>(width) * height * labels, 0.f) {}

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int labels() const noexcept { return labels_; }

    float& at(int x, int y, int d) noexcept { return values_[offset(x, y) + d]; }
    float at(int x, int y, int d) const noexcept { return values_[offset(x, y) + d]; }
    std::span<const float> costs(int x, int y) const noexcept {
        return {values_.data() + offset(x, y), static_cast<std::size_t>(labels_)};
    }
    std::span<const float> values() const noexcept { return values_; }

    friend bool operator==(const AffinityCostVolume&, const AffinityCostVolume&) = default;

private:
    std::size_t offset(int x, int y) const noexcept {
        return (static_cast<std::size_t>(y) * width_ + x) * static_cast<std::size_t>(labels_);
    }

    int width_ = 0;
    int height_ = 0;
    int labels_ = 0;
    std::vector<float> values_;
};

struct AffinityParams {
    int window = 15;
};

/// Raw distances are fixed-point with this many fractional bits so window
/// sums are exact integers regardless of summation order.
inline constexpr int kDistanceFractionBits = 20;

inline std::int64_t quantize_distance(double distance) noexcept {
    return std::llround(std::ldexp(distance, kDistanceFractionBits));
}

inline double descriptor_distance(std::span<const float> a, std::span<const float> b) noexcept {
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double t = double(a[i]) - double(b[i]);
        acc += t * t;
    }
    return std::sqrt(acc);
}

/// Affinity volume of view `view` (field `own`) against the other view
/// (field `other`).
inline AffinityCostVolume build_affinity_volume(const DescriptorField& own, const DescriptorField& other,
                                                const LabelSpaces& spaces, int view,
                                                const AffinityParams& params = {}) {
    if (own.width() != other.width() || own.height() != other.height() || own.dims() != other.dims())
        throw Error("descriptor fields differ in shape");
    const int w = own.width(), h = own.height(), labels = spaces.disparity_count();
    const int radius = params.window / 2;
    const double norm = std::ldexp(double(params.window) * params.window, kDistanceFractionBits);
    AffinityCostVolume volume(w, h, labels);

    std::vector<std::int64_t> raw(static_cast<std::size_t>(w) * h), rows(static_cast<std::size_t>(w) * h);
    for (int d = 0; d < labels; ++d) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int xt = shifted_x(x, d, view);
                raw[static_cast<std::size_t>(y) * w + x] =
                    (xt >= 0 && xt < w) ? quantize_distance(descriptor_distance(own.at(x, y), other.at(xt, y))) : 0;
            }
        for (int y = 0; y < h; ++y) {
            const std::int64_t* r = &raw[static_cast<std::size_t>(y) * w];
            std::int64_t* out = &rows[static_cast<std::size_t>(y) * w];
            std::int64_t acc = 0;
            for (int x = 0; x <= std::min(radius, w - 1); ++x)
                acc += r[x];
            for (int x = 0; x < w; ++x) {
                out[x] = acc;
                if (x + radius + 1 < w)
                    acc += r[x + radius + 1];
                if (x - radius >= 0)
                    acc -= r[x - radius];
            }
        }
        for (int x = 0; x < w; ++x) {
            std::int64_t acc = 0;
            for (int y = 0; y <= std::min(radius, h - 1); ++y)
                acc += rows[static_cast<std::size_t>(y) * w + x];
            for (int y = 0; y < h; ++y) {
                const int xt = shifted_x(x, d, view);
                volume.at(x, y, d) = (xt >= 0 && xt < w) ? float(double(acc) / norm) : 0.f;
                if (y + radius + 1 < h)
                    acc += rows[static_cast<std::size_t>(y + radius + 1) * w + x];
                if (y - radius >= 0)
                    acc -= rows[static_cast<std::size_t>(y - radius) * w + x];
            }
        }
    }
    return volume;
}

// ---------------------------------------------------------------------------
// Sparseness and saliency

/// Hoyer sparseness (sqrt(n) - |v|_1 / |v|_2) / (sqrt(n) - 1): 0 for uniform
/// vectors, 1 for one-hot vectors. The zero vector scores 0.
inline double hoyer_sparseness_from_norms(double l1, double l2, double n) noexcept {
    if (n < 2 || l2 <= 0)
        return 0.0;
    const double root = std::sqrt(n);
    return std::clamp((root - l1 / l2) / (root - 1.0), 0.0, 1.0);
}

template <typename T>
double hoyer_sparseness(std::span<const T> v) noexcept {
    double l1 = 0, sq = 0;
    for (const T x : v) {
        l1 += std::abs(double(x));
        sq += double(x) * double(x);
    }
    return hoyer_sparseness_from_norms(l1, std::sqrt(sq), double(v.size()));
}

inline double hoyer_sparseness(std::initializer_list<double> v) noexcept {
    return hoyer_sparseness(std::span<const double>(v.begin(), v.size()));
}

struct SaliencyMap {
    Grid<float> weights;
    Cue cue = Cue::appearance;
};

struct SaliencyParams {
    int window = 15;  // extent of the descriptor patch K(p)
};

/// Sparseness of the matching-goodness vector (max cost - cost over the
/// in-bounds disparities) at p.
inline double affinity_sparseness(const AffinityCostVolume& volume, int x, int y, int view) {
    const auto costs = volume.costs(x, y);
    double hi = 0;
    int n = 0;
    for (int d = 0; d < volume.labels(); ++d) {
        const int xt = shifted_x(x, d, view);
        if (xt < 0 || xt >= volume.width())
            continue;
        hi = n == 0 ? costs[d] : std::max(hi, double(costs[d]));
        ++n;
    }
    double l1 = 0, sq = 0;
    for (int d = 0; d < volume.labels(); ++d) {
        const int xt = shifted_x(x, d, view);
        if (xt < 0 || xt >= volume.width())
            continue;
        const double g = hi - costs[d];
        l1 += g;
        sq += g * g;
    }
    return hoyer_sparseness_from_norms(l1, std::sqrt(sq), n);
}

/// W(p) = max(sparseness of the goodness vector, sparseness of the descriptor
/// patch around p). For the shape cue, pixels outside `provisional_mask` get 0.
inline SaliencyMap build_saliency_map(const AffinityCostVolume& volume, const DescriptorField& field, Cue cue,
                                      int view, const SegmentationLabeling* provisional_mask = nullptr,
                                      const SaliencyParams& params = {}) {
    const int w = volume.width(), h = volume.height();
    if (field.width() != w || field.height() != h)
        throw Error("saliency inputs differ in shape");
    SaliencyMap map{Grid<float>(w, h, 0.f), cue};

    // box sums of per-pixel |K|_1, |K|_2^2 and pixel counts
    Grid<double> l1(w, h), sq(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double a = 0, b = 0;
            for (const float v : field.at(x, y)) {
                a += std::abs(double(v));
                b += double(v) * v;
            }
            l1(x, y) = a;
            sq(x, y) = b;
        }
    Grid<double> sum_l1(w + 1, h + 1, 0.0), sum_sq(w + 1, h + 1, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            sum_l1(x + 1, y + 1) = l1(x, y) + sum_l1(x, y + 1) + sum_l1(x + 1, y) - sum_l1(x, y);
            sum_sq(x + 1, y + 1) = sq(x, y) + sum_sq(x, y + 1) + sum_sq(x + 1, y) - sum_sq(x, y);
        }
    const int r = params.window / 2;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (cue == Cue::shape && provisional_mask && !provisional_mask->labels(x, y))
                continue;
            const int x0 = std::max(0, x - r), x1 = std::min(w, x + r + 1);
            const int y0 = std::max(0, y - r), y1 = std::min(h, y + r + 1);
            const auto box = [&](const Grid<double>& s) { return s(x1, y1) - s(x0, y1) - s(x1, y0) + s(x0, y0); };
            const double n = double(x1 - x0) * (y1 - y0) * field.dims();
            const double patch = hoyer_sparseness_from_norms(box(sum_l1), std::sqrt(std::max(box(sum_sq), 0.0)), n);
            map.weights(x, y) = float(std::max(affinity_sparseness(volume, x, y, view), patch));
        }
    return map;
}

/// Saliency of 1 everywhere, or for the shape cue 1 inside the mask and 0
/// outside; used when saliency weighting is switched off.
inline SaliencyMap uniform_saliency_map(int width, int height, Cue cue,
                                        const SegmentationLabeling* provisional_mask = nullptr) {
    SaliencyMap map{Grid<float>(width, height, 1.f), cue};
    if (cue == Cue::shape && provisional_mask)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                if (!provisional_mask->labels(x, y))
                    map.weights(x, y) = 0.f;
    return map;
}

}  // namespace mutseg
