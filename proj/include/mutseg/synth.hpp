#pragma once

// Synthetic two-modality stereo sequences with known masks and disparity:
// a textured background and a moving textured object (a body with a thin
// vertical limb) at a fixed disparity. Modality B is an intensity-inverted,
// re-textured rendition; the limb can be given zero contrast in one view.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mutseg/core.hpp"
#include "mutseg/dataset_io.hpp"
#include "mutseg/image_io.hpp"

namespace mutseg {

struct SynthParams {
    int width = 320;
    int height = 240;
    int frames = 3;
    int disparity = 12;            // object disparity d*
    int background_disparity = 0;  // static background plane
    int d_max = 24;
    double noise = 2.0;       // Gaussian sigma, gray levels
    double corruption = 0.1;  // fraction of GT foreground area moved by the init corruption
    bool invert = true;       // modality B inverts intensities
    int flat_view = 1;        // view whose limb has zero contrast; -1: none
    bool limb = true;
    int velocity_x = 2;  // object motion per frame, px
    int velocity_y = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (width < 64 || height < 64)
            throw Error("synthetic frames must be at least 64x64");
        if (frames < 1)
            throw Error("synthetic sequence needs at least one frame");
        if (d_max < 1 || d_max >= width)
            throw Error("d_max must lie in [1, width)");
        if (disparity < 0 || disparity >= d_max)
            throw Error("object disparity must satisfy 0 <= d* < d_max");
        if (background_disparity < 0 || background_disparity > d_max)
            throw Error("background disparity out of range");
        if (noise < 0)
            throw Error("noise level must be non-negative");
        if (corruption < 0 || corruption > 0.5)
            throw Error("corruption rate must lie in [0, 0.5]");
        if (flat_view < -1 || flat_view > 1)
            throw Error("flat view must be -1, 0 or 1");
    }
};

struct SynthFrame {
    FramePair pair;
    std::array<SegmentationLabeling, 2> gt;
    std::array<SegmentationLabeling, 2> init;
    std::array<SegmentationLabeling, 2> limb;  // GT limb pixels per view
};

struct SynthSequence {
    SynthParams params;
    std::vector<SynthFrame> frames;
    std::vector<GtCorrespondence> correspondences;
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline double lattice(std::uint64_t seed, int x, int y) noexcept {
    const std::uint64_t h = mix64(seed ^ mix64(std::uint64_t(std::uint32_t(x)) << 32 | std::uint32_t(y)));
    return double(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

// Smooth value noise in [-1, 1] with feature size `scale` px.
inline double value_noise(std::uint64_t seed, double x, double y, double scale) noexcept {
    const double fx = x / scale, fy = y / scale;
    const int x0 = int(std::floor(fx)), y0 = int(std::floor(fy));
    const double tx = fx - x0, ty = fy - y0;
    const double sx = tx * tx * (3 - 2 * tx), sy = ty * ty * (3 - 2 * ty);
    const double a = lattice(seed, x0, y0), b = lattice(seed, x0 + 1, y0);
    const double c = lattice(seed, x0, y0 + 1), d = lattice(seed, x0 + 1, y0 + 1);
    return (a + (b - a) * sx) * (1 - sy) + (c + (d - c) * sx) * sy;
}

inline double octaves(std::uint64_t seed, double x, double y, double scale) noexcept {
    return 0.6 * value_noise(seed, x, y, scale) + 0.4 * value_noise(seed + 7, x, y, scale / 2.5);
}

inline std::uint8_t clamp8(double v) noexcept { return std::uint8_t(std::clamp(std::lround(v), 0L, 255L)); }

struct ObjectGeometry {
    int x = 0, y = 0;  // body top-left in view 0
    int body_w = 0, body_h = 0;
    int limb_x = 0, limb_w = 0, limb_len = 0;  // limb columns relative to body, extends above the body
    bool limb = true;

    bool in_body(int px, int py) const noexcept {
        return px >= x && px < x + body_w && py >= y && py < y + body_h;
    }
    bool in_limb(int px, int py) const noexcept {
        return limb && px >= x + limb_x && px < x + limb_x + limb_w && py >= y - limb_len && py < y;
    }
    bool contains(int px, int py) const noexcept { return in_body(px, py) || in_limb(px, py); }
};

struct SceneRenderer {
    const SynthParams& p;
    std::uint64_t seed;

    // Modality A (RGB) background and object colors in their own frames.
    // shared luminance texture plus a weaker per-channel tint
    std::array<double, 3> background_a(int bx, int by) const {
        std::array<double, 3> c{};
        const double base[3] = {80, 92, 104};
        const double lum = 28 * octaves(seed + 10, bx, by, 14.0);
        for (int ch = 0; ch < 3; ++ch)
            c[ch] = base[ch] + lum + 10 * octaves(seed + 11 + ch, bx, by, 14.0);
        return c;
    }
    std::array<double, 3> object_a(int ox, int oy) const {
        std::array<double, 3> c{};
        const double base[3] = {225, 190, 85};
        const double lum = 24 * octaves(seed + 30, ox, oy, 7.0);
        for (int ch = 0; ch < 3; ++ch)
            c[ch] = base[ch] + lum + 8 * octaves(seed + 31 + ch, ox, oy, 7.0);
        return c;
    }
    static double gray(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

    double background_b(int bx, int by) const {
        const double g = gray(background_a(bx, by));
        const double base = p.invert ? 255 - g : g;
        return 0.75 * base + 0.25 * (150 + 40 * octaves(seed + 51, bx, by, 10.0));
    }
    double object_b(int ox, int oy) const {
        const double g = gray(object_a(ox, oy));
        const double base = p.invert ? 255 - g : g;
        return 0.75 * base + 0.25 * (60 + 40 * octaves(seed + 71, ox, oy, 5.0));
    }
};

// Random dilation/erosion of the body outline: each side is cut into runs
// of 6-14 px, each run pushed out (or pulled in) by 0.5-1.5 times `step`.
// The limb is carried along unchanged.
inline SegmentationLabeling corrupt_mask(const ObjectGeometry& g, int view_shift, int width, int height, int step,
                                         std::mt19937_64& rng) {
    std::uniform_int_distribution<int> run_length(6, 14), coin(0, 1);
    std::uniform_real_distribution<double> scale(0.5, 1.5);
    const auto side_offsets = [&](int length) {
        std::vector<int> out(length);
        for (int i = 0; i < length;) {
            const int n = run_length(rng);
            const int off = int(std::lround(step * scale(rng))) * (coin(rng) ? 1 : -1);
            for (int j = 0; j < n && i < length; ++j)
                out[i++] = off;
        }
        return out;
    };
    // offsets indexed by position along the side, extended by the largest
    // possible push so dilated corners stay defined
    const int pad = int(std::lround(1.5 * step)) + 1;
    const std::vector<int> left = side_offsets(g.body_h + 2 * pad), right = side_offsets(g.body_h + 2 * pad);
    const std::vector<int> top = side_offsets(g.body_w + 2 * pad), bottom = side_offsets(g.body_w + 2 * pad);
    SegmentationLabeling mask(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const int px = x + view_shift;
            const int ry = y - g.y + pad, rx = px - g.x + pad;
            bool body = false;
            if (ry >= 0 && ry < int(left.size()) && rx >= 0 && rx < int(top.size()))
                body = px >= g.x - left[ry] && px < g.x + g.body_w + right[ry] && y >= g.y - top[rx] &&
                       y < g.y + g.body_h + bottom[rx];
            // the limb reaches down to the (possibly eroded) body top
            const bool limb = g.limb && px >= g.x + g.limb_x && px < g.x + g.limb_x + g.limb_w &&
                              y >= g.y - g.limb_len && y < g.y + std::max(0, -top[rx]);
            mask.labels(x, y) = body || limb;
        }
    return mask;
}

}  // namespace detail

inline SynthSequence generate_synthetic(const SynthParams& params) {
    params.validate();
    SynthSequence seq;
    seq.params = params;
    const int w = params.width, h = params.height, d = params.disparity, bd = params.background_disparity;
    std::mt19937_64 rng(detail::mix64(params.seed + 1));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const detail::SceneRenderer render{params, detail::mix64(params.seed)};

    detail::ObjectGeometry base;
    base.body_w = std::max(16, w * 9 / 32);
    base.body_h = std::max(16, h * 5 / 12);
    base.limb = params.limb;
    base.limb_w = std::max(4, w / 40);
    base.limb_len = std::max(8, h * 3 / 20);
    base.limb_x = base.body_w / 4;
    base.x = w / 2 - base.body_w / 2 + d / 2;
    base.y = h / 2 - base.body_h / 2 + base.limb_len / 2;

    for (int t = 0; t < params.frames; ++t) {
        detail::ObjectGeometry g = base;
        g.x += t * params.velocity_x;
        g.y += t * params.velocity_y;
        if (g.x - d < 0 || g.x + g.body_w > w || g.y - g.limb_len < 0 || g.y + g.body_h > h)
            throw Error("synthetic object leaves the frame; use fewer frames or a larger image");

        SynthFrame f;
        f.pair.frame_index = t;
        f.pair.views[0] = Image(w, h, 3);
        f.pair.views[1] = Image(w, h, 1);
        for (int k = 0; k < 2; ++k) {
            f.gt[k] = SegmentationLabeling(w, h);
            f.limb[k] = SegmentationLabeling(w, h);
        }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                // view 0 sees the object at x; view 1 at x - d
                const bool fg0 = g.contains(x, y), limb0 = g.in_limb(x, y);
                const bool fg1 = g.contains(x + d, y), limb1 = g.in_limb(x + d, y);
                f.gt[0].labels(x, y) = fg0;
                f.gt[1].labels(x, y) = fg1;
                f.limb[0].labels(x, y) = limb0;
                f.limb[1].labels(x, y) = limb1;

                const bool flat0 = limb0 && params.flat_view == 0;
                const auto a = fg0 && !flat0 ? render.object_a(x - g.x, y - g.y) : render.background_a(x, y);
                for (int c = 0; c < 3; ++c)
                    f.pair.views[0].at(x, y, c) = detail::clamp8(a[c] + params.noise * gauss(rng));

                const bool flat1 = limb1 && params.flat_view == 1;
                const double b =
                    fg1 && !flat1 ? render.object_b(x + d - g.x, y - g.y) : render.background_b(x + bd, y);
                f.pair.views[1].at(x, y) = detail::clamp8(b + params.noise * gauss(rng));
            }

        const long area = long(f.gt[0].foreground_count());
        // the moved band covers about 2 * corruption * area (F1 near 1 - corruption)
        const int step = int(std::lround(params.corruption * double(area) / double(g.body_w + g.body_h)));
        for (int k = 0; k < 2; ++k)
            f.init[k] = step > 0 ? detail::corrupt_mask(g, k == 0 ? 0 : d, w, h, step, rng) : f.gt[k];

        for (int k = 0; k < 2; ++k)
            for (int y = 0; y < h; y += 3)
                for (int x = 0; x < w; x += 3) {
                    if (!f.gt[k].labels(x, y))
                        continue;
                    const int xt = shifted_x(x, d, k);
                    if (xt >= 0 && xt < w)
                        seq.correspondences.push_back({t, k, x, y, double(d)});
                }
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

/// Writes frames, masks, limb regions, correspondences and a manifest
/// ("sequence.txt") into `dir`.
inline std::filesystem::path write_synthetic(const SynthSequence& seq, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    for (const char* sub : {"view0", "view1", "gt0", "gt1", "init0", "init1", "limb0", "limb1"}) {
        std::error_code ec;
        fs::create_directories(dir / sub, ec);
        if (ec)
            throw Error("cannot create " + (dir / sub).string() + ": " + ec.message());
    }
    for (const auto& f : seq.frames) {
        const std::string name = detail::format_index("%04d.png", f.pair.frame_index);
        for (int k = 0; k < 2; ++k) {
            const std::string v = std::to_string(k);
            write_png((dir / ("view" + v) / name).string(), f.pair.views[k]);
            write_mask((dir / ("gt" + v) / name).string(), f.gt[k]);
            write_mask((dir / ("init" + v) / name).string(), f.init[k]);
            write_mask((dir / ("limb" + v) / name).string(), f.limb[k]);
        }
    }
    save_correspondences(dir / "correspondences.csv", seq.correspondences);
    SequenceManifest m;
    m.frames = {"view0/%04d.png", "view1/%04d.png"};
    m.init = {"init0/%04d.png", "init1/%04d.png"};
    m.gt = {"gt0/%04d.png", "gt1/%04d.png"};
    m.correspondences = "correspondences.csv";
    m.modality = {"visible", seq.params.invert ? "lwir" : "visible"};
    m.d_max = seq.params.d_max;
    m.first_index = 0;
    m.frame_count = int(seq.frames.size());
    const fs::path manifest = dir / "sequence.txt";
    m.save(manifest);
    return manifest;
}

}  // namespace mutseg
