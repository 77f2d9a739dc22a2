#pragma once

// Optical flow for temporal realignment: a block-matching estimator, a
// binary .flo reader/writer and anchor chaining through per-layer flow.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "mutseg/core.hpp"

namespace mutseg {

struct FlowVector {
    float dx = 0.f;
    float dy = 0.f;
    friend bool operator==(const FlowVector&, const FlowVector&) = default;
};

/// Per-pixel displacement from frame t to its position in frame t-1.
using FlowField = Grid<FlowVector>;

inline FlowField zero_flow(int width, int height) { return FlowField(width, height); }

struct BlockFlowParams {
    int block = 8;
    int radius = 8;
    float max_magnitude = 32.f;
};

namespace detail {

inline Grid<int> luminance(const Image& image) {
    Grid<int> gray(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) {
            if (image.channels() == 1) {
                gray(x, y) = image.at(x, y);
            } else {
                // integer Rec.601 weights
                gray(x, y) = (299 * image.at(x, y, 0) + 587 * image.at(x, y, 1) + 114 * image.at(x, y, 2) + 500) / 1000;
            }
        }
    return gray;
}

}  // namespace detail

/// SAD block matching on luminance. Each block's integer displacement is
/// assigned to the block center and the field is bilinearly interpolated
/// between centers (constant beyond the outermost centers). Ties prefer the
/// smaller displacement.
inline FlowField compute_block_flow(const Image& current, const Image& previous, const BlockFlowParams& params = {}) {
    if (current.width() != previous.width() || current.height() != previous.height())
        throw Error("flow frames differ in size");
    if (params.block < 1 || params.radius < 0)
        throw Error("invalid block flow parameters");
    const int w = current.width(), h = current.height();
    const Grid<int> a = detail::luminance(current), b = detail::luminance(previous);
    const int bx_count = (w + params.block - 1) / params.block;
    const int by_count = (h + params.block - 1) / params.block;
    const int radius = std::min<int>(params.radius, int(params.max_magnitude / std::sqrt(2.f)));

    Grid<FlowVector> blocks(bx_count, by_count);
    for (int by = 0; by < by_count; ++by)
        for (int bx = 0; bx < bx_count; ++bx) {
            const int x0 = bx * params.block, y0 = by * params.block;
            const int x1 = std::min(w, x0 + params.block), y1 = std::min(h, y0 + params.block);
            long best = -1;
            int best_mag = 0;
            FlowVector best_v{};
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    long sad = 0;
                    for (int y = y0; y < y1; ++y) {
                        const int sy = std::clamp(y + dy, 0, h - 1);
                        for (int x = x0; x < x1; ++x)
                            sad += std::abs(a(x, y) - b(std::clamp(x + dx, 0, w - 1), sy));
                    }
                    const int mag = dx * dx + dy * dy;
                    if (best < 0 || sad < best || (sad == best && mag < best_mag)) {
                        best = sad;
                        best_mag = mag;
                        best_v = {float(dx), float(dy)};
                    }
                }
            blocks(bx, by) = best_v;
        }

    FlowField flow(w, h);
    const double half = (params.block - 1) / 2.0;
    for (int y = 0; y < h; ++y) {
        const double fy = std::clamp((y - half) / params.block, 0.0, double(by_count - 1));
        const int y0 = int(fy), y1 = std::min(y0 + 1, by_count - 1);
        const double ty = fy - y0;
        for (int x = 0; x < w; ++x) {
            const double fx = std::clamp((x - half) / params.block, 0.0, double(bx_count - 1));
            const int x0 = int(fx), x1 = std::min(x0 + 1, bx_count - 1);
            const double tx = fx - x0;
            const auto lerp = [&](auto member) {
                const double top = (1 - tx) * blocks(x0, y0).*member + tx * blocks(x1, y0).*member;
                const double bottom = (1 - tx) * blocks(x0, y1).*member + tx * blocks(x1, y1).*member;
                return float((1 - ty) * top + ty * bottom);
            };
            flow(x, y) = {lerp(&FlowVector::dx), lerp(&FlowVector::dy)};
        }
    }
    return flow;
}

// ---------------------------------------------------------------------------
// .flo files: little-endian float magic, int32 width, int32 height, then
// row-major float32 (dx, dy) pairs.

inline constexpr float kFlowMagic = 202021.25f;

namespace detail {

template <typename T>
void write_le(std::ostream& out, T value) {
    static_assert(sizeof(T) == 4);
    std::uint32_t bits;
    std::memcpy(&bits, &value, 4);
    const unsigned char bytes[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                    static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

template <typename T>
bool read_le(std::istream& in, T& value) {
    static_assert(sizeof(T) == 4);
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4))
        return false;
    const std::uint32_t bits = std::uint32_t(bytes[0]) | std::uint32_t(bytes[1]) << 8 |
                               std::uint32_t(bytes[2]) << 16 | std::uint32_t(bytes[3]) << 24;
    std::memcpy(&value, &bits, 4);
    return true;
}

}  // namespace detail

inline void save_flow_file(const std::string& path, const FlowField& flow) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot open flow file for writing: " + path);
    detail::write_le(out, kFlowMagic);
    detail::write_le(out, std::int32_t(flow.width()));
    detail::write_le(out, std::int32_t(flow.height()));
    for (const FlowVector& v : flow.values()) {
        detail::write_le(out, v.dx);
        detail::write_le(out, v.dy);
    }
    if (!out)
        throw Error("failed writing flow file: " + path);
}

/// Reads a .flo file. When expected dimensions are given (> 0) they must
/// match the file.
inline FlowField load_flow_file(const std::string& path, int expected_width = 0, int expected_height = 0) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open flow file: " + path);
    float magic = 0;
    std::int32_t w = 0, h = 0;
    if (!detail::read_le(in, magic) || !detail::read_le(in, w) || !detail::read_le(in, h))
        throw Error(path + ": truncated flow header");
    if (magic != kFlowMagic)
        throw Error(path + ": bad flow magic number");
    if (w <= 0 || h <= 0 || w > (1 << 16) || h > (1 << 16))
        throw Error(path + ": invalid flow dimensions " + std::to_string(w) + "x" + std::to_string(h));
    if (expected_width > 0 && (w != expected_width || h != expected_height))
        throw Error(path + ": flow dimensions mismatch: expected " + std::to_string(expected_width) + "x" +
                    std::to_string(expected_height) + ", found " + std::to_string(w) + "x" + std::to_string(h));
    FlowField flow(w, h);
    for (FlowVector& v : flow.values()) {
        if (!detail::read_le(in, v.dx) || !detail::read_le(in, v.dy))
            throw Error(path + ": truncated flow data");
        if (!std::isfinite(v.dx) || !std::isfinite(v.dy))
            throw Error(path + ": non-finite flow value");
    }
    return flow;
}

// ---------------------------------------------------------------------------

/// Follows each anchor through `flows` (flows[l] maps layer l to layer l+1):
/// result[i][l] is anchor i in layer l, rounded and clamped in bounds.
inline std::vector<std::vector<Pixel>> chain_and_round(const std::vector<Pixel>& anchors,
                                                       const std::vector<const FlowField*>& flows) {
    std::vector<std::vector<Pixel>> chains;
    chains.reserve(anchors.size());
    for (const Pixel a : anchors) {
        std::vector<Pixel> chain{a};
        Pixel p = a;
        for (const FlowField* flow : flows) {
            const FlowVector v = (*flow)(p);
            p.x = std::clamp(int(std::lround(p.x + v.dx)), 0, flow->width() - 1);
            p.y = std::clamp(int(std::lround(p.y + v.dy)), 0, flow->height() - 1);
            chain.push_back(p);
        }
        chains.push_back(std::move(chain));
    }
    return chains;
}

/// Re-expresses a flow field computed on the other view in the coordinates of
/// `view`: pixel p takes the flow found at its match r(p, d_p).
inline FlowField transfer_flow(const FlowField& flow, const Grid<int>& disparity, int view) {
    if (flow.width() != disparity.width() || flow.height() != disparity.height())
        throw Error("flow and disparity map differ in size");
    FlowField out(flow.width(), flow.height());
    for (int y = 0; y < flow.height(); ++y)
        for (int x = 0; x < flow.width(); ++x) {
            const int xt = std::clamp(shifted_x(x, disparity(x, y), view), 0, flow.width() - 1);
            out(x, y) = flow(xt, y);
        }
    return out;
}

/// Anchors on a regular grid with the given stride.
inline std::vector<Pixel> strided_anchors(int width, int height, int stride) {
    std::vector<Pixel> anchors;
    for (int y = 0; y < height; y += stride)
        for (int x = 0; x < width; x += stride)
            anchors.push_back({x, y});
    return anchors;
}

/// Source of flow between consecutive frames of one view.
using FlowProvider = std::function<FlowField(const FramePair& current, const FramePair& previous)>;

inline FlowProvider block_flow_provider(int view = 0, BlockFlowParams params = {}) {
    return [view, params](const FramePair& current, const FramePair& previous) {
        return compute_block_flow(current.views[view], previous.views[view], params);
    };
}

inline FlowProvider zero_flow_provider() {
    return [](const FramePair& current, const FramePair&) { return zero_flow(current.width(), current.height()); };
}

}  // namespace mutseg
