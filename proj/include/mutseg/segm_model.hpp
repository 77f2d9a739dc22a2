#pragma once

// Segmentation energy of one view across the temporal layers: GMM color
// term, cross-view contour term, gradient-gated smoothness and flow-linked
// temporal coherence.

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "mutseg/core.hpp"
#include "mutseg/gmm.hpp"

namespace mutseg {

struct SegmParams {
    double lambda_c = 7.0;
    double lambda_s2 = 7.0;
    double lambda_m = 0.5;
    double g = 30.0;
    int gmm_components = 6;
    int temporal_stride = 2;
    int pipeline_depth = 2;
    double contour_tau = 4.0;   // distance scale of the contour cost, px
    double contour_cap = 32.0;  // distances beyond this saturate, px

    bool use_color = true;
    bool use_contour = true;
    bool use_cross_view_contour = true;
    bool use_temporal = true;

    void validate() const {
        if (lambda_c < 0 || lambda_s2 < 0)
            throw Error("segmentation weights must be non-negative");
        if (lambda_m < 0 || lambda_m >= 1)
            throw Error("lambda_m must lie in [0, 1)");
        if (g <= 0)
            throw Error("expected contour gradient g must be positive");
        if (gmm_components < 1)
            throw Error("at least one mixture component is required");
        if (pipeline_depth < 1)
            throw Error("pipeline depth must be >= 1");
        if (temporal_stride < 1)
            throw Error("temporal stride must be >= 1");
        if (contour_tau <= 0 || contour_cap <= 0)
            throw Error("contour cost scale and cap must be positive");
    }

    /// Weight of cross-view lookups in the contour term.
    double contour_cross_weight() const noexcept { return use_cross_view_contour ? lambda_m : 0.0; }
};

// ---------------------------------------------------------------------------
// Distance transforms and contour maps

namespace detail {

// 1-D squared distance transform of sampled function f (Felzenszwalb &
// Huttenlocher lower envelope of parabolas).
inline void squared_distance_1d(const std::vector<double>& f, std::vector<double>& out, std::vector<int>& v,
                                std::vector<double>& z) {
    const int n = int(f.size());
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    out.assign(n, 0.0);
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s;
        while (true) {
            const int p = v[k];
            s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
            if (s <= z[k] && k > 0)
                --k;
            else
                break;
        }
        if (s <= z[k]) {
            v[k] = q;
            z[k + 1] = std::numeric_limits<double>::infinity();
            continue;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q)
            ++k;
        const double d = q - v[k];
        out[q] = d * d + f[v[k]];
    }
}

}  // namespace detail

/// Exact squared Euclidean distance from every pixel to the nearest pixel
/// whose label equals `target`. Pixels have no such neighbor at all when the
/// label is absent; they get +infinity.
inline Grid<double> squared_distance_transform(const SegmentationLabeling& mask, std::uint8_t target) {
    const int w = mask.width(), h = mask.height();
    // stand-in for +inf that keeps the parabola arithmetic exact
    const double far = 4.0 * (double(w) * w + double(h) * h) + 1.0;
    Grid<double> dist(w, h, far);
    std::vector<double> f, out, z;
    std::vector<int> v;
    f.resize(h);
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y)
            f[y] = mask.labels(x, y) == target ? 0.0 : far;
        detail::squared_distance_1d(f, out, v, z);
        for (int y = 0; y < h; ++y)
            dist(x, y) = out[y];
    }
    f.resize(w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            f[x] = dist(x, y);
        detail::squared_distance_1d(f, out, v, z);
        for (int x = 0; x < w; ++x)
            dist(x, y) = out[x] >= far ? std::numeric_limits<double>::infinity() : out[x];
    }
    return dist;
}

/// Euclidean distance transform (see squared_distance_transform).
inline Grid<double> distance_transform(const SegmentationLabeling& mask, std::uint8_t target) {
    Grid<double> dist = squared_distance_transform(mask, target);
    for (double& d : dist.values())
        d = std::sqrt(d);
    return dist;
}

/// f(t) = exp(min(t, cap) / tau) - 1.
inline double contour_distance_cost(double t, double tau, double cap) noexcept {
    return std::exp(std::min(t, cap) / tau) - 1.0;
}

struct ContourCostMaps {
    Grid<float> foreground;  // F: cost of labeling p foreground
    Grid<float> background;  // B: cost of labeling p background
    bool degenerate = false;  // the previous mask lacked one of the labels

    float cost(int label, int x, int y) const noexcept { return label ? foreground(x, y) : background(x, y); }
};

inline ContourCostMaps build_contour_maps(const SegmentationLabeling& previous, const SegmParams& params) {
    const int w = previous.width(), h = previous.height();
    ContourCostMaps maps{Grid<float>(w, h), Grid<float>(w, h), false};
    const Grid<double> to_fg = distance_transform(previous, 1);
    const Grid<double> to_bg = distance_transform(previous, 0);
    for (std::size_t i = 0; i < to_fg.size(); ++i) {
        maps.foreground[i] = float(contour_distance_cost(to_fg[i], params.contour_tau, params.contour_cap));
        maps.background[i] = float(contour_distance_cost(to_bg[i], params.contour_tau, params.contour_cap));
    }
    const std::size_t fg = previous.foreground_count();
    maps.degenerate = fg == 0 || fg == previous.labels.size();
    return maps;
}

// ---------------------------------------------------------------------------
// Unary and pairwise costs

/// Contour cost of labeling (x, y) of view k with `label`: own map plus the
/// lambda_m-weighted map of the other view at the epipolar match.
inline double contour_label_cost(int label, int x, int y, const ContourCostMaps& own, const ContourCostMaps& other,
                                 const DisparityLabeling& disparity, const SegmParams& params) {
    // a one-label previous mask carries no boundary evidence of its own
    double cost = own.degenerate ? 0.0 : own.cost(label, x, y);
    const double cross = params.contour_cross_weight();
    if (cross > 0) {
        const int xt = shifted_x(x, disparity.label(x, y), disparity.view());
        if (xt >= 0 && xt < disparity.width())
            cost += cross * other.cost(label, xt, y);
    }
    return params.lambda_c * cost;
}

inline double contour_cost(const SegmentationLabeling& mask, const ContourCostMaps& own,
                           const ContourCostMaps& other, const DisparityLabeling& disparity,
                           const SegmParams& params) {
    double sum = 0;
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            sum += contour_label_cost(mask.labels(x, y), x, y, own, other, disparity, params);
    return sum;
}

/// Weight paid when the labels of 4-neighbors p and q differ:
/// lambda_s2 * (G(own edge) + lambda_m * G(other view between p' and q')).
/// The cross-view part is dropped when either epipolar match leaves the image.
inline double segm_edge_weight(Pixel p, Pixel q, const GradientMap& own, const Image& other,
                               const DisparityLabeling& disparity, const SegmParams& params) {
    double weight = gradient_scale(own.edge(p, q), params.g);
    if (params.lambda_m > 0) {
        const int w = disparity.width();
        const int xp = shifted_x(p.x, disparity.label(p.x, p.y), disparity.view());
        const int xq = shifted_x(q.x, disparity.label(q.x, q.y), disparity.view());
        if (xp >= 0 && xp < w && xq >= 0 && xq < w) {
            const double diff = channel_max_difference(other.pixel(xp, p.y), other.pixel(xq, q.y));
            weight += params.lambda_m * gradient_scale(diff, params.g);
        }
    }
    return params.lambda_s2 * weight;
}

inline double segm_smoothness_cost(const SegmentationLabeling& mask, const GradientMap& own, const Image& other,
                                   const DisparityLabeling& disparity, const SegmParams& params) {
    double sum = 0;
    for_each_edge(mask.width(), mask.height(), [&](Pixel p, Pixel q) {
        if (mask.labels(p) != mask.labels(q))
            sum += segm_edge_weight(p, q, own, other, disparity, params);
    });
    return sum;
}

// ---------------------------------------------------------------------------
// Temporal cliques

/// G^t: gradient scale of the channel-max color difference between two
/// flow-realigned clique nodes.
inline double temporal_gradient_scale(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, double g) {
    return gradient_scale(channel_max_difference(a, b), g);
}

/// Flow-realigned cliques of one view: `anchors[c * layers + l]` is clique c's
/// node in layer l (layer 0 newest), `scales[c * (layers - 1) + l]` is G^t
/// between layers l and l + 1.
struct TemporalCliqueSet {
    int layers = 1;
    std::vector<Pixel> anchors;
    std::vector<float> scales;

    std::size_t clique_count() const noexcept { return layers > 0 ? anchors.size() / std::size_t(layers) : 0; }
    Pixel anchor(std::size_t c, int l) const noexcept { return anchors[c * layers + l]; }
    float scale(std::size_t c, int l) const noexcept { return scales[c * (layers - 1) + l]; }
};

/// Attaches G^t weights to anchor chains, sampling colors from each layer's
/// image of the view at the rounded anchors.
inline TemporalCliqueSet build_temporal_cliques(const std::vector<std::vector<Pixel>>& chains,
                                                const std::vector<const Image*>& layer_images, double g) {
    TemporalCliqueSet set;
    set.layers = int(layer_images.size());
    for (const auto& chain : chains) {
        if (int(chain.size()) != set.layers)
            throw Error("clique chain length differs from the layer count");
        for (int l = 0; l < set.layers; ++l) {
            const Pixel p = chain[l];
            if (!layer_images[l]->in_bounds(p.x, p.y))
                throw Error("clique anchor out of bounds");
            set.anchors.push_back(p);
        }
        for (int l = 0; l + 1 < set.layers; ++l)
            set.scales.push_back(float(temporal_gradient_scale(layer_images[l]->pixel(chain[l].x, chain[l].y),
                                                               layer_images[l + 1]->pixel(chain[l + 1].x, chain[l + 1].y),
                                                               g)));
    }
    return set;
}

/// lambda_s2 * sum over cliques and consecutive layers of label disagreement
/// times G^t. Only the first min(L, layers available) layers participate.
inline double temporal_cost(const std::vector<const SegmentationLabeling*>& layers, const TemporalCliqueSet& cliques,
                            const SegmParams& params) {
    const int depth = std::min<int>(int(layers.size()), cliques.layers);
    double sum = 0;
    for (std::size_t c = 0; c < cliques.clique_count(); ++c)
        for (int l = 0; l + 1 < depth; ++l) {
            const Pixel a = cliques.anchor(c, l), b = cliques.anchor(c, l + 1);
            if (layers[l]->labels(a) != layers[l + 1]->labels(b))
                sum += cliques.scale(c, l);
        }
    return params.lambda_s2 * sum;
}

// ---------------------------------------------------------------------------
// Totals

/// Everything the segmentation energy of view k needs for one layer.
struct SegmLayerView {
    const Image* image = nullptr;        // view k
    const Image* other_image = nullptr;  // view k'
    const GradientMap* gradients = nullptr;
    const SegmentationLabeling* mask = nullptr;
    const DisparityLabeling* disparity = nullptr;  // of view k
    const ColorModel* color = nullptr;
    const ContourCostMaps* contour = nullptr;        // built from view k's previous mask
    const ContourCostMaps* other_contour = nullptr;  // built from view k''s previous mask
    const std::array<Grid<double>, 2>* color_costs = nullptr;  // optional per-label -log h cache
};

/// Color plus contour cost of giving (x, y) the label `label` in one layer.
inline double segm_unary_cost(const SegmLayerView& layer, int label, int x, int y, const SegmParams& params) {
    double cost = 0;
    if (params.use_color)
        cost += layer.color_costs ? (*layer.color_costs)[label](x, y)
                                  : color_label_cost(layer.color->for_label(label), detail::pixel_color(*layer.image, x, y));
    if (params.use_contour)
        cost += contour_label_cost(label, x, y, *layer.contour, *layer.other_contour, *layer.disparity, params);
    return cost;
}

struct SegmEnergyBreakdown {
    double color = 0;
    double contour = 0;
    double smoothness = 0;
    double temporal = 0;

    double total() const noexcept { return color + contour + smoothness + temporal; }
};

inline void check_layer(const SegmLayerView& layer) {
    if (!layer.image || !layer.other_image || !layer.gradients || !layer.mask || !layer.disparity || !layer.color ||
        !layer.contour || !layer.other_contour)
        throw Error("incomplete segmentation layer inputs");
    const int w = layer.mask->width(), h = layer.mask->height();
    if (layer.image->width() != w || layer.image->height() != h || layer.disparity->width() != w ||
        layer.disparity->height() != h || !layer.contour->foreground.same_shape(w, h) ||
        !layer.other_contour->foreground.same_shape(w, h))
        throw IntegrityError("segmentation layer inputs differ in shape");
    if (!layer.mask->is_binary())
        throw IntegrityError("segmentation labels must be 0 or 1");
}

inline SegmEnergyBreakdown total_segm_energy(const std::vector<SegmLayerView>& layers,
                                             const TemporalCliqueSet& cliques, const SegmParams& params) {
    SegmEnergyBreakdown e;
    std::vector<const SegmentationLabeling*> masks;
    for (const auto& layer : layers) {
        check_layer(layer);
        if (params.use_color)
            e.color += color_cost(*layer.image, *layer.mask, *layer.color);
        if (params.use_contour)
            e.contour += contour_cost(*layer.mask, *layer.contour, *layer.other_contour, *layer.disparity, params);
        e.smoothness += segm_smoothness_cost(*layer.mask, *layer.gradients, *layer.other_image, *layer.disparity, params);
        masks.push_back(layer.mask);
    }
    if (params.use_temporal)
        e.temporal = temporal_cost(masks, cliques, params);
    return e;
}

}  // namespace mutseg
