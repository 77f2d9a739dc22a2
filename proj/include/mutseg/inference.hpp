#pragma once

// Alternating minimization of the stereo and segmentation energies with
// uniform-proposal fusion moves, and the layered temporal pipeline.

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "mutseg/core.hpp"
#include "mutseg/descriptors.hpp"
#include "mutseg/flow.hpp"
#include "mutseg/gmm.hpp"
#include "mutseg/maxflow.hpp"
#include "mutseg/segm_model.hpp"
#include "mutseg/stereo_model.hpp"

namespace mutseg {

struct SolverConfig {
    int max_disparity_passes = 3;
    int max_segmentation_moves = 50;
    double accept_threshold = 1e-9;    // a move must lower the energy by more than this
    bool record_energy_trace = false;  // recompute the model energy around every accepted move

    void validate() const {
        if (max_disparity_passes < 1 || max_segmentation_moves < 1)
            throw Error("solver bounds must be positive");
        if (accept_threshold < 0)
            throw Error("acceptance threshold must be non-negative");
    }
};

struct EngineConfig {
    LabelSpaces spaces;
    StereoParams stereo;
    SegmParams segm;
    SolverConfig solver;
    SelfSimilarityParams self_similarity;
    ShapeContextParams shape_context;
    AffinityParams affinity;
    SaliencyParams saliency;
    GmmFitParams gmm;
    std::uint64_t seed = 0;
    int flow_view = 0;  // view the flow provider works on; the other view gets it through the disparities

    GmmFitParams gmm_params() const {
        GmmFitParams p = gmm;
        p.components = segm.gmm_components;
        return p;
    }

    void validate(int width) const {
        spaces.validate(width);
        stereo.validate();
        segm.validate();
        solver.validate();
        if (flow_view != 0 && flow_view != 1)
            throw Error("flow view must be 0 or 1");
    }
};

// ---------------------------------------------------------------------------
// Fusion moves

struct FusionOutcome {
    bool accepted = false;
    double delta = 0;  // predicted energy change of the best binary labeling
    int changed = 0;   // pixels that switched
};

/// Everything a disparity move of one view needs besides the labeling. The
/// segmentation pointers are optional; when set, the cross-view contour and
/// smoothness terms of the segmentation energy (which depend on the
/// disparities) join the move energy.
struct DisparityMoveInputs {
    const StereoPriors* priors = nullptr;
    const StereoParams* stereo = nullptr;
    const SegmParams* segm = nullptr;
    const SegmentationLabeling* mask = nullptr;         // own view, current
    const Image* other_image = nullptr;                 // other view
    const ContourCostMaps* other_contour = nullptr;     // other view
};

namespace detail {

inline bool couples_segmentation(const DisparityMoveInputs& in) {
    return in.segm && in.mask && in.other_image && in.other_contour;
}

// Unary disparity cost of p at label d: stereo data terms plus the
// cross-view contour lookup of the segmentation energy.
inline double disparity_unary(const DisparityMoveInputs& in, int view, int width, int x, int y, int d) {
    double cost = stereo_data_cost(*in.priors, *in.stereo, x, y, d);
    if (couples_segmentation(in) && in.segm->use_contour && in.segm->contour_cross_weight() > 0) {
        const int xt = shifted_x(x, d, view);
        if (xt >= 0 && xt < width)
            cost += in.segm->lambda_c * in.segm->contour_cross_weight() *
                    in.other_contour->cost(in.mask->labels(x, y), xt, y);
    }
    return cost;
}

// Pairwise disparity cost of edge (p, q) at labels (a, b).
inline double disparity_pairwise(const DisparityMoveInputs& in, int view, int width, Pixel p, Pixel q, int a, int b,
                                 double own_scale) {
    double cost = 0;
    if (a != b)
        cost += in.stereo->lambda_s1 * disparity_jump_penalty(a, b, in.stereo->truncation) * own_scale;
    if (couples_segmentation(in) && in.segm->lambda_m > 0 && in.mask->labels(p) != in.mask->labels(q)) {
        const int xp = shifted_x(p.x, a, view), xq = shifted_x(q.x, b, view);
        if (xp >= 0 && xp < width && xq >= 0 && xq < width) {
            const double diff =
                channel_max_difference(in.other_image->pixel(xp, p.y), in.other_image->pixel(xq, q.y));
            cost += in.segm->lambda_s2 * in.segm->lambda_m * gradient_scale(diff, in.segm->g);
        }
    }
    return cost;
}

struct PairTable {
    double e00, e01, e10, e11;

    double at(int a, int b) const noexcept { return a ? (b ? e11 : e10) : (b ? e01 : e00); }

    // Raises the mixed entries just enough to make the table submodular;
    // the energy is only ever over-estimated.
    void make_submodular() noexcept {
        const double deficit = e00 + e11 - e01 - e10;
        if (deficit > 0) {
            e01 += deficit / 2;
            e10 += deficit / 2;
        }
    }
};

}  // namespace detail

/// Keep-or-switch-to-alpha move for every pixel of one view, solved by one
/// min-cut. The binary energy over-estimates the uniqueness change (and any
/// truncated non-submodular smoothness entries), so the realized change of
/// the full energy never exceeds the predicted delta. The move is applied
/// only when the delta is below -threshold.
inline FusionOutcome fuse_uniform_disparity(DisparityLabeling& labeling, int alpha, const DisparityMoveInputs& in,
                                            double threshold = 1e-9) {
    if (!in.priors || !in.stereo)
        throw Error("disparity move requires stereo priors and parameters");
    const int w = labeling.width(), h = labeling.height(), view = labeling.view();
    if (!in.priors->appearance.values().empty() &&
        (in.priors->appearance.width() != w || in.priors->appearance.height() != h))
        throw Error("stereo priors and disparity labeling differ in shape");
    if (alpha < 0 || (in.priors->appearance.labels() > 0 && alpha >= in.priors->appearance.labels()))
        throw Error("disparity proposal out of range");
    if (detail::couples_segmentation(in) && (in.mask->width() != w || in.mask->height() != h))
        throw Error("segmentation mask and disparity labeling differ in shape");

    const int n = w * h;
    BinaryEnergy energy(n, std::size_t(2) * n);
    std::vector<double> switch_cost(n, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int d = labeling.label(x, y);
            const int i = y * w + x;
            if (d == alpha)
                continue;
            double c = detail::disparity_unary(in, view, w, x, y, alpha) - detail::disparity_unary(in, view, w, x, y, d);
            if (in.stereo->use_uniqueness)
                c += uniqueness_move_delta({x, y}, d, alpha, labeling, *in.stereo);
            switch_cost[i] = c;
            energy.add_unary(i, 0.0, c);
        }

    std::vector<detail::PairTable> tables;
    tables.reserve(std::size_t(2) * n);
    for_each_edge(w, h, [&](Pixel p, Pixel q) {
        const int a = labeling.label(p.x, p.y), b = labeling.label(q.x, q.y);
        const double scale = gradient_scale(in.priors->gradients.edge(p, q), in.stereo->g);
        detail::PairTable t{detail::disparity_pairwise(in, view, w, p, q, a, b, scale),
                            detail::disparity_pairwise(in, view, w, p, q, a, alpha, scale),
                            detail::disparity_pairwise(in, view, w, p, q, alpha, b, scale),
                            detail::disparity_pairwise(in, view, w, p, q, alpha, alpha, scale)};
        t.make_submodular();
        energy.add_pairwise(p.y * w + p.x, q.y * w + q.x, t.e00, t.e01, t.e10, t.e11);
        tables.push_back(t);
    });

    energy.minimize();
    FusionOutcome out;
    std::vector<std::uint8_t> moved(n, 0);
    for (int i = 0; i < n; ++i)
        if (energy.label(i) && labeling.label(i % w, i / w) != alpha) {
            moved[i] = 1;
            out.delta += switch_cost[i];
            ++out.changed;
        }
    if (out.changed == 0)
        return out;
    std::size_t e = 0;
    for_each_edge(w, h, [&](Pixel p, Pixel q) {
        const auto& t = tables[e++];
        const int a = moved[p.y * w + p.x], b = moved[q.y * w + q.x];
        if (a || b)
            out.delta += t.at(a, b) - t.e00;
    });
    if (out.delta < -threshold) {
        out.accepted = true;
        for (int i = 0; i < n; ++i)
            if (moved[i])
                labeling.set(i % w, i / w, alpha);
    }
    return out;
}

/// Keep-or-switch-to-beta move over every pixel of every layer of one view.
/// Spatial and temporal interactions are label-disagreement penalties, so the
/// binary problem is submodular and solved exactly. On acceptance `masks`
/// receives the new labelings (one per layer); otherwise it is untouched.
inline FusionOutcome fuse_segmentation(const std::vector<SegmLayerView>& layers, const TemporalCliqueSet& cliques,
                                       int beta, const SegmParams& params, std::vector<SegmentationLabeling>& masks,
                                       double threshold = 1e-9) {
    if (beta != 0 && beta != 1)
        throw Error("segmentation proposal must be 0 or 1");
    if (layers.empty())
        throw Error("segmentation move needs at least one layer");
    for (const auto& layer : layers)
        check_layer(layer);
    const int w = layers[0].mask->width(), h = layers[0].mask->height();
    const int plane = w * h;
    const int depth = int(layers.size());
    const int n = plane * depth;

    const auto current = [&](int node) { return int(layers[node / plane].mask->labels[node % plane]); };
    const auto label_of = [&](int node, int x) { return x ? beta : current(node); };

    BinaryEnergy energy(n, std::size_t(3) * n);
    std::vector<double> switch_cost(n, 0.0);
    for (int l = 0; l < depth; ++l)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int node = l * plane + y * w + x;
                const int s = current(node);
                if (s == beta)
                    continue;
                const double c = segm_unary_cost(layers[l], beta, x, y, params) -
                                 segm_unary_cost(layers[l], s, x, y, params);
                switch_cost[node] = c;
                energy.add_unary(node, 0.0, c);
            }

    struct Edge {
        int i, j;
        double weight;
    };
    std::vector<Edge> edges;
    edges.reserve(std::size_t(3) * n);
    for (int l = 0; l < depth; ++l) {
        const SegmLayerView& layer = layers[l];
        for_each_edge(w, h, [&](Pixel p, Pixel q) {
            const double wgt = segm_edge_weight(p, q, *layer.gradients, *layer.other_image, *layer.disparity, params);
            edges.push_back({l * plane + p.y * w + p.x, l * plane + q.y * w + q.x, wgt});
        });
    }
    if (params.use_temporal) {
        const int used = std::min(depth, cliques.layers);
        for (std::size_t c = 0; c < cliques.clique_count(); ++c)
            for (int l = 0; l + 1 < used; ++l) {
                const Pixel a = cliques.anchor(c, l), b = cliques.anchor(c, l + 1);
                edges.push_back({l * plane + a.y * w + a.x, (l + 1) * plane + b.y * w + b.x,
                                 params.lambda_s2 * cliques.scale(c, l)});
            }
    }
    for (const Edge& e : edges) {
        const auto table = [&](int xi, int xj) { return label_of(e.i, xi) != label_of(e.j, xj) ? e.weight : 0.0; };
        energy.add_pairwise(e.i, e.j, table(0, 0), table(0, 1), table(1, 0), table(1, 1));
    }

    energy.minimize();
    FusionOutcome out;
    std::vector<std::uint8_t> moved(n, 0);
    for (int i = 0; i < n; ++i)
        if (energy.label(i) && current(i) != beta) {
            moved[i] = 1;
            out.delta += switch_cost[i];
            ++out.changed;
        }
    if (out.changed == 0)
        return out;
    for (const Edge& e : edges) {
        if (!moved[e.i] && !moved[e.j])
            continue;
        const bool before = current(e.i) != current(e.j);
        const bool after = label_of(e.i, moved[e.i]) != label_of(e.j, moved[e.j]);
        out.delta += (double(after) - double(before)) * e.weight;
    }
    if (out.delta < -threshold) {
        out.accepted = true;
        masks.clear();
        for (int l = 0; l < depth; ++l) {
            SegmentationLabeling m = *layers[l].mask;
            for (int i = 0; i < plane; ++i)
                if (moved[l * plane + i])
                    m.labels[i] = std::uint8_t(beta);
            masks.push_back(std::move(m));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline state

struct ViewState {
    SegmentationLabeling mask;
    DisparityLabeling disparity;
    GradientMap gradients;
    ColorModel color;
    std::array<Grid<double>, 2> color_costs;  // -log h per label
    ContourCostMaps contour;
};

struct Layer {
    FramePair frame;
    std::array<ViewState, 2> views;
    std::array<FlowField, 2> flow_to_older;  // per view, this frame -> the next older frame
    bool has_flow_to_older = false;
    bool disparity_ready = false;
    bool emitted = false;
};

/// Stereo data priors of the newest layer.
struct StereoCache {
    int frame_index = -1;
    std::array<DescriptorField, 2> appearance_fields;
    std::array<StereoPriors, 2> priors;
};

struct PipelineState {
    explicit PipelineState(EngineConfig cfg) : config(std::move(cfg)) {}

    EngineConfig config;
    std::deque<Layer> layers;  // front = newest
    std::array<TemporalCliqueSet, 2> cliques;
    StereoCache stereo;
    int width = 0;
    int height = 0;

    Layer& newest() { return layers.front(); }
    const Layer& newest() const { return layers.front(); }
};

struct ModelEnergy {
    std::array<StereoEnergyBreakdown, 2> stereo;
    std::array<SegmEnergyBreakdown, 2> segm;

    double total() const noexcept {
        return stereo[0].total() + stereo[1].total() + segm[0].total() + segm[1].total();
    }
};

enum class MoveKind { disparity, segmentation };

struct MoveRecord {
    MoveKind kind;
    int view;
    int label;
    double predicted;
    double before;  // model energy before the move
    double after;   // after the move, same priors
};

struct MinimizeStats {
    int disparity_passes = 0;
    int segmentation_moves = 0;
    int accepted_disparity_moves = 0;
    int accepted_segmentation_moves = 0;
    std::vector<int> accepted_segmentation_per_pass;
    bool converged = false;  // stopped on a pass without accepted moves
    bool bound_hit = false;
    bool degenerate = false;  // a view lacked foreground or background evidence
    std::vector<MoveRecord> trace;
};

namespace detail {

inline std::uint64_t color_seed(const EngineConfig& cfg, int frame_index, int view) {
    return cfg.seed * 0x9E3779B97F4A7C15ull + std::uint64_t(frame_index) * 4 + std::uint64_t(view) * 2;
}

inline void refresh_color(const EngineConfig& cfg, Layer& layer, int view) {
    ViewState& v = layer.views[view];
    const Image& image = layer.frame.views[view];
    v.color = fit_color_model(image, v.mask, cfg.gmm_params(), color_seed(cfg, layer.frame.frame_index, view));
    for (int label = 0; label <= 1; ++label) {
        Grid<double>& costs = v.color_costs[label];
        costs = Grid<double>(image.width(), image.height());
        const GaussianMixture& mixture = v.color.for_label(label);
        for (int y = 0; y < image.height(); ++y)
            for (int x = 0; x < image.width(); ++x)
                costs(x, y) = color_label_cost(mixture, pixel_color(image, x, y));
    }
}

inline void refresh_segm_priors(const EngineConfig& cfg, Layer& layer, int view) {
    refresh_color(cfg, layer, view);
    layer.views[view].contour = build_contour_maps(layer.views[view].mask, cfg.segm);
}

}  // namespace detail

/// Segmentation-energy inputs of one view over all buffered layers.
inline std::vector<SegmLayerView> segm_layer_views(const PipelineState& state, int view) {
    std::vector<SegmLayerView> out;
    const int other = other_view(view);
    for (const Layer& layer : state.layers) {
        const ViewState& v = layer.views[view];
        SegmLayerView lv;
        lv.image = &layer.frame.views[view];
        lv.other_image = &layer.frame.views[other];
        lv.gradients = &v.gradients;
        lv.mask = &v.mask;
        lv.disparity = &v.disparity;
        lv.color = &v.color;
        lv.contour = &v.contour;
        lv.other_contour = &layer.views[other].contour;
        lv.color_costs = &v.color_costs;
        out.push_back(lv);
    }
    return out;
}

inline DisparityMoveInputs disparity_move_inputs(const PipelineState& state, int view) {
    const Layer& top = state.newest();
    DisparityMoveInputs in;
    in.priors = &state.stereo.priors[view];
    in.stereo = &state.config.stereo;
    in.segm = &state.config.segm;
    in.mask = &top.views[view].mask;
    in.other_image = &top.frame.views[other_view(view)];
    in.other_contour = &top.views[other_view(view)].contour;
    return in;
}

/// Stereo energy of the newest layer plus the segmentation energy of every
/// buffered layer, both views, recomputed from scratch (color costs from the
/// fitted mixtures, not the cache).
inline ModelEnergy model_energy(const PipelineState& state) {
    ModelEnergy e;
    for (int k = 0; k < 2; ++k) {
        e.stereo[k] = total_stereo_energy(state.newest().views[k].disparity, state.stereo.priors[k], state.config.stereo);
        auto views = segm_layer_views(state, k);
        for (auto& v : views)
            v.color_costs = nullptr;
        e.segm[k] = total_segm_energy(views, state.cliques[k], state.config.segm);
    }
    return e;
}

/// Recomputes the appearance priors (once per newest frame) and the shape
/// priors (from the current newest masks).
inline void refresh_stereo_priors(PipelineState& state, bool shape_only = false) {
    const EngineConfig& cfg = state.config;
    Layer& top = state.newest();
    StereoCache& cache = state.stereo;
    const int w = state.width, h = state.height, labels = cfg.spaces.disparity_count();

    if (!shape_only || cache.frame_index != top.frame.frame_index) {
        cache.frame_index = top.frame.frame_index;
        for (int k = 0; k < 2; ++k)
            cache.priors[k].gradients = top.views[k].gradients;
        if (cfg.stereo.use_appearance) {
            for (int k = 0; k < 2; ++k)
                cache.appearance_fields[k] = compute_self_similarity_field(top.frame.views[k], cfg.self_similarity);
            for (int k = 0; k < 2; ++k) {
                StereoPriors& p = cache.priors[k];
                p.appearance = build_affinity_volume(cache.appearance_fields[k], cache.appearance_fields[other_view(k)],
                                                     cfg.spaces, k, cfg.affinity);
                p.appearance_saliency =
                    cfg.stereo.use_saliency
                        ? build_saliency_map(p.appearance, cache.appearance_fields[k], Cue::appearance, k, nullptr,
                                             cfg.saliency)
                        : uniform_saliency_map(w, h, Cue::appearance);
            }
        } else {
            for (int k = 0; k < 2; ++k) {
                cache.priors[k].appearance = AffinityCostVolume(w, h, labels);
                cache.priors[k].appearance_saliency = SaliencyMap{Grid<float>(w, h, 0.f), Cue::appearance};
            }
        }
    }

    if (cfg.stereo.use_shape) {
        std::array<DescriptorField, 2> fields;
        for (int k = 0; k < 2; ++k)
            fields[k] = compute_shape_context_field(top.views[k].mask, cfg.shape_context);
        for (int k = 0; k < 2; ++k) {
            StereoPriors& p = cache.priors[k];
            p.shape = build_affinity_volume(fields[k], fields[other_view(k)], cfg.spaces, k, cfg.affinity);
            p.shape_saliency = cfg.stereo.use_saliency
                                   ? build_saliency_map(p.shape, fields[k], Cue::shape, k, &top.views[k].mask,
                                                        cfg.saliency)
                                   : uniform_saliency_map(w, h, Cue::shape, &top.views[k].mask);
        }
    } else {
        for (int k = 0; k < 2; ++k) {
            cache.priors[k].shape = AffinityCostVolume(w, h, labels);
            cache.priors[k].shape_saliency = SaliencyMap{Grid<float>(w, h, 0.f), Cue::shape};
        }
    }
}

/// Winner-take-all disparities from the unary costs, ties to the smaller d.
inline void initialize_disparities(PipelineState& state) {
    Layer& top = state.newest();
    for (int k = 0; k < 2; ++k) {
        const DisparityMoveInputs in = disparity_move_inputs(state, k);
        Grid<int> labels(state.width, state.height, 0);
        for (int y = 0; y < state.height; ++y)
            for (int x = 0; x < state.width; ++x) {
                double best = 0;
                for (int d = 0; d <= state.config.spaces.d_max; ++d) {
                    const double c = detail::disparity_unary(in, k, state.width, x, y, d);
                    if (d == 0 || c < best) {
                        best = c;
                        labels(x, y) = d;
                    }
                }
            }
        top.views[k].disparity.assign(labels);
    }
    top.disparity_ready = true;
}

/// Interleaves disparity expansion sweeps with rounds of segmentation
/// fusions on the newest frame (segmentation moves cover every buffered
/// layer). Stops after a pass that accepts nothing, or when the segmentation
/// move budget runs out (bound_hit).
inline MinimizeStats alternate_minimize(PipelineState& state) {
    if (state.layers.empty())
        throw Error("pipeline has no frames");
    const EngineConfig& cfg = state.config;
    const SolverConfig& solver = cfg.solver;
    Layer& top = state.newest();
    MinimizeStats stats;

    for (int k = 0; k < 2; ++k)
        detail::refresh_segm_priors(cfg, top, k);
    refresh_stereo_priors(state, state.stereo.frame_index == top.frame.frame_index);
    if (!top.disparity_ready)
        initialize_disparities(state);

    // model energy before the next move; invalidated whenever priors change
    std::optional<double> current;
    const auto energy_before = [&]() {
        if (solver.record_energy_trace && !current)
            current = model_energy(state).total();
        return current.value_or(0.0);
    };
    const auto record = [&](MoveKind kind, int view, int label, double predicted, double before) {
        if (!solver.record_energy_trace)
            return;
        current = model_energy(state).total();
        stats.trace.push_back({kind, view, label, predicted, before, *current});
    };

    while (true) {
        int accepted_this_pass = 0;
        if (stats.disparity_passes < solver.max_disparity_passes) {
            ++stats.disparity_passes;
            for (int alpha = 0; alpha <= cfg.spaces.d_max; ++alpha)
                for (int k = 0; k < 2; ++k) {
                    const double before = energy_before();
                    const FusionOutcome out = fuse_uniform_disparity(top.views[k].disparity, alpha,
                                                                     disparity_move_inputs(state, k),
                                                                     solver.accept_threshold);
                    if (out.accepted) {
                        ++stats.accepted_disparity_moves;
                        ++accepted_this_pass;
                        record(MoveKind::disparity, k, alpha, out.delta, before);
                    }
                }
        }

        // Fusion rounds (beta = 1 then 0, both views) under fixed priors until
        // a round accepts nothing.
        int segm_accepted = 0;
        bool round_clean = false;
        while (stats.segmentation_moves < solver.max_segmentation_moves) {
            int round_accepted = 0;
            bool round_complete = true;
            for (int beta : {1, 0})
                for (int k = 0; k < 2; ++k) {
                    if (stats.segmentation_moves >= solver.max_segmentation_moves) {
                        round_complete = false;
                        break;
                    }
                    ++stats.segmentation_moves;
                    const double before = energy_before();
                    std::vector<SegmentationLabeling> masks;
                    const FusionOutcome out = fuse_segmentation(segm_layer_views(state, k), state.cliques[k], beta,
                                                                cfg.segm, masks, solver.accept_threshold);
                    if (!out.accepted)
                        continue;
                    ++round_accepted;
                    std::size_t l = 0;
                    for (Layer& layer : state.layers)
                        layer.views[k].mask = std::move(masks[l++]);
                    record(MoveKind::segmentation, k, beta, out.delta, before);
                }
            segm_accepted += round_accepted;
            if (round_accepted == 0 && round_complete) {
                round_clean = true;
                break;
            }
        }
        stats.accepted_segmentation_moves += segm_accepted;
        stats.accepted_segmentation_per_pass.push_back(segm_accepted);
        accepted_this_pass += segm_accepted;
        // the masks moved: refit color and contour priors, then the shape priors
        if (segm_accepted > 0) {
            for (Layer& layer : state.layers)
                for (int k = 0; k < 2; ++k)
                    detail::refresh_segm_priors(cfg, layer, k);
            refresh_stereo_priors(state, true);
            current.reset();
        }

        if (!round_clean) {
            stats.bound_hit = true;
            break;
        }
        // with the sweep budget spent, a clean segmentation round is final
        if (accepted_this_pass == 0 || stats.disparity_passes >= solver.max_disparity_passes) {
            stats.converged = true;
            break;
        }
    }

    for (int k = 0; k < 2; ++k) {
        top.views[k].disparity.verify_counts();
        stats.degenerate = stats.degenerate || top.views[k].color.degenerate;
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Temporal pipeline

struct FrameOutput {
    int frame_index = 0;
    std::array<SegmentationLabeling, 2> masks;
    std::array<Grid<int>, 2> disparities;
    bool degenerate = false;
};

struct AdvanceResult {
    FrameOutput realtime;
    std::optional<FrameOutput> deferred;
    MinimizeStats stats;
    ModelEnergy energy;
};

using InitMasks = std::array<std::optional<SegmentationLabeling>, 2>;

namespace detail {

inline FrameOutput layer_output(const Layer& layer) {
    FrameOutput out;
    out.frame_index = layer.frame.frame_index;
    for (int k = 0; k < 2; ++k) {
        out.masks[k] = layer.views[k].mask;
        out.disparities[k] = layer.views[k].disparity.labels();
        out.degenerate = out.degenerate || layer.views[k].color.degenerate;
    }
    return out;
}

// Looks up each pixel's flow-realigned position in the older frame.
template <typename T>
Grid<T> warp_by_flow(const Grid<T>& older, const FlowField& flow) {
    Grid<T> out(older.width(), older.height());
    for (int y = 0; y < older.height(); ++y)
        for (int x = 0; x < older.width(); ++x) {
            const FlowVector v = flow(x, y);
            const int sx = std::clamp(int(std::lround(x + v.dx)), 0, older.width() - 1);
            const int sy = std::clamp(int(std::lround(y + v.dy)), 0, older.height() - 1);
            out(x, y) = older(sx, sy);
        }
    return out;
}

inline void rebuild_cliques(PipelineState& state) {
    const int depth = int(state.layers.size());
    const auto anchors = strided_anchors(state.width, state.height, state.config.segm.temporal_stride);
    for (int k = 0; k < 2; ++k) {
        std::vector<const FlowField*> flows;
        for (int l = 0; l + 1 < depth; ++l)
            flows.push_back(&state.layers[l].flow_to_older[k]);
        const auto chains = chain_and_round(anchors, flows);
        std::vector<const Image*> images;
        for (const Layer& layer : state.layers)
            images.push_back(&layer.frame.views[k]);
        state.cliques[k] = build_temporal_cliques(chains, images, state.config.segm.g);
    }
}

}  // namespace detail

/// Pushes a new frame pair, optimizes it jointly with the buffered layers
/// and returns the newest labelings. Once the buffer holds L layers its
/// oldest layer is final and is returned as the deferred output. Views
/// without an initialization mask inherit the flow-realigned previous result.
inline AdvanceResult advance_pipeline(PipelineState& state, FramePair pair, const InitMasks& init,
                                      const FlowProvider& flow_provider) {
    pair.validate();
    const EngineConfig& cfg = state.config;
    if (state.width == 0) {
        cfg.validate(pair.width());
        state.width = pair.width();
        state.height = pair.height();
    } else if (pair.width() != state.width || pair.height() != state.height) {
        throw Error("frame " + std::to_string(pair.frame_index) + ": size " + std::to_string(pair.width()) + "x" +
                    std::to_string(pair.height()) + " differs from the stream size " + std::to_string(state.width) +
                    "x" + std::to_string(state.height));
    }

    Layer layer;
    layer.frame = std::move(pair);
    const int frame_index = layer.frame.frame_index;
    const Layer* previous = state.layers.empty() ? nullptr : &state.layers.front();
    if (previous) {
        const int fv = cfg.flow_view, ov = other_view(fv);
        layer.flow_to_older[fv] = flow_provider(layer.frame, previous->frame);
        if (!layer.flow_to_older[fv].same_shape(state.width, state.height))
            throw Error("frame " + std::to_string(frame_index) + ": flow field has the wrong size");
        // the other view follows its matches; their disparities are guessed
        // from the previous result at the same pixel first
        const Grid<int> guess = detail::warp_by_flow(
            previous->views[ov].disparity.labels(),
            transfer_flow(layer.flow_to_older[fv], previous->views[ov].disparity.labels(), ov));
        layer.flow_to_older[ov] = transfer_flow(layer.flow_to_older[fv], guess, ov);
        layer.has_flow_to_older = true;
    }
    for (int k = 0; k < 2; ++k) {
        ViewState& v = layer.views[k];
        v.gradients = compute_gradient_map(layer.frame.views[k]);
        if (init[k]) {
            if (init[k]->width() != state.width || init[k]->height() != state.height)
                throw Error("frame " + std::to_string(frame_index) + ": initialization mask of view " +
                            std::to_string(k) + " has the wrong size");
            if (!init[k]->is_binary())
                throw Error("frame " + std::to_string(frame_index) + ": initialization mask is not binary");
            v.mask = *init[k];
        } else if (previous) {
            v.mask.labels = detail::warp_by_flow(previous->views[k].mask.labels, layer.flow_to_older[k]);
        } else {
            throw Error("frame " + std::to_string(frame_index) + ": missing initialization mask for view " +
                        std::to_string(k));
        }
        v.disparity = DisparityLabeling(state.width, state.height, k, 0);
        if (previous)
            v.disparity.assign(detail::warp_by_flow(previous->views[k].disparity.labels(), layer.flow_to_older[k]));
    }
    layer.disparity_ready = previous != nullptr;

    if (int(state.layers.size()) >= cfg.segm.pipeline_depth)
        state.layers.pop_back();
    state.layers.push_front(std::move(layer));
    detail::rebuild_cliques(state);

    AdvanceResult result;
    result.stats = alternate_minimize(state);
    result.energy = model_energy(state);
    result.realtime = detail::layer_output(state.newest());
    if (int(state.layers.size()) == cfg.segm.pipeline_depth) {
        Layer& oldest = state.layers.back();
        result.deferred = detail::layer_output(oldest);
        oldest.emitted = true;
    }
    return result;
}

/// Deferred outputs of every buffered layer not yet emitted, oldest first.
inline std::vector<FrameOutput> flush_pipeline(PipelineState& state) {
    std::vector<FrameOutput> out;
    for (auto it = state.layers.rbegin(); it != state.layers.rend(); ++it)
        if (!it->emitted) {
            out.push_back(detail::layer_output(*it));
            it->emitted = true;
        }
    return out;
}

}  // namespace mutseg
