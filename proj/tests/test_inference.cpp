#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"

using namespace mutseg;
using testing_support::random_image;
using testing_support::random_mask;

// ---------------------------------------------------------------------------
// Disparity expansion

using testing_support::expand_to_convergence;
using testing_support::stereo_energy;
using testing_support::tiny_stereo;
using testing_support::TinyStereo;

TEST(DisparityFusion, ProposalEqualToCurrentUniformLabelingIsANoOp) {
    std::mt19937_64 rng(61);
    const TinyStereo t = tiny_stereo(8, 8, 3, 0, rng);
    DisparityLabeling lab(8, 8, 0, 2);
    DisparityMoveInputs in{&t.priors, &t.params};
    const FusionOutcome out = fuse_uniform_disparity(lab, 2, in);
    EXPECT_FALSE(out.accepted);
    EXPECT_EQ(out.changed, 0);
    EXPECT_EQ(out.delta, 0.0);
}

TEST(DisparityFusion, ExpansionBeatsEveryUniformLabeling) {
    std::mt19937_64 rng(62);
    for (int trial = 0; trial < 20; ++trial) {
        const int view = trial % 2;
        // Potts jumps and no uniqueness term: every expansion move is exact
        TinyStereo t = tiny_stereo(8, 8, 3, view, rng);
        t.params.use_uniqueness = false;
        t.params.truncation = 1;
        t.params.lambda_s1 = 0.5;
        DisparityLabeling lab(8, 8, view);
        lab.assign(testing_support::random_labels(8, 8, 3, rng));
        DisparityMoveInputs in{&t.priors, &t.params};
        for (int a = 0; a <= 3; ++a)
            fuse_uniform_disparity(lab, a, in);
        const double e = stereo_energy(t, lab);
        for (int a = 0; a <= 3; ++a)
            EXPECT_LE(e, stereo_energy(t, DisparityLabeling(8, 8, view, a)) + 1e-9) << "trial " << trial;
    }
}

TEST(DisparityFusion, RealizedChangeNeverExceedsPrediction) {
    std::mt19937_64 rng(63);
    for (int trial = 0; trial < 40; ++trial) {
        const int view = trial % 2;
        TinyStereo t = tiny_stereo(10, 6, 4, view, rng);
        t.params.truncation = 2;  // forces non-submodular tables to be truncated
        DisparityLabeling lab(10, 6, view);
        lab.assign(testing_support::random_labels(10, 6, 4, rng));
        DisparityMoveInputs in{&t.priors, &t.params};
        for (int a = 0; a <= 4; ++a) {
            const double before = stereo_energy(t, lab);
            const FusionOutcome out = fuse_uniform_disparity(lab, a, in);
            const double after = stereo_energy(t, lab);
            if (out.accepted) {
                EXPECT_LE(after - before, out.delta + 1e-9);
                EXPECT_LT(after, before);
            } else {
                EXPECT_EQ(after, before);
            }
        }
    }
}

TEST(DisparityFusion, TwoPixelExpansionNeverRaisesEnergy) {
    // 2x1 image, four labels: all 16 labelings enumerated
    std::mt19937_64 rng(64);
    for (int trial = 0; trial < 200; ++trial) {
        const int view = trial % 2;
        TinyStereo t = tiny_stereo(2, 1, 3, view, rng);
        t.params.lambda_s1 = 0.05 * (trial % 7);
        DisparityLabeling lab(2, 1, view);
        Grid<int> init(2, 1);
        init[0] = int(rng() % 4);
        init[1] = int(rng() % 4);
        lab.assign(init);
        const double start = stereo_energy(t, lab);
        double best = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) {
                DisparityLabeling e(2, 1, view);
                Grid<int> g(2, 1);
                g[0] = a, g[1] = b;
                e.assign(g);
                best = std::min(best, stereo_energy(t, e));
            }
        expand_to_convergence(lab, t, 3);
        const double end = stereo_energy(t, lab);
        EXPECT_LE(end, start + 1e-12);
        EXPECT_GE(end, best - 1e-12);
    }
}

TEST(DisparityFusion, TwoPixelSubmodularInstancesReachTheExhaustiveOptimum) {
    // with two labels and no uniqueness term every expansion table is
    // submodular, and expansion local minima are global
    std::mt19937_64 rng(65);
    for (int trial = 0; trial < 300; ++trial) {
        const int view = trial % 2;
        TinyStereo t = tiny_stereo(2, 1, 1, view, rng);
        t.params.use_uniqueness = false;
        t.params.lambda_s1 = 0.3 * (trial % 5);
        DisparityLabeling lab(2, 1, view);
        Grid<int> init(2, 1);
        init[0] = int(rng() % 2);
        init[1] = int(rng() % 2);
        lab.assign(init);
        double best = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                DisparityLabeling e(2, 1, view);
                Grid<int> g(2, 1);
                g[0] = a, g[1] = b;
                e.assign(g);
                best = std::min(best, stereo_energy(t, e));
            }
        expand_to_convergence(lab, t, 1);
        EXPECT_NEAR(stereo_energy(t, lab), best, 1e-12) << "trial " << trial;
    }
}

// ---------------------------------------------------------------------------
// Segmentation fusion

using testing_support::tiny_segm;
using testing_support::TinySegm;

TEST(SegmentationFusion, MatchesExhaustiveEnumerationOn2x2x2) {
    std::mt19937_64 rng(66);
    int accepted = 0;
    for (int trial = 0; trial < 300; ++trial) {
        TinySegm t = tiny_segm(2, 2, 2, rng);
        t.params.lambda_c = 0.5 * (trial % 5);
        const int beta = trial % 2;
        const double start = t.energy();

        // every labeling reachable by the move: each node keeps its label or takes beta
        std::vector<int> free;
        for (int l = 0; l < 2; ++l)
            for (int i = 0; i < 4; ++i)
                if (t.layers[l].mask.labels[i] != beta)
                    free.push_back(l * 4 + i);
        double best = start;
        for (unsigned bits = 0; bits < (1u << free.size()); ++bits) {
            TinySegm c = t;
            for (std::size_t k = 0; k < free.size(); ++k)
                if ((bits >> k) & 1)
                    c.layers[free[k] / 4].mask.labels[free[k] % 4] = std::uint8_t(beta);
            best = std::min(best, c.energy());
        }

        std::vector<SegmentationLabeling> masks;
        const FusionOutcome out = fuse_segmentation(t.views(), t.cliques, beta, t.params, masks);
        if (best < start - 1e-9) {
            ASSERT_TRUE(out.accepted) << "trial " << trial;
            ++accepted;
            for (int l = 0; l < 2; ++l)
                t.layers[l].mask = masks[l];
            EXPECT_NEAR(t.energy(), best, 1e-9 * std::max(1.0, std::abs(best))) << "trial " << trial;
            EXPECT_NEAR(t.energy() - start, out.delta, 1e-9 * std::max(1.0, std::abs(start)));
        } else {
            EXPECT_FALSE(out.accepted) << "trial " << trial;
        }
    }
    EXPECT_GT(accepted, 50);
}

TEST(SegmentationFusion, ProposalMatchingAllLabelsIsANoOp) {
    std::mt19937_64 rng(67);
    TinySegm t = tiny_segm(4, 4, 2, rng);
    for (auto& v : t.layers)
        v.mask = SegmentationLabeling(4, 4, 1);
    std::vector<SegmentationLabeling> masks;
    const FusionOutcome out = fuse_segmentation(t.views(), t.cliques, 1, t.params, masks);
    EXPECT_FALSE(out.accepted);
    EXPECT_EQ(out.delta, 0.0);
    EXPECT_TRUE(masks.empty());
}

TEST(SegmentationFusion, StrongForegroundColorEvidenceWins) {
    const int w = 10, h = 8;
    Image img(w, h, 1, 200), other(w, h, 1, 50);
    const GradientMap grads(img);
    SegmentationLabeling mask(w, h);
    const DisparityLabeling disp(w, h, 0);
    ColorModel color;
    color.foreground = GaussianMixture(1);
    color.foreground.add_component(1.0, {200, 0, 0}, {25, 0, 0, 0, 0, 0, 0, 0, 0});
    color.background = GaussianMixture(1);
    color.background.add_component(1.0, {20, 0, 0}, {25, 0, 0, 0, 0, 0, 0, 0, 0});
    SegmParams prm;
    prm.lambda_c = 0;
    const ContourCostMaps maps = build_contour_maps(mask, prm);
    const std::vector<SegmLayerView> views{{&img, &other, &grads, &mask, &disp, &color, &maps, &maps, nullptr}};
    std::vector<SegmentationLabeling> masks;
    const FusionOutcome out = fuse_segmentation(views, TemporalCliqueSet{}, 1, prm, masks);
    ASSERT_TRUE(out.accepted);
    EXPECT_EQ(masks[0].foreground_count(), std::size_t(w * h));
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

SynthParams small_synth() {
    SynthParams p;
    p.width = 96;
    p.height = 72;
    p.d_max = 8;
    p.disparity = 4;
    p.frames = 3;
    return p;
}

EngineConfig small_engine(int d_max) {
    EngineConfig cfg;
    cfg.spaces.d_max = d_max;
    cfg.self_similarity.window_radius = 8;
    cfg.shape_context.radius = 12;
    cfg.affinity.window = 7;
    cfg.saliency.window = 7;
    return cfg;
}

std::vector<AdvanceResult> run_stream(const SynthSequence& seq, EngineConfig cfg, std::vector<FrameOutput>* flushed,
                                      PipelineState** keep = nullptr) {
    static std::unique_ptr<PipelineState> holder;
    holder = std::make_unique<PipelineState>(cfg);
    std::vector<AdvanceResult> out;
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
        const auto& f = seq.frames[t];
        InitMasks init;
        if (t == 0)
            init = {f.init[0], f.init[1]};
        out.push_back(advance_pipeline(*holder, f.pair, init, zero_flow_provider()));
    }
    if (flushed)
        *flushed = flush_pipeline(*holder);
    if (keep)
        *keep = holder.get();
    return out;
}

}  // namespace

TEST(Pipeline, DeferredOutputsLagByOneLayer) {
    const SynthSequence seq = generate_synthetic(small_synth());
    std::vector<FrameOutput> flushed;
    const auto results = run_stream(seq, small_engine(8), &flushed);
    ASSERT_EQ(results.size(), 3u);
    std::vector<int> deferred;
    for (std::size_t t = 0; t < results.size(); ++t) {
        EXPECT_EQ(results[t].realtime.frame_index, int(t));
        if (results[t].deferred)
            deferred.push_back(results[t].deferred->frame_index);
    }
    for (const auto& f : flushed)
        deferred.push_back(f.frame_index);
    EXPECT_EQ(deferred, (std::vector<int>{0, 1, 2}));
    EXPECT_FALSE(results[0].deferred.has_value());
    EXPECT_EQ(results[1].deferred->frame_index, 0);
}

TEST(Pipeline, SingleLayerDeferredEqualsRealtime) {
    const SynthSequence seq = generate_synthetic(small_synth());
    EngineConfig cfg = small_engine(8);
    cfg.segm.pipeline_depth = 1;
    std::vector<FrameOutput> flushed;
    const auto results = run_stream(seq, cfg, &flushed);
    for (const auto& r : results) {
        ASSERT_TRUE(r.deferred.has_value());
        EXPECT_EQ(r.deferred->frame_index, r.realtime.frame_index);
        EXPECT_EQ(r.deferred->masks, r.realtime.masks);
        EXPECT_EQ(r.deferred->disparities, r.realtime.disparities);
    }
    EXPECT_TRUE(flushed.empty());
}

TEST(Pipeline, StaticSceneStabilizes) {
    SynthParams p = small_synth();
    p.velocity_x = p.velocity_y = 0;
    p.noise = 0;
    p.frames = 1;
    const SynthSequence seq = generate_synthetic(p);
    PipelineState state(small_engine(8));
    const auto& f = seq.frames[0];
    std::vector<AdvanceResult> results;
    for (int t = 0; t < 4; ++t) {
        FramePair pair = f.pair;
        pair.frame_index = t;
        InitMasks init;
        if (t == 0)
            init = {f.init[0], f.init[1]};
        results.push_back(advance_pipeline(state, pair, init, block_flow_provider()));
    }
    // identical frames give zero block flow and fixed clique anchors
    for (std::size_t c = 0; c < state.cliques[0].clique_count(); ++c)
        EXPECT_EQ(state.cliques[0].anchor(c, 0), state.cliques[0].anchor(c, 1));
    EXPECT_EQ(results[3].realtime.masks, results[2].realtime.masks);
}

TEST(Pipeline, RejectsMissingInitAndSizeChanges) {
    const SynthSequence seq = generate_synthetic(small_synth());
    PipelineState state(small_engine(8));
    EXPECT_THROW(advance_pipeline(state, seq.frames[0].pair, InitMasks{}, zero_flow_provider()), Error);

    PipelineState ok(small_engine(8));
    advance_pipeline(ok, seq.frames[0].pair, {seq.frames[0].init[0], seq.frames[0].init[1]}, zero_flow_provider());
    FramePair small;
    small.frame_index = 1;
    small.views[0] = Image(80, 72, 3);
    small.views[1] = Image(80, 72, 1);
    EXPECT_THROW(advance_pipeline(ok, small, InitMasks{}, zero_flow_provider()), Error);
}

TEST(Pipeline, EmptyInitMasksAreDegenerate) {
    const SynthSequence seq = generate_synthetic(small_synth());
    PipelineState state(small_engine(8));
    const SegmentationLabeling empty(96, 72);
    const AdvanceResult r = advance_pipeline(state, seq.frames[0].pair, {empty, empty}, zero_flow_provider());
    EXPECT_TRUE(r.stats.degenerate);
    EXPECT_TRUE(r.realtime.degenerate);
    EXPECT_EQ(r.realtime.masks[0].foreground_count(), 0u);
    EXPECT_EQ(r.realtime.masks[1].foreground_count(), 0u);
}

TEST(Pipeline, ExactNoiseFreeInitNeedsNoSegmentationMoves) {
    SynthParams p = small_synth();
    p.noise = 0;
    p.corruption = 0;
    p.flat_view = -1;  // a zero-contrast limb is unobservable in one view, so its mask is not a minimum
    p.frames = 1;
    const SynthSequence seq = generate_synthetic(p);
    PipelineState state(small_engine(8));
    const auto& f = seq.frames[0];
    const AdvanceResult r = advance_pipeline(state, f.pair, {f.gt[0], f.gt[1]}, zero_flow_provider());
    ASSERT_FALSE(r.stats.accepted_segmentation_per_pass.empty());
    EXPECT_EQ(r.stats.accepted_segmentation_per_pass[0], 0);
    EXPECT_TRUE(r.stats.converged);
}

TEST(Pipeline, EnergyIsMonotoneAcrossAcceptedMoves) {
    const SynthSequence seq = generate_synthetic(small_synth());
    EngineConfig cfg = small_engine(8);
    cfg.solver.record_energy_trace = true;
    const auto results = run_stream(seq, cfg, nullptr);
    std::size_t moves = 0;
    for (const auto& r : results)
        for (const MoveRecord& m : r.stats.trace) {
            ++moves;
            EXPECT_LE(m.after, m.before + 1e-9 * std::abs(m.before));
            EXPECT_LE(m.after - m.before, m.predicted + 1e-9 * std::abs(m.before));
        }
    EXPECT_GT(moves, 0u);
}

TEST(Pipeline, DeterministicAcrossRuns) {
    const SynthSequence seq = generate_synthetic(small_synth());
    std::vector<FrameOutput> fa, fb;
    const auto a = run_stream(seq, small_engine(8), &fa);
    const auto b = run_stream(seq, small_engine(8), &fb);
    for (std::size_t t = 0; t < a.size(); ++t) {
        EXPECT_EQ(a[t].realtime.masks, b[t].realtime.masks);
        EXPECT_EQ(a[t].realtime.disparities, b[t].realtime.disparities);
        EXPECT_EQ(a[t].energy.total(), b[t].energy.total());
    }
}

TEST(Pipeline, RerunningAConvergedStateAcceptsNothing) {
    SynthParams p = small_synth();
    p.frames = 1;
    const SynthSequence seq = generate_synthetic(p);
    EngineConfig cfg = small_engine(8);
    cfg.solver.max_disparity_passes = 10;
    PipelineState state(cfg);
    const auto& f = seq.frames[0];
    const AdvanceResult first = advance_pipeline(state, f.pair, {f.init[0], f.init[1]}, zero_flow_provider());
    ASSERT_TRUE(first.stats.converged);
    const MinimizeStats again = alternate_minimize(state);
    EXPECT_EQ(again.accepted_disparity_moves, 0);
    EXPECT_EQ(again.accepted_segmentation_moves, 0);
}

TEST(EngineConfig, Validation) {
    EngineConfig cfg;
    cfg.spaces.d_max = 10;
    EXPECT_THROW(cfg.validate(10), Error);
    EXPECT_NO_THROW(cfg.validate(11));
    cfg.flow_view = 2;
    EXPECT_THROW(cfg.validate(11), Error);
}
