#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "support.hpp"

using namespace mutseg;
using testing_support::random_image;
using testing_support::scratch_dir;

TEST(BlockFlow, IdenticalFramesGiveZeroFlow) {
    std::mt19937_64 rng(81);
    const Image img = random_image(48, 40, 3, rng);
    const FlowField flow = compute_block_flow(img, img);
    for (const FlowVector& v : flow.values())
        EXPECT_EQ(v, FlowVector{});
}

TEST(BlockFlow, RecoversGlobalShiftInTheInterior) {
    // content at x in the current frame sat at x + 3 in the previous one
    std::mt19937_64 rng(82);
    const Image prev = random_image(72, 56, 1, rng);
    Image cur(72, 56, 1);
    for (int y = 0; y < 56; ++y)
        for (int x = 0; x < 72; ++x)
            cur.at(x, y) = prev.at(std::min(x + 3, 71), y);
    const FlowField flow = compute_block_flow(cur, prev);
    for (int y = 8; y < 48; ++y)
        for (int x = 8; x < 56; ++x) {
            EXPECT_NEAR(flow(x, y).dx, 3.f, 1.f);
            EXPECT_NEAR(flow(x, y).dy, 0.f, 1.f);
        }
}

TEST(BlockFlow, NoiseFramesStayWithinSearchRadius) {
    std::mt19937_64 rng(83);
    for (int trial = 0; trial < 5; ++trial) {
        const Image a = random_image(40, 40, 1, rng), b = random_image(40, 40, 1, rng);
        BlockFlowParams prm;
        prm.radius = 4 + trial;
        for (const FlowVector& v : compute_block_flow(a, b, prm).values()) {
            EXPECT_LE(std::abs(v.dx), float(prm.radius));
            EXPECT_LE(std::abs(v.dy), float(prm.radius));
        }
    }
}

TEST(BlockFlow, RejectsSizeMismatch) {
    EXPECT_THROW(compute_block_flow(Image(8, 8, 1), Image(9, 8, 1)), Error);
}

TEST(FlowFile, RoundTrip) {
    const std::string dir = scratch_dir("flow_roundtrip");
    FlowField flow(5, 3);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 5; ++x)
            flow(x, y) = {x * 0.5f - 1, -y * 1.25f};
    save_flow_file(dir + "/a.flo", flow);
    EXPECT_EQ(load_flow_file(dir + "/a.flo", 5, 3), flow);
    save_flow_file(dir + "/z.flo", zero_flow(4, 4));
    EXPECT_EQ(load_flow_file(dir + "/z.flo"), zero_flow(4, 4));
}

TEST(FlowFile, DimensionMismatchNamesBothSizes) {
    const std::string dir = scratch_dir("flow_mismatch");
    save_flow_file(dir + "/a.flo", zero_flow(5, 3));
    try {
        load_flow_file(dir + "/a.flo", 6, 3);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("6x3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("5x3"), std::string::npos) << msg;
    }
}

TEST(FlowFile, RejectsNonFiniteValues) {
    const std::string dir = scratch_dir("flow_nan");
    FlowField flow(2, 2);
    flow(1, 1).dy = std::nanf("");
    save_flow_file(dir + "/a.flo", flow);
    EXPECT_THROW(load_flow_file(dir + "/a.flo"), Error);
}

TEST(FlowFile, RejectsMalformedHeaders) {
    const std::string dir = scratch_dir("flow_header");
    {
        std::ofstream(dir + "/short.flo", std::ios::binary) << "PIEH";
        EXPECT_THROW(load_flow_file(dir + "/short.flo"), Error);
    }
    {
        std::ofstream out(dir + "/magic.flo", std::ios::binary);
        const float magic = 1.0f;
        const std::int32_t w = 2, h = 2;
        out.write(reinterpret_cast<const char*>(&magic), 4);
        out.write(reinterpret_cast<const char*>(&w), 4);
        out.write(reinterpret_cast<const char*>(&h), 4);
    }
    EXPECT_THROW(load_flow_file(dir + "/magic.flo"), Error);
    {
        std::ofstream out(dir + "/trunc.flo", std::ios::binary);
        const std::int32_t w = 4, h = 4;
        out.write(reinterpret_cast<const char*>(&kFlowMagic), 4);
        out.write(reinterpret_cast<const char*>(&w), 4);
        out.write(reinterpret_cast<const char*>(&h), 4);
    }
    EXPECT_THROW(load_flow_file(dir + "/trunc.flo"), Error);
    EXPECT_THROW(load_flow_file(dir + "/missing.flo"), Error);
}

TEST(ChainAndRound, ZeroFlowKeepsAnchors) {
    const FlowField z = zero_flow(10, 10);
    const auto chains = chain_and_round({{2, 3}, {9, 9}}, {&z, &z});
    EXPECT_EQ(chains[0], (std::vector<Pixel>{{2, 3}, {2, 3}, {2, 3}}));
    EXPECT_EQ(chains[1], (std::vector<Pixel>{{9, 9}, {9, 9}, {9, 9}}));
}

TEST(ChainAndRound, UniformFlowAccumulatesAndClamps) {
    FlowField f(20, 5);
    for (auto& v : f.values())
        v = {3.f, 0.f};
    const auto chains = chain_and_round({{4, 2}, {15, 1}}, {&f, &f});
    EXPECT_EQ(chains[0], (std::vector<Pixel>{{4, 2}, {7, 2}, {10, 2}}));
    EXPECT_EQ(chains[1], (std::vector<Pixel>{{15, 1}, {18, 1}, {19, 1}}));
}

TEST(ChainAndRound, RoundsToNearestPixel) {
    FlowField f(10, 10);
    for (auto& v : f.values())
        v = {1.4f, -0.6f};
    const auto chains = chain_and_round({{0, 5}}, {&f});
    EXPECT_EQ(chains[0][1], (Pixel{1, 4}));
}

TEST(ChainAndRound, OutwardFlowAtBorderIsClamped) {
    FlowField f(6, 6);
    for (auto& v : f.values())
        v = {-4.f, 5.f};
    const auto chains = chain_and_round({{0, 5}}, {&f});
    EXPECT_EQ(chains[0][1], (Pixel{0, 5}));
}

TEST(TransferFlow, SamplesTheMatchedPixel) {
    FlowField f(6, 1);
    for (int x = 0; x < 6; ++x)
        f(x, 0) = {float(x), 0.f};
    Grid<int> disp(6, 1, 2);
    const FlowField v0 = transfer_flow(f, disp, 0);
    const FlowField v1 = transfer_flow(f, disp, 1);
    const float left[6] = {0, 0, 0, 1, 2, 3}, right[6] = {2, 3, 4, 5, 5, 5};
    for (int x = 0; x < 6; ++x) {
        EXPECT_EQ(v0(x, 0).dx, left[x]);
        EXPECT_EQ(v1(x, 0).dx, right[x]);
    }
    EXPECT_THROW(transfer_flow(f, Grid<int>(5, 1), 0), Error);
}

TEST(StridedAnchors, CoverGrid) {
    const auto a = strided_anchors(5, 3, 2);
    EXPECT_EQ(a, (std::vector<Pixel>{{0, 0}, {2, 0}, {4, 0}, {0, 2}, {2, 2}, {4, 2}}));
}

TEST(FlowProviders, StaticSceneOutputsDoNotDependOnProvider) {
    SynthParams p;
    p.width = 96;
    p.height = 72;
    p.d_max = 8;
    p.disparity = 4;
    p.frames = 1;
    const SynthSequence seq = generate_synthetic(p);
    EngineConfig cfg;
    cfg.spaces.d_max = 8;
    cfg.self_similarity.window_radius = 8;
    cfg.shape_context.radius = 12;
    cfg.affinity.window = 7;
    cfg.saliency.window = 7;
    PipelineState a(cfg), b(cfg);
    const auto& f = seq.frames[0];
    for (int t = 0; t < 3; ++t) {
        FramePair pair = f.pair;
        pair.frame_index = t;
        InitMasks init;
        if (t == 0)
            init = {f.init[0], f.init[1]};
        const AdvanceResult ra = advance_pipeline(a, pair, init, zero_flow_provider());
        const AdvanceResult rb = advance_pipeline(b, pair, init, block_flow_provider(1));
        EXPECT_EQ(ra.realtime.masks, rb.realtime.masks) << "frame " << t;
        EXPECT_EQ(ra.realtime.disparities, rb.realtime.disparities) << "frame " << t;
    }
}
