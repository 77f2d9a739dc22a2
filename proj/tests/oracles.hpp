#pragma once

// Independent from-scratch references shared by the unit tests and the
// acceptance binary.

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "support.hpp"

namespace testing_support {

struct StereoInstance {
    StereoPriors priors;
    DisparityLabeling labeling;
};

inline StereoInstance random_instance(int w, int h, int d_max, int view, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> cost(0, 5), sal(0, 1);
    StereoInstance inst;
    auto& p = inst.priors;
    p.appearance = AffinityCostVolume(w, h, d_max + 1);
    p.shape = AffinityCostVolume(w, h, d_max + 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int d = 0; d <= d_max; ++d) {
                const bool in = rectified_shift({x, y}, d, view, w).has_value();
                p.appearance.at(x, y, d) = in ? cost(rng) : 0.f;
                p.shape.at(x, y, d) = in ? cost(rng) : 0.f;
            }
    p.appearance_saliency = {Grid<float>(w, h), Cue::appearance};
    p.shape_saliency = {Grid<float>(w, h), Cue::shape};
    for (auto& v : p.appearance_saliency.weights.values())
        v = sal(rng);
    for (auto& v : p.shape_saliency.weights.values())
        v = rng() % 3 == 0 ? 0.f : sal(rng);
    p.gradients = GradientMap(random_image(w, h, 3, rng, 0, 90));
    inst.labeling = DisparityLabeling(w, h, view);
    inst.labeling.assign(random_labels(w, h, d_max, rng));
    return inst;
}

// From-scratch evaluation: its own correspondence histogram, closed-form
// uniqueness sums and explicit neighbor loops.
inline double oracle_stereo_energy(const StereoInstance& inst, const StereoParams& prm, double* smooth_out = nullptr) {
    const auto& lab = inst.labeling;
    const int w = lab.width(), h = lab.height(), view = lab.view();
    double data = 0;
    std::vector<int> hist(std::size_t(w) * h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int d = lab.labels()(x, y);
            data += inst.priors.appearance.at(x, y, d) * double(inst.priors.appearance_saliency.weights(x, y));
            data += inst.priors.shape.at(x, y, d) * double(inst.priors.shape_saliency.weights(x, y));
            const int xt = view == 0 ? x - d : x + d;
            if (xt >= 0 && xt < w)
                ++hist[std::size_t(y) * w + xt];
        }
    double uniq = 0;
    for (int n : hist)
        for (int k = 1; k <= n - 1; ++k)
            uniq += prm.w * k / (prm.w + k - 1);
    double smooth = 0;
    const auto pair = [&](int x0, int y0, int x1, int y1, double grad) {
        const int jump = std::min(std::abs(lab.labels()(x0, y0) - lab.labels()(x1, y1)), prm.truncation);
        smooth += jump * jump * std::max(std::exp(1 - grad / prm.g) - 0.5, 0.0);
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (x + 1 < w)
                pair(x, y, x + 1, y, inst.priors.gradients.horizontal(x, y));
            if (y + 1 < h)
                pair(x, y, x, y + 1, inst.priors.gradients.vertical(x, y));
        }
    if (smooth_out)
        *smooth_out = prm.lambda_s1 * smooth;
    return data + prm.lambda_u * uniq + prm.lambda_s1 * smooth;
}


struct SegmInstance {
    struct View {
        Image image, other;
        GradientMap gradients;
        SegmentationLabeling mask;
        DisparityLabeling disparity;
        ColorModel color;
        ContourCostMaps contour, other_contour;
    };
    std::vector<View> layers;
    TemporalCliqueSet cliques;

    std::vector<SegmLayerView> views() const {
        std::vector<SegmLayerView> out;
        for (const auto& v : layers)
            out.push_back({&v.image, &v.other, &v.gradients, &v.mask, &v.disparity, &v.color, &v.contour,
                           &v.other_contour, nullptr});
        return out;
    }
};

inline SegmInstance random_segm_instance(int w, int h, int depth, std::mt19937_64& rng, const SegmParams& prm) {
    SegmInstance inst;
    const int view = int(rng() % 2);
    for (int l = 0; l < depth; ++l) {
        SegmInstance::View v;
        v.image = random_image(w, h, 3, rng);
        v.other = random_image(w, h, 1, rng);
        v.gradients = GradientMap(v.image);
        v.mask = random_mask(w, h, rng);
        v.disparity = DisparityLabeling(w, h, view);
        v.disparity.assign(testing_support::random_labels(w, h, 3, rng));
        GmmFitParams gp;
        gp.components = 2;
        v.color = fit_color_model(v.image, random_mask(w, h, rng), gp, rng());
        v.contour = build_contour_maps(random_mask(w, h, rng, 0.4), prm);
        v.other_contour = build_contour_maps(random_mask(w, h, rng, 0.6), prm);
        inst.layers.push_back(std::move(v));
    }
    inst.cliques.layers = depth;
    std::uniform_real_distribution<float> s(0, 2.2f);
    for (int y = 0; y < h; y += 2)
        for (int x = 0; x < w; x += 2) {
            for (int l = 0; l < depth; ++l)
                inst.cliques.anchors.push_back({l == 0 ? x : int(rng() % w), l == 0 ? y : int(rng() % h)});
            for (int l = 0; l + 1 < depth; ++l)
                inst.cliques.scales.push_back(s(rng));
        }
    return inst;
}

// Gaussian density through an explicit cofactor inverse and determinant.
inline double oracle_density(const GaussianMixture& m, const Color& x) {
    const int n = m.channels();
    double h = 0;
    for (const auto& c : m.components()) {
        if (c.weight <= 0)
            continue;
        const auto& S = c.covariance;
        double det, q;
        if (n == 1) {
            det = S[0];
            q = (x[0] - c.mean[0]) * (x[0] - c.mean[0]) / det;
        } else {
            const double a = S[0], b = S[1], cc = S[2], d = S[3], e = S[4], f = S[5], g = S[6], hh = S[7], i = S[8];
            const double A = e * i - f * hh, B = -(d * i - f * g), C = d * hh - e * g;
            const double D = -(b * i - cc * hh), E = a * i - cc * g, F = -(a * hh - b * g);
            const double G = b * f - cc * e, H = -(a * f - cc * d), I = a * e - b * d;
            det = a * A + b * B + cc * C;
            const double inv[9] = {A / det, D / det, G / det, B / det, E / det, H / det, C / det, F / det, I / det};
            const double v[3] = {x[0] - c.mean[0], x[1] - c.mean[1], x[2] - c.mean[2]};
            q = 0;
            for (int r = 0; r < 3; ++r)
                for (int k = 0; k < 3; ++k)
                    q += v[r] * inv[r * 3 + k] * v[k];
        }
        h += c.weight * std::exp(-0.5 * q) / std::sqrt(std::pow(2 * std::numbers::pi, n) * det);
    }
    return h;
}

inline double oracle_segm_energy(const SegmInstance& inst, const SegmParams& prm) {
    double color = 0, contour = 0, smooth = 0, temporal = 0;
    const auto G = [&](double grad) { return std::max(std::exp(1 - grad / prm.g) - 0.5, 0.0); };
    for (const auto& v : inst.layers) {
        const int w = v.mask.width(), h = v.mask.height(), view = v.disparity.view();
        const auto match = [&](int x, int y) { return view == 0 ? x - v.disparity.labels()(x, y) : x + v.disparity.labels()(x, y); };
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int s = v.mask.labels(x, y);
                Color c{};
                for (int ch = 0; ch < 3; ++ch)
                    c[ch] = v.image.at(x, y, ch);
                color += -std::log(std::max(oracle_density(s ? v.color.foreground : v.color.background, c), 1e-30));
                const Grid<float>& own = s ? v.contour.foreground : v.contour.background;
                const Grid<float>& oth = s ? v.other_contour.foreground : v.other_contour.background;
                double term = v.contour.degenerate ? 0.0 : own(x, y);
                const int xt = match(x, y);
                if (xt >= 0 && xt < w)
                    term += prm.lambda_m * oth(xt, y);
                contour += prm.lambda_c * term;
            }
        const auto edge = [&](int x0, int y0, int x1, int y1) {
            if (v.mask.labels(x0, y0) == v.mask.labels(x1, y1))
                return;
            int diff = 0;
            for (int ch = 0; ch < 3; ++ch)
                diff = std::max(diff, std::abs(int(v.image.at(x0, y0, ch)) - int(v.image.at(x1, y1, ch))));
            double wgt = G(diff);
            const int a = match(x0, y0), b = match(x1, y1);
            if (a >= 0 && a < w && b >= 0 && b < w)
                wgt += prm.lambda_m * G(std::abs(int(v.other.at(a, y0)) - int(v.other.at(b, y1))));
            smooth += prm.lambda_s2 * wgt;
        };
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (x + 1 < w)
                    edge(x, y, x + 1, y);
                if (y + 1 < h)
                    edge(x, y, x, y + 1);
            }
    }
    const int L = inst.cliques.layers;
    for (std::size_t c = 0; c * L < inst.cliques.anchors.size(); ++c)
        for (int l = 0; l + 1 < L && l + 1 < int(inst.layers.size()); ++l) {
            const Pixel a = inst.cliques.anchors[c * L + l], b = inst.cliques.anchors[c * L + l + 1];
            if (inst.layers[l].mask.labels(a) != inst.layers[l + 1].mask.labels(b))
                temporal += prm.lambda_s2 * inst.cliques.scales[c * (L - 1) + l];
        }
    return color + contour + smooth + temporal;
}


inline DescriptorField random_field(int w, int h, int dims, std::mt19937_64& rng) {
    DescriptorField f(w, h, dims, DescriptorKind::self_similarity);
    std::uniform_real_distribution<float> u(0, 1);
    for (float& v : f.values())
        v = u(rng);
    return f;
}

// Direct double loop: mean over the full window (zeros outside the image) of
// fixed-point (20 fractional bits) L2 distances.
inline float brute_affinity(const DescriptorField& a, const DescriptorField& b, int x, int y, int d, int view, int window) {
    const int w = a.width(), h = a.height(), r = window / 2;
    const int xt = view == 0 ? x - d : x + d;
    if (xt < 0 || xt >= w)
        return 0.f;
    long long sum = 0;
    for (int yy = y - r; yy <= y + r; ++yy)
        for (int xx = x - r; xx <= x + r; ++xx) {
            if (xx < 0 || yy < 0 || xx >= w || yy >= h)
                continue;
            const int xs = view == 0 ? xx - d : xx + d;
            if (xs < 0 || xs >= w)
                continue;
            double sq = 0;
            for (int k = 0; k < a.dims(); ++k) {
                const double t = double(a.at(xx, yy)[k]) - double(b.at(xs, yy)[k]);
                sq += t * t;
            }
            sum += std::llround(std::sqrt(sq) * 1048576.0);
        }
    return float(double(sum) / (double(window) * window * 1048576.0));
}


// Nearest pixel of the target label by exhaustive search; inf when absent.
inline Grid<double> brute_distance_transform(const SegmentationLabeling& m, int target) {
    Grid<double> out(m.width(), m.height(), std::numeric_limits<double>::infinity());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            long best = -1;
            for (int v = 0; v < m.height(); ++v)
                for (int u = 0; u < m.width(); ++u)
                    if (m.labels(u, v) == target) {
                        const long d2 = long(u - x) * (u - x) + long(v - y) * (v - y);
                        if (best < 0 || d2 < best)
                            best = d2;
                    }
            if (best >= 0)
                out(x, y) = std::sqrt(double(best));
        }
    return out;
}

// Small fusion-move fixtures.

struct TinyStereo {
    StereoPriors priors;
    StereoParams params;
};

inline TinyStereo tiny_stereo(int w, int h, int d_max, int view, std::mt19937_64& rng) {
    TinyStereo t;
    std::uniform_real_distribution<float> cost(0, 3), sal(0.2f, 1);
    t.priors.appearance = AffinityCostVolume(w, h, d_max + 1);
    t.priors.shape = AffinityCostVolume(w, h, d_max + 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int d = 0; d <= d_max; ++d)
                if (rectified_shift({x, y}, d, view, w))
                    t.priors.appearance.at(x, y, d) = cost(rng);
    t.priors.appearance_saliency = {Grid<float>(w, h), Cue::appearance};
    for (auto& v : t.priors.appearance_saliency.weights.values())
        v = sal(rng);
    t.priors.shape_saliency = {Grid<float>(w, h, 0.f), Cue::shape};
    t.priors.gradients = GradientMap(random_image(w, h, 1, rng, 0, 40));
    t.params.lambda_s1 = 0.2;
    return t;
}

inline double stereo_energy(const TinyStereo& t, const DisparityLabeling& lab) {
    return total_stereo_energy(lab, t.priors, t.params).total();
}

// Expansion sweeps over all labels until nothing is accepted.
inline void expand_to_convergence(DisparityLabeling& lab, const TinyStereo& t, int d_max) {
    DisparityMoveInputs in;
    in.priors = &t.priors;
    in.stereo = &t.params;
    for (int sweep = 0; sweep < 50; ++sweep) {
        bool any = false;
        for (int a = 0; a <= d_max; ++a)
            any |= fuse_uniform_disparity(lab, a, in).accepted;
        if (!any)
            return;
    }
}


struct TinySegm {
    struct View {
        Image image, other;
        GradientMap gradients;
        SegmentationLabeling mask;
        DisparityLabeling disparity;
        ColorModel color;
        ContourCostMaps contour, other_contour;
    };
    std::vector<View> layers;
    TemporalCliqueSet cliques;
    SegmParams params;

    std::vector<SegmLayerView> views() const {
        std::vector<SegmLayerView> out;
        for (const auto& v : layers)
            out.push_back({&v.image, &v.other, &v.gradients, &v.mask, &v.disparity, &v.color, &v.contour,
                           &v.other_contour, nullptr});
        return out;
    }
    double energy() const { return total_segm_energy(views(), cliques, params).total(); }
};

inline TinySegm tiny_segm(int w, int h, int depth, std::mt19937_64& rng) {
    TinySegm t;
    const int view = int(rng() % 2);
    for (int l = 0; l < depth; ++l) {
        TinySegm::View v;
        v.image = random_image(w, h, 3, rng);
        v.other = random_image(w, h, 1, rng);
        v.gradients = GradientMap(v.image);
        v.mask = random_mask(w, h, rng);
        v.disparity = DisparityLabeling(w, h, view);
        v.disparity.assign(testing_support::random_labels(w, h, 1, rng));
        GmmFitParams gp;
        gp.components = 1;
        v.color = fit_color_model(v.image, random_mask(w, h, rng), gp, rng());
        v.contour = build_contour_maps(random_mask(w, h, rng), t.params);
        v.other_contour = build_contour_maps(random_mask(w, h, rng), t.params);
        t.layers.push_back(std::move(v));
    }
    t.cliques.layers = depth;
    std::uniform_real_distribution<float> s(0, 2.2f);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            t.cliques.anchors.push_back({x, y});
            for (int l = 1; l < depth; ++l)
                t.cliques.anchors.push_back({int(rng() % w), int(rng() % h)});
            for (int l = 0; l + 1 < depth; ++l)
                t.cliques.scales.push_back(s(rng));
        }
    return t;
}

}  // namespace testing_support
