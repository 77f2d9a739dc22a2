#pragma once

// Stereo registration energy: saliency-weighted appearance and shape data
// terms, a soft uniqueness term over correspondence counts, and a truncated
// quadratic smoothness term gated by image gradients.

#include <cmath>

#include "mutseg/core.hpp"
#include "mutseg/descriptors.hpp"

namespace mutseg {

struct StereoParams {
    double lambda_u = 0.4;
    double lambda_s1 = 0.001;
    double w = 3.0;
    double g = 30.0;
    int truncation = 10;

    bool use_appearance = true;
    bool use_shape = true;
    bool use_uniqueness = true;
    bool use_saliency = true;  // false: W = 1 (shape still nullified off the mask)

    void validate() const {
        if (lambda_u < 0 || lambda_s1 < 0)
            throw Error("stereo weights must be non-negative");
        if (w < 1)
            throw Error("uniqueness curve weight w must be >= 1");
        if (g <= 0)
            throw Error("expected contour gradient g must be positive");
        if (truncation < 1)
            throw Error("smoothness truncation must be >= 1");
    }
};

/// Data-term inputs of one view: affinity volumes against the other view and
/// their saliency maps, plus the view's own gradient map.
struct StereoPriors {
    AffinityCostVolume appearance;
    SaliencyMap appearance_saliency;
    AffinityCostVolume shape;
    SaliencyMap shape_saliency;
    GradientMap gradients;
};

struct StereoEnergyBreakdown {
    double appearance = 0;
    double shape = 0;
    double uniqueness = 0;
    double smoothness = 0;

    double total() const noexcept { return appearance + shape + uniqueness + smoothness; }
};

/// Sum over p of A(p, r(p, d_p)) * W(p).
inline double data_term_cost(const AffinityCostVolume& volume, const SaliencyMap& saliency,
                             const DisparityLabeling& labeling) {
    double sum = 0;
    for (int y = 0; y < labeling.height(); ++y)
        for (int x = 0; x < labeling.width(); ++x)
            sum += double(volume.at(x, y, labeling.label(x, y))) * saliency.weights(x, y);
    return sum;
}

/// Marginal cost of the n-th extra correspondence, w*n / (w + n - 1).
inline double uniqueness_increment(int n, double w) noexcept { return n <= 0 ? 0.0 : w * n / (w + n - 1.0); }

/// U(N): 0 for N <= 1, else sum of increments 1..N-1.
inline double uniqueness_cost(int count, double w) noexcept {
    double sum = 0;
    for (int n = 1; n < count; ++n)
        sum += uniqueness_increment(n, w);
    return sum;
}

/// Worst-case change of the uniqueness energy when p moves from d_old to
/// d_new: refund of the average per-link cost at the old target plus the
/// marginal cost of one more link at the new target. Out-of-bounds targets
/// contribute nothing, as does a refund from a target with N = 0.
inline double uniqueness_move_delta(Pixel p, int d_old, int d_new, const DisparityLabeling& labeling,
                                    const StereoParams& params) {
    const int w = labeling.width();
    double delta = 0;
    if (const int xo = shifted_x(p.x, d_old, labeling.view()); xo >= 0 && xo < w) {
        const int n = labeling.count(xo, p.y);
        if (n > 0)
            delta -= uniqueness_cost(n, params.w) / n;
    }
    if (const int xn = shifted_x(p.x, d_new, labeling.view()); xn >= 0 && xn < w)
        delta += uniqueness_increment(labeling.count(xn, p.y), params.w);
    return params.lambda_u * delta;
}

/// Per-edge truncated quadratic penalty, before the lambda_s1 scaling.
inline double disparity_jump_penalty(int a, int b, int truncation) noexcept {
    const int jump = std::min(std::abs(a - b), truncation);
    return double(jump) * jump;
}

inline double smoothness_cost(const DisparityLabeling& labeling, const GradientMap& grads,
                              const StereoParams& params) {
    double sum = 0;
    for_each_edge(labeling.width(), labeling.height(), [&](Pixel p, Pixel q) {
        const int a = labeling.label(p.x, p.y), b = labeling.label(q.x, q.y);
        if (a != b)
            sum += disparity_jump_penalty(a, b, params.truncation) * gradient_scale(grads.edge(p, q), params.g);
    });
    return params.lambda_s1 * sum;
}

/// Data cost of labeling pixel (x, y) with disparity d.
inline double stereo_data_cost(const StereoPriors& priors, const StereoParams& params, int x, int y, int d) {
    double cost = 0;
    if (params.use_appearance)
        cost += double(priors.appearance.at(x, y, d)) * priors.appearance_saliency.weights(x, y);
    if (params.use_shape)
        cost += double(priors.shape.at(x, y, d)) * priors.shape_saliency.weights(x, y);
    return cost;
}

/// Full stereo energy of one view. Correspondence counts are checked against
/// a fresh recount first.
inline StereoEnergyBreakdown total_stereo_energy(const DisparityLabeling& labeling, const StereoPriors& priors,
                                                 const StereoParams& params) {
    labeling.verify_counts();
    StereoEnergyBreakdown e;
    for (int y = 0; y < labeling.height(); ++y)
        for (int x = 0; x < labeling.width(); ++x) {
            const int d = labeling.label(x, y);
            if (params.use_appearance)
                e.appearance +=
                    double(priors.appearance.at(x, y, d)) * priors.appearance_saliency.weights(x, y);
            if (params.use_shape)
                e.shape += double(priors.shape.at(x, y, d)) * priors.shape_saliency.weights(x, y);
        }
    if (params.use_uniqueness) {
        double u = 0;
        for (const int n : labeling.counts().values())
            u += uniqueness_cost(n, params.w);
        e.uniqueness = params.lambda_u * u;
    }
    e.smoothness = smoothness_cost(labeling, priors.gradients, params);
    return e;
}

}  // namespace mutseg
