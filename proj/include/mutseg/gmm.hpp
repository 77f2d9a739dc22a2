#pragma once

// Full-covariance Gaussian mixtures over 1- or 3-channel colors, seeded with
// k-means++ and refined by EM.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "mutseg/core.hpp"

namespace mutseg {

using Color = std::array<double, 3>;

struct GaussianComponent {
    double weight = 0;
    Color mean{};
    std::array<double, 9> covariance{};  // row-major channels x channels
    std::array<double, 9> inverse{};
    double log_norm = 0;  // log of the density normalizer
};

struct GmmFitParams {
    int components = 6;
    int max_iterations = 20;
    double tolerance = 1e-4;        // relative change of the training objective
    double regularization = 1e-2;   // added to covariance diagonals
    int kmeans_iterations = 10;
    std::size_t max_samples = 20000;  // deterministic stride subsampling above this
};

class GaussianMixture {
public:
    GaussianMixture() = default;
    explicit GaussianMixture(int channels) : channels_(channels) {}

    int channels() const noexcept { return channels_; }
    const std::vector<GaussianComponent>& components() const noexcept { return components_; }
    bool empty() const noexcept { return components_.empty(); }

    /// Adds a component; its inverse and normalizer are derived here.
    void add_component(double weight, const Color& mean, const std::array<double, 9>& covariance) {
        GaussianComponent c;
        c.weight = weight;
        c.mean = mean;
        c.covariance = covariance;
        finalize(c);
        components_.push_back(c);
    }

    double component_log_density(const GaussianComponent& c, const Color& x) const noexcept {
        const int n = channels_;
        std::array<double, 3> diff{};
        for (int i = 0; i < n; ++i)
            diff[i] = x[i] - c.mean[i];
        double maha = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                maha += diff[i] * c.inverse[i * n + j] * diff[j];
        return c.log_norm - 0.5 * maha;
    }

    /// log h(x) = log sum_k weight_k N(x; mean_k, cov_k).
    double log_density(const Color& x) const noexcept {
        double best = -std::numeric_limits<double>::infinity();
        std::array<double, 16> terms{};
        std::size_t k = 0;
        for (const auto& c : components_) {
            if (c.weight <= 0)
                continue;
            terms[k] = std::log(c.weight) + component_log_density(c, x);
            best = std::max(best, terms[k]);
            ++k;
        }
        if (k == 0 || !std::isfinite(best))
            return best;
        double sum = 0;
        for (std::size_t i = 0; i < k; ++i)
            sum += std::exp(terms[i] - best);
        return best + std::log(sum);
    }

    /// Regularized EM objective term for one sample: each component density
    /// carries a factor exp(-eps/2 * tr(cov^-1)). EM with the cov + eps*I
    /// update never decreases the sum of these over the training set.
    double regularized_log_density(const Color& x, double eps) const noexcept {
        double best = -std::numeric_limits<double>::infinity();
        std::array<double, 16> terms{};
        std::size_t k = 0;
        for (const auto& c : components_) {
            if (c.weight <= 0)
                continue;
            terms[k] = std::log(c.weight) + component_log_density(c, x) - 0.5 * eps * trace_inverse(c);
            best = std::max(best, terms[k]);
            ++k;
        }
        if (k == 0)
            return best;
        double sum = 0;
        for (std::size_t i = 0; i < k; ++i)
            sum += std::exp(terms[i] - best);
        return best + std::log(sum);
    }

    double trace_inverse(const GaussianComponent& c) const noexcept {
        double t = 0;
        for (int i = 0; i < channels_; ++i)
            t += c.inverse[i * channels_ + i];
        return t;
    }

private:
    void finalize(GaussianComponent& c) const {
        const int n = channels_;
        // Cholesky factorization cov = L L^T
        std::array<double, 9> l{};
        for (int i = 0; i < n; ++i)
            for (int j = 0; j <= i; ++j) {
                double s = c.covariance[i * n + j];
                for (int k = 0; k < j; ++k)
                    s -= l[i * n + k] * l[j * n + k];
                if (i == j) {
                    if (s <= 0)
                        throw Error("covariance is not positive definite");
                    l[i * n + i] = std::sqrt(s);
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        double log_det = 0;
        for (int i = 0; i < n; ++i)
            log_det += 2 * std::log(l[i * n + i]);
        // inverse of L, then cov^-1 = L^-T L^-1
        std::array<double, 9> li{};
        for (int i = 0; i < n; ++i) {
            li[i * n + i] = 1.0 / l[i * n + i];
            for (int j = 0; j < i; ++j) {
                double s = 0;
                for (int k = j; k < i; ++k)
                    s -= l[i * n + k] * li[k * n + j];
                li[i * n + j] = s / l[i * n + i];
            }
        }
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double s = 0;
                for (int k = std::max(i, j); k < n; ++k)
                    s += li[k * n + i] * li[k * n + j];
                c.inverse[i * n + j] = s;
            }
        c.log_norm = -0.5 * (n * std::log(2 * std::numbers::pi) + log_det);
    }

    int channels_ = 1;
    std::vector<GaussianComponent> components_;
};

struct GmmFitReport {
    int iterations = 0;
    std::vector<double> objective;  // regularized training objective per EM iteration
};

namespace detail {

inline Color pixel_color(const Image& image, int x, int y) {
    Color c{};
    for (int ch = 0; ch < image.channels(); ++ch)
        c[ch] = image.at(x, y, ch);
    return c;
}

inline double squared_distance(const Color& a, const Color& b, int channels) {
    double s = 0;
    for (int i = 0; i < channels; ++i)
        s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace detail

/// Fits a mixture to `samples` (k-means++ seeding, Lloyd refinement, EM).
/// At most as many components as distinct seeds are created, so a
/// single-color sample set yields one component.
inline GaussianMixture fit_gaussian_mixture(const std::vector<Color>& samples, int channels, const GmmFitParams& params,
                                            std::uint64_t seed, GmmFitReport* report = nullptr) {
    if (samples.empty())
        throw Error("cannot fit a mixture to zero samples");
    const std::size_t n = samples.size();
    std::mt19937_64 rng(seed);

    // k-means++ seeding
    std::vector<Color> centers;
    centers.push_back(samples[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
    std::vector<double> nearest(n);
    for (std::size_t i = 0; i < n; ++i)
        nearest[i] = detail::squared_distance(samples[i], centers[0], channels);
    while (int(centers.size()) < params.components) {
        double total = 0;
        for (double d : nearest)
            total += d;
        if (total <= 0)
            break;
        double pick = std::uniform_real_distribution<double>(0.0, total)(rng);
        std::size_t chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            pick -= nearest[i];
            if (pick < 0 && nearest[i] > 0) {
                chosen = i;
                break;
            }
        }
        if (nearest[chosen] <= 0)
            break;
        centers.push_back(samples[chosen]);
        for (std::size_t i = 0; i < n; ++i)
            nearest[i] = std::min(nearest[i], detail::squared_distance(samples[i], centers.back(), channels));
    }
    const int k = int(centers.size());

    // Lloyd iterations
    std::vector<int> assignment(n, 0);
    for (int it = 0; it < params.kmeans_iterations; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = detail::squared_distance(samples[i], centers[0], channels);
            for (int c = 1; c < k; ++c) {
                const double d = detail::squared_distance(samples[i], centers[c], channels);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assignment[i] != best || it == 0) {
                changed = changed || assignment[i] != best;
                assignment[i] = best;
            }
        }
        std::vector<Color> sums(k, Color{});
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            for (int ch = 0; ch < channels; ++ch)
                sums[assignment[i]][ch] += samples[i][ch];
            ++counts[assignment[i]];
        }
        for (int c = 0; c < k; ++c)
            if (counts[c] > 0)
                for (int ch = 0; ch < channels; ++ch)
                    centers[c][ch] = sums[c][ch] / double(counts[c]);
        if (!changed && it > 0)
            break;
    }

    // initial parameters from hard assignments
    const double eps = params.regularization;
    std::vector<double> resp(n * k, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        resp[i * k + assignment[i]] = 1.0;

    auto m_step = [&]() {
        GaussianMixture mixture(channels);
        for (int c = 0; c < k; ++c) {
            double nk = 0;
            Color mean{};
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * k + c];
                nk += r;
                for (int ch = 0; ch < channels; ++ch)
                    mean[ch] += r * samples[i][ch];
            }
            if (nk <= 0)
                continue;
            for (int ch = 0; ch < channels; ++ch)
                mean[ch] /= nk;
            std::array<double, 9> cov{};
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * k + c];
                if (r == 0)
                    continue;
                for (int a = 0; a < channels; ++a)
                    for (int b = 0; b < channels; ++b)
                        cov[a * channels + b] += r * (samples[i][a] - mean[a]) * (samples[i][b] - mean[b]);
            }
            for (int a = 0; a < channels * channels; ++a)
                cov[a] /= nk;
            for (int a = 0; a < channels; ++a)
                cov[a * channels + a] += eps;
            mixture.add_component(nk / double(n), mean, cov);
        }
        return mixture;
    };

    GaussianMixture mixture = m_step();
    double previous = -std::numeric_limits<double>::infinity();
    int iterations = 0;
    std::vector<double> terms(static_cast<std::size_t>(k));
    for (; iterations < params.max_iterations; ++iterations) {
        // E-step; the objective is evaluated for the current parameters
        double objective = 0;
        const auto& comps = mixture.components();
        const int kc = int(comps.size());
        for (std::size_t i = 0; i < n; ++i) {
            double best = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < kc; ++c) {
                terms[c] = std::log(comps[c].weight) + mixture.component_log_density(comps[c], samples[i]) -
                           0.5 * eps * mixture.trace_inverse(comps[c]);
                best = std::max(best, terms[c]);
            }
            double sum = 0;
            for (int c = 0; c < kc; ++c)
                sum += std::exp(terms[c] - best);
            objective += best + std::log(sum);
            for (int c = 0; c < k; ++c)
                resp[i * k + c] = c < kc ? std::exp(terms[c] - best) / sum : 0.0;
        }
        if (report)
            report->objective.push_back(objective);
        const bool converged =
            std::isfinite(previous) && std::abs(objective - previous) <= params.tolerance * std::abs(objective);
        previous = objective;
        if (converged)
            break;
        mixture = m_step();
    }
    if (report)
        report->iterations = iterations;
    return mixture;
}

/// Foreground and background mixtures of one view.
struct ColorModel {
    GaussianMixture background;
    GaussianMixture foreground;
    bool degenerate = false;  // one of the regions had no pixels

    const GaussianMixture& for_label(int label) const noexcept { return label ? foreground : background; }
};

inline constexpr double kDensityFloor = 1e-30;

/// -log h(color) with the density floored at 1e-30.
inline double color_label_cost(const GaussianMixture& mixture, const Color& color) noexcept {
    static const double floor_log = std::log(kDensityFloor);
    return -std::max(mixture.log_density(color), floor_log);
}

namespace detail {

inline std::vector<Color> collect_samples(const Image& image, const SegmentationLabeling& mask, int label,
                                          std::size_t max_samples) {
    std::size_t total = 0;
    for (const auto v : mask.labels.values())
        total += (v == label);
    const std::size_t stride = max_samples > 0 && total > max_samples ? (total + max_samples - 1) / max_samples : 1;
    std::vector<Color> samples;
    samples.reserve(total / stride + 1);
    std::size_t seen = 0;
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            if (mask.labels(x, y) == label && (seen++ % stride) == 0)
                samples.push_back(pixel_color(image, x, y));
    return samples;
}

// Single broad component centered on the image mean, used when a region has
// no pixels at all.
inline GaussianMixture broad_mixture(const Image& image) {
    const int ch = image.channels();
    Color mean{};
    const double count = double(image.width()) * image.height();
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < ch; ++c)
                mean[c] += image.at(x, y, c) / count;
    std::array<double, 9> cov{};
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            for (int a = 0; a < ch; ++a)
                for (int b = 0; b < ch; ++b)
                    cov[a * ch + b] += (image.at(x, y, a) - mean[a]) * (image.at(x, y, b) - mean[b]) / count;
    for (int a = 0; a < ch * ch; ++a)
        cov[a] *= 4.0;
    for (int a = 0; a < ch; ++a)
        cov[a * ch + a] += 64.0 * 64.0;
    GaussianMixture mixture(ch);
    mixture.add_component(1.0, mean, cov);
    return mixture;
}

}  // namespace detail

/// Fits foreground and background mixtures from the labeled pixels.
inline ColorModel fit_color_model(const Image& image, const SegmentationLabeling& mask, const GmmFitParams& params,
                                  std::uint64_t seed = 0) {
    if (image.width() != mask.width() || image.height() != mask.height())
        throw Error("mask and image sizes differ");
    ColorModel model;
    for (int label = 0; label <= 1; ++label) {
        const auto samples = detail::collect_samples(image, mask, label, params.max_samples);
        GaussianMixture mixture = samples.empty()
                                      ? detail::broad_mixture(image)
                                      : fit_gaussian_mixture(samples, image.channels(), params, seed + label);
        if (samples.empty())
            model.degenerate = true;
        (label ? model.foreground : model.background) = std::move(mixture);
    }
    return model;
}

/// Sum over pixels of -log h(I_p) under the mixture of each pixel's label.
inline double color_cost(const Image& image, const SegmentationLabeling& mask, const ColorModel& model) {
    double sum = 0;
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            sum += color_label_cost(model.for_label(mask.labels(x, y)), detail::pixel_color(image, x, y));
    return sum;
}

}  // namespace mutseg
