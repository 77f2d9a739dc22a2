#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "mutseg/mutseg.hpp"

namespace testing_support {

using namespace mutseg;

inline Image random_image(int w, int h, int channels, std::mt19937_64& rng, int lo = 0, int hi = 255) {
    Image img(w, h, channels);
    std::uniform_int_distribution<int> v(lo, hi);
    for (auto& b : img.data())
        b = std::uint8_t(v(rng));
    return img;
}

inline SegmentationLabeling random_mask(int w, int h, std::mt19937_64& rng, double p = 0.5) {
    SegmentationLabeling m(w, h);
    std::bernoulli_distribution b(p);
    for (auto& v : m.labels.values())
        v = b(rng);
    return m;
}

inline Grid<int> random_labels(int w, int h, int d_max, std::mt19937_64& rng) {
    Grid<int> g(w, h);
    std::uniform_int_distribution<int> d(0, d_max);
    for (auto& v : g.values())
        v = d(rng);
    return g;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "mutseg_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing_support
