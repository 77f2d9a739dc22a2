#pragma once

// Sequence manifests, frame/mask/correspondence loading, a background
// subtraction fallback for missing initialization masks, and result writing.

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mutseg/core.hpp"
#include "mutseg/image_io.hpp"
#include "mutseg/inference.hpp"

namespace mutseg {

namespace fs = std::filesystem;

/// Plain-text key=value description of one sequence. File patterns contain a
/// single printf-style integer field (e.g. "rgb/%05d.png") and are relative
/// to `root` (itself relative to the manifest's directory).
struct SequenceManifest {
    fs::path root;
    std::array<std::string, 2> frames;
    std::array<std::string, 2> init;  // optional
    std::array<std::string, 2> gt;    // optional
    std::array<std::string, 2> flow;  // optional .flo patterns (frame t -> t-1)
    std::string correspondences;      // optional CSV
    std::array<std::string, 2> modality{"visible", "lwir"};
    int d_max = 0;
    int first_index = 0;
    int frame_count = -1;  // -1: count the files present

    static SequenceManifest parse(std::istream& in, const fs::path& base_dir, const std::string& origin = "manifest");
    static SequenceManifest load(const fs::path& path);
    void save(const fs::path& path) const;

    fs::path resolve(const std::string& pattern, int index) const;
    int resolved_frame_count() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline int parse_int(const std::string& value, const std::string& what) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size())
            throw Error("");
        return v;
    } catch (...) {
        throw Error("invalid integer for " + what + ": '" + value + "'");
    }
}

// Expands the single %d / %0Nd field of a pattern.
inline std::string format_index(const std::string& pattern, int index) {
    std::string out;
    bool used = false;
    for (std::size_t i = 0; i < pattern.size(); ++i) {
        if (pattern[i] != '%') {
            out.push_back(pattern[i]);
            continue;
        }
        if (i + 1 < pattern.size() && pattern[i + 1] == '%') {
            out.push_back('%');
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        bool zero = false;
        if (j < pattern.size() && pattern[j] == '0') {
            zero = true;
            ++j;
        }
        int width = 0;
        while (j < pattern.size() && std::isdigit(static_cast<unsigned char>(pattern[j])))
            width = width * 10 + (pattern[j++] - '0');
        if (j >= pattern.size() || pattern[j] != 'd' || used)
            throw Error("file pattern must contain exactly one %d field: '" + pattern + "'");
        std::string digits = std::to_string(index);
        if (int(digits.size()) < width)
            digits.insert(0, std::size_t(width) - digits.size(), zero ? '0' : ' ');
        out += digits;
        used = true;
        i = j;
    }
    if (!used)
        throw Error("file pattern must contain exactly one %d field: '" + pattern + "'");
    return out;
}

}  // namespace detail

inline SequenceManifest SequenceManifest::parse(std::istream& in, const fs::path& base_dir, const std::string& origin) {
    SequenceManifest m;
    m.root = base_dir;
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::trim(line);
        if (line.empty() || line[0] == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(origin + ":" + std::to_string(line_no) + ": expected key=value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (!seen.insert(key).second)
            throw Error(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
        if (key == "root")
            m.root = base_dir / value;
        else if (key == "frames0")
            m.frames[0] = value;
        else if (key == "frames1")
            m.frames[1] = value;
        else if (key == "init0")
            m.init[0] = value;
        else if (key == "init1")
            m.init[1] = value;
        else if (key == "gt0")
            m.gt[0] = value;
        else if (key == "gt1")
            m.gt[1] = value;
        else if (key == "flow0")
            m.flow[0] = value;
        else if (key == "flow1")
            m.flow[1] = value;
        else if (key == "correspondences")
            m.correspondences = value;
        else if (key == "modality0")
            m.modality[0] = value;
        else if (key == "modality1")
            m.modality[1] = value;
        else if (key == "d_max")
            m.d_max = detail::parse_int(value, key);
        else if (key == "first_index")
            m.first_index = detail::parse_int(value, key);
        else if (key == "frame_count")
            m.frame_count = detail::parse_int(value, key);
        else
            throw Error(origin + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (m.frames[0].empty() || m.frames[1].empty())
        throw Error(origin + ": frames0 and frames1 are required");
    if (m.d_max < 1)
        throw Error(origin + ": d_max must be >= 1");
    for (const auto* group : {&m.frames, &m.init, &m.gt, &m.flow})
        for (const auto& pattern : *group)
            if (!pattern.empty())
                detail::format_index(pattern, 0);  // validates the pattern
    return m;
}

inline SequenceManifest SequenceManifest::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open manifest: " + path.string());
    return parse(in, path.parent_path(), path.string());
}

inline void SequenceManifest::save(const fs::path& path) const {
    std::ofstream out(path);
    if (!out)
        throw Error("cannot write manifest: " + path.string());
    out << "# sequence manifest\n";
    out << "frames0=" << frames[0] << "\nframes1=" << frames[1] << "\n";
    for (int k = 0; k < 2; ++k) {
        if (!init[k].empty())
            out << "init" << k << "=" << init[k] << "\n";
        if (!gt[k].empty())
            out << "gt" << k << "=" << gt[k] << "\n";
        if (!flow[k].empty())
            out << "flow" << k << "=" << flow[k] << "\n";
        out << "modality" << k << "=" << modality[k] << "\n";
    }
    if (!correspondences.empty())
        out << "correspondences=" << correspondences << "\n";
    out << "d_max=" << d_max << "\nfirst_index=" << first_index << "\n";
    if (frame_count >= 0)
        out << "frame_count=" << frame_count << "\n";
    if (!out)
        throw Error("failed writing manifest: " + path.string());
}

inline fs::path SequenceManifest::resolve(const std::string& pattern, int index) const {
    return root / detail::format_index(pattern, index);
}

inline int SequenceManifest::resolved_frame_count() const {
    if (frame_count >= 0)
        return frame_count;
    int n = 0;
    while (fs::exists(resolve(frames[0], first_index + n)) && fs::exists(resolve(frames[1], first_index + n)))
        ++n;
    for (int k = 0; k < 2; ++k)
        if (fs::exists(resolve(frames[k], first_index + n)))
            throw Error("view " + std::to_string(k) + " has more frames than view " + std::to_string(1 - k) +
                        ": " + resolve(frames[1 - k], first_index + n).string() + " is missing");
    return n;
}

// ---------------------------------------------------------------------------

struct SequenceFrame {
    FramePair pair;
    InitMasks init;
    std::array<std::optional<SegmentationLabeling>, 2> gt;
};

/// Streams the frames of a manifest in index order.
class SequenceReader {
public:
    explicit SequenceReader(SequenceManifest manifest)
        : manifest_(std::move(manifest)), count_(manifest_.resolved_frame_count()) {}

    const SequenceManifest& manifest() const noexcept { return manifest_; }
    int frame_count() const noexcept { return count_; }

    std::optional<SequenceFrame> next() {
        if (next_ >= count_)
            return std::nullopt;
        const int index = manifest_.first_index + next_++;
        return load(index);
    }

    SequenceFrame load(int index) const {
        const std::string where = "frame " + std::to_string(index);
        SequenceFrame f;
        f.pair.frame_index = index;
        for (int k = 0; k < 2; ++k) {
            const fs::path path = manifest_.resolve(manifest_.frames[k], index);
            if (!fs::exists(path))
                throw Error(where + ": missing image " + path.string());
            try {
                f.pair.views[k] = read_image(path.string());
            } catch (const Error& e) {
                throw Error(where + ": " + e.what());
            }
        }
        f.pair.validate();
        for (int k = 0; k < 2; ++k) {
            f.init[k] = optional_mask(manifest_.init[k], index, f.pair, where);
            f.gt[k] = optional_mask(manifest_.gt[k], index, f.pair, where);
        }
        return f;
    }

private:
    std::optional<SegmentationLabeling> optional_mask(const std::string& pattern, int index, const FramePair& pair,
                                                      const std::string& where) const {
        if (pattern.empty())
            return std::nullopt;
        const fs::path path = manifest_.resolve(pattern, index);
        if (!fs::exists(path))
            return std::nullopt;
        SegmentationLabeling mask;
        try {
            mask = read_mask(path.string());
        } catch (const Error& e) {
            throw Error(where + ": " + e.what());
        }
        if (mask.width() != pair.width() || mask.height() != pair.height())
            throw Error(where + ": mask " + path.string() + " does not match the frame size");
        return mask;
    }

    SequenceManifest manifest_;
    int count_ = 0;
    int next_ = 0;
};

/// Convenience: loads every frame of a manifest.
inline std::vector<SequenceFrame> load_sequence(const SequenceManifest& manifest) {
    SequenceReader reader(manifest);
    std::vector<SequenceFrame> frames;
    while (auto f = reader.next())
        frames.push_back(std::move(*f));
    return frames;
}

// ---------------------------------------------------------------------------
// Ground-truth correspondences

struct GtCorrespondence {
    int frame = 0;
    int view = 0;
    int x = 0;
    int y = 0;
    double disparity = 0;
};

inline std::vector<GtCorrespondence> parse_correspondences(std::istream& in, const std::string& origin) {
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != "frame,view,x,y,disparity")
        throw Error(origin + ": expected header 'frame,view,x,y,disparity'");
    std::vector<GtCorrespondence> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::trim(line);
        if (line.empty())
            continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ','))
            fields.push_back(detail::trim(field));
        const std::string where = origin + ":" + std::to_string(line_no);
        if (fields.size() != 5)
            throw Error(where + ": expected 5 fields");
        GtCorrespondence c;
        c.frame = detail::parse_int(fields[0], where + " frame");
        c.view = detail::parse_int(fields[1], where + " view");
        c.x = detail::parse_int(fields[2], where + " x");
        c.y = detail::parse_int(fields[3], where + " y");
        try {
            std::size_t used = 0;
            c.disparity = std::stod(fields[4], &used);
            if (used != fields[4].size())
                throw Error("");
        } catch (...) {
            throw Error(where + ": invalid disparity '" + fields[4] + "'");
        }
        if (c.view != 0 && c.view != 1)
            throw Error(where + ": view must be 0 or 1");
        if (c.x < 0 || c.y < 0 || c.frame < 0)
            throw Error(where + ": negative coordinate or frame");
        if (!(c.disparity >= 0) || !std::isfinite(c.disparity))
            throw Error(where + ": disparity must be finite and non-negative");
        out.push_back(c);
    }
    return out;
}

inline std::vector<GtCorrespondence> load_correspondences(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open correspondence file: " + path.string());
    return parse_correspondences(in, path.string());
}

inline void save_correspondences(const fs::path& path, const std::vector<GtCorrespondence>& points) {
    std::ofstream out(path);
    if (!out)
        throw Error("cannot write correspondence file: " + path.string());
    out << "frame,view,x,y,disparity\n";
    for (const auto& c : points)
        out << c.frame << "," << c.view << "," << c.x << "," << c.y << "," << c.disparity << "\n";
    if (!out)
        throw Error("failed writing correspondence file: " + path.string());
}

// ---------------------------------------------------------------------------
// Fallback initialization

struct FallbackMask {
    SegmentationLabeling mask;
    bool degenerate = false;  // no background model yet
};

struct FallbackParams {
    int threshold = 30;  // channel-max deviation from the background
    int history = 31;    // frames kept for the median
};

/// 3x3 binary opening (erosion then dilation, square element); pixels beyond
/// the border count as background for the erosion.
inline SegmentationLabeling open3x3(const SegmentationLabeling& mask) {
    const int w = mask.width(), h = mask.height();
    SegmentationLabeling eroded(w, h), opened(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool all = true;
            for (int dy = -1; dy <= 1 && all; ++dy)
                for (int dx = -1; dx <= 1 && all; ++dx) {
                    const int sx = x + dx, sy = y + dy;
                    all = sx >= 0 && sy >= 0 && sx < w && sy < h && mask.labels(sx, sy);
                }
            eroded.labels(x, y) = all;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool any = false;
            for (int dy = -1; dy <= 1 && !any; ++dy)
                for (int dx = -1; dx <= 1 && !any; ++dx) {
                    const int sx = x + dx, sy = y + dy;
                    any = sx >= 0 && sy >= 0 && sx < w && sy < h && eroded.labels(sx, sy);
                }
            opened.labels(x, y) = any;
        }
    return opened;
}

/// Foreground of `current` against the per-pixel lower median of `history`
/// (earlier frames of the same view). Empty and degenerate without history.
inline FallbackMask fallback_init_mask(const std::vector<const Image*>& history, const Image& current,
                                       const FallbackParams& params = {}) {
    FallbackMask out{SegmentationLabeling(current.width(), current.height()), history.empty()};
    if (history.empty())
        return out;
    const int ch = current.channels();
    std::vector<std::uint8_t> samples(history.size());
    for (int y = 0; y < current.height(); ++y)
        for (int x = 0; x < current.width(); ++x) {
            int deviation = 0;
            for (int c = 0; c < ch; ++c) {
                for (std::size_t i = 0; i < history.size(); ++i)
                    samples[i] = history[i]->at(x, y, c);
                const auto mid = samples.begin() + (samples.size() - 1) / 2;
                std::nth_element(samples.begin(), mid, samples.end());
                deviation = std::max(deviation, std::abs(int(current.at(x, y, c)) - int(*mid)));
            }
            out.mask.labels(x, y) = deviation > params.threshold;
        }
    out.mask = open3x3(out.mask);
    return out;
}

/// Running fallback over a stream: feed every frame pair in order.
class FallbackInitializer {
public:
    explicit FallbackInitializer(FallbackParams params = {}) : params_(params) {}

    /// Masks for `pair` given all earlier frames; then remembers `pair`.
    std::array<FallbackMask, 2> observe(const FramePair& pair) {
        std::array<FallbackMask, 2> out;
        for (int k = 0; k < 2; ++k) {
            if (!history_[k].empty() && (history_[k].front().width() != pair.views[k].width() ||
                                         history_[k].front().height() != pair.views[k].height() ||
                                         history_[k].front().channels() != pair.views[k].channels()))
                throw Error("frame " + std::to_string(pair.frame_index) + ": fallback history size mismatch");
            std::vector<const Image*> hist;
            for (const Image& img : history_[k])
                hist.push_back(&img);
            out[k] = fallback_init_mask(hist, pair.views[k], params_);
            history_[k].push_back(pair.views[k]);
            if (int(history_[k].size()) > params_.history)
                history_[k].pop_front();
        }
        return out;
    }

private:
    FallbackParams params_;
    std::array<std::deque<Image>, 2> history_;
};

// ---------------------------------------------------------------------------
// Outputs

inline constexpr double kDisparityScale = 256.0;

inline fs::path mask_output_path(const fs::path& dir, int frame_index, int view) {
    return dir / ("mask" + std::to_string(view) + "_" + detail::format_index("%06d", frame_index) + ".png");
}

inline fs::path disparity_output_path(const fs::path& dir, int frame_index, int view) {
    return dir / ("disp" + std::to_string(view) + "_" + detail::format_index("%06d", frame_index) + ".png");
}

inline Grid<std::uint16_t> encode_disparity(const Grid<int>& disparity) {
    Grid<std::uint16_t> out(disparity.width(), disparity.height());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = std::round(disparity[i] * kDisparityScale);
        if (v < 0 || v > 65535)
            throw Error("disparity " + std::to_string(disparity[i]) + " does not fit the 16-bit encoding");
        out[i] = std::uint16_t(v);
    }
    return out;
}

inline Grid<double> read_disparity(const fs::path& path) {
    const Grid<std::uint16_t> raw = read_png16(path.string());
    Grid<double> out(raw.width(), raw.height());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = raw[i] / kDisparityScale;
    return out;
}

/// Writes both views' masks (0/255 PNG) and disparities (16-bit PNG, x256)
/// and makes sure the directory carries the scale note.
inline void write_outputs(const fs::path& dir, int frame_index, const std::array<SegmentationLabeling, 2>& masks,
                          const std::array<Grid<int>, 2>& disparities) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
    const fs::path note = dir / "outputs.txt";
    if (!fs::exists(note)) {
        std::ofstream out(note);
        out << "masks: mask<view>_<frame>.png, 0 = background, 255 = foreground\n"
            << "disparities: disp<view>_<frame>.png, 16-bit, value = disparity * " << kDisparityScale << "\n"
            << "disparity_scale=" << kDisparityScale << "\n";
        if (!out)
            throw Error("cannot write " + note.string());
    }
    for (int k = 0; k < 2; ++k) {
        write_mask(mask_output_path(dir, frame_index, k).string(), masks[k]);
        write_png16(disparity_output_path(dir, frame_index, k).string(), encode_disparity(disparities[k]));
    }
}

inline void write_outputs(const fs::path& dir, const FrameOutput& output) {
    write_outputs(dir, output.frame_index, output.masks, output.disparities);
}

}  // namespace mutseg
