#pragma once

// Segmentation (precision/recall/F1) and registration (disparity error)
// metrics, and pooled or per-frame-mean report tables.

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mutseg/core.hpp"
#include "mutseg/dataset_io.hpp"

namespace mutseg {

struct SegmScores {
    long tp = 0;
    long fp = 0;
    long fn = 0;
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};

/// Scores from counts; every ratio with an empty denominator is 0.
inline SegmScores scores_from_counts(long tp, long fp, long fn) {
    SegmScores s{tp, fp, fn};
    s.precision = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
    s.recall = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
    s.f1 = tp > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

inline SegmScores segmentation_metrics(const SegmentationLabeling& pred, const SegmentationLabeling& gt) {
    if (pred.width() != gt.width() || pred.height() != gt.height())
        throw Error("prediction " + std::to_string(pred.width()) + "x" + std::to_string(pred.height()) +
                    " and ground truth " + std::to_string(gt.width()) + "x" + std::to_string(gt.height()) +
                    " differ in size");
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        const bool p = pred.labels[i] != 0, g = gt.labels[i] != 0;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    return scores_from_counts(tp, fp, fn);
}

struct RegistrationScores {
    std::vector<double> thresholds;
    std::vector<double> percent_over;  // % of points with error > threshold
    double mean_error = 0;
    long points = 0;
    long skipped = 0;  // annotations outside the predicted map
};

/// Accumulates absolute disparity errors of annotated points.
class RegistrationAccumulator {
public:
    explicit RegistrationAccumulator(std::vector<double> thresholds = {1, 2, 4}) : thresholds_(std::move(thresholds)) {
        std::sort(thresholds_.begin(), thresholds_.end());
        over_.assign(thresholds_.size(), 0);
    }

    /// Adds every annotation of (frame, view) found in `gt`.
    void add(const Grid<double>& predicted, int frame, int view, const std::vector<GtCorrespondence>& gt) {
        for (const auto& c : gt) {
            if (c.frame != frame || c.view != view)
                continue;
            if (!predicted.in_bounds(c.x, c.y)) {
                ++skipped_;
                continue;
            }
            add_error(std::abs(predicted(c.x, c.y) - c.disparity));
        }
    }

    void add_error(double error) {
        ++points_;
        sum_ += error;
        for (std::size_t i = 0; i < thresholds_.size(); ++i)
            over_[i] += error > thresholds_[i];
    }

    RegistrationScores scores() const {
        RegistrationScores s;
        s.thresholds = thresholds_;
        s.points = points_;
        s.skipped = skipped_;
        for (const long n : over_)
            s.percent_over.push_back(points_ > 0 ? 100.0 * double(n) / double(points_) : 0.0);
        s.mean_error = points_ > 0 ? sum_ / double(points_) : 0.0;
        return s;
    }

private:
    std::vector<double> thresholds_;
    std::vector<long> over_;
    long points_ = 0;
    long skipped_ = 0;
    double sum_ = 0;
};

inline Grid<double> to_real(const Grid<int>& labels) {
    Grid<double> out(labels.width(), labels.height());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = labels[i];
    return out;
}

/// Registration scores of one disparity map against its annotations.
inline RegistrationScores registration_metrics(const DisparityLabeling& pred, int frame,
                                               const std::vector<GtCorrespondence>& gt,
                                               const std::vector<double>& thresholds = {1, 2, 4}) {
    RegistrationAccumulator acc(thresholds);
    acc.add(to_real(pred.labels()), frame, pred.view(), gt);
    return acc.scores();
}

// ---------------------------------------------------------------------------
// Reports

enum class Aggregation { pooled, per_frame_mean, both };

struct FrameScore {
    std::string group;  // e.g. "video/view"
    int frame = 0;
    int view = 0;
    SegmScores scores;
};

struct ReportRow {
    std::string group;
    std::string mode;  // "pooled" or "mean"
    int frames = 0;
    SegmScores scores;
};

inline ReportRow aggregate_rows(const std::string& group, const std::vector<const FrameScore*>& frames,
                                bool per_frame_mean) {
    ReportRow row{group, per_frame_mean ? "mean" : "pooled", int(frames.size()), {}};
    long tp = 0, fp = 0, fn = 0;
    double pr = 0, re = 0, f1 = 0;
    for (const FrameScore* f : frames) {
        tp += f->scores.tp;
        fp += f->scores.fp;
        fn += f->scores.fn;
        pr += f->scores.precision;
        re += f->scores.recall;
        f1 += f->scores.f1;
    }
    row.scores = scores_from_counts(tp, fp, fn);
    if (per_frame_mean && !frames.empty()) {
        const double n = double(frames.size());
        row.scores.precision = pr / n;
        row.scores.recall = re / n;
        row.scores.f1 = f1 / n;
    }
    return row;
}

/// One row per group (sorted by name) plus an "overall" row, in the
/// requested aggregation mode(s).
inline std::vector<ReportRow> aggregate_report(const std::vector<FrameScore>& frames,
                                               Aggregation mode = Aggregation::pooled) {
    if (frames.empty())
        throw Error("no scored frames to aggregate");
    std::map<std::string, std::vector<const FrameScore*>> groups;
    std::vector<const FrameScore*> all;
    for (const auto& f : frames) {
        groups[f.group].push_back(&f);
        all.push_back(&f);
    }
    std::vector<ReportRow> rows;
    const auto emit = [&](const std::string& name, const std::vector<const FrameScore*>& members) {
        if (mode != Aggregation::per_frame_mean)
            rows.push_back(aggregate_rows(name, members, false));
        if (mode != Aggregation::pooled)
            rows.push_back(aggregate_rows(name, members, true));
    };
    for (const auto& [name, members] : groups)
        emit(name, members);
    emit("overall", all);
    return rows;
}

inline std::string format_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline std::string segmentation_report_csv(const std::vector<ReportRow>& rows) {
    std::ostringstream out;
    out << "group,mode,frames,tp,fp,fn,precision,recall,f1\n";
    for (const auto& r : rows)
        out << r.group << "," << r.mode << "," << r.frames << "," << r.scores.tp << "," << r.scores.fp << ","
            << r.scores.fn << "," << format_fixed(r.scores.precision, 6) << "," << format_fixed(r.scores.recall, 6)
            << "," << format_fixed(r.scores.f1, 6) << "\n";
    return out.str();
}

namespace detail {

inline std::string aligned_table(const std::vector<std::vector<std::string>>& cells) {
    std::vector<std::size_t> widths;
    for (const auto& row : cells)
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (widths.size() <= c)
                widths.push_back(0);
            widths[c] = std::max(widths[c], row[c].size());
        }
    std::ostringstream out;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (std::size_t c = 0; c < cells[r].size(); ++c) {
            const std::string& s = cells[r][c];
            if (c == 0)
                out << s << std::string(widths[c] - s.size(), ' ');
            else
                out << "  " << std::string(widths[c] - s.size(), ' ') << s;
        }
        out << "\n";
        if (r == 0) {
            std::size_t total = 0;
            for (std::size_t c = 0; c < widths.size(); ++c)
                total += widths[c] + (c ? 2 : 0);
            out << std::string(total, '-') << "\n";
        }
    }
    return out.str();
}

}  // namespace detail

/// Pr / Re / F1 table, three decimals.
inline std::string segmentation_report_text(const std::vector<ReportRow>& rows) {
    std::vector<std::vector<std::string>> cells{{"Group", "Mode", "Frames", "Pr", "Re", "F1"}};
    for (const auto& r : rows)
        cells.push_back({r.group, r.mode, std::to_string(r.frames), format_fixed(r.scores.precision, 3),
                         format_fixed(r.scores.recall, 3), format_fixed(r.scores.f1, 3)});
    return detail::aligned_table(cells);
}

struct RegistrationRow {
    std::string group;
    RegistrationScores scores;
};

inline std::string registration_report_csv(const std::vector<RegistrationRow>& rows) {
    std::ostringstream out;
    out << "group,points,skipped";
    const auto& th = rows.empty() ? std::vector<double>{} : rows.front().scores.thresholds;
    for (const double t : th)
        out << ",pct_err_gt_" << format_fixed(t, 0) << "px";
    out << ",mean_err\n";
    for (const auto& r : rows) {
        out << r.group << "," << r.scores.points << "," << r.scores.skipped;
        for (const double p : r.scores.percent_over)
            out << "," << format_fixed(p, 4);
        out << "," << format_fixed(r.scores.mean_error, 4) << "\n";
    }
    return out.str();
}

/// "% err. > t px" columns and the mean error, one decimal / two decimals.
inline std::string registration_report_text(const std::vector<RegistrationRow>& rows) {
    std::vector<std::vector<std::string>> cells{{"Group", "Points"}};
    const auto& th = rows.empty() ? std::vector<double>{} : rows.front().scores.thresholds;
    for (const double t : th)
        cells[0].push_back("% err. >" + format_fixed(t, 0) + "px");
    cells[0].push_back("mean err.");
    for (const auto& r : rows) {
        std::vector<std::string> row{r.group, std::to_string(r.scores.points)};
        for (const double p : r.scores.percent_over)
            row.push_back(format_fixed(p, 1));
        row.push_back(format_fixed(r.scores.mean_error, 2));
        cells.push_back(std::move(row));
    }
    return detail::aligned_table(cells);
}

}  // namespace mutseg
