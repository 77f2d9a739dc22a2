#pragma once

// Command-line front end: run | evaluate | synth.
// Exit codes: 0 ok, 1 processing error, 2 usage error.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mutseg/dataset_io.hpp"
#include "mutseg/evaluation.hpp"
#include "mutseg/flow.hpp"
#include "mutseg/inference.hpp"
#include "mutseg/synth.hpp"

namespace mutseg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitProcessing = 1;
inline constexpr int kExitUsage = 2;

enum class InitSource { file, fallback, none };
enum class FlowSource { block, zero, file };

struct EvaluateConfig {
    std::filesystem::path predictions;
    std::filesystem::path manifest;
    std::filesystem::path report_dir;  // empty: the prediction directory
    std::vector<double> thresholds{1, 2, 4};
    Aggregation aggregation = Aggregation::pooled;
};

struct RunConfig {
    std::filesystem::path manifest;
    std::filesystem::path output = "out";
    EngineConfig engine;
    std::array<InitSource, 2> init{InitSource::file, InitSource::file};
    bool disable_init_visible = false;
    bool disable_init_lwir = false;
    FlowSource flow = FlowSource::block;
    int flow_view = 0;
    BlockFlowParams block_flow;
    bool deferred = true;  // false: write each frame as soon as it is processed
    bool evaluate = false;
    int threads = 1;  // the engine is single-threaded; any N >= 1 is honored
    int d_max = -1;   // -1: take it from the manifest
    std::vector<double> thresholds{1, 2, 4};
};

namespace detail {

inline std::string fmt(double v, int digits = 3) { return format_fixed(v, digits); }

inline std::string energy_line(const ModelEnergy& e) {
    std::ostringstream out;
    for (int k = 0; k < 2; ++k) {
        const auto& s = e.stereo[k];
        const auto& g = e.segm[k];
        out << " v" << k << "[app=" << fmt(s.appearance) << " shape=" << fmt(s.shape) << " uniq=" << fmt(s.uniqueness)
            << " smooth1=" << fmt(s.smoothness) << " color=" << fmt(g.color) << " contour=" << fmt(g.contour)
            << " smooth2=" << fmt(g.smoothness) << " temporal=" << fmt(g.temporal) << "]";
    }
    return out.str();
}

// Views whose modality tag matches `tag`.
inline std::vector<int> views_tagged(const SequenceManifest& m, const std::string& tag) {
    std::vector<int> out;
    for (int k = 0; k < 2; ++k)
        if (m.modality[k] == tag)
            out.push_back(k);
    return out;
}

inline FlowProvider make_flow_provider(const RunConfig& cfg, const SequenceManifest& manifest) {
    switch (cfg.flow) {
    case FlowSource::zero:
        return zero_flow_provider();
    case FlowSource::block:
        return block_flow_provider(cfg.flow_view, cfg.block_flow);
    case FlowSource::file: {
        const std::string pattern = manifest.flow[cfg.flow_view];
        if (pattern.empty())
            throw Error("--flow file needs a flow" + std::to_string(cfg.flow_view) + " pattern in the manifest");
        return [manifest, pattern](const FramePair& cur, const FramePair&) {
            const auto path = manifest.resolve(pattern, cur.frame_index);
            return load_flow_file(path.string(), cur.width(), cur.height());
        };
    }
    }
    throw Error("unknown flow source");
}

inline std::string group_name(const SequenceManifest& m, int view) {
    return "view" + std::to_string(view) + " (" + m.modality[view] + ")";
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    if (!out)
        throw Error("cannot write " + path.string());
}

}  // namespace detail

/// Scores predictions written by `run` against the manifest's ground truth.
/// Returns kExitProcessing and lists them when GT frames lack predictions.
inline int cmd_evaluate(const EvaluateConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    namespace fs = std::filesystem;
    const SequenceManifest manifest = SequenceManifest::load(cfg.manifest);
    const int count = manifest.resolved_frame_count();
    std::vector<GtCorrespondence> points;
    if (!manifest.correspondences.empty()) {
        const fs::path p = manifest.root / manifest.correspondences;
        if (fs::exists(p))
            points = load_correspondences(p);
    }

    std::vector<FrameScore> scores;
    std::vector<std::string> missing;
    std::array<RegistrationAccumulator, 2> reg{RegistrationAccumulator(cfg.thresholds),
                                               RegistrationAccumulator(cfg.thresholds)};
    RegistrationAccumulator reg_all(cfg.thresholds);
    for (int i = 0; i < count; ++i) {
        const int index = manifest.first_index + i;
        for (int k = 0; k < 2; ++k) {
            if (!manifest.gt[k].empty()) {
                const fs::path gt_path = manifest.resolve(manifest.gt[k], index);
                if (fs::exists(gt_path)) {
                    const fs::path pred = mask_output_path(cfg.predictions, index, k);
                    if (!fs::exists(pred)) {
                        missing.push_back(pred.string());
                    } else {
                        scores.push_back({detail::group_name(manifest, k), index, k,
                                          segmentation_metrics(read_mask(pred.string()), read_mask(gt_path.string()))});
                    }
                }
            }
            const bool annotated = std::any_of(points.begin(), points.end(), [&](const GtCorrespondence& c) {
                return c.frame == index && c.view == k;
            });
            if (annotated) {
                const fs::path pred = disparity_output_path(cfg.predictions, index, k);
                if (!fs::exists(pred)) {
                    missing.push_back(pred.string());
                    continue;
                }
                const Grid<double> d = read_disparity(pred);
                reg[k].add(d, index, k, points);
                reg_all.add(d, index, k, points);
            }
        }
    }
    if (!missing.empty()) {
        err << "missing predictions for " << missing.size() << " ground-truth frame(s):\n";
        for (const auto& m : missing)
            err << "  " << m << "\n";
        return kExitProcessing;
    }

    const fs::path report_dir = cfg.report_dir.empty() ? cfg.predictions : cfg.report_dir;
    fs::create_directories(report_dir);
    if (!scores.empty()) {
        const auto rows = aggregate_report(scores, cfg.aggregation);
        detail::write_text(report_dir / "segmentation.csv", segmentation_report_csv(rows));
        const std::string text = segmentation_report_text(rows);
        detail::write_text(report_dir / "segmentation.txt", text);
        out << "Segmentation\n" << text;
    } else {
        out << "no ground-truth masks found\n";
    }
    if (!points.empty()) {
        std::vector<RegistrationRow> rows;
        for (int k = 0; k < 2; ++k)
            if (reg[k].scores().points + reg[k].scores().skipped > 0)
                rows.push_back({detail::group_name(manifest, k), reg[k].scores()});
        rows.push_back({"overall", reg_all.scores()});
        detail::write_text(report_dir / "registration.csv", registration_report_csv(rows));
        const std::string text = registration_report_text(rows);
        detail::write_text(report_dir / "registration.txt", text);
        out << "Registration\n" << text;
        if (reg_all.scores().skipped > 0)
            err << "warning: " << reg_all.scores().skipped << " annotated point(s) outside the predicted maps skipped\n";
    }
    return kExitOk;
}

/// Processes a manifest through the temporal pipeline and writes masks and
/// disparity maps. Per-frame energies and timings go to `out` and run.log.
namespace detail {

inline std::string config_line(const EngineConfig& e) {
    std::ostringstream s;
    s << "config lambda_u=" << e.stereo.lambda_u << " lambda_s1=" << e.stereo.lambda_s1 << " w=" << e.stereo.w
      << " g=" << e.stereo.g << " truncation=" << e.stereo.truncation << " lambda_c=" << e.segm.lambda_c
      << " lambda_s2=" << e.segm.lambda_s2 << " lambda_m=" << e.segm.lambda_m << " components="
      << e.segm.gmm_components << " stride=" << e.segm.temporal_stride << " layers=" << e.segm.pipeline_depth
      << " seed=" << e.seed;
    return s.str();
}

}  // namespace detail

inline int cmd_run(RunConfig cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    namespace fs = std::filesystem;
    using clock = std::chrono::steady_clock;
    const SequenceManifest manifest = SequenceManifest::load(cfg.manifest);
    cfg.engine.spaces.d_max = cfg.d_max >= 0 ? cfg.d_max : manifest.d_max;
    cfg.engine.flow_view = cfg.flow_view;
    if (cfg.disable_init_visible || cfg.disable_init_lwir) {
        for (const auto& [flag, tag] : {std::pair{cfg.disable_init_visible, "visible"}, {cfg.disable_init_lwir, "lwir"}}) {
            if (!flag)
                continue;
            const auto views = detail::views_tagged(manifest, tag);
            if (views.empty())
                throw Error(std::string("no view of the manifest is tagged '") + tag + "'");
            for (const int k : views)
                cfg.init[k] = InitSource::none;
        }
    }

    std::error_code ec;
    fs::create_directories(cfg.output, ec);
    if (ec)
        throw Error("cannot create output directory " + cfg.output.string() + ": " + ec.message());
    std::ofstream log(cfg.output / "run.log");
    if (!log)
        throw Error("cannot write " + (cfg.output / "run.log").string());
    const auto say = [&](const std::string& line) {
        out << line << "\n";
        log << line << "\n";
        log.flush();
    };

    SequenceReader reader(manifest);
    PipelineState state(cfg.engine);
    FallbackInitializer fallback;
    const FlowProvider flow = detail::make_flow_provider(cfg, manifest);
    say("sequence " + cfg.manifest.string() + ": " + std::to_string(reader.frame_count()) + " frame(s), d_max " +
        std::to_string(cfg.engine.spaces.d_max));
    say(detail::config_line(cfg.engine));

    const auto emit = [&](const FrameOutput& f, const char* kind) {
        write_outputs(cfg.output, f);
        say("  wrote frame " + std::to_string(f.frame_index) + " (" + kind + ")" +
            (f.degenerate ? " [degenerate]" : ""));
    };

    bool first = true;
    while (true) {
        std::optional<SequenceFrame> frame;
        int index = manifest.first_index;
        try {
            frame = reader.next();
        } catch (const Error& e) {
            err << "error: " << e.what() << "\n";
            log << "error: " << e.what() << "\n";
            return kExitProcessing;
        }
        if (!frame)
            break;
        index = frame->pair.frame_index;
        try {
            const auto fb = fallback.observe(frame->pair);
            InitMasks init;
            for (int k = 0; k < 2; ++k) {
                switch (cfg.init[k]) {
                case InitSource::file:
                    init[k] = frame->init[k];
                    if (!init[k] && first)
                        init[k] = fb[k].mask;  // no file for the first frame: fall back
                    break;
                case InitSource::fallback:
                    init[k] = fb[k].mask;
                    break;
                case InitSource::none:
                    if (first)
                        init[k] = SegmentationLabeling(frame->pair.width(), frame->pair.height());
                    break;
                }
            }
            const auto t0 = clock::now();
            AdvanceResult r = advance_pipeline(state, std::move(frame->pair), init, flow);
            const double secs = std::chrono::duration<double>(clock::now() - t0).count();
            say("frame " + std::to_string(index) + ": energy " + detail::fmt(r.energy.total()) +
                detail::energy_line(r.energy) + " passes " + std::to_string(r.stats.disparity_passes) + " moves " +
                std::to_string(r.stats.accepted_disparity_moves) + "d/" +
                std::to_string(r.stats.accepted_segmentation_moves) + "s" + (r.stats.converged ? "" : " [bound]") +
                " time " + detail::fmt(secs, 2) + "s");
            if (cfg.deferred) {
                if (r.deferred)
                    emit(*r.deferred, "deferred");
            } else {
                emit(r.realtime, "real-time");
            }
        } catch (const Error& e) {
            err << "error: frame " << index << ": " << e.what() << "\n";
            log << "error: frame " << index << ": " << e.what() << "\n";
            if (cfg.deferred)
                for (const auto& f : flush_pipeline(state))
                    emit(f, "deferred, partial");
            return kExitProcessing;
        }
        first = false;
    }
    if (cfg.deferred)
        for (const auto& f : flush_pipeline(state))
            emit(f, "deferred");

    if (cfg.evaluate) {
        EvaluateConfig ev;
        ev.predictions = cfg.output;
        ev.manifest = cfg.manifest;
        ev.thresholds = cfg.thresholds;
        return cmd_evaluate(ev, out, err);
    }
    return kExitOk;
}

struct SynthConfig {
    std::filesystem::path output = "synthetic";
    SynthParams params;
};

inline int cmd_synth(const SynthConfig& cfg, std::ostream& out = std::cout) {
    const SynthSequence seq = generate_synthetic(cfg.params);
    const auto manifest = write_synthetic(seq, cfg.output);
    double f1 = 0;
    int n = 0;
    for (const auto& f : seq.frames)
        for (int k = 0; k < 2; ++k, ++n)
            f1 += segmentation_metrics(f.init[k], f.gt[k]).f1;
    out << "wrote " << seq.frames.size() << " frame pair(s) to " << cfg.output.string() << " (manifest "
        << manifest.string() << ")\n"
        << "init-mask F1 vs ground truth: " << format_fixed(n ? f1 / n : 0.0, 4) << "\n";
    return kExitOk;
}

namespace detail {

inline void add_engine_options(CLI::App& app, RunConfig& c) {
    auto& st = c.engine.stereo;
    auto& sg = c.engine.segm;
    auto& so = c.engine.solver;
    app.add_option("--lambda-u", st.lambda_u, "uniqueness weight")->capture_default_str();
    app.add_option("--lambda-s1", st.lambda_s1, "stereo smoothness weight")->capture_default_str();
    app.add_option("--uniqueness-w", st.w, "uniqueness curve weight w")->capture_default_str();
    app.add_option("--g", st.g, "expected contour gradient g (both models)")->capture_default_str();
    app.add_option("--truncation", st.truncation, "disparity jump truncation")->capture_default_str();
    app.add_option("--lambda-c", sg.lambda_c, "contour weight")->capture_default_str();
    app.add_option("--lambda-s2", sg.lambda_s2, "segmentation smoothness weight")->capture_default_str();
    app.add_option("--lambda-m", sg.lambda_m, "multispectral contribution weight")->capture_default_str();
    app.add_option("--gmm-components", sg.gmm_components, "color mixture components")->capture_default_str();
    app.add_option("--temporal-stride", sg.temporal_stride, "temporal clique stride, px")->capture_default_str();
    app.add_option("--layers", sg.pipeline_depth, "temporal layers L")->capture_default_str();
    app.add_option("--contour-tau", sg.contour_tau, "contour cost distance scale, px")->capture_default_str();
    app.add_option("--contour-cap", sg.contour_cap, "contour cost saturation distance, px")->capture_default_str();
    app.add_option("--max-disparity-passes", so.max_disparity_passes)->capture_default_str();
    app.add_option("--max-segmentation-moves", so.max_segmentation_moves)->capture_default_str();
    app.add_option("--seed", c.engine.seed, "seed of every random choice")->capture_default_str();
    app.add_option("--d-max", c.d_max, "largest disparity (default: manifest)");

    const auto disable = [&](const std::string& term, bool& use) {
        app.add_flag_callback("--disable-" + term, [&use] { use = false; }, "drop the " + term + " term");
    };
    disable("appearance", st.use_appearance);
    disable("shape", st.use_shape);
    disable("uniqueness", st.use_uniqueness);
    disable("saliency", st.use_saliency);
    disable("color", sg.use_color);
    disable("contour", sg.use_contour);
    disable("cross-view-contour", sg.use_cross_view_contour);
    disable("temporal", sg.use_temporal);
    app.add_flag("--disable-init-visible", c.disable_init_visible, "no initial mask for the visible view");
    app.add_flag("--disable-init-lwir", c.disable_init_lwir, "no initial mask for the infrared view");
}

inline const std::map<std::string, InitSource> kInitNames{
    {"file", InitSource::file}, {"fallback", InitSource::fallback}, {"none", InitSource::none}};

inline std::vector<double> parse_thresholds(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const double v = std::stod(item, &used);
            if (used != item.size() || !(v >= 0))
                throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw CLI::ValidationError("--thresholds", "invalid threshold '" + item + "'");
        }
    }
    if (out.empty())
        throw CLI::ValidationError("--thresholds", "at least one threshold is required");
    return out;
}

// Reads key=value lines (keys are long option names) into options the
// command line left unset.
inline void apply_config_file(CLI::App& app, const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw CLI::FileError::Missing(path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';')
            continue;
        const auto eq = line.find('=');
        std::string key = detail::trim(line.substr(0, eq));
        if (key.rfind("--", 0) == 0)
            key.erase(0, 2);
        const std::string where = path + ":" + std::to_string(line_no);
        if (eq == std::string::npos || key.empty())
            throw CLI::ValidationError(where, "expected key=value");
        std::string value = detail::trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        CLI::Option* opt = app.get_option_no_throw("--" + key);
        if (opt == nullptr || key == "config")
            throw CLI::ValidationError(where, "unknown key '" + key + "'");
        if (opt->count() > 0)
            continue;  // given on the command line
        opt->add_result(value);
        opt->run_callback();
    }
}

}  // namespace detail

/// Parses argv and dispatches; never throws.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Mutual foreground segmentation and registration of two-modality stereo video"};
    app.require_subcommand(1);

    RunConfig run;
    std::string init0 = "file", init1 = "file", flow = "block", mode = "deferred", thresholds = "1,2,4";
    auto* run_cmd = app.add_subcommand("run", "segment and register a sequence");
    std::string run_config;
    run_cmd->add_option("--config", run_config, "key=value file; command-line flags take precedence")
        ->check(CLI::ExistingFile);
    run_cmd->add_option("manifest", run.manifest, "sequence manifest")->required()->check(CLI::ExistingFile);
    run_cmd->add_option("-o,--output", run.output, "output directory")->capture_default_str();
    detail::add_engine_options(*run_cmd, run);
    run_cmd->add_option("--init0", init0, "view 0 initialization: file|fallback|none")
        ->check(CLI::IsMember({"file", "fallback", "none"}))
        ->capture_default_str();
    run_cmd->add_option("--init1", init1, "view 1 initialization: file|fallback|none")
        ->check(CLI::IsMember({"file", "fallback", "none"}))
        ->capture_default_str();
    run_cmd->add_option("--flow", flow, "flow source: block|zero|file")
        ->check(CLI::IsMember({"block", "zero", "file"}))
        ->capture_default_str();
    run_cmd->add_option("--flow-view", run.flow_view, "view the flow is computed on")
        ->check(CLI::Range(0, 1))
        ->capture_default_str();
    run_cmd->add_option("--output-mode", mode, "deferred|realtime")
        ->check(CLI::IsMember({"deferred", "realtime"}))
        ->capture_default_str();
    run_cmd->add_flag("--evaluate", run.evaluate, "score the outputs against the manifest's ground truth");
    run_cmd->add_option("--thresholds", thresholds, "disparity error thresholds, px")->capture_default_str();
    run_cmd->add_option("--threads", run.threads, "upper bound on worker threads")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    EvaluateConfig ev;
    std::string aggregation = "pooled", ev_thresholds = "1,2,4";
    auto* ev_cmd = app.add_subcommand("evaluate", "score predictions against ground truth");
    ev_cmd->add_option("predictions", ev.predictions, "directory written by run")
        ->required()
        ->check(CLI::ExistingDirectory);
    ev_cmd->add_option("manifest", ev.manifest, "sequence manifest")->required()->check(CLI::ExistingFile);
    ev_cmd->add_option("--report-dir", ev.report_dir, "where reports go (default: predictions)");
    ev_cmd->add_option("--thresholds", ev_thresholds, "disparity error thresholds, px")->capture_default_str();
    ev_cmd->add_option("--aggregation", aggregation, "pooled|mean|both")
        ->check(CLI::IsMember({"pooled", "mean", "both"}))
        ->capture_default_str();

    SynthConfig syn;
    bool no_invert = false, no_limb = false;
    auto* syn_cmd = app.add_subcommand("synth", "generate a synthetic sequence with ground truth");
    syn_cmd->add_option("output", syn.output, "output directory")->required();
    syn_cmd->add_option("--width", syn.params.width)->capture_default_str();
    syn_cmd->add_option("--height", syn.params.height)->capture_default_str();
    syn_cmd->add_option("--frames", syn.params.frames)->capture_default_str();
    syn_cmd->add_option("--disparity", syn.params.disparity, "object disparity d*")->capture_default_str();
    syn_cmd->add_option("--background-disparity", syn.params.background_disparity)->capture_default_str();
    syn_cmd->add_option("--d-max", syn.params.d_max)->capture_default_str();
    syn_cmd->add_option("--noise", syn.params.noise, "noise sigma, gray levels")->capture_default_str();
    syn_cmd->add_option("--corruption", syn.params.corruption, "init-mask boundary corruption rate")
        ->capture_default_str();
    syn_cmd->add_flag("--no-invert", no_invert, "keep modality B intensities uninverted");
    syn_cmd->add_option("--flat-view", syn.params.flat_view, "view with the flattened limb (-1: none)")
        ->capture_default_str();
    syn_cmd->add_flag("--no-limb", no_limb, "omit the limb");
    syn_cmd->add_option("--velocity-x", syn.params.velocity_x)->capture_default_str();
    syn_cmd->add_option("--velocity-y", syn.params.velocity_y)->capture_default_str();
    syn_cmd->add_option("--seed", syn.params.seed)->capture_default_str();

    try {
        app.parse(argc, argv);
        if (run_cmd->parsed()) {
            if (!run_config.empty())
                detail::apply_config_file(*run_cmd, run_config);
            run.init = {detail::kInitNames.at(init0), detail::kInitNames.at(init1)};
            run.flow = flow == "block" ? FlowSource::block : flow == "zero" ? FlowSource::zero : FlowSource::file;
            run.deferred = mode == "deferred";
            run.thresholds = detail::parse_thresholds(thresholds);
            run.engine.segm.g = run.engine.stereo.g;
        }
        if (ev_cmd->parsed()) {
            ev.thresholds = detail::parse_thresholds(ev_thresholds);
            ev.aggregation = aggregation == "pooled" ? Aggregation::pooled
                             : aggregation == "mean" ? Aggregation::per_frame_mean
                                                     : Aggregation::both;
        }
        if (syn_cmd->parsed()) {
            syn.params.invert = !no_invert;
            syn.params.limb = !no_limb;
        }
    } catch (const CLI::CallForHelp&) {
        out << app.help(run_cmd->parsed() ? "run" : ev_cmd->parsed() ? "evaluate" : syn_cmd->parsed() ? "synth" : "");
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }

    // parameter invariants are usage errors
    try {
        if (run_cmd->parsed()) {
            run.engine.stereo.validate();
            run.engine.segm.validate();
            run.engine.solver.validate();
        }
        if (syn_cmd->parsed())
            syn.params.validate();
    } catch (const Error& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (run_cmd->parsed())
            return cmd_run(run, out, err);
        if (ev_cmd->parsed())
            return cmd_evaluate(ev, out, err);
        return cmd_synth(syn, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitProcessing;
    }
}

}  // namespace mutseg
