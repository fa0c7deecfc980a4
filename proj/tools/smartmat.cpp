// smartmat: simulate, analyze, replay and render pressure-mat sessions.
//
// Exit codes: 0 ok, 1 usage or invalid input, 2 corrupt input, 3 I/O.

#include <poll.h>
#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "smartmat/session.hpp"

namespace fs = std::filesystem;
using namespace smartmat;

namespace {

enum Exit { kOk = 0, kUsage = 1, kCorrupt = 2, kIo = 3 };

#ifndef SMARTMAT_DEFAULT_TEMPLATES
#define SMARTMAT_DEFAULT_TEMPLATES ""
#endif

// Blocking FIFO with a fixed capacity. push() waits for room, so nothing is
// ever dropped.
template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

    // False once the queue is closed.
    bool push(T item) {
        std::unique_lock lock(mu_);
        not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
        if (closed_) return false;
        items_.push_back(std::move(item));
        not_empty_.notify_one();
        return true;
    }
    void close() {
        std::lock_guard lock(mu_);
        closed_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }
    // nullopt once closed and drained.
    std::optional<T> pop() {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        T item = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return item;
    }

private:
    std::mutex mu_;
    std::condition_variable not_full_, not_empty_;
    std::deque<T> items_;
    std::size_t capacity_;
    bool closed_ = false;
};

// Same shape, but a full queue discards its oldest entry instead of waiting.
template <typename T>
class DropOldestQueue {
public:
    explicit DropOldestQueue(std::size_t capacity) : capacity_(capacity) {}

    void push(T item) {
        std::lock_guard lock(mu_);
        if (items_.size() == capacity_) {
            items_.pop_front();
            ++dropped_;
        }
        items_.push_back(std::move(item));
        not_empty_.notify_one();
    }
    void close() {
        std::lock_guard lock(mu_);
        closed_ = true;
        not_empty_.notify_all();
    }
    std::optional<T> pop() {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        T item = std::move(items_.front());
        items_.pop_front();
        return item;
    }
    std::size_t dropped() {
        std::lock_guard lock(mu_);
        return dropped_;
    }

private:
    std::mutex mu_;
    std::condition_variable not_empty_;
    std::deque<T> items_;
    std::size_t capacity_;
    std::size_t dropped_ = 0;
    bool closed_ = false;
};

// Options shared by every verb. Everything funnels into one KeyValueConfig:
// built-in defaults, then --config, then explicit flags.
struct Common {
    std::string config_path;
    std::string geometry;
    std::string model_path;
    std::string mode;
    std::optional<std::uint64_t> seed;
    std::optional<double> noise;
    std::optional<double> alarm_threshold_s;
    std::optional<unsigned> upsample;
    std::optional<unsigned> median_window;

    KeyValueConfig resolve() const {
        KeyValueConfig cfg;
        if (!config_path.empty()) cfg.merge(load_config(config_path));
        if (!geometry.empty()) apply_geometry(cfg);
        if (!model_path.empty()) cfg.merge(load_config(model_path));
        if (!mode.empty()) cfg.set("mode", std::string(sim::mode_name(sim::parse_mode(mode))));
        if (seed) cfg.set("seed", std::to_string(*seed));
        if (noise) cfg.set("noise_lsb", format_exact(*noise));
        if (alarm_threshold_s) cfg.set("alarm_threshold_s", format_exact(*alarm_threshold_s));
        if (upsample) cfg.set("upsample", std::to_string(*upsample));
        if (median_window) cfg.set("median_window", std::to_string(*median_window));
        return cfg;
    }

    static KeyValueConfig load_config(const std::string& path) {
        if (!fs::exists(path)) throw session::IoError("cannot open " + path);
        return KeyValueConfig::load(path);
    }

    // "RxC" or a config file with geometry keys.
    void apply_geometry(KeyValueConfig& cfg) const {
        const auto x = geometry.find_first_of("xX");
        const bool dims = x != std::string::npos && x > 0 &&
                          geometry.find_first_not_of("0123456789xX") == std::string::npos;
        if (!dims) {
            cfg.merge(load_config(geometry));
            return;
        }
        cfg.set("rows", geometry.substr(0, x));
        cfg.set("cols", geometry.substr(x + 1));
    }

    void add_to(CLI::App* app, bool analysis) {
        app->add_option("--config", config_path, "key=value config file (flags override it)");
        if (!analysis) {
            app->add_option("--geometry", geometry, "RxC or a geometry config file");
            app->add_option("--model", model_path, "Velostat model config file");
            app->add_option("--mode", mode, "floating | grounded_rows | diode | virtual_ground");
            app->add_option("--seed", seed, "noise seed");
            app->add_option("--noise", noise, "ADC noise, LSB rms");
        }
        app->add_option("--alarm-threshold", alarm_threshold_s, "dwell alarm threshold, seconds");
        app->add_option("--upsample", upsample, "bilinear upsampling factor (1 = off)");
        app->add_option("--median-window", median_window, "median window (1 = off)");
    }
};

class ReportWriter {
public:
    explicit ReportWriter(const std::string& path) {
        if (path.empty() || path == "-") return;
        file_.open(path, std::ios::trunc);
        if (!file_) throw session::IoError("cannot write " + path);
    }
    void line(const std::string& s) {
        std::ostream& os = file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout;
        os << s << '\n';
    }
    void flush() {
        std::ostream& os = file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout;
        os.flush();
        if (!os) throw session::IoError("report write failed");
    }

private:
    std::ofstream file_;
};

void write_text(const fs::path& path, const std::string& text) {
    session::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string frame_stem(std::uint32_t seq) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%06u", seq);
    return buf;
}

struct AnalysisSetup {
    session::AnalysisConfig config;
    std::optional<analytics::PostureTemplates> templates;
};

AnalysisSetup analysis_setup(const session::SessionHeader& header, const KeyValueConfig& cli,
                             const std::string& templates_dir) {
    KeyValueConfig merged = header.config;
    merged.merge(cli);
    AnalysisSetup s;
    s.config = session::analysis_config_from(merged);
    if (!templates_dir.empty() && templates_dir != "none")
        s.templates = session::load_templates(templates_dir, s.config.reconstruct,
                                              merged.get_double("reject_radius", 3.0));
    return s;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string scene_path;
    double duration_s = 1.0;
    std::string out;
    std::size_t calibration_frames = 10;
};

int run_simulate(const Common& common, const SimulateArgs& args) {
    const auto cfg = common.resolve();
    const auto geometry = geometry_from_config(cfg);
    session::SimulationRequest req;
    req.scene = args.scene_path.empty() ? sim::Scene{geometry, {}}
                                        : sim::load_scene(args.scene_path, geometry);
    req.model = model_from_config(cfg);
    req.mode = sim::parse_mode(cfg.get_string("mode", "virtual_ground"));
    req.duration_s = args.duration_s;
    const auto seed = cfg.get_int("seed", 0);
    if (seed < 0) throw ConfigError("seed must be >= 0");
    req.seed = static_cast<std::uint64_t>(seed);
    req.noise_lsb = cfg.get_double("noise_lsb", 0.0);
    req.calibration_frames = args.calibration_frames;
    req.config = cfg;
    req.config.set("scene", args.scene_path.empty() ? "empty" : fs::path(args.scene_path).filename().string());
    const auto bytes = session::simulate_session(req);
    session::write_file(args.out, bytes);
    return kOk;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
    std::string in;
    std::string out;
    std::string templates = SMARTMAT_DEFAULT_TEMPLATES;
    std::string render_dir;
    std::size_t stride = 0;
    std::string calibration;
    double timeout_s = 10.0;
};

// Saves every stride-th analyzed frame as PPM.
class Renderer {
public:
    Renderer(std::string dir, std::size_t stride, VelostatModel model, dsp::ZoneThresholds zones)
        : dir_(std::move(dir)), stride_(stride), model_(model), zones_(zones) {
        if (enabled()) fs::create_directories(dir_);
    }
    bool enabled() const { return !dir_.empty(); }
    bool wants(std::size_t analyzed_index) const {
        return enabled() && analyzed_index % std::max<std::size_t>(stride_, 1) == 0;
    }
    void write(std::uint32_t seq, const PressureImage& img) const {
        write_text(fs::path(dir_) / (frame_stem(seq) + ".ppm"), dsp::render_ppm(img, model_, zones_));
    }

private:
    std::string dir_;
    std::size_t stride_;
    VelostatModel model_;
    dsp::ZoneThresholds zones_;
};

void apply_calibration_file(session::SessionHeader& header, const std::string& path) {
    if (path.empty()) return;
    const auto cfg = Common::load_config(path);
    header.calibration = session::calibration_from_config(cfg, header.geometry);
    if (!header.calibration) throw session::SessionError("calibration file has no baseline: " + path);
}

int run_analyze(const Common& common, const AnalyzeArgs& args) {
    const auto cli = common.resolve();
    const auto bytes = session::read_file(args.in);
    auto contents = session::parse_session(bytes);
    apply_calibration_file(contents.header, args.calibration);
    const auto setup = analysis_setup(contents.header, cli, args.templates);

    ReportWriter report(args.out);
    session::SessionAnalyzer analyzer(contents.header, setup.config,
                                      setup.templates ? &*setup.templates : nullptr,
                                      [&](const std::string& l) { report.line(l); });
    analyzer.keep_results = false;
    Renderer renderer(args.render_dir, args.stride, contents.header.model, setup.config.reconstruct.zones);
    std::size_t analyzed = 0;
    if (renderer.enabled())
        analyzer.set_image_hook([&](const session::FrameResult& r, const PressureImage& img) {
            if (renderer.wants(analyzed++)) renderer.write(r.sequence, img);
        });
    analyzer.consume({std::move(contents.frames), std::move(contents.diagnostics)});
    const bool clean = analyzer.finish();
    report.flush();
    return clean ? kOk : kCorrupt;
}

// ---------------------------------------------------------------------------

struct Chunk {
    std::vector<std::uint8_t> bytes;
};

enum class ReadEnd { eof, timeout, error };

int run_live(const Common& common, const AnalyzeArgs& args) {
    const auto cli = common.resolve();
    int fd = 0;
    if (!args.in.empty() && args.in != "-") {
        fd = ::open(args.in.c_str(), O_RDONLY);
        if (fd < 0) throw session::IoError("cannot open " + args.in + ": " + std::strerror(errno));
    }

    // Ingestion: reader thread -> bounded queue (never drops).
    BoundedQueue<Chunk> chunks(64);
    ReadEnd end = ReadEnd::eof;
    std::size_t total_read = 0;
    std::thread reader([&] {
        const int timeout_ms = args.timeout_s > 0 ? static_cast<int>(args.timeout_s * 1000.0) : -1;
        std::vector<std::uint8_t> buf(1 << 16);
        for (;;) {
            pollfd p{fd, POLLIN, 0};
            const int ready = ::poll(&p, 1, timeout_ms);
            if (ready < 0) {
                if (errno == EINTR) continue;
                end = ReadEnd::error;
                break;
            }
            if (ready == 0) {
                end = ReadEnd::timeout;
                break;
            }
            const auto n = ::read(fd, buf.data(), buf.size());
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                end = ReadEnd::error;
                break;
            }
            if (n == 0) break;
            total_read += static_cast<std::size_t>(n);
            if (!chunks.push({std::vector<std::uint8_t>(buf.begin(), buf.begin() + n)})) break;
        }
        chunks.close();
    });

    // Rendering runs on its own thread behind a drop-oldest queue so a slow
    // disk can never stall analysis.
    struct RenderJob {
        std::uint32_t seq;
        PressureImage image;
    };
    DropOldestQueue<RenderJob> renders(8);
    std::optional<Renderer> renderer;
    std::thread render_thread;

    ReportWriter report(args.out);
    std::vector<std::uint8_t> pending;
    std::optional<session::SessionAnalyzer> analyzer;
    std::optional<AnalysisSetup> setup;
    wire::StreamDecoder decoder;
    std::size_t analyzed = 0;
    int status = kOk;

    auto start_analysis = [&](session::SessionHeader header) {
        apply_calibration_file(header, args.calibration);
        setup = analysis_setup(header, cli, args.templates);
        renderer.emplace(args.render_dir, args.stride, header.model, setup->config.reconstruct.zones);
        analyzer.emplace(header, setup->config, setup->templates ? &*setup->templates : nullptr,
                         [&](const std::string& l) {
                             report.line(l);
                             report.flush();
                         });
        analyzer->keep_results = false;
        if (renderer->enabled()) {
            render_thread = std::thread([&] {
                while (auto job = renders.pop()) renderer->write(job->seq, job->image);
            });
            analyzer->set_image_hook([&](const session::FrameResult& r, const PressureImage& img) {
                if (renderer->wants(analyzed++)) renders.push({r.sequence, img});
            });
        }
    };

    try {
        while (auto chunk = chunks.pop()) {
            if (!analyzer) {
                pending.insert(pending.end(), chunk->bytes.begin(), chunk->bytes.end());
                if (!session::maybe_session_prefix(pending))
                    throw session::SessionError("stream does not start with a session header");
                auto parsed = session::parse_header(pending);
                if (!parsed) continue;
                start_analysis(std::move(parsed->header));
                wire::StreamDecoder::Output out;
                decoder.feed(std::span(pending).subspan(parsed->frames_offset), out);
                analyzer->consume(out);
                pending.clear();
                continue;
            }
            wire::StreamDecoder::Output out;
            decoder.feed(chunk->bytes, out);
            analyzer->consume(out);
        }
    } catch (...) {
        chunks.close();
        reader.join();
        if (fd > 0) ::close(fd);
        renders.close();
        if (render_thread.joinable()) render_thread.join();
        throw;
    }
    reader.join();
    if (fd > 0) ::close(fd);

    if (!analyzer) {
        nlohmann::ordered_json j;
        j["type"] = "diagnostic";
        j["kind"] = end == ReadEnd::timeout && total_read == 0 ? "timeout" : "incomplete_header";
        j["bytes"] = total_read;
        report.line(j.dump());
        report.flush();
        return end == ReadEnd::timeout && total_read == 0 ? kIo : kCorrupt;
    }

    wire::StreamDecoder::Output out;
    decoder.finish(out);
    analyzer->consume(out);
    if (end != ReadEnd::eof) {
        nlohmann::ordered_json j;
        j["type"] = "stream_end";
        j["reason"] = end == ReadEnd::timeout ? "timeout" : "read_error";
        report.line(j.dump());
    }
    const bool clean = analyzer->finish();
    report.flush();
    renders.close();
    if (render_thread.joinable()) render_thread.join();
    if (end == ReadEnd::error) status = kIo;
    else if (!clean) status = kCorrupt;
    return status;
}

// ---------------------------------------------------------------------------

struct RenderArgs {
    std::string in;
    std::string out;
    std::string csv;
    std::optional<std::uint32_t> frame;
    std::string calibration;
};

int run_render(const Common& common, const RenderArgs& args) {
    const auto cli = common.resolve();
    const auto bytes = session::read_file(args.in);
    auto contents = session::parse_session(bytes);
    apply_calibration_file(contents.header, args.calibration);
    const auto setup = analysis_setup(contents.header, cli, "");

    std::optional<PressureImage> picked;
    std::uint32_t picked_seq = 0;
    session::SessionAnalyzer analyzer(contents.header, setup.config, nullptr, [](const std::string&) {});
    analyzer.keep_results = false;
    analyzer.set_image_hook([&](const session::FrameResult& r, const PressureImage& img) {
        if (!args.frame ? !picked : r.sequence == *args.frame) {
            picked = img;
            picked_seq = r.sequence;
        }
    });
    analyzer.consume({std::move(contents.frames), std::move(contents.diagnostics)});
    const bool clean = analyzer.finish();
    if (!picked) {
        std::cerr << "smartmat render: no analyzed frame"
                  << (args.frame ? " with sequence " + std::to_string(*args.frame) : std::string())
                  << '\n';
        return clean ? kUsage : kCorrupt;
    }
    const auto out = args.out.empty() ? frame_stem(picked_seq) + ".ppm" : args.out;
    write_text(out, dsp::render_ppm(*picked, contents.header.model, setup.config.reconstruct.zones));
    if (!args.csv.empty()) write_text(args.csv, dsp::pressure_csv(*picked));
    return clean ? kOk : kCorrupt;
}

// ---------------------------------------------------------------------------

struct CalibrateArgs {
    std::string in;
    std::string out;
    std::size_t frames = 10;
};

// Mean of the first `frames` decoded frames, written as a config fragment
// that analyze/live/render accept through --calibration.
int run_calibrate(const CalibrateArgs& args) {
    const auto bytes = session::read_file(args.in);
    const auto contents = session::parse_session(bytes);
    if (args.frames == 0) throw InvalidInput("calibrate: --frames must be >= 1");
    std::vector<RawFrame> idle;
    for (const auto& f : contents.frames) {
        if (idle.size() == args.frames) break;
        validate_frame(f.frame, contents.header.geometry);
        idle.push_back(f.frame);
    }
    if (idle.size() < args.frames)
        throw InvalidInput("calibrate: session has only " + std::to_string(idle.size()) + " frames");
    KeyValueConfig cfg;
    write_geometry(cfg, contents.header.geometry);
    session::write_calibration(cfg, dsp::calibrate(idle));
    const auto text = cfg.dump();
    if (args.out.empty() || args.out == "-") std::cout << text;
    else write_text(args.out, text);
    const bool clean = std::all_of(contents.diagnostics.begin(), contents.diagnostics.end(),
                                   [](const auto& d) { return d.kind == wire::DiagnosticKind::ok; });
    return clean ? kOk : kCorrupt;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Velostat pressure-mat simulator and analyzer"};
    app.require_subcommand(1);

    Common common;

    auto* simulate = app.add_subcommand("simulate", "simulate a scene into a session file");
    SimulateArgs sim_args;
    common.add_to(simulate, false);
    simulate->add_option("--scene", sim_args.scene_path, "scene file (default: empty mat)");
    simulate->add_option("--duration", sim_args.duration_s, "seconds");
    simulate->add_option("--calibration-frames", sim_args.calibration_frames,
                         "idle scans embedded in the header (0 = none)");
    simulate->add_option("--out", sim_args.out, "session file")->required();

    AnalyzeArgs an_args;
    auto add_analysis = [&](CLI::App* sub, AnalyzeArgs& a) {
        common.add_to(sub, true);
        sub->add_option("--out", a.out, "report file (default stdout)");
        sub->add_option("--templates", a.templates, "posture template directory ('none' to skip)");
        sub->add_option("--render-dir", a.render_dir, "write PPM heatmaps here");
        sub->add_option("--stride", a.stride, "render every Nth analyzed frame");
        sub->add_option("--calibration", a.calibration, "calibration file from 'calibrate'");
    };
    auto* analyze = app.add_subcommand("analyze", "analyze a recorded session");
    add_analysis(analyze, an_args);
    analyze->add_option("--in,in", an_args.in, "session file")->required();

    AnalyzeArgs live_args;
    auto* live = app.add_subcommand("live", "analyze a session byte stream as it arrives");
    add_analysis(live, live_args);
    live->add_option("--in,in", live_args.in, "stream source (file, FIFO or '-' for stdin)");
    live->add_option("--timeout", live_args.timeout_s, "seconds without data before giving up (0 = wait)");

    RenderArgs render_args;
    auto* render = app.add_subcommand("render", "render one frame of a session as PPM");
    common.add_to(render, true);
    render->add_option("--in,in", render_args.in, "session file")->required();
    render->add_option("--frame", render_args.frame, "sequence number (default: first analyzed)");
    render->add_option("--out", render_args.out, "PPM path");
    render->add_option("--csv", render_args.csv, "also write the pressure grid (kPa) as CSV");
    render->add_option("--calibration", render_args.calibration, "calibration file");

    CalibrateArgs cal_args;
    auto* calibrate = app.add_subcommand("calibrate", "compute a baseline from leading idle frames");
    calibrate->add_option("--in,in", cal_args.in, "session file")->required();
    calibrate->add_option("--frames", cal_args.frames, "number of idle frames");
    calibrate->add_option("--out", cal_args.out, "calibration file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*simulate) return run_simulate(common, sim_args);
        if (*analyze) return run_analyze(common, an_args);
        if (*live) return run_live(common, live_args);
        if (*render) return run_render(common, render_args);
        if (*calibrate) return run_calibrate(cal_args);
    } catch (const session::IoError& e) {
        std::cerr << "smartmat: " << e.what() << '\n';
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "smartmat: " << e.what() << '\n';
        return kIo;
    } catch (const session::SessionError& e) {
        std::cerr << "smartmat: " << e.what() << '\n';
        return kCorrupt;
    } catch (const std::exception& e) {
        std::cerr << "smartmat: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}
