#include "smartmat/session.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace smartmat::session {

namespace {

constexpr std::string_view kEndMarker = "\nEND\n";
constexpr std::size_t kMaxHeaderBytes = 1 << 20;

std::string join_baseline(const Grid<double>& g) {
    std::string out;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (k) out += ',';
        out += format_exact(g.data()[k]);
    }
    return out;
}

Grid<double> split_baseline(const std::string& text, const MatGeometry& g) {
    Grid<double> out(g.rows, g.cols);
    std::size_t k = 0, start = 0;
    while (start <= text.size()) {
        auto comma = text.find(',', start);
        if (comma == std::string::npos) comma = text.size();
        if (k >= out.size()) throw SessionError("session header: baseline has too many values");
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(text.data() + start, text.data() + comma, v);
        if (ec != std::errc() || ptr != text.data() + comma)
            throw SessionError("session header: bad baseline value");
        out.data()[k++] = v;
        start = comma + 1;
    }
    if (k != out.size()) throw SessionError("session header: baseline has too few values");
    return out;
}

}  // namespace

void write_calibration(KeyValueConfig& cfg, const dsp::Calibration& cal) {
    cfg.set("calibration_frames_embedded", std::to_string(cal.frames));
    cfg.set("baseline", join_baseline(cal.baseline));
}

std::optional<dsp::Calibration> calibration_from_config(const KeyValueConfig& cfg,
                                                        const MatGeometry& geometry) {
    const auto b = cfg.get("baseline");
    if (!b) return std::nullopt;
    dsp::Calibration cal;
    cal.baseline = split_baseline(*b, geometry);
    const auto frames = cfg.get_int("calibration_frames_embedded", 1);
    if (frames < 1) throw SessionError("calibration: frame count must be >= 1");
    cal.frames = static_cast<std::size_t>(frames);
    return cal;
}

std::string format_header(const SessionHeader& h) {
    KeyValueConfig cfg = h.config;
    write_geometry(cfg, h.geometry);
    write_model(cfg, h.model);
    cfg.set("mode", std::string(sim::mode_name(h.mode)));
    cfg.set("seed", std::to_string(h.seed));
    cfg.set("start_time_ms", std::to_string(h.start_time_ms));
    if (h.calibration) write_calibration(cfg, *h.calibration);
    std::string out(kSessionMagic);
    out += '\n';
    out += cfg.dump();
    out += "END\n";
    return out;
}

bool maybe_session_prefix(std::span<const std::uint8_t> bytes) {
    const std::size_t n = std::min(bytes.size(), kSessionMagic.size());
    return std::equal(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n),
                      kSessionMagic.begin());
}

std::optional<ParsedHeader> parse_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kSessionMagic.size() + 1 || !maybe_session_prefix(bytes)) return std::nullopt;
    if (bytes[kSessionMagic.size()] != '\n') throw SessionError("session header: bad magic line");

    const std::string_view text(reinterpret_cast<const char*>(bytes.data()),
                                std::min(bytes.size(), kMaxHeaderBytes));
    const auto end = text.find(kEndMarker, kSessionMagic.size());
    if (end == std::string_view::npos) {
        if (bytes.size() >= kMaxHeaderBytes) throw SessionError("session header: END not found");
        return std::nullopt;
    }

    const auto body = text.substr(kSessionMagic.size() + 1, end - kSessionMagic.size());
    ParsedHeader out;
    try {
        auto cfg = KeyValueConfig::parse(body, "session header");
        auto& h = out.header;
        h.geometry = geometry_from_config(cfg);
        h.model = model_from_config(cfg);
        h.mode = sim::parse_mode(cfg.get_string("mode", "virtual_ground"));
        h.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
        h.start_time_ms = static_cast<std::uint64_t>(cfg.get_int("start_time_ms", 0));
        h.calibration = calibration_from_config(cfg, h.geometry);
        h.config = std::move(cfg);
    } catch (const SessionError&) {
        throw;
    } catch (const std::exception& e) {
        throw SessionError(std::string("session header: ") + e.what());
    }
    out.frames_offset = end + kEndMarker.size();
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> out{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (in.bad()) throw IoError("read failed: " + path.string());
    return out;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

SessionContents parse_session(std::span<const std::uint8_t> bytes) {
    auto parsed = parse_header(bytes);
    if (!parsed) throw SessionError("not a session file (missing or truncated header)");
    SessionContents out;
    out.header = std::move(parsed->header);
    auto decoded = wire::decode_stream(bytes.subspan(parsed->frames_offset));
    out.frames = std::move(decoded.frames);
    out.diagnostics = std::move(decoded.diagnostics);
    return out;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> simulate_session(const SimulationRequest& req) {
    req.scene.validate();
    req.model.validate();
    const auto& g = req.scene.geometry;
    if (!(req.duration_s >= 0.0)) throw InvalidInput("simulate: duration must be >= 0");

    std::mt19937_64 rng(req.seed);
    const sim::ScanNoise noise{req.noise_lsb, &rng};

    SessionHeader header;
    header.geometry = g;
    header.model = req.model;
    header.mode = req.mode;
    header.seed = req.seed;
    header.start_time_ms = req.start_time_ms;
    header.config = req.config;
    header.config.set("noise_lsb", format_exact(req.noise_lsb));
    if (req.calibration_frames > 0) {
        const ForceMap idle(g);
        std::vector<RawFrame> frames;
        for (std::size_t k = 0; k < req.calibration_frames; ++k)
            frames.push_back(sim::scan_force_map(idle, req.model, req.mode, 0, 0, noise));
        header.calibration = dsp::calibrate(frames);
    }

    const auto text = format_header(header);
    std::vector<std::uint8_t> out(text.begin(), text.end());
    const auto count = static_cast<std::uint64_t>(std::llround(req.duration_s * g.frame_rate));
    for (std::uint64_t k = 0; k < count; ++k) {
        const auto t_ms = static_cast<std::uint32_t>(std::llround(double(k) * 1000.0 / g.frame_rate));
        const auto frame =
            sim::scan_frame(req.scene, req.model, req.mode, static_cast<std::uint32_t>(k), t_ms, noise);
        wire::append_frame(out, frame, g);
    }
    return out;
}

// ---------------------------------------------------------------------------

AnalysisConfig analysis_config_from(const KeyValueConfig& cfg, AnalysisConfig base) {
    auto unsigned_key = [&](std::string_view key, long long fallback) {
        const auto v = cfg.get_int(key, fallback);
        if (v < 0) throw ConfigError("config key '" + std::string(key) + "' must be >= 0");
        return static_cast<unsigned long long>(v);
    };
    auto seconds_to_ms = [&](std::string_view key, std::uint64_t fallback) {
        const double s = cfg.get_double(key, double(fallback) / 1000.0);
        if (!(s >= 0.0)) throw ConfigError("config key '" + std::string(key) + "' must be >= 0");
        return static_cast<std::uint64_t>(std::llround(s * 1000.0));
    };
    base.reconstruct.median_window =
        static_cast<unsigned>(unsigned_key("median_window", base.reconstruct.median_window));
    base.reconstruct.upsample_factor =
        static_cast<unsigned>(unsigned_key("upsample", base.reconstruct.upsample_factor));
    base.reconstruct.zones.red_resistance =
        cfg.get_double("red_threshold_ohm", base.reconstruct.zones.red_resistance);
    base.reconstruct.zones.blue_fraction =
        cfg.get_double("blue_fraction", base.reconstruct.zones.blue_fraction);
    base.alarm.threshold_ms = seconds_to_ms("alarm_threshold_s", base.alarm.threshold_ms);
    base.alarm.relief_ms = seconds_to_ms("alarm_relief_s", base.alarm.relief_ms);
    base.alarm.region_rows = unsigned_key("alarm_region_rows", base.alarm.region_rows);
    base.alarm.region_cols = unsigned_key("alarm_region_cols", base.alarm.region_cols);
    base.alarm.red_quorum = cfg.get_double("alarm_quorum", base.alarm.red_quorum);
    base.respiration.band_lo_hz = cfg.get_double("resp_band_lo_hz", base.respiration.band_lo_hz);
    base.respiration.band_hi_hz = cfg.get_double("resp_band_hi_hz", base.respiration.band_hi_hz);
    base.respiration_window_s = cfg.get_double("resp_window_s", base.respiration_window_s);
    base.calibration_frames = unsigned_key("calibration_frames", base.calibration_frames);
    if (base.reconstruct.median_window > 1 && base.reconstruct.median_window % 2 == 0)
        throw ConfigError("median_window must be odd");
    if (base.alarm.region_rows == 0 || base.alarm.region_cols == 0)
        throw ConfigError("alarm region size must be >= 1");
    if (base.calibration_frames == 0) throw ConfigError("calibration_frames must be >= 1");
    return base;
}

analytics::PostureFeatures scene_features(const sim::Scene& scene, const VelostatModel& model,
                                          const dsp::ReconstructOptions& options) {
    const auto mode = sim::IsolationMode::virtual_ground;
    const auto idle = sim::scan_force_map(ForceMap(scene.geometry), model, mode, 0, 0);
    const auto cal = dsp::calibrate(std::span(&idle, 1));
    const auto frame = sim::scan_frame(scene, model, mode, 0, 0);
    return analytics::extract_features(dsp::reconstruct(frame, scene.geometry, cal, model, options));
}

analytics::PostureTemplates load_templates(const std::filesystem::path& dir,
                                           const dsp::ReconstructOptions& options,
                                           double reject_radius) {
    const auto conf = dir / "mat.conf";
    if (!std::filesystem::exists(conf))
        throw analytics::ConfigurationError("templates: missing " + conf.string());
    const auto cfg = KeyValueConfig::load(conf);
    const auto geometry = geometry_from_config(cfg);
    const auto model = model_from_config(cfg);

    analytics::PostureTemplates templates;
    templates.reject_radius = reject_radius;
    for (auto p : analytics::kTemplatePostures) {
        const auto path = dir / (std::string(analytics::posture_name(p)) + ".scene");
        if (!std::filesystem::exists(path))
            throw analytics::ConfigurationError("templates: missing " + path.string());
        const auto scene = sim::load_scene(path.string(), geometry);
        templates.add(p, analytics::feature_vector(scene_features(scene, model, options)));
    }
    templates.finalize();
    return templates;
}

// ---------------------------------------------------------------------------

SessionAnalyzer::SessionAnalyzer(SessionHeader header, AnalysisConfig config,
                                 const analytics::PostureTemplates* templates, Sink sink)
    : header_(std::move(header)),
      config_(config),
      templates_(templates),
      sink_(std::move(sink)),
      alarm_state_(config.alarm) {
    header_.geometry.validate();
    calibration_ = header_.calibration;
    window_capacity_ = static_cast<std::size_t>(
        std::max(1.0, std::round(config_.respiration_window_s * header_.geometry.frame_rate)));

    nlohmann::ordered_json j;
    j["type"] = "session";
    j["rows"] = header_.geometry.rows;
    j["cols"] = header_.geometry.cols;
    j["frame_rate"] = header_.geometry.frame_rate;
    j["mode"] = sim::mode_name(header_.mode);
    j["start_time_ms"] = header_.start_time_ms;
    emit(j.dump());
    if (calibration_) {
        nlohmann::ordered_json c;
        c["type"] = "calibration";
        c["source"] = "embedded";
        c["frames"] = calibration_->frames;
        emit(c.dump());
    }
}

void SessionAnalyzer::consume(const wire::StreamDecoder::Output& out) {
    std::size_t next = 0;
    for (const auto& d : out.diagnostics) {
        if (d.kind == wire::DiagnosticKind::ok) {
            if (next < out.frames.size()) on_frame(out.frames[next++]);
        } else {
            on_diagnostic(d);
        }
    }
}

void SessionAnalyzer::on_diagnostic(const wire::Diagnostic& d) {
    ++corrupt_;
    nlohmann::ordered_json j;
    j["type"] = "diagnostic";
    j["kind"] = wire::diagnostic_name(d.kind);
    j["offset"] = d.offset;
    j["bytes"] = d.bytes;
    emit(j.dump());
}

void SessionAnalyzer::on_frame(const wire::DecodedFrame& df) {
    const auto& g = header_.geometry;
    if (df.rows != g.rows || df.cols != g.cols) {
        ++corrupt_;
        nlohmann::ordered_json j;
        j["type"] = "diagnostic";
        j["kind"] = "geometry_mismatch";
        j["sequence"] = df.frame.sequence;
        emit(j.dump());
        return;
    }
    if (last_sequence_ && df.frame.sequence != *last_sequence_ + 1) {
        ++gaps_;
        nlohmann::ordered_json j;
        j["type"] = "gap";
        j["expected"] = *last_sequence_ + 1;
        j["got"] = df.frame.sequence;
        emit(j.dump());
    }
    last_sequence_ = df.frame.sequence;

    if (!calibration_) {
        idle_.push_back(df.frame);
        if (idle_.size() >= config_.calibration_frames) {
            calibration_ = dsp::calibrate(idle_);
            idle_.clear();
            nlohmann::ordered_json c;
            c["type"] = "calibration";
            c["source"] = "leading_frames";
            c["frames"] = calibration_->frames;
            emit(c.dump());
        }
        return;
    }
    analyze(df.frame);
}

void SessionAnalyzer::analyze(const RawFrame& frame) {
    const auto& g = header_.geometry;
    const auto img = dsp::reconstruct(frame, g, *calibration_, header_.model, config_.reconstruct);

    FrameResult r;
    r.sequence = frame.sequence;
    r.timestamp_ms = frame.timestamp_ms;
    r.features = analytics::extract_features(img);
    if (templates_ && !templates_->empty())
        r.posture = analytics::classify_posture(r.features, *templates_);
    else if (r.features.active_area == 0)
        r.posture = {analytics::Posture::empty, 1.0, 0.0};
    r.conductance = analytics::conductance_sum(frame, g, header_.model, &*calibration_);
    for (std::size_t k = 0; k < img.pressures.size(); ++k) {
        r.max_kpa = std::max(r.max_kpa, img.pressures.data()[k]);
        if (img.zone_labels.data()[k] == Zone::red) ++r.red_pixels;
    }
    r.alarms = analytics::alarm_step(img, frame.timestamp_ms, alarm_state_);
    ++frames_;

    if (window_.size() < window_capacity_) {
        window_.push_back(r.conductance);
    } else {
        window_[window_head_] = r.conductance;
        window_head_ = (window_head_ + 1) % window_capacity_;
    }

    nlohmann::ordered_json j;
    j["type"] = "frame";
    j["seq"] = r.sequence;
    j["t_ms"] = r.timestamp_ms;
    j["posture"] = analytics::posture_name(r.posture.label);
    j["confidence"] = r.posture.confidence;
    j["total_load_n"] = r.features.total_load;
    j["active_px"] = r.features.active_area;
    j["red_px"] = r.red_pixels;
    j["max_kpa"] = r.max_kpa;
    j["conductance_s"] = r.conductance;
    emit(j.dump());
    for (const auto& a : r.alarms) {
        emit(analytics::format_alarm(a));
        alarms_.push_back(a);
    }
    if (image_hook_) image_hook_(r, img);
    if (keep_results) results_.push_back(std::move(r));
}

bool SessionAnalyzer::finish() {
    if (finished_) return corrupt_ == 0;
    finished_ = true;

    nlohmann::ordered_json resp;
    std::vector<double> ordered(window_.begin() + static_cast<std::ptrdiff_t>(window_head_),
                                window_.end());
    ordered.insert(ordered.end(), window_.begin(),
                   window_.begin() + static_cast<std::ptrdiff_t>(window_head_));
    try {
        const auto rr = analytics::respiration_rate(ordered, header_.geometry.frame_rate,
                                                    config_.respiration);
        respiration_ = rr;
        resp["status"] = rr.has_signal ? "ok" : "no_signal";
        resp["rate_bpm"] = rr.rate_bpm;
        resp["confidence"] = rr.confidence;
    } catch (const analytics::InsufficientData&) {
        resp["status"] = "insufficient_data";
    } catch (const InvalidInput& e) {
        resp["status"] = "invalid";
        resp["reason"] = e.what();
    }
    resp["window_samples"] = ordered.size();

    nlohmann::ordered_json j;
    j["type"] = "summary";
    j["frames"] = frames_;
    j["calibrated"] = calibration_.has_value();
    j["alarms"] = alarms_.size();
    j["gaps"] = gaps_;
    j["corrupt_events"] = corrupt_;
    j["respiration"] = resp;
    emit(j.dump());
    return corrupt_ == 0;
}

}  // namespace smartmat::session
