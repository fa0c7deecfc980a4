// Session persistence, simulation driver and the per-frame analysis engine
// shared by the `analyze` and `live` commands.
//
// Session file layout:
//
//   SMARTMAT-SESSION 1\n
//   key=value\n ...          geometry, model, mode, seed, calibration, config
//   END\n
//   <wire frames back to back>
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smartmat/analytics.hpp"
#include "smartmat/config.hpp"
#include "smartmat/core.hpp"
#include "smartmat/dsp.hpp"
#include "smartmat/simkit.hpp"
#include "smartmat/wire.hpp"

namespace smartmat::session {

inline constexpr std::string_view kSessionMagic = "SMARTMAT-SESSION 1";

class SessionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SessionHeader {
    MatGeometry geometry;
    VelostatModel model;
    sim::IsolationMode mode = sim::IsolationMode::virtual_ground;
    std::uint64_t seed = 0;
    std::uint64_t start_time_ms = 0;
    std::optional<dsp::Calibration> calibration;
    KeyValueConfig config;  // snapshot of the run configuration
};

std::string format_header(const SessionHeader& header);

/// Stores a calibration as `calibration_frames_embedded` and `baseline` keys
/// (row-major, comma separated).
void write_calibration(KeyValueConfig& cfg, const dsp::Calibration& cal);
/// nullopt when `cfg` has no baseline. Throws SessionError when it does not
/// match `geometry`.
std::optional<dsp::Calibration> calibration_from_config(const KeyValueConfig& cfg,
                                                        const MatGeometry& geometry);

struct ParsedHeader {
    SessionHeader header;
    std::size_t frames_offset = 0;
};

/// nullopt when `bytes` does not start with the session magic or the header
/// is not complete yet. Throws SessionError for a malformed header.
std::optional<ParsedHeader> parse_header(std::span<const std::uint8_t> bytes);

/// True when `bytes` could still grow into a session header.
bool maybe_session_prefix(std::span<const std::uint8_t> bytes);

struct SessionContents {
    SessionHeader header;
    std::vector<wire::DecodedFrame> frames;
    std::vector<wire::Diagnostic> diagnostics;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

SessionContents parse_session(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Simulation

struct SimulationRequest {
    sim::Scene scene;
    VelostatModel model;
    sim::IsolationMode mode = sim::IsolationMode::virtual_ground;
    double duration_s = 1.0;
    std::uint64_t seed = 0;
    double noise_lsb = 0.0;
    std::size_t calibration_frames = 10;  // idle scans embedded in the header; 0 = none
    std::uint64_t start_time_ms = 0;
    KeyValueConfig config;
};

/// Header plus round(duration * frame_rate) frames. Deterministic in the
/// request (the seed drives all noise).
std::vector<std::uint8_t> simulate_session(const SimulationRequest& request);

// ---------------------------------------------------------------------------
// Analysis

struct AnalysisConfig {
    dsp::ReconstructOptions reconstruct{};
    analytics::AlarmConfig alarm{};
    analytics::RespirationOptions respiration{};
    double respiration_window_s = 60.0;
    std::size_t calibration_frames = 10;  // used when the header has no calibration
};

/// Reads analysis settings from config keys (see README); unspecified keys
/// keep `base` values.
AnalysisConfig analysis_config_from(const KeyValueConfig& cfg, AnalysisConfig base = {});

/// Builds nearest-centroid templates from the scene files in `dir`
/// (`mat.conf` plus `<posture>.scene` for supine, prone, side and sitting).
/// Each scene is scanned with virtual-ground isolation and reconstructed with
/// `options`.
analytics::PostureTemplates load_templates(const std::filesystem::path& dir,
                                           const dsp::ReconstructOptions& options,
                                           double reject_radius = 3.0);

/// Features of one template scene, as used by load_templates.
analytics::PostureFeatures scene_features(const sim::Scene& scene, const VelostatModel& model,
                                          const dsp::ReconstructOptions& options);

struct FrameResult {
    std::uint32_t sequence = 0;
    std::uint32_t timestamp_ms = 0;
    analytics::PostureClass posture;
    analytics::PostureFeatures features;
    double conductance = 0.0;
    double max_kpa = 0.0;
    std::size_t red_pixels = 0;
    std::vector<analytics::AlarmEvent> alarms;
};

/// Consumes decoded wire output in stream order and emits report records
/// (one JSON object per line). Identical input gives identical output however
/// the bytes were chunked.
class SessionAnalyzer {
public:
    using Sink = std::function<void(const std::string& line)>;
    /// Called for every analyzed frame with its reconstructed image.
    using ImageHook = std::function<void(const FrameResult&, const PressureImage&)>;

    SessionAnalyzer(SessionHeader header, AnalysisConfig config,
                    const analytics::PostureTemplates* templates, Sink sink);

    void set_image_hook(ImageHook hook) { image_hook_ = std::move(hook); }

    /// Walks `out.diagnostics` in order, pairing each `ok` entry with the next
    /// frame.
    void consume(const wire::StreamDecoder::Output& out);
    void on_frame(const wire::DecodedFrame& frame);
    void on_diagnostic(const wire::Diagnostic& d);
    /// Emits the summary record. Returns true when the input was clean.
    bool finish();

    const std::vector<FrameResult>& results() const noexcept { return results_; }
    const std::vector<analytics::AlarmEvent>& alarms() const noexcept { return alarms_; }
    std::optional<analytics::RespirationResult> respiration() const { return respiration_; }
    std::size_t corrupt_events() const noexcept { return corrupt_; }
    bool keep_results = true;

private:
    void emit(const std::string& line) { sink_(line); }
    void analyze(const RawFrame& frame);

    SessionHeader header_;
    AnalysisConfig config_;
    const analytics::PostureTemplates* templates_;
    Sink sink_;
    ImageHook image_hook_;

    std::optional<dsp::Calibration> calibration_;
    std::vector<RawFrame> idle_;
    analytics::AlarmState alarm_state_;
    std::vector<double> window_;  // ring buffer of conductance sums
    std::size_t window_capacity_ = 0;
    std::size_t window_head_ = 0;
    std::optional<std::uint32_t> last_sequence_;

    std::vector<FrameResult> results_;
    std::vector<analytics::AlarmEvent> alarms_;
    std::optional<analytics::RespirationResult> respiration_;
    std::size_t frames_ = 0;
    std::size_t corrupt_ = 0;
    std::size_t gaps_ = 0;
    bool finished_ = false;
};

}  // namespace smartmat::session
