// Inference over reconstructed frames: posture, respiration and
// sustained-pressure alarms.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "smartmat/core.hpp"
#include "smartmat/dsp.hpp"

namespace smartmat::analytics {

// ---------------------------------------------------------------------------
// Posture

/// Computed over the non-blue pixels, weighted by pressure. Coordinates are in
/// original cell units.
struct PostureFeatures {
    double total_load = 0.0;      // newtons
    std::size_t active_area = 0;  // pixels
    double centroid_row = 0.0;
    double centroid_col = 0.0;
    double bbox_aspect = 0.0;     // bbox height / width
    double axis_ratio = 1.0;      // principal-axis variance ratio, >= 1
    double left_right_symmetry = 0.0;  // [0, 1]
    // Bounding box of the active pixels, cell units.
    double bbox_top = 0.0, bbox_bottom = 0.0, bbox_left = 0.0, bbox_right = 0.0;
};

PostureFeatures extract_features(const PressureImage& image);

enum class Posture { supine = 0, prone = 1, side = 2, sitting = 3, empty = 4, unknown = 5 };

inline constexpr std::array<Posture, 4> kTemplatePostures = {Posture::supine, Posture::prone,
                                                             Posture::side, Posture::sitting};

std::string_view posture_name(Posture p) noexcept;
Posture parse_posture(std::string_view name);

struct PostureClass {
    Posture label = Posture::unknown;
    double confidence = 0.0;  // [0, 1]
    double distance = 0.0;    // z-space distance to the chosen centroid
};

/// Scale-free vector used for matching: fill of the bounding box, centroid
/// position inside the box (row, col), log aspect, log axis ratio, symmetry.
inline constexpr std::size_t kFeatureDims = 6;
using FeatureVector = std::array<double, kFeatureDims>;
FeatureVector feature_vector(const PostureFeatures& f);

class ConfigurationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Nearest-centroid templates in z-normalized feature space.
class PostureTemplates {
public:
    PostureTemplates() = default;

    void add(Posture label, const FeatureVector& centroid);
    /// Sets the per-dimension z divisor from the spread of the centroids.
    void finalize();

    bool empty() const noexcept { return entries_.empty(); }
    double reject_radius = 3.0;

    struct Entry {
        Posture label;
        FeatureVector centroid;
    };
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    const FeatureVector& scale() const noexcept { return scale_; }
    double distance(const FeatureVector& a, const FeatureVector& b) const;

private:
    std::vector<Entry> entries_;
    FeatureVector scale_{};
};

/// `empty` when nothing is active (confidence 1). Otherwise the nearest
/// centroid, ties resolved toward the lower class index; beyond the rejection
/// radius the result is `unknown`. confidence = 1 - distance / reject_radius.
/// Throws ConfigurationError when no templates are loaded.
PostureClass classify_posture(const PostureFeatures& features, const PostureTemplates& templates);

// ---------------------------------------------------------------------------
// Respiration

/// Sum over cells of 1 / R_cell, siemens, with R_cell read back through the
/// divider and clamped to the model range. A calibration re-references each
/// cell like counts_to_pressure does.
double conductance_sum(const RawFrame& frame, const MatGeometry& geometry,
                       const VelostatModel& model, const dsp::Calibration* cal = nullptr);

class InsufficientData : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RespirationOptions {
    double band_lo_hz = 0.1;
    double band_hi_hz = 0.7;
    double min_duration_s = 30.0;
};

struct RespirationResult {
    bool has_signal = false;
    double rate_bpm = 0.0;
    double peak_hz = 0.0;
    double confidence = 0.0;  // peak magnitude / total in-band magnitude
};

/// Linear detrend, Hann window, DFT over the band, parabolic refinement of the
/// peak bin. Throws InsufficientData when the series is shorter than
/// min_duration_s, InvalidInput when rate < 4 * band_hi_hz.
RespirationResult respiration_rate(std::span<const double> samples, double rate_hz,
                                   const RespirationOptions& options = {});

// ---------------------------------------------------------------------------
// Alarms

struct AlarmConfig {
    std::uint64_t threshold_ms = 2ull * 60 * 60 * 1000;
    std::uint64_t relief_ms = 10'000;
    std::size_t region_rows = 4;  // cells
    std::size_t region_cols = 4;
    double red_quorum = 0.25;
};

struct AlarmEvent {
    std::size_t region_id = 0;  // tile_row * tiles_across + tile_col
    std::uint64_t onset_ms = 0;
    std::uint64_t dwell_ms = 0;
    std::uint64_t fired_at_ms = 0;
    friend bool operator==(const AlarmEvent&, const AlarmEvent&) = default;
};

/// JSON line: {"type":"alarm","region":..,"onset_ms":..,"dwell_ms":..,"fired_at_ms":..}
std::string format_alarm(const AlarmEvent& event);

struct RegionState {
    bool loaded = false;
    bool in_episode = false;  // dwell timer running
    bool fired = false;       // alarm active, waiting for relief
    std::uint64_t onset_ms = 0;
    std::uint64_t unloaded_since_ms = 0;
};

/// Streaming dwell tracker. Dwell runs from the first loaded frame of an
/// episode; short unloaded gaps do not stop it. An episode (and its alarm)
/// ends only after the region has stayed unloaded for relief_ms.
class AlarmState {
public:
    AlarmState() = default;
    explicit AlarmState(AlarmConfig config) : config_(config) {}

    const AlarmConfig& config() const noexcept { return config_; }
    const std::vector<RegionState>& regions() const noexcept { return regions_; }
    std::size_t active_alarms() const noexcept;

    friend std::vector<AlarmEvent> alarm_step(const PressureImage&, std::uint64_t, AlarmState&);

private:
    AlarmConfig config_{};
    std::vector<RegionState> regions_;
    std::size_t tiles_down_ = 0, tiles_across_ = 0;
    std::optional<std::uint64_t> last_ms_;
};

/// Advances the tracker by one image. Throws InvalidInput on time regression.
std::vector<AlarmEvent> alarm_step(const PressureImage& image, std::uint64_t timestamp_ms,
                                   AlarmState& state);

/// Red-quorum test per region; region ids in row-major tile order.
std::vector<bool> loaded_regions(const PressureImage& image, const AlarmConfig& config);

}  // namespace smartmat::analytics
