#include "smartmat/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

#include "json.hpp"

#include "smartmat/simkit.hpp"

namespace smartmat::analytics {

// ---------------------------------------------------------------------------
// Posture

PostureFeatures extract_features(const PressureImage& image) {
    PostureFeatures f;
    const auto& p = image.pressures;
    const double scale = image.upsample_factor;
    const double pixel_area = image.pixel_area_m2();

    double wsum = 0.0, sr = 0.0, sc = 0.0;
    std::size_t rmin = p.rows(), rmax = 0, cmin = p.cols(), cmax = 0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        for (std::size_t j = 0; j < p.cols(); ++j) {
            if (image.zone_labels(i, j) == Zone::blue) continue;
            const double w = p(i, j);
            ++f.active_area;
            f.total_load += w * 1000.0 * pixel_area;
            wsum += w;
            sr += w * (i / scale);
            sc += w * (j / scale);
            rmin = std::min(rmin, i), rmax = std::max(rmax, i);
            cmin = std::min(cmin, j), cmax = std::max(cmax, j);
        }
    }
    if (f.active_area == 0 || wsum <= 0.0) return PostureFeatures{};

    f.centroid_row = sr / wsum;
    f.centroid_col = sc / wsum;
    f.bbox_top = rmin / scale, f.bbox_bottom = rmax / scale;
    f.bbox_left = cmin / scale, f.bbox_right = cmax / scale;
    f.bbox_aspect = (f.bbox_bottom - f.bbox_top + 1.0) / (f.bbox_right - f.bbox_left + 1.0);

    // Each cell is a unit square, hence the 1/12 on the diagonal.
    double vrr = 1.0 / 12, vcc = 1.0 / 12, vrc = 0.0, mirrored = 0.0;
    for (std::size_t i = rmin; i <= rmax; ++i) {
        for (std::size_t j = cmin; j <= cmax; ++j) {
            if (image.zone_labels(i, j) == Zone::blue) continue;
            const double w = p(i, j) / wsum;
            const double dr = i / scale - f.centroid_row;
            const double dc = j / scale - f.centroid_col;
            vrr += w * dr * dr;
            vcc += w * dc * dc;
            vrc += w * dr * dc;
            const std::size_t mj = cmin + cmax - j;
            if (image.zone_labels(i, mj) != Zone::blue) mirrored += std::min(p(i, j), p(i, mj));
        }
    }
    const double mean = (vrr + vcc) / 2;
    const double spread = std::sqrt(std::max(0.0, (vrr - vcc) * (vrr - vcc) / 4 + vrc * vrc));
    f.axis_ratio = (mean + spread) / (mean - spread);
    f.left_right_symmetry = std::clamp(mirrored / wsum, 0.0, 1.0);
    return f;
}

std::string_view posture_name(Posture p) noexcept {
    switch (p) {
        case Posture::supine: return "supine";
        case Posture::prone: return "prone";
        case Posture::side: return "side";
        case Posture::sitting: return "sitting";
        case Posture::empty: return "empty";
        case Posture::unknown: return "unknown";
    }
    return "?";
}

Posture parse_posture(std::string_view name) {
    for (auto p : {Posture::supine, Posture::prone, Posture::side, Posture::sitting,
                   Posture::empty, Posture::unknown})
        if (posture_name(p) == name) return p;
    throw InvalidInput("unknown posture: " + std::string(name));
}

FeatureVector feature_vector(const PostureFeatures& f) {
    const double h = f.bbox_bottom - f.bbox_top;
    const double w = f.bbox_right - f.bbox_left;
    const double box_pixels = (h + 1.0) * (w + 1.0);
    const double fill = box_pixels > 0 ? std::min(1.0, f.active_area / box_pixels) : 0.0;
    return {
        fill,
        h > 0 ? (f.centroid_row - f.bbox_top) / h : 0.5,
        w > 0 ? (f.centroid_col - f.bbox_left) / w : 0.5,
        f.bbox_aspect > 0 ? std::log(f.bbox_aspect) : 0.0,
        std::log(std::max(1.0, f.axis_ratio)),
        f.left_right_symmetry,
    };
}

void PostureTemplates::add(Posture label, const FeatureVector& centroid) {
    if (label == Posture::empty || label == Posture::unknown)
        throw ConfigurationError("templates: only concrete postures can be templates");
    entries_.push_back({label, centroid});
    std::stable_sort(entries_.begin(), entries_.end(),
                     [](const Entry& a, const Entry& b) { return a.label < b.label; });
}

void PostureTemplates::finalize() {
    constexpr double kScaleFloor = 0.05;
    for (std::size_t d = 0; d < kFeatureDims; ++d) {
        double mean = 0.0;
        for (const auto& e : entries_) mean += e.centroid[d];
        mean /= std::max<std::size_t>(1, entries_.size());
        double var = 0.0;
        for (const auto& e : entries_) var += (e.centroid[d] - mean) * (e.centroid[d] - mean);
        var /= std::max<std::size_t>(1, entries_.size());
        scale_[d] = std::max(kScaleFloor, std::sqrt(var));
    }
}

double PostureTemplates::distance(const FeatureVector& a, const FeatureVector& b) const {
    double s = 0.0;
    for (std::size_t d = 0; d < kFeatureDims; ++d) {
        const double z = (a[d] - b[d]) / scale_[d];
        s += z * z;
    }
    return std::sqrt(s);
}

PostureClass classify_posture(const PostureFeatures& features, const PostureTemplates& templates) {
    if (templates.empty()) throw ConfigurationError("classify_posture: no templates loaded");
    if (features.active_area == 0) return {Posture::empty, 1.0, 0.0};

    const auto v = feature_vector(features);
    PostureClass best{Posture::unknown, 0.0, std::numeric_limits<double>::infinity()};
    for (const auto& e : templates.entries()) {
        const double d = templates.distance(v, e.centroid);
        // Entries are sorted by class index, so strict '<' keeps the lower
        // index on ties.
        if (d < best.distance) best = {e.label, 0.0, d};
    }
    if (best.distance > templates.reject_radius) return {Posture::unknown, 0.0, best.distance};
    best.confidence = std::clamp(1.0 - best.distance / templates.reject_radius, 0.0, 1.0);
    return best;
}

// ---------------------------------------------------------------------------
// Respiration

double conductance_sum(const RawFrame& frame, const MatGeometry& geometry,
                       const VelostatModel& model, const dsp::Calibration* cal) {
    validate_frame(frame, geometry);
    if (cal && !cal->baseline.same_shape(frame.counts))
        throw InvalidInput("conductance_sum: calibration does not match geometry");
    const double top = geometry.adc_max();
    const double v_noload = sim::ideal_divider_voltage(model.r_max, geometry);
    double total = 0.0;
    for (std::size_t k = 0; k < frame.counts.size(); ++k) {
        double v = frame.counts.data()[k] / top * geometry.v_in;
        if (cal) v += v_noload - cal->baseline.data()[k] / top * geometry.v_in;
        v = std::clamp(v, 0.0, geometry.v_in);
        const double r = std::clamp(sim::divider_resistance(v, geometry), model.r_min, model.r_max);
        total += 1.0 / r;
    }
    return total;
}

RespirationResult respiration_rate(std::span<const double> samples, double rate_hz,
                                   const RespirationOptions& options) {
    if (!(rate_hz > 0.0)) throw InvalidInput("respiration_rate: sample rate must be > 0");
    if (!(options.band_lo_hz > 0.0 && options.band_hi_hz > options.band_lo_hz))
        throw InvalidInput("respiration_rate: invalid band");
    if (rate_hz < 4.0 * options.band_hi_hz)
        throw InvalidInput("respiration_rate: sample rate must be >= 4x the band upper edge");
    const std::size_t n = samples.size();
    if (n < 3 || double(n) / rate_hz < options.min_duration_s)
        throw InsufficientData("respiration_rate: need at least " +
                               std::to_string(options.min_duration_s) + " s of samples");

    // Least-squares line through (k, x_k).
    const double nd = double(n);
    const double kmean = (nd - 1) / 2;
    double xmean = 0.0, energy = 0.0;
    for (double x : samples) xmean += x, energy += x * x;
    xmean /= nd;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        sxy += (k - kmean) * (samples[k] - xmean);
        sxx += (k - kmean) * (k - kmean);
    }
    const double slope = sxy / sxx;

    std::vector<double> x(n);
    double residual_energy = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double d = samples[k] - xmean - slope * (k - kmean);
        residual_energy += d * d;
        x[k] = d * 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * k / (nd - 1)));
    }
    if (residual_energy <= 1e-24 * energy || residual_energy == 0.0) return {};

    auto magnitude = [&](long bin) {
        std::complex<double> acc{0.0, 0.0};
        const double w = -2.0 * std::numbers::pi * double(bin) / nd;
        for (std::size_t k = 0; k < n; ++k) acc += x[k] * std::polar(1.0, w * double(k));
        return std::abs(acc);
    };

    const double df = rate_hz / nd;
    const long lo = static_cast<long>(std::ceil(options.band_lo_hz / df - 1e-9));
    const long hi = static_cast<long>(std::floor(options.band_hi_hz / df + 1e-9));
    if (hi < lo) throw InsufficientData("respiration_rate: band holds no frequency bin");

    std::vector<double> mags;
    mags.reserve(std::size_t(hi - lo + 1));
    double in_band = 0.0;
    long peak = lo;
    double peak_mag = -1.0;
    for (long b = lo; b <= hi; ++b) {
        const double m = magnitude(b);
        mags.push_back(m);
        in_band += m;
        if (m > peak_mag) peak_mag = m, peak = b;
    }
    if (!(in_band > 0.0)) return {};

    auto mag_at = [&](long b) { return (b >= lo && b <= hi) ? mags[std::size_t(b - lo)] : magnitude(b); };
    double offset = 0.0;
    if (peak > 0) {
        const double a = mag_at(peak - 1), b = peak_mag, c = mag_at(peak + 1);
        const double denom = a - 2 * b + c;
        if (denom < 0.0) offset = std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
    }

    RespirationResult r;
    r.has_signal = true;
    r.peak_hz = (double(peak) + offset) * df;
    r.rate_bpm = r.peak_hz * 60.0;
    r.confidence = peak_mag / in_band;
    return r;
}

// ---------------------------------------------------------------------------
// Alarms

std::string format_alarm(const AlarmEvent& e) {
    nlohmann::ordered_json j;
    j["type"] = "alarm";
    j["region"] = e.region_id;
    j["onset_ms"] = e.onset_ms;
    j["dwell_ms"] = e.dwell_ms;
    j["fired_at_ms"] = e.fired_at_ms;
    return j.dump();
}

std::size_t AlarmState::active_alarms() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(regions_.begin(), regions_.end(), [](const RegionState& r) { return r.fired; }));
}

namespace {

struct Tiling {
    std::size_t down = 0, across = 0;
};

Tiling tiling_for(const MatGeometry& g, const AlarmConfig& c) {
    if (c.region_rows == 0 || c.region_cols == 0)
        throw InvalidInput("alarm: region size must be >= 1 cell");
    return {(g.rows + c.region_rows - 1) / c.region_rows,
            (g.cols + c.region_cols - 1) / c.region_cols};
}

}  // namespace

std::vector<bool> loaded_regions(const PressureImage& image, const AlarmConfig& config) {
    const auto t = tiling_for(image.geometry, config);
    const double f = image.upsample_factor;
    std::vector<std::size_t> red(t.down * t.across, 0), total(t.down * t.across, 0);
    const auto& z = image.zone_labels;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto cell_r = std::min(image.geometry.rows - 1, std::size_t(std::lround(i / f)));
        for (std::size_t j = 0; j < z.cols(); ++j) {
            const auto cell_c = std::min(image.geometry.cols - 1, std::size_t(std::lround(j / f)));
            const auto id = (cell_r / config.region_rows) * t.across + cell_c / config.region_cols;
            ++total[id];
            if (z(i, j) == Zone::red) ++red[id];
        }
    }
    std::vector<bool> out(red.size());
    for (std::size_t k = 0; k < out.size(); ++k)
        out[k] = total[k] > 0 && double(red[k]) >= config.red_quorum * double(total[k]);
    return out;
}

std::vector<AlarmEvent> alarm_step(const PressureImage& image, std::uint64_t timestamp_ms,
                                   AlarmState& state) {
    if (state.last_ms_ && timestamp_ms < *state.last_ms_)
        throw InvalidInput("alarm_step: timestamp went backwards");
    const auto t = tiling_for(image.geometry, state.config_);
    if (state.regions_.empty()) {
        state.tiles_down_ = t.down;
        state.tiles_across_ = t.across;
        state.regions_.assign(t.down * t.across, RegionState{});
    } else if (t.down != state.tiles_down_ || t.across != state.tiles_across_) {
        throw InvalidInput("alarm_step: image geometry changed mid-stream");
    }
    state.last_ms_ = timestamp_ms;

    const auto loaded = loaded_regions(image, state.config_);
    std::vector<AlarmEvent> events;
    for (std::size_t id = 0; id < loaded.size(); ++id) {
        auto& r = state.regions_[id];
        if (loaded[id]) {
            // Relief covers the whole unloaded stretch, up to this reload.
            if (r.in_episode && !r.loaded && timestamp_ms - r.unloaded_since_ms >= state.config_.relief_ms) {
                r.in_episode = false;
                r.fired = false;
            }
            if (!r.in_episode) {
                r.in_episode = true;
                r.onset_ms = timestamp_ms;
            }
            r.loaded = true;
            const auto dwell = timestamp_ms - r.onset_ms;
            if (!r.fired && dwell >= state.config_.threshold_ms) {
                r.fired = true;
                events.push_back({id, r.onset_ms, dwell, timestamp_ms});
            }
        } else {
            if (r.loaded) r.unloaded_since_ms = timestamp_ms;
            r.loaded = false;
            if (r.in_episode && timestamp_ms - r.unloaded_since_ms >= state.config_.relief_ms) {
                r.in_episode = false;
                r.fired = false;
            }
        }
    }
    return events;
}

}  // namespace smartmat::analytics
