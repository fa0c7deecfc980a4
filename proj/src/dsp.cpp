#include "smartmat/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "smartmat/simkit.hpp"

namespace smartmat::dsp {

Calibration calibrate(std::span<const RawFrame> idle_frames) {
    if (idle_frames.empty()) throw InvalidInput("calibrate: no idle frames");
    const auto rows = idle_frames.front().counts.rows();
    const auto cols = idle_frames.front().counts.cols();
    Calibration cal;
    cal.baseline = Grid<double>(rows, cols, 0.0);
    for (const auto& f : idle_frames) {
        if (!f.counts.same_shape(rows, cols))
            throw InvalidInput("calibrate: idle frames have mixed dimensions");
        for (std::size_t k = 0; k < f.counts.size(); ++k) cal.baseline.data()[k] += f.counts.data()[k];
    }
    for (auto& b : cal.baseline) b /= double(idle_frames.size());
    cal.frames = idle_frames.size();
    return cal;
}

Grid<double> dc_remove(const RawFrame& frame, const Calibration& cal) {
    if (!frame.counts.same_shape(cal.baseline))
        throw InvalidInput("dc_remove: frame and calibration dimensions differ");
    Grid<double> out(frame.counts.rows(), frame.counts.cols());
    for (std::size_t k = 0; k < out.size(); ++k)
        out.data()[k] = double(frame.counts.data()[k]) - cal.baseline.data()[k];
    return out;
}

template <typename T>
Grid<T> median_filter(const Grid<T>& grid, unsigned window) {
    if (window % 2 == 0) throw InvalidInput("median_filter: window must be odd");
    if (window < 3) throw InvalidInput("median_filter: window must be >= 3");
    if (window > std::min(grid.rows(), grid.cols()))
        throw InvalidInput("median_filter: window larger than the grid");

    const auto half = static_cast<std::ptrdiff_t>(window / 2);
    const auto rows = static_cast<std::ptrdiff_t>(grid.rows());
    const auto cols = static_cast<std::ptrdiff_t>(grid.cols());
    Grid<T> out(grid.rows(), grid.cols());
    std::vector<T> scratch(std::size_t(window) * window);

    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        for (std::ptrdiff_t j = 0; j < cols; ++j) {
            std::size_t k = 0;
            for (std::ptrdiff_t di = -half; di <= half; ++di) {
                const auto r = std::clamp<std::ptrdiff_t>(i + di, 0, rows - 1);
                for (std::ptrdiff_t dj = -half; dj <= half; ++dj) {
                    const auto c = std::clamp<std::ptrdiff_t>(j + dj, 0, cols - 1);
                    scratch[k++] = grid(std::size_t(r), std::size_t(c));
                }
            }
            auto mid = scratch.begin() + static_cast<std::ptrdiff_t>(scratch.size() / 2);
            std::nth_element(scratch.begin(), mid, scratch.end());
            out(std::size_t(i), std::size_t(j)) = *mid;
        }
    }
    return out;
}

template Grid<std::uint16_t> median_filter(const Grid<std::uint16_t>&, unsigned);
template Grid<double> median_filter(const Grid<double>&, unsigned);

Grid<double> bilinear_upsample(const Grid<double>& grid, unsigned factor) {
    if (factor < 2) throw InvalidInput("bilinear_upsample: factor must be >= 2");
    if (grid.rows() < 2 || grid.cols() < 2)
        throw InvalidInput("bilinear_upsample: grid needs at least 2 rows and 2 cols");

    const std::size_t out_rows = (grid.rows() - 1) * factor + 1;
    const std::size_t out_cols = (grid.cols() - 1) * factor + 1;
    Grid<double> out(out_rows, out_cols);
    for (std::size_t i = 0; i < out_rows; ++i) {
        const std::size_t r0 = std::min(i / factor, grid.rows() - 2);
        const double ty = double(i - r0 * factor) / factor;
        for (std::size_t j = 0; j < out_cols; ++j) {
            const std::size_t c0 = std::min(j / factor, grid.cols() - 2);
            const double tx = double(j - c0 * factor) / factor;
            if (i % factor == 0 && j % factor == 0) {
                out(i, j) = grid(i / factor, j / factor);
                continue;
            }
            const double top = (1 - tx) * grid(r0, c0) + tx * grid(r0, c0 + 1);
            const double bot = (1 - tx) * grid(r0 + 1, c0) + tx * grid(r0 + 1, c0 + 1);
            out(i, j) = (1 - ty) * top + ty * bot;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

double red_force(const VelostatModel& model, const ZoneThresholds& t) {
    return model.rho_k / t.red_resistance;
}

Zone zone_for_force(double cell_force_n, const VelostatModel& model, const ZoneThresholds& t) {
    // Relative slack so that a force computed from exactly the threshold
    // resistance does not flip zones on the last bit.
    constexpr double kTie = 1e-9;
    const double red = red_force(model, t);
    if (cell_force_n > red * (1.0 + kTie)) return Zone::red;
    if (cell_force_n < t.blue_fraction * red * (1.0 - kTie)) return Zone::blue;
    return Zone::green;
}

Grid<Zone> label_zones(const PressureImage& image, const VelostatModel& model,
                       const ZoneThresholds& t) {
    const double area = image.geometry.cell_area_m2();
    Grid<Zone> out(image.pressures.rows(), image.pressures.cols(), Zone::blue);
    for (std::size_t k = 0; k < out.size(); ++k)
        out.data()[k] = zone_for_force(image.pressures.data()[k] * 1000.0 * area, model, t);
    return out;
}

PressureImage counts_grid_to_pressure(const Grid<std::uint16_t>& counts,
                                      const MatGeometry& geometry, const VelostatModel& model,
                                      const Calibration* cal) {
    geometry.validate();
    model.validate();
    if (!counts.same_shape(geometry.rows, geometry.cols))
        throw InvalidInput("counts_to_pressure: frame does not match geometry");
    if (cal && !cal->baseline.same_shape(counts))
        throw InvalidInput("counts_to_pressure: calibration does not match geometry");

    const double top = geometry.adc_max();
    const double v_noload = sim::ideal_divider_voltage(model.r_max, geometry);
    const double area = geometry.cell_area_m2();

    PressureImage img;
    img.geometry = geometry;
    img.pressures = Grid<double>(geometry.rows, geometry.cols);
    img.saturated = Grid<std::uint8_t>(geometry.rows, geometry.cols, 0);
    for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts.data()[k] > top) throw InvalidInput("counts_to_pressure: count exceeds ADC range");
        double v = counts.data()[k] / top * geometry.v_in;
        if (cal) v += v_noload - cal->baseline.data()[k] / top * geometry.v_in;
        v = std::min(v, geometry.v_in);
        const auto reading = sim::voltage_to_force(v, geometry, model);
        img.pressures.data()[k] = reading.force / area / 1000.0;
        img.saturated.data()[k] = reading.saturated ? 1 : 0;
    }
    img.zone_labels = label_zones(img, model);
    return img;
}

PressureImage counts_to_pressure(const RawFrame& frame, const MatGeometry& geometry,
                                 const VelostatModel& model, const Calibration* cal) {
    return counts_grid_to_pressure(frame.counts, geometry, model, cal);
}

PressureImage reconstruct(const RawFrame& frame, const MatGeometry& geometry,
                          const Calibration& cal, const VelostatModel& model,
                          const ReconstructOptions& options) {
    validate_frame(frame, geometry);
    const bool filter = options.median_window > 1;
    const auto counts = filter ? median_filter(frame.counts, options.median_window) : frame.counts;

    PressureImage img = counts_grid_to_pressure(counts, geometry, model, &cal);
    if (options.upsample_factor > 1) {
        const unsigned f = options.upsample_factor;
        img.pressures = bilinear_upsample(img.pressures, f);
        Grid<std::uint8_t> sat(img.pressures.rows(), img.pressures.cols(), 0);
        for (std::size_t i = 0; i < sat.rows(); ++i)
            for (std::size_t j = 0; j < sat.cols(); ++j)
                sat(i, j) = img.saturated((i + f / 2) / f, (j + f / 2) / f);
        img.saturated = std::move(sat);
        img.upsample_factor = f;
    }
    img.zone_labels = label_zones(img, model, options.zones);
    return img;
}

// ---------------------------------------------------------------------------

std::string render_ppm(const PressureImage& image, const VelostatModel& model,
                       const ZoneThresholds& t) {
    const auto& p = image.pressures;
    const double area = image.geometry.cell_area_m2();
    const double red = red_force(model, t);
    const double blue = t.blue_fraction * red;
    const double top = model.max_force();

    std::string out = "P6\n" + std::to_string(p.cols()) + " " + std::to_string(p.rows()) + "\n255\n";
    out.reserve(out.size() + p.size() * 3);
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double f = p.data()[k] * 1000.0 * area;
        const Zone z = image.zone_labels.data()[k];
        double lo = 0, hi = blue;
        unsigned char rgb[3] = {0, 0, 0};
        int channel = 2;
        if (z == Zone::green) lo = blue, hi = red, channel = 1;
        if (z == Zone::red) lo = red, hi = top, channel = 0;
        const double frac = hi > lo ? std::clamp((f - lo) / (hi - lo), 0.0, 1.0) : 1.0;
        const double level = 0.35 + 0.65 * frac;
        rgb[channel] = static_cast<unsigned char>(std::lround(255.0 * level));
        out.append(reinterpret_cast<const char*>(rgb), 3);
    }
    return out;
}

std::string pressure_csv(const PressureImage& image) {
    std::ostringstream out;
    out.precision(10);
    const auto& p = image.pressures;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        for (std::size_t j = 0; j < p.cols(); ++j) {
            if (j) out << ',';
            out << p(i, j);
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace smartmat::dsp
