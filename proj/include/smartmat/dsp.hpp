// Pressure-image reconstruction: calibration, median filtering, count to
// pressure conversion, bilinear upsampling and zone labeling.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "smartmat/core.hpp"

namespace smartmat::dsp {

/// Per-cell no-load baseline in counts.
struct Calibration {
    Grid<double> baseline;
    std::size_t frames = 0;
};

/// Per-cell arithmetic mean of `idle_frames`. Throws InvalidInput for an empty
/// list or mixed dimensions.
Calibration calibrate(std::span<const RawFrame> idle_frames);

/// counts - baseline, per cell.
Grid<double> dc_remove(const RawFrame& frame, const Calibration& cal);

/// Median over a window x window neighbourhood with edge replication. Output
/// values are always drawn from the input. Throws InvalidInput for an even
/// window, a window below 3, or a window larger than the grid.
template <typename T>
Grid<T> median_filter(const Grid<T>& grid, unsigned window);

extern template Grid<std::uint16_t> median_filter(const Grid<std::uint16_t>&, unsigned);
extern template Grid<double> median_filter(const Grid<double>&, unsigned);

/// Output is ((rows-1)*factor+1) x ((cols-1)*factor+1); input samples land on
/// every `factor`-th output sample. Throws InvalidInput when factor < 2 or the
/// grid has fewer than 2 rows or columns.
Grid<double> bilinear_upsample(const Grid<double>& grid, unsigned factor);

struct ZoneThresholds {
    double red_resistance = 1000.0;  // ohms; red strictly below
    double blue_fraction = 0.05;     // of the red threshold force; blue strictly below
};

/// Force per cell above which a cell is red.
double red_force(const VelostatModel& model, const ZoneThresholds& t = {});

/// Zone of one cell from its cell-equivalent force.
Zone zone_for_force(double cell_force_n, const VelostatModel& model, const ZoneThresholds& t = {});

/// Labels every pixel; pressures are converted back to cell-equivalent force
/// with the original cell area.
Grid<Zone> label_zones(const PressureImage& image, const VelostatModel& model,
                       const ZoneThresholds& t = {});

/// Converts counts to pressure (kPa). With a calibration, each cell's voltage
/// is re-referenced so its baseline maps to the ideal no-load voltage before
/// inversion. Saturated cells are flagged and reported at the model ceiling.
/// Zone labels are computed with default thresholds.
PressureImage counts_to_pressure(const RawFrame& frame, const MatGeometry& geometry,
                                 const VelostatModel& model, const Calibration* cal = nullptr);

/// Same conversion on an arbitrary counts grid (e.g. a median-filtered one).
PressureImage counts_grid_to_pressure(const Grid<std::uint16_t>& counts,
                                      const MatGeometry& geometry, const VelostatModel& model,
                                      const Calibration* cal = nullptr);

struct ReconstructOptions {
    unsigned median_window = 3;    // 0 or 1 disables the stage
    unsigned upsample_factor = 1;  // 1 disables the stage
    ZoneThresholds zones{};
};

/// median filter (counts) -> calibrated conversion -> bilinear upsample ->
/// zone labeling.
PressureImage reconstruct(const RawFrame& frame, const MatGeometry& geometry,
                          const Calibration& cal, const VelostatModel& model,
                          const ReconstructOptions& options = {});

// ---------------------------------------------------------------------------
// Rendering

/// Binary PPM (P6). Each zone has its own hue; brightness follows pressure
/// within the zone's band.
std::string render_ppm(const PressureImage& image, const VelostatModel& model,
                       const ZoneThresholds& t = {});

/// Pressure grid as CSV (kPa), one image row per line.
std::string pressure_csv(const PressureImage& image);

}  // namespace smartmat::dsp
