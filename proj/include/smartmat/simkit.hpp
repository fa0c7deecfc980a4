// Electrical simulation of the mat.
//
// Readout model: one row electrode is driven to v_in and one column electrode
// (selected by the column multiplexer) is tied to ground through r_fixed. All
// other electrodes are left floating, tied to ground, or isolated, depending on
// the IsolationMode. The ADC digitizes v_out = v_in - V(sense column), which
// for an isolated cell is exactly ideal_divider_voltage(R_cell).
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "smartmat/core.hpp"

namespace smartmat::sim {

enum class IsolationMode { floating, grounded_rows, diode, virtual_ground };

std::string_view mode_name(IsolationMode mode) noexcept;
IsolationMode parse_mode(std::string_view name);

class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Scenes

enum class Shape { ellipse, rectangle };

/// A press on the mat. `row`/`col` are the center in cell coordinates (cell
/// (i, j) has its center at (i, j)); `height`/`width` are full extents in
/// cells. Rectangles cover cells with center in [row - h/2, row + h/2), the
/// ellipse covers cells inside the inscribed ellipse. The load is present for
/// from_s <= t < until_s and optionally breathes as
/// force * (1 + breath_depth * sin(2 pi breath_hz t)).
struct Load {
    Shape shape = Shape::rectangle;
    double row = 0.0;
    double col = 0.0;
    double height = 1.0;
    double width = 1.0;
    double force = 0.0;  // newtons, total over the covered cells
    double from_s = 0.0;
    double until_s = std::numeric_limits<double>::infinity();
    double breath_hz = 0.0;
    double breath_depth = 0.0;
};

struct CellIndex {
    std::size_t row = 0;
    std::size_t col = 0;
    friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

/// Cells covered by `load` on a rows x cols grid, in row-major order.
std::vector<CellIndex> covered_cells(const Load& load, std::size_t rows, std::size_t cols);

struct Scene {
    MatGeometry geometry;
    std::vector<Load> loads;

    /// Throws InvalidInput when a load leaves the grid, covers no cell, or has
    /// a negative force.
    void validate() const;

    /// Rasterizes the loads active at time `t_s`. Each load's force is spread
    /// uniformly over its covered cells; overlapping loads add.
    ForceMap rasterize(double t_s = 0.0) const;
};

/// Parses the scene grammar:
///
///   # comment
///   <ellipse|rect> row=R col=C height=H width=W force=N
///                  [from=S] [until=S] [breath_hz=F] [breath_depth=D]
///
/// One load per line; key order is free. The result is validated against
/// `geometry`.
Scene parse_scene(std::string_view text, const MatGeometry& geometry);
Scene load_scene(const std::string& path, const MatGeometry& geometry);
std::string format_scene(const Scene& scene);

// ---------------------------------------------------------------------------
// Single-cell electrical law

/// clamp(rho_k / f, r_min, r_max); zero force gives r_max.
double force_to_resistance(double force_n, const VelostatModel& model);

/// v_in * r_fsr / (r_fixed + r_fsr).
double ideal_divider_voltage(double r_fsr, const MatGeometry& geometry);

struct ForceReading {
    double force = 0.0;      // newtons
    bool saturated = false;  // at or beyond the r_min clamp; force = model.max_force()
};

/// Clamp-aware inverse of the divider chain. Readings at or below the r_min
/// voltage (including v_out <= 0) are saturated; readings at or above the r_max
/// voltage are zero force. Throws InvalidInput when v_out > v_in.
ForceReading voltage_to_force(double v_out, const MatGeometry& geometry,
                              const VelostatModel& model);

/// Resistance seen through the ideal divider for readout voltage v_out.
/// Returns +inf for v_out >= v_in and 0 for v_out <= 0.
double divider_resistance(double v_out, const MatGeometry& geometry);

// ---------------------------------------------------------------------------
// Nodal network

/// Linear system for one readout: driven row `driven_row`, sense column
/// `sense_col`. Node ids: row i -> i, column j -> rows + j.
struct NodalSystem {
    IsolationMode mode = IsolationMode::floating;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t driven_row = 0;
    std::size_t sense_col = 0;
    double v_in = 0.0;
    double r_fixed = 0.0;

    Grid<double> conductance;   // cell branch conductances, siemens
    Grid<std::uint8_t> open;    // diode state per branch (diode mode only)
    std::vector<int> unknown_of_node;      // -1 for fixed or disconnected nodes
    std::vector<double> fixed_potential;   // meaningful where unknown_of_node < 0
    std::vector<std::size_t> unknown_nodes;

    Eigen::MatrixXd matrix;
    Eigen::VectorXd source;

    std::size_t node_count() const noexcept { return rows + cols; }
    std::size_t sense_node() const noexcept { return rows + sense_col; }
    std::size_t unknowns() const noexcept { return unknown_nodes.size(); }

    /// Whether cell (i, j) conducts in this mode.
    bool branch_active(std::size_t i, std::size_t j) const noexcept;
    /// Conductance the branch contributes (leak conductance when diode-open).
    double branch_conductance(std::size_t i, std::size_t j) const noexcept;

    /// Rebuilds matrix/source from the branch state.
    void assemble();
};

/// Reverse-biased ideal diodes keep this leak so every node stays connected.
inline constexpr double kDiodeLeakSiemens = 1e-12;

NodalSystem build_network(const ForceMap& force_map, const VelostatModel& model,
                          IsolationMode mode, std::size_t driven_row, std::size_t sense_col);

struct NodalSolution {
    std::vector<double> node_voltages;  // all nodes, fixed ones included
    double sense_voltage = 0.0;         // V(sense column)
    double source_current = 0.0;        // out of the driven row
    double ground_current = 0.0;        // into ground: r_fixed shunt plus grounded rows
    double residual = 0.0;              // max |Ax - b|
};

NodalSolution solve_readout(const NodalSystem& system);

struct DiodeSolution {
    NodalSolution solution;
    int iterations = 0;
    bool converged = false;
    Grid<std::uint8_t> open;  // final diode states
};

/// Complementarity solve with ideal row->column diodes, starting from all
/// diodes conducting. Each pass opens reverse-biased diodes and re-closes
/// forward-biased ones; stops at a fixpoint or after `max_iterations` with the
/// last iterate and converged = false.
DiodeSolution apply_diode_mode(NodalSystem system, int max_iterations = 100);

/// V(sense column) for every cell readout. Floating mode uses effective
/// resistances from one reduced-Laplacian inverse; grounded_rows and
/// virtual_ground use their closed forms; diode mode runs apply_diode_mode per
/// cell.
Grid<double> column_bus_voltages(const ForceMap& force_map, const VelostatModel& model,
                                 IsolationMode mode);

/// round(v / v_in * adc_max) clamped to the ADC range.
std::uint16_t quantize(double v_out, const MatGeometry& geometry);

struct ScanNoise {
    double sigma_lsb = 0.0;
    std::mt19937_64* rng = nullptr;
};

RawFrame scan_force_map(const ForceMap& force_map, const VelostatModel& model, IsolationMode mode,
                        std::uint32_t sequence, std::uint32_t timestamp_ms, ScanNoise noise = {});

/// Rasterizes the scene at `timestamp_ms` and scans it.
RawFrame scan_frame(const Scene& scene, const VelostatModel& model, IsolationMode mode,
                    std::uint32_t sequence, std::uint32_t timestamp_ms, ScanNoise noise = {});

}  // namespace smartmat::sim
