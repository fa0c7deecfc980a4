// Shared geometry, unit and frame types for the smart-mat pipeline.
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace smartmat {

/// Raised for inputs that violate an operation's preconditions.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major 2-D grid.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    T& at(std::size_t r, std::size_t c) {
        check(r, c);
        return data_[r * cols_ + c];
    }
    const T& at(std::size_t r, std::size_t c) const {
        check(r, c);
        return data_[r * cols_ + c];
    }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    bool same_shape(std::size_t rows, std::size_t cols) const noexcept {
        return rows_ == rows && cols_ == cols;
    }
    template <typename U>
    bool same_shape(const Grid<U>& other) const noexcept {
        return same_shape(other.rows(), other.cols());
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    void check(std::size_t r, std::size_t c) const {
        if (r >= rows_ || c >= cols_) throw std::out_of_range("grid index out of range");
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

inline constexpr std::size_t kMaxRows = 128;
inline constexpr std::size_t kMaxCols = 68;
inline constexpr std::size_t kMaxCells = kMaxRows * kMaxCols;

/// Electrical and mechanical layout of the mat. Row electrodes are driven,
/// column electrodes are sensed.
struct MatGeometry {
    std::size_t rows = 16;
    std::size_t cols = 16;
    double cell_pitch_mm = 10.0;
    double r_fixed = 10'000.0;  // ohms
    double v_in = 5.0;          // volts
    unsigned adc_bits = 10;
    double frame_rate = 10.0;  // Hz

    /// Throws InvalidInput when any invariant is violated.
    void validate() const;

    std::size_t cells() const noexcept { return rows * cols; }
    std::uint32_t adc_max() const noexcept { return (1u << adc_bits) - 1u; }
    double cell_area_m2() const noexcept { return cell_pitch_mm * cell_pitch_mm * 1e-6; }
    double lsb_volts() const noexcept { return v_in / adc_max(); }

    friend bool operator==(const MatGeometry&, const MatGeometry&) = default;
};

/// Velostat resistance law R = rho_k / F, clamped to [r_min, r_max].
struct VelostatModel {
    double rho_k = 2000.0;  // ohm * newton
    double r_min = 10.0;
    double r_max = 20'000.0;

    void validate() const;

    /// Largest force the clamped law can distinguish (reached at r_min).
    double max_force() const noexcept { return rho_k / r_min; }
    /// Smallest force with an unclamped resistance (reached at r_max).
    double min_force() const noexcept { return rho_k / r_max; }

    friend bool operator==(const VelostatModel&, const VelostatModel&) = default;
};

/// Ground-truth applied force per cell, newtons.
struct ForceMap {
    MatGeometry geometry;
    Grid<double> forces;

    ForceMap() = default;
    explicit ForceMap(const MatGeometry& g) : geometry(g), forces(g.rows, g.cols, 0.0) {}

    void validate() const;
};

/// One complete matrix scan.
struct RawFrame {
    std::uint32_t sequence = 0;
    std::uint32_t timestamp_ms = 0;
    Grid<std::uint16_t> counts;

    friend bool operator==(const RawFrame&, const RawFrame&) = default;
};

/// Throws InvalidInput when the frame does not match the geometry or a count
/// exceeds the ADC range.
void validate_frame(const RawFrame& frame, const MatGeometry& geometry);

enum class Zone : std::uint8_t { blue = 0, green = 1, red = 2 };

std::string_view zone_name(Zone z) noexcept;

/// Reconstructed pressure grid. When upsampled, pixel (i, j) sits at original
/// cell coordinate (i / upsample_factor, j / upsample_factor).
struct PressureImage {
    MatGeometry geometry;
    unsigned upsample_factor = 1;
    Grid<double> pressures;  // kPa
    Grid<std::uint8_t> saturated;
    Grid<Zone> zone_labels;

    /// Physical area represented by one pixel.
    double pixel_area_m2() const noexcept {
        return geometry.cell_area_m2() / (double(upsample_factor) * upsample_factor);
    }
};

// ---------------------------------------------------------------------------
// Pressure units

enum class PressureUnit { kgf_per_cm2, psi, kpa };

inline constexpr double kPsiPerKgfCm2 = 14.2233;
inline constexpr double kKpaPerKgfCm2 = 98.0665;

/// Accepts "kgf/cm2", "kgf/cm^2", "psi", "kPa" (case-insensitive).
PressureUnit parse_pressure_unit(std::string_view name);
std::string_view unit_name(PressureUnit unit) noexcept;

double pressure_units_convert(double value, PressureUnit from, PressureUnit to);
double pressure_units_convert(double value, std::string_view from, std::string_view to);

/// Mean contact pressure of a body of `mass_kg` spread over `contact_area_cm2`,
/// in psi.
double body_pressure_estimate(double mass_kg, double contact_area_cm2);

}  // namespace smartmat
