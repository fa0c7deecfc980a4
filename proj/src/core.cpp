#include "smartmat/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

namespace smartmat {

void MatGeometry::validate() const {
    if (rows < 1 || cols < 1) throw InvalidInput("geometry: rows and cols must be >= 1");
    if (rows * cols > kMaxCells)
        throw InvalidInput("geometry: rows*cols exceeds the 128x68 ceiling");
    if (!(cell_pitch_mm > 0.0)) throw InvalidInput("geometry: cell_pitch_mm must be > 0");
    if (!(r_fixed > 0.0)) throw InvalidInput("geometry: r_fixed must be > 0");
    if (!(v_in > 0.0)) throw InvalidInput("geometry: v_in must be > 0");
    if (adc_bits < 1 || adc_bits > 16) throw InvalidInput("geometry: adc_bits must be in [1, 16]");
    if (!(frame_rate > 0.0)) throw InvalidInput("geometry: frame_rate must be > 0");
}

void VelostatModel::validate() const {
    if (!(rho_k > 0.0)) throw InvalidInput("model: rho_k must be > 0");
    if (!(r_min > 0.0) || !(r_min < r_max))
        throw InvalidInput("model: require 0 < r_min < r_max");
}

void ForceMap::validate() const {
    geometry.validate();
    if (!forces.same_shape(geometry.rows, geometry.cols))
        throw InvalidInput("force map: grid does not match geometry");
    for (double f : forces)
        if (!(f >= 0.0)) throw InvalidInput("force map: forces must be finite and >= 0");
}

void validate_frame(const RawFrame& frame, const MatGeometry& geometry) {
    if (!frame.counts.same_shape(geometry.rows, geometry.cols))
        throw InvalidInput("frame: dimensions do not match geometry");
    const auto top = geometry.adc_max();
    for (auto c : frame.counts)
        if (c > top) throw InvalidInput("frame: count exceeds ADC range");
}

std::string_view zone_name(Zone z) noexcept {
    switch (z) {
        case Zone::blue: return "blue";
        case Zone::green: return "green";
        case Zone::red: return "red";
    }
    return "?";
}

namespace {

double per_kgf_cm2(PressureUnit u) {
    switch (u) {
        case PressureUnit::kgf_per_cm2: return 1.0;
        case PressureUnit::psi: return kPsiPerKgfCm2;
        case PressureUnit::kpa: return kKpaPerKgfCm2;
    }
    return 1.0;
}

}  // namespace

PressureUnit parse_pressure_unit(std::string_view name) {
    std::string s(name);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "kgf/cm2" || s == "kgf/cm^2" || s == "kgf/cm²") return PressureUnit::kgf_per_cm2;
    if (s == "psi") return PressureUnit::psi;
    if (s == "kpa") return PressureUnit::kpa;
    throw InvalidInput("unknown pressure unit: " + std::string(name));
}

std::string_view unit_name(PressureUnit unit) noexcept {
    switch (unit) {
        case PressureUnit::kgf_per_cm2: return "kgf/cm2";
        case PressureUnit::psi: return "psi";
        case PressureUnit::kpa: return "kPa";
    }
    return "?";
}

double pressure_units_convert(double value, PressureUnit from, PressureUnit to) {
    if (from == to) return value;
    return value / per_kgf_cm2(from) * per_kgf_cm2(to);
}

double pressure_units_convert(double value, std::string_view from, std::string_view to) {
    return pressure_units_convert(value, parse_pressure_unit(from), parse_pressure_unit(to));
}

double body_pressure_estimate(double mass_kg, double contact_area_cm2) {
    if (!(mass_kg > 0.0) || !(contact_area_cm2 > 0.0))
        throw InvalidInput("body_pressure_estimate: mass and contact area must be > 0");
    return pressure_units_convert(mass_kg / contact_area_cm2, PressureUnit::kgf_per_cm2,
                                  PressureUnit::psi);
}

}  // namespace smartmat
