// Plain-text key=value configuration.
//
// One `key = value` pair per line; `#` starts a comment; blank lines are
// ignored. Later assignments override earlier ones. Units are SI except where
// the key name says otherwise (cell_pitch_mm).
//
//   Geometry keys: rows, cols, cell_pitch_mm, r_fixed, v_in, adc_bits, frame_rate
//   Model keys:    rho_k, r_min, r_max
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "smartmat/core.hpp"

namespace smartmat {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(std::string_view text, std::string_view origin = "<text>");
    static KeyValueConfig load(const std::filesystem::path& path);

    void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }
    bool contains(std::string_view key) const { return values_.find(key) != values_.end(); }
    std::optional<std::string> get(std::string_view key) const;

    double get_double(std::string_view key, double fallback) const;
    long long get_int(std::string_view key, long long fallback) const;
    std::string get_string(std::string_view key, std::string fallback) const;

    /// Overlays every key of `other` onto this config.
    void merge(const KeyValueConfig& other);

    /// Serializes in key order, one `key=value` per line.
    std::string dump() const;

    const std::map<std::string, std::string, std::less<>>& values() const noexcept {
        return values_;
    }

private:
    std::map<std::string, std::string, std::less<>> values_;
};

/// Missing keys fall back to `defaults`. The result is validated.
MatGeometry geometry_from_config(const KeyValueConfig& cfg, const MatGeometry& defaults = {});
VelostatModel model_from_config(const KeyValueConfig& cfg, const VelostatModel& defaults = {});

void write_geometry(KeyValueConfig& cfg, const MatGeometry& g);
void write_model(KeyValueConfig& cfg, const VelostatModel& m);

/// Formats a double so that parsing it back yields the same value.
std::string format_exact(double v);

}  // namespace smartmat
