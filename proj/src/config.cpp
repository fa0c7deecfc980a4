#include "smartmat/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace smartmat {

namespace {

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, std::string_view origin) {
    KeyValueConfig cfg;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;

        if (const auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;

        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) +
                              ": expected key=value");
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": empty key");
        cfg.set(std::string(key), std::string(value));
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

std::optional<std::string> KeyValueConfig::get(std::string_view key) const {
    if (auto it = values_.find(key); it != values_.end()) return it->second;
    return std::nullopt;
}

double KeyValueConfig::get_double(std::string_view key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    double out = 0.0;
    const auto* first = v->data();
    const auto* last = v->data() + v->size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || ptr != last)
        throw ConfigError("config key '" + std::string(key) + "': not a number: " + *v);
    return out;
}

long long KeyValueConfig::get_int(std::string_view key, long long fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    long long out = 0;
    const auto* first = v->data();
    const auto* last = v->data() + v->size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || ptr != last)
        throw ConfigError("config key '" + std::string(key) + "': not an integer: " + *v);
    return out;
}

std::string KeyValueConfig::get_string(std::string_view key, std::string fallback) const {
    auto v = get(key);
    return v ? *v : std::move(fallback);
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string KeyValueConfig::dump() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

MatGeometry geometry_from_config(const KeyValueConfig& cfg, const MatGeometry& defaults) {
    MatGeometry g = defaults;
    auto non_negative = [&](std::string_view key, long long fallback) {
        const auto v = cfg.get_int(key, fallback);
        if (v < 0) throw ConfigError("config key '" + std::string(key) + "' must be >= 0");
        return v;
    };
    g.rows = static_cast<std::size_t>(non_negative("rows", static_cast<long long>(g.rows)));
    g.cols = static_cast<std::size_t>(non_negative("cols", static_cast<long long>(g.cols)));
    g.cell_pitch_mm = cfg.get_double("cell_pitch_mm", g.cell_pitch_mm);
    g.r_fixed = cfg.get_double("r_fixed", g.r_fixed);
    g.v_in = cfg.get_double("v_in", g.v_in);
    g.adc_bits = static_cast<unsigned>(non_negative("adc_bits", g.adc_bits));
    g.frame_rate = cfg.get_double("frame_rate", g.frame_rate);
    g.validate();
    return g;
}

VelostatModel model_from_config(const KeyValueConfig& cfg, const VelostatModel& defaults) {
    VelostatModel m = defaults;
    m.rho_k = cfg.get_double("rho_k", m.rho_k);
    m.r_min = cfg.get_double("r_min", m.r_min);
    m.r_max = cfg.get_double("r_max", m.r_max);
    m.validate();
    return m;
}

std::string format_exact(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

void write_geometry(KeyValueConfig& cfg, const MatGeometry& g) {
    cfg.set("rows", std::to_string(g.rows));
    cfg.set("cols", std::to_string(g.cols));
    cfg.set("cell_pitch_mm", format_exact(g.cell_pitch_mm));
    cfg.set("r_fixed", format_exact(g.r_fixed));
    cfg.set("v_in", format_exact(g.v_in));
    cfg.set("adc_bits", std::to_string(g.adc_bits));
    cfg.set("frame_rate", format_exact(g.frame_rate));
}

void write_model(KeyValueConfig& cfg, const VelostatModel& m) {
    cfg.set("rho_k", format_exact(m.rho_k));
    cfg.set("r_min", format_exact(m.r_min));
    cfg.set("r_max", format_exact(m.r_max));
}

}  // namespace smartmat
