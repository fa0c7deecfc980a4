#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "smartmat/simkit.hpp"

namespace smartmat::sim {

namespace {

constexpr double kEdgeEps = 1e-9;

double parse_number(std::string_view token, std::string_view key, std::size_t line_no) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc{} || ptr != token.data() + token.size())
        throw InvalidInput("scene line " + std::to_string(line_no) + ": bad value for " +
                           std::string(key));
    return v;
}

}  // namespace

std::vector<CellIndex> covered_cells(const Load& load, std::size_t rows, std::size_t cols) {
    std::vector<CellIndex> out;
    const double hh = load.height / 2.0;
    const double hw = load.width / 2.0;
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            const double di = double(i) - load.row;
            const double dj = double(j) - load.col;
            bool inside = false;
            if (load.shape == Shape::rectangle) {
                inside = di >= -hh - kEdgeEps && di < hh - kEdgeEps && dj >= -hw - kEdgeEps &&
                         dj < hw - kEdgeEps;
            } else {
                const double u = di / hh;
                const double v = dj / hw;
                inside = u * u + v * v <= 1.0 + kEdgeEps;
            }
            if (inside) out.push_back({i, j});
        }
    }
    return out;
}

void Scene::validate() const {
    geometry.validate();
    for (std::size_t k = 0; k < loads.size(); ++k) {
        const auto& l = loads[k];
        const auto where = "scene load " + std::to_string(k) + ": ";
        if (!(l.force >= 0.0)) throw InvalidInput(where + "force must be >= 0");
        if (!(l.height > 0.0) || !(l.width > 0.0))
            throw InvalidInput(where + "extents must be > 0");
        if (l.row - l.height / 2 < -0.5 - kEdgeEps ||
            l.row + l.height / 2 > double(geometry.rows) - 0.5 + kEdgeEps ||
            l.col - l.width / 2 < -0.5 - kEdgeEps ||
            l.col + l.width / 2 > double(geometry.cols) - 0.5 + kEdgeEps)
            throw InvalidInput(where + "load extends beyond the grid");
        if (!(l.breath_depth >= 0.0 && l.breath_depth < 1.0))
            throw InvalidInput(where + "breath_depth must be in [0, 1)");
        if (!(l.breath_hz >= 0.0)) throw InvalidInput(where + "breath_hz must be >= 0");
        if (!(l.until_s > l.from_s)) throw InvalidInput(where + "until must be after from");
        if (covered_cells(l, geometry.rows, geometry.cols).empty())
            throw InvalidInput(where + "load covers no cell");
    }
}

ForceMap Scene::rasterize(double t_s) const {
    ForceMap fm(geometry);
    for (const auto& l : loads) {
        if (t_s < l.from_s || t_s >= l.until_s) continue;
        double total = l.force;
        if (l.breath_hz > 0.0)
            total *= 1.0 + l.breath_depth * std::sin(2.0 * std::numbers::pi * l.breath_hz * t_s);
        const auto cells = covered_cells(l, geometry.rows, geometry.cols);
        const double each = total / double(cells.size());
        for (auto c : cells) fm.forces(c.row, c.col) += each;
    }
    return fm;
}

Scene parse_scene(std::string_view text, const MatGeometry& geometry) {
    Scene scene;
    scene.geometry = geometry;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream words(line);
        std::string shape;
        if (!(words >> shape)) continue;

        Load load;
        if (shape == "ellipse")
            load.shape = Shape::ellipse;
        else if (shape == "rect" || shape == "rectangle")
            load.shape = Shape::rectangle;
        else
            throw InvalidInput("scene line " + std::to_string(line_no) + ": unknown shape '" +
                               shape + "'");

        bool seen_row = false, seen_col = false, seen_force = false;
        std::string token;
        while (words >> token) {
            const auto eq = token.find('=');
            if (eq == std::string::npos)
                throw InvalidInput("scene line " + std::to_string(line_no) +
                                   ": expected key=value, got '" + token + "'");
            const std::string_view key(token.data(), eq);
            const std::string_view val(token.data() + eq + 1, token.size() - eq - 1);
            const double v = parse_number(val, key, line_no);
            if (key == "row") load.row = v, seen_row = true;
            else if (key == "col") load.col = v, seen_col = true;
            else if (key == "height") load.height = v;
            else if (key == "width") load.width = v;
            else if (key == "force") load.force = v, seen_force = true;
            else if (key == "from") load.from_s = v;
            else if (key == "until") load.until_s = v;
            else if (key == "breath_hz") load.breath_hz = v;
            else if (key == "breath_depth") load.breath_depth = v;
            else
                throw InvalidInput("scene line " + std::to_string(line_no) + ": unknown key '" +
                                   std::string(key) + "'");
        }
        if (!seen_row || !seen_col || !seen_force)
            throw InvalidInput("scene line " + std::to_string(line_no) +
                               ": row, col and force are required");
        scene.loads.push_back(load);
    }
    scene.validate();
    return scene;
}

Scene load_scene(const std::string& path, const MatGeometry& geometry) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open scene file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_scene(ss.str(), geometry);
}

std::string format_scene(const Scene& scene) {
    std::ostringstream out;
    out.precision(17);
    for (const auto& l : scene.loads) {
        out << (l.shape == Shape::ellipse ? "ellipse" : "rect") << " row=" << l.row
            << " col=" << l.col << " height=" << l.height << " width=" << l.width
            << " force=" << l.force;
        if (l.from_s != 0.0) out << " from=" << l.from_s;
        if (std::isfinite(l.until_s)) out << " until=" << l.until_s;
        if (l.breath_hz > 0.0) out << " breath_hz=" << l.breath_hz;
        if (l.breath_depth > 0.0) out << " breath_depth=" << l.breath_depth;
        out << '\n';
    }
    return out.str();
}

}  // namespace smartmat::sim
