#include "smartmat/simkit.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace smartmat::sim {

std::string_view mode_name(IsolationMode mode) noexcept {
    switch (mode) {
        case IsolationMode::floating: return "floating";
        case IsolationMode::grounded_rows: return "grounded_rows";
        case IsolationMode::diode: return "diode";
        case IsolationMode::virtual_ground: return "virtual_ground";
    }
    return "?";
}

IsolationMode parse_mode(std::string_view name) {
    if (name == "floating") return IsolationMode::floating;
    if (name == "grounded_rows" || name == "grounded") return IsolationMode::grounded_rows;
    if (name == "diode") return IsolationMode::diode;
    if (name == "virtual_ground" || name == "vg") return IsolationMode::virtual_ground;
    throw InvalidInput("unknown isolation mode: " + std::string(name));
}

double force_to_resistance(double force_n, const VelostatModel& model) {
    if (!(force_n >= 0.0)) throw InvalidInput("force_to_resistance: force must be >= 0");
    if (force_n == 0.0) return model.r_max;
    return std::clamp(model.rho_k / force_n, model.r_min, model.r_max);
}

double ideal_divider_voltage(double r_fsr, const MatGeometry& geometry) {
    if (!(r_fsr >= 0.0)) throw InvalidInput("ideal_divider_voltage: resistance must be >= 0");
    return geometry.v_in * r_fsr / (geometry.r_fixed + r_fsr);
}

double divider_resistance(double v_out, const MatGeometry& geometry) {
    if (v_out >= geometry.v_in) return std::numeric_limits<double>::infinity();
    if (v_out <= 0.0) return 0.0;
    return geometry.r_fixed * v_out / (geometry.v_in - v_out);
}

ForceReading voltage_to_force(double v_out, const MatGeometry& geometry,
                              const VelostatModel& model) {
    if (v_out > geometry.v_in) throw InvalidInput("voltage_to_force: v_out exceeds v_in");
    if (v_out <= ideal_divider_voltage(model.r_min, geometry))
        return {model.max_force(), true};
    const double r = divider_resistance(v_out, geometry);
    // r_max reads as no load; the small tolerance absorbs the rounding in r.
    if (r >= model.r_max * (1.0 - 1e-9)) return {0.0, false};
    return {model.rho_k / r, false};
}

// ---------------------------------------------------------------------------

bool NodalSystem::branch_active(std::size_t i, std::size_t j) const noexcept {
    if (mode == IsolationMode::virtual_ground) return i == driven_row && j == sense_col;
    return true;
}

double NodalSystem::branch_conductance(std::size_t i, std::size_t j) const noexcept {
    if (!branch_active(i, j)) return 0.0;
    if (mode == IsolationMode::diode && open(i, j)) return kDiodeLeakSiemens;
    return conductance(i, j);
}

void NodalSystem::assemble() {
    const std::size_t nodes = node_count();
    unknown_of_node.assign(nodes, -1);
    fixed_potential.assign(nodes, 0.0);
    unknown_nodes.clear();

    auto make_unknown = [&](std::size_t node) {
        unknown_of_node[node] = static_cast<int>(unknown_nodes.size());
        unknown_nodes.push_back(node);
    };

    fixed_potential[driven_row] = v_in;
    switch (mode) {
        case IsolationMode::floating:
        case IsolationMode::diode:
            for (std::size_t i = 0; i < rows; ++i)
                if (i != driven_row) make_unknown(i);
            for (std::size_t j = 0; j < cols; ++j) make_unknown(rows + j);
            break;
        case IsolationMode::grounded_rows:
            for (std::size_t j = 0; j < cols; ++j) make_unknown(rows + j);
            break;
        case IsolationMode::virtual_ground:
            // Every other electrode is held at virtual ground and carries no
            // branch into the sensed path.
            make_unknown(sense_node());
            break;
    }

    const auto n = static_cast<Eigen::Index>(unknown_nodes.size());
    matrix = Eigen::MatrixXd::Zero(n, n);
    source = Eigen::VectorXd::Zero(n);

    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            if (!branch_active(i, j)) continue;
            const double g = branch_conductance(i, j);
            const int a = unknown_of_node[i];
            const int b = unknown_of_node[rows + j];
            if (a >= 0) matrix(a, a) += g;
            if (b >= 0) matrix(b, b) += g;
            if (a >= 0 && b >= 0) {
                matrix(a, b) -= g;
                matrix(b, a) -= g;
            } else if (a >= 0) {
                source(a) += g * fixed_potential[rows + j];
            } else if (b >= 0) {
                source(b) += g * fixed_potential[i];
            }
        }
    }
    const int s = unknown_of_node[sense_node()];
    matrix(s, s) += 1.0 / r_fixed;
}

NodalSystem build_network(const ForceMap& force_map, const VelostatModel& model,
                          IsolationMode mode, std::size_t driven_row, std::size_t sense_col) {
    force_map.validate();
    model.validate();
    const auto& g = force_map.geometry;
    if (driven_row >= g.rows) throw InvalidInput("build_network: driven row out of range");
    if (sense_col >= g.cols) throw InvalidInput("build_network: sense column out of range");

    NodalSystem sys;
    sys.mode = mode;
    sys.rows = g.rows;
    sys.cols = g.cols;
    sys.driven_row = driven_row;
    sys.sense_col = sense_col;
    sys.v_in = g.v_in;
    sys.r_fixed = g.r_fixed;
    sys.conductance = Grid<double>(g.rows, g.cols);
    sys.open = Grid<std::uint8_t>(g.rows, g.cols, 0);
    for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j)
            sys.conductance(i, j) = 1.0 / force_to_resistance(force_map.forces(i, j), model);
    sys.assemble();
    return sys;
}

NodalSolution solve_readout(const NodalSystem& system) {
    const auto n = static_cast<Eigen::Index>(system.unknown_nodes.size());
    if (system.matrix.rows() != n || system.matrix.cols() != n || system.source.size() != n ||
        system.unknown_of_node.size() != system.node_count() ||
        !system.conductance.same_shape(system.rows, system.cols))
        throw InvalidInput("solve_readout: system dimensions are inconsistent");

    Eigen::LLT<Eigen::MatrixXd> llt(system.matrix);
    if (llt.info() != Eigen::Success)
        throw SolverError("solve_readout: nodal matrix is not positive definite");
    const Eigen::VectorXd x = llt.solve(system.source);

    NodalSolution out;
    out.residual = (system.matrix * x - system.source).cwiseAbs().maxCoeff();
    out.node_voltages = system.fixed_potential;
    for (Eigen::Index k = 0; k < n; ++k) out.node_voltages[system.unknown_nodes[k]] = x(k);
    out.sense_voltage = out.node_voltages[system.sense_node()];

    const auto& v = out.node_voltages;
    out.ground_current = out.sense_voltage / system.r_fixed;
    for (std::size_t i = 0; i < system.rows; ++i) {
        for (std::size_t j = 0; j < system.cols; ++j) {
            if (!system.branch_active(i, j)) continue;
            const double current = system.branch_conductance(i, j) * (v[i] - v[system.rows + j]);
            if (i == system.driven_row) out.source_current += current;
            else if (system.unknown_of_node[i] < 0) out.ground_current -= current;
        }
    }
    return out;
}

DiodeSolution apply_diode_mode(NodalSystem system, int max_iterations) {
    if (system.mode != IsolationMode::diode)
        throw InvalidInput("apply_diode_mode: system is not in diode mode");
    std::fill(system.open.begin(), system.open.end(), std::uint8_t{0});
    system.assemble();

    DiodeSolution out;
    while (true) {
        out.solution = solve_readout(system);
        ++out.iterations;
        const auto& v = out.solution.node_voltages;
        bool changed = false;
        for (std::size_t i = 0; i < system.rows; ++i) {
            for (std::size_t j = 0; j < system.cols; ++j) {
                const std::uint8_t want_open = v[i] < v[system.rows + j] ? 1 : 0;
                if (system.open(i, j) != want_open) {
                    system.open(i, j) = want_open;
                    changed = true;
                }
            }
        }
        if (!changed) {
            out.converged = true;
            break;
        }
        if (out.iterations >= max_iterations) break;
        system.assemble();
    }
    out.open = system.open;
    return out;
}

namespace {

Grid<double> floating_bus_voltages(const ForceMap& fm, const VelostatModel& model) {
    const auto& g = fm.geometry;
    const std::size_t n = g.rows, m = g.cols, nodes = n + m;
    // Reduced Laplacian with node 0 as reference; effective resistance between
    // driven row and sense column follows from its inverse.
    Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(nodes, nodes);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double c = 1.0 / force_to_resistance(fm.forces(i, j), model);
            const auto a = static_cast<Eigen::Index>(i);
            const auto b = static_cast<Eigen::Index>(n + j);
            lap(a, a) += c;
            lap(b, b) += c;
            lap(a, b) -= c;
            lap(b, a) -= c;
        }
    }
    Eigen::MatrixXd inv = Eigen::MatrixXd::Zero(nodes, nodes);
    if (nodes > 1) {
        const auto k = static_cast<Eigen::Index>(nodes - 1);
        Eigen::LLT<Eigen::MatrixXd> llt(lap.bottomRightCorner(k, k));
        if (llt.info() != Eigen::Success)
            throw SolverError("floating readout: reduced Laplacian is not positive definite");
        inv.bottomRightCorner(k, k) = llt.solve(Eigen::MatrixXd::Identity(k, k));
    }

    Grid<double> out(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const auto a = static_cast<Eigen::Index>(i);
            const auto b = static_cast<Eigen::Index>(n + j);
            const double r_eff = std::max(0.0, inv(a, a) + inv(b, b) - 2.0 * inv(a, b));
            out(i, j) = g.v_in * g.r_fixed / (g.r_fixed + r_eff);
        }
    }
    return out;
}

}  // namespace

Grid<double> column_bus_voltages(const ForceMap& force_map, const VelostatModel& model,
                                 IsolationMode mode) {
    force_map.validate();
    model.validate();
    const auto& g = force_map.geometry;
    Grid<double> out(g.rows, g.cols);

    switch (mode) {
        case IsolationMode::virtual_ground:
            for (std::size_t i = 0; i < g.rows; ++i)
                for (std::size_t j = 0; j < g.cols; ++j) {
                    const double r = force_to_resistance(force_map.forces(i, j), model);
                    out(i, j) = g.v_in * g.r_fixed / (g.r_fixed + r);
                }
            return out;

        case IsolationMode::grounded_rows: {
            // With every row pinned, each column node only sees row potentials.
            std::vector<double> column_load(g.cols, 1.0 / g.r_fixed);
            Grid<double> cond(g.rows, g.cols);
            for (std::size_t i = 0; i < g.rows; ++i)
                for (std::size_t j = 0; j < g.cols; ++j) {
                    cond(i, j) = 1.0 / force_to_resistance(force_map.forces(i, j), model);
                    column_load[j] += cond(i, j);
                }
            for (std::size_t i = 0; i < g.rows; ++i)
                for (std::size_t j = 0; j < g.cols; ++j)
                    out(i, j) = g.v_in * cond(i, j) / column_load[j];
            return out;
        }

        case IsolationMode::floating:
            return floating_bus_voltages(force_map, model);

        case IsolationMode::diode:
            for (std::size_t i = 0; i < g.rows; ++i)
                for (std::size_t j = 0; j < g.cols; ++j) {
                    auto sol = apply_diode_mode(build_network(force_map, model, mode, i, j));
                    if (!sol.converged)
                        throw SolverError("diode readout did not converge at cell (" +
                                          std::to_string(i) + ", " + std::to_string(j) + ")");
                    out(i, j) = sol.solution.sense_voltage;
                }
            return out;
    }
    return out;
}

std::uint16_t quantize(double v_out, const MatGeometry& geometry) {
    const double top = geometry.adc_max();
    const double c = std::round(v_out / geometry.v_in * top);
    return static_cast<std::uint16_t>(std::clamp(c, 0.0, top));
}

RawFrame scan_force_map(const ForceMap& force_map, const VelostatModel& model, IsolationMode mode,
                        std::uint32_t sequence, std::uint32_t timestamp_ms, ScanNoise noise) {
    const auto& g = force_map.geometry;
    const auto bus = column_bus_voltages(force_map, model, mode);
    RawFrame frame;
    frame.sequence = sequence;
    frame.timestamp_ms = timestamp_ms;
    frame.counts = Grid<std::uint16_t>(g.rows, g.cols);
    std::normal_distribution<double> jitter(0.0, 1.0);
    const bool noisy = noise.sigma_lsb > 0.0 && noise.rng != nullptr;
    for (std::size_t i = 0; i < g.rows; ++i) {
        for (std::size_t j = 0; j < g.cols; ++j) {
            double v_out = g.v_in - bus(i, j);
            if (noisy) v_out += jitter(*noise.rng) * noise.sigma_lsb * g.lsb_volts();
            frame.counts(i, j) = quantize(v_out, g);
        }
    }
    return frame;
}

RawFrame scan_frame(const Scene& scene, const VelostatModel& model, IsolationMode mode,
                    std::uint32_t sequence, std::uint32_t timestamp_ms, ScanNoise noise) {
    scene.validate();
    return scan_force_map(scene.rasterize(timestamp_ms / 1000.0), model, mode, sequence,
                          timestamp_ms, noise);
}

}  // namespace smartmat::sim
