#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "smartmat/simkit.hpp"

using namespace smartmat;
using namespace smartmat::sim;

namespace {

MatGeometry small(std::size_t rows, std::size_t cols) {
    MatGeometry g;
    g.rows = rows;
    g.cols = cols;
    return g;
}

// Force that makes the cell exactly `ohms` under the default model.
double force_for(double ohms, const VelostatModel& m = {}) { return m.rho_k / ohms; }

ForceMap map_of(const MatGeometry& g, std::initializer_list<double> ohms) {
    ForceMap fm(g);
    auto it = ohms.begin();
    for (auto& f : fm.forces) f = force_for(*it++);
    return fm;
}

double ideal_bus(double r_cell, const MatGeometry& g) {
    return g.v_in * g.r_fixed / (g.r_fixed + r_cell);
}

ForceMap random_map(const MatGeometry& g, std::mt19937_64& rng, double p_loaded) {
    ForceMap fm(g);
    std::bernoulli_distribution loaded(p_loaded);
    std::uniform_real_distribution<double> force(0.2, 150.0);
    for (auto& f : fm.forces) f = loaded(rng) ? force(rng) : 0.0;
    return fm;
}

constexpr IsolationMode kModes[] = {IsolationMode::floating, IsolationMode::grounded_rows,
                                    IsolationMode::diode, IsolationMode::virtual_ground};

}  // namespace

TEST_CASE("force to resistance") {
    VelostatModel m;
    CHECK(force_to_resistance(2.0, m) == 1000.0);
    CHECK(force_to_resistance(0.0, m) == 20000.0);
    CHECK(force_to_resistance(500.0, m) == 10.0);
    CHECK(force_to_resistance(0.05, m) == 20000.0);
    CHECK_THROWS_AS(force_to_resistance(-1.0, m), InvalidInput);
}

TEST_CASE("ideal divider") {
    MatGeometry g;
    CHECK(ideal_divider_voltage(10'000, g) == 2.5);
    CHECK(ideal_divider_voltage(0, g) == 0.0);
    CHECK(ideal_divider_voltage(30'000, g) == 3.75);
    CHECK_THROWS_AS(ideal_divider_voltage(-1, g), InvalidInput);
}

TEST_CASE("voltage to force") {
    MatGeometry g;
    VelostatModel m;
    const double v2 = ideal_divider_voltage(force_to_resistance(2.0, m), g);
    const auto r = voltage_to_force(v2, g, m);
    CHECK(std::abs(r.force - 2.0) <= 2e-9);
    CHECK_FALSE(r.saturated);

    CHECK(voltage_to_force(g.v_in, g, m).force == 0.0);
    CHECK(voltage_to_force(ideal_divider_voltage(m.r_max, g), g, m).force == 0.0);

    const auto sat = voltage_to_force(0.0, g, m);
    CHECK(sat.saturated);
    CHECK(sat.force == m.max_force());
    CHECK(voltage_to_force(-0.1, g, m).saturated);
    CHECK(voltage_to_force(ideal_divider_voltage(m.r_min, g), g, m).saturated);
    CHECK_THROWS_AS(voltage_to_force(g.v_in + 1e-6, g, m), InvalidInput);
}

TEST_CASE("node counts") {
    const auto g = small(2, 2);
    ForceMap fm(g);
    CHECK(build_network(fm, {}, IsolationMode::floating, 0, 0).unknowns() == 3);
    CHECK(build_network(fm, {}, IsolationMode::grounded_rows, 0, 0).unknowns() == 2);
    CHECK(build_network(fm, {}, IsolationMode::diode, 0, 0).unknowns() == 3);
    CHECK(build_network(fm, {}, IsolationMode::virtual_ground, 0, 0).unknowns() == 1);
    CHECK_THROWS_AS(build_network(fm, {}, IsolationMode::floating, 2, 0), InvalidInput);
    CHECK_THROWS_AS(build_network(fm, {}, IsolationMode::floating, 0, 2), InvalidInput);
}

// Hand nodal analysis of the 2x2 network. With one sense column the other
// column and the other row only connect in a chain, so the sneak path is three
// cells in series, in parallel with the addressed cell.
TEST_CASE("2x2 floating oracle") {
    const auto g = small(2, 2);
    SUBCASE("all 10k: 10k || 30k = 7.5k, V = 5 * 10 / 17.5 = 20/7") {
        const auto fm = map_of(g, {10'000, 10'000, 10'000, 10'000});
        for (std::size_t j = 0; j < 2; ++j) {
            const auto s = solve_readout(build_network(fm, {}, IsolationMode::floating, 0, j));
            CHECK(s.sense_voltage == doctest::Approx(20.0 / 7.0).epsilon(1e-12));
            CHECK(s.sense_voltage > 2.5);
            CHECK(s.residual < 1e-10);
        }
    }
    SUBCASE("1k 2k / 4k 5k") {
        const auto fm = map_of(g, {1'000, 2'000, 4'000, 5'000});
        // col 0: 1k || (2k + 5k + 4k) = 11/12 k  ->  V = 50 / (10 + 11/12) = 600/131
        auto s = solve_readout(build_network(fm, {}, IsolationMode::floating, 0, 0));
        CHECK(s.sense_voltage == doctest::Approx(600.0 / 131.0).epsilon(1e-12));
        // col 1: 2k || (1k + 4k + 5k) = 5/3 k  ->  V = 50 / (10 + 5/3) = 30/7
        s = solve_readout(build_network(fm, {}, IsolationMode::floating, 0, 1));
        CHECK(s.sense_voltage == doctest::Approx(30.0 / 7.0).epsilon(1e-12));
        // row 1, col 0: 4k || (5k + 2k + 1k) = 8/3 k  ->  V = 50 / (10 + 8/3) = 75/19
        s = solve_readout(build_network(fm, {}, IsolationMode::floating, 1, 0));
        CHECK(s.sense_voltage == doctest::Approx(75.0 / 19.0).epsilon(1e-12));
    }
}

TEST_CASE("2x2 grounded rows and virtual ground oracles") {
    const auto g = small(2, 2);
    const auto fm = map_of(g, {10'000, 10'000, 10'000, 10'000});
    // Sense column sees the driven cell against (other row cell || r_fixed):
    // V = 5 * g / (g + g + g) = 5/3.
    const auto s = solve_readout(build_network(fm, {}, IsolationMode::grounded_rows, 0, 0));
    CHECK(s.sense_voltage == doctest::Approx(5.0 / 3.0).epsilon(1e-12));

    const auto vg = solve_readout(build_network(fm, {}, IsolationMode::virtual_ground, 0, 0));
    CHECK(vg.sense_voltage == doctest::Approx(2.5).epsilon(1e-14));
    CHECK(g.v_in - vg.sense_voltage == doctest::Approx(ideal_divider_voltage(10'000, g)));
}

TEST_CASE("1x1 grid reads ideal in every mode") {
    const auto g = small(1, 1);
    const auto fm = map_of(g, {3'300});
    for (auto mode : kModes) {
        const auto bus = column_bus_voltages(fm, {}, mode);
        CHECK(bus(0, 0) == doctest::Approx(ideal_bus(3'300, g)).epsilon(1e-12));
    }
}

TEST_CASE("Kirchhoff: source current equals ground current") {
    std::mt19937_64 rng(5);
    const auto g = small(5, 4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto fm = random_map(g, rng, 0.5);
        for (auto mode : kModes) {
            for (std::size_t i = 0; i < g.rows; ++i) {
                for (std::size_t j = 0; j < g.cols; ++j) {
                    const auto sys = build_network(fm, {}, mode, i, j);
                    const auto s = mode == IsolationMode::diode ? apply_diode_mode(sys).solution
                                                                : solve_readout(sys);
                    CHECK(s.source_current > 0.0);
                    CHECK(std::abs(s.source_current - s.ground_current) <=
                          1e-9 * s.source_current);
                    CHECK(s.residual < 1e-10);
                }
            }
        }
    }
}

TEST_CASE("column_bus_voltages matches the explicit nodal solve") {
    std::mt19937_64 rng(9);
    const auto g = small(6, 5);
    for (int trial = 0; trial < 10; ++trial) {
        const auto fm = random_map(g, rng, 0.4);
        for (auto mode : kModes) {
            const auto bus = column_bus_voltages(fm, {}, mode);
            for (std::size_t i = 0; i < g.rows; ++i) {
                for (std::size_t j = 0; j < g.cols; ++j) {
                    const auto sys = build_network(fm, {}, mode, i, j);
                    const double v = mode == IsolationMode::diode
                                         ? apply_diode_mode(sys).solution.sense_voltage
                                         : solve_readout(sys).sense_voltage;
                    CHECK(bus(i, j) == doctest::Approx(v).epsilon(1e-9));
                }
            }
        }
    }
}

TEST_CASE("solver errors") {
    const auto g = small(2, 2);
    auto sys = build_network(ForceMap(g), {}, IsolationMode::floating, 0, 0);
    auto broken = sys;
    broken.source.resize(1);
    CHECK_THROWS_AS(solve_readout(broken), InvalidInput);
    broken = sys;
    broken.matrix = -broken.matrix;
    CHECK_THROWS_AS(solve_readout(broken), SolverError);
}

TEST_CASE("diode mode") {
    SUBCASE("single loaded cell reads ideal") {
        const auto g = small(4, 4);
        ForceMap fm(g);
        fm.forces(1, 2) = 5.0;
        const auto bus = column_bus_voltages(fm, {}, IsolationMode::diode);
        const auto vg = column_bus_voltages(fm, {}, IsolationMode::virtual_ground);
        for (std::size_t k = 0; k < bus.size(); ++k)
            CHECK(std::abs(bus.data()[k] - vg.data()[k]) <= g.lsb_volts());
    }
    SUBCASE("2x2 equal load sits between virtual ground and floating") {
        const auto g = small(2, 2);
        const auto fm = map_of(g, {10'000, 10'000, 10'000, 10'000});
        const auto d = column_bus_voltages(fm, {}, IsolationMode::diode);
        const auto f = column_bus_voltages(fm, {}, IsolationMode::floating);
        const auto v = column_bus_voltages(fm, {}, IsolationMode::virtual_ground);
        for (std::size_t k = 0; k < d.size(); ++k) {
            CHECK(v.data()[k] <= d.data()[k] + 1e-12);
            CHECK(d.data()[k] <= f.data()[k] + 1e-12);
        }
    }
    SUBCASE("converges and reports open diodes") {
        const auto g = small(3, 3);
        const auto fm = map_of(g, {1'000, 20'000, 1'000, 20'000, 20'000, 20'000, 1'000, 20'000, 1'000});
        const auto r = apply_diode_mode(build_network(fm, {}, IsolationMode::diode, 0, 1));
        CHECK(r.converged);
        CHECK(r.iterations <= 100);
        std::size_t open = 0;
        for (auto o : r.open) open += o;
        CHECK(open > 0);
    }
    SUBCASE("iteration cap reports non-convergence") {
        const auto g = small(3, 3);
        const auto fm = map_of(g, {1'000, 20'000, 1'000, 20'000, 20'000, 20'000, 1'000, 20'000, 1'000});
        const auto r = apply_diode_mode(build_network(fm, {}, IsolationMode::diode, 0, 1), 0);
        CHECK_FALSE(r.converged);
    }
}

TEST_CASE("uniform r_max network") {
    const auto g = small(6, 7);
    const ForceMap fm(g);
    for (auto mode : {IsolationMode::virtual_ground, IsolationMode::diode}) {
        const auto bus = column_bus_voltages(fm, {}, mode);
        for (double v : bus) CHECK(std::abs(v - ideal_bus(20'000, g)) <= g.lsb_volts());
    }
    // Floating sneak paths and grounded-row loading move the background; the
    // ordering around the ideal value still holds.
    const auto fl = column_bus_voltages(fm, {}, IsolationMode::floating);
    const auto gr = column_bus_voltages(fm, {}, IsolationMode::grounded_rows);
    for (std::size_t k = 0; k < fl.size(); ++k) {
        CHECK(fl.data()[k] > ideal_bus(20'000, g));
        CHECK(gr.data()[k] < ideal_bus(20'000, g));
    }
}

TEST_CASE("mode ordering and grounded rows bound") {
    std::mt19937_64 rng(21);
    const auto g = small(6, 6);
    for (int trial = 0; trial < 20; ++trial) {
        const auto fm = random_map(g, rng, 0.3);
        const auto v = column_bus_voltages(fm, {}, IsolationMode::virtual_ground);
        const auto d = column_bus_voltages(fm, {}, IsolationMode::diode);
        const auto f = column_bus_voltages(fm, {}, IsolationMode::floating);
        const auto gr = column_bus_voltages(fm, {}, IsolationMode::grounded_rows);
        for (std::size_t k = 0; k < v.size(); ++k) {
            CHECK(v.data()[k] <= d.data()[k] + 1e-9);
            CHECK(d.data()[k] <= f.data()[k] + 1e-9);
            CHECK(gr.data()[k] <= v.data()[k] + 1e-9);
        }
    }
}

TEST_CASE("monotonicity: more force never raises the cell's own readout") {
    std::mt19937_64 rng(33);
    const auto g = small(4, 5);
    for (int trial = 0; trial < 10; ++trial) {
        auto fm = random_map(g, rng, 0.4);
        const std::size_t i = rng() % g.rows, j = rng() % g.cols;
        for (auto mode : kModes) {
            const double before = column_bus_voltages(fm, {}, mode)(i, j);
            auto more = fm;
            more.forces(i, j) += 3.0;
            const double after = column_bus_voltages(more, {}, mode)(i, j);
            // Readout is v_in - bus, so the bus voltage must not drop.
            CHECK(after >= before - 1e-12);
        }
    }
}

TEST_CASE("scan examples on the default mat") {
    MatGeometry g;
    VelostatModel m;
    const Scene empty{g, {}};
    const auto idle = scan_frame(empty, m, IsolationMode::virtual_ground, 0, 0);
    for (auto c : idle.counts) CHECK(c == quantize(ideal_divider_voltage(m.r_max, g), g));
    CHECK(idle.counts(0, 0) == 682);
    CHECK(scan_frame(empty, m, IsolationMode::diode, 0, 0).counts == idle.counts);

    // Sneak paths through the unloaded background pull the floating reading down.
    CHECK(scan_frame(empty, m, IsolationMode::floating, 0, 0).counts(0, 0) == 199);

    Scene one{g, {}};
    Load press;
    press.row = 5;
    press.col = 7;
    press.force = 2.0;
    one.loads.push_back(press);
    const auto f = scan_frame(one, m, IsolationMode::virtual_ground, 3, 300);
    CHECK(f.sequence == 3);
    CHECK(f.timestamp_ms == 300);
    CHECK(f.counts(5, 7) == 93);
    for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j)
            if (i != 5 || j != 7) CHECK(f.counts(i, j) == 682);
}

TEST_CASE("two disjoint loads produce floating ghosts") {
    const auto g = small(8, 8);
    ForceMap fm(g);
    fm.forces(1, 1) = 20.0;
    fm.forces(5, 6) = 20.0;
    const auto v = column_bus_voltages(fm, {}, IsolationMode::virtual_ground);
    const auto f = column_bus_voltages(fm, {}, IsolationMode::floating);
    // (1, 6) and (5, 1) close the sneak loop through both loaded cells.
    CHECK(f(1, 6) - v(1, 6) > 2 * g.lsb_volts());
    CHECK(f(5, 1) - v(5, 1) > 2 * g.lsb_volts());
}

TEST_CASE("virtual ground round trip recovers force") {
    std::mt19937_64 rng(77);
    MatGeometry g;
    VelostatModel m;
    const auto fm = random_map(g, rng, 0.3);
    const auto frame = scan_force_map(fm, m, IsolationMode::virtual_ground, 0, 0);
    for (std::size_t k = 0; k < fm.forces.size(); ++k) {
        const double truth = fm.forces.data()[k];
        const double r = force_to_resistance(truth, m);
        if (r <= m.r_min || r >= m.r_max) continue;
        const double v = frame.counts.data()[k] / double(g.adc_max()) * g.v_in;
        const double got = voltage_to_force(v, g, m).force;
        // One LSB of voltage expressed as force at this operating point.
        const double v_true = ideal_divider_voltage(r, g);
        const double lsb_force =
            std::abs(voltage_to_force(std::max(v_true - g.lsb_volts(), 1e-9), g, m).force - truth);
        CHECK(std::abs(got - truth) <= std::max(0.02 * truth, lsb_force));
    }
}

TEST_CASE("scan noise is seeded") {
    MatGeometry g;
    const Scene empty{g, {}};
    std::mt19937_64 a(4), b(4);
    const auto fa = scan_frame(empty, {}, IsolationMode::virtual_ground, 0, 0, {1.0, &a});
    const auto fb = scan_frame(empty, {}, IsolationMode::virtual_ground, 0, 0, {1.0, &b});
    CHECK(fa == fb);
    bool any_moved = false;
    for (auto c : fa.counts) any_moved |= c != 682;
    CHECK(any_moved);
}

TEST_CASE("scene grammar and rasterization") {
    const auto g = small(8, 8);
    const auto scene = parse_scene(
        "# comment\n"
        "rect row=2 col=2 height=2 width=2 force=8\n"
        "ellipse row=5 col=5 height=3 width=3 force=10 from=1 until=2\n"
        "rect row=7 col=0 force=4 breath_hz=0.5 breath_depth=0.5\n",
        g);
    REQUIRE(scene.loads.size() == 3);

    auto fm = scene.rasterize(0.0);
    // Half-open extent [1, 3): cells 1 and 2 in each axis.
    CHECK(fm.forces(1, 1) == 2.0);
    CHECK(fm.forces(2, 2) == 2.0);
    CHECK(fm.forces(3, 3) == 0.0);
    CHECK(fm.forces(5, 5) == 0.0);
    CHECK(fm.forces(7, 0) == 4.0);

    fm = scene.rasterize(1.5);
    double ellipse_total = 0.0;
    for (auto c : covered_cells(scene.loads[1], g.rows, g.cols)) ellipse_total += fm.forces(c.row, c.col);
    CHECK(ellipse_total == doctest::Approx(10.0));
    CHECK(fm.forces(5, 5) > 0.0);
    CHECK(scene.rasterize(2.0).forces(5, 5) == 0.0);

    // sin(2 pi 0.5 0.5) = 1
    CHECK(scene.rasterize(0.5).forces(7, 0) == doctest::Approx(6.0));

    const auto again = parse_scene(format_scene(scene), g);
    CHECK(format_scene(again) == format_scene(scene));

    CHECK_THROWS_AS(parse_scene("blob row=1 col=1 force=1\n", g), InvalidInput);
    CHECK_THROWS_AS(parse_scene("rect row=1 force=1\n", g), InvalidInput);
    CHECK_THROWS_AS(parse_scene("rect row=1 col=1 force=-1\n", g), InvalidInput);
    CHECK_THROWS_AS(parse_scene("rect row=7 col=7 height=4 force=1\n", g), InvalidInput);
    CHECK_THROWS_AS(parse_scene("rect row=1 col=1 force=1 color=red\n", g), InvalidInput);
    CHECK_THROWS_AS(parse_scene("rect row=x col=1 force=1\n", g), InvalidInput);
}

TEST_CASE("mode names") {
    for (auto mode : kModes) CHECK(parse_mode(mode_name(mode)) == mode);
    CHECK(parse_mode("vg") == IsolationMode::virtual_ground);
    CHECK_THROWS_AS(parse_mode("isolated"), InvalidInput);
}
