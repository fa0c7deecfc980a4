// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "smartmat/analytics.hpp"
#include "smartmat/session.hpp"
#include "smartmat/simkit.hpp"
#include "smartmat/wire.hpp"

using namespace smartmat;
namespace fs = std::filesystem;

namespace {

const std::string kData = SMARTMAT_DATA_DIR;
const std::string kCli = SMARTMAT_CLI;

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) detail << "first failure: " << what << "; ";
        pass = pass && ok;
    }
};

MatGeometry square(std::size_t n) {
    MatGeometry g;
    g.rows = g.cols = n;
    return g;
}

double log_uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::exp(std::uniform_real_distribution<double>(std::log(lo), std::log(hi))(rng));
}

// Random rectangles with integer extents, kept inside the grid.
sim::Scene random_scene(const MatGeometry& g, std::mt19937_64& rng, int loads, double f_lo, double f_hi) {
    sim::Scene s{g, {}};
    for (int k = 0; k < loads; ++k) {
        sim::Load l;
        l.height = double(1 + rng() % 3);
        l.width = double(1 + rng() % 3);
        l.row = double(rng() % (g.rows - std::size_t(l.height) + 1)) + (l.height - 1) / 2;
        l.col = double(rng() % (g.cols - std::size_t(l.width) + 1)) + (l.width - 1) / 2;
        l.force = log_uniform(rng, f_lo, f_hi) * l.height * l.width;
        s.loads.push_back(l);
    }
    s.validate();
    return s;
}

dsp::Calibration idle_calibration(const MatGeometry& g, const VelostatModel& m, sim::IsolationMode mode) {
    const auto idle = sim::scan_force_map(ForceMap(g), m, mode, 0, 0);
    return dsp::calibrate(std::span(&idle, 1));
}

// Largest force change produced by moving the readout voltage one LSB.
double lsb_force(double v, const MatGeometry& g, const VelostatModel& m) {
    const double f = sim::voltage_to_force(v, g, m).force;
    const double lo = sim::voltage_to_force(std::max(0.0, v - g.lsb_volts()), g, m).force;
    const double hi = sim::voltage_to_force(std::min(g.v_in, v + g.lsb_volts()), g, m).force;
    return std::max(std::abs(lo - f), std::abs(hi - f));
}

int run_cli(const std::string& args) {
    const int status = std::system((kCli + " " + args + " 2>/dev/null").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> analyze_lines(std::span<const std::uint8_t> bytes,
                                       std::vector<analytics::AlarmEvent>* alarms = nullptr) {
    auto contents = session::parse_session(bytes);
    std::vector<std::string> lines;
    session::SessionAnalyzer a(contents.header, session::analysis_config_from(contents.header.config), nullptr,
                               [&](const std::string& l) { lines.push_back(l); });
    a.consume({std::move(contents.frames), std::move(contents.diagnostics)});
    a.finish();
    if (alarms) *alarms = a.alarms();
    return lines;
}

// ---------------------------------------------------------------------------

Outcome body_pressure() {
    Outcome o;
    const double a = body_pressure_estimate(80, 5100), b = body_pressure_estimate(80, 350);
    o.require(std::abs(a - 0.22) <= 0.01, "80 kg over 5100 cm2");
    o.require(std::abs(b - 3.13) <= 0.15, "80 kg over 350 cm2");
    o.detail << "80 kg/5100 cm2 = " << a << " psi, 80 kg/350 cm2 = " << b << " psi";
    return o;
}

Outcome divider_round_trip() {
    Outcome o;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_exact = 0.0, worst_lsb = 0.0;
    for (int k = 0; k < 1000; ++k) {
        VelostatModel m;
        m.rho_k = log_uniform(rng, 200, 20'000);
        m.r_min = log_uniform(rng, 50, 1'000);
        m.r_max = m.r_min * log_uniform(rng, 5, 200);
        MatGeometry g = square(1 + rng() % 64);
        g.r_fixed = log_uniform(rng, 1'000, 100'000);
        g.v_in = 3.0 + 2.0 * u(rng);
        m.validate();
        g.validate();

        const double f = log_uniform(rng, m.min_force() * (1 + 1e-6), m.max_force() * (1 - 1e-6));
        const double v = sim::ideal_divider_voltage(sim::force_to_resistance(f, m), g);
        const auto exact = sim::voltage_to_force(v, g, m);
        const double rel = std::abs(exact.force - f) / f;
        worst_exact = std::max(worst_exact, rel);
        o.require(!exact.saturated && rel <= 1e-9, "unquantized round trip");

        const double vq = sim::quantize(v, g) * g.lsb_volts();
        const double fq = sim::voltage_to_force(vq, g, m).force;
        const double tol = lsb_force(v, g, m);
        worst_lsb = std::max(worst_lsb, std::abs(fq - f) / tol);
        o.require(std::abs(fq - f) <= tol, "quantized round trip");
    }
    o.detail << "1000 samples, worst relative error " << worst_exact << ", worst quantized error "
             << worst_lsb << " LSB-equivalent";
    return o;
}

Outcome crosstalk_ordering() {
    Outcome o;
    // Hand nodal analysis, 2x2: all cells 10 kOhm gives 10k || 30k on the sense
    // column, so the bus sits at 5 * 10 / 17.5 = 20/7 V.
    {
        const auto g = square(2);
        VelostatModel m;
        ForceMap fm(g);
        for (auto& f : fm.forces) f = m.rho_k / 10'000;
        const auto bus = sim::column_bus_voltages(fm, m, sim::IsolationMode::floating);
        for (double v : bus) o.require(std::abs(v - 20.0 / 7.0) <= 1e-12, "2x2 oracle");
        const auto vg = sim::column_bus_voltages(fm, m, sim::IsolationMode::virtual_ground);
        for (double v : vg) o.require(std::abs(v - 2.5) <= 1e-12, "2x2 virtual ground");
    }
    std::mt19937_64 rng(3);
    const auto g = square(8);
    VelostatModel m;
    const double lsb = g.lsb_volts();
    double worst_ghost = 1e9;
    for (int k = 0; k < 50; ++k) {
        const auto scene = random_scene(g, rng, 2 + int(rng() % 4), 1.0, 150.0);
        const auto fm = scene.rasterize();
        const auto vg = sim::column_bus_voltages(fm, m, sim::IsolationMode::virtual_ground);
        const auto di = sim::column_bus_voltages(fm, m, sim::IsolationMode::diode);
        const auto fl = sim::column_bus_voltages(fm, m, sim::IsolationMode::floating);
        const auto gr = sim::column_bus_voltages(fm, m, sim::IsolationMode::grounded_rows);
        double ghost = 0.0;
        for (std::size_t c = 0; c < fm.forces.size(); ++c) {
            o.require(vg.data()[c] <= di.data()[c] + lsb, "virtual_ground <= diode");
            o.require(di.data()[c] <= fl.data()[c] + lsb, "diode <= floating");
            o.require(gr.data()[c] <= vg.data()[c] + lsb, "grounded_rows <= virtual_ground");
            if (fm.forces.data()[c] == 0.0) ghost = std::max(ghost, (fl.data()[c] - vg.data()[c]) / lsb);
        }
        o.require(ghost > 2.0, "floating ghost above 2 LSB");
        worst_ghost = std::min(worst_ghost, ghost);
    }
    o.detail << "2x2 oracle ok, 50 scenes ordered, smallest per-scene max ghost " << worst_ghost << " LSB";
    return o;
}

double ghost_pressure(const PressureImage& img, std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) {
    double total = 0.0;
    for (std::size_t i = 0; i < img.pressures.rows(); ++i)
        for (std::size_t j = 0; j < img.pressures.cols(); ++j)
            if (!(i == r0 && j == c0) && !(i == r1 && j == c1)) total += img.pressures(i, j);
    return total;
}

Outcome pipeline() {
    Outcome o;
    VelostatModel m;
    const auto g = square(16);
    const auto cal = idle_calibration(g, m, sim::IsolationMode::virtual_ground);
    std::mt19937_64 rng(4);
    std::size_t checked = 0;
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const auto scene = random_scene(g, rng, 1 + int(rng() % 6), 0.15, 190.0);
        const auto truth = scene.rasterize();
        const auto frame = sim::scan_frame(scene, m, sim::IsolationMode::virtual_ground, std::uint32_t(k), 0);
        const auto decoded = wire::decode_stream(wire::encode_frame(frame, g));
        o.require(decoded.frames.size() == 1 && decoded.frames[0].frame == frame, "wire transport");
        const auto img = dsp::reconstruct(decoded.frames[0].frame, g, cal, m, {1, 1, {}});
        for (std::size_t c = 0; c < truth.forces.size(); ++c) {
            const double f = truth.forces.data()[c];
            const double got = img.pressures.data()[c] * 1000.0 * g.cell_area_m2();
            if (f == 0.0) {
                o.require(got == 0.0, "unloaded cell reads zero");
                continue;
            }
            if (f <= m.min_force() || f >= m.max_force()) continue;
            const double v = sim::ideal_divider_voltage(sim::force_to_resistance(f, m), g);
            const double tol = std::max(0.02 * f, lsb_force(v, g, m));
            // Near r_min one count spans tens of newtons; a reading that lands
            // in the clamped bin can sit exactly on the 1 LSB band.
            worst = std::max(worst, std::abs(got - f) / tol);
            o.require(std::abs(got - f) <= tol * (1 + 1e-12), "per-cell force within max(2%, 1 LSB)");
            ++checked;
        }
    }

    // Floating mode, two single-cell presses at least 3 rows and 3 columns apart.
    const auto fcal = idle_calibration(g, m, sim::IsolationMode::floating);
    double worst_ratio = 0.0;
    for (int k = 0; k < 200; ++k) {
        std::size_t r0, c0, r1, c1;
        do {
            r0 = rng() % 16, c0 = rng() % 16, r1 = rng() % 16, c1 = rng() % 16;
        } while (std::max(r0, r1) - std::min(r0, r1) < 3 || std::max(c0, c1) - std::min(c0, c1) < 3);
        ForceMap fm(g);
        fm.forces(r0, c0) = log_uniform(rng, 0.5, 150);
        fm.forces(r1, c1) = log_uniform(rng, 0.5, 150);
        const auto frame = sim::scan_force_map(fm, m, sim::IsolationMode::floating, 0, 0);
        const double plain = ghost_pressure(dsp::reconstruct(frame, g, fcal, m, {1, 1, {}}), r0, c0, r1, c1);
        const double filtered = ghost_pressure(dsp::reconstruct(frame, g, fcal, m, {3, 1, {}}), r0, c0, r1, c1);
        o.require(filtered < plain, "median reduces ghost pressure");
        worst_ratio = std::max(worst_ratio, filtered / plain);
    }
    o.detail << checked << " loaded cells, worst error " << worst << " of tolerance; 200 floating two-press scenes, "
             << "worst filtered/unfiltered ghost ratio " << worst_ratio;
    return o;
}

Outcome respiration() {
    Outcome o;
    const auto g = square(16);
    VelostatModel m;
    const auto scene = sim::load_scene(kData + "/scenes/breathing.scene", g);

    session::SimulationRequest req;
    req.scene = scene;
    req.duration_s = 60;
    const auto bytes = session::simulate_session(req);
    auto contents = session::parse_session(bytes);
    session::SessionAnalyzer a(contents.header, session::analysis_config_from(contents.header.config), nullptr,
                               [](const std::string&) {});
    a.consume({std::move(contents.frames), std::move(contents.diagnostics)});
    a.finish();
    const auto r = a.respiration();
    o.require(r && r->has_signal && std::abs(r->rate_bpm - 15.0) <= 0.5, "clean session rate");
    o.detail << "clean session " << (r ? r->rate_bpm : 0.0) << " bpm; ";

    // 10 dB SNR relative to the breathing component of the conductance series.
    std::vector<double> clean;
    for (std::uint32_t k = 0; k < 600; ++k)
        clean.push_back(analytics::conductance_sum(
            sim::scan_frame(scene, m, sim::IsolationMode::virtual_ground, k, k * 100), g, m));
    double mean = 0.0, power = 0.0;
    for (double x : clean) mean += x / double(clean.size());
    for (double x : clean) power += (x - mean) * (x - mean) / double(clean.size());
    const double sigma = std::sqrt(power / 10.0);
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, sigma);
        auto x = clean;
        for (auto& v : x) v += noise(rng);
        const auto est = analytics::respiration_rate(x, 10.0);
        hits += est.has_signal && std::abs(est.rate_bpm - 15.0) <= 1.0;
    }
    o.require(hits >= 95, "10 dB SNR seeds within 1 bpm");
    o.detail << hits << "/100 noisy seeds within 15 +/- 1 bpm";
    return o;
}

Outcome alarms() {
    Outcome o;
    const auto conf = KeyValueConfig::load(kData + "/scenes/dwell.conf");
    const auto g = geometry_from_config(conf);
    session::SimulationRequest req;
    req.scene = sim::load_scene(kData + "/scenes/dwell.scene", g);
    req.duration_s = 32;
    req.seed = 6;
    req.noise_lsb = 1.0;
    req.config = conf;

    // Hand ledger (1 s threshold granularity, 10 Hz frames):
    //   region 0:  onset 1 s, fires 11 s;
    //   region 10: onset 5 s, the 1 s gap is shorter than relief, fires 15 s;
    //   region 3:  loaded 2..11.9 s, dwell tops out at 9.8 s, no event;
    //   region 0 again from 25 s: only 5 s of dwell, no event.
    const std::vector<analytics::AlarmEvent> ledger{{0, 1000, 10000, 11000}, {10, 5000, 10000, 15000}};
    const auto bytes = session::simulate_session(req);
    std::vector<analytics::AlarmEvent> got;
    const auto lines = analyze_lines(bytes, &got);
    o.require(got == ledger, "dwell ledger");

    // Relieved one frame before the threshold.
    auto eps = req;
    eps.scene = sim::parse_scene(
        "rect row=1.5 col=1.5 height=4 width=4 force=200 from=1 until=10.95\n"
        "rect row=1.5 col=1.5 height=4 width=4 force=200 from=14 until=23.95\n",
        g);
    std::vector<analytics::AlarmEvent> none;
    analyze_lines(session::simulate_session(eps), &none);
    o.require(none.empty(), "threshold - epsilon gives no event");

    // Replay: same request gives the same bytes and the same report, and the
    // streaming path matches the batch path.
    o.require(session::simulate_session(req) == bytes, "simulation replay");
    o.require(analyze_lines(bytes) == lines, "analysis replay");
    const auto dir = fs::temp_directory_path() / ("smartmat_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    session::write_file(dir / "dwell.bin", bytes);
    const auto s = (dir / "dwell.bin").string();
    const bool ran = run_cli("analyze " + s + " --templates none --out " + (dir / "a.jsonl").string()) == 0 &&
                     run_cli("analyze " + s + " --templates none --out " + (dir / "b.jsonl").string()) == 0 &&
                     run_cli("live - --templates none --out " + (dir / "l.jsonl").string() + " < " + s) == 0;
    o.require(ran, "cli runs");
    const auto a = slurp(dir / "a.jsonl");
    o.require(!a.empty() && a == slurp(dir / "b.jsonl") && a == slurp(dir / "l.jsonl"), "cli replay byte-identical");
    fs::remove_all(dir);

    o.detail << got.size() << " events match the ledger, " << none.size()
             << " events for threshold - epsilon, batch/stream/replay reports identical";
    return o;
}

Outcome wire_robustness() {
    Outcome o;
    std::mt19937_64 rng(7);
    auto random_frame = [&](const MatGeometry& g, std::uint32_t seq) {
        RawFrame f{seq, static_cast<std::uint32_t>(rng()), Grid<std::uint16_t>(g.rows, g.cols)};
        for (auto& c : f.counts) c = static_cast<std::uint16_t>(rng() % 1024);
        return f;
    };
    for (std::uint32_t k = 0; k < 10'000; ++k) {
        MatGeometry g;
        g.rows = 1 + rng() % 128;
        g.cols = 1 + rng() % 68;
        const auto f = random_frame(g, k);
        const auto out = wire::decode_stream(wire::encode_frame(f, g));
        o.require(out.frames.size() == 1 && out.frames[0].frame == f, "codec round trip");
    }

    std::size_t sent_total = 0, recovered_total = 0;
    bool crashed = false;
    for (int trial = 0; trial < 300; ++trial) {
        MatGeometry g;
        g.rows = 1 + rng() % 16;
        g.cols = 1 + rng() % 16;
        std::vector<RawFrame> intact;
        std::vector<std::uint8_t> bytes;
        for (std::uint32_t s = 0; s < 40; ++s) {
            for (std::size_t n = rng() % 3 ? 0 : rng() % 64; n > 0; --n) {
                const auto r = rng() % 4;
                bytes.push_back(r == 0 ? 0x4D : r == 1 ? 0x54 : static_cast<std::uint8_t>(rng()));
            }
            const auto f = random_frame(g, s);
            auto e = wire::encode_frame(f, g);
            if (rng() % 8 == 0) e[rng() % e.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
            else intact.push_back(f);
            bytes.insert(bytes.end(), e.begin(), e.end());
        }
        try {
            wire::StreamDecoder dec;
            wire::StreamDecoder::Output out;
            for (std::size_t pos = 0; pos < bytes.size();) {
                const std::size_t n = std::min<std::size_t>(1 + rng() % 200, bytes.size() - pos);
                dec.feed(std::span(bytes).subspan(pos, n), out);
                pos += n;
            }
            dec.finish(out);
            // Every intact frame must appear, in order.
            std::size_t next = 0;
            for (const auto& d : out.frames)
                if (next < intact.size() && d.frame == intact[next]) ++next;
            o.require(next == intact.size(), "no intact frame lost");
            sent_total += intact.size();
            recovered_total += next;
        } catch (const std::exception&) {
            crashed = true;
        }
    }
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::uint8_t> junk(rng() % 5000);
        for (auto& b : junk) b = static_cast<std::uint8_t>(rng() % 3 == 0 ? 0x4D : rng());
        try {
            wire::decode_stream(junk);
        } catch (const std::exception&) {
            crashed = true;
        }
    }
    o.require(!crashed, "decoder never throws on arbitrary input");
    o.detail << "10000 random frames bit-exact; fuzz recovered " << recovered_total << "/" << sent_total
             << " intact frames";
    return o;
}

Outcome posture() {
    Outcome o;
    const auto dir = kData + "/templates";
    const auto g = geometry_from_config(KeyValueConfig::load(dir + "/mat.conf"));
    const auto templates = session::load_templates(dir, {});
    VelostatModel m;
    double min_conf = 1.0;
    for (auto p : analytics::kTemplatePostures) {
        auto scene = sim::load_scene(dir + "/" + std::string(analytics::posture_name(p)) + ".scene", g);
        const auto c = analytics::classify_posture(session::scene_features(scene, m, {}), templates);
        o.require(c.label == p && c.confidence > 0.0 && c.distance < templates.reject_radius, "template self-class");
        min_conf = std::min(min_conf, c.confidence);

        // 3x through the whole chain (forces), and 3x on the reconstructed pressures.
        const auto idle = sim::scan_force_map(ForceMap(g), m, sim::IsolationMode::virtual_ground, 0, 0);
        const auto cal = dsp::calibrate(std::span(&idle, 1));
        auto img = dsp::reconstruct(sim::scan_frame(scene, m, sim::IsolationMode::virtual_ground, 0, 0), g, cal, m, {});
        for (auto& pr : img.pressures) pr *= 3;
        img.zone_labels = dsp::label_zones(img, m);
        o.require(analytics::classify_posture(analytics::extract_features(img), templates).label == p,
                  "3x pressures keep the label");
        for (auto& l : scene.loads) l.force *= 3;
        o.require(analytics::classify_posture(session::scene_features(scene, m, {}), templates).label == p,
                  "3x forces keep the label");
    }
    o.detail << "4 templates self-classify, lowest confidence " << min_conf << "; ";

    // Red zones match the cells loaded past the red threshold. The 3x3 median
    // erodes features narrower than 3 cells and fills concave corners, so
    // congruence is judged on the unfiltered image; the filtered figures are
    // reported for reference.
    const auto mat = square(16);
    const auto cal = idle_calibration(mat, m, sim::IsolationMode::virtual_ground);
    const double red = dsp::red_force(m);
    auto iou = [&](const ForceMap& truth, const PressureImage& img, std::size_t& spill) {
        std::size_t inter = 0, uni = 0;
        spill = 0;
        for (std::size_t c = 0; c < truth.forces.size(); ++c) {
            const bool want = truth.forces.data()[c] > red;
            const bool got = img.zone_labels.data()[c] == Zone::red;
            inter += want && got;
            uni += want || got;
            spill += got && truth.forces.data()[c] == 0.0;
        }
        return uni && inter ? double(inter) / double(uni) : 0.0;
    };
    for (const char* name : {"hands", "feet", "face"}) {
        const auto scene = sim::load_scene(kData + "/scenes/" + name + ".scene", mat);
        const auto truth = scene.rasterize();
        const auto frame = sim::scan_frame(scene, m, sim::IsolationMode::virtual_ground, 0, 0);
        std::size_t spill = 0, filtered_spill = 0;
        const double plain = iou(truth, dsp::reconstruct(frame, mat, cal, m, {1, 1, {}}), spill);
        const double filtered = iou(truth, dsp::reconstruct(frame, mat, cal, m, {}), filtered_spill);
        o.require(spill == 0 && plain >= 0.9, std::string(name) + " red zones match footprint");
        o.detail << name << " IoU " << plain << " (median " << filtered << ", " << filtered_spill
                 << " cells outside) ";
    }
    return o;
}

}  // namespace

int main() {
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"body-pressure figures", body_pressure},
        {"divider round-trip", divider_round_trip},
        {"crosstalk ordering", crosstalk_ordering},
        {"pipeline correctness", pipeline},
        {"respiration", respiration},
        {"alarm semantics", alarms},
        {"wire robustness", wire_robustness},
        {"posture", posture},
    };
    int failures = 0, id = 0;
    for (const auto& [name, check] : criteria) {
        ++id;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "exception: " << e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%d %s %s (%.2f s): %s\n", id, o.pass ? "PASS" : "FAIL", name, secs, o.detail.str().c_str());
        std::fflush(stdout);
        failures += !o.pass;
    }
    return failures == 0 ? 0 : 1;
}
