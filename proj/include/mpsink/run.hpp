#pragma once

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "mpsink/binary_io.hpp"
#include "mpsink/config.hpp"
#include "mpsink/diagnostics.hpp"
#include "mpsink/solver.hpp"

namespace mpsink {

inline constexpr const char* kSolverVersion = "0.1.0";
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kPartialMarker = "PARTIAL";

enum ExitCode : int { exit_converged = 0, exit_config = 1, exit_max_iter = 2, exit_diverged = 3 };

inline int exit_code(SolveStatus s) {
    switch (s) {
    case SolveStatus::converged: return exit_converged;
    case SolveStatus::max_iter: return exit_max_iter;
    case SolveStatus::diverged: return exit_diverged;
    }
    return exit_config;
}

/// Time indices that get a frame: multiples of the stride, plus K.
inline std::vector<std::size_t> frame_indices(std::size_t steps, std::size_t stride) {
    require(stride >= 1, ErrorCode::InvalidArgument, "frame stride must be >= 1");
    std::vector<std::size_t> ks;
    for (std::size_t k = 0; k <= steps; k += stride) ks.push_back(k);
    if (ks.back() != steps) ks.push_back(steps);
    return ks;
}

inline std::string frame_file_name(std::size_t population, std::size_t k) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "frames/rho_p%zu_k%04zu.bin", population, k);
    return buf;
}

/// Potentials of all populations as one float64 array ordered (i, k, cell).
inline std::vector<double> flatten_potentials(const PotentialStack& u) {
    std::vector<double> out;
    for (const auto& pop : u.u)
        for (const auto& f : pop) out.insert(out.end(), f.values.begin(), f.values.end());
    return out;
}

inline PotentialStack unflatten_potentials(const std::vector<double>& flat, std::size_t populations,
                                           std::size_t steps, std::size_t cells) {
    require(flat.size() == populations * (steps + 1) * cells, ErrorCode::ShapeMismatch,
            "potential file does not match the problem size");
    PotentialStack u(populations, steps, cells);
    std::size_t at = 0;
    for (auto& pop : u.u)
        for (auto& f : pop)
            for (auto& v : f.values) v = flat[at++];
    return u;
}

inline json energy_json(const EnergyBreakdown& e) {
    json j;
    j["entropic"] = e.entropic;
    j["interaction_total"] = e.interaction_total;
    j["final_cost_total"] = e.final_cost_total;
    j["grand_total"] = e.grand_total;
    j["initial_entropy"] = e.initial_entropy;
    j["eulerian_estimate"] = e.eulerian_estimate;
    j["eulerian_valid"] = e.eulerian_valid;
    if (!e.eulerian_valid) j["eulerian_note"] = "epsilon=1 only";
    return j;
}

/// Energies, terminal barycenters/spreads, separation and forward-consistency residuals.
inline json diagnostics_report(const Solver& solver, double separation_radius) {
    const ProblemSpec& spec = solver.spec();
    const std::size_t n = spec.populations();
    json j;
    try {
        j["energy"] = energy_json(energy_breakdown(solver));
    } catch (const Error& e) {
        j["energy"] = nullptr;
        j["energy_error"] = e.what();
    }
    json pops = json::array();
    for (std::size_t i = 0; i < n; ++i) {
        const MassField& last = solver.marginals().rho[i].back();
        json p;
        p["barycenter_initial"] = barycenter(spec.grid, solver.marginals().rho[i].front());
        p["barycenter_final"] = barycenter(spec.grid, last);
        p["second_moment_final"] = second_moment(spec.grid, last);
        double worst = 0.0;
        for (const auto& f : solver.marginals().rho[i]) worst = std::max(worst, std::abs(f.sum() - 1.0));
        p["max_mass_defect"] = worst;
        pops.push_back(p);
    }
    try {
        const auto residuals = fp_forward_consistency(solver);
        for (std::size_t i = 0; i < n; ++i) {
            pops[i]["fp_residual"] = residuals[i];
            pops[i]["fp_residual_max"] = *std::max_element(residuals[i].begin(), residuals[i].end());
        }
    } catch (const Error& e) {
        j["fp_error"] = e.what();
    }
    j["populations"] = pops;
    json sep = json::array();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i + 1; k < n; ++k) {
            const auto m = separation_metric(solver.marginals().rho, i, k, separation_radius, spec.grid);
            json s;
            s["pair"] = {i, k};
            s["radius"] = separation_radius;
            s["max"] = *std::max_element(m.begin(), m.end());
            s["per_k"] = m;
            sep.push_back(s);
        }
    }
    j["separation"] = sep;
    return j;
}

inline std::string iteration_log_header(std::size_t populations, bool energies) {
    std::string h = "index";
    for (std::size_t i = 0; i < populations; ++i) h += ",marginal_error_p" + std::to_string(i);
    h += ",max_potential_change,convergence_error,wall_time";
    if (energies) {
        for (std::size_t i = 0; i < populations; ++i) h += ",entropic_p" + std::to_string(i);
        h += ",interaction_total,final_cost_total,grand_total";
    }
    return h + "\n";
}

inline std::string iteration_log_row(const IterationRecord& r) {
    std::ostringstream os;
    os << std::setprecision(17) << r.index;
    for (double e : r.marginal_error) os << ',' << e;
    os << ',' << r.max_potential_change << ',' << r.convergence_error << ',' << r.wall_time;
    if (r.energies) {
        for (double e : *r.energies) os << ',' << e;
    }
    os << '\n';
    return os.str();
}

/// Copy whose file references no longer depend on the config's directory.
inline RunConfig with_absolute_paths(RunConfig c) {
    auto fix = [&](std::string& p) {
        if (!p.empty()) p = std::filesystem::absolute(detail::resolve(c, p)).lexically_normal().string();
    };
    for (auto& p : c.populations) {
        fix(p.initial.path);
        fix(p.final_cost.path);
    }
    for (auto& e : c.interactions) fix(e.kernel.path);
    c.base_dir.clear();
    return c;
}

struct RunOutcome {
    SolveStatus status = SolveStatus::max_iter;
    std::size_t iterations = 0;
    std::string message;
    int exit = exit_config;
};

/**
 * Writes frames, potentials, the iteration log, the resolved config, the
 * diagnostics report and finally the manifest. Any I/O error leaves a
 * PARTIAL marker describing it and rethrows.
 */
inline void write_outputs(const std::filesystem::path& out, const RunConfig& config, const Solver& solver,
                          const SolveReport& report) {
    namespace fs = std::filesystem;
    const ProblemSpec& spec = solver.spec();
    const std::size_t n = spec.populations();
    try {
        fs::create_directories(out / "frames");
        fs::remove(out / kPartialMarker);
        fs::remove(out / kManifestName);

        json frames = json::array();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k : frame_indices(spec.steps, config.output.frame_stride)) {
                const auto bytes = io::encode_f64(solver.marginals().rho[i][k].values);
                const std::string name = frame_file_name(i, k);
                io::write_bytes(out / name, bytes);
                json f;
                f["population"] = i;
                f["k"] = k;
                f["time"] = spec.horizon * static_cast<double>(k) / static_cast<double>(spec.steps);
                f["file"] = name;
                f["offset"] = 0;
                f["bytes"] = bytes.size();
                f["crc32"] = io::hex32(io::crc32_of(bytes));
                frames.push_back(f);
            }
        }
        const auto pbytes = io::encode_f64(flatten_potentials(solver.potentials()));
        io::write_bytes(out / "potentials.bin", pbytes);
        io::write_text(out / "config.json", describe(with_absolute_paths(config)).dump(2) + "\n");

        const bool energies = !report.iterations.empty() && report.iterations.front().energies.has_value();
        std::string log = iteration_log_header(n, energies);
        for (const auto& r : report.iterations) log += iteration_log_row(r);
        io::write_text(out / "iterations.csv", log);

        if (config.output.emit_diagnostics) {
            io::write_text(out / "diagnostics.json",
                           diagnostics_report(solver, config.output.separation_radius).dump(2) + "\n");
        }

        json m;
        m["format"] = "mpsink-frames";
        m["solver_version"] = kSolverVersion;
        m["config_hash"] = config_hash(config);
        json grid;
        grid["dims"] = spec.grid.dims();
        grid["points"] = spec.grid.points();
        json ext = json::array();
        for (const auto& iv : spec.grid.extent()) ext.push_back({iv.lo, iv.hi});
        grid["extent"] = ext;
        m["grid"] = grid;
        m["populations"] = n;
        json names = json::array();
        for (const auto& p : config.populations) names.push_back(p.name);
        m["population_names"] = names;
        m["steps"] = spec.steps;
        m["horizon"] = spec.horizon;
        m["epsilon"] = spec.epsilon;
        m["frame_stride"] = config.output.frame_stride;
        m["dtype"] = "float64";
        m["byte_order"] = "little";
        m["layout"] = "row-major, axis 0 slowest";
        m["status"] = to_string(report.status);
        m["iterations"] = report.iterations.size();
        m["frames"] = frames;
        json pot;
        pot["file"] = "potentials.bin";
        pot["bytes"] = pbytes.size();
        pot["crc32"] = io::hex32(io::crc32_of(pbytes));
        pot["order"] = "population, k, cell";
        m["potentials"] = pot;
        m["iteration_log"] = "iterations.csv";
        m["config"] = "config.json";
        io::write_text(out / kManifestName, m.dump(2) + "\n");
    } catch (const std::exception& e) {
        std::error_code ec;
        fs::create_directories(out, ec);
        std::ofstream marker(out / kPartialMarker);
        marker << "output incomplete: " << e.what() << "\n";
        throw Error(ErrorCode::Io, e.what());
    }
}

inline RunOutcome run(const RunConfig& config, const ProblemSpec& spec, const std::filesystem::path& out,
                      std::ostream* progress = nullptr) {
    Solver solver(spec, config.solver);
    const bool energies = config.output.log_energies;
    const SolveReport report = solver.solve([&](const Solver& s, IterationRecord& rec) {
        if (energies) {
            try {
                const EnergyBreakdown e = energy_breakdown(s);
                std::vector<double> row = e.entropic;
                row.push_back(e.interaction_total);
                row.push_back(e.final_cost_total);
                row.push_back(e.grand_total);
                rec.energies = row;
            } catch (const Error&) {
                std::vector<double> row(s.spec().populations() + 3, std::numeric_limits<double>::quiet_NaN());
                rec.energies = row;
            }
        }
        if (progress) {
            *progress << "sweep " << rec.index << "  error " << std::scientific << std::setprecision(3)
                      << rec.convergence_error << std::defaultfloat << "\n";
        }
    });
    write_outputs(out, config, solver, report);
    RunOutcome o;
    o.status = report.status;
    o.iterations = report.iterations.size();
    o.message = report.message;
    o.exit = exit_code(report.status);
    return o;
}

/// Problems found while checking a run directory against its manifest (empty when intact).
inline std::vector<std::string> verify_manifest(const std::filesystem::path& out) {
    std::vector<std::string> problems;
    json m;
    try {
        m = json::parse(io::read_text(out / kManifestName));
    } catch (const std::exception& e) {
        return {std::string(kManifestName) + ": " + e.what()};
    }
    auto check = [&](const json& entry) {
        const std::string file = entry.at("file").get<std::string>();
        std::vector<unsigned char> bytes;
        try {
            bytes = io::read_bytes(out / file);
        } catch (const Error&) {
            problems.push_back(file + ": missing");
            return;
        }
        if (bytes.size() != entry.at("bytes").get<std::size_t>()) {
            problems.push_back(file + ": size " + std::to_string(bytes.size()) + " != " +
                               std::to_string(entry.at("bytes").get<std::size_t>()));
        } else if (io::hex32(io::crc32_of(bytes)) != entry.at("crc32").get<std::string>()) {
            problems.push_back(file + ": checksum mismatch");
        }
    };
    for (const auto& f : m.at("frames")) check(f);
    check(m.at("potentials"));
    return problems;
}

struct LoadedRun {
    RunConfig config;
    ProblemSpec spec;
    PotentialStack potentials;
    json manifest;
};

inline LoadedRun load_run(const std::filesystem::path& out) {
    LoadedRun r;
    r.manifest = json::parse(io::read_text(out / kManifestName));
    r.config = parse_config_file(out / r.manifest.at("config").get<std::string>());
    r.spec = build_problem(r.config);
    const auto flat = io::read_f64_file(out / r.manifest.at("potentials").at("file").get<std::string>(),
                                        r.spec.populations() * (r.spec.steps + 1) * r.spec.grid.size());
    r.potentials = unflatten_potentials(flat, r.spec.populations(), r.spec.steps, r.spec.grid.size());
    return r;
}

/// Rebuilds the solver state from disk and recomputes the diagnostics report.
inline json diagnose(const std::filesystem::path& out) {
    LoadedRun r = load_run(out);
    Solver solver(r.spec, r.config.solver);
    solver.set_potentials(r.potentials);
    json j = diagnostics_report(solver, r.config.output.separation_radius);
    // Frames on disk against marginals recomputed from the potentials.
    double worst = 0.0;
    for (const auto& f : r.manifest.at("frames")) {
        const std::size_t i = f.at("population").get<std::size_t>();
        const std::size_t k = f.at("k").get<std::size_t>();
        const auto values = io::read_f64_file(out / f.at("file").get<std::string>(), r.spec.grid.size());
        for (std::size_t x = 0; x < values.size(); ++x) {
            worst = std::max(worst, std::abs(values[x] - solver.marginals().rho[i][k][x]));
        }
    }
    j["frame_reconstruction_error"] = worst;
    return j;
}

} // namespace mpsink
