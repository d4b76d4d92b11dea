#pragma once

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpsink/binary_io.hpp"
#include "mpsink/error.hpp"
#include "mpsink/grid.hpp"
#include "mpsink/interaction.hpp"
#include "mpsink/solver.hpp"

namespace mpsink {

using json = nlohmann::ordered_json;

struct InitialConfig {
    std::string type = "gaussian"; // gaussian | uniform | file
    std::vector<double> center;
    std::vector<double> weights;
    std::string path;
};

struct FinalCostConfig {
    std::string type = "zero"; // zero | quadratic_bowl | file
    std::vector<double> target;
    double scale = 1.0;
    std::string path;
};

struct KernelConfig {
    std::string type = "zero"; // zero | ball | truncated_coulomb | tabulated_radial | tabulated_file
    double strength = 0.0;
    double radius = 0.0;
    double cap = 0.0;
    std::vector<double> radii;
    std::vector<double> values;
    std::string path;
};

struct PopulationConfig {
    std::string name;
    InitialConfig initial;
    FinalCostConfig final_cost;
};

struct InteractionConfig {
    std::size_t from = 0;
    std::size_t to = 0;
    KernelConfig kernel;
};

struct OutputConfig {
    std::string out_dir = "out";
    std::size_t frame_stride = 1;
    bool emit_diagnostics = true;
    bool log_energies = false;
    double separation_radius = 0.2;
};

struct RunConfig {
    std::vector<std::size_t> points;
    std::vector<Interval> extent;
    double horizon = 1.0;
    std::size_t steps = 16;
    double epsilon = 1.0;
    Boundary boundary = Boundary::reflecting;
    std::vector<PopulationConfig> populations;
    std::vector<InteractionConfig> interactions;
    SolverOptions solver;
    OutputConfig output;
    /// Directory relative file paths are resolved against.
    std::filesystem::path base_dir;
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& path, const std::string& msg) {
    throw Error(ErrorCode::Config, (path.empty() ? std::string("/") : path) + ": " + msg);
}

// Reads the keys of one JSON object and rejects any it did not consume.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) config_error(path_, "expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    std::string child(const std::string& key) const { return path_ + "/" + key; }

    const json& at(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) config_error(child(key), "required key missing");
        return j_.at(key);
    }

    double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
        if (!has(key)) {
            if (!fallback) config_error(child(key), "required key missing");
            seen_.insert(key);
            return *fallback;
        }
        const json& v = at(key);
        if (!v.is_number()) config_error(child(key), "expected a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) config_error(child(key), "must be finite");
        return x;
    }

    double positive(const std::string& key, std::optional<double> fallback = std::nullopt) {
        const double x = number(key, fallback);
        if (!(x > 0.0)) config_error(child(key), "must be > 0");
        return x;
    }

    std::size_t count(const std::string& key, std::optional<std::size_t> fallback = std::nullopt) {
        if (!has(key)) {
            if (!fallback) config_error(child(key), "required key missing");
            seen_.insert(key);
            return *fallback;
        }
        const json& v = at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0) config_error(child(key), "expected a nonnegative integer");
        return static_cast<std::size_t>(v.get<long long>());
    }

    bool flag(const std::string& key, bool fallback) {
        if (!has(key)) {
            seen_.insert(key);
            return fallback;
        }
        const json& v = at(key);
        if (!v.is_boolean()) config_error(child(key), "expected true or false");
        return v.get<bool>();
    }

    std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
        if (!has(key)) {
            if (!fallback) config_error(child(key), "required key missing");
            seen_.insert(key);
            return *fallback;
        }
        const json& v = at(key);
        if (!v.is_string()) config_error(child(key), "expected a string");
        return v.get<std::string>();
    }

    std::string choice(const std::string& key, const std::vector<std::string>& allowed, std::string fallback) {
        const std::string s = text(key, fallback);
        if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
            std::string list;
            for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
            config_error(child(key), "unknown value '" + s + "' (expected one of: " + list + ")");
        }
        return s;
    }

    std::vector<double> numbers(const std::string& key) {
        const json& v = at(key);
        if (!v.is_array()) config_error(child(key), "expected an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) config_error(child(key) + "/" + std::to_string(i), "expected a number");
            out.push_back(v[i].get<double>());
            if (!std::isfinite(out.back())) config_error(child(key) + "/" + std::to_string(i), "must be finite");
        }
        return out;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) config_error(child(key), "unknown key");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline KernelConfig parse_kernel(const json& j, const std::string& path) {
    ObjectReader r(j, path);
    KernelConfig k;
    k.type = r.choice("type", {"zero", "ball", "truncated_coulomb", "tabulated_radial", "tabulated_file"}, "");
    if (k.type == "ball") {
        k.strength = r.number("strength");
        k.radius = r.positive("radius");
        if (k.strength < 0.0) config_error(r.child("strength"), "must be >= 0");
    } else if (k.type == "truncated_coulomb") {
        k.cap = r.positive("cap");
    } else if (k.type == "tabulated_radial") {
        k.radii = r.numbers("radius");
        k.values = r.numbers("value");
        if (k.radii.empty() || k.radii.size() != k.values.size()) {
            config_error(r.child("value"), "radius and value must be nonempty and of equal length");
        }
        if (!std::is_sorted(k.radii.begin(), k.radii.end())) config_error(r.child("radius"), "must be sorted");
    } else if (k.type == "tabulated_file") {
        k.path = r.text("path");
    }
    r.finish();
    return k;
}

inline json describe_kernel(const KernelConfig& k) {
    json j;
    j["type"] = k.type;
    if (k.type == "ball") {
        j["strength"] = k.strength;
        j["radius"] = k.radius;
    } else if (k.type == "truncated_coulomb") {
        j["cap"] = k.cap;
    } else if (k.type == "tabulated_radial") {
        j["radius"] = k.radii;
        j["value"] = k.values;
    } else if (k.type == "tabulated_file") {
        j["path"] = k.path;
    }
    return j;
}

inline std::vector<double> per_axis(ObjectReader& r, const std::string& key, std::size_t dims) {
    const json& v = r.at(key);
    if (v.is_number()) return std::vector<double>(dims, v.get<double>());
    std::vector<double> out = r.numbers(key);
    if (out.size() != dims) config_error(r.child(key), "expected " + std::to_string(dims) + " values");
    return out;
}

} // namespace detail

inline RunConfig parse_config(const json& root, const std::filesystem::path& base_dir = {}) {
    using detail::config_error;
    RunConfig c;
    c.base_dir = base_dir;
    detail::ObjectReader top(root, "");

    {
        detail::ObjectReader g(top.at("grid"), "/grid");
        const json& pts = g.at("points");
        if (!pts.is_array() || pts.empty()) config_error("/grid/points", "expected a nonempty array");
        for (std::size_t a = 0; a < pts.size(); ++a) {
            if (!pts[a].is_number_integer() || pts[a].get<long long>() < 2) {
                config_error("/grid/points/" + std::to_string(a), "expected an integer >= 2");
            }
            c.points.push_back(static_cast<std::size_t>(pts[a].get<long long>()));
        }
        if (g.has("extent")) {
            const json& ext = g.at("extent");
            if (!ext.is_array() || ext.size() != c.points.size()) {
                config_error("/grid/extent", "expected one [lo, hi] pair per axis");
            }
            for (std::size_t a = 0; a < ext.size(); ++a) {
                const std::string p = "/grid/extent/" + std::to_string(a);
                if (!ext[a].is_array() || ext[a].size() != 2 || !ext[a][0].is_number() || !ext[a][1].is_number()) {
                    config_error(p, "expected [lo, hi]");
                }
                const Interval iv{ext[a][0].get<double>(), ext[a][1].get<double>()};
                if (!(iv.hi > iv.lo)) config_error(p, "degenerate interval");
                c.extent.push_back(iv);
            }
        } else {
            c.extent.assign(c.points.size(), Interval{0.0, 1.0});
        }
        g.finish();
    }
    const std::size_t dims = c.points.size();

    c.horizon = top.positive("horizon", 1.0);
    {
        const std::size_t k = top.count("steps");
        if (k < 1) config_error("/steps", "must be >= 1");
        c.steps = k;
    }
    c.epsilon = top.positive("epsilon", 1.0);
    c.boundary = top.choice("boundary", {"reflecting", "truncated"}, "reflecting") == "reflecting"
                     ? Boundary::reflecting
                     : Boundary::truncated;

    const json& pops = top.at("populations");
    if (!pops.is_array() || pops.empty()) config_error("/populations", "expected a nonempty array");
    for (std::size_t i = 0; i < pops.size(); ++i) {
        const std::string base = "/populations/" + std::to_string(i);
        detail::ObjectReader p(pops[i], base);
        PopulationConfig pc;
        pc.name = p.text("name", "population" + std::to_string(i + 1));
        {
            detail::ObjectReader r(p.at("initial"), base + "/initial");
            pc.initial.type = r.choice("type", {"gaussian", "uniform", "file"}, "");
            if (pc.initial.type == "gaussian") {
                pc.initial.center = r.numbers("center");
                if (pc.initial.center.size() != dims) config_error(r.child("center"), "dimension mismatch");
                pc.initial.weights = detail::per_axis(r, "weight", dims);
                for (double w : pc.initial.weights) {
                    if (!(w > 0.0)) config_error(r.child("weight"), "must be > 0");
                }
            } else if (pc.initial.type == "file") {
                pc.initial.path = r.text("path");
            }
            r.finish();
        }
        if (p.has("final_cost")) {
            detail::ObjectReader r(p.at("final_cost"), base + "/final_cost");
            pc.final_cost.type = r.choice("type", {"zero", "quadratic_bowl", "file"}, "");
            if (pc.final_cost.type == "quadratic_bowl") {
                pc.final_cost.target = r.numbers("target");
                if (pc.final_cost.target.size() != dims) config_error(r.child("target"), "dimension mismatch");
                pc.final_cost.scale = r.number("scale", 1.0);
            } else if (pc.final_cost.type == "file") {
                pc.final_cost.path = r.text("path");
            }
            r.finish();
        }
        p.finish();
        c.populations.push_back(std::move(pc));
    }
    const std::size_t n = c.populations.size();

    if (top.has("interactions")) {
        const json& inter = top.at("interactions");
        if (inter.is_object()) {
            // {"all_pairs": kernel} shorthand.
            detail::ObjectReader r(inter, "/interactions");
            const KernelConfig k = detail::parse_kernel(r.at("all_pairs"), "/interactions/all_pairs");
            r.finish();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    if (i != j && k.type != "zero") c.interactions.push_back({i, j, k});
                }
            }
        } else if (inter.is_array()) {
            for (std::size_t e = 0; e < inter.size(); ++e) {
                const std::string base = "/interactions/" + std::to_string(e);
                detail::ObjectReader r(inter[e], base);
                InteractionConfig ic;
                ic.from = r.count("from");
                ic.to = r.count("to");
                if (ic.from >= n) config_error(r.child("from"), "population index out of range");
                if (ic.to >= n) config_error(r.child("to"), "population index out of range");
                if (ic.from == ic.to) config_error(base, "self-interaction is not allowed");
                for (const auto& prev : c.interactions) {
                    if (prev.from == ic.from && prev.to == ic.to) config_error(base, "duplicate pair");
                }
                ic.kernel = detail::parse_kernel(r.at("kernel"), base + "/kernel");
                r.finish();
                if (ic.kernel.type != "zero") c.interactions.push_back(std::move(ic));
            }
        } else {
            config_error("/interactions", "expected an array or {\"all_pairs\": kernel}");
        }
    }

    if (top.has("solver")) {
        detail::ObjectReader s(top.at("solver"), "/solver");
        SolverOptions& o = c.solver;
        o.tol = s.positive("tol", 1e-6);
        o.max_iter = s.count("max_iter", 2000);
        if (o.max_iter < 1) config_error("/solver/max_iter", "must be >= 1");
        o.sweep = s.choice("sweep", {"gauss_seidel", "jacobi"}, "gauss_seidel") == "jacobi" ? SweepOrder::jacobi
                                                                                             : SweepOrder::gauss_seidel;
        o.symmetrize = s.flag("symmetrize", false);
        o.legacy_unweighted = s.flag("legacy_unweighted", false);
        o.literal_signs = s.flag("literal_signs", false);
        o.viscosity_scaled_costs = s.flag("viscosity_scaled_costs", false);
        o.damping = s.positive("damping", 1.0);
        if (o.damping > 1.0) config_error("/solver/damping", "must lie in (0, 1]");
        const std::string ld = s.choice("log_domain", {"auto", "on", "off"}, "auto");
        o.log_domain = ld == "on" ? LogDomainMode::on : ld == "off" ? LogDomainMode::off : LogDomainMode::automatic;
        const std::string cm = s.choice("convolution", {"auto", "dense", "fft"}, "auto");
        o.convolution = cm == "dense" ? ConvolutionMethod::dense
                        : cm == "fft" ? ConvolutionMethod::fft
                                      : ConvolutionMethod::automatic;
        s.finish();
    }

    if (top.has("output")) {
        detail::ObjectReader s(top.at("output"), "/output");
        c.output.out_dir = s.text("out_dir", "out");
        c.output.frame_stride = s.count("frame_stride", 1);
        if (c.output.frame_stride < 1) config_error("/output/frame_stride", "must be >= 1");
        c.output.emit_diagnostics = s.flag("emit_diagnostics", true);
        c.output.log_energies = s.flag("log_energies", false);
        c.output.separation_radius = s.positive("separation_radius", 0.2);
        s.finish();
    }
    top.finish();
    return c;
}

inline RunConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = {}) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::Config, std::string("malformed JSON: ") + e.what());
    }
    return parse_config(root, base_dir);
}

inline RunConfig parse_config_file(const std::filesystem::path& path) {
    std::string text;
    try {
        text = io::read_text(path);
    } catch (const Error& e) {
        throw Error(ErrorCode::Config, e.what());
    }
    return parse_config_text(text, path.parent_path());
}

inline const char* to_string(SweepOrder s) { return s == SweepOrder::jacobi ? "jacobi" : "gauss_seidel"; }

inline const char* to_string(LogDomainMode m) {
    return m == LogDomainMode::on ? "on" : m == LogDomainMode::off ? "off" : "auto";
}

inline const char* to_string(ConvolutionMethod m) {
    return m == ConvolutionMethod::dense ? "dense" : m == ConvolutionMethod::fft ? "fft" : "auto";
}

/// Fully resolved config with every default spelled out; parses back to the same config.
inline json describe(const RunConfig& c) {
    json j;
    json grid;
    grid["points"] = c.points;
    json ext = json::array();
    for (const auto& iv : c.extent) ext.push_back({iv.lo, iv.hi});
    grid["extent"] = ext;
    j["grid"] = grid;
    j["horizon"] = c.horizon;
    j["steps"] = c.steps;
    j["epsilon"] = c.epsilon;
    j["boundary"] = c.boundary == Boundary::reflecting ? "reflecting" : "truncated";
    json pops = json::array();
    for (const auto& p : c.populations) {
        json pj;
        pj["name"] = p.name;
        json init;
        init["type"] = p.initial.type;
        if (p.initial.type == "gaussian") {
            init["center"] = p.initial.center;
            init["weight"] = p.initial.weights;
        } else if (p.initial.type == "file") {
            init["path"] = p.initial.path;
        }
        pj["initial"] = init;
        json fc;
        fc["type"] = p.final_cost.type;
        if (p.final_cost.type == "quadratic_bowl") {
            fc["target"] = p.final_cost.target;
            fc["scale"] = p.final_cost.scale;
        } else if (p.final_cost.type == "file") {
            fc["path"] = p.final_cost.path;
        }
        pj["final_cost"] = fc;
        pops.push_back(pj);
    }
    j["populations"] = pops;
    json inter = json::array();
    for (const auto& e : c.interactions) {
        json ej;
        ej["from"] = e.from;
        ej["to"] = e.to;
        ej["kernel"] = detail::describe_kernel(e.kernel);
        inter.push_back(ej);
    }
    j["interactions"] = inter;
    json s;
    s["tol"] = c.solver.tol;
    s["max_iter"] = c.solver.max_iter;
    s["sweep"] = to_string(c.solver.sweep);
    s["symmetrize"] = c.solver.symmetrize;
    s["legacy_unweighted"] = c.solver.legacy_unweighted;
    s["literal_signs"] = c.solver.literal_signs;
    s["viscosity_scaled_costs"] = c.solver.viscosity_scaled_costs;
    s["damping"] = c.solver.damping;
    s["log_domain"] = to_string(c.solver.log_domain);
    s["convolution"] = to_string(c.solver.convolution);
    j["solver"] = s;
    json o;
    o["out_dir"] = c.output.out_dir;
    o["frame_stride"] = c.output.frame_stride;
    o["emit_diagnostics"] = c.output.emit_diagnostics;
    o["log_energies"] = c.output.log_energies;
    o["separation_radius"] = c.output.separation_radius;
    j["output"] = o;
    return j;
}

/// crc32 of the canonical description, as 8 hex digits.
inline std::string config_hash(const RunConfig& c) { return io::hex32(io::crc32_of(describe(c).dump())); }

namespace detail {

inline std::filesystem::path resolve(const RunConfig& c, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || c.base_dir.empty() ? path : c.base_dir / path;
}

inline InteractionKernel build_kernel(const RunConfig& c, const KernelConfig& k, const GridSpec& grid) {
    if (k.type == "ball") return InteractionKernel(BallIndicator{k.strength, k.radius});
    if (k.type == "truncated_coulomb") return InteractionKernel(TruncatedCoulomb{k.cap});
    if (k.type == "tabulated_radial") return InteractionKernel(TabulatedRadial{k.radii, k.values});
    if (k.type == "tabulated_file") return InteractionKernel(load_tabulated_table(resolve(c, k.path).string(), grid));
    return InteractionKernel();
}

} // namespace detail

/// Grid, initial data, costs and kernels described by the config (reads referenced files).
inline ProblemSpec build_problem(const RunConfig& c) {
    ProblemSpec spec;
    spec.grid = GridSpec(c.points, c.extent);
    spec.horizon = c.horizon;
    spec.steps = c.steps;
    spec.epsilon = c.epsilon;
    spec.boundary = c.boundary;
    const std::size_t m = spec.grid.size();
    for (std::size_t i = 0; i < c.populations.size(); ++i) {
        const PopulationConfig& p = c.populations[i];
        const std::string where = "/populations/" + std::to_string(i);
        if (p.initial.type == "gaussian") {
            spec.rho0.push_back(gaussian_field(spec.grid, p.initial.center, p.initial.weights));
        } else if (p.initial.type == "uniform") {
            spec.rho0.push_back(uniform_field(spec.grid));
        } else {
            ScalarField raw(io::read_f64_file(detail::resolve(c, p.initial.path), m));
            for (double v : raw.values) {
                if (!(v >= 0.0) || !std::isfinite(v)) detail::config_error(where + "/initial/path", "negative or non-finite mass");
            }
            spec.rho0.push_back(normalize(raw));
        }
        ScalarField g(m, 0.0);
        if (p.final_cost.type == "quadratic_bowl") {
            for (std::size_t x = 0; x < m; ++x) {
                double r2 = 0.0;
                for (std::size_t a = 0; a < spec.grid.dims(); ++a) {
                    const double dx = spec.grid.center(a, spec.grid.axis_index(x, a)) - p.final_cost.target[a];
                    r2 += dx * dx;
                }
                g[x] = p.final_cost.scale * r2;
            }
        } else if (p.final_cost.type == "file") {
            g = ScalarField(io::read_f64_file(detail::resolve(c, p.final_cost.path), m));
            for (double v : g.values) {
                if (!std::isfinite(v)) detail::config_error(where + "/final_cost/path", "non-finite cost");
            }
        }
        spec.g.push_back(std::move(g));
    }
    spec.interactions = InteractionMatrix(c.populations.size());
    for (const auto& e : c.interactions) spec.interactions.set(e.from, e.to, detail::build_kernel(c, e.kernel, spec.grid));
    return spec;
}

} // namespace mpsink
