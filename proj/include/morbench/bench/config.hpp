#pragma once

// Experiment configuration: a JSON tree on disk plus `--set a.b=value`
// overrides. Each pipeline stage consumes a fixed set of subtrees; see
// stage_inputs() in pipeline.hpp.

#include "morbench/ann_map.hpp"
#include "morbench/core.hpp"
#include "morbench/hdm_burgers.hpp"
#include "morbench/lspg.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

namespace morbench::bench {

using json = nlohmann::ordered_json;

struct MeshSpec {
    int nx = 50, ny = 50;
    double lx = 100.0, ly = 100.0;
};

struct TimeSpec {
    double dt = 0.1;
    int nt = 250;
};

struct SamplingSpec {
    double mu1_lo = ParameterPoint::mu1_min, mu1_hi = ParameterPoint::mu1_max;
    int n1 = 3;
    double mu2_lo = ParameterPoint::mu2_min, mu2_hi = ParameterPoint::mu2_max;
    int n2 = 3;
};

struct PodSpec {
    double energy_eps = 0.05;
    std::string energy_measure = "squared";
    int snapshot_stride = 1;
    int ann_n = 10;
    int ann_n_bar = 140;  ///< clamped to k - ann_n
    std::string svd_method = "auto";
};

struct AnnSpec {
    std::vector<Index> hidden{32, 64, 128, 256, 256};
    double learning_rate = 1e-3;
    int batch_size = 64;
    int max_epochs = 2000;
    int plateau_patience = 50;
    int early_stop_patience = 200;
    double test_fraction = 0.1;
};

struct EcswSpec {
    double tau = 0.01;
    ParameterPoint training_mu{4.25, 0.0225};
    int time_stride = 10;
    long max_inner_solves = 0;
};

struct LspgSpec {
    int max_iters = 20;
    double rel_tol = 1e-6;
    double abs_tol_factor = 1e-6;
    double svd_threshold = 1e-8;
};

struct SliceSpec {
    double y = 50.2;
    double x = 50.2;
    std::vector<double> times{0, 5, 10, 15, 20, 25};
};

struct OnlineSpec {
    std::vector<ParameterPoint> queries{{4.75, 0.02}};
    int rom_repeats = 3;
    int hdm_repeats = 1;
    bool unreduced = false;  ///< also run PROM / PROM-ANN on the full mesh
    LspgSpec lspg;
    SliceSpec slices;
};

struct ExperimentConfig {
    std::string name = "desk";
    MeshSpec mesh;
    TimeSpec time;
    SamplingSpec sampling;
    PodSpec pod;
    AnnSpec ann;
    EcswSpec ecsw;
    OnlineSpec online;
    std::string output_dir = "morbench_out";
    std::uint64_t seed = 42;
    bool deterministic = false;

    Mesh2D make_mesh() const { return Mesh2D(mesh.nx, mesh.ny, mesh.lx, mesh.ly); }
    TimeGrid make_grid() const { return TimeGrid(time.dt, time.nt); }

    TrainConfig train_config() const {
        TrainConfig t;
        t.hidden = ann.hidden;
        t.learning_rate = ann.learning_rate;
        t.batch_size = ann.batch_size;
        t.max_epochs = ann.max_epochs;
        t.plateau_patience = ann.plateau_patience;
        t.early_stop_patience = ann.early_stop_patience;
        t.seed = seed;
        return t;
    }

    GnControls gn_controls() const {
        GnControls c;
        c.max_iters = online.lspg.max_iters;
        c.rel_tol = online.lspg.rel_tol;
        c.abs_tol_factor = online.lspg.abs_tol_factor;
        c.svd_threshold = online.lspg.svd_threshold;
        return c;
    }
};

// ---------------------------------------------------------------------------
// JSON mapping. Reading is strict: unknown keys are rejected so a typo in a
// config file or --set path does not silently fall back to a default.

namespace detail {

class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ValidationError(where() + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.push_back(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception& ex) {
            throw ValidationError(concat(path_, ".", key, ": ", ex.what()));
        }
    }

    const json* child(const char* key) {
        seen_.push_back(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (std::find(seen_.begin(), seen_.end(), k) == seen_.end())
                throw ValidationError(concat("unknown config key '", path_.empty() ? k : path_ + "." + k, "'"));
        }
    }

private:
    std::string where() const { return path_.empty() ? "config root" : "'" + path_ + "'"; }

    const json& j_;
    std::string path_;
    std::vector<std::string> seen_;
};

inline json to_json(const ParameterPoint& mu) { return json::array({mu.mu1, mu.mu2}); }

inline ParameterPoint point_from_json(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw ValidationError(path + ": parameter point must be [mu1, mu2]");
    return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace detail

inline json mesh_json(const MeshSpec& m) { return {{"nx", m.nx}, {"ny", m.ny}, {"lx", m.lx}, {"ly", m.ly}}; }
inline json time_json(const TimeSpec& t) { return {{"dt", t.dt}, {"nt", t.nt}}; }
inline json sampling_json(const SamplingSpec& s) {
    return {{"mu1_lo", s.mu1_lo}, {"mu1_hi", s.mu1_hi}, {"n1", s.n1},
            {"mu2_lo", s.mu2_lo}, {"mu2_hi", s.mu2_hi}, {"n2", s.n2}};
}
inline json pod_json(const PodSpec& p) {
    return {{"energy_eps", p.energy_eps}, {"energy_measure", p.energy_measure}, {"snapshot_stride", p.snapshot_stride}, {"ann_n", p.ann_n},
            {"ann_n_bar", p.ann_n_bar}, {"svd_method", p.svd_method}};
}
inline json ann_json(const AnnSpec& a) {
    return {{"hidden", a.hidden}, {"learning_rate", a.learning_rate}, {"batch_size", a.batch_size},
            {"max_epochs", a.max_epochs}, {"plateau_patience", a.plateau_patience},
            {"early_stop_patience", a.early_stop_patience}, {"test_fraction", a.test_fraction}};
}
inline json ecsw_json(const EcswSpec& e) {
    return {{"tau", e.tau}, {"training_mu", detail::to_json(e.training_mu)},
            {"time_stride", e.time_stride}, {"max_inner_solves", e.max_inner_solves}};
}
inline json online_json(const OnlineSpec& o) {
    json q = json::array();
    for (const auto& mu : o.queries) q.push_back(detail::to_json(mu));
    return {{"queries", q},
            {"rom_repeats", o.rom_repeats},
            {"hdm_repeats", o.hdm_repeats},
            {"unreduced", o.unreduced},
            {"lspg",
             {{"max_iters", o.lspg.max_iters}, {"rel_tol", o.lspg.rel_tol},
              {"abs_tol_factor", o.lspg.abs_tol_factor}, {"svd_threshold", o.lspg.svd_threshold}}},
            {"slices", {{"y", o.slices.y}, {"x", o.slices.x}, {"times", o.slices.times}}}};
}

inline json to_json(const ExperimentConfig& c) {
    return {{"name", c.name},
            {"mesh", mesh_json(c.mesh)},
            {"time", time_json(c.time)},
            {"sampling", sampling_json(c.sampling)},
            {"pod", pod_json(c.pod)},
            {"ann", ann_json(c.ann)},
            {"ecsw", ecsw_json(c.ecsw)},
            {"online", online_json(c.online)},
            {"output_dir", c.output_dir},
            {"seed", c.seed},
            {"deterministic", c.deterministic}};
}

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    detail::ObjectReader root(j, "");
    root.get("name", c.name);
    root.get("output_dir", c.output_dir);
    root.get("seed", c.seed);
    root.get("deterministic", c.deterministic);
    if (const json* m = root.child("mesh")) {
        detail::ObjectReader r(*m, "mesh");
        r.get("nx", c.mesh.nx);
        r.get("ny", c.mesh.ny);
        r.get("lx", c.mesh.lx);
        r.get("ly", c.mesh.ly);
        r.finish();
    }
    if (const json* t = root.child("time")) {
        detail::ObjectReader r(*t, "time");
        r.get("dt", c.time.dt);
        r.get("nt", c.time.nt);
        r.finish();
    }
    if (const json* s = root.child("sampling")) {
        detail::ObjectReader r(*s, "sampling");
        r.get("mu1_lo", c.sampling.mu1_lo);
        r.get("mu1_hi", c.sampling.mu1_hi);
        r.get("n1", c.sampling.n1);
        r.get("mu2_lo", c.sampling.mu2_lo);
        r.get("mu2_hi", c.sampling.mu2_hi);
        r.get("n2", c.sampling.n2);
        r.finish();
    }
    if (const json* p = root.child("pod")) {
        detail::ObjectReader r(*p, "pod");
        r.get("energy_eps", c.pod.energy_eps);
        r.get("energy_measure", c.pod.energy_measure);
        r.get("snapshot_stride", c.pod.snapshot_stride);
        r.get("ann_n", c.pod.ann_n);
        r.get("ann_n_bar", c.pod.ann_n_bar);
        r.get("svd_method", c.pod.svd_method);
        r.finish();
    }
    if (const json* a = root.child("ann")) {
        detail::ObjectReader r(*a, "ann");
        r.get("hidden", c.ann.hidden);
        r.get("learning_rate", c.ann.learning_rate);
        r.get("batch_size", c.ann.batch_size);
        r.get("max_epochs", c.ann.max_epochs);
        r.get("plateau_patience", c.ann.plateau_patience);
        r.get("early_stop_patience", c.ann.early_stop_patience);
        r.get("test_fraction", c.ann.test_fraction);
        r.finish();
    }
    if (const json* e = root.child("ecsw")) {
        detail::ObjectReader r(*e, "ecsw");
        r.get("tau", c.ecsw.tau);
        if (const json* mu = r.child("training_mu"))
            c.ecsw.training_mu = detail::point_from_json(*mu, "ecsw.training_mu");
        r.get("time_stride", c.ecsw.time_stride);
        r.get("max_inner_solves", c.ecsw.max_inner_solves);
        r.finish();
    }
    if (const json* o = root.child("online")) {
        detail::ObjectReader r(*o, "online");
        if (const json* q = r.child("queries")) {
            if (!q->is_array()) throw ValidationError("online.queries must be a list of [mu1, mu2]");
            c.online.queries.clear();
            for (std::size_t i = 0; i < q->size(); ++i)
                c.online.queries.push_back(detail::point_from_json((*q)[i], concat("online.queries[", i, "]")));
        }
        r.get("rom_repeats", c.online.rom_repeats);
        r.get("hdm_repeats", c.online.hdm_repeats);
        r.get("unreduced", c.online.unreduced);
        if (const json* l = r.child("lspg")) {
            detail::ObjectReader rl(*l, "online.lspg");
            rl.get("max_iters", c.online.lspg.max_iters);
            rl.get("rel_tol", c.online.lspg.rel_tol);
            rl.get("abs_tol_factor", c.online.lspg.abs_tol_factor);
            rl.get("svd_threshold", c.online.lspg.svd_threshold);
            rl.finish();
        }
        if (const json* s = r.child("slices")) {
            detail::ObjectReader rs(*s, "online.slices");
            rs.get("y", c.online.slices.y);
            rs.get("x", c.online.slices.x);
            rs.get("times", c.online.slices.times);
            rs.finish();
        }
        r.finish();
    }
    root.finish();
    return c;
}

/// Throws ValidationError on the first inconsistent field.
inline void validate(const ExperimentConfig& c) {
    require(c.mesh.nx >= 2 && c.mesh.ny >= 2, "mesh.nx and mesh.ny must be >= 2");
    require(c.mesh.lx > 0 && c.mesh.ly > 0, "mesh extents must be positive");
    require(c.time.dt > 0 && c.time.nt >= 1, "time.dt must be positive and time.nt >= 1");
    require(c.sampling.n1 >= 1 && c.sampling.n2 >= 1, "sampling grid needs >= 1 point per axis");
    require(c.sampling.mu1_lo <= c.sampling.mu1_hi && c.sampling.mu2_lo <= c.sampling.mu2_hi,
            "sampling bounds must satisfy lo <= hi");
    require(c.pod.energy_eps > 0 && c.pod.energy_eps < 1, "pod.energy_eps must lie in (0, 1)");
    require(c.pod.energy_measure == "squared" || c.pod.energy_measure == "linear",
            "pod.energy_measure must be squared or linear");
    require(c.pod.snapshot_stride >= 1, "pod.snapshot_stride must be >= 1");
    require(c.pod.ann_n >= 1 && c.pod.ann_n_bar >= 1, "pod.ann_n and pod.ann_n_bar must be >= 1");
    require(c.pod.svd_method == "auto" || c.pod.svd_method == "direct" || c.pod.svd_method == "gram",
            "pod.svd_method must be auto, direct or gram");
    require(!c.ann.hidden.empty(), "ann.hidden must list at least one layer width");
    for (Index h : c.ann.hidden) require(h >= 1, "ann.hidden widths must be >= 1");
    require(c.ann.learning_rate > 0, "ann.learning_rate must be positive");
    require(c.ann.batch_size >= 1 && c.ann.max_epochs >= 1, "ann.batch_size and ann.max_epochs must be >= 1");
    require(c.ann.test_fraction > 0 && c.ann.test_fraction < 1, "ann.test_fraction must lie in (0, 1)");
    require(c.ecsw.tau > 0 && c.ecsw.tau < 1, "ecsw.tau must lie in (0, 1)");
    require(c.ecsw.time_stride >= 1 && c.ecsw.time_stride <= c.time.nt,
            "ecsw.time_stride must lie in [1, time.nt]");
    require(!c.online.queries.empty(), "online.queries must not be empty");
    require(c.online.rom_repeats >= 1 && c.online.hdm_repeats >= 1, "timing repeats must be >= 1");
    require(c.online.lspg.max_iters >= 1, "online.lspg.max_iters must be >= 1");
    require(!c.output_dir.empty(), "output_dir must not be empty");
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& ex) {
        throw ValidationError(path + ": " + ex.what());
    }
    return config_from_json(j);
}

inline void save_config(const std::string& path, const ExperimentConfig& c) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << to_json(c).dump(2) << '\n';
}

/// Applies `a.b.c=value`. The value is parsed as JSON when possible
/// (numbers, booleans, lists), otherwise taken as a string. The key must name
/// an existing field.
inline ExperimentConfig apply_override(const ExperimentConfig& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ValidationError("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    std::string pointer;
    std::size_t start = 0;
    while (start <= key.size()) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ValidationError("--set key has an empty component: '" + key + "'");
        pointer += "/" + part;
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    json j = to_json(c);
    const json::json_pointer ptr(pointer);
    if (!j.contains(ptr)) throw ValidationError("unknown config key '" + key + "'");
    j[ptr] = value;
    return config_from_json(j);
}

}  // namespace morbench::bench
