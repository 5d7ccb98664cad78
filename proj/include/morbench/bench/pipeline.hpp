#pragma once

// Stage pipeline hdm -> pod -> train -> ecsw -> online -> report.
//
// Each stage owns <output_dir>/<stage>/ and finishes by writing stamp.json:
// its cache key and a SHA-256 of every file it produced. The key hashes the
// config subtrees the stage consumes together with the keys of the stages it
// reads from, so editing a field invalidates exactly the stages downstream of
// its consumer. A stage whose stamp matches (key and file hashes) is reused.

#include "morbench/ann_map.hpp"
#include "morbench/bench/analysis.hpp"
#include "morbench/bench/config.hpp"
#include "morbench/bench/hash.hpp"
#include "morbench/ecsw.hpp"
#include "morbench/hdm_burgers.hpp"
#include "morbench/lspg.hpp"
#include "morbench/manifold.hpp"
#include "morbench/snapshots_pod.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace morbench::bench {

namespace fs = std::filesystem;

enum class Stage { hdm, pod, train, ecsw, online, report };

inline constexpr std::array<Stage, 6> kAllStages{Stage::hdm,  Stage::pod,    Stage::train,
                                                 Stage::ecsw, Stage::online, Stage::report};

inline std::string stage_name(Stage s) {
    switch (s) {
        case Stage::hdm: return "hdm";
        case Stage::pod: return "pod";
        case Stage::train: return "train";
        case Stage::ecsw: return "ecsw";
        case Stage::online: return "online";
        case Stage::report: return "report";
    }
    return "?";
}

inline Stage parse_stage(const std::string& s) {
    for (Stage st : kAllStages)
        if (stage_name(st) == s) return st;
    throw ValidationError("unknown stage '" + s + "' (expected hdm, pod, train, ecsw, online, report or all)");
}

/// Stages whose artifacts `s` reads directly.
inline std::vector<Stage> stage_dependencies(Stage s) {
    switch (s) {
        case Stage::hdm: return {};
        case Stage::pod: return {Stage::hdm};
        case Stage::train: return {Stage::hdm, Stage::pod};
        case Stage::ecsw: return {Stage::hdm, Stage::pod, Stage::train};
        case Stage::online: return {Stage::pod, Stage::train, Stage::ecsw};
        case Stage::report: return {Stage::online};
    }
    return {};
}

/// The part of the configuration a stage consumes.
inline json stage_inputs(const ExperimentConfig& c, Stage s) {
    switch (s) {
        case Stage::hdm:
            return {{"mesh", mesh_json(c.mesh)}, {"time", time_json(c.time)}, {"sampling", sampling_json(c.sampling)}};
        case Stage::pod: return {{"pod", pod_json(c.pod)}};
        case Stage::train: return {{"ann", ann_json(c.ann)}, {"seed", c.seed}};
        case Stage::ecsw: return {{"ecsw", ecsw_json(c.ecsw)}};
        case Stage::online: return {{"online", online_json(c.online)}};
        case Stage::report: return json::object();
    }
    return json::object();
}

inline std::map<Stage, std::string> stage_keys(const ExperimentConfig& c) {
    std::map<Stage, std::string> keys;
    for (Stage s : kAllStages) {
        std::string material = "morbench-stage-v1|" + stage_name(s) + "|" + stage_inputs(c, s).dump();
        for (Stage d : stage_dependencies(s)) material += "|" + stage_name(d) + "=" + keys.at(d);
        keys[s] = sha256_hex(material);
    }
    return keys;
}

struct StageResult {
    Stage stage;
    bool reused = false;
    std::string key;
    double seconds = 0.0;
};

/// Offline quantities the online stage needs for one reduced model.
struct ReducedModel {
    std::string name;
    Decoder decoder;
    std::optional<Cubature> cubature;  ///< empty: full-mesh LSPG
};

class Pipeline {
public:
    explicit Pipeline(ExperimentConfig cfg, bool force = false)
        : cfg_(std::move(cfg)), force_(force), keys_(stage_keys(cfg_)) {
        validate(cfg_);
    }

    const ExperimentConfig& config() const { return cfg_; }
    fs::path root() const { return fs::path(cfg_.output_dir); }
    fs::path dir(Stage s) const { return root() / stage_name(s); }
    const std::string& key(Stage s) const { return keys_.at(s); }

    /// True when `s` has a stamp matching the current key and intact outputs.
    bool up_to_date(Stage s) const {
        const auto stamp = read_stamp(s);
        if (!stamp || stamp->value("key", "") != key(s)) return false;
        for (const auto& [file, digest] : stamp->at("outputs").items()) {
            const fs::path p = dir(s) / file;
            if (!fs::exists(p) || file_sha256(p.string()) != digest.get<std::string>()) return false;
        }
        return true;
    }

    StageResult run(Stage s) {
        const auto t0 = std::chrono::steady_clock::now();
        StageResult res{s, false, key(s), 0.0};
        if (!force_ && up_to_date(s)) {
            res.reused = true;
            log::info("stage ", stage_name(s), ": up to date, reusing ", dir(s).string());
            return res;
        }
        for (Stage d : stage_dependencies(s)) require_stage(s, d);
        fs::create_directories(dir(s));
        fs::remove(dir(s) / "stamp.json");
        save_config((root() / "config.json").string(), cfg_);
        log::info("stage ", stage_name(s), ": running");
        std::vector<std::string> outputs;
        switch (s) {
            case Stage::hdm: outputs = run_hdm(); break;
            case Stage::pod: outputs = run_pod(); break;
            case Stage::train: outputs = run_train(); break;
            case Stage::ecsw: outputs = run_ecsw(); break;
            case Stage::online: outputs = run_online(); break;
            case Stage::report: outputs = run_report(); break;
        }
        write_stamp(s, outputs);
        res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log::info("stage ", stage_name(s), ": done in ", res.seconds, " s");
        return res;
    }

    std::vector<StageResult> run_all() {
        std::vector<StageResult> out;
        for (Stage s : kAllStages) out.push_back(run(s));
        return out;
    }

    // --- artifact accessors (used by the stages and by tests) ---------------

    BurgersHdm make_hdm() const { return BurgersHdm(cfg_.make_mesh()); }

    /// Benchmark reference state: zero.
    Vector u_ref() const { return Vector::Zero(cfg_.make_mesh().num_dofs()); }

    SamplingPlan sampling_plan() const {
        const auto& s = cfg_.sampling;
        return SamplingPlan::uniform_grid(s.mu1_lo, s.mu1_hi, s.n1, s.mu2_lo, s.mu2_hi, s.n2,
                                          cfg_.pod.snapshot_stride);
    }

    fs::path run_file(std::size_t i) const {
        return dir(Stage::hdm) / concat("run_", std::setw(3), std::setfill('0'), i, ".snap");
    }

    SnapshotMatrix load_snapshots() const {
        const SamplingPlan plan = sampling_plan();
        SnapshotMatrixBuilder b(u_ref(), plan.stride,
                                static_cast<Index>(plan.points.size()) * (cfg_.time.nt / plan.stride + 1));
        for (std::size_t i = 0; i < plan.points.size(); ++i) {
            const SnapshotFile f = read_snapshot_file(run_file(i).string());
            check_run_header(f.header, plan.points[i], run_file(i));
            b.add_run(f.header.mu, f.frames);
        }
        return std::move(b).finish();
    }

    RobPair load_rob(const std::string& which) const {
        return read_rob_file((dir(Stage::pod) / ("rob_" + which + ".bin")).string());
    }

    std::shared_ptr<const MlpMap> load_network() const {
        return std::make_shared<const MlpMap>(read_mlp_file((dir(Stage::train) / "mlp.bin").string()));
    }

    Decoder affine_decoder() const { return Decoder::affine(u_ref(), load_rob("hprom").V); }

    Decoder ann_decoder() const {
        RobPair rob = load_rob("hprom_ann");
        return Decoder::ann(u_ref(), std::move(rob.V), std::move(rob.V_bar), load_network());
    }

    Cubature load_cubature(const std::string& model_tag) const {
        return read_cubature_csv((dir(Stage::ecsw) / ("cubature_" + model_tag + ".csv")).string(),
                                 cfg_.make_mesh());
    }

    std::vector<ReducedModel> reduced_models() const {
        std::vector<ReducedModel> out;
        const Decoder aff = affine_decoder();
        const Decoder ann = ann_decoder();
        out.push_back({"HPROM", aff, load_cubature("hprom")});
        out.push_back({"HPROM-ANN", ann, load_cubature("hprom_ann")});
        if (cfg_.online.unreduced) {
            out.push_back({"PROM", aff, std::nullopt});
            out.push_back({"PROM-ANN", ann, std::nullopt});
        }
        return out;
    }

private:
    // --- stamps --------------------------------------------------------------

    std::optional<json> read_stamp(Stage s) const {
        const fs::path p = dir(s) / "stamp.json";
        std::ifstream in(p);
        if (!in) return std::nullopt;
        try {
            json j = json::parse(in);
            if (!j.contains("key") || !j.contains("outputs")) return std::nullopt;
            return j;
        } catch (const json::exception&) {
            return std::nullopt;
        }
    }

    void write_stamp(Stage s, const std::vector<std::string>& outputs) const {
        json out = json::object();
        for (const auto& f : outputs) out[f] = file_sha256((dir(s) / f).string());
        const json stamp{{"stage", stage_name(s)}, {"key", key(s)}, {"inputs", stage_inputs(cfg_, s)},
                         {"outputs", out}};
        std::ofstream o(dir(s) / "stamp.json");
        if (!o) throw ValidationError("cannot write stamp in " + dir(s).string());
        o << stamp.dump(2) << '\n';
    }

    void require_stage(Stage consumer, Stage d) const {
        const auto stamp = read_stamp(d);
        const std::string hint = concat("; run `morbench run ", stage_name(d), " --config <file>` first");
        if (!stamp)
            throw ValidationError(concat("stage '", stage_name(consumer), "' needs the outputs of stage '",
                                         stage_name(d), "', which are missing in ", dir(d).string(), hint));
        if (stamp->value("key", "") != key(d))
            throw ValidationError(concat("stage '", stage_name(consumer), "' needs the outputs of stage '",
                                         stage_name(d), "', which are stale for this configuration", hint));
    }

    static void check_run_header(const SnapshotHeader& h, const ParameterPoint& mu, const fs::path& p) {
        if (!(h.mu == mu)) throw ValidationError(p.string() + ": parameter point differs from the sampling plan");
    }

    // --- stages --------------------------------------------------------------

    std::vector<std::string> run_hdm() {
        const BurgersHdm hdm = make_hdm();
        const TimeGrid grid = cfg_.make_grid();
        const SamplingPlan plan = sampling_plan();
        std::vector<std::string> outputs;
        std::ofstream runs(dir(Stage::hdm) / "runs.csv");
        runs << "run,mu1,mu2\n" << std::setprecision(17);
        for (std::size_t i = 0; i < plan.points.size(); ++i) {
            const ParameterPoint& mu = plan.points[i];
            log::info("  hdm run ", i + 1, "/", plan.points.size(), " at ", mu);
            SnapshotHeader h{cfg_.mesh.nx, cfg_.mesh.ny, cfg_.time.nt, cfg_.time.dt, mu, kInterleavedLayout};
            SnapshotFileWriter w(run_file(i).string(), h);
            march_hdm(hdm, mu, grid, [&](int, const Vector& u) { w.frame(u); });
            w.close();
            outputs.push_back(run_file(i).filename().string());
            runs << i << ',' << mu.mu1 << ',' << mu.mu2 << '\n';
        }
        runs.close();
        outputs.push_back("runs.csv");
        return outputs;
    }

    std::vector<std::string> run_pod() {
        const SnapshotMatrix snaps = load_snapshots();
        const SvdMethod method = cfg_.pod.svd_method == "direct" ? SvdMethod::direct
                                 : cfg_.pod.svd_method == "gram" ? SvdMethod::gram
                                                                 : SvdMethod::automatic;
        const SvdResult svd = thin_svd(snaps.S, method);
        write_singular_values_csv((dir(Stage::pod) / "singular_values.csv").string(), svd.sigma);

        const Index k = svd.rank();
        const EnergyMeasure measure =
            cfg_.pod.energy_measure == "linear" ? EnergyMeasure::linear : EnergyMeasure::squared;
        const Index n = truncate_by_energy(svd.sigma, cfg_.pod.energy_eps, measure);
        const Index n_ann = cfg_.pod.ann_n;
        if (n_ann >= k)
            throw ValidationError(concat("pod.ann_n = ", n_ann, " leaves no secondary modes (rank k = ", k, ")"));
        Index n_bar = cfg_.pod.ann_n_bar;
        if (n_ann + n_bar > k) {
            log::warn("pod.ann_n_bar = ", n_bar, " exceeds k - n = ", k - n_ann, "; clamping");
            n_bar = k - n_ann;
        }
        write_rob_file((dir(Stage::pod) / "rob_hprom.bin").string(), build_robs(svd, n, 0));
        write_rob_file((dir(Stage::pod) / "rob_hprom_ann.bin").string(), build_robs(svd, n_ann, n_bar));

        const json info{{"snapshots", snaps.cols()}, {"rank", k}, {"n", n},
                        {"energy_measure", cfg_.pod.energy_measure},
                        {"n_squared_measure", truncate_by_energy(svd.sigma, cfg_.pod.energy_eps)},
                        {"n_linear_measure", truncate_by_energy(svd.sigma, cfg_.pod.energy_eps, EnergyMeasure::linear)},
                        {"ann_n", n_ann}, {"ann_n_bar", n_bar}};
        std::ofstream(dir(Stage::pod) / "pod.json") << info.dump(2) << '\n';
        log::info("  POD: ", snaps.cols(), " snapshots, rank ", k, ", n = ", n, ", ANN n/n_bar = ", n_ann, "/", n_bar);
        return {"singular_values.csv", "rob_hprom.bin", "rob_hprom_ann.bin", "pod.json"};
    }

    std::vector<std::string> run_train() {
        const SnapshotMatrix snaps = load_snapshots();
        const RobPair rob = load_rob("hprom_ann");
        const CoordDataset ds = make_dataset(snaps, rob, cfg_.ann.test_fraction, cfg_.seed);
        const TrainResult tr = train(ds, cfg_.train_config());
        write_mlp_file((dir(Stage::train) / "mlp.bin").string(), tr.map);
        write_training_log_csv((dir(Stage::train) / "training_log.csv").string(), tr.log);
        const json info{{"train_loss", tr.train_loss}, {"test_loss", tr.test_loss},
                        {"best_epoch", tr.best_epoch}, {"epochs", tr.log.size()},
                        {"train_samples", ds.train.size()}, {"test_samples", ds.test.size()}};
        std::ofstream(dir(Stage::train) / "train.json") << info.dump(2) << '\n';
        log::info("  ANN: best epoch ", tr.best_epoch, ", train loss ", tr.train_loss, ", test loss ", tr.test_loss);
        return {"mlp.bin", "training_log.csv", "train.json"};
    }

    Trajectory ecsw_training_trajectory() const {
        const SamplingPlan plan = sampling_plan();
        const ParameterPoint& mu = cfg_.ecsw.training_mu;
        for (std::size_t i = 0; i < plan.points.size(); ++i) {
            const ParameterPoint& p = plan.points[i];
            if (std::abs(p.mu1 - mu.mu1) <= 1e-12 * std::abs(mu.mu1) &&
                std::abs(p.mu2 - mu.mu2) <= 1e-12 * std::abs(mu.mu2))
                return read_snapshot_file(run_file(i).string()).frames;
        }
        log::info("  ECSW training point ", mu, " is not a sampled point; solving the HDM there");
        return solve_hdm(make_hdm(), mu, cfg_.make_grid());
    }

    std::vector<std::string> run_ecsw() {
        const BurgersHdm hdm = make_hdm();
        const Trajectory traj = ecsw_training_trajectory();
        const auto snaps = select_training_snapshots(traj, cfg_.ecsw.training_mu, cfg_.time.dt, cfg_.ecsw.time_stride);
        NnlsControls ctl;
        ctl.tau = cfg_.ecsw.tau;
        ctl.max_inner_solves = cfg_.ecsw.max_inner_solves;

        std::vector<std::string> outputs;
        json info = json::object();
        const std::pair<const char*, Decoder> models[] = {{"hprom", affine_decoder()}, {"hprom_ann", ann_decoder()}};
        for (const auto& [tag, dec] : models) {
            const EcswTrainingSystem sys = assemble_training_system(hdm, dec, snaps, cfg_.time.dt);
            const EcswResult er = train_cubature(sys, hdm.mesh(), ctl);
            const std::string cub = std::string("cubature_") + tag + ".csv";
            const std::string mask = std::string("mask_") + tag + ".csv";
            write_cubature_csv((dir(Stage::ecsw) / cub).string(), er.cubature);
            write_reduced_mesh_mask_csv((dir(Stage::ecsw) / mask).string(), er.cubature, hdm.mesh());
            outputs.push_back(cub);
            outputs.push_back(mask);
            info[tag] = {{"n_e", er.cubature.size()}, {"augmented", er.cubature.augmented.size()},
                         {"residual_ratio", er.nnls.residual_ratio}, {"inner_solves", er.nnls.inner_solves},
                         {"training_snapshots", sys.provenance.size()}, {"skipped", sys.skipped}};
            log::info("  ECSW ", tag, ": n_e = ", er.cubature.size(), " (|E+| = ", er.cubature.augmented.size(),
                      "), residual ratio ", er.nnls.residual_ratio);
        }
        std::ofstream(dir(Stage::ecsw) / "ecsw.json") << info.dump(2) << '\n';
        outputs.push_back("ecsw.json");
        return outputs;
    }

    static double median(std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t m = v.size() / 2;
        return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    }

    template <class F>
    static double timed(F&& f) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    std::vector<std::string> run_online() {
        const BurgersHdm hdm = make_hdm();
        const TimeGrid grid = cfg_.make_grid();
        const GnControls gn = cfg_.gn_controls();
        const auto& sl = cfg_.online.slices;
        const std::vector<ReducedModel> models = reduced_models();

        // offline: encoded initial condition per model
        std::vector<Vector> q0;
        for (const auto& m : models) q0.push_back(m.decoder.encode(hdm.initial_state()));

        fs::create_directories(dir(Stage::online) / "slices");
        std::vector<std::string> outputs;
        RunReport rep;
        for (std::size_t qi = 0; qi < cfg_.online.queries.size(); ++qi) {
            const ParameterPoint mu = cfg_.online.queries[qi];
            const std::string qtag = concat("q", qi);
            Trajectory ref;
            std::vector<double> times;
            for (int r = 0; r < cfg_.online.hdm_repeats; ++r)
                times.push_back(timed([&] { ref = solve_hdm(hdm, mu, grid); }));
            ReportRow hrow{"HDM", mu, hdm.num_dofs(), hdm.num_cells(), 0.0, median(times), 0.0, 0};
            rep.rows.push_back(hrow);
            log::info("  ", qtag, " ", mu, ": HDM ", hrow.wall_time, " s");
            auto slices = export_slices(ref, hdm.mesh(), grid, sl.y, sl.x, sl.times,
                                        (dir(Stage::online) / "slices" / (qtag + "_HDM")).string());
            append_relative(outputs, slices.paths);

            for (std::size_t k = 0; k < models.size(); ++k) {
                const ReducedModel& m = models[k];
                ReducedTrajectory rt;
                times.clear();
                for (int r = 0; r < cfg_.online.rom_repeats; ++r) {
                    times.push_back(timed([&] {
                        rt = m.cubature ? solve_rom(hdm, mu, m.decoder, grid, gn, *m.cubature, q0[k])
                                        : [&] {
                                              FullAssembler as(hdm, m.decoder, mu);
                                              return solve_rom_with(as, q0[k], grid, gn);
                                          }();
                    }));
                }
                const Trajectory rec = reconstruct(m.decoder, rt);
                ReportRow row{m.name, mu, m.decoder.n(),
                              m.cubature ? m.cubature->size() : Index{hdm.num_cells()},
                              relative_error(ref, rec, grid.nt), median(times), 0.0, rt.flagged_steps()};
                rep.rows.push_back(row);
                log::info("  ", qtag, " ", m.name, ": RE ", row.re, ", ", row.wall_time, " s, n_e ", row.n_e,
                          row.flagged_steps ? concat(", ", row.flagged_steps, " flagged steps") : std::string());
                const std::string qfile = concat("coords_", qtag, "_", m.name, ".csv");
                write_reduced_trajectory_csv((dir(Stage::online) / qfile).string(), rt, grid.dt);
                outputs.push_back(qfile);
                slices = export_slices(rec, hdm.mesh(), grid, sl.y, sl.x, sl.times,
                                       (dir(Stage::online) / "slices" / (qtag + "_" + m.name)).string());
                append_relative(outputs, slices.paths);
            }
        }
        write_report_csv((dir(Stage::online) / "results.csv").string(), rep);
        outputs.push_back("results.csv");
        return outputs;
    }

    void append_relative(std::vector<std::string>& out, const std::vector<std::string>& paths) const {
        for (const auto& p : paths) out.push_back(fs::relative(p, dir(Stage::online)).string());
    }

    std::vector<std::string> run_report() {
        RunReport rep = read_report_csv((dir(Stage::online) / "results.csv").string());
        fill_speedups(rep);
        write_report_csv((dir(Stage::report) / "report.csv").string(), rep);
        std::ostringstream table;
        table << std::left << std::setw(10) << "model" << std::setw(16) << "mu" << std::setw(10) << "dim"
              << std::setw(8) << "n_e" << std::setw(12) << "RE" << std::setw(12) << "time [s]" << "speedup\n";
        for (const auto& r : rep.rows)
            table << std::setw(10) << r.model << std::setw(16) << concat("(", r.mu.mu1, ",", r.mu.mu2, ")")
                  << std::setw(10) << r.dimension << std::setw(8) << r.n_e << std::setw(12) << r.re
                  << std::setw(12) << r.wall_time << r.speedup << '\n';
        std::cout << table.str();
        return {"report.csv"};
    }

public:
    /// speedup = HDM wall time / model wall time for the same query point.
    static void fill_speedups(RunReport& rep) {
        for (auto& r : rep.rows) {
            const auto hdm = std::find_if(rep.rows.begin(), rep.rows.end(), [&](const ReportRow& h) {
                return h.model == "HDM" && h.mu == r.mu;
            });
            if (hdm == rep.rows.end()) throw ValidationError(concat("no HDM timing for query ", r.mu));
            if (!(r.wall_time > 0.0)) throw ValidationError(concat("non-positive wall time for ", r.model));
            r.speedup = hdm->wall_time / r.wall_time;
        }
    }

private:
    ExperimentConfig cfg_;
    bool force_;
    std::map<Stage, std::string> keys_;
};

}  // namespace morbench::bench
