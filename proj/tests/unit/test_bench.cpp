#include "morbench/bench/pipeline.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace morbench;
using namespace morbench::bench;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(const std::string& out) {
    ExperimentConfig c;
    c.name = "tiny";
    c.mesh = {8, 8, 100.0, 100.0};
    c.time = {0.5, 6};
    c.sampling.n1 = 2;
    c.sampling.n2 = 2;
    c.pod.energy_measure = "linear";
    c.pod.ann_n = 2;
    c.pod.ann_n_bar = 3;
    c.pod.svd_method = "direct";
    c.ann.hidden = {8, 8};
    c.ann.max_epochs = 5;
    c.ann.batch_size = 8;
    c.ecsw.time_stride = 2;
    c.online.rom_repeats = 1;
    c.online.slices.times = {0.0, 1.5};
    c.output_dir = out;
    c.seed = 5;
    c.deterministic = true;
    return c;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::map<Stage, bool> reused(const std::vector<StageResult>& rs) {
    std::map<Stage, bool> m;
    for (const auto& r : rs) m[r.stage] = r.reused;
    return m;
}

}  // namespace

TEST(Config, RoundTripsThroughJson) {
    const ExperimentConfig c = load_config(std::string(MORBENCH_SOURCE_DIR) + "/configs/desk.cfg");
    EXPECT_EQ(c.mesh.nx, 50);
    EXPECT_EQ(c.time.nt, 250);
    const json j = to_json(c);
    EXPECT_EQ(to_json(config_from_json(j)).dump(), j.dump());
    const ExperimentConfig p = load_config(std::string(MORBENCH_SOURCE_DIR) + "/configs/full.cfg");
    EXPECT_EQ(p.mesh.nx, 250);
    EXPECT_EQ(p.time.nt, 500);
}

TEST(Config, SaveAndLoad) {
    TempDir d("morbench_cfg_rt");
    fs::create_directories(d.path);
    ExperimentConfig c = tiny_config("x");
    c.online.queries = {{4.5, 0.02}, {5.0, 0.025}};
    const auto path = (d.path / "c.cfg").string();
    save_config(path, c);
    EXPECT_EQ(to_json(load_config(path)).dump(), to_json(c).dump());
}

TEST(Config, OverridesAndStrictKeys) {
    ExperimentConfig c = tiny_config("x");
    c = apply_override(c, "ann.max_epochs=300");
    EXPECT_EQ(c.ann.max_epochs, 300);
    c = apply_override(c, "pod.svd_method=gram");
    EXPECT_EQ(c.pod.svd_method, "gram");
    c = apply_override(c, "ecsw.training_mu=[5.0, 0.02]");
    EXPECT_EQ(c.ecsw.training_mu.mu1, 5.0);
    EXPECT_THROW(apply_override(c, "ann.max_epoch=3"), ValidationError);
    EXPECT_THROW(apply_override(c, "no_equals_sign"), ValidationError);
    json j = to_json(c);
    j["mesh"]["nz"] = 3;
    EXPECT_THROW(config_from_json(j), ValidationError);
}

TEST(Config, ValidationRejectsBadValues) {
    ExperimentConfig c = tiny_config("x");
    c.pod.energy_eps = 1.5;
    EXPECT_THROW(validate(c), ValidationError);
    c = tiny_config("x");
    c.online.queries.clear();
    EXPECT_THROW(validate(c), ValidationError);
    c = tiny_config("x");
    c.pod.energy_measure = "cubic";
    EXPECT_THROW(validate(c), ValidationError);
}

TEST(StageKeys, ChangeInvalidatesExactlyDescendants) {
    const ExperimentConfig base = tiny_config("x");
    const auto k0 = stage_keys(base);
    auto changed = [&](const std::string& ov) {
        const auto k1 = stage_keys(apply_override(base, ov));
        std::vector<Stage> out;
        for (Stage s : kAllStages)
            if (k0.at(s) != k1.at(s)) out.push_back(s);
        return out;
    };
    using S = Stage;
    EXPECT_EQ(changed("time.nt=8"), (std::vector<S>{S::hdm, S::pod, S::train, S::ecsw, S::online, S::report}));
    EXPECT_EQ(changed("pod.energy_eps=0.1"), (std::vector<S>{S::pod, S::train, S::ecsw, S::online, S::report}));
    EXPECT_EQ(changed("ann.max_epochs=7"), (std::vector<S>{S::train, S::ecsw, S::online, S::report}));
    EXPECT_EQ(changed("seed=6"), (std::vector<S>{S::train, S::ecsw, S::online, S::report}));
    EXPECT_EQ(changed("ecsw.tau=0.02"), (std::vector<S>{S::ecsw, S::online, S::report}));
    EXPECT_EQ(changed("online.rom_repeats=2"), (std::vector<S>{S::online, S::report}));
    EXPECT_EQ(changed("output_dir=\"elsewhere\""), std::vector<S>{});
}

TEST(Pipeline, MissingUpstreamNamesProducingStage) {
    TempDir d("morbench_missing");
    Pipeline p(tiny_config(d.path.string()));
    try {
        p.run(Stage::pod);
        FAIL() << "expected an error";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("'hdm'"), std::string::npos) << e.what();
    }
}

TEST(Pipeline, EndToEndCachingAndDeterminism) {
    TempDir a("morbench_tiny_a"), b("morbench_tiny_b");
    ExperimentConfig ca = tiny_config(a.path.string());
    {
        Pipeline p(ca);
        for (const auto& r : p.run_all()) EXPECT_FALSE(r.reused) << stage_name(r.stage);
    }
    const RunReport rep = read_report_csv((a.path / "report" / "report.csv").string());
    ASSERT_EQ(rep.rows.size(), 3u);
    EXPECT_EQ(rep.rows[0].model, "HDM");
    EXPECT_EQ(rep.rows[1].model, "HPROM");
    EXPECT_EQ(rep.rows[2].model, "HPROM-ANN");
    for (const auto& r : rep.rows) {
        EXPECT_NEAR(r.speedup, rep.rows[0].wall_time / r.wall_time, 1e-12 * r.speedup);
        EXPECT_GE(r.re, 0.0);
    }
    EXPECT_TRUE(fs::exists(a.path / "online" / "slices"));
    const std::string mlp_hash = file_sha256((a.path / "train" / "mlp.bin").string());

    {
        Pipeline p(ca);
        for (const auto& r : p.run_all()) EXPECT_TRUE(r.reused) << stage_name(r.stage);
    }
    {
        Pipeline p(apply_override(ca, "ecsw.tau=0.02"));
        const auto m = reused(p.run_all());
        EXPECT_TRUE(m.at(Stage::hdm));
        EXPECT_TRUE(m.at(Stage::pod));
        EXPECT_TRUE(m.at(Stage::train));
        EXPECT_FALSE(m.at(Stage::ecsw));
        EXPECT_FALSE(m.at(Stage::online));
        EXPECT_FALSE(m.at(Stage::report));
    }
    {
        // a damaged artifact forces its stage to run again
        std::ofstream(a.path / "train" / "mlp.bin", std::ios::app) << 'x';
        Pipeline p(ca);
        EXPECT_FALSE(p.up_to_date(Stage::train));
        EXPECT_FALSE(p.run(Stage::train).reused);
        EXPECT_EQ(file_sha256((a.path / "train" / "mlp.bin").string()), mlp_hash);
    }

    ExperimentConfig cb = ca;
    cb.output_dir = b.path.string();
    Pipeline(cb).run_all();
    const RunReport rb = read_report_csv((b.path / "report" / "report.csv").string());
    ASSERT_EQ(rep.rows.size(), rb.rows.size());
    for (std::size_t i = 0; i < rep.rows.size(); ++i) EXPECT_NEAR(rep.rows[i].re, rb.rows[i].re, 1e-12);
    EXPECT_EQ(file_sha256((b.path / "train" / "mlp.bin").string()), mlp_hash);
}

TEST(Report, SpeedupIsQuotientOfTimes) {
    RunReport rep;
    rep.rows.push_back({"HDM", {4.75, 0.02}, 5000, 2500, 0.0, 20.0, 0.0, 0});
    rep.rows.push_back({"HPROM", {4.75, 0.02}, 15, 36, 0.02, 0.5, 0.0, 0});
    rep.rows.push_back({"HPROM-ANN", {4.75, 0.02}, 10, 30, 0.01, 0.25, 0.0, 0});
    Pipeline::fill_speedups(rep);
    EXPECT_EQ(rep.rows[0].speedup, 1.0);
    EXPECT_EQ(rep.rows[1].speedup, 20.0 / 0.5);
    EXPECT_EQ(rep.rows[2].speedup, 20.0 / 0.25);
    rep.rows.push_back({"HPROM", {5.0, 0.02}, 15, 36, 0.02, 0.5, 0.0, 0});
    EXPECT_THROW(Pipeline::fill_speedups(rep), ValidationError);
}

TEST(Report, CsvRoundTrip) {
    TempDir d("morbench_report_rt");
    fs::create_directories(d.path);
    RunReport rep;
    rep.rows.push_back({"HPROM", {4.75, 0.02}, 15, 36, 0.0197891, 0.192388, 110.4, 5});
    const auto path = (d.path / "r.csv").string();
    write_report_csv(path, rep);
    const RunReport back = read_report_csv(path);
    ASSERT_EQ(back.rows.size(), 1u);
    EXPECT_EQ(back.rows[0].model, "HPROM");
    EXPECT_EQ(back.rows[0].re, 0.0197891);
    EXPECT_EQ(back.rows[0].flagged_steps, 5);
}

TEST(Analysis, RelativeError) {
    Trajectory u{Vector::Ones(4), 2 * Vector::Ones(4), 3 * Vector::Ones(4)};
    EXPECT_EQ(relative_error(u, u, 2), 0.0);
    Trajectory z(3, Vector::Zero(4));
    EXPECT_EQ(relative_error(u, z, 2), 1.0);
    Trajectory h = u;
    h[2] *= 1.5;  // |du| = 1.5 * 2 = 3 at m = 2; sum of |u| = 2 + 4 + 6
    EXPECT_NEAR(relative_error(u, h, 2), 3.0 / 12.0, 1e-15);
    EXPECT_THROW(relative_error(u, z, 3), ValidationError);
}

TEST(Analysis, NearestCenterIndex) {
    EXPECT_EQ(nearest_center_index(50.2, 250, 100.0), 125);
    EXPECT_EQ(nearest_center_index(0.1, 250, 100.0), 0);
    EXPECT_EQ(nearest_center_index(99.9, 250, 100.0), 249);
    EXPECT_EQ(nearest_center_index(50.2, 50, 100.0), 25);
    EXPECT_THROW(nearest_center_index(100.5, 250, 100.0), ValidationError);
}

TEST(Analysis, InitialSliceIsConstantOne) {
    TempDir d("morbench_slices");
    fs::create_directories(d.path);
    const Mesh2D mesh(10, 6);
    const BurgersHdm hdm(mesh);
    const TimeGrid grid(0.5, 4);
    const Trajectory traj = solve_hdm(hdm, {4.3, 0.021}, grid);
    const SliceFiles f = export_slices(traj, mesh, grid, 50.2, 50.2, {0.0, 2.0}, (d.path / "s").string());
    EXPECT_EQ(f.row, 3);
    ASSERT_EQ(f.paths.size(), 4u);
    std::ifstream in(f.paths[0]);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "x,u_x,u_y");
    int rows = 0;
    while (std::getline(in, line)) {
        const auto c1 = line.find(','), c2 = line.rfind(',');
        EXPECT_EQ(std::stod(line.substr(c1 + 1, c2 - c1 - 1)), 1.0);
        EXPECT_EQ(std::stod(line.substr(c2 + 1)), 1.0);
        ++rows;
    }
    EXPECT_EQ(rows, 10);
}

TEST(Analysis, ShockMovesRightward) {
    const Mesh2D mesh(60, 2);
    const BurgersHdm hdm(mesh);
    const TimeGrid grid(0.25, 40);
    const Trajectory traj = solve_hdm(hdm, {4.3, 0.021}, grid);
    // first cell (from the inlet) where u_x falls below the midpoint of inlet and initial values
    auto front = [&](const Vector& u) {
        for (int i = 0; i < mesh.nx(); ++i)
            if (u[2 * mesh.cell(i, 0)] < 0.5 * (4.3 + 1.0)) return i;
        return mesh.nx();
    };
    const int f1 = front(traj[10]), f2 = front(traj[25]), f3 = front(traj[40]);
    EXPECT_LT(f1, f2);
    EXPECT_LT(f2, f3);
}
