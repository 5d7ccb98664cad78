#pragma once

// Error measure, slice export and the run report.

#include "morbench/core.hpp"
#include "morbench/hdm_burgers.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace morbench::bench {

/// sum_m |u^m - u~^m| / sum_m |u^m| over steps 0..n_tau.
inline double relative_error(const Trajectory& hdm, const Trajectory& rom, int n_tau) {
    const auto need = static_cast<std::size_t>(n_tau) + 1;
    if (n_tau < 0 || hdm.size() != need || rom.size() != need)
        throw ValidationError(concat("relative error needs ", need, " states per trajectory, got ",
                                     hdm.size(), " and ", rom.size()));
    double num = 0.0, den = 0.0;
    for (std::size_t m = 0; m < need; ++m) {
        if (hdm[m].size() != rom[m].size())
            throw ValidationError(concat("state size mismatch at step ", m));
        num += (hdm[m] - rom[m]).norm();
        den += hdm[m].norm();
    }
    if (den == 0.0) throw ValidationError("reference trajectory is identically zero");
    return num / den;
}

/// Index of the cell whose center is nearest to `coord` along an axis of
/// `n` cells spanning [0, length]. Ties go to the lower index.
inline int nearest_center_index(double coord, int n, double length) {
    if (!(coord >= 0.0 && coord <= length))
        throw ValidationError(concat("slice coordinate ", coord, " lies outside [0, ", length, "]"));
    const double h = length / n;
    const double pos = coord / h - 0.5;
    int k = static_cast<int>(std::ceil(pos - 0.5));
    return std::clamp(k, 0, n - 1);
}

/// Time step index for time t; t must be a grid time.
inline int step_for_time(double t, const TimeGrid& grid) {
    const double s = t / grid.dt;
    const long m = std::lround(s);
    if (m < 0 || m > grid.nt || std::abs(s - static_cast<double>(m)) > 1e-6)
        throw ValidationError(concat("slice time ", t, " is not a step of the time grid (dt=", grid.dt,
                                     ", nt=", grid.nt, ")"));
    return static_cast<int>(m);
}

struct SliceFiles {
    int row = 0;     ///< iy of the y-slice
    int column = 0;  ///< ix of the x-slice
    std::vector<std::string> paths;
};

/// Writes `<prefix>_y_t<t>.csv` (x, u_x, u_y along the row nearest y_slice)
/// and `<prefix>_x_t<t>.csv` (y, u_x, u_y along the column nearest x_slice).
inline SliceFiles export_slices(const Trajectory& traj, const Mesh2D& mesh, const TimeGrid& grid,
                                double y_slice, double x_slice, const std::vector<double>& times,
                                const std::string& prefix) {
    SliceFiles out;
    out.row = nearest_center_index(y_slice, mesh.ny(), mesh.ly());
    out.column = nearest_center_index(x_slice, mesh.nx(), mesh.lx());
    for (double t : times) {
        const int m = step_for_time(t, grid);
        if (static_cast<std::size_t>(m) >= traj.size())
            throw ValidationError(concat("trajectory has no state at step ", m));
        const Vector& u = traj[static_cast<std::size_t>(m)];
        std::ostringstream tag;
        tag << t;
        const std::string py = prefix + "_y_t" + tag.str() + ".csv";
        const std::string px = prefix + "_x_t" + tag.str() + ".csv";
        std::ofstream fy(py), fx(px);
        if (!fy || !fx) throw ValidationError("cannot write slice files with prefix " + prefix);
        fy << "x,u_x,u_y\n" << std::setprecision(17);
        for (int i = 0; i < mesh.nx(); ++i) {
            const int e = mesh.cell(i, out.row);
            fy << mesh.center_x(e) << ',' << u[2 * e] << ',' << u[2 * e + 1] << '\n';
        }
        fx << "y,u_x,u_y\n" << std::setprecision(17);
        for (int j = 0; j < mesh.ny(); ++j) {
            const int e = mesh.cell(out.column, j);
            fx << mesh.center_y(e) << ',' << u[2 * e] << ',' << u[2 * e + 1] << '\n';
        }
        out.paths.push_back(py);
        out.paths.push_back(px);
    }
    return out;
}

struct ReportRow {
    std::string model;
    ParameterPoint mu;
    Index dimension = 0;
    Index n_e = 0;
    double re = 0.0;
    double wall_time = 0.0;  ///< seconds
    double speedup = 0.0;    ///< HDM time / this model's time, same query
    int flagged_steps = 0;
};

struct RunReport {
    std::vector<ReportRow> rows;
};

inline void write_report_csv(const std::string& path, const RunReport& rep) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << "model,mu1,mu2,dimension,n_e,RE,wall_time_s,speedup,flagged_steps\n" << std::setprecision(17);
    for (const auto& r : rep.rows)
        out << r.model << ',' << r.mu.mu1 << ',' << r.mu.mu2 << ',' << r.dimension << ',' << r.n_e << ','
            << r.re << ',' << r.wall_time << ',' << r.speedup << ',' << r.flagged_steps << '\n';
}

inline RunReport read_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open for reading: " + path);
    std::string line;
    std::getline(in, line);
    RunReport rep;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 9) throw ValidationError(path + ": malformed report row '" + line + "'");
        ReportRow r;
        r.model = f[0];
        r.mu = {std::stod(f[1]), std::stod(f[2])};
        r.dimension = std::stol(f[3]);
        r.n_e = std::stol(f[4]);
        r.re = std::stod(f[5]);
        r.wall_time = std::stod(f[6]);
        r.speedup = std::stod(f[7]);
        r.flagged_steps = std::stoi(f[8]);
        rep.rows.push_back(r);
    }
    return rep;
}

}  // namespace morbench::bench
