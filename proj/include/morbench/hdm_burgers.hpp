#pragma once

// Parametric 2D inviscid Burgers model on a uniform Cartesian grid:
// first-order Godunov fluxes, trapezoidal time integration, Newton with an
// analytic sparse Jacobian. Every cell owns two interleaved dofs (u_x, u_y).

#include "morbench/binary_io.hpp"
#include "morbench/core.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace morbench {

struct ParameterPoint {
    double mu1 = 4.75;  ///< inlet velocity u_x(0, y, t)
    double mu2 = 0.02;  ///< source exponent rate

    static constexpr double mu1_min = 4.25, mu1_max = 5.50;
    static constexpr double mu2_min = 0.015, mu2_max = 0.03;

    bool in_domain() const {
        return mu1 >= mu1_min && mu1 <= mu1_max && mu2 >= mu2_min && mu2 <= mu2_max;
    }
    bool operator==(const ParameterPoint&) const = default;
};

inline std::ostream& operator<<(std::ostream& os, const ParameterPoint& mu) {
    return os << '(' << mu.mu1 << ", " << mu.mu2 << ')';
}

enum class Side : int { west = 0, east = 1, south = 2, north = 3 };

class Mesh2D {
public:
    Mesh2D(int nx, int ny, double lx = 100.0, double ly = 100.0)
        : nx_(nx), ny_(ny), lx_(lx), ly_(ly) {
        require(nx > 0 && ny > 0, "mesh needs at least one cell per axis");
        require(lx > 0.0 && ly > 0.0, "mesh extents must be positive");
    }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    double lx() const { return lx_; }
    double ly() const { return ly_; }
    double hx() const { return lx_ / nx_; }
    double hy() const { return ly_ / ny_; }
    int num_cells() const { return nx_ * ny_; }
    Index num_dofs() const { return 2 * static_cast<Index>(num_cells()); }

    int cell(int ix, int iy) const { return ix + nx_ * iy; }
    int ix(int e) const { return e % nx_; }
    int iy(int e) const { return e / nx_; }
    double center_x(int e) const { return (ix(e) + 0.5) * hx(); }
    double center_y(int e) const { return (iy(e) + 0.5) * hy(); }

    /// Neighbor across `side`, or -1 on the domain boundary.
    int neighbor(int e, Side side) const {
        const int i = ix(e), j = iy(e);
        switch (side) {
            case Side::west: return i > 0 ? e - 1 : -1;
            case Side::east: return i + 1 < nx_ ? e + 1 : -1;
            case Side::south: return j > 0 ? e - nx_ : -1;
            case Side::north: return j + 1 < ny_ ? e + nx_ : -1;
        }
        return -1;
    }

    bool operator==(const Mesh2D&) const = default;

private:
    int nx_, ny_;
    double lx_, ly_;
};

/// Index-list realization of the Boolean selectors L_e (own dofs) and
/// L_{e+} (own dofs plus von Neumann neighbors). cells[0] is always the
/// entity itself; neighbors follow in west, east, south, north order.
struct StencilSelector {
    int entity = 0;
    int count = 1;
    std::array<int, 5> cells{};
    std::array<int, 4> slot{-1, -1, -1, -1};

    std::array<Index, 2> dofs_e() const { return {2 * Index{entity}, 2 * Index{entity} + 1}; }
    int num_dofs() const { return 2 * count; }

    std::vector<Index> dofs_eplus() const {
        std::vector<Index> d;
        d.reserve(static_cast<std::size_t>(num_dofs()));
        for (int k = 0; k < count; ++k) {
            d.push_back(2 * Index{cells[k]});
            d.push_back(2 * Index{cells[k]} + 1);
        }
        return d;
    }

    /// Packs the stencil dofs of a global vector into `out` (2*count values).
    void gather(const double* u, double* out) const {
        for (int k = 0; k < count; ++k) {
            out[2 * k] = u[2 * cells[k]];
            out[2 * k + 1] = u[2 * cells[k] + 1];
        }
    }
};

inline StencilSelector make_stencil(const Mesh2D& mesh, int e) {
    StencilSelector s;
    s.entity = e;
    s.cells[0] = e;
    for (int side = 0; side < 4; ++side) {
        const int nb = mesh.neighbor(e, static_cast<Side>(side));
        if (nb >= 0) {
            s.slot[side] = s.count;
            s.cells[s.count++] = nb;
        }
    }
    return s;
}

struct TimeGrid {
    double dt = 0.05;
    int nt = 500;

    TimeGrid() = default;
    TimeGrid(double dt_, int nt_) : dt(dt_), nt(nt_) {
        require(dt > 0.0, "time step must be positive");
        require(nt >= 0, "step count must be nonnegative");
    }
    static TimeGrid from_final_time(double tf, int nt) {
        require(nt > 0, "step count must be positive");
        return TimeGrid(tf / nt, nt);
    }
    double tf() const { return dt * nt; }
    double time(int m) const { return dt * m; }
};

struct BurgersPhysics {
    double source_amplitude = 0.02;
    /// Ghost u_x = mu1 on the x = 0 side; when false all sides are outflow.
    bool dirichlet_inlet = true;
};

struct NewtonControls {
    double rel_tol = 1e-8;
    double abs_tol = 1e-10;
    int max_iters = 20;
    int max_halvings = 5;
};

/// Exact solution of the scalar Burgers Riemann problem at x/t = 0 together
/// with the derivative of the selected branch.
struct RiemannState {
    double value;
    double d_left;
    double d_right;
};

inline RiemannState burgers_riemann(double ul, double ur) {
    if (ul > ur) {
        const double shock_speed = 0.5 * (ul + ur);
        if (shock_speed >= 0.0) return {ul, 1.0, 0.0};
        return {ur, 0.0, 1.0};
    }
    if (ul >= 0.0) return {ul, 1.0, 0.0};
    if (ur <= 0.0) return {ur, 0.0, 1.0};
    return {0.0, 0.0, 0.0};  // transonic rarefaction
}

using EntityJacobian = Eigen::Matrix<double, 2, Eigen::Dynamic, Eigen::RowMajor, 2, 10>;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Trajectory = std::vector<Vector>;

struct StepStats {
    int iterations = 0;
    double initial_residual = 0.0;
    double final_residual = 0.0;
};

class BurgersHdm {
public:
    explicit BurgersHdm(Mesh2D mesh, BurgersPhysics physics = {})
        : mesh_(mesh), physics_(physics) {
        stencils_.reserve(static_cast<std::size_t>(mesh_.num_cells()));
        for (int e = 0; e < mesh_.num_cells(); ++e) stencils_.push_back(make_stencil(mesh_, e));
    }

    const Mesh2D& mesh() const { return mesh_; }
    const BurgersPhysics& physics() const { return physics_; }
    const StencilSelector& stencil(int e) const { return stencils_[static_cast<std::size_t>(e)]; }
    Index num_dofs() const { return mesh_.num_dofs(); }
    int num_cells() const { return mesh_.num_cells(); }

    Vector initial_state() const { return Vector::Ones(num_dofs()); }

    double source(int e, const ParameterPoint& mu) const {
        return physics_.source_amplitude * std::exp(mu.mu2 * mesh_.center_x(e));
    }

    /// phi_e = net interface flux divergence minus source for cell e, from the
    /// gathered stencil states. When `d` is given it receives d(phi_e)/d(u_plus).
    Eigen::Vector2d cell_balance(int e, const double* u_plus, const ParameterPoint& mu,
                                 EntityJacobian* d = nullptr) const;

    Eigen::Vector2d entity_residual(int e, const double* u_plus, const double* u_prev_plus,
                                    double /*t*/, const ParameterPoint& mu, double dt) const {
        const Eigen::Vector2d phi = cell_balance(e, u_plus, mu);
        const Eigen::Vector2d phi_prev = cell_balance(e, u_prev_plus, mu);
        return entity_residual_from(u_plus, u_prev_plus, phi, phi_prev, dt);
    }

    /// Residual of one entity when the previous-step balance is already known.
    static Eigen::Vector2d entity_residual_from(const double* u_plus, const double* u_prev_plus,
                                                const Eigen::Vector2d& phi,
                                                const Eigen::Vector2d& phi_prev, double dt) {
        Eigen::Vector2d r;
        r[0] = u_plus[0] - u_prev_plus[0] + 0.5 * dt * (phi[0] + phi_prev[0]);
        r[1] = u_plus[1] - u_prev_plus[1] + 0.5 * dt * (phi[1] + phi_prev[1]);
        return r;
    }

    /// d r_e / d(u_plus): 2 x (2*count), columns ordered as dofs_eplus.
    EntityJacobian entity_jacobian(int e, const double* u_plus, double /*t*/,
                                   const ParameterPoint& mu, double dt) const {
        EntityJacobian d(2, stencil(e).num_dofs());
        cell_balance(e, u_plus, mu, &d);
        d *= 0.5 * dt;
        d(0, 0) += 1.0;
        d(1, 1) += 1.0;
        return d;
    }

    /// Global phi(u) = f(u) - g.
    Vector semi_discrete_rhs(const Vector& u, double /*t*/, const ParameterPoint& mu) const {
        check_size(u);
        Vector phi(num_dofs());
        std::array<double, 10> loc{};
        for (int e = 0; e < num_cells(); ++e) {
            const auto& st = stencil(e);
            st.gather(u.data(), loc.data());
            phi.segment<2>(2 * e) = cell_balance(e, loc.data(), mu);
        }
        return phi;
    }

    /// Trapezoidal residual r = u - u_prev + dt/2 (phi(u) + phi(u_prev)).
    Vector residual(const Vector& u, const Vector& u_prev, double t, const ParameterPoint& mu,
                    double dt) const {
        check_size(u_prev);
        return residual_from(u, u_prev, semi_discrete_rhs(u_prev, t - dt, mu), t, mu, dt);
    }

    Vector residual_from(const Vector& u, const Vector& u_prev, const Vector& phi_prev, double t,
                         const ParameterPoint& mu, double dt) const {
        return u - u_prev + 0.5 * dt * (semi_discrete_rhs(u, t, mu) + phi_prev);
    }

    /// Sparse d r / d u, scatter-assembled from the entity Jacobians.
    SparseMatrix jacobian(const Vector& u, double t, const ParameterPoint& mu, double dt) const {
        check_size(u);
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(num_cells()) * 20);
        std::array<double, 10> loc{};
        for (int e = 0; e < num_cells(); ++e) {
            const auto& st = stencil(e);
            st.gather(u.data(), loc.data());
            const EntityJacobian je = entity_jacobian(e, loc.data(), t, mu, dt);
            for (int k = 0; k < st.count; ++k) {
                const int c = st.cells[k];
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        trip.emplace_back(2 * e + a, 2 * c + b, je(a, 2 * k + b));
            }
        }
        SparseMatrix J(num_dofs(), num_dofs());
        J.setFromTriplets(trip.begin(), trip.end());
        return J;
    }

    void check_size(const Vector& u) const {
        if (u.size() != num_dofs())
            throw ValidationError(
                concat("state has ", u.size(), " entries, mesh expects ", num_dofs()));
    }

private:
    Mesh2D mesh_;
    BurgersPhysics physics_;
    std::vector<StencilSelector> stencils_;
};

namespace detail {

// One side of a face: normal/tangential components plus the u_plus column
// each one is read from (-1: constant ghost value).
struct FaceSide {
    double un, ut;
    int col_n, col_t;
};

struct FaceFlux {
    double fn, ft;
    // partials wrt (L.un, L.ut, R.un, R.ut)
    double dfn[4];
    double dft[4];
};

inline FaceFlux normal_flux(const FaceSide& L, const FaceSide& R) {
    const RiemannState s = burgers_riemann(L.un, R.un);
    const bool from_left = s.value >= 0.0;
    const double t_up = from_left ? L.ut : R.ut;
    FaceFlux f{};
    f.fn = 0.5 * s.value * s.value;
    f.ft = 0.5 * s.value * t_up;
    f.dfn[0] = s.value * s.d_left;
    f.dfn[2] = s.value * s.d_right;
    f.dft[0] = 0.5 * t_up * s.d_left;
    f.dft[2] = 0.5 * t_up * s.d_right;
    f.dft[from_left ? 1 : 3] = 0.5 * s.value;
    return f;
}

}  // namespace detail

inline Eigen::Vector2d BurgersHdm::cell_balance(int e, const double* u_plus,
                                                const ParameterPoint& mu,
                                                EntityJacobian* d) const {
    using detail::FaceSide;
    const StencilSelector& st = stencil(e);
    if (d) d->setZero(2, st.num_dofs());

    // dof 0 = u_x, dof 1 = u_y; x faces carry u_x as normal component.
    auto side_state = [&](Side side, int normal_dof) -> FaceSide {
        const int tang_dof = 1 - normal_dof;
        const int k = st.slot[static_cast<int>(side)];
        if (k >= 0)
            return {u_plus[2 * k + normal_dof], u_plus[2 * k + tang_dof], 2 * k + normal_dof,
                    2 * k + tang_dof};
        if (side == Side::west && physics_.dirichlet_inlet)
            return {mu.mu1, u_plus[1], -1, 1};
        return {u_plus[normal_dof], u_plus[tang_dof], normal_dof, tang_dof};
    };

    Eigen::Vector2d phi = Eigen::Vector2d::Zero();
    auto add_face = [&](const FaceSide& L, const FaceSide& R, int normal_dof, double sign,
                        double inv_h, Side where) {
        const detail::FaceFlux f = detail::normal_flux(L, R);
        if (!std::isfinite(f.fn) || !std::isfinite(f.ft)) {
            static const char* names[] = {"west", "east", "south", "north"};
            throw NumericalError(concat("non-finite Godunov flux at ", names[static_cast<int>(where)],
                                        " face of cell ", e));
        }
        const int tang_dof = 1 - normal_dof;
        const double w = sign * inv_h;
        phi[normal_dof] += w * f.fn;
        phi[tang_dof] += w * f.ft;
        if (!d) return;
        const int cols[4] = {L.col_n, L.col_t, R.col_n, R.col_t};
        for (int p = 0; p < 4; ++p) {
            if (cols[p] < 0) continue;
            (*d)(normal_dof, cols[p]) += w * f.dfn[p];
            (*d)(tang_dof, cols[p]) += w * f.dft[p];
        }
    };

    const FaceSide cx = {u_plus[0], u_plus[1], 0, 1};
    const FaceSide cy = {u_plus[1], u_plus[0], 1, 0};
    const double ihx = 1.0 / mesh_.hx(), ihy = 1.0 / mesh_.hy();
    add_face(side_state(Side::west, 0), cx, 0, -1.0, ihx, Side::west);
    add_face(cx, side_state(Side::east, 0), 0, +1.0, ihx, Side::east);
    add_face(side_state(Side::south, 1), cy, 1, -1.0, ihy, Side::south);
    add_face(cy, side_state(Side::north, 1), 1, +1.0, ihy, Side::north);

    phi[0] -= source(e, mu);
    return phi;
}

/// Newton time stepper that keeps the sparse LU symbolic analysis between
/// steps (the Jacobian pattern never changes).
class HdmStepper {
public:
    explicit HdmStepper(const BurgersHdm& hdm, NewtonControls controls = {})
        : hdm_(&hdm), controls_(controls) {}

    Vector advance(const Vector& u_prev, double t_next, const ParameterPoint& mu, double dt,
                   StepStats* stats = nullptr) {
        const Vector phi_prev = hdm_->semi_discrete_rhs(u_prev, t_next - dt, mu);
        Vector u = u_prev;
        Vector r = hdm_->residual_from(u, u_prev, phi_prev, t_next, mu, dt);
        double rnorm = r.norm();
        const double r0 = rnorm;
        const double target = std::max(controls_.rel_tol * r0, controls_.abs_tol);
        StepStats local{0, r0, r0};

        while (rnorm > target) {
            if (local.iterations >= controls_.max_iters)
                throw NonConvergence(concat("HDM Newton did not converge in ", controls_.max_iters,
                                            " iterations at t=", t_next, " (|r|=", rnorm,
                                            ", |r0|=", r0, ")"),
                                     rnorm);
            ++local.iterations;
            const SparseMatrix J = hdm_->jacobian(u, t_next, mu, dt);
            if (!analyzed_) {
                lu_.analyzePattern(J);
                analyzed_ = true;
            }
            lu_.factorize(J);
            if (lu_.info() != Eigen::Success)
                throw NumericalError(concat("HDM Jacobian factorization failed at t=", t_next));
            Vector du = lu_.solve(-r);

            double step = 1.0;
            Vector trial = u + du;
            Vector rt = hdm_->residual_from(trial, u_prev, phi_prev, t_next, mu, dt);
            for (int h = 0; h < controls_.max_halvings && !(rt.norm() < rnorm); ++h) {
                step *= 0.5;
                trial = u + step * du;
                rt = hdm_->residual_from(trial, u_prev, phi_prev, t_next, mu, dt);
            }
            if (!rt.allFinite())
                throw NonConvergence(concat("HDM Newton produced non-finite residual at t=", t_next),
                                     rnorm);
            u = std::move(trial);
            r = std::move(rt);
            rnorm = r.norm();
        }
        local.final_residual = rnorm;
        if (stats) *stats = local;
        return u;
    }

    const NewtonControls& controls() const { return controls_; }

private:
    const BurgersHdm* hdm_;
    NewtonControls controls_;
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu_;
    bool analyzed_ = false;
};

inline Vector advance_time_step(const BurgersHdm& hdm, const Vector& u_prev, double t_next,
                                const ParameterPoint& mu, double dt, NewtonControls controls = {},
                                StepStats* stats = nullptr) {
    HdmStepper stepper(hdm, controls);
    return stepper.advance(u_prev, t_next, mu, dt, stats);
}

using FrameObserver = std::function<void(int step, const Vector& u)>;

/// Marches from the initial state. Frames are handed to `observer` as they are
/// produced; use solve_hdm() when the whole trajectory fits in memory.
inline void march_hdm(const BurgersHdm& hdm, const ParameterPoint& mu, const TimeGrid& grid,
                      const FrameObserver& observer, NewtonControls controls = {}) {
    if (!mu.in_domain()) log::warn("parameter point ", mu, " lies outside the training box");
    HdmStepper stepper(hdm, controls);
    Vector u = hdm.initial_state();
    observer(0, u);
    for (int m = 0; m < grid.nt; ++m) {
        try {
            u = stepper.advance(u, grid.time(m + 1), mu, grid.dt);
        } catch (const NonConvergence& ex) {
            throw NonConvergence(concat("step ", m + 1, ": ", ex.what()), ex.last_residual());
        }
        observer(m + 1, u);
    }
}

inline Trajectory solve_hdm(const BurgersHdm& hdm, const ParameterPoint& mu, const TimeGrid& grid,
                            NewtonControls controls = {}) {
    Trajectory traj;
    traj.reserve(static_cast<std::size_t>(grid.nt) + 1);
    march_hdm(hdm, mu, grid, [&](int, const Vector& u) { traj.push_back(u); }, controls);
    return traj;
}

// ---------------------------------------------------------------------------
// MORSNAP1 trajectory files

constexpr std::uint64_t kInterleavedLayout = 1;

struct SnapshotHeader {
    int nx = 0, ny = 0, nt = 0;
    double dt = 0.0;
    ParameterPoint mu;
    std::uint64_t layout = kInterleavedLayout;
};

class SnapshotFileWriter {
public:
    SnapshotFileWriter(const std::string& path, const SnapshotHeader& h) : w_(path), header_(h) {
        w_.magic("MORSNAP1");
        w_.u64(static_cast<std::uint64_t>(h.nx));
        w_.u64(static_cast<std::uint64_t>(h.ny));
        w_.u64(static_cast<std::uint64_t>(h.nt));
        w_.f64(h.dt);
        w_.f64(h.mu.mu1);
        w_.f64(h.mu.mu2);
        w_.u64(h.layout);
    }

    void frame(const Vector& u) {
        require(u.size() == 2 * Index{header_.nx} * header_.ny, "frame size mismatch");
        w_.f64s(u.data(), static_cast<std::size_t>(u.size()));
        ++frames_;
    }

    void close() {
        require(frames_ == header_.nt + 1,
                concat("snapshot file expects ", header_.nt + 1, " frames, got ", frames_));
        w_.close();
    }

private:
    io::Writer w_;
    SnapshotHeader header_;
    int frames_ = 0;
};

struct SnapshotFile {
    SnapshotHeader header;
    Trajectory frames;
};

inline SnapshotFile read_snapshot_file(const std::string& path) {
    io::Reader r(path);
    r.expect_magic("MORSNAP1");
    SnapshotFile f;
    f.header.nx = static_cast<int>(r.u64());
    f.header.ny = static_cast<int>(r.u64());
    f.header.nt = static_cast<int>(r.u64());
    f.header.dt = r.f64();
    f.header.mu.mu1 = r.f64();
    f.header.mu.mu2 = r.f64();
    f.header.layout = r.u64();
    if (f.header.layout != kInterleavedLayout)
        throw ValidationError(path + ": unsupported dof layout tag");
    const Index n = 2 * Index{f.header.nx} * f.header.ny;
    f.frames.reserve(static_cast<std::size_t>(f.header.nt) + 1);
    for (int m = 0; m <= f.header.nt; ++m) {
        Vector u(n);
        r.f64s(u.data(), static_cast<std::size_t>(n));
        f.frames.push_back(std::move(u));
    }
    return f;
}

inline void write_snapshot_file(const std::string& path, const SnapshotHeader& h,
                                const Trajectory& traj) {
    SnapshotFileWriter w(path, h);
    for (const auto& u : traj) w.frame(u);
    w.close();
}

}  // namespace morbench
