#pragma once

// Least-squares Petrov-Galerkin time marching on the reduced coordinates.
// Each implicit step minimizes |r(u(q))| with Gauss-Newton; the linearized
// problem W dq = -r, W = J(u) du/dq, is solved by truncated SVD.
//
// The per-iteration residual and left basis come from an "assembler":
//
//   void begin_step(const Vector& q_prev, double t_next, double dt);
//   double evaluate(const Vector& q);   // residual norm, caches r at q
//   const Vector& residual() const;     // r at the last evaluated q
//   Matrix left_rob();                  // W at the last evaluated q
//
// FullAssembler below works on the whole mesh; the ECSW header provides the
// hyperreduced one.

#include "morbench/core.hpp"
#include "morbench/hdm_burgers.hpp"
#include "morbench/linalg.hpp"
#include "morbench/manifold.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

namespace morbench {

struct GnControls {
    double abs_tol_factor = 1e-6;  ///< abs tol = factor * |r| at the first iterate of step 1
    double abs_tol = 0.0;          ///< explicit absolute tolerance, used when > 0
    double rel_tol = 1e-6;         ///< stop once an iteration reduces |r| by less than this fraction
    int max_iters = 20;
    double svd_threshold = 1e-8;
    int max_halvings = 5;
};

struct StepDiagnostics {
    int iterations = 0;
    double initial_residual = 0.0;
    double final_residual = 0.0;
    Index rank = 0;
    bool flagged = false;        ///< accepted a step that increased |r|
    bool hit_max_iters = false;
};

struct ReducedTrajectory {
    std::vector<Vector> q;
    std::vector<StepDiagnostics> steps;  ///< steps[m] produced q[m + 1]

    int flagged_steps() const {
        int c = 0;
        for (const auto& s : steps) c += s.flagged ? 1 : 0;
        return c;
    }
};

/// W = J(u(q)) du/dq, one sparse Jacobian times dense tangent product.
inline Matrix left_rob(const BurgersHdm& hdm, const Decoder& dec, const Vector& q, double t,
                       const ParameterPoint& mu, double dt) {
    Vector u;
    Matrix T;
    dec.decode_with_tangent(q, u, T);
    const SparseMatrix J = hdm.jacobian(u, t, mu, dt);
    return J * T;
}

class FullAssembler {
public:
    FullAssembler(const BurgersHdm& hdm, const Decoder& dec, ParameterPoint mu)
        : hdm_(&hdm), dec_(&dec), mu_(mu) {
        require(dec.N() == hdm.num_dofs(), "decoder dimension does not match the mesh");
    }

    void begin_step(const Vector& q_prev, double t_next, double dt) {
        t_ = t_next;
        dt_ = dt;
        u_prev_ = dec_->decode(q_prev);
        phi_prev_ = hdm_->semi_discrete_rhs(u_prev_, t_next - dt, mu_);
    }

    double evaluate(const Vector& q) {
        q_ = q;
        u_ = dec_->decode(q);
        r_ = hdm_->residual_from(u_, u_prev_, phi_prev_, t_, mu_, dt_);
        return r_.norm();
    }

    const Vector& residual() const { return r_; }
    const Vector& state() const { return u_; }

    Matrix left_rob() { return morbench::left_rob(*hdm_, *dec_, q_, t_, mu_, dt_); }

private:
    const BurgersHdm* hdm_;
    const Decoder* dec_;
    ParameterPoint mu_;
    double t_ = 0.0, dt_ = 0.0;
    Vector q_, u_, u_prev_, phi_prev_, r_;
};

namespace detail {

inline std::string format_trace(const std::vector<double>& trace) {
    std::ostringstream os;
    os << "|r| trace:";
    for (double v : trace) os << ' ' << v;
    return os.str();
}

}  // namespace detail

/// Gauss-Newton iterations for one time step, starting at q_guess.
/// `begin_step` must already have been called on the assembler.
template <class Assembler>
Vector gauss_newton_step(Assembler& as, Vector q, const GnControls& ctl, double abs_tol,
                         StepDiagnostics& diag) {
    std::vector<double> trace;
    double rn = as.evaluate(q);
    trace.push_back(rn);
    diag = StepDiagnostics{};
    diag.initial_residual = rn;
    if (!std::isfinite(rn)) throw NonConvergence("non-finite initial residual; " + detail::format_trace(trace), rn);

    while (rn > abs_tol) {
        if (diag.iterations >= ctl.max_iters) {
            diag.hit_max_iters = true;
            break;
        }
        const Matrix W = as.left_rob();
        const TsvdSolution s = tsvd_least_squares(W, -as.residual(), ctl.svd_threshold);
        if (s.rank == 0)
            throw RankCollapse("every singular value of the left basis was truncated (sigma_max = " +
                               std::to_string(s.sigma_max) + ")");
        diag.rank = s.rank;
        ++diag.iterations;

        double step = 1.0;
        Vector trial = q + s.x;
        double rt = as.evaluate(trial);
        for (int h = 0; h < ctl.max_halvings && !(rt <= rn); ++h) {
            step *= 0.5;
            trial = q + step * s.x;
            rt = as.evaluate(trial);
        }
        trace.push_back(rt);
        if (!std::isfinite(rt))
            throw NonConvergence("Gauss-Newton produced a non-finite residual; " + detail::format_trace(trace), rn);
        // no descent within round-off of the current residual: q is stationary
        if (rt > rn && rt - rn <= ctl.rel_tol * rn) {
            as.evaluate(q);
            break;
        }
        q = std::move(trial);
        const bool increased = rt > rn;
        const double drop = (rn - rt) / rn;
        rn = rt;
        if (increased) {
            diag.flagged = true;
            break;
        }
        if (drop <= ctl.rel_tol) break;
    }
    diag.final_residual = rn;
    return q;
}

/// Marches nt steps from q0; each step starts from the previous converged q.
template <class Assembler>
ReducedTrajectory solve_rom_with(Assembler& as, const Vector& q0, const TimeGrid& grid,
                                 const GnControls& ctl) {
    ReducedTrajectory out;
    out.q.reserve(static_cast<std::size_t>(grid.nt) + 1);
    out.q.push_back(q0);
    double abs_tol = ctl.abs_tol;
    for (int m = 0; m < grid.nt; ++m) {
        as.begin_step(out.q.back(), grid.time(m + 1), grid.dt);
        if (abs_tol <= 0.0) abs_tol = ctl.abs_tol_factor * as.evaluate(out.q.back());
        StepDiagnostics diag;
        try {
            out.q.push_back(gauss_newton_step(as, out.q.back(), ctl, abs_tol, diag));
        } catch (const NonConvergence& ex) {
            throw NonConvergence(concat("ROM step ", m + 1, ": ", ex.what()), ex.last_residual());
        } catch (const RankCollapse& ex) {
            throw RankCollapse(concat("ROM step ", m + 1, ": ", ex.what()));
        }
        out.steps.push_back(diag);
    }
    return out;
}

/// Full-mesh LSPG solve starting from the encoded initial condition.
inline ReducedTrajectory solve_rom(const BurgersHdm& hdm, const ParameterPoint& mu,
                                   const Decoder& dec, const TimeGrid& grid,
                                   const GnControls& ctl = {}, const EncodeControls& enc = {}) {
    FullAssembler as(hdm, dec, mu);
    return solve_rom_with(as, dec.encode(hdm.initial_state(), enc), grid, ctl);
}

inline Trajectory reconstruct(const Decoder& dec, const ReducedTrajectory& rt) {
    Trajectory out;
    out.reserve(rt.q.size());
    for (const auto& q : rt.q) out.push_back(dec.decode(q));
    return out;
}

inline void write_reduced_trajectory_csv(const std::string& path, const ReducedTrajectory& rt,
                                         double dt) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << "step,t";
    const Index n = rt.q.empty() ? 0 : rt.q.front().size();
    for (Index i = 0; i < n; ++i) out << ",q" << i + 1;
    out << '\n' << std::setprecision(17);
    for (std::size_t m = 0; m < rt.q.size(); ++m) {
        out << m << ',' << dt * static_cast<double>(m);
        for (Index i = 0; i < n; ++i) out << ',' << rt.q[m][i];
        out << '\n';
    }
}

}  // namespace morbench
