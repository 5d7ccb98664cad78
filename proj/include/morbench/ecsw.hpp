#pragma once

// Energy-conserving sampling and weighting: training-system assembly from
// snapshots placed on the decoder's manifold, sparse nonnegative weights,
// reduced/augmented meshes and hyperreduced residual/Jacobian evaluation.

#include "morbench/core.hpp"
#include "morbench/hdm_burgers.hpp"
#include "morbench/lspg.hpp"
#include "morbench/manifold.hpp"
#include "morbench/nnls.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <vector>

namespace morbench {

/// A converged HDM state and its predecessor along the same trajectory.
struct TrainingSnapshot {
    Vector u;
    Vector u_prev;
    ParameterPoint mu;
    double t = 0.0;
    int step = 0;
};

/// Every `stride`-th step of a trajectory (stride, 2*stride, ...), each paired
/// with the immediately preceding step.
inline std::vector<TrainingSnapshot> select_training_snapshots(const Trajectory& traj,
                                                               const ParameterPoint& mu, double dt,
                                                               int stride) {
    require(stride >= 1, "ECSW time stride must be >= 1");
    std::vector<TrainingSnapshot> out;
    for (std::size_t m = static_cast<std::size_t>(stride); m < traj.size();
         m += static_cast<std::size_t>(stride))
        out.push_back({traj[m], traj[m - 1], mu, dt * static_cast<double>(m), static_cast<int>(m)});
    return out;
}

struct EcswTrainingSystem {
    Matrix C;  ///< (N_h n) x N_e
    Vector d;  ///< N_h n
    Index n = 0;
    std::vector<SnapshotColumn> provenance;  ///< snapshots actually used
    int skipped = 0;
};

/// Row block l holds, for every entity e, (L_e W)^T r_e evaluated at the
/// decoder reconstruction of training snapshot l.
inline EcswTrainingSystem assemble_training_system(const BurgersHdm& hdm, const Decoder& dec,
                                                   const std::vector<TrainingSnapshot>& snaps,
                                                   double dt, const EncodeControls& enc = {}) {
    require(dec.N() == hdm.num_dofs(), "decoder dimension does not match the mesh");
    require(!snaps.empty(), "no ECSW training snapshots");
    const Index n = dec.n();
    const int ne = hdm.num_cells();

    struct Encoded {
        Vector u, u_prev;
        Matrix T;
        const TrainingSnapshot* src;
    };
    std::vector<Encoded> enc_snaps;
    int skipped = 0;
    for (const auto& s : snaps) {
        try {
            Encoded e;
            const Vector q = dec.encode(s.u, enc);
            const Vector q_prev = dec.encode(s.u_prev, enc);
            dec.decode_with_tangent(q, e.u, e.T);
            e.u_prev = dec.decode(q_prev);
            e.src = &s;
            enc_snaps.push_back(std::move(e));
        } catch (const NumericalError& ex) {
            log::warn("skipping ECSW training snapshot at step ", s.step, ": ", ex.what());
            ++skipped;
        }
    }
    if (10 * skipped >= static_cast<int>(snaps.size()))
        throw NumericalError(concat("encode failed for ", skipped, " of ", snaps.size(),
                                    " ECSW training snapshots"));

    EcswTrainingSystem sys;
    sys.n = n;
    sys.skipped = skipped;
    const auto nh = static_cast<Index>(enc_snaps.size());
    sys.C.resize(nh * n, ne);
    sys.d = Vector::Zero(nh * n);
    for (Index l = 0; l < nh; ++l) {
        const Encoded& s = enc_snaps[static_cast<std::size_t>(l)];
        const ParameterPoint& mu = s.src->mu;
        const Vector r = hdm.residual(s.u, s.u_prev, s.src->t, mu, dt);
        const Matrix W = hdm.jacobian(s.u, s.src->t, mu, dt) * s.T;
        for (int e = 0; e < ne; ++e) {
            auto c = sys.C.block(l * n, e, n, 1);
            c = W.row(2 * e).transpose() * r[2 * e] + W.row(2 * e + 1).transpose() * r[2 * e + 1];
            sys.d.segment(l * n, n) += c;
        }
        sys.provenance.push_back({mu, s.src->step});
    }
    return sys;
}

struct Cubature {
    std::vector<int> entities;  ///< reduced mesh, ascending
    std::vector<double> weights;
    std::vector<int> augmented;  ///< reduced mesh plus stencil neighbors, ascending
    int mesh_cells = 0;

    Index size() const { return static_cast<Index>(entities.size()); }
    bool valid() const { return !entities.empty(); }
};

/// Reduced mesh = support of xi; augmented mesh adds von Neumann neighbors.
inline Cubature build_reduced_mesh(const Vector& xi, const Mesh2D& mesh) {
    require(xi.size() == mesh.num_cells(), "weight vector length differs from the cell count");
    Cubature cub;
    cub.mesh_cells = mesh.num_cells();
    std::vector<char> in_aug(static_cast<std::size_t>(mesh.num_cells()), 0);
    for (int e = 0; e < mesh.num_cells(); ++e) {
        if (!(xi[e] > 0.0)) continue;
        cub.entities.push_back(e);
        cub.weights.push_back(xi[e]);
        in_aug[static_cast<std::size_t>(e)] = 1;
        for (int s = 0; s < 4; ++s) {
            const int nb = mesh.neighbor(e, static_cast<Side>(s));
            if (nb >= 0) in_aug[static_cast<std::size_t>(nb)] = 1;
        }
    }
    for (int e = 0; e < mesh.num_cells(); ++e)
        if (in_aug[static_cast<std::size_t>(e)]) cub.augmented.push_back(e);
    return cub;
}

inline Cubature unit_cubature(const Mesh2D& mesh) {
    return build_reduced_mesh(Vector::Ones(mesh.num_cells()), mesh);
}

struct EcswResult {
    Cubature cubature;
    NnlsResult nnls;
};

inline EcswResult train_cubature(const EcswTrainingSystem& sys, const Mesh2D& mesh,
                                 const NnlsControls& ctl) {
    EcswResult out;
    out.nnls = nnls_early_stop(sys.C, sys.d, ctl);
    out.cubature = build_reduced_mesh(out.nnls.x, mesh);
    return out;
}

/// LSPG assembler restricted to the augmented reduced mesh. Residual rows
/// and left-basis rows of entity e carry sqrt(xi_e), so the Gauss-Newton
/// normal equations are sum_e xi_e W_e^T W_e dq = -sum_e xi_e W_e^T r_e.
class HyperreducedAssembler {
public:
    struct Sample {
        int entity = 0;
        double weight = 0.0, sqrt_weight = 0.0;
        std::array<int, 5> local{};
        std::array<double, 10> u_plus{}, u_prev_plus{};
        Eigen::Vector2d phi_prev = Eigen::Vector2d::Zero();
    };

    HyperreducedAssembler(const BurgersHdm& hdm, const Decoder& dec, const Cubature& cub,
                          ParameterPoint mu)
        : hdm_(&hdm), mu_(mu) {
        if (cub.mesh_cells != hdm.num_cells() || dec.N() != hdm.num_dofs())
            throw ValidationError(concat("cubature built for ", cub.mesh_cells,
                                         " cells, decoder/mesh have ", dec.N() / 2, "/",
                                         hdm.num_cells()));
        std::vector<int> local(static_cast<std::size_t>(hdm.num_cells()), -1);
        std::vector<Index> rows;
        rows.reserve(2 * cub.augmented.size());
        for (std::size_t i = 0; i < cub.augmented.size(); ++i) {
            const int c = cub.augmented[i];
            local[static_cast<std::size_t>(c)] = static_cast<int>(i);
            rows.push_back(2 * Index{c});
            rows.push_back(2 * Index{c} + 1);
        }
        dec_ = dec.restrict_rows(rows);
        aug_dofs_ = std::move(rows);
        for (std::size_t i = 0; i < cub.entities.size(); ++i) {
            Sample s;
            s.entity = cub.entities[i];
            s.weight = cub.weights[i];
            s.sqrt_weight = std::sqrt(cub.weights[i]);
            const StencilSelector& st = hdm.stencil(s.entity);
            for (int k = 0; k < st.count; ++k) {
                s.local[static_cast<std::size_t>(k)] = local[static_cast<std::size_t>(st.cells[k])];
                require(s.local[static_cast<std::size_t>(k)] >= 0,
                        "augmented mesh misses a stencil neighbor");
            }
            samples_.push_back(s);
        }
        r_.resize(2 * static_cast<Index>(samples_.size()));
    }

    void begin_step(const Vector& q_prev, double t_next, double dt) {
        t_ = t_next;
        dt_ = dt;
        u_prev_ = dec_.decode(q_prev);
        for (auto& s : samples_) {
            gather(s, u_prev_, s.u_prev_plus.data());
            s.phi_prev = hdm_->cell_balance(s.entity, s.u_prev_plus.data(), mu_);
        }
    }

    double evaluate(const Vector& q) {
        q_ = q;
        u_ = dec_.decode(q);
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            Sample& s = samples_[i];
            gather(s, u_, s.u_plus.data());
            const Eigen::Vector2d phi = hdm_->cell_balance(s.entity, s.u_plus.data(), mu_);
            r_.segment<2>(2 * static_cast<Index>(i)) =
                s.sqrt_weight * BurgersHdm::entity_residual_from(s.u_plus.data(), s.u_prev_plus.data(),
                                                                 phi, s.phi_prev, dt_);
        }
        return r_.norm();
    }

    const Vector& residual() const { return r_; }

    Matrix left_rob() {
        const Matrix T = dec_.tangent(q_);
        Matrix W(r_.size(), T.cols());
        for (std::size_t i = 0; i < samples_.size(); ++i)
            W.middleRows(2 * static_cast<Index>(i), 2) = samples_[i].sqrt_weight * entity_rob(samples_[i], T);
        return W;
    }

    /// Unweighted (L_e W) = J_e L_{e+} du/dq for one sampled entity.
    Eigen::Matrix<double, 2, Eigen::Dynamic> entity_rob(const Sample& s, const Matrix& T) const;

    /// Projected quantities with weights applied once (not square-rooted).
    struct Projection {
        Vector r_n;       ///< sum_e xi_e (L_e W)^T r_e
        Matrix J_n;       ///< sum_e xi_e (L_e W)^T (L_e W), n x n
        Matrix J_u;       ///< sum_e xi_e (L_e W)^T J_e L_{e+}, n x |augmented dofs|
        std::vector<Index> dofs;  ///< global dof of each J_u column
    };

    Projection project() const {
        const Matrix T = dec_.tangent(q_);
        const Index n = T.cols();
        Projection p;
        p.r_n = Vector::Zero(n);
        p.J_n = Matrix::Zero(n, n);
        p.J_u = Matrix::Zero(n, static_cast<Index>(aug_dofs_.size()));
        p.dofs = aug_dofs_;
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            const Sample& s = samples_[i];
            const EntityJacobian je = hdm_->entity_jacobian(s.entity, s.u_plus.data(), t_, mu_, dt_);
            const Eigen::Matrix<double, 2, Eigen::Dynamic> we = entity_rob(s, T);
            const Eigen::Vector2d re =
                r_.segment<2>(2 * static_cast<Index>(i)) / s.sqrt_weight;
            p.r_n.noalias() += s.weight * (we.transpose() * re);
            p.J_n.noalias() += s.weight * (we.transpose() * we);
            const Matrix wj = s.weight * (we.transpose() * je);
            for (int k = 0; k < hdm_->stencil(s.entity).count; ++k)
                p.J_u.middleCols(2 * Index{s.local[static_cast<std::size_t>(k)]}, 2) += wj.middleCols(2 * k, 2);
        }
        return p;
    }

    const Decoder& restricted_decoder() const { return dec_; }
    const std::vector<Index>& augmented_dofs() const { return aug_dofs_; }

private:
    void gather(const Sample& s, const Vector& u_loc, double* out) const {
        const int count = hdm_->stencil(s.entity).count;
        for (int k = 0; k < count; ++k) {
            const Index c = s.local[static_cast<std::size_t>(k)];
            out[2 * k] = u_loc[2 * c];
            out[2 * k + 1] = u_loc[2 * c + 1];
        }
    }

    const BurgersHdm* hdm_;
    ParameterPoint mu_;
    Decoder dec_;
    std::vector<Index> aug_dofs_;
    std::vector<Sample> samples_;
    double t_ = 0.0, dt_ = 0.0;
    Vector q_, u_, u_prev_, r_;
};

inline Eigen::Matrix<double, 2, Eigen::Dynamic> HyperreducedAssembler::entity_rob(const Sample& s,
                                                                                 const Matrix& T) const {
    const EntityJacobian je = hdm_->entity_jacobian(s.entity, s.u_plus.data(), t_, mu_, dt_);
    Eigen::Matrix<double, 2, Eigen::Dynamic> we = Eigen::Matrix<double, 2, Eigen::Dynamic>::Zero(2, T.cols());
    for (int k = 0; k < hdm_->stencil(s.entity).count; ++k)
        we.noalias() += je.middleCols(2 * k, 2) * T.middleRows(2 * Index{s.local[static_cast<std::size_t>(k)]}, 2);
    return we;
}

struct HyperreducedEvaluation {
    HyperreducedAssembler::Projection projection;
    bool valid = true;  ///< false when the cubature has no positive weight
};

/// One-shot hyperreduced residual/Jacobian at q with previous coordinates q_prev.
inline HyperreducedEvaluation hyperreduced_residual(const BurgersHdm& hdm, const Decoder& dec,
                                                    const Cubature& cub, const Vector& q,
                                                    const Vector& q_prev, double t,
                                                    const ParameterPoint& mu, double dt) {
    HyperreducedEvaluation out;
    if (!cub.valid()) {
        out.valid = false;
        out.projection.r_n = Vector::Zero(dec.n());
        out.projection.J_n = Matrix::Zero(dec.n(), dec.n());
        return out;
    }
    HyperreducedAssembler as(hdm, dec, cub, mu);
    as.begin_step(q_prev, t, dt);
    as.evaluate(q);
    out.projection = as.project();
    return out;
}

/// Hyperreduced LSPG solve; q0 is the encoded initial condition.
inline ReducedTrajectory solve_rom(const BurgersHdm& hdm, const ParameterPoint& mu,
                                   const Decoder& dec, const TimeGrid& grid, const GnControls& ctl,
                                   const Cubature& cub, const Vector& q0) {
    if (!cub.valid()) throw ValidationError("cubature has no positive weights");
    HyperreducedAssembler as(hdm, dec, cub, mu);
    return solve_rom_with(as, q0, grid, ctl);
}

inline ReducedTrajectory solve_rom(const BurgersHdm& hdm, const ParameterPoint& mu,
                                   const Decoder& dec, const TimeGrid& grid, const GnControls& ctl,
                                   const Cubature& cub, const EncodeControls& enc = {}) {
    return solve_rom(hdm, mu, dec, grid, ctl, cub, dec.encode(hdm.initial_state(), enc));
}

// ---------------------------------------------------------------------------
// Cubature CSV files

inline void write_cubature_csv(const std::string& path, const Cubature& cub) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << "entity,weight\n" << std::setprecision(17);
    for (std::size_t i = 0; i < cub.entities.size(); ++i)
        out << cub.entities[i] << ',' << cub.weights[i] << '\n';
}

inline Cubature read_cubature_csv(const std::string& path, const Mesh2D& mesh) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open for reading: " + path);
    std::string line;
    std::getline(in, line);
    Vector xi = Vector::Zero(mesh.num_cells());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ValidationError(path + ": malformed row '" + line + "'");
        const int e = std::stoi(line.substr(0, comma));
        const double w = std::stod(line.substr(comma + 1));
        require(e >= 0 && e < mesh.num_cells(), path + ": entity id out of range");
        require(w > 0.0, path + ": stored weights must be positive");
        xi[e] = w;
    }
    return build_reduced_mesh(xi, mesh);
}

/// ny rows (y ascending) by nx columns; 1 marks a reduced-mesh cell.
inline void write_reduced_mesh_mask_csv(const std::string& path, const Cubature& cub,
                                        const Mesh2D& mesh) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    std::vector<char> mask(static_cast<std::size_t>(mesh.num_cells()), 0);
    for (int e : cub.entities) mask[static_cast<std::size_t>(e)] = 1;
    for (int j = 0; j < mesh.ny(); ++j) {
        for (int i = 0; i < mesh.nx(); ++i)
            out << (i ? "," : "") << int(mask[static_cast<std::size_t>(mesh.cell(i, j))]);
        out << '\n';
    }
}

}  // namespace morbench
