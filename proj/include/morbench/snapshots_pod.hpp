#pragma once

// Snapshot collection, thin SVD and construction of the primary/secondary
// reduced-order bases.

#include "morbench/binary_io.hpp"
#include "morbench/core.hpp"
#include "morbench/hdm_burgers.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <vector>

namespace morbench {

struct SamplingPlan {
    std::vector<ParameterPoint> points;
    int stride = 1;  ///< keep every stride-th time step (step 0 always kept)

    /// Tensor grid with n1 x n2 points spanning the closed box, mu1 fastest.
    static SamplingPlan uniform_grid(double mu1_lo, double mu1_hi, int n1, double mu2_lo,
                                     double mu2_hi, int n2, int stride = 1) {
        require(n1 >= 1 && n2 >= 1, "sampling grid needs at least one point per axis");
        require(stride >= 1, "snapshot stride must be >= 1");
        SamplingPlan plan;
        plan.stride = stride;
        auto at = [](double lo, double hi, int n, int i) {
            return n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
        };
        for (int j = 0; j < n2; ++j)
            for (int i = 0; i < n1; ++i)
                plan.points.push_back({at(mu1_lo, mu1_hi, n1, i), at(mu2_lo, mu2_hi, n2, j)});
        return plan;
    }
};

struct SnapshotColumn {
    ParameterPoint mu;
    int step = 0;
};

struct SnapshotMatrix {
    Matrix S;  ///< N x Ns, columns u^l - u_ref
    std::vector<SnapshotColumn> provenance;
    Vector u_ref;

    Index rows() const { return S.rows(); }
    Index cols() const { return S.cols(); }
};

/// Accumulates trajectories one at a time so the caller never needs every
/// trajectory in memory at once.
class SnapshotMatrixBuilder {
public:
    SnapshotMatrixBuilder(Vector u_ref, int stride = 1, Index capacity_hint = 0)
        : u_ref_(std::move(u_ref)), stride_(stride) {
        require(stride >= 1, "snapshot stride must be >= 1");
        S_.resize(u_ref_.size(), std::max<Index>(capacity_hint, 1));
    }

    void add_run(const ParameterPoint& mu, const Trajectory& traj) {
        for (std::size_t m = 0; m < traj.size(); m += static_cast<std::size_t>(stride_)) {
            const Vector& u = traj[m];
            if (u.size() != u_ref_.size())
                throw ValidationError(concat("snapshot has ", u.size(), " entries, expected ",
                                             u_ref_.size()));
            if (m == 0 && is_known_initial_condition(u)) continue;
            if (m == 0) initial_conditions_.push_back(used_);
            push(u - u_ref_, {mu, static_cast<int>(m)});
        }
    }

    SnapshotMatrix finish() && {
        SnapshotMatrix out;
        S_.conservativeResize(Eigen::NoChange, used_);
        out.S = std::move(S_);
        out.provenance = std::move(prov_);
        out.u_ref = std::move(u_ref_);
        return out;
    }

private:
    bool is_known_initial_condition(const Vector& u) const {
        const Vector shifted = u - u_ref_;
        for (Index c : initial_conditions_) {
            if (std::memcmp(S_.col(c).data(), shifted.data(),
                            static_cast<std::size_t>(shifted.size()) * sizeof(double)) == 0)
                return true;
        }
        return false;
    }

    void push(const Vector& col, SnapshotColumn p) {
        if (used_ == S_.cols()) S_.conservativeResize(Eigen::NoChange, 2 * S_.cols());
        S_.col(used_++) = col;
        prov_.push_back(p);
    }

    Vector u_ref_;
    int stride_;
    Matrix S_;
    Index used_ = 0;
    std::vector<SnapshotColumn> prov_;
    std::vector<Index> initial_conditions_;
};

inline SnapshotMatrix build_snapshot_matrix(
    const std::vector<std::pair<ParameterPoint, Trajectory>>& runs, const Vector& u_ref,
    int stride = 1) {
    Index total = 0;
    for (const auto& r : runs) total += static_cast<Index>(r.second.size());
    SnapshotMatrixBuilder b(u_ref, stride, total);
    for (const auto& [mu, traj] : runs) b.add_run(mu, traj);
    return std::move(b).finish();
}

struct SvdResult {
    Matrix U;      ///< N x k
    Vector sigma;  ///< k, descending, positive
    Matrix Y;      ///< Ns x k

    Index rank() const { return sigma.size(); }
};

enum class SvdMethod { automatic, direct, gram };

namespace detail {

// Largest-magnitude entry of every left vector made positive; keeps the
// factorization reproducible across SVD routes.
inline void canonicalize_signs(Matrix& U, Matrix& Y) {
    for (Index j = 0; j < U.cols(); ++j) {
        Index imax = 0;
        U.col(j).cwiseAbs().maxCoeff(&imax);
        if (U(imax, j) < 0.0) {
            U.col(j) = -U.col(j);
            Y.col(j) = -Y.col(j);
        }
    }
}

}  // namespace detail

/// Singular values below 1e-12 * sigma_1 count as zero. The Gram route cannot
/// resolve anything below its round-off floor (~sqrt(Ns * eps) * sigma_1) and
/// drops those too.
inline SvdResult thin_svd(const Matrix& S, SvdMethod method = SvdMethod::automatic) {
    require(S.size() > 0, "snapshot matrix is empty");
    if (!S.allFinite()) throw NumericalError("snapshot matrix has non-finite entries");
    if (S.squaredNorm() == 0.0) throw ValidationError("snapshot matrix is identically zero");

    if (method == SvdMethod::automatic)
        method = (S.rows() > 2 * S.cols() && S.rows() * S.cols() > 4'000'000) ? SvdMethod::gram
                                                                              : SvdMethod::direct;
    SvdResult out;
    if (method == SvdMethod::direct) {
        Eigen::BDCSVD<Matrix> svd(S, Eigen::ComputeThinU | Eigen::ComputeThinV);
        if (svd.info() != Eigen::Success) throw NumericalError("thin SVD failed to converge");
        const Vector& s = svd.singularValues();
        Index k = 0;
        while (k < s.size() && s[k] > 1e-12 * s[0]) ++k;
        out.U = svd.matrixU().leftCols(k);
        out.sigma = s.head(k);
        out.Y = svd.matrixV().leftCols(k);
    } else {
        const Index ns = S.cols();
        Matrix G = Matrix::Zero(ns, ns);
        G.selfadjointView<Eigen::Lower>().rankUpdate(S.transpose());
        Eigen::SelfAdjointEigenSolver<Matrix> eig(G.selfadjointView<Eigen::Lower>());
        if (eig.info() != Eigen::Success)
            throw NumericalError("Gram eigendecomposition failed to converge");
        // eigenvalues come ascending
        const Vector lam = eig.eigenvalues().reverse();
        const double floor_rel =
            std::max(1e-12, std::sqrt(10.0 * ns * std::numeric_limits<double>::epsilon()));
        const double smax = std::sqrt(std::max(lam[0], 0.0));
        Index k = 0;
        while (k < lam.size() && lam[k] > 0.0 && std::sqrt(lam[k]) > floor_rel * smax) ++k;
        out.sigma = lam.head(k).cwiseSqrt();
        out.Y = eig.eigenvectors().rightCols(k).rowwise().reverse();
        out.U = S * out.Y;
        for (Index j = 0; j < k; ++j) out.U.col(j) /= out.sigma[j];
        // re-orthonormalize; R is ~identity so Q keeps the column order
        Eigen::HouseholderQR<Matrix> qr(out.U);
        Matrix Q = qr.householderQ() * Matrix::Identity(out.U.rows(), k);
        const Matrix R = qr.matrixQR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
        for (Index j = 0; j < k; ++j)
            if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
        out.U = std::move(Q);
    }
    detail::canonicalize_signs(out.U, out.Y);
    return out;
}

/// How singular values are weighted in the energy criterion: squared (the
/// usual sigma_i^2 sums) or linear (plain sigma_i sums).
enum class EnergyMeasure { squared, linear };

/// Smallest n with 1 - sum_{i<=n} w_i / sum_j w_j <= eps, w_i = sigma_i^2
/// (default) or sigma_i.
inline Index truncate_by_energy(const Vector& sigma, double eps,
                                EnergyMeasure measure = EnergyMeasure::squared) {
    require(eps > 0.0 && eps < 1.0, "energy tolerance must lie in (0, 1)");
    require(sigma.size() > 0, "no singular values");
    auto w = [&](Index i) { return measure == EnergyMeasure::squared ? sigma[i] * sigma[i] : sigma[i]; };
    double total = 0.0;
    for (Index i = 0; i < sigma.size(); ++i) total += w(i);
    double kept = 0.0;
    for (Index n = 1; n <= sigma.size(); ++n) {
        kept += w(n - 1);
        if (1.0 - kept / total <= eps) return n;
    }
    return sigma.size();
}

struct RobPair {
    Matrix V;      ///< N x n
    Matrix V_bar;  ///< N x n_bar
    std::vector<Index> v_columns;      ///< columns of U_S used for V
    std::vector<Index> v_bar_columns;  ///< columns of U_S used for V_bar

    Index n() const { return V.cols(); }
    Index n_bar() const { return V_bar.cols(); }
    Index N() const { return V.rows(); }
};

/// V = first n left singular vectors, V_bar = the following n_bar.
inline RobPair build_robs(const SvdResult& svd, Index n, Index n_bar) {
    require(n >= 1 && n_bar >= 0, "basis sizes must be n >= 1, n_bar >= 0");
    if (n + n_bar > svd.rank())
        throw ValidationError(concat("n + n_bar = ", n + n_bar, " exceeds snapshot rank ", svd.rank()));
    RobPair rob;
    rob.V = svd.U.leftCols(n);
    rob.V_bar = svd.U.middleCols(n, n_bar);
    rob.v_columns.resize(static_cast<std::size_t>(n));
    std::iota(rob.v_columns.begin(), rob.v_columns.end(), Index{0});
    rob.v_bar_columns.resize(static_cast<std::size_t>(n_bar));
    std::iota(rob.v_bar_columns.begin(), rob.v_bar_columns.end(), n);
    return rob;
}

struct OrthogonalityResiduals {
    double v = 0.0, v_bar = 0.0, cross = 0.0;
    double max() const { return std::max({v, v_bar, cross}); }
};

inline OrthogonalityResiduals orthogonality_residuals(const RobPair& rob) {
    OrthogonalityResiduals o;
    o.v = (rob.V.transpose() * rob.V - Matrix::Identity(rob.n(), rob.n())).cwiseAbs().maxCoeff();
    if (rob.n_bar() > 0) {
        o.v_bar = (rob.V_bar.transpose() * rob.V_bar - Matrix::Identity(rob.n_bar(), rob.n_bar()))
                      .cwiseAbs()
                      .maxCoeff();
        o.cross = (rob.V.transpose() * rob.V_bar).cwiseAbs().maxCoeff();
    }
    return o;
}

// ---------------------------------------------------------------------------
// MORROB1 basis files and singular value export

inline void write_rob_file(const std::string& path, const RobPair& rob) {
    io::Writer w(path);
    w.magic("MORROB1");
    w.u64(static_cast<std::uint64_t>(rob.N()));
    w.u64(static_cast<std::uint64_t>(rob.n()));
    w.u64(static_cast<std::uint64_t>(rob.n_bar()));
    w.f64s(rob.V.data(), static_cast<std::size_t>(rob.V.size()));
    w.f64s(rob.V_bar.data(), static_cast<std::size_t>(rob.V_bar.size()));
    w.close();
}

inline RobPair read_rob_file(const std::string& path) {
    io::Reader r(path);
    r.expect_magic("MORROB1");
    const auto N = static_cast<Index>(r.u64());
    const auto n = static_cast<Index>(r.u64());
    const auto nb = static_cast<Index>(r.u64());
    RobPair rob;
    rob.V.resize(N, n);
    rob.V_bar.resize(N, nb);
    r.f64s(rob.V.data(), static_cast<std::size_t>(rob.V.size()));
    r.f64s(rob.V_bar.data(), static_cast<std::size_t>(rob.V_bar.size()));
    for (Index j = 0; j < n; ++j) rob.v_columns.push_back(j);
    for (Index j = 0; j < nb; ++j) rob.v_bar_columns.push_back(n + j);
    return rob;
}

/// index, sigma, and the energy fraction left out after keeping the first i.
inline void write_singular_values_csv(const std::string& path, const Vector& sigma) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << "index,sigma,residual_energy_fraction\n" << std::setprecision(17);
    const double total = sigma.squaredNorm();
    double kept = 0.0;
    for (Index i = 0; i < sigma.size(); ++i) {
        kept += sigma[i] * sigma[i];
        out << i + 1 << ',' << sigma[i] << ',' << std::max(0.0, 1.0 - kept / total) << '\n';
    }
}

}  // namespace morbench
