#pragma once

// Lawson-Hanson active-set NNLS, min |C x - d| s.t. x >= 0, stopped as soon as
// |C x - d| <= tau |d|. The least-squares subproblem on the passive set is
// kept as an explicit thin QR that is updated (Gram-Schmidt with one
// reorthogonalization) when a column enters and downdated with Givens
// rotations when one leaves.

#include "morbench/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace morbench {

struct NnlsControls {
    double tau = 0.01;
    /// Cap on least-squares subproblem solves; 0 means 10 * columns.
    long max_inner_solves = 0;
};

struct NnlsResult {
    Vector x;                  ///< dense, length = columns of C
    std::vector<Index> support;
    double residual_ratio = 0.0;  ///< |C x - d| / |d|
    long inner_solves = 0;
    int outer_iterations = 0;
};

namespace detail {

class PassiveQr {
public:
    PassiveQr(const Matrix& C, const Vector& d) : C_(C), d_(d) {
        const Index m = C.rows();
        const Index cap = std::min<Index>(m, C.cols());
        Q_.resize(m, std::max<Index>(cap, 1));
        R_.resize(std::max<Index>(cap, 1), std::max<Index>(cap, 1));
        qtd_.resize(std::max<Index>(cap, 1));
    }

    Index size() const { return static_cast<Index>(cols_.size()); }
    const std::vector<Index>& columns() const { return cols_; }

    /// Appends column j; false when it is numerically dependent on the set.
    bool add(Index j) {
        const Index p = size();
        if (p >= Q_.cols()) return false;
        Vector v = C_.col(j);
        const double vnorm = v.norm();
        if (vnorm == 0.0) return false;
        Vector h = Vector::Zero(p);
        for (int pass = 0; pass < 2 && p > 0; ++pass) {
            const Vector hh = Q_.leftCols(p).transpose() * v;
            v.noalias() -= Q_.leftCols(p) * hh;
            h += hh;
        }
        const double rho = v.norm();
        if (rho <= 1e-12 * vnorm) return false;
        Q_.col(p) = v / rho;
        R_.col(p).head(p) = h;
        R_(p, p) = rho;
        R_.row(p).head(p).setZero();
        qtd_[p] = Q_.col(p).dot(d_);
        cols_.push_back(j);
        return true;
    }

    /// Removes the column at position k and restores triangular form.
    void remove_at(Index k) {
        const Index p = size();
        for (Index c = k; c + 1 < p; ++c) R_.col(c).head(p) = R_.col(c + 1).head(p);
        for (Index i = k; i + 1 < p; ++i) {
            // zero R(i+1, i) with a rotation of rows i, i+1
            const double a = R_(i, i), b = R_(i + 1, i);
            const double r = std::hypot(a, b);
            if (r == 0.0) continue;
            const double c = a / r, s = b / r;
            for (Index col = i; col + 1 < p; ++col) {
                const double x = R_(i, col), y = R_(i + 1, col);
                R_(i, col) = c * x + s * y;
                R_(i + 1, col) = -s * x + c * y;
            }
            const Vector qi = Q_.col(i), qj = Q_.col(i + 1);
            Q_.col(i) = c * qi + s * qj;
            Q_.col(i + 1) = -s * qi + c * qj;
            const double ti = qtd_[i], tj = qtd_[i + 1];
            qtd_[i] = c * ti + s * tj;
            qtd_[i + 1] = -s * ti + c * tj;
        }
        cols_.erase(cols_.begin() + k);
    }

    /// Unconstrained least-squares coefficients on the passive set.
    Vector solve() const {
        const Index p = size();
        if (p == 0) return Vector();
        return R_.topLeftCorner(p, p).triangularView<Eigen::Upper>().solve(qtd_.head(p));
    }

private:
    const Matrix& C_;
    const Vector& d_;
    Matrix Q_, R_;
    Vector qtd_;
    std::vector<Index> cols_;
};

}  // namespace detail

inline NnlsResult nnls_early_stop(const Matrix& C, const Vector& d, const NnlsControls& ctl = {}) {
    require(C.rows() == d.size(), "NNLS right-hand side size mismatch");
    require(ctl.tau > 0.0 && ctl.tau < 1.0, "NNLS tolerance must lie in (0, 1)");
    const Index ncols = C.cols();
    const long cap = ctl.max_inner_solves > 0 ? ctl.max_inner_solves : 10L * std::max<Index>(ncols, 1);
    const double dnorm = d.norm();

    NnlsResult res;
    res.x = Vector::Zero(ncols);
    Vector resid = d;
    double best_ratio = dnorm > 0.0 ? 1.0 : 0.0;
    res.residual_ratio = best_ratio;
    if (dnorm == 0.0) return res;

    detail::PassiveQr qr(C, d);
    const double cmax = C.cwiseAbs().maxCoeff();
    std::vector<char> passive(static_cast<std::size_t>(ncols), 0);
    std::vector<char> blocked(static_cast<std::size_t>(ncols), 0);

    while (resid.norm() > ctl.tau * dnorm) {
        const Vector w = C.transpose() * resid;
        Index jmax = -1;
        double wmax = 0.0;
        for (Index j = 0; j < ncols; ++j) {
            const auto sj = static_cast<std::size_t>(j);
            if (passive[sj] || blocked[sj]) continue;
            if (w[j] > wmax) {
                wmax = w[j];
                jmax = j;
            }
        }
        if (jmax < 0 || wmax <= 1e-14 * dnorm * cmax)
            throw NumericalError(concat("NNLS reached its optimum without meeting tau = ", ctl.tau,
                                        "; best residual ratio ", best_ratio));
        ++res.outer_iterations;
        if (!qr.add(jmax)) {
            blocked[static_cast<std::size_t>(jmax)] = 1;
            continue;
        }
        passive[static_cast<std::size_t>(jmax)] = 1;

        for (;;) {
            if (++res.inner_solves > cap)
                throw NumericalError(concat("NNLS stagnated after ", cap,
                                            " subproblem solves; best residual ratio ", best_ratio));
            const Vector z = qr.solve();
            const auto& cols = qr.columns();
            bool feasible = true;
            for (Index k = 0; k < z.size(); ++k) feasible = feasible && z[k] > 0.0;
            if (feasible) {
                for (Index k = 0; k < z.size(); ++k) res.x[cols[static_cast<std::size_t>(k)]] = z[k];
                break;
            }
            // step toward z until the first passive coefficient hits zero
            double alpha = std::numeric_limits<double>::infinity();
            Index kmin = -1;
            for (Index k = 0; k < z.size(); ++k) {
                if (z[k] > 0.0) continue;
                const double xk = res.x[cols[static_cast<std::size_t>(k)]];
                const double a = xk / (xk - z[k]);
                if (a < alpha) {
                    alpha = a;
                    kmin = k;
                }
            }
            for (Index k = 0; k < z.size(); ++k) {
                const Index j = cols[static_cast<std::size_t>(k)];
                res.x[j] += alpha * (z[k] - res.x[j]);
            }
            res.x[cols[static_cast<std::size_t>(kmin)]] = 0.0;
            bool removed_new = false;
            for (Index k = qr.size(); k-- > 0;) {
                const Index j = qr.columns()[static_cast<std::size_t>(k)];
                if (res.x[j] > 0.0) continue;
                res.x[j] = 0.0;
                passive[static_cast<std::size_t>(j)] = 0;
                if (j == jmax) removed_new = true;
                qr.remove_at(k);
            }
            // the passive set changed, so dependent columns may be usable again;
            // an entering column rejected at zero step stays out for now
            std::fill(blocked.begin(), blocked.end(), 0);
            if (removed_new && alpha == 0.0) blocked[static_cast<std::size_t>(jmax)] = 1;
        }
        resid = d - C * res.x;
        best_ratio = std::min(best_ratio, resid.norm() / dnorm);
    }

    res.residual_ratio = (d - C * res.x).norm() / dnorm;
    for (Index j = 0; j < ncols; ++j)
        if (res.x[j] > 0.0) res.support.push_back(j);
    return res;
}

}  // namespace morbench
