#pragma once

#include "morbench/core.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

namespace morbench {

struct TsvdSolution {
    Vector x;
    Index rank = 0;
    double sigma_max = 0.0;
};

/// Minimum-norm solution of min ||A x - b|| after discarding singular values
/// of A at or below rel_threshold * sigma_max. Tall matrices go through a
/// Householder QR first so only the small triangular factor is decomposed.
inline TsvdSolution tsvd_least_squares(const Matrix& A, const Vector& b, double rel_threshold) {
    require(A.rows() == b.size(), "least-squares right-hand side size mismatch");
    const Index n = A.cols();
    TsvdSolution sol;
    sol.x = Vector::Zero(n);
    if (n == 0 || A.rows() == 0) return sol;

    Matrix U, V;
    Vector s, c;
    if (A.rows() >= n) {
        Eigen::HouseholderQR<Matrix> qr(A);
        Vector qtb = b;
        qtb.applyOnTheLeft(qr.householderQ().adjoint());
        const Matrix R = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
        Eigen::JacobiSVD<Matrix> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
        U = svd.matrixU();
        V = svd.matrixV();
        s = svd.singularValues();
        c = qtb.head(n);
    } else {
        Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
        U = svd.matrixU();
        V = svd.matrixV();
        s = svd.singularValues();
        c = b;
    }
    sol.sigma_max = s.size() ? s[0] : 0.0;
    const double cut = rel_threshold * sol.sigma_max;
    for (Index i = 0; i < s.size(); ++i) {
        if (!(s[i] > cut) || s[i] == 0.0) break;
        sol.x += V.col(i) * (U.col(i).dot(c) / s[i]);
        ++sol.rank;
    }
    return sol;
}

}  // namespace morbench
