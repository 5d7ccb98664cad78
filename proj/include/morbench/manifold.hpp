#pragma once

// Affine and network-augmented decoders u(q) = u_ref + V q [+ V_bar N(q)],
// their tangents, and the inverse map used to place snapshots on the manifold.

#include "morbench/ann_map.hpp"
#include "morbench/core.hpp"
#include "morbench/linalg.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <vector>

namespace morbench {

struct EncodeControls {
    double tol = 1e-10;          ///< stop when |dq| <= tol (1 + |q|)
    int max_iters = 50;
    double stagnation = 1e-10;   ///< stop when |delta| decreases by less than this fraction
    double pinv_threshold = 1e-10;
};

class Decoder {
public:
    static Decoder affine(Vector u_ref, Matrix V) {
        require(u_ref.size() == V.rows(), "reference state and basis row counts differ");
        Decoder d;
        d.u_ref_ = std::move(u_ref);
        d.V_ = std::move(V);
        d.V_bar_.resize(d.V_.rows(), 0);
        return d;
    }

    static Decoder ann(Vector u_ref, Matrix V, Matrix V_bar, std::shared_ptr<const MlpMap> net) {
        require(net != nullptr, "network-augmented decoder needs a network");
        require(u_ref.size() == V.rows() && V.rows() == V_bar.rows(),
                "reference state and basis row counts differ");
        if (net->input_dim() != V.cols() || net->output_dim() != V_bar.cols())
            throw ValidationError(concat("network maps ", net->input_dim(), " -> ",
                                         net->output_dim(), " but bases have n=", V.cols(),
                                         ", n_bar=", V_bar.cols()));
        Decoder d;
        d.u_ref_ = std::move(u_ref);
        d.V_ = std::move(V);
        d.V_bar_ = std::move(V_bar);
        d.net_ = std::move(net);
        return d;
    }

    bool is_affine() const { return net_ == nullptr; }
    Index n() const { return V_.cols(); }
    Index n_bar() const { return V_bar_.cols(); }
    Index N() const { return V_.rows(); }
    const Vector& u_ref() const { return u_ref_; }
    const Matrix& V() const { return V_; }
    const Matrix& V_bar() const { return V_bar_; }
    const MlpMap* net() const { return net_.get(); }

    // Column-by-column accumulation so every row sees the same operation
    // sequence; a row-restricted decoder reproduces full-decode rows bit for bit.
    Vector decode(const Vector& q) const {
        check_q(q);
        Vector u = u_ref_;
        for (Index j = 0; j < n(); ++j) u.noalias() += q[j] * V_.col(j);
        if (net_) {
            const Vector qb = net_->forward(q);
            for (Index j = 0; j < n_bar(); ++j) u.noalias() += qb[j] * V_bar_.col(j);
        }
        return u;
    }

    /// du/dq: V for the affine variant, V + V_bar dN/dq otherwise.
    Matrix tangent(const Vector& q) const {
        Vector u;
        Matrix T;
        decode_with_tangent(q, u, T);
        return T;
    }

    void decode_with_tangent(const Vector& q, Vector& u, Matrix& T) const {
        check_q(q);
        u = u_ref_;
        for (Index j = 0; j < n(); ++j) u.noalias() += q[j] * V_.col(j);
        T = V_;
        if (net_) {
            Vector qb;
            Matrix jn;
            net_->forward_with_jacobian(q, qb, jn);
            for (Index j = 0; j < n_bar(); ++j) u.noalias() += qb[j] * V_bar_.col(j);
            T.noalias() += V_bar_ * jn;
        }
    }

    /// Affine: orthogonal projection. Network-augmented: Gauss-Newton on
    /// delta(q) = decode(q) - u from the projection, returning the iterate with
    /// the smallest |delta|.
    Vector encode(const Vector& u, const EncodeControls& ctl = {}) const {
        if (u.size() != N())
            throw ValidationError(concat("state has ", u.size(), " entries, decoder expects ", N()));
        Vector q = V_.transpose() * (u - u_ref_);
        if (!net_) return q;

        Vector best = q;
        double best_norm = std::numeric_limits<double>::infinity();
        double prev_norm = std::numeric_limits<double>::infinity();
        int growth = 0;
        std::vector<double> history;
        Vector du;
        Matrix T;
        for (int it = 0; it <= ctl.max_iters; ++it) {
            decode_with_tangent(q, du, T);
            du -= u;
            const double norm = du.norm();
            history.push_back(norm);
            if (!std::isfinite(norm)) break;
            if (norm < best_norm) {
                best_norm = norm;
                best = q;
            }
            if (norm > prev_norm) {
                if (++growth >= 3) {
                    std::ostringstream os;
                    os << "encode diverged; |delta| history:";
                    for (double h : history) os << ' ' << h;
                    throw NumericalError(os.str());
                }
            } else {
                growth = 0;
                if (std::isfinite(prev_norm) && prev_norm - norm < ctl.stagnation * prev_norm) break;
            }
            prev_norm = norm;
            if (it == ctl.max_iters) break;
            const TsvdSolution step = tsvd_least_squares(T, du, ctl.pinv_threshold);
            if (step.x.norm() <= ctl.tol * (1.0 + q.norm())) break;
            q -= step.x;
        }
        if (!std::isfinite(best_norm)) throw NumericalError("encode produced no finite iterate");
        return best;
    }

    /// Decoder over a subset of rows (dofs); shares the network.
    Decoder restrict_rows(const std::vector<Index>& rows) const {
        Decoder d;
        d.u_ref_.resize(static_cast<Index>(rows.size()));
        d.V_.resize(static_cast<Index>(rows.size()), n());
        d.V_bar_.resize(static_cast<Index>(rows.size()), n_bar());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const Index r = rows[i];
            require(r >= 0 && r < N(), "restricted row out of range");
            const auto k = static_cast<Index>(i);
            d.u_ref_[k] = u_ref_[r];
            d.V_.row(k) = V_.row(r);
            d.V_bar_.row(k) = V_bar_.row(r);
        }
        d.net_ = net_;
        return d;
    }

private:
    void check_q(const Vector& q) const {
        if (q.size() != n())
            throw ValidationError(concat("coordinates have ", q.size(), " entries, decoder expects ", n()));
    }

    Vector u_ref_;
    Matrix V_, V_bar_;
    std::shared_ptr<const MlpMap> net_;
};

}  // namespace morbench
