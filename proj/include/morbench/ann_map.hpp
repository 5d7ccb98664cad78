#pragma once

// Small fully connected network N: R^n -> R^{n_bar} mapping primary POD
// coordinates to secondary ones. Training is plain minibatch Adam with
// hand-written backpropagation; the input Jacobian is evaluated in forward
// mode because the map has far more outputs than inputs.

#include "morbench/binary_io.hpp"
#include "morbench/core.hpp"
#include "morbench/snapshots_pod.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace morbench {

struct DenseLayer {
    Matrix W;  ///< out x in
    Vector b;  ///< out
};

inline double elu(double x) { return x >= 0.0 ? x : std::expm1(x); }
/// Right-limit convention: derivative at 0 is 1.
inline double elu_derivative(double x) { return x >= 0.0 ? 1.0 : std::exp(x); }

class MlpMap {
public:
    MlpMap() = default;

    /// dims = {n, h1, ..., n_bar}; weights zero, identity standardization.
    static MlpMap zeros(const std::vector<Index>& dims) {
        require(dims.size() >= 2, "network needs at least one layer");
        MlpMap m;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l)
            m.layers_.push_back({Matrix::Zero(dims[l + 1], dims[l]), Vector::Zero(dims[l + 1])});
        m.in_mean_ = Vector::Zero(dims.front());
        m.in_scale_ = Vector::Ones(dims.front());
        m.out_mean_ = Vector::Zero(dims.back());
        m.out_scale_ = Vector::Ones(dims.back());
        return m;
    }

    /// Kaiming-style uniform init, bound sqrt(6 / fan_in), zero biases.
    static MlpMap random(const std::vector<Index>& dims, std::uint64_t seed) {
        MlpMap m = zeros(dims);
        std::mt19937_64 rng(seed);
        for (auto& layer : m.layers_) {
            const double bound = std::sqrt(6.0 / static_cast<double>(layer.W.cols()));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (Index j = 0; j < layer.W.cols(); ++j)
                for (Index i = 0; i < layer.W.rows(); ++i) layer.W(i, j) = dist(rng);
        }
        return m;
    }

    Index input_dim() const { return layers_.empty() ? 0 : layers_.front().W.cols(); }
    Index output_dim() const { return layers_.empty() ? 0 : layers_.back().W.rows(); }
    std::size_t num_layers() const { return layers_.size(); }
    std::vector<Index> dims() const {
        std::vector<Index> d{input_dim()};
        for (const auto& l : layers_) d.push_back(l.W.rows());
        return d;
    }

    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }

    void set_standardization(Vector in_mean, Vector in_scale, Vector out_mean, Vector out_scale) {
        require(in_mean.size() == input_dim() && in_scale.size() == input_dim(),
                "input standardization size mismatch");
        require(out_mean.size() == output_dim() && out_scale.size() == output_dim(),
                "output standardization size mismatch");
        in_mean_ = std::move(in_mean);
        in_scale_ = std::move(in_scale);
        out_mean_ = std::move(out_mean);
        out_scale_ = std::move(out_scale);
    }
    const Vector& in_mean() const { return in_mean_; }
    const Vector& in_scale() const { return in_scale_; }
    const Vector& out_mean() const { return out_mean_; }
    const Vector& out_scale() const { return out_scale_; }

    Vector forward(const Vector& q) const {
        check_input(q);
        Vector a = (q - in_mean_).cwiseQuotient(in_scale_);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            Vector z = layers_[l].W * a + layers_[l].b;
            if (l + 1 < layers_.size()) z = z.unaryExpr(&elu);
            a = std::move(z);
        }
        return out_mean_ + out_scale_.cwiseProduct(a);
    }

    /// Output and n_bar x n Jacobian in one pass; all n input directions are
    /// pushed through the layers together.
    void forward_with_jacobian(const Vector& q, Vector& out, Matrix& jac) const {
        check_input(q);
        Vector a = (q - in_mean_).cwiseQuotient(in_scale_);
        Matrix tangent = in_scale_.cwiseInverse().asDiagonal();
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            Vector z = layers_[l].W * a + layers_[l].b;
            Matrix t = layers_[l].W * tangent;
            if (l + 1 < layers_.size()) {
                for (Index i = 0; i < z.size(); ++i) {
                    t.row(i) *= elu_derivative(z[i]);
                    z[i] = elu(z[i]);
                }
            }
            a = std::move(z);
            tangent = std::move(t);
        }
        out = out_mean_ + out_scale_.cwiseProduct(a);
        jac = out_scale_.asDiagonal() * tangent;
    }

    Matrix jacobian(const Vector& q) const {
        Vector out;
        Matrix jac;
        forward_with_jacobian(q, out, jac);
        return jac;
    }

    bool all_finite() const {
        for (const auto& l : layers_)
            if (!l.W.allFinite() || !l.b.allFinite()) return false;
        return in_mean_.allFinite() && in_scale_.allFinite() && out_mean_.allFinite() &&
               out_scale_.allFinite();
    }

private:
    void check_input(const Vector& q) const {
        if (q.size() != input_dim())
            throw ValidationError(concat("network expects ", input_dim(), " inputs, got ", q.size()));
    }

    std::vector<DenseLayer> layers_;
    Vector in_mean_, in_scale_, out_mean_, out_scale_;
};

// ---------------------------------------------------------------------------
// Training data

struct CoordDataset {
    Matrix q;      ///< n x Ns, column l = V^T (u^l - u_ref)
    Matrix q_bar;  ///< n_bar x Ns
    std::vector<Index> train;
    std::vector<Index> test;
    Vector in_mean, in_scale, out_mean, out_scale;  ///< training-split statistics
};

namespace detail {

inline void column_stats(const Matrix& X, const std::vector<Index>& cols, Vector& mean,
                         Vector& scale, bool constant_to_zero) {
    mean = Vector::Zero(X.rows());
    for (Index c : cols) mean += X.col(c);
    mean /= static_cast<double>(cols.size());
    Vector var = Vector::Zero(X.rows());
    for (Index c : cols) var += (X.col(c) - mean).cwiseAbs2();
    var /= static_cast<double>(cols.size());
    scale = var.cwiseSqrt();
    for (Index i = 0; i < scale.size(); ++i) {
        const double tiny = 1e-14 * (1.0 + std::abs(mean[i]));
        if (scale[i] <= tiny) scale[i] = constant_to_zero ? 0.0 : 1.0;
    }
}

}  // namespace detail

/// Projects every snapshot column onto V and V_bar and splits the columns
/// 90/10 (by default) after a seeded shuffle. Constant output components get
/// scale 0 so the network reproduces them exactly.
inline CoordDataset make_dataset(const SnapshotMatrix& snaps, const RobPair& rob,
                                 double test_fraction = 0.1, std::uint64_t seed = 0) {
    if (rob.N() != snaps.rows())
        throw ValidationError(concat("basis has ", rob.N(), " rows, snapshots have ", snaps.rows()));
    require(test_fraction >= 0.0 && test_fraction < 1.0, "test fraction must lie in [0, 1)");
    CoordDataset ds;
    ds.q = rob.V.transpose() * snaps.S;
    ds.q_bar = rob.V_bar.transpose() * snaps.S;

    std::vector<Index> order(static_cast<std::size_t>(snaps.cols()));
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * order.size()));
    ds.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    ds.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    require(!ds.train.empty(), "training split is empty");

    detail::column_stats(ds.q, ds.train, ds.in_mean, ds.in_scale, false);
    detail::column_stats(ds.q_bar, ds.train, ds.out_mean, ds.out_scale, true);
    return ds;
}

struct TrainConfig {
    std::vector<Index> hidden{32, 64, 128, 256, 256};
    double learning_rate = 1e-3;
    int batch_size = 64;
    int max_epochs = 2000;
    int plateau_patience = 50;     ///< epochs without test improvement before halving lr
    int early_stop_patience = 200;
    std::uint64_t seed = 0;
};

struct EpochLog {
    int epoch;
    double train_loss;
    double test_loss;
    double learning_rate;
};

struct TrainResult {
    MlpMap map;
    std::vector<EpochLog> log;
    double train_loss = 0.0;
    double test_loss = 0.0;
    int best_epoch = 0;
};

namespace detail {

// Loss = mean over samples of sum over outputs of (q_bar - N(q))^2, written in
// terms of the standardized network output z: N = out_mean + out_scale * z.
class MlpTrainer {
public:
    MlpTrainer(MlpMap& map, const CoordDataset& ds) : map_(map), ds_(ds) {
        const auto& L = map_.layers();
        z_.resize(L.size());
        a_.resize(L.size() + 1);
        g_.resize(L.size());
        dW_.resize(L.size());
        db_.resize(L.size());
        mW_.resize(L.size());
        vW_.resize(L.size());
        mb_.resize(L.size());
        vb_.resize(L.size());
        for (std::size_t l = 0; l < L.size(); ++l) {
            mW_[l] = Matrix::Zero(L[l].W.rows(), L[l].W.cols());
            vW_[l] = mW_[l];
            mb_[l] = Vector::Zero(L[l].b.size());
            vb_[l] = mb_[l];
        }
        w2_ = ds_.out_scale.cwiseAbs2();
    }

    void load_batch(const std::vector<Index>& cols, std::size_t begin, std::size_t end) {
        const auto B = static_cast<Index>(end - begin);
        x_.resize(ds_.q.rows(), B);
        t_.resize(ds_.q_bar.rows(), B);
        for (Index k = 0; k < B; ++k) {
            const Index c = cols[begin + static_cast<std::size_t>(k)];
            x_.col(k) = (ds_.q.col(c) - ds_.in_mean).cwiseQuotient(ds_.in_scale);
            for (Index i = 0; i < t_.rows(); ++i) {
                const double s = ds_.out_scale[i];
                t_(i, k) = s > 0.0 ? (ds_.q_bar(i, c) - ds_.out_mean[i]) / s : 0.0;
            }
        }
    }

    /// Forward pass on the loaded batch; returns the summed (not averaged) loss.
    double forward() {
        const auto& L = map_.layers();
        a_[0] = x_;
        for (std::size_t l = 0; l < L.size(); ++l) {
            z_[l].noalias() = L[l].W * a_[l];
            z_[l].colwise() += L[l].b;
            a_[l + 1] = (l + 1 < L.size()) ? Matrix(z_[l].unaryExpr(&elu)) : z_[l];
        }
        const Matrix diff = a_.back() - t_;
        return (w2_.asDiagonal() * diff.cwiseAbs2()).sum();
    }

    void backward_and_step(double lr) {
        auto& L = map_.layers();
        const double B = static_cast<double>(x_.cols());
        const std::size_t nl = L.size();
        g_[nl - 1] = (2.0 / B) * (w2_.asDiagonal() * (a_.back() - t_));
        for (std::size_t l = nl; l-- > 0;) {
            dW_[l].noalias() = g_[l] * a_[l].transpose();
            db_[l] = g_[l].rowwise().sum();
            if (l > 0) {
                g_[l - 1].noalias() = L[l].W.transpose() * g_[l];
                g_[l - 1].array() *= z_[l - 1].unaryExpr(&elu_derivative).array();
            }
        }
        ++step_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, step_), c2 = 1.0 - std::pow(b2, step_);
        for (std::size_t l = 0; l < nl; ++l) {
            mW_[l] = b1 * mW_[l] + (1.0 - b1) * dW_[l];
            vW_[l] = b2 * vW_[l] + (1.0 - b2) * dW_[l].cwiseAbs2();
            L[l].W.array() -= lr * (mW_[l].array() / c1) / ((vW_[l].array() / c2).sqrt() + eps);
            mb_[l] = b1 * mb_[l] + (1.0 - b1) * db_[l];
            vb_[l] = b2 * vb_[l] + (1.0 - b2) * db_[l].cwiseAbs2();
            L[l].b.array() -= lr * (mb_[l].array() / c1) / ((vb_[l].array() / c2).sqrt() + eps);
        }
    }

    double mean_loss(const std::vector<Index>& cols, int chunk) {
        if (cols.empty()) return 0.0;
        double total = 0.0;
        for (std::size_t b = 0; b < cols.size(); b += static_cast<std::size_t>(chunk)) {
            const std::size_t e = std::min(cols.size(), b + static_cast<std::size_t>(chunk));
            load_batch(cols, b, e);
            total += forward();
        }
        return total / static_cast<double>(cols.size());
    }

private:
    MlpMap& map_;
    const CoordDataset& ds_;
    Matrix x_, t_;
    Vector w2_;
    std::vector<Matrix> z_, a_, g_, dW_, mW_, vW_;
    std::vector<Vector> db_, mb_, vb_;
    long step_ = 0;
};

}  // namespace detail

/// Minibatch Adam on the mean squared coordinate error. The learning rate is
/// halved when the test loss has not improved for `plateau_patience` epochs;
/// training stops after `early_stop_patience` stagnant epochs. The parameters
/// with the lowest test loss (train loss when there is no test split) are
/// returned.
inline TrainResult train(const CoordDataset& ds, const TrainConfig& cfg) {
    require(cfg.batch_size >= 1, "batch size must be positive");
    require(static_cast<Index>(ds.train.size()) >= cfg.batch_size,
            concat("training split (", ds.train.size(), ") smaller than batch size ", cfg.batch_size));
    std::vector<Index> dims{ds.q.rows()};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(ds.q_bar.rows());

    TrainResult res;
    res.map = MlpMap::random(dims, cfg.seed);
    res.map.set_standardization(ds.in_mean, ds.in_scale, ds.out_mean, ds.out_scale);
    MlpMap best = res.map;

    detail::MlpTrainer trainer(res.map, ds);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<Index> order = ds.train;
    double lr = cfg.learning_rate;
    double best_loss = std::numeric_limits<double>::infinity();
    int since_best = 0, since_lr_cut = 0;
    const int eval_chunk = 512;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t b = 0; b + static_cast<std::size_t>(cfg.batch_size) <= order.size();
             b += static_cast<std::size_t>(cfg.batch_size)) {
            trainer.load_batch(order, b, b + static_cast<std::size_t>(cfg.batch_size));
            trainer.forward();
            trainer.backward_and_step(lr);
        }
        const double train_loss = trainer.mean_loss(ds.train, eval_chunk);
        const double test_loss = ds.test.empty() ? train_loss : trainer.mean_loss(ds.test, eval_chunk);
        if (!std::isfinite(train_loss) || !std::isfinite(test_loss))
            throw NumericalError(concat("network training diverged at epoch ", epoch,
                                        " (train loss ", train_loss, ", test loss ", test_loss,
                                        ", learning rate ", lr, ")"));
        res.log.push_back({epoch, train_loss, test_loss, lr});

        if (test_loss < best_loss) {
            best_loss = test_loss;
            best = res.map;
            res.best_epoch = epoch;
            res.train_loss = train_loss;
            res.test_loss = test_loss;
            since_best = 0;
            since_lr_cut = 0;
        } else {
            ++since_best;
            if (++since_lr_cut >= cfg.plateau_patience) {
                lr *= 0.5;
                since_lr_cut = 0;
            }
        }
        if (since_best >= cfg.early_stop_patience) break;
    }
    res.map = std::move(best);
    if (!ds.test.empty() && res.test_loss > 2.0 * res.train_loss)
        log::warn("network test loss ", res.test_loss, " exceeds twice the train loss ",
                  res.train_loss);
    return res;
}

// ---------------------------------------------------------------------------
// MORMLP1 model files and training log

inline void write_mlp_file(const std::string& path, const MlpMap& m) {
    io::Writer w(path);
    w.magic("MORMLP1");
    w.u64(m.num_layers());
    for (Index d : m.dims()) w.u64(static_cast<std::uint64_t>(d));
    w.f64s(m.in_mean().data(), static_cast<std::size_t>(m.in_mean().size()));
    w.f64s(m.in_scale().data(), static_cast<std::size_t>(m.in_scale().size()));
    w.f64s(m.out_mean().data(), static_cast<std::size_t>(m.out_mean().size()));
    w.f64s(m.out_scale().data(), static_cast<std::size_t>(m.out_scale().size()));
    for (const auto& l : m.layers()) {
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> W = l.W;
        w.f64s(W.data(), static_cast<std::size_t>(W.size()));
        w.f64s(l.b.data(), static_cast<std::size_t>(l.b.size()));
    }
    w.close();
}

inline MlpMap read_mlp_file(const std::string& path) {
    io::Reader r(path);
    r.expect_magic("MORMLP1");
    const auto nl = r.u64();
    require(nl >= 1 && nl < 1000, path + ": implausible layer count");
    std::vector<Index> dims;
    for (std::uint64_t i = 0; i <= nl; ++i) dims.push_back(static_cast<Index>(r.u64()));
    MlpMap m = MlpMap::zeros(dims);
    Vector im(dims.front()), is(dims.front()), om(dims.back()), os(dims.back());
    r.f64s(im.data(), static_cast<std::size_t>(im.size()));
    r.f64s(is.data(), static_cast<std::size_t>(is.size()));
    r.f64s(om.data(), static_cast<std::size_t>(om.size()));
    r.f64s(os.data(), static_cast<std::size_t>(os.size()));
    m.set_standardization(im, is, om, os);
    for (auto& l : m.layers()) {
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> W(l.W.rows(),
                                                                                 l.W.cols());
        r.f64s(W.data(), static_cast<std::size_t>(W.size()));
        l.W = W;
        r.f64s(l.b.data(), static_cast<std::size_t>(l.b.size()));
    }
    return m;
}

inline void write_training_log_csv(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << "epoch,train_loss,test_loss,learning_rate\n" << std::setprecision(17);
    for (const auto& e : log)
        out << e.epoch << ',' << e.train_loss << ',' << e.test_loss << ',' << e.learning_rate << '\n';
}

}  // namespace morbench
