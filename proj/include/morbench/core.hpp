#pragma once

#include <Eigen/Core>

#include <atomic>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace morbench {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Base of every error the library throws. Callers that only care about
/// "something went wrong" catch this; the CLI maps the two subclasses to
/// distinct exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input: inconsistent dimensions, malformed files, missing artifacts.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// An iterative method failed to produce a usable answer.
class NumericalError : public Error {
public:
    using Error::Error;
};

class NonConvergence : public NumericalError {
public:
    NonConvergence(const std::string& what, double last_residual)
        : NumericalError(what), last_residual_(last_residual) {}
    double last_residual() const noexcept { return last_residual_; }

private:
    double last_residual_;
};

class RankCollapse : public NumericalError {
public:
    using NumericalError::NumericalError;
};

namespace log {

enum class Level { quiet = 0, warn = 1, info = 2 };

inline std::atomic<Level>& level() {
    static std::atomic<Level> lvl{Level::warn};
    return lvl;
}

inline void set_level(Level l) { level().store(l); }

template <typename... Args>
void emit(Level l, const char* tag, Args&&... args) {
    if (static_cast<int>(level().load()) < static_cast<int>(l)) return;
    std::ostringstream os;
    os << '[' << tag << "] ";
    (os << ... << std::forward<Args>(args));
    os << '\n';
    std::cerr << os.str();
}

template <typename... Args>
void warn(Args&&... args) {
    emit(Level::warn, "warn", std::forward<Args>(args)...);
}

template <typename... Args>
void info(Args&&... args) {
    emit(Level::info, "info", std::forward<Args>(args)...);
}

}  // namespace log

template <typename... Args>
std::string concat(Args&&... args) {
    std::ostringstream os;
    (os << ... << std::forward<Args>(args));
    return os.str();
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

}  // namespace morbench
