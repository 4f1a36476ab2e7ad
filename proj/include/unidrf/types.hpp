// Core data containers and the error hierarchy shared by every module.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace unidrf {

/// Base class for all library errors. The `kind` lets front ends map
/// failures onto exit codes without string matching.
class Error : public std::runtime_error {
public:
    enum class Kind { numeric, input, config, dimension };

    Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(Kind::numeric, what) {}
};
struct InputError : Error {
    explicit InputError(const std::string& what) : Error(Kind::input, what) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(Kind::config, what) {}
};
struct DimensionError : Error {
    explicit DimensionError(const std::string& what) : Error(Kind::dimension, what) {}
};

/// Raised when a local fit has too little kernel mass around the evaluation point.
struct InsufficientDataError : NumericError {
    InsufficientDataError(double t, double mass, double floor)
        : NumericError("insufficient local data at t=" + std::to_string(t) + " (effective mass " +
                       std::to_string(mass) + " below floor " + std::to_string(floor) + ")"),
          t_(t) {}
    double t() const noexcept { return t_; }

private:
    double t_;
};

/// One observed triple (treatment, covariates, outcome).
struct Sample {
    double t = 0.0;
    std::vector<double> x;
    double y = 0.0;
};

/// Column-major storage of n samples. Immutable after construction.
class Dataset {
public:
    Dataset() = default;

    Dataset(Eigen::VectorXd t, Eigen::MatrixXd x, Eigen::VectorXd y)
        : t_(std::move(t)), x_(std::move(x)), y_(std::move(y)) {
        validate();
    }

    explicit Dataset(std::span<const Sample> samples) {
        if (samples.empty()) throw InputError("dataset is empty");
        const auto n = static_cast<Eigen::Index>(samples.size());
        const auto d = static_cast<Eigen::Index>(samples.front().x.size());
        t_.resize(n);
        y_.resize(n);
        x_.resize(n, d);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Sample& s = samples[static_cast<std::size_t>(i)];
            if (static_cast<Eigen::Index>(s.x.size()) != d)
                throw InputError("sample " + std::to_string(i) + " has " +
                                 std::to_string(s.x.size()) + " covariates, expected " +
                                 std::to_string(d));
            t_(i) = s.t;
            y_(i) = s.y;
            for (Eigen::Index k = 0; k < d; ++k) x_(i, k) = s.x[static_cast<std::size_t>(k)];
        }
        validate();
    }

    std::size_t size() const noexcept { return static_cast<std::size_t>(t_.size()); }
    std::size_t covariate_dim() const noexcept { return static_cast<std::size_t>(x_.cols()); }

    const Eigen::VectorXd& t() const noexcept { return t_; }
    const Eigen::MatrixXd& x() const noexcept { return x_; }
    const Eigen::VectorXd& y() const noexcept { return y_; }

    Sample sample(std::size_t i) const {
        const auto ii = static_cast<Eigen::Index>(i);
        Sample s;
        s.t = t_(ii);
        s.y = y_(ii);
        s.x.resize(covariate_dim());
        for (std::size_t k = 0; k < covariate_dim(); ++k) s.x[k] = x_(ii, static_cast<Eigen::Index>(k));
        return s;
    }

    /// Same (T, X) with a replaced outcome column.
    Dataset with_outcome(Eigen::VectorXd y) const { return Dataset(t_, x_, std::move(y)); }

    /// Rows selected by `index`, in that order.
    Dataset subset(std::span<const std::size_t> index) const {
        const auto m = static_cast<Eigen::Index>(index.size());
        Eigen::VectorXd t(m), y(m);
        Eigen::MatrixXd x(m, x_.cols());
        for (Eigen::Index r = 0; r < m; ++r) {
            const auto i = static_cast<Eigen::Index>(index[static_cast<std::size_t>(r)]);
            t(r) = t_(i);
            y(r) = y_(i);
            x.row(r) = x_.row(i);
        }
        return Dataset(std::move(t), std::move(x), std::move(y));
    }

private:
    void validate() const {
        const auto n = t_.size();
        if (n < 2) throw InputError("dataset needs at least 2 samples, got " + std::to_string(n));
        if (y_.size() != n || x_.rows() != n)
            throw InputError("dataset columns have mismatched lengths");
        if (x_.cols() < 1) throw InputError("dataset needs at least one covariate");
        if (!t_.allFinite() || !y_.allFinite() || !x_.allFinite())
            throw InputError("dataset contains non-finite entries");
    }

    Eigen::VectorXd t_;
    Eigen::MatrixXd x_;
    Eigen::VectorXd y_;
};

}  // namespace unidrf
