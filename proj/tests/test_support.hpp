// Shared fixtures for the unit tests.

#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "unidrf/unidrf.hpp"

namespace unidrf::testing {

/// Confounded toy design: X ~ N(0, I_d), T = 0.5 x_1 + N(0, 1), Y = T + x_1 + noise.
inline Dataset random_dataset(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    std::normal_distribution<double> norm(0.0, 1.0);
    const auto nn = static_cast<Eigen::Index>(n);
    Eigen::VectorXd t(nn), y(nn);
    Eigen::MatrixXd x(nn, static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < nn; ++i) {
        for (Eigen::Index k = 0; k < x.cols(); ++k) x(i, k) = norm(eng);
        t(i) = 0.5 * x(i, 0) + norm(eng);
        y(i) = t(i) + x(i, 0) + 0.5 * norm(eng);
    }
    return Dataset(std::move(t), std::move(x), std::move(y));
}

/// Composite Simpson rule on [lo, hi] with an even number of panels.
template <class F>
double simpson(F f, double lo, double hi, int panels) {
    const double h = (hi - lo) / panels;
    double s = f(lo) + f(hi);
    for (int i = 1; i < panels; ++i) s += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
    return s * h / 3.0;
}

}  // namespace unidrf::testing
