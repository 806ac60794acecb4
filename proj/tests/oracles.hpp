#pragma once

// Independent reference implementations used only by the test suite. These
// deliberately avoid the library's computation paths.

#include "regpilot/numerics.hpp"

#include <random>

namespace oracles {

using regpilot::Matrix;
using regpilot::Vector;

/// Truncated Taylor series for e^M.
inline Matrix expm_taylor(const Matrix& M, int terms = 30) {
    const auto n = M.rows();
    Matrix sum = Matrix::Identity(n, n);
    Matrix term = Matrix::Identity(n, n);
    for (int k = 1; k <= terms; ++k) {
        term = term * M / static_cast<double>(k);
        sum += term;
    }
    return sum;
}

/// Rank by exhaustive minor enumeration (matrices up to ~6x6).
inline Eigen::Index rank_by_minors(const Matrix& M, double tol = 1e-8) {
    const Eigen::Index r = M.rows(), c = M.cols();
    const Eigen::Index kmax = std::min(r, c);
    const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());

    auto combos = [](Eigen::Index n, Eigen::Index k) {
        std::vector<std::vector<Eigen::Index>> out;
        std::vector<Eigen::Index> idx(k);
        for (Eigen::Index i = 0; i < k; ++i) idx[i] = i;
        while (true) {
            out.push_back(idx);
            Eigen::Index i = k - 1;
            while (i >= 0 && idx[i] == n - k + i) --i;
            if (i < 0) break;
            ++idx[i];
            for (Eigen::Index j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
        }
        return out;
    };

    for (Eigen::Index k = kmax; k >= 1; --k) {
        for (const auto& rows : combos(r, k)) {
            for (const auto& cols : combos(c, k)) {
                Matrix sub(k, k);
                for (Eigen::Index i = 0; i < k; ++i)
                    for (Eigen::Index j = 0; j < k; ++j)
                        sub(i, j) = M(rows[i], cols[j]);
                if (std::abs(sub.determinant()) > tol * std::pow(scale, k)) return k;
            }
        }
    }
    return 0;
}

/// Random matrix with entries in [-1, 1].
inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937& gen) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Matrix M(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) M(i, j) = dist(gen);
    return M;
}

} // namespace oracles
