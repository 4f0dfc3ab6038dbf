#pragma once

// Small builders shared by the unit tests and the acceptance runner.

#include <random>
#include <string>
#include <vector>

#include "mrfibp/features.hpp"
#include "mrfibp/gibbs.hpp"
#include "mrfibp/model.hpp"

namespace mrfibp::testing {

/// n one-pixel patches in a row, each adjacent to the next.
inline FeatureBag chain_bag(const std::string& id, int n, const Matrix& x) {
    FeatureBag bag = grid_layout(id, n, 1, 1, n);
    for (int j = 0; j < n; ++j) bag.patches[static_cast<std::size_t>(j)].feature = x.row(j).transpose();
    return bag;
}

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n(rng);
    return m;
}

inline BinaryMatrix bits_matrix(Eigen::Index rows, Eigen::Index cols, unsigned bits) {
    BinaryMatrix z(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) z(r, c) = (bits >> (r * cols + c)) & 1u;
    return z;
}

inline AppearanceModel point_model(const Matrix& a, const Hyperparams& hp) {
    std::vector<std::string> names;
    for (Eigen::Index k = 0; k < a.rows(); ++k) names.push_back("f" + std::to_string(k));
    return AppearanceModel::from_posterior(a, Matrix::Identity(a.rows(), a.rows()), names, hp);
}

inline double relative_error(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / scale;
}

} // namespace mrfibp::testing

namespace mrfibp::testing {

/// Solves M X = B by Gauss-Jordan elimination with partial pivoting, using
/// element access only, as an oracle independent of Eigen's factorizations.
inline Matrix gauss_jordan_solve(Matrix m, Matrix b) {
    const Eigen::Index n = m.rows();
    for (Eigen::Index col = 0; col < n; ++col) {
        Eigen::Index pivot = col;
        for (Eigen::Index r = col + 1; r < n; ++r)
            if (std::abs(m(r, col)) > std::abs(m(pivot, col))) pivot = r;
        for (Eigen::Index c = 0; c < n; ++c) std::swap(m(col, c), m(pivot, c));
        for (Eigen::Index c = 0; c < b.cols(); ++c) std::swap(b(col, c), b(pivot, c));
        const double p = m(col, col);
        for (Eigen::Index c = 0; c < n; ++c) m(col, c) /= p;
        for (Eigen::Index c = 0; c < b.cols(); ++c) b(col, c) /= p;
        for (Eigen::Index r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = m(r, col);
            if (f == 0.0) continue;
            for (Eigen::Index c = 0; c < n; ++c) m(r, c) -= f * m(col, c);
            for (Eigen::Index c = 0; c < b.cols(); ++c) b(r, c) -= f * b(col, c);
        }
    }
    return b;
}

/// Z^T Z and Z^T X by explicit triple loops.
inline Matrix gram_oracle(const Matrix& z) {
    Matrix g = Matrix::Zero(z.cols(), z.cols());
    for (Eigen::Index a = 0; a < z.cols(); ++a)
        for (Eigen::Index b = 0; b < z.cols(); ++b)
            for (Eigen::Index r = 0; r < z.rows(); ++r) g(a, b) += z(r, a) * z(r, b);
    return g;
}

inline Matrix cross_oracle(const Matrix& z, const Matrix& x) {
    Matrix c = Matrix::Zero(z.cols(), x.cols());
    for (Eigen::Index a = 0; a < z.cols(); ++a)
        for (Eigen::Index d = 0; d < x.cols(); ++d)
            for (Eigen::Index r = 0; r < z.rows(); ++r) c(a, d) += z(r, a) * x(r, d);
    return c;
}

/// Largest absolute entry difference.
inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

} // namespace mrfibp::testing

#include "mrfibp/representation.hpp"

namespace mrfibp::testing {

/// K constant maps over a width x height image.
inline HeatMapStack constant_stack(const std::string& id, int width, int height, std::vector<float> values) {
    HeatMapStack s;
    s.image_id = id;
    s.width = width;
    s.height = height;
    for (std::size_t k = 0; k < values.size(); ++k) {
        s.factor_names.push_back("f" + std::to_string(k));
        s.maps.emplace_back(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), values[k]);
    }
    return s;
}

} // namespace mrfibp::testing
