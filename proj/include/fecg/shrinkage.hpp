#pragma once

// Spike-model matrix denoising: noise-level estimate around the entry-wise
// median template, followed by operator-norm optimal shrinkage of singular
// values. Singular values are measured on S / (sigma * sqrt(N)), N the larger
// dimension, so the pure-noise bulk edge sits at 1 + sqrt(beta).

#include "fecg/common.hpp"

#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <vector>

namespace fecg {

enum class Shrinker { operator_norm };

struct DenoiseConfig {
    double c_noise = 1.5;
    Shrinker shrinker = Shrinker::operator_norm;

    void validate() const {
        if (!(c_noise > 0) || !std::isfinite(c_noise)) throw ArgumentError("c_noise must be positive");
    }
};

/// Operator-norm optimal shrinker for a normalized singular value `lambda`
/// and aspect ratio beta = min(p,n)/max(p,n). Zero below 1 + sqrt(beta); beta^(1/4) at the edge.
template <typename Scalar>
Scalar eta_star(Scalar lambda, Scalar beta) {
    using std::sqrt;
    if (!(beta > Scalar(0) && beta <= Scalar(1))) throw ArgumentError("eta_star: beta must lie in (0, 1]");
    if (!(lambda >= Scalar(0))) throw ArgumentError("eta_star: lambda must be non-negative");
    const Scalar edge = Scalar(1) + sqrt(beta);
    if (lambda < edge) return Scalar(0);
    const Scalar t = lambda * lambda - beta - Scalar(1);
    const Scalar disc = std::max(Scalar(0), t * t - Scalar(4) * beta);
    return sqrt((t + sqrt(disc)) / Scalar(2));
}

template <typename Scalar>
struct ShrinkageResult {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Matrix denoised;
    Scalar sigma_hat = 0;
    Eigen::Index kept_rank = 0;
    Scalar beta = 0;
    Vector singular_values_raw;    // descending
    Vector singular_values_shrunk; // same units as raw
};

/// c_noise * sqrt(mean squared deviation of S from its row-wise median),
/// where the median runs across columns (cycles). Even column counts use the
/// lower median.
template <typename Derived>
typename Derived::Scalar estimate_noise(const Eigen::MatrixBase<Derived> &S, const DenoiseConfig &config) {
    using Scalar = typename Derived::Scalar;
    config.validate();
    if (S.rows() == 0 || S.cols() == 0) throw ArgumentError("estimate_noise: empty matrix");
    if (S.cols() < 2) throw ArgumentError("estimate_noise: need at least two columns");
    std::vector<Scalar> row(static_cast<std::size_t>(S.cols()));
    Scalar acc = 0;
    for (Eigen::Index k = 0; k < S.rows(); ++k) {
        for (Eigen::Index i = 0; i < S.cols(); ++i) row[static_cast<std::size_t>(i)] = S(k, i);
        auto mid = row.begin() + static_cast<std::ptrdiff_t>((row.size() - 1) / 2);
        std::nth_element(row.begin(), mid, row.end());
        const Scalar med = *mid;
        for (Eigen::Index i = 0; i < S.cols(); ++i) {
            const Scalar d = S(k, i) - med;
            acc += d * d;
        }
    }
    using std::sqrt;
    return Scalar(config.c_noise) * sqrt(acc / Scalar(S.rows() * S.cols()));
}

template <typename Derived>
ShrinkageResult<typename Derived::Scalar> optimal_shrink(const Eigen::MatrixBase<Derived> &S,
                                                         const DenoiseConfig &config) {
    using Scalar = typename Derived::Scalar;
    using Matrix = typename ShrinkageResult<Scalar>::Matrix;
    config.validate();
    if (S.rows() == 0 || S.cols() < 2) throw ArgumentError("optimal_shrink: need a p x n matrix with n >= 2");
    if (!S.allFinite()) throw ArgumentError("optimal_shrink: matrix has non-finite entries");

    ShrinkageResult<Scalar> res;
    res.sigma_hat = estimate_noise(S, config);

    const bool transposed = S.rows() > S.cols();
    const Matrix work = transposed ? Matrix(S.transpose()) : Matrix(S);
    const Eigen::Index small = work.rows();
    const Eigen::Index large = work.cols();
    res.beta = Scalar(small) / Scalar(large);

    Eigen::BDCSVD<Matrix> svd(work, Eigen::ComputeThinU | Eigen::ComputeThinV);
    res.singular_values_raw = svd.singularValues();
    res.singular_values_shrunk = decltype(res.singular_values_raw)::Zero(res.singular_values_raw.size());

    using std::sqrt;
    const Scalar scale = res.sigma_hat * sqrt(Scalar(large));
    if (scale > Scalar(0)) {
        for (Eigen::Index i = 0; i < res.singular_values_raw.size(); ++i)
            res.singular_values_shrunk(i) = scale * eta_star<Scalar>(res.singular_values_raw(i) / scale, res.beta);
    } else if (res.singular_values_raw.size() > 0) {
        // Noise-free input (all cycles identical): nothing to shrink.
        const Scalar tol = res.singular_values_raw(0) * Eigen::NumTraits<Scalar>::epsilon() * Scalar(large);
        for (Eigen::Index i = 0; i < res.singular_values_raw.size(); ++i)
            if (res.singular_values_raw(i) > tol) res.singular_values_shrunk(i) = res.singular_values_raw(i);
    }
    res.kept_rank = (res.singular_values_shrunk.array() > Scalar(0)).count();

    const Eigen::Index r = res.kept_rank;
    Matrix denoised = svd.matrixU().leftCols(r) * res.singular_values_shrunk.head(r).asDiagonal() *
                      svd.matrixV().leftCols(r).transpose();
    if (r == 0) denoised = Matrix::Zero(small, large);
    res.denoised = transposed ? Matrix(denoised.transpose()) : denoised;
    return res;
}

} // namespace fecg
