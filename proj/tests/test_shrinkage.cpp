#include "fecg/shrinkage.hpp"

#include "support.hpp"

#include <doctest.h>

#include <numeric>

using namespace fecg;
namespace ts = testing_support;

TEST_CASE("eta_star closed-form values") {
    for (int k = 1; k <= 10; ++k) {
        const double beta = 0.1 * k;
        const double edge = 1.0 + std::sqrt(beta);
        CHECK(eta_star(edge, beta) == doctest::Approx(std::pow(beta, 0.25)).epsilon(1e-6));
        CHECK(eta_star(std::nextafter(edge, 0.0), beta) == 0.0);
        CHECK(eta_star(0.5, beta) == 0.0);
    }
    CHECK(eta_star(2.0, 1.0) == 1.0);
    for (double lambda = 1.1; lambda <= 10.0; lambda += 0.1)
        CHECK(eta_star(lambda, 1e-9) == doctest::Approx(std::sqrt(lambda * lambda - 1)).epsilon(1e-6));
}

TEST_CASE("eta_star inverts the spike map") {
    // A spike of strength d shows up at sqrt((1 + d^2)(beta + d^2)) / d.
    for (double beta : {0.25, 0.5, 1.0})
        for (double d : {1.2, 2.0, 5.0}) {
            if (d <= std::pow(beta, 0.25)) continue;
            const double lambda = std::sqrt((1 + d * d) * (beta + d * d)) / d;
            CHECK(eta_star(lambda, beta) == doctest::Approx(d).epsilon(1e-10));
        }
}

TEST_CASE("eta_star is monotone in lambda and rejects bad arguments") {
    for (double beta : {0.1, 0.5, 1.0}) {
        double prev = 0;
        for (double lambda = 0; lambda < 8; lambda += 0.01) {
            const double v = eta_star(lambda, beta);
            CHECK(v >= prev);
            CHECK(v <= lambda);
            prev = v;
        }
    }
    CHECK_THROWS_AS(eta_star(1.0, 0.0), ArgumentError);
    CHECK_THROWS_AS(eta_star(1.0, 1.5), ArgumentError);
    CHECK_THROWS_AS(eta_star(-1.0, 0.5), ArgumentError);
}

TEST_CASE("estimate_noise examples") {
    DenoiseConfig cfg;
    Eigen::MatrixXd same(4, 6);
    same.colwise() = Eigen::Vector4d(1, -2, 3, 0.5);
    CHECK(estimate_noise(same, cfg) == 0.0);

    Eigen::MatrixXd row(1, 3);
    row << 0, 2, 4;
    cfg.c_noise = 1.5;
    CHECK(estimate_noise(row, cfg) == doctest::Approx(1.5 * std::sqrt(8.0 / 3.0)).epsilon(1e-12));
    CHECK(estimate_noise(row, cfg) == doctest::Approx(2.4495).epsilon(1e-4));

    cfg.c_noise = 1.0;
    const double s = estimate_noise(ts::gaussian(100, 400, 21), cfg);
    CHECK(s >= 0.95);
    CHECK(s <= 1.05);

    cfg.c_noise = 0;
    CHECK_THROWS_AS(estimate_noise(row, cfg), ArgumentError);
}

TEST_CASE("optimal_shrink: zero matrix") {
    const auto res = optimal_shrink(Eigen::MatrixXd::Zero(10, 20), DenoiseConfig{});
    CHECK(res.kept_rank == 0);
    CHECK(res.denoised.isZero());
}

TEST_CASE("optimal_shrink: identical columns are kept verbatim") {
    Eigen::MatrixXd s(50, 12);
    s.colwise() = ts::gaussian(50, 1, 2).col(0);
    const auto res = optimal_shrink(s, DenoiseConfig{});
    CHECK(res.kept_rank == 1);
    CHECK((res.denoised - s).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("optimal_shrink: rank-1 spike is recovered") {
    const Eigen::Index p = 200, n = 400;
    const double d = 3.0;
    const Eigen::VectorXd u = ts::unit_gaussian_vector(p, 31);
    const Eigen::VectorXd v = ts::unit_gaussian_vector(n, 32);
    const Eigen::MatrixXd signal = std::sqrt(double(n)) * d * u * v.transpose();
    const Eigen::MatrixXd s = signal + ts::gaussian(p, n, 33);
    DenoiseConfig cfg;
    cfg.c_noise = 1.0;
    const auto res = optimal_shrink(s, cfg);
    CHECK(res.kept_rank == 1);
    const double top = res.singular_values_shrunk(0) / std::sqrt(double(n));
    CHECK(top == doctest::Approx(d).epsilon(0.05));
    CHECK((res.denoised - signal).norm() < (s - signal).norm());
}

TEST_CASE("optimal_shrink: shape, ordering and bounds") {
    for (auto [p, n] : {std::pair<Eigen::Index, Eigen::Index>{30, 80}, {80, 30}, {40, 40}}) {
        Eigen::MatrixXd s = ts::gaussian(p, n, 5 + static_cast<std::uint64_t>(p));
        s.col(0).array() += 0;
        s += 4.0 * ts::gaussian(p, 1, 6).replicate(1, n);
        const auto res = optimal_shrink(s, DenoiseConfig{});
        CHECK(res.denoised.rows() == p);
        CHECK(res.denoised.cols() == n);
        CHECK(res.kept_rank <= std::min(p, n));
        CHECK(res.beta == doctest::Approx(double(std::min(p, n)) / double(std::max(p, n))));
        for (Eigen::Index i = 0; i < res.singular_values_shrunk.size(); ++i) {
            CHECK(res.singular_values_shrunk(i) <= res.singular_values_raw(i));
            if (i > 0) CHECK(res.singular_values_shrunk(i) <= res.singular_values_shrunk(i - 1));
        }
    }
}

TEST_CASE("optimal_shrink: scale equivariance") {
    Eigen::MatrixXd s = ts::gaussian(60, 90, 40) + 3.0 * ts::gaussian(60, 1, 41).replicate(1, 90);
    const auto a = optimal_shrink(s, DenoiseConfig{});
    for (double alpha : {0.01, 3.7, 250.0}) {
        const auto b = optimal_shrink(Eigen::MatrixXd(alpha * s), DenoiseConfig{});
        CHECK(b.kept_rank == a.kept_rank);
        CHECK((b.denoised - alpha * a.denoised).norm() <= 1e-10 * alpha * a.denoised.norm());
    }
}

TEST_CASE("optimal_shrink: column permutation equivariance") {
    const Eigen::Index p = 40, n = 70;
    Eigen::MatrixXd s = ts::gaussian(p, n, 50) + 3.0 * ts::gaussian(p, 1, 51).replicate(1, n);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(52);
    std::shuffle(idx.begin(), idx.end(), rng);
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(n);
    for (Eigen::Index i = 0; i < n; ++i) perm.indices()(i) = idx[static_cast<std::size_t>(i)];
    const auto a = optimal_shrink(s, DenoiseConfig{});
    const auto b = optimal_shrink(Eigen::MatrixXd(s * perm), DenoiseConfig{});
    CHECK(b.sigma_hat == doctest::Approx(a.sigma_hat).epsilon(1e-12));
    CHECK((b.denoised - a.denoised * perm).norm() <= 1e-10 * a.denoised.norm());
}

TEST_CASE("optimal_shrink: single-precision instantiation agrees with double") {
    const Eigen::MatrixXd s = ts::gaussian(20, 50, 60) + 5.0 * ts::gaussian(20, 1, 61).replicate(1, 50);
    const auto d = optimal_shrink(s, DenoiseConfig{});
    const auto f = optimal_shrink(Eigen::MatrixXf(s.cast<float>()), DenoiseConfig{});
    CHECK(f.kept_rank == d.kept_rank);
    CHECK((f.denoised.cast<double>() - d.denoised).norm() <= 1e-4 * d.denoised.norm());
}

TEST_CASE("optimal_shrink rejects degenerate input") {
    CHECK_THROWS_AS(optimal_shrink(Eigen::MatrixXd::Zero(5, 1), DenoiseConfig{}), ArgumentError);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(3, 3);
    bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(optimal_shrink(bad, DenoiseConfig{}), ArgumentError);
}
