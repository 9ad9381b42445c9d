#pragma once

// Shared fixtures and reference implementations for the test binaries. The
// reference code here is written independently of the library and kept as
// plain as possible.

#include "fecg/common.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace testing_support {

inline std::filesystem::path scratch_dir(const std::string &name) {
    auto dir = std::filesystem::temp_directory_path() / ("fecg_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
    return m;
}

inline Eigen::VectorXd unit_gaussian_vector(Eigen::Index n, std::uint64_t seed) {
    Eigen::VectorXd v = gaussian(n, 1, seed);
    return v / v.norm();
}

inline Eigen::VectorXd sine(double freq, double fs, Eigen::Index n, double amp = 1.0, double phase = 0.0) {
    Eigen::VectorXd x(n);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = amp * std::sin(2 * M_PI * freq * static_cast<double>(i) / fs + phase);
    return x;
}

/// Narrow Gaussian pulses of width sigma_ms at the given times.
inline Eigen::VectorXd pulse_train(const std::vector<double> &times_ms, double fs, Eigen::Index n,
                                   double sigma_ms = 8.0, double amp = 1.0) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (double t : times_ms) {
        const double c = t * fs / 1000.0;
        const double s = sigma_ms * fs / 1000.0;
        const auto lo = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(c - 6 * s));
        const auto hi = std::min<Eigen::Index>(n - 1, static_cast<Eigen::Index>(c + 6 * s) + 1);
        for (Eigen::Index i = lo; i <= hi; ++i) {
            const double d = (static_cast<double>(i) - c) / s;
            x(i) += amp * std::exp(-0.5 * d * d);
        }
    }
    return x;
}

inline std::vector<double> regular_times(double first_ms, double period_ms, double end_ms) {
    std::vector<double> t;
    for (double v = first_ms; v < end_ms; v += period_ms) t.push_back(v);
    return t;
}

/// Amplitude of the component at `freq` via projection on sin/cos over [lo, hi).
inline double tone_amplitude(const Eigen::VectorXd &x, double freq, double fs, Eigen::Index lo, Eigen::Index hi) {
    double c = 0, s = 0;
    for (Eigen::Index i = lo; i < hi; ++i) {
        const double a = 2 * M_PI * freq * static_cast<double>(i) / fs;
        c += x(i) * std::cos(a);
        s += x(i) * std::sin(a);
    }
    const double n = static_cast<double>(hi - lo);
    return 2.0 * std::sqrt(c * c + s * s) / n;
}

/// Squared magnitude of a digital Butterworth lowpass designed by the
/// prewarped bilinear transform: 1 / (1 + (tan(pi f/fs) / tan(pi fc/fs))^(2N)).
inline double butterworth_digital_power(double f, double fc, double fs, int order) {
    const double r = std::tan(M_PI * f / fs) / std::tan(M_PI * fc / fs);
    return 1.0 / (1.0 + std::pow(r, 2 * order));
}

/// Squared magnitude of the second-order IIR notch with -3 dB bandwidth f0/Q:
/// (cos w - cos w0)^2 / ((cos w - cos w0)^2 + (tan(bw/2) sin w)^2).
inline double notch_power(double f, double f0, double q, double fs) {
    const double w = 2 * M_PI * f / fs;
    const double w0 = 2 * M_PI * f0 / fs;
    const double bw = w0 / q;
    const double num = std::pow(std::cos(w) - std::cos(w0), 2);
    const double den = num + std::pow(std::tan(bw / 2) * std::sin(w), 2);
    return num / den;
}

/// Type-7 quantile straight from the definition.
inline double quantile7(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(v.size() - 1, lo + 1);
    return v[lo] + (h - std::floor(h)) * (v[hi] - v[lo]);
}

/// Maximum-cardinality matching between two sorted lists under a window,
/// found by exhaustive search over truth-to-detection assignments.
inline std::size_t brute_force_max_matching(const std::vector<double> &a, const std::vector<double> &b,
                                            double window) {
    std::vector<bool> used(b.size(), false);
    std::size_t best = 0;
    std::function<void(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t count) {
        if (count + (a.size() - i) <= best) return;
        if (i == a.size()) {
            best = std::max(best, count);
            return;
        }
        for (std::size_t j = 0; j < b.size(); ++j)
            if (!used[j] && std::abs(a[i] - b[j]) <= window) {
                used[j] = true;
                go(i + 1, count + 1);
                used[j] = false;
            }
        go(i + 1, count);
    };
    go(0, 0);
    return best;
}

} // namespace testing_support
