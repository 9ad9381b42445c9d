#pragma once

// Maternal/fetal separation. Channels are mixed along unit directions theta,
// maternal beats are located on every mix and fused, the maternal component
// of each mix is estimated by shrinking its R-aligned cycle matrix, and the
// mix whose residual has the best beat agreement carries on to the fetal pass.

#include "fecg/common.hpp"
#include "fecg/preprocess.hpp"
#include "fecg/rpeak.hpp"
#include "fecg/shrinkage.hpp"
#include "fecg/signal_io.hpp"

#include <Eigen/Core>

#include <optional>
#include <vector>

namespace fecg {

/// Unit mixing directions, one per column (J x K).
struct CombinationGrid {
    Eigen::MatrixXd thetas;

    /// J=1: {+1, -1}. J=2: theta1 = -1 + 2k/steps for k = 1..steps,
    /// theta2 = +sqrt(1 - theta1^2). J=3: (theta1, theta2) on the same
    /// per-axis grid inside the unit disc, theta3 = +sqrt(1 - theta1^2 - theta2^2).
    static CombinationGrid standard(Eigen::Index channels, int steps = 14);

    Eigen::Index size() const { return thetas.cols(); }
    Eigen::Index channels() const { return thetas.rows(); }
    Eigen::VectorXd theta(Eigen::Index k) const { return thetas.col(k); }
    void validate() const;
};

/// N x K matrix whose column k is sum_j theta_k(j) x_j.
Eigen::MatrixXd linear_combinations(const Eigen::MatrixXd &channels, const CombinationGrid &grid);
Eigen::MatrixXd linear_combinations(const Record &record, const CombinationGrid &grid);

/// R-aligned cycles, one per column. Column i covers
/// [centers[i] - peak_offset, centers[i] + (rows - 1 - peak_offset)].
struct SegmentMatrix {
    Eigen::MatrixXd data;
    Eigen::Index peak_offset = 0;
    Eigen::Index w = 0;
    PeakList source_peaks;             // usable peaks only, one per column
    std::vector<Eigen::Index> centers; // R sample index per column
    std::vector<double> rr_ms;         // interval to the previous detected peak (next one for the first)

    Eigen::Index cycles() const { return data.cols(); }
};

/// Cycle window w = round(type-7 95% quantile of RR) in samples.
SegmentMatrix segment(const Signal &z, const PeakList &peaks, double fs);

/// Writes column-wise cycles back onto a zero signal of length n. Where two
/// windows overlap, linear ramps cross-fade them; elsewhere samples are copied.
Signal stitch(const Eigen::MatrixXd &cycles, const std::vector<Eigen::Index> &centers, Eigen::Index peak_offset,
              Eigen::Index n);

struct ComponentEstimate {
    Signal component;
    SegmentMatrix segments;
    Eigen::MatrixXd denoised;
    Eigen::Index kept_rank = 0;
    double sigma_hat = 0;
    bool median_fallback = false;
};

/// Shrinks the cycle matrix and stitches it. With fewer than 8 cycles each
/// cycle is replaced by the entry-wise median template instead.
ComponentEstimate estimate_component(const Signal &z, const PeakList &peaks, double fs,
                                     const DenoiseConfig &config = {});

/// Each column becomes the entry-wise median of itself and its k nearest
/// columns by RR interval (ties go to the temporally closer column).
SegmentMatrix nonlocal_median(const SegmentMatrix &segments, Eigen::Index k);

/// z and m rounded to a shared dyadic grid fine enough to keep every
/// significant bit that matters, so that z - m is exact and m + rest == z.
struct ExactSplit {
    Signal z;
    Signal m;
    Signal rest;
};
ExactSplit exact_split(const Signal &z, const Signal &m);

/// 2 * matched / (n_a + n_b); 0 if either list has fewer than two beats.
double beat_agreement(const PeakList &a, const PeakList &b, double window_ms = 50.0);

/// beat_agreement of the rhythm tracker and the energy detector on z.
double bsqi(const Signal &z, double fs, BeatMode mode = BeatMode::fetal, const RpeakConfig &config = {});

/// Index of the largest score, lowest index on ties.
Eigen::Index select_best(const std::vector<double> &scores);

struct DecomposeConfig {
    FilterSpec filter;
    DenoiseConfig denoise;
    RpeakConfig rpeak;
    int grid_steps = 14;
    int iterations = 1;
    int nonlocal_k = 0; // 0 disables the nonlocal median
    int working_fs = 1000;
    unsigned jobs = 1;

    void validate(double fs) const;
};

struct DecompositionOutput {
    int fs = 0;
    CombinationGrid grid;
    Eigen::Index theta_index = 0;
    Eigen::VectorXd theta_star;
    Signal z_theta_star; // on the subtraction grid, == mecg + rfecg
    Signal mecg;
    Signal rfecg;
    Signal fecg;
    PeakList maternal_peaks;
    PeakList fetal_peaks;
    std::vector<double> sqi;               // per theta
    std::vector<PeakList> maternal_per_theta; // raw detections before fusion
    bool labels_swapped = false;
};

DecompositionOutput decompose(const Record &record, const DecomposeConfig &config = {});

} // namespace fecg
