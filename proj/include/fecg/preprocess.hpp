#pragma once

#include "fecg/common.hpp"
#include "fecg/signal_io.hpp"

#include <complex>
#include <vector>

namespace fecg {

struct FilterSpec {
    int lowpass_order = 5;
    double lowpass_cutoff = 100.0; // Hz
    double notch_center = 60.0;    // Hz
    double notch_q = 30.0;
    double median_short_ms = 200.0;
    double median_long_ms = 600.0;

    void validate(double fs) const;
};

/// One second-order section in transposed direct form II, a0 == 1.
struct Biquad {
    double b0 = 1, b1 = 0, b2 = 0;
    double a1 = 0, a2 = 0;

    std::complex<double> response(double f, double fs) const;
};

using Sos = std::vector<Biquad>;

Sos butterworth_lowpass_sos(int order, double cutoff, double fs);
Sos butterworth_highpass_sos(int order, double cutoff, double fs);
Sos notch_sos(double center, double q, double fs);

/// Single forward pass, zero initial state.
Signal sosfilt(const Sos &sos, const Signal &x);

/// Forward-backward (zero-phase) application with odd-reflection padding and
/// steady-state initial conditions. Effective magnitude is |H|^2.
Signal filtfilt(const Sos &sos, const Signal &x);

Signal butterworth_lowpass(const Signal &x, double fs, const FilterSpec &spec);
Signal notch_filter(const Signal &x, double fs, const FilterSpec &spec);

/// Centered running median of odd length `window`, reflect-padded at the ends.
Signal running_median(const Signal &x, Eigen::Index window);

/// Odd window length in samples for a duration in ms.
Eigen::Index median_window_samples(double ms, double fs);

/// x minus the two-stage (short then long) running-median baseline.
Signal median_detrend(const Signal &x, double fs, const FilterSpec &spec);

/// lowpass -> notch -> detrend.
Signal preprocess(const Signal &x, double fs, const FilterSpec &spec);
Record preprocess(const Record &record, const FilterSpec &spec);

} // namespace fecg
