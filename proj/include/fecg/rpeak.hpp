#pragma once

// R-peak detection: de-shape spectrogram heart-rate tracking, rhythm-aware
// beat placement, a classical energy detector, and multi-list fusion.

#include "fecg/common.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace fecg {

/// Time-frequency magnitude; values is freqs x times.
struct TfPlane {
    Eigen::VectorXd times; // s, frame centers
    Eigen::VectorXd freqs; // Hz, bin centers
    Eigen::MatrixXd values;
};

/// Instantaneous heart rate (Hz) per frame.
struct IhrCurve {
    Eigen::VectorXd times;
    Eigen::VectorXd rate;

    double rate_at(double t) const;
};

enum class BeatMode { maternal, fetal };

struct DeshapeParams {
    double window_s = 5.0;
    double hop_s = 0.1;
    double gamma = 0.3;
    double f_lo = 0.5;
    double f_hi = 2.2;
    double analysis_fs = 100.0; // input is resampled to this rate first
    int nfft = 2048;
};

struct RpeakConfig {
    DeshapeParams maternal{5.0, 0.1, 0.3, 0.5, 2.2, 100.0, 2048};
    DeshapeParams fetal{5.0, 0.1, 0.3, 1.5, 3.3, 100.0, 2048};
    double ihr_penalty_per_hz = 1.0; // a 0.2 Hz jump costs a 20% magnitude drop
    double search_radius_ms = 150.0;
    double rhythm_weight = 4.0;   // weight of (log(interval/period))^2
    double missed_beat_cost = 1.5;
    double vote_window_ms = 50.0;
    std::size_t fusion_keep = 5;

    const DeshapeParams &params(BeatMode mode) const { return mode == BeatMode::maternal ? maternal : fetal; }
};

double min_separation_ms(BeatMode mode);

/// Plain STFT magnitude restricted to [f_lo, f_hi].
TfPlane stft_magnitude(const Signal &x, double fs, const DeshapeParams &params);

/// STFT magnitude multiplied by the inverted-quefrency cepstral mask, which
/// keeps fundamentals and suppresses their harmonics. Restricted to [f_lo, f_hi].
TfPlane deshape_spectrogram(const Signal &x, double fs, const DeshapeParams &params);

/// Best ridge through the band by dynamic programming: per-frame normalized
/// magnitude minus penalty_per_hz * |frequency jump|.
IhrCurve extract_ihr(const TfPlane &plane, double f_lo, double f_hi, double penalty_per_hz = 1.0);

/// One beat per cycle, placed by dynamic programming over local maxima of the
/// band-passed energy envelope with a rhythm prior from `ihr`.
PeakList beat_track(const Signal &x, double fs, const IhrCurve &ihr, BeatMode mode,
                    const RpeakConfig &config = {});

/// deshape_spectrogram -> extract_ihr -> beat_track.
PeakList detect_rpeaks(const Signal &x, double fs, BeatMode mode, const RpeakConfig &config = {});

/// Filtered-derivative / energy-threshold QRS detector, independent of the
/// rhythm tracker. Used as the second detector of the beat-agreement SQI.
PeakList energy_detector(const Signal &x, double fs, BeatMode mode);

/// Keeps the `keep` lists with the smallest RR standard deviation and votes:
/// a consensus beat needs ceil(keep/2) lists with a peak inside one
/// `window_ms` span; its time is the median of the contributing peaks.
PeakList fuse_peaks(std::span<const PeakList> lists, std::size_t keep, double window_ms = 50.0,
                    double min_separation = 250.0);

} // namespace fecg
