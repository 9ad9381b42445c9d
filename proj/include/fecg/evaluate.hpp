#pragma once

// Beat matching and morphology scores.

#include "fecg/common.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fecg {

struct MatchResult {
    std::vector<std::pair<double, double>> pairs; // (truth ms, detected ms)
    std::size_t fp = 0;
    std::size_t fn = 0;

    std::size_t tp() const { return pairs.size(); }
};

/// Walks truth in order; each truth beat takes the nearest unmatched
/// detection within the window, the earlier one on a tie.
MatchResult match_peaks(const PeakList &truth, const PeakList &detected, double window_ms);

/// 2TP / (2TP + FN + FP). Throws if all three counts are zero.
double f1(const MatchResult &match);

/// Mean |truth - detected| over matched pairs. Throws on zero pairs.
double mae(const MatchResult &match);

/// Search windows in ms relative to R. The T window ends at
/// R + min(t_hi, t_rr_fraction * RR).
struct PtWindows {
    double p_lo = -250, p_hi = -60;
    double q_lo = -60, q_hi = -10;
    double s_lo = 10, s_hi = 60;
    double t_lo = 80, t_hi = 400;
    double t_rr_fraction = 0.6;
    double floor_fraction = 0.03; // P/T must exceed this fraction of |x(R)|
};

/// Landmarks per R peak, aligned with `r`; absent ones are empty.
struct Landmarks {
    std::vector<double> r;
    std::vector<std::optional<double>> p, q, s, t;

    PeakList p_list() const;
    PeakList q_list() const;
    PeakList s_list() const;
    PeakList t_list() const;
};

/// P and T are the largest-magnitude strict local extrema in their windows;
/// Q and S the deepest strict local minima of the R-polarity-corrected signal.
Landmarks detect_pt(const Signal &x, double fs, const PeakList &rpeaks, const PtWindows &windows = {});

/// mean |z(t_i) - zhat(that_i)| / |z(t_i)| over (t_i, that_i) pairs in ms.
/// Pairs with z(t_i) == 0 are dropped with a warning. Throws if none remain.
double nmae(const Signal &truth, const Signal &est, double fs, const std::vector<std::pair<double, double>> &pairs);
double nmae(const Signal &truth, const Signal &est, double fs, const PeakList &truth_peaks, const PeakList &est_peaks);

/// mean |a_i - b_i| / a_i. Zero-length truth intervals are dropped with a
/// warning. Throws if none remain.
double nmde(const std::vector<double> &truth_intervals, const std::vector<double> &est_intervals);

struct Summary {
    std::size_t count = 0;
    double mean = 0, sd = 0, median = 0;
};

/// Non-finite values are ignored. sd is 0 for a single value.
Summary summarize(const std::vector<double> &values);

struct Boxplot {
    double q1 = 0, median = 0, q3 = 0;
    double whisker_lo = 0, whisker_hi = 0; // most extreme values within 1.5 IQR
    std::vector<double> outliers;
};
Boxplot boxplot(const std::vector<double> &values);

struct AlphaRow {
    double alpha = 1;
    std::map<std::string, double> per_recording;
    Summary summary;
};

/// For each alpha: per recording, the alpha-quantile of its per-combination
/// scores; then mean, sd and median across recordings.
std::vector<AlphaRow> aggregate(const std::map<std::string, std::vector<double>> &scores,
                                const std::vector<double> &alphas);

struct EvalConfig {
    double window_ms = 50;
    std::vector<double> windows{10, 25, 50};
    PtWindows pt;

    void validate() const;
};

/// Scores of one recording. Undefined metrics are NaN.
struct RecordScores {
    double f1 = 0, mae_ms = 0;
    std::size_t tp = 0, fp = 0, fn = 0;
    std::map<double, double> f1_at; // window ms -> F1
    double nmae_p = 0, nmae_r = 0, nmae_t = 0;
    double nmde_pr = 0, nmde_qt = 0, nmde_st = 0;
};

RecordScores evaluate_record(const Signal &truth_signal, const PeakList &truth_peaks, const Signal &est_signal,
                             const PeakList &est_peaks, double fs, const EvalConfig &config = {});

struct EvalReport {
    EvalConfig config;
    std::map<std::string, RecordScores> per_recording;

    /// {per_recording, aggregates, config}; NaN is written as null.
    nlohmann::ordered_json to_json() const;
};

nlohmann::ordered_json to_json(const Summary &s);
nlohmann::ordered_json to_json(const PtWindows &w);

} // namespace fecg
