#include "fecg/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fecg {

namespace {
constexpr double nan = std::numeric_limits<double>::quiet_NaN();
}

MatchResult match_peaks(const PeakList &truth, const PeakList &detected, double window_ms) {
    if (!(window_ms > 0)) throw ArgumentError("match_peaks: window must be positive");
    const auto &d = detected.times();
    std::vector<bool> used(d.size(), false);
    MatchResult res;
    for (double t : truth) {
        auto it = std::lower_bound(d.begin(), d.end(), t - window_ms);
        std::ptrdiff_t pick = -1;
        double best = std::numeric_limits<double>::infinity();
        for (; it != d.end() && *it <= t + window_ms; ++it) {
            const auto j = it - d.begin();
            if (used[static_cast<std::size_t>(j)]) continue;
            const double gap = std::abs(*it - t);
            if (gap < best) {
                best = gap;
                pick = j;
            }
        }
        if (pick < 0) {
            ++res.fn;
            continue;
        }
        used[static_cast<std::size_t>(pick)] = true;
        res.pairs.emplace_back(t, d[static_cast<std::size_t>(pick)]);
    }
    res.fp = static_cast<std::size_t>(std::count(used.begin(), used.end(), false));
    return res;
}

double f1(const MatchResult &m) {
    const auto tp = m.tp();
    if (tp + m.fp + m.fn == 0) throw ArgumentError("f1: undefined with no truth and no detections");
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + m.fn + m.fp);
}

double mae(const MatchResult &m) {
    if (m.pairs.empty()) throw ArgumentError("mae: no matched pairs");
    double acc = 0;
    for (const auto &[t, d] : m.pairs) acc += std::abs(t - d);
    return acc / static_cast<double>(m.pairs.size());
}

namespace {

PeakList present(const std::vector<std::optional<double>> &v) {
    std::vector<double> out;
    for (const auto &x : v)
        if (x) out.push_back(*x);
    return PeakList(std::move(out));
}

struct Window {
    Eigen::Index lo, hi;
};

std::optional<Window> window_at(Eigen::Index r, double lo_ms, double hi_ms, double fs, Eigen::Index n) {
    const auto lo = r + static_cast<Eigen::Index>(std::lround(lo_ms * fs / 1000.0));
    const auto hi = r + static_cast<Eigen::Index>(std::lround(hi_ms * fs / 1000.0));
    if (lo < 1 || hi > n - 2 || hi < lo) return std::nullopt;
    return Window{lo, hi};
}

// Largest |x| among strict local extrema above `floor`.
std::optional<Eigen::Index> largest_extremum(const Signal &x, Window w, double floor) {
    std::optional<Eigen::Index> best;
    for (Eigen::Index i = w.lo; i <= w.hi; ++i) {
        const bool peak = x(i) > x(i - 1) && x(i) > x(i + 1);
        const bool trough = x(i) < x(i - 1) && x(i) < x(i + 1);
        if (!(peak || trough) || !(std::abs(x(i)) > floor)) continue;
        if (!best || std::abs(x(i)) > std::abs(x(*best))) best = i;
    }
    return best;
}

// Deepest strict local minimum of polarity * x.
std::optional<Eigen::Index> deepest_minimum(const Signal &x, Window w, double polarity) {
    std::optional<Eigen::Index> best;
    for (Eigen::Index i = w.lo; i <= w.hi; ++i) {
        const double v = polarity * x(i);
        if (!(v < polarity * x(i - 1) && v < polarity * x(i + 1))) continue;
        if (!best || v < polarity * x(*best)) best = i;
    }
    return best;
}

} // namespace

PeakList Landmarks::p_list() const { return present(p); }
PeakList Landmarks::q_list() const { return present(q); }
PeakList Landmarks::s_list() const { return present(s); }
PeakList Landmarks::t_list() const { return present(t); }

Landmarks detect_pt(const Signal &x, double fs, const PeakList &rpeaks, const PtWindows &win) {
    Landmarks out;
    const auto n = x.size();
    const auto samples = rpeaks.to_samples(fs);
    const auto ms = [fs](Eigen::Index i) { return static_cast<double>(i) * 1000.0 / fs; };
    const auto rr = rpeaks.rr_intervals();
    for (std::size_t k = 0; k < samples.size(); ++k) {
        out.r.push_back(rpeaks[k]);
        out.p.emplace_back();
        out.q.emplace_back();
        out.s.emplace_back();
        out.t.emplace_back();
        const auto r = samples[k];
        if (r < 0 || r >= n) continue;
        const double polarity = x(r) >= 0 ? 1.0 : -1.0;
        const double floor = win.floor_fraction * std::abs(x(r));

        if (auto w = window_at(r, win.p_lo, win.p_hi, fs, n))
            if (auto i = largest_extremum(x, *w, floor)) out.p.back() = ms(*i);
        if (auto w = window_at(r, win.q_lo, win.q_hi, fs, n))
            if (auto i = deepest_minimum(x, *w, polarity)) out.q.back() = ms(*i);
        if (auto w = window_at(r, win.s_lo, win.s_hi, fs, n))
            if (auto i = deepest_minimum(x, *w, polarity)) out.s.back() = ms(*i);
        if (!rr.empty()) {
            const double interval = k < rr.size() ? rr[k] : rr.back();
            const double t_hi = std::min(win.t_hi, win.t_rr_fraction * interval);
            if (auto w = window_at(r, win.t_lo, t_hi, fs, n))
                if (auto i = largest_extremum(x, *w, floor)) out.t.back() = ms(*i);
        }
    }
    return out;
}

double nmae(const Signal &truth, const Signal &est, double fs, const std::vector<std::pair<double, double>> &pairs) {
    double acc = 0;
    std::size_t used = 0, dropped = 0;
    const auto at = [fs](const Signal &s, double t) {
        const auto i = static_cast<Eigen::Index>(std::llround(t * fs / 1000.0));
        if (i < 0 || i >= s.size()) throw ArgumentError("nmae: timestamp outside the signal");
        return s(i);
    };
    for (const auto &[t, d] : pairs) {
        const double a = at(truth, t);
        if (a == 0.0) {
            ++dropped;
            continue;
        }
        acc += std::abs(a - at(est, d)) / std::abs(a);
        ++used;
    }
    if (dropped) log::warn("evaluate", "nmae: dropped " + std::to_string(dropped) + " pairs with zero truth amplitude");
    if (used == 0) throw ArgumentError("nmae: no usable pairs");
    return acc / static_cast<double>(used);
}

double nmae(const Signal &truth, const Signal &est, double fs, const PeakList &truth_peaks, const PeakList &est_peaks) {
    if (truth_peaks.size() != est_peaks.size()) throw ArgumentError("nmae: peak lists must be paired");
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t i = 0; i < truth_peaks.size(); ++i) pairs.emplace_back(truth_peaks[i], est_peaks[i]);
    return nmae(truth, est, fs, pairs);
}

double nmde(const std::vector<double> &truth_intervals, const std::vector<double> &est_intervals) {
    if (truth_intervals.size() != est_intervals.size()) throw ArgumentError("nmde: interval lists must be paired");
    double acc = 0;
    std::size_t used = 0, dropped = 0;
    for (std::size_t i = 0; i < truth_intervals.size(); ++i) {
        if (truth_intervals[i] == 0.0) {
            ++dropped;
            continue;
        }
        acc += std::abs(truth_intervals[i] - est_intervals[i]) / std::abs(truth_intervals[i]);
        ++used;
    }
    if (dropped) log::warn("evaluate", "nmde: dropped " + std::to_string(dropped) + " zero-length truth intervals");
    if (used == 0) throw ArgumentError("nmde: no usable intervals");
    return acc / static_cast<double>(used);
}

Summary summarize(const std::vector<double> &values) {
    std::vector<double> v;
    for (double x : values)
        if (std::isfinite(x)) v.push_back(x);
    Summary s;
    s.count = v.size();
    if (v.empty()) {
        s.mean = s.sd = s.median = nan;
        return s;
    }
    s.mean = mean(v);
    s.sd = v.size() > 1 ? stddev(v) : 0.0;
    s.median = median(v);
    return s;
}

Boxplot boxplot(const std::vector<double> &values) {
    std::vector<double> v;
    for (double x : values)
        if (std::isfinite(x)) v.push_back(x);
    if (v.empty()) throw ArgumentError("boxplot: no finite values");
    std::sort(v.begin(), v.end());
    Boxplot b;
    b.q1 = quantile(v, 0.25);
    b.median = quantile(v, 0.5);
    b.q3 = quantile(v, 0.75);
    const double iqr = b.q3 - b.q1;
    const double lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
    b.whisker_lo = b.q1;
    b.whisker_hi = b.q3;
    bool first = true;
    for (double x : v) {
        if (x < lo || x > hi) {
            b.outliers.push_back(x);
            continue;
        }
        if (first) b.whisker_lo = x;
        first = false;
        b.whisker_hi = x;
    }
    return b;
}

std::vector<AlphaRow> aggregate(const std::map<std::string, std::vector<double>> &scores,
                                const std::vector<double> &alphas) {
    if (scores.empty()) throw ArgumentError("aggregate: no recordings");
    std::vector<AlphaRow> rows;
    for (double a : alphas) {
        if (!(a >= 0 && a <= 1)) throw ArgumentError("aggregate: alpha must lie in [0, 1]");
        AlphaRow row;
        row.alpha = a;
        std::vector<double> vals;
        for (const auto &[name, list] : scores) {
            std::vector<double> finite;
            for (double x : list)
                if (std::isfinite(x)) finite.push_back(x);
            const double q = finite.empty() ? nan : quantile(finite, a);
            row.per_recording[name] = q;
            vals.push_back(q);
        }
        row.summary = summarize(vals);
        rows.push_back(std::move(row));
    }
    return rows;
}

void EvalConfig::validate() const {
    if (!(window_ms > 0)) throw ArgumentError("evaluation window must be positive");
    for (double w : windows)
        if (!(w > 0)) throw ArgumentError("evaluation windows must be positive");
}

namespace {

template <typename F>
double guarded(F &&f) {
    try {
        return f();
    } catch (const ArgumentError &) {
        return nan;
    }
}

std::size_t index_of(const std::vector<double> &v, double t) {
    return static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), t) - v.begin());
}

} // namespace

RecordScores evaluate_record(const Signal &truth_signal, const PeakList &truth_peaks, const Signal &est_signal,
                             const PeakList &est_peaks, double fs, const EvalConfig &config) {
    config.validate();
    RecordScores s;
    const auto m = match_peaks(truth_peaks, est_peaks, config.window_ms);
    s.tp = m.tp();
    s.fp = m.fp;
    s.fn = m.fn;
    s.f1 = guarded([&] { return f1(m); });
    s.mae_ms = guarded([&] { return mae(m); });
    for (double w : config.windows) s.f1_at[w] = guarded([&] { return f1(match_peaks(truth_peaks, est_peaks, w)); });

    const auto lt = detect_pt(truth_signal, fs, truth_peaks, config.pt);
    const auto le = detect_pt(est_signal, fs, est_peaks, config.pt);
    std::vector<std::pair<double, double>> p_pairs, t_pairs;
    std::vector<double> pr_t, pr_e, qt_t, qt_e, st_t, st_e;
    for (const auto &[t, d] : m.pairs) {
        const auto i = index_of(truth_peaks.times(), t);
        const auto j = index_of(est_peaks.times(), d);
        if (lt.p[i] && le.p[j]) {
            p_pairs.emplace_back(*lt.p[i], *le.p[j]);
            pr_t.push_back(t - *lt.p[i]);
            pr_e.push_back(d - *le.p[j]);
        }
        if (lt.t[i] && le.t[j]) t_pairs.emplace_back(*lt.t[i], *le.t[j]);
        if (lt.t[i] && le.t[j] && lt.q[i] && le.q[j]) {
            qt_t.push_back(*lt.t[i] - *lt.q[i]);
            qt_e.push_back(*le.t[j] - *le.q[j]);
        }
        if (lt.t[i] && le.t[j] && lt.s[i] && le.s[j]) {
            st_t.push_back(*lt.t[i] - *lt.s[i]);
            st_e.push_back(*le.t[j] - *le.s[j]);
        }
    }
    s.nmae_r = guarded([&] { return nmae(truth_signal, est_signal, fs, m.pairs); });
    s.nmae_p = guarded([&] { return nmae(truth_signal, est_signal, fs, p_pairs); });
    s.nmae_t = guarded([&] { return nmae(truth_signal, est_signal, fs, t_pairs); });
    s.nmde_pr = guarded([&] { return nmde(pr_t, pr_e); });
    s.nmde_qt = guarded([&] { return nmde(qt_t, qt_e); });
    s.nmde_st = guarded([&] { return nmde(st_t, st_e); });
    return s;
}

namespace {

nlohmann::ordered_json number(double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nullptr; }

std::string window_key(double w) {
    std::string s = std::to_string(w);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
}

} // namespace

nlohmann::ordered_json to_json(const Summary &s) {
    return {{"count", s.count}, {"mean", number(s.mean)}, {"sd", number(s.sd)}, {"median", number(s.median)}};
}

nlohmann::ordered_json to_json(const PtWindows &w) {
    return {{"p_ms", {w.p_lo, w.p_hi}},       {"q_ms", {w.q_lo, w.q_hi}},
            {"s_ms", {w.s_lo, w.s_hi}},       {"t_ms", {w.t_lo, w.t_hi}},
            {"t_rr_fraction", w.t_rr_fraction}, {"floor_fraction", w.floor_fraction}};
}

nlohmann::ordered_json EvalReport::to_json() const {
    using json = nlohmann::ordered_json;
    json per = json::object();
    std::map<std::string, std::vector<double>> columns;
    for (const auto &[name, s] : per_recording) {
        json f1w = json::object();
        for (const auto &[w, v] : s.f1_at) {
            f1w[window_key(w)] = number(v);
            columns["f1@" + window_key(w)].push_back(v);
        }
        per[name] = {{"f1", number(s.f1)},
                     {"mae_ms", number(s.mae_ms)},
                     {"tp", s.tp},
                     {"fp", s.fp},
                     {"fn", s.fn},
                     {"f1_at", f1w},
                     {"nmae", {{"P", number(s.nmae_p)}, {"R", number(s.nmae_r)}, {"T", number(s.nmae_t)}}},
                     {"nmde", {{"PR", number(s.nmde_pr)}, {"QT", number(s.nmde_qt)}, {"ST", number(s.nmde_st)}}}};
        columns["f1"].push_back(s.f1);
        columns["mae_ms"].push_back(s.mae_ms);
        columns["nmae_P"].push_back(s.nmae_p);
        columns["nmae_R"].push_back(s.nmae_r);
        columns["nmae_T"].push_back(s.nmae_t);
        columns["nmde_PR"].push_back(s.nmde_pr);
        columns["nmde_QT"].push_back(s.nmde_qt);
        columns["nmde_ST"].push_back(s.nmde_st);
    }
    json agg = json::object();
    for (const auto &[key, vals] : columns) agg[key] = fecg::to_json(summarize(vals));
    json windows_json = json::array();
    for (double w : config.windows) windows_json.push_back(w);
    return {{"per_recording", per},
            {"aggregates", agg},
            {"config", {{"window_ms", config.window_ms}, {"windows", windows_json}, {"pt_windows", fecg::to_json(config.pt)}}}};
}

} // namespace fecg
