#include "fecg/decompose.hpp"

#include "fecg/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fecg {

CombinationGrid CombinationGrid::standard(Eigen::Index channels, int steps) {
    if (channels < 1 || channels > 3) throw ArgumentError("combination grid supports 1 to 3 channels");
    if (steps < 1) throw ArgumentError("grid steps must be positive");
    CombinationGrid g;
    if (channels == 1) {
        g.thetas.resize(1, 2);
        g.thetas << 1.0, -1.0;
        return g;
    }
    std::vector<double> axis;
    for (int k = 1; k <= steps; ++k) axis.push_back(-1.0 + 2.0 * k / steps);
    std::vector<Eigen::VectorXd> cols;
    if (channels == 2) {
        for (double a : axis) {
            Eigen::Vector2d t(a, std::sqrt(std::max(0.0, 1.0 - a * a)));
            cols.emplace_back(t);
        }
    } else {
        for (double a : axis)
            for (double b : axis) {
                const double rest = 1.0 - a * a - b * b;
                if (rest < -1e-12) continue;
                Eigen::Vector3d t(a, b, std::sqrt(std::max(0.0, rest)));
                cols.emplace_back(t / t.norm());
            }
    }
    g.thetas.resize(channels, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) g.thetas.col(static_cast<Eigen::Index>(k)) = cols[k];
    return g;
}

void CombinationGrid::validate() const {
    if (thetas.cols() == 0 || thetas.rows() == 0) throw ArgumentError("combination grid is empty");
    for (Eigen::Index k = 0; k < thetas.cols(); ++k)
        if (std::abs(thetas.col(k).norm() - 1.0) > 1e-12) throw ArgumentError("combination grid: theta is not unit length");
}

Eigen::MatrixXd linear_combinations(const Eigen::MatrixXd &channels, const CombinationGrid &grid) {
    grid.validate();
    if (channels.cols() != grid.channels())
        throw ArgumentError("linear_combinations: record has " + std::to_string(channels.cols()) +
                            " channels, grid expects " + std::to_string(grid.channels()));
    return channels * grid.thetas;
}

Eigen::MatrixXd linear_combinations(const Record &record, const CombinationGrid &grid) {
    return linear_combinations(record.samples, grid);
}

SegmentMatrix segment(const Signal &z, const PeakList &peaks, double fs) {
    if (peaks.size() < 3) throw TooShortError("segment: need at least 3 peaks, got " + std::to_string(peaks.size()));
    const auto rr = peaks.rr_intervals();
    const auto w = static_cast<Eigen::Index>(std::lround(quantile(rr, 0.95) * fs / 1000.0));
    if (w < 2) throw ArgumentError("segment: cycle window shorter than two samples");
    const Eigen::Index before = (3 * w + 7) / 8;
    const Eigen::Index after = (5 * w + 7) / 8;
    const Eigen::Index n = z.size();
    const auto samples = peaks.to_samples(fs);

    SegmentMatrix seg;
    seg.w = w;
    seg.peak_offset = before;
    std::vector<double> kept;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto c = samples[i];
        if (c - before < 0 || c + after >= n) continue;
        seg.centers.push_back(c);
        kept.push_back(peaks[i]);
        seg.rr_ms.push_back(i > 0 ? peaks[i] - peaks[i - 1] : peaks[1] - peaks[0]);
    }
    if (seg.centers.size() < 3)
        throw TooShortError("segment: only " + std::to_string(seg.centers.size()) + " cycles fit inside the record");
    seg.source_peaks = PeakList(std::move(kept));
    const Eigen::Index p = before + after + 1;
    seg.data.resize(p, static_cast<Eigen::Index>(seg.centers.size()));
    for (std::size_t i = 0; i < seg.centers.size(); ++i)
        seg.data.col(static_cast<Eigen::Index>(i)) = z.segment(seg.centers[i] - before, p);
    return seg;
}

Signal stitch(const Eigen::MatrixXd &cycles, const std::vector<Eigen::Index> &centers, Eigen::Index peak_offset,
              Eigen::Index n) {
    if (static_cast<Eigen::Index>(centers.size()) != cycles.cols())
        throw ArgumentError("stitch: one center per column required");
    const Eigen::Index p = cycles.rows();
    Signal acc = Signal::Zero(n);
    Signal weight = Signal::Zero(n);
    const auto m = centers.size();
    for (std::size_t i = 0; i < m; ++i) {
        const Eigen::Index start = centers[i] - peak_offset;
        const Eigen::Index stop = start + p - 1;
        Eigen::Index left = 0, right = 0;
        if (i > 0) left = std::max<Eigen::Index>(0, centers[i - 1] - peak_offset + p - 1 - start + 1);
        if (i + 1 < m) right = std::max<Eigen::Index>(0, stop - (centers[i + 1] - peak_offset) + 1);
        for (Eigen::Index k = 0; k < p; ++k) {
            const Eigen::Index t = start + k;
            if (t < 0 || t >= n) continue;
            double wk = 1.0;
            if (left > 0) wk = std::min(wk, static_cast<double>(k + 1) / static_cast<double>(left + 1));
            if (right > 0) wk = std::min(wk, static_cast<double>(p - k) / static_cast<double>(right + 1));
            acc(t) += wk * cycles(k, static_cast<Eigen::Index>(i));
            weight(t) += wk;
        }
    }
    for (Eigen::Index t = 0; t < n; ++t)
        if (weight(t) > 0) acc(t) = weight(t) == 1.0 ? acc(t) : acc(t) / weight(t);
    return acc;
}

ComponentEstimate estimate_component(const Signal &z, const PeakList &peaks, double fs, const DenoiseConfig &config) {
    ComponentEstimate est;
    est.segments = segment(z, peaks, fs);
    const auto &S = est.segments.data;
    if (S.cols() < 8) {
        log::warn("decompose", "only " + std::to_string(S.cols()) + " cycles; using the median template");
        Signal tmpl(S.rows());
        std::vector<double> row(static_cast<std::size_t>(S.cols()));
        for (Eigen::Index k = 0; k < S.rows(); ++k) {
            for (Eigen::Index i = 0; i < S.cols(); ++i) row[static_cast<std::size_t>(i)] = S(k, i);
            tmpl(k) = median(row);
        }
        est.denoised = tmpl.replicate(1, S.cols());
        est.median_fallback = true;
    } else {
        auto res = optimal_shrink(S, config);
        est.denoised = std::move(res.denoised);
        est.kept_rank = res.kept_rank;
        est.sigma_hat = res.sigma_hat;
    }
    est.component = stitch(est.denoised, est.segments.centers, est.segments.peak_offset, z.size());
    return est;
}

SegmentMatrix nonlocal_median(const SegmentMatrix &segments, Eigen::Index k) {
    const Eigen::Index n = segments.cycles();
    if (k < 2) throw ArgumentError("nonlocal_median: k must be at least 2");
    if (k >= n) throw ArgumentError("nonlocal_median: k must be smaller than the number of cycles");
    if (static_cast<Eigen::Index>(segments.rr_ms.size()) != n)
        throw ArgumentError("nonlocal_median: one RR interval per cycle required");
    SegmentMatrix out = segments;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::vector<double> values(static_cast<std::size_t>(k + 1));
    for (Eigen::Index i = 0; i < n; ++i) {
        std::iota(order.begin(), order.end(), 0);
        const auto key = [&](Eigen::Index j) {
            return std::make_tuple(std::abs(segments.rr_ms[static_cast<std::size_t>(j)] -
                                            segments.rr_ms[static_cast<std::size_t>(i)]),
                                   std::abs(j - i), j);
        };
        std::erase(order, i);
        std::partial_sort(order.begin(), order.begin() + k, order.end(),
                          [&](Eigen::Index a, Eigen::Index b) { return key(a) < key(b); });
        for (Eigen::Index r = 0; r < segments.data.rows(); ++r) {
            values[0] = segments.data(r, i);
            for (Eigen::Index q = 0; q < k; ++q)
                values[static_cast<std::size_t>(q + 1)] = segments.data(r, order[static_cast<std::size_t>(q)]);
            out.data(r, i) = median(values);
        }
        order.resize(static_cast<std::size_t>(n));
    }
    return out;
}

ExactSplit exact_split(const Signal &z, const Signal &m) {
    if (z.size() != m.size()) throw ArgumentError("exact_split: length mismatch");
    const double top = std::max(z.size() ? z.cwiseAbs().maxCoeff() : 0.0, m.size() ? m.cwiseAbs().maxCoeff() : 0.0);
    ExactSplit out;
    if (!(top > 0)) {
        out.z = Signal::Zero(z.size());
        out.m = Signal::Zero(z.size());
        out.rest = Signal::Zero(z.size());
        return out;
    }
    const double step = std::ldexp(1.0, static_cast<int>(std::ceil(std::log2(top))) - 50);
    auto snap = [step](double v) { return std::round(v / step) * step; };
    out.z = z.unaryExpr(snap);
    out.m = m.unaryExpr(snap);
    out.rest = out.z - out.m;
    return out;
}

double beat_agreement(const PeakList &a, const PeakList &b, double window_ms) {
    if (a.size() < 2 || b.size() < 2) return 0.0;
    const auto match = match_peaks(a, b, window_ms);
    return 2.0 * static_cast<double>(match.tp()) / static_cast<double>(a.size() + b.size());
}

double bsqi(const Signal &z, double fs, BeatMode mode, const RpeakConfig &config) {
    if (static_cast<double>(z.size()) < 5.0 * fs) throw ArgumentError("bsqi: need at least 5 s of signal");
    PeakList a, b;
    try {
        a = detect_rpeaks(z, fs, mode, config);
    } catch (const DataError &) {
        return 0.0;
    }
    b = energy_detector(z, fs, mode);
    return beat_agreement(a, b, 50.0);
}

Eigen::Index select_best(const std::vector<double> &scores) {
    if (scores.empty()) throw ArgumentError("select_best: no candidates");
    Eigen::Index best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[static_cast<std::size_t>(best)]) best = static_cast<Eigen::Index>(i);
    return best;
}

void DecomposeConfig::validate(double fs) const {
    filter.validate(std::max(fs, static_cast<double>(working_fs)));
    denoise.validate();
    if (grid_steps < 1) throw ArgumentError("grid_steps must be positive");
    if (iterations < 0) throw ArgumentError("iterations must be non-negative");
    if (nonlocal_k != 0 && nonlocal_k < 2) throw ArgumentError("nonlocal_k must be 0 or at least 2");
    if (working_fs <= 0) throw ArgumentError("working_fs must be positive");
    if (rpeak.fusion_keep == 0) throw ArgumentError("fusion_keep must be positive");
}

namespace {

// Fused beats moved onto this mix's own detection when one lies within `tol` ms.
PeakList locate(const PeakList &fused, const PeakList &own, double tol) {
    std::vector<double> out;
    out.reserve(fused.size());
    const auto &t = own.times();
    for (double f : fused) {
        double pick = f;
        auto it = std::lower_bound(t.begin(), t.end(), f);
        double best = tol;
        if (it != t.end() && *it - f <= best) {
            best = *it - f;
            pick = *it;
        }
        if (it != t.begin() && f - *(it - 1) <= best) pick = *(it - 1);
        if (out.empty() || pick > out.back()) out.push_back(pick);
    }
    return PeakList(std::move(out));
}

PeakList detect_stage(const Signal &x, double fs, BeatMode mode, const RpeakConfig &cfg, const char *stage) {
    try {
        return detect_rpeaks(x, fs, mode, cfg);
    } catch (const DataError &e) {
        throw DataError(std::string("decompose: ") + stage + ": " + e.what());
    }
}

ComponentEstimate estimate_stage(const Signal &z, const PeakList &peaks, double fs, const DenoiseConfig &cfg,
                                 const char *stage) {
    try {
        return estimate_component(z, peaks, fs, cfg);
    } catch (const DataError &e) {
        throw DataError(std::string("decompose: ") + stage + ": " + e.what());
    }
}

} // namespace

DecompositionOutput decompose(const Record &input, const DecomposeConfig &config) {
    input.validate();
    config.validate(input.fs);
    const Record rec = input.fs < config.working_fs ? resample(input, config.working_fs) : input;
    const double fs = rec.fs;
    const Record pre = preprocess(rec, config.filter);

    DecompositionOutput out;
    out.fs = rec.fs;
    out.grid = CombinationGrid::standard(pre.channel_count(), config.grid_steps);
    const Eigen::MatrixXd Z = linear_combinations(pre, out.grid);
    const auto K = static_cast<std::size_t>(out.grid.size());

    out.maternal_per_theta.resize(K);
    parallel_for(K, config.jobs, [&](std::size_t k) {
        try {
            out.maternal_per_theta[k] =
                detect_rpeaks(Z.col(static_cast<Eigen::Index>(k)), fs, BeatMode::maternal, config.rpeak);
        } catch (const DataError &e) {
            log::warn("decompose", "maternal detection failed on theta " + std::to_string(k) + ": " + e.what());
        }
    });
    const auto keep = std::min<std::size_t>(config.rpeak.fusion_keep, K);
    const PeakList fused = fuse_peaks(out.maternal_per_theta, keep, config.rpeak.vote_window_ms,
                                      min_separation_ms(BeatMode::maternal));
    if (fused.size() < 10)
        throw DataError("decompose: maternal R-peak fusion produced " + std::to_string(fused.size()) +
                        " peaks (need at least 10)");

    std::vector<PeakList> located(K);
    std::vector<Signal> mecg(K), rough(K), zq(K);
    out.sqi.assign(K, 0.0);
    parallel_for(K, config.jobs, [&](std::size_t k) {
        const Signal z = Z.col(static_cast<Eigen::Index>(k));
        located[k] = locate(fused, out.maternal_per_theta[k], config.rpeak.vote_window_ms);
        const auto est = estimate_stage(z, located[k], fs, config.denoise, "maternal template");
        auto split = exact_split(z, est.component);
        zq[k] = std::move(split.z);
        mecg[k] = std::move(split.m);
        rough[k] = std::move(split.rest);
        out.sqi[k] = bsqi(rough[k], fs, BeatMode::fetal, config.rpeak);
    });

    const auto best = select_best(out.sqi);
    const auto b = static_cast<std::size_t>(best);
    out.theta_index = best;
    out.theta_star = out.grid.theta(best);
    out.maternal_peaks = located[b];
    const Signal z = Z.col(best);

    out.z_theta_star = zq[b];
    out.mecg = mecg[b];
    out.rfecg = rough[b];
    out.fetal_peaks = detect_stage(out.rfecg, fs, BeatMode::fetal, config.rpeak, "fetal R-peak detection");
    auto fetal = estimate_stage(out.rfecg, out.fetal_peaks, fs, config.denoise, "fetal template");

    for (int it = 0; it < config.iterations; ++it) {
        const Signal m = estimate_stage(Signal(z - fetal.component), out.maternal_peaks, fs, config.denoise,
                                        "maternal refinement")
                             .component;
        auto split = exact_split(z, m);
        out.z_theta_star = std::move(split.z);
        out.mecg = std::move(split.m);
        out.rfecg = std::move(split.rest);
        out.fetal_peaks = detect_stage(out.rfecg, fs, BeatMode::fetal, config.rpeak, "fetal R-peak detection");
        fetal = estimate_stage(out.rfecg, out.fetal_peaks, fs, config.denoise, "fetal template");
    }
    out.fecg = fetal.component;

    if (config.nonlocal_k > 0) {
        SegmentMatrix seg = fetal.segments;
        seg.data = fetal.denoised;
        if (seg.cycles() > config.nonlocal_k) {
            const auto nl = nonlocal_median(seg, config.nonlocal_k);
            out.fecg = stitch(nl.data, nl.centers, nl.peak_offset, out.rfecg.size());
        } else {
            log::warn("decompose", "too few fetal cycles for the nonlocal median; skipped");
        }
    }

    if (out.fetal_peaks.median_rr() > out.maternal_peaks.median_rr()) {
        log::warn("decompose", "fetal rhythm slower than maternal; swapping peak labels");
        std::swap(out.fetal_peaks, out.maternal_peaks);
        out.labels_swapped = true;
    }

    if ((out.z_theta_star - (out.mecg + out.rfecg)).cwiseAbs().maxCoeff() != 0.0)
        throw InvariantError("decompose", "mecg + rfecg does not reproduce the mixed signal");
    return out;
}

} // namespace fecg
