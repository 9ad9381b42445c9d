#include "fecg/rpeak.hpp"

#include "fecg/preprocess.hpp"
#include "fecg/signal_io.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>

namespace fecg {

double min_separation_ms(BeatMode mode) { return mode == BeatMode::maternal ? 250.0 : 200.0; }

double IhrCurve::rate_at(double t) const {
    if (times.size() == 0) throw ArgumentError("empty IHR curve");
    if (t <= times(0)) return rate(0);
    const auto n = times.size();
    if (t >= times(n - 1)) return rate(n - 1);
    const auto *begin = times.data();
    const auto *it = std::upper_bound(begin, begin + n, t);
    const auto hi = static_cast<Eigen::Index>(it - begin);
    const auto lo = hi - 1;
    const double a = (t - times(lo)) / (times(hi) - times(lo));
    return rate(lo) + a * (rate(hi) - rate(lo));
}

namespace {

void check_params(const DeshapeParams &p, double fs) {
    if (!(p.gamma > 0 && p.gamma <= 1)) throw ArgumentError("deshape: gamma must lie in (0, 1]");
    if (!(p.f_lo > 0 && p.f_hi > p.f_lo && p.f_hi < fs / 2 && p.f_hi < p.analysis_fs / 2))
        throw ArgumentError("deshape: band must lie inside (0, fs/2)");
    if (!(p.window_s > 0 && p.hop_s > 0)) throw ArgumentError("deshape: window and hop must be positive");
    if (p.nfft % 2 != 0) throw ArgumentError("deshape: nfft must be even");
    if (p.nfft < static_cast<int>(std::lround(p.window_s * p.analysis_fs)))
        throw ArgumentError("deshape: nfft shorter than the window");
}

int integer_rate(double fs) {
    const auto r = std::lround(fs);
    if (r <= 0 || std::abs(fs - static_cast<double>(r)) > 1e-9)
        throw ArgumentError("sampling rate must be a positive integer");
    return static_cast<int>(r);
}

struct Spectra {
    Eigen::VectorXd times;
    Eigen::VectorXd freqs;
    Eigen::MatrixXd plain;
    Eigen::MatrixXd deshaped;
};

double lerp_at(const std::vector<double> &v, double q) {
    const auto q0 = static_cast<std::size_t>(std::floor(q));
    if (q0 + 1 >= v.size()) return 0.0;
    const double t = q - static_cast<double>(q0);
    return (1.0 - t) * v[q0] + t * v[q0 + 1];
}

Spectra compute_spectra(const Signal &x, double fs, const DeshapeParams &p, bool want_deshape) {
    check_params(p, fs);
    const int afs = integer_rate(p.analysis_fs);
    const Signal a = resample(x, integer_rate(fs), afs);
    const auto win = static_cast<Eigen::Index>(std::lround(p.window_s * afs));
    if (x.size() < static_cast<Eigen::Index>(std::lround(p.window_s * fs)))
        throw ArgumentError("deshape: signal shorter than the analysis window");
    const auto hop = std::max<Eigen::Index>(1, std::lround(p.hop_s * afs));
    const Eigen::Index n_frames = a.size() / hop + 1;
    const int nfft = p.nfft;

    Eigen::VectorXd hann(win);
    for (Eigen::Index k = 0; k < win; ++k)
        hann(k) = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(k) / static_cast<double>(win));

    const double df = static_cast<double>(afs) / nfft;
    const auto k_lo = static_cast<int>(std::ceil(p.f_lo / df));
    const auto k_hi = static_cast<int>(std::floor(p.f_hi / df));
    if (k_hi < k_lo) throw ArgumentError("deshape: band contains no frequency bins");
    const int n_bins = k_hi - k_lo + 1;

    Spectra out;
    out.freqs.resize(n_bins);
    for (int k = 0; k < n_bins; ++k) out.freqs(k) = (k_lo + k) * df;
    out.times.resize(n_frames);
    out.plain.resize(n_bins, n_frames);
    if (want_deshape) out.deshaped.resize(n_bins, n_frames);

    // inverted quefrency: bin k covers the cepstrum lags afs/(f + df/2) .. afs/(f - df/2)
    std::vector<std::size_t> q_first(static_cast<std::size_t>(n_bins)), q_last(static_cast<std::size_t>(n_bins));
    for (int k = 0; k < n_bins; ++k) {
        const double f_bin = out.freqs(k);
        q_first[k] = static_cast<std::size_t>(std::ceil(afs / (f_bin + 0.5 * df)));
        q_last[k] = f_bin > 0.5 * df ? static_cast<std::size_t>(std::floor(afs / (f_bin - 0.5 * df))) : 0;
    }

    Eigen::FFT<double> fft;
    fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    std::vector<double> frame(static_cast<std::size_t>(nfft));
    std::vector<std::complex<double>> spec;
    std::vector<std::complex<double>> powered(static_cast<std::size_t>(nfft / 2 + 1));
    std::vector<double> cep;

    for (Eigen::Index f = 0; f < n_frames; ++f) {
        const Eigen::Index center = f * hop;
        out.times(f) = static_cast<double>(center) / afs;
        std::fill(frame.begin(), frame.end(), 0.0);
        for (Eigen::Index k = 0; k < win; ++k) {
            const Eigen::Index i = center - win / 2 + k;
            if (i >= 0 && i < a.size()) frame[static_cast<std::size_t>(k)] = a(i) * hann(k);
        }
        fft.fwd(spec, frame);
        for (int k = 0; k < n_bins; ++k) out.plain(k, f) = std::abs(spec[static_cast<std::size_t>(k_lo + k)]);
        if (!want_deshape) continue;

        for (std::size_t k = 0; k < powered.size(); ++k) powered[k] = std::pow(std::norm(spec[k]), 0.5 * p.gamma);
        fft.inv(cep, powered, nfft);
        for (int k = 0; k < n_bins; ++k) {
            double c = lerp_at(cep, static_cast<double>(afs) / out.freqs(k));
            for (std::size_t q = q_first[k]; q <= q_last[k] && q < cep.size(); ++q) c = std::max(c, cep[q]);
            out.deshaped(k, f) = out.plain(k, f) * std::max(c, 0.0);
        }
    }
    return out;
}

} // namespace

TfPlane stft_magnitude(const Signal &x, double fs, const DeshapeParams &params) {
    auto s = compute_spectra(x, fs, params, false);
    return TfPlane{std::move(s.times), std::move(s.freqs), std::move(s.plain)};
}

TfPlane deshape_spectrogram(const Signal &x, double fs, const DeshapeParams &params) {
    auto s = compute_spectra(x, fs, params, true);
    return TfPlane{std::move(s.times), std::move(s.freqs), std::move(s.deshaped)};
}

IhrCurve extract_ihr(const TfPlane &plane, double f_lo, double f_hi, double penalty_per_hz) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index k = 0; k < plane.freqs.size(); ++k)
        if (plane.freqs(k) >= f_lo && plane.freqs(k) <= f_hi) rows.push_back(k);
    if (rows.empty()) throw ArgumentError("extract_ihr: band contains no plane frequencies");
    const auto n_f = static_cast<Eigen::Index>(rows.size());
    const auto n_t = plane.values.cols();
    if (n_t == 0) throw ArgumentError("extract_ihr: empty plane");

    Eigen::MatrixXd score(n_f, n_t);
    for (Eigen::Index t = 0; t < n_t; ++t) {
        double peak = 0.0;
        for (Eigen::Index k = 0; k < n_f; ++k) peak = std::max(peak, plane.values(rows[k], t));
        for (Eigen::Index k = 0; k < n_f; ++k) score(k, t) = peak > 0 ? plane.values(rows[k], t) / peak : 0.0;
    }

    Eigen::MatrixXd acc(n_f, n_t);
    Eigen::MatrixXi from(n_f, n_t);
    acc.col(0) = score.col(0);
    from.col(0).setConstant(-1);
    for (Eigen::Index t = 1; t < n_t; ++t) {
        for (Eigen::Index k = 0; k < n_f; ++k) {
            double best = -std::numeric_limits<double>::infinity();
            int arg = 0;
            for (Eigen::Index j = 0; j < n_f; ++j) {
                const double v =
                    acc(j, t - 1) - penalty_per_hz * std::abs(plane.freqs(rows[k]) - plane.freqs(rows[j]));
                if (v > best) {
                    best = v;
                    arg = static_cast<int>(j);
                }
            }
            acc(k, t) = best + score(k, t);
            from(k, t) = arg;
        }
    }
    Eigen::Index k_end = 0;
    acc.col(n_t - 1).maxCoeff(&k_end);

    IhrCurve curve;
    curve.times = plane.times;
    curve.rate.resize(n_t);
    Eigen::Index k = k_end;
    for (Eigen::Index t = n_t - 1; t >= 0; --t) {
        curve.rate(t) = plane.freqs(rows[k]);
        if (t > 0) k = from(k, t);
    }
    return curve;
}

namespace {

Signal qrs_band(const Signal &x, double fs) {
    const double hi = std::min(40.0, 0.45 * fs);
    return filtfilt(butterworth_lowpass_sos(2, hi, fs), filtfilt(butterworth_highpass_sos(2, 8.0, fs), x));
}

Signal moving_average(const Signal &x, Eigen::Index width) {
    const Eigen::Index n = x.size();
    if (width <= 1) return x;
    std::vector<double> cum(static_cast<std::size_t>(n + 1), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) cum[static_cast<std::size_t>(i + 1)] = cum[static_cast<std::size_t>(i)] + x(i);
    const Eigen::Index half = width / 2;
    Signal out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, i - half);
        const Eigen::Index hi = std::min<Eigen::Index>(n, i + half + 1);
        out(i) = (cum[static_cast<std::size_t>(hi)] - cum[static_cast<std::size_t>(lo)]) / static_cast<double>(hi - lo);
    }
    return out;
}

std::vector<Eigen::Index> local_maxima(const Signal &x, Eigen::Index half) {
    std::vector<Eigen::Index> out;
    const Eigen::Index n = x.size();
    for (Eigen::Index i = 0; i < n; ++i) {
        const double v = x(i);
        if (!(v > 0)) continue;
        bool is_max = true;
        for (Eigen::Index j = std::max<Eigen::Index>(0, i - half); j <= std::min(n - 1, i + half) && is_max; ++j) {
            if (j < i && x(j) >= v) is_max = false;
            if (j > i && x(j) > v) is_max = false;
        }
        if (is_max) out.push_back(i);
    }
    return out;
}

int dominant_polarity(const Signal &x, const std::vector<Eigen::Index> &at, Eigen::Index radius) {
    double acc = 0.0;
    for (auto c : at) {
        double best = 0.0;
        for (Eigen::Index i = std::max<Eigen::Index>(0, c - radius); i <= std::min(x.size() - 1, c + radius); ++i)
            if (std::abs(x(i)) > std::abs(best)) best = x(i);
        acc += best > 0 ? 1.0 : (best < 0 ? -1.0 : 0.0);
    }
    return acc >= 0 ? 1 : -1;
}

std::vector<Eigen::Index> refine(const Signal &x, const std::vector<Eigen::Index> &at, Eigen::Index radius,
                                 int polarity) {
    std::vector<Eigen::Index> out;
    out.reserve(at.size());
    for (auto c : at) {
        Eigen::Index arg = c;
        double best = -std::numeric_limits<double>::infinity();
        for (Eigen::Index i = std::max<Eigen::Index>(0, c - radius); i <= std::min(x.size() - 1, c + radius); ++i) {
            const double v = polarity * x(i);
            if (v > best) {
                best = v;
                arg = i;
            }
        }
        out.push_back(arg);
    }
    return out;
}

// Drops the weaker of any two peaks closer than `min_sep` samples.
std::vector<Eigen::Index> enforce_separation(const Signal &x, std::vector<Eigen::Index> at, Eigen::Index min_sep,
                                             int polarity) {
    std::vector<Eigen::Index> out;
    for (auto c : at) {
        if (!out.empty() && c - out.back() < min_sep) {
            if (polarity * x(c) > polarity * x(out.back())) out.back() = c;
            continue;
        }
        out.push_back(c);
    }
    return out;
}

PeakList to_peaklist(const std::vector<Eigen::Index> &samples, double fs) {
    return PeakList::from_samples(std::span<const Eigen::Index>(samples), fs);
}

} // namespace

PeakList beat_track(const Signal &x, double fs, const IhrCurve &ihr, BeatMode mode, const RpeakConfig &config) {
    const Eigen::Index n = x.size();
    const double duration = static_cast<double>(n) / fs;
    if (ihr.times.size() == 0) throw ArgumentError("beat_track: empty IHR curve");

    double expected_beats = 0.0;
    for (Eigen::Index i = 0; i + 1 < ihr.times.size(); ++i)
        expected_beats += ihr.rate(i) * (ihr.times(i + 1) - ihr.times(i));
    if (ihr.times.size() > 0) expected_beats += ihr.rate(ihr.times.size() - 1) * std::max(0.0, duration - ihr.times(ihr.times.size() - 1));
    if (expected_beats < 2.0) throw TooShortError("beat_track: heart rate implies fewer than two beats");

    const bool maternal = mode == BeatMode::maternal;
    const Signal band = qrs_band(x, fs);
    const Signal env = moving_average(band.cwiseAbs2(), static_cast<Eigen::Index>(std::lround((maternal ? 0.05 : 0.03) * fs)));
    const auto half = static_cast<Eigen::Index>(std::lround((maternal ? 0.04 : 0.03) * fs));
    const auto cand = local_maxima(env, half);
    if (cand.size() < 2) return PeakList();

    // Envelope scores normalized by the typical height of the K tallest maxima.
    std::vector<double> heights;
    heights.reserve(cand.size());
    for (auto c : cand) heights.push_back(env(c));
    std::vector<double> sorted = heights;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const auto k_top = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(expected_beats)), 1, sorted.size());
    const double ref = lower_median(std::vector<double>(sorted.begin(), sorted.begin() + static_cast<long>(k_top)));
    if (!(ref > 0)) return PeakList();

    const double radius = config.search_radius_ms / 1000.0;
    const double min_sep = min_separation_ms(mode) / 1000.0;
    const double alpha = config.rhythm_weight;
    const double kappa = config.missed_beat_cost;

    const std::size_t m = cand.size();
    std::vector<double> t(m), s(m), best(m);
    std::vector<long> prev(m, -1);
    for (std::size_t i = 0; i < m; ++i) {
        t[i] = static_cast<double>(cand[i]) / fs;
        s[i] = std::min(heights[i] / ref, 2.0);
    }
    auto missed = [&](double gap, double period) {
        return std::max(0.0, std::ceil((gap - radius) / period) - 1.0);
    };
    for (std::size_t i = 0; i < m; ++i) {
        const double period_here = 1.0 / ihr.rate_at(t[i]);
        best[i] = s[i] - kappa * missed(t[i], period_here);
        for (std::size_t j = i; j-- > 0;) {
            const double gap = t[i] - t[j];
            if (gap < min_sep) continue;
            const double period = 1.0 / ihr.rate_at(0.5 * (t[i] + t[j]));
            if (gap > 3.0 * period + radius) break;
            const double k = std::max(1.0, std::round(gap / period));
            if (std::abs(gap - k * period) > radius) continue;
            const double dev = std::log(gap / (k * period));
            const double v = best[j] + s[i] - alpha * dev * dev - kappa * (k - 1.0);
            if (v > best[i]) {
                best[i] = v;
                prev[i] = static_cast<long>(j);
            }
        }
    }
    double final_best = -std::numeric_limits<double>::infinity();
    long last = -1;
    for (std::size_t i = 0; i < m; ++i) {
        const double v = best[i] - kappa * missed(duration - t[i], 1.0 / ihr.rate_at(t[i]));
        if (v > final_best) {
            final_best = v;
            last = static_cast<long>(i);
        }
    }
    std::vector<Eigen::Index> beats;
    for (long i = last; i >= 0; i = prev[static_cast<std::size_t>(i)]) beats.push_back(cand[static_cast<std::size_t>(i)]);
    std::reverse(beats.begin(), beats.end());

    const auto refine_radius = static_cast<Eigen::Index>(std::lround((maternal ? 0.03 : 0.02) * fs));
    const int polarity = dominant_polarity(x, beats, refine_radius);
    auto refined = refine(x, beats, refine_radius, polarity);
    refined = enforce_separation(x, std::move(refined), static_cast<Eigen::Index>(std::ceil(min_sep * fs)), polarity);
    return to_peaklist(refined, fs);
}

PeakList detect_rpeaks(const Signal &x, double fs, BeatMode mode, const RpeakConfig &config) {
    const auto &p = config.params(mode);
    const auto plane = deshape_spectrogram(x, fs, p);
    const auto ihr = extract_ihr(plane, p.f_lo, p.f_hi, config.ihr_penalty_per_hz);
    return beat_track(x, fs, ihr, mode, config);
}

PeakList energy_detector(const Signal &x, double fs, BeatMode mode) {
    const bool maternal = mode == BeatMode::maternal;
    const Eigen::Index n = x.size();
    if (n < 3) return PeakList();
    const Signal band = qrs_band(x, fs);
    Signal deriv = Signal::Zero(n);
    for (Eigen::Index i = 1; i + 1 < n; ++i) deriv(i) = 0.5 * (band(i + 1) - band(i - 1));
    const Signal integrated =
        moving_average(deriv.cwiseAbs2(), static_cast<Eigen::Index>(std::lround((maternal ? 0.1 : 0.05) * fs)));

    const auto block = static_cast<Eigen::Index>(std::lround(5.0 * fs));
    std::vector<double> block_max;
    for (Eigen::Index b = 0; b < n; b += block) block_max.push_back(integrated.segment(b, std::min(block, n - b)).maxCoeff());
    const double threshold = 0.3 * median(block_max);
    if (!(threshold > 0)) return PeakList();

    const auto min_sep = static_cast<Eigen::Index>(std::ceil(min_separation_ms(mode) * fs / 1000.0));
    std::vector<Eigen::Index> found;
    Eigen::Index i = 0;
    while (i < n) {
        if (integrated(i) <= threshold) {
            ++i;
            continue;
        }
        Eigen::Index arg = i;
        while (i < n && integrated(i) > threshold) {
            if (integrated(i) > integrated(arg)) arg = i;
            ++i;
        }
        if (!found.empty() && arg - found.back() < min_sep) {
            if (integrated(arg) > integrated(found.back())) found.back() = arg;
        } else {
            found.push_back(arg);
        }
    }
    const auto radius = static_cast<Eigen::Index>(std::lround((maternal ? 0.04 : 0.025) * fs));
    const int polarity = dominant_polarity(x, found, radius);
    auto refined = refine(x, found, radius, polarity);
    refined = enforce_separation(x, std::move(refined), min_sep, polarity);
    return to_peaklist(refined, fs);
}

PeakList fuse_peaks(std::span<const PeakList> lists, std::size_t keep, double window_ms, double min_separation) {
    if (lists.empty()) throw ArgumentError("fuse_peaks: no peak lists");
    if (keep == 0) throw ArgumentError("fuse_peaks: keep must be positive");
    if (keep > lists.size()) {
        log::warn("rpeak", "fuse_peaks: keep=" + std::to_string(keep) + " exceeds list count " +
                               std::to_string(lists.size()) + "; clamping");
        keep = lists.size();
    }

    // Rank lists by RR variability; ties broken on content so the result
    // does not depend on input order.
    std::vector<std::size_t> order(lists.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> spread(lists.size());
    for (std::size_t i = 0; i < lists.size(); ++i) {
        const auto rr = lists[i].rr_intervals();
        spread[i] = rr.size() >= 2 ? stddev(rr) : std::numeric_limits<double>::infinity();
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (spread[a] != spread[b]) return spread[a] < spread[b];
        return lists[a].times() < lists[b].times();
    });
    order.resize(keep);

    struct Entry {
        double time;
        std::size_t rank;
    };
    std::vector<Entry> all;
    for (std::size_t r = 0; r < keep; ++r)
        for (double t : lists[order[r]]) all.push_back({t, r});
    std::sort(all.begin(), all.end(), [](const Entry &a, const Entry &b) {
        return a.time != b.time ? a.time < b.time : a.rank < b.rank;
    });

    const auto needed = (keep + 1) / 2;
    std::vector<bool> used(all.size(), false);
    std::vector<double> times;
    std::vector<std::size_t> votes;
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (used[i]) continue;
        std::vector<bool> seen(keep, false);
        std::vector<std::size_t> members;
        for (std::size_t j = i; j < all.size() && all[j].time - all[i].time <= window_ms; ++j) {
            if (used[j] || seen[all[j].rank]) continue;
            seen[all[j].rank] = true;
            members.push_back(j);
        }
        if (members.size() < needed) {
            used[i] = true;
            continue;
        }
        std::vector<double> contributing;
        for (auto j : members) {
            used[j] = true;
            contributing.push_back(all[j].time);
        }
        const double consensus = median(contributing);
        if (!times.empty() && consensus - times.back() < min_separation) {
            if (members.size() > votes.back()) {
                times.back() = consensus;
                votes.back() = members.size();
            }
            continue;
        }
        times.push_back(consensus);
        votes.push_back(members.size());
    }
    return PeakList(std::move(times));
}

} // namespace fecg
