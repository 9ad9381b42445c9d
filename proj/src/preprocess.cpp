#include "fecg/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace fecg {

void FilterSpec::validate(double fs) const {
    if (lowpass_order < 1) throw ArgumentError("lowpass order must be >= 1");
    if (!(lowpass_cutoff > 0 && lowpass_cutoff < fs / 2))
        throw ArgumentError("lowpass cutoff must lie in (0, fs/2)");
    if (!(notch_center > 0 && notch_center < fs / 2)) throw ArgumentError("notch center must lie in (0, fs/2)");
    if (!(notch_q > 0)) throw ArgumentError("notch Q must be positive");
    if (!(median_short_ms > 0 && median_short_ms < median_long_ms))
        throw ArgumentError("median windows must satisfy 0 < short < long");
}

std::complex<double> Biquad::response(double f, double fs) const {
    const auto z1 = std::polar(1.0, -2.0 * M_PI * f / fs);
    const auto z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
}

namespace {

using cplx = std::complex<double>;

cplx bilinear(cplx s, double fs) { return (2.0 * fs + s) / (2.0 * fs - s); }

// z-plane poles of an order-n Butterworth, lowpass or highpass, one per
// conjugate pair (upper half plane) plus the real pole for odd n.
std::vector<cplx> butterworth_z_poles(int order, double cutoff, double fs, bool highpass) {
    const double warped = 2.0 * fs * std::tan(M_PI * cutoff / fs);
    std::vector<cplx> poles;
    for (int k = 0; k < order; ++k) {
        const cplx proto = std::polar(1.0, M_PI * (2.0 * k + order + 1) / (2.0 * order));
        if (proto.imag() < -1e-12) continue;
        const cplx s = highpass ? warped / proto : warped * proto;
        poles.push_back(bilinear(s, fs));
    }
    return poles;
}

Sos butterworth_sos(int order, double cutoff, double fs, bool highpass) {
    if (order < 1) throw ArgumentError("filter order must be >= 1");
    if (!(cutoff > 0 && cutoff < fs / 2)) throw ArgumentError("cutoff must lie in (0, fs/2)");
    Sos sos;
    const double zero = highpass ? 1.0 : -1.0;
    for (const auto &p : butterworth_z_poles(order, cutoff, fs, highpass)) {
        Biquad bq;
        if (std::abs(p.imag()) < 1e-12) {
            bq.a1 = -p.real();
            bq.b0 = 1.0;
            bq.b1 = -zero;
        } else {
            bq.a1 = -2.0 * p.real();
            bq.a2 = std::norm(p);
            bq.b0 = 1.0;
            bq.b1 = -2.0 * zero;
            bq.b2 = 1.0;
        }
        // unit gain at DC (lowpass) or Nyquist (highpass)
        const double g = std::abs(bq.response(highpass ? fs / 2 : 0.0, fs));
        bq.b0 /= g;
        bq.b1 /= g;
        bq.b2 /= g;
        sos.push_back(bq);
    }
    return sos;
}

} // namespace

Sos butterworth_lowpass_sos(int order, double cutoff, double fs) { return butterworth_sos(order, cutoff, fs, false); }

Sos butterworth_highpass_sos(int order, double cutoff, double fs) { return butterworth_sos(order, cutoff, fs, true); }

Sos notch_sos(double center, double q, double fs) {
    if (!(center > 0 && center < fs / 2)) throw ArgumentError("notch center must lie in (0, fs/2)");
    if (!(q > 0)) throw ArgumentError("notch Q must be positive");
    const double w0 = 2.0 * M_PI * center / fs;
    const double bw = w0 / q;
    const double g = 1.0 / (1.0 + std::tan(bw / 2.0));
    Biquad bq;
    bq.b0 = g;
    bq.b1 = -2.0 * g * std::cos(w0);
    bq.b2 = g;
    bq.a1 = -2.0 * g * std::cos(w0);
    bq.a2 = 2.0 * g - 1.0;
    return {bq};
}

namespace {

void run_sections(const Sos &sos, Eigen::Ref<Signal> x, bool steady_start) {
    double level = x.size() > 0 ? x(0) : 0.0;
    for (const auto &s : sos) {
        double z1 = 0, z2 = 0;
        if (steady_start) {
            const double gain = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
            const double y = gain * level;
            z2 = s.b2 * level - s.a2 * y;
            z1 = s.b1 * level - s.a1 * y + z2;
            level = y;
        }
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double in = x(i);
            const double out = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * out + z2;
            z2 = s.b2 * in - s.a2 * out;
            x(i) = out;
        }
    }
}

} // namespace

Signal sosfilt(const Sos &sos, const Signal &x) {
    Signal y = x;
    run_sections(sos, y, false);
    return y;
}

Signal filtfilt(const Sos &sos, const Signal &x) {
    const Eigen::Index n = x.size();
    if (n < 2) return x;
    const Eigen::Index min_pad = 3 * (2 * static_cast<Eigen::Index>(sos.size()) + 1);
    const Eigen::Index pad = std::min<Eigen::Index>(n - 1, std::max<Eigen::Index>(min_pad, 1000));
    Signal ext(n + 2 * pad);
    for (Eigen::Index k = 0; k < pad; ++k) {
        ext(k) = 2.0 * x(0) - x(pad - k);
        ext(n + pad + k) = 2.0 * x(n - 1) - x(n - 2 - k);
    }
    ext.segment(pad, n) = x;
    run_sections(sos, ext, true);
    ext.reverseInPlace();
    run_sections(sos, ext, true);
    ext.reverseInPlace();
    return ext.segment(pad, n);
}

Signal butterworth_lowpass(const Signal &x, double fs, const FilterSpec &spec) {
    if (x.size() <= 3 * spec.lowpass_order) throw ArgumentError("lowpass: signal too short for filter order");
    return filtfilt(butterworth_lowpass_sos(spec.lowpass_order, spec.lowpass_cutoff, fs), x);
}

Signal notch_filter(const Signal &x, double fs, const FilterSpec &spec) {
    if (x.size() <= 12) throw ArgumentError("notch: signal too short");
    return filtfilt(notch_sos(spec.notch_center, spec.notch_q, fs), x);
}

Eigen::Index median_window_samples(double ms, double fs) {
    auto w = static_cast<Eigen::Index>(std::llround(ms * fs / 1000.0));
    if (w < 1) w = 1;
    if (w % 2 == 0) ++w;
    return w;
}

Signal running_median(const Signal &x, Eigen::Index window) {
    const Eigen::Index n = x.size();
    if (window < 1 || window % 2 == 0) throw ArgumentError("running median window must be odd and positive");
    if (window == 1) return x;
    const Eigen::Index half = window / 2;
    if (n <= half) throw ArgumentError("running median: signal shorter than half window");
    auto at = [&](Eigen::Index k) {
        if (k < 0) k = -k;
        if (k >= n) k = 2 * (n - 1) - k;
        return x(k);
    };
    std::vector<double> sorted;
    sorted.reserve(static_cast<std::size_t>(window));
    for (Eigen::Index k = -half; k <= half; ++k) sorted.push_back(at(k));
    std::sort(sorted.begin(), sorted.end());
    Signal out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out(i) = sorted[static_cast<std::size_t>(half)];
        if (i + 1 == n) break;
        const double leaving = at(i - half);
        const double entering = at(i + half + 1);
        sorted.erase(std::lower_bound(sorted.begin(), sorted.end(), leaving));
        sorted.insert(std::upper_bound(sorted.begin(), sorted.end(), entering), entering);
    }
    return out;
}

Signal median_detrend(const Signal &x, double fs, const FilterSpec &spec) {
    const auto short_w = median_window_samples(spec.median_short_ms, fs);
    const auto long_w = median_window_samples(spec.median_long_ms, fs);
    if (x.size() <= long_w) throw ArgumentError("median detrend: record shorter than the long window");
    return x - running_median(running_median(x, short_w), long_w);
}

Signal preprocess(const Signal &x, double fs, const FilterSpec &spec) {
    spec.validate(fs);
    return median_detrend(notch_filter(butterworth_lowpass(x, fs, spec), fs, spec), fs, spec);
}

Record preprocess(const Record &record, const FilterSpec &spec) {
    Record out = record;
    for (Eigen::Index j = 0; j < record.channel_count(); ++j)
        out.samples.col(j) = preprocess(Signal(record.samples.col(j)), record.fs, spec);
    return out;
}

} // namespace fecg
