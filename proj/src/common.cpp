#include "fecg/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <mutex>
#include <numeric>
#include <thread>

namespace fecg {

ParseError::ParseError(const std::string &path, std::size_t line, const std::string &what)
    : DataError(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

InvariantError::InvariantError(std::string module, const std::string &what)
    : std::logic_error("[" + module + "] " + what), module_(std::move(module)) {}

PeakList::PeakList(std::vector<double> times_ms) : times_(std::move(times_ms)) {
    for (std::size_t i = 0; i < times_.size(); ++i) {
        if (!std::isfinite(times_[i]) || times_[i] < 0)
            throw ArgumentError("PeakList: timestamps must be finite and non-negative");
        if (i > 0 && !(times_[i] > times_[i - 1]))
            throw ArgumentError("PeakList: timestamps must be strictly increasing");
    }
}

PeakList PeakList::from_samples(std::span<const Eigen::Index> samples, double fs) {
    std::vector<double> t;
    t.reserve(samples.size());
    for (auto s : samples) t.push_back(static_cast<double>(s) * 1000.0 / fs);
    return PeakList(std::move(t));
}

std::vector<Eigen::Index> PeakList::to_samples(double fs) const {
    std::vector<Eigen::Index> out;
    out.reserve(times_.size());
    for (double t : times_) out.push_back(static_cast<Eigen::Index>(std::llround(t * fs / 1000.0)));
    return out;
}

std::vector<double> PeakList::rr_intervals() const {
    std::vector<double> rr;
    for (std::size_t i = 1; i < times_.size(); ++i) rr.push_back(times_[i] - times_[i - 1]);
    return rr;
}

double PeakList::median_rr() const {
    auto rr = rr_intervals();
    if (rr.empty()) return std::numeric_limits<double>::infinity();
    return median(std::move(rr));
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw ArgumentError("quantile of empty set");
    if (!(q >= 0.0 && q <= 1.0)) throw ArgumentError("quantile level must lie in [0,1]");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

double lower_median(std::vector<double> values) {
    if (values.empty()) throw ArgumentError("median of empty set");
    auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
    std::nth_element(values.begin(), mid, values.end());
    return *mid;
}

double mean(std::span<const double> values) {
    if (values.empty()) throw ArgumentError("mean of empty set");
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double stddev(std::span<const double> values) {
    if (values.size() < 2) return 0.0;
    const double m = mean(values);
    double acc = 0.0;
    for (double v : values) acc += (v - m) * (v - m);
    return std::sqrt(acc / static_cast<double>(values.size() - 1));
}

double rms(const Signal &x) {
    if (x.size() == 0) return 0.0;
    return std::sqrt(x.squaredNorm() / static_cast<double>(x.size()));
}

void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)> &fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        const auto count = std::min<std::size_t>(jobs, n);
        for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
    }
    if (first_error) std::rethrow_exception(first_error);
}

unsigned default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

namespace log {
namespace {
std::atomic<Level> g_level{Level::info};
std::mutex g_mutex;

const char *name(Level level) {
    switch (level) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
    }
    return "?";
}
} // namespace

void set_level(Level level) { g_level = level; }

void write(Level level, const std::string &module, const std::string &msg) {
    if (level < g_level.load()) return;
    std::lock_guard lock(g_mutex);
    std::cerr << "level=" << name(level) << " module=" << module << " msg=\"" << msg << "\"\n";
}
} // namespace log

} // namespace fecg
