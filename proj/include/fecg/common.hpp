#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fecg {

using Signal = Eigen::VectorXd;

/// Bad caller-supplied argument (out-of-range parameter, size mismatch).
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Input data could not be used: malformed files, too few beats, failed stage.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
public:
    ParseError(const std::string &path, std::size_t line, const std::string &what);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Not enough cycles/beats to run a stage.
class TooShortError : public DataError {
public:
    using DataError::DataError;
};

/// A module broke one of its own postconditions.
class InvariantError : public std::logic_error {
public:
    InvariantError(std::string module, const std::string &what);
    const std::string &module() const { return module_; }

private:
    std::string module_;
};

/// Strictly increasing, non-negative beat timestamps in milliseconds.
class PeakList {
public:
    PeakList() = default;
    explicit PeakList(std::vector<double> times_ms);

    static PeakList from_samples(std::span<const Eigen::Index> samples, double fs);

    const std::vector<double> &times() const { return times_; }
    std::size_t size() const { return times_.size(); }
    bool empty() const { return times_.empty(); }
    double operator[](std::size_t i) const { return times_[i]; }
    auto begin() const { return times_.begin(); }
    auto end() const { return times_.end(); }

    std::vector<Eigen::Index> to_samples(double fs) const;
    std::vector<double> rr_intervals() const;
    double median_rr() const;

    friend bool operator==(const PeakList &, const PeakList &) = default;

private:
    std::vector<double> times_;
};

// Order statistics. `quantile` is linear interpolation between order
// statistics (h = (n-1) q); `lower_median` picks element floor((n-1)/2).
double quantile(std::vector<double> values, double q);
double median(std::vector<double> values);
double lower_median(std::vector<double> values);
double mean(std::span<const double> values);
double stddev(std::span<const double> values);

double rms(const Signal &x);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be written
/// to pre-sized, index-addressed storage so output order never depends on jobs.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)> &fn);

unsigned default_jobs();

namespace log {
enum class Level { debug, info, warn, error };
void set_level(Level level);
void write(Level level, const std::string &module, const std::string &msg);
inline void info(const std::string &module, const std::string &msg) { write(Level::info, module, msg); }
inline void warn(const std::string &module, const std::string &msg) { write(Level::warn, module, msg); }
} // namespace log

} // namespace fecg
