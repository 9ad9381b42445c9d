#pragma once

#include "fecg/common.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fecg {

/// Annotation kinds used across the project. Donor records may also carry a
/// plain "r" list.
namespace ann {
inline constexpr const char *maternal_r = "maternal_r";
inline constexpr const char *fetal_r = "fetal_r";
inline constexpr const char *fetal_p = "fetal_p";
inline constexpr const char *fetal_t = "fetal_t";
inline constexpr const char *r = "r";
} // namespace ann

using Annotations = std::map<std::string, PeakList>;

/// Multi-channel, uniformly sampled recording. Samples are stored one channel
/// per column (N x J), values in mV.
struct Record {
    std::string name;
    int fs = 0;
    std::vector<std::string> channel_names;
    Eigen::MatrixXd samples;
    Annotations annotations;

    Eigen::Index length() const { return samples.rows(); }
    Eigen::Index channel_count() const { return samples.cols(); }
    double duration_s() const { return static_cast<double>(length()) / fs; }
    Signal channel(Eigen::Index j) const { return samples.col(j); }

    /// Throws ArgumentError if any record invariant is violated.
    void validate() const;
};

enum class RecordFormat { csv, wfdb };

/// Loads `path` (a `.csv` file or a WFDB header `.hea`). Annotations are read
/// from a `<stem>.ann.json` sidecar when present, and for WFDB records also
/// from a `<stem>.fqrs.txt` list of fetal R sample indices.
Record load_record(const std::filesystem::path &path, RecordFormat format);
Record load_record(const std::filesystem::path &path);

/// Writes `<dir>/<name>.csv` and, if the record has annotations,
/// `<dir>/<name>.ann.json`. Returns the csv path.
std::filesystem::path save_record(const Record &record, const std::filesystem::path &dir);

Annotations load_annotations(const std::filesystem::path &path);
void save_annotations(const Annotations &annotations, const std::filesystem::path &path);

/// Writes a plain numeric matrix as CSV (no header), shortest round-trip form.
void save_matrix_csv(const Eigen::MatrixXd &m, const std::filesystem::path &path,
                     const std::vector<std::string> &header = {});
Eigen::MatrixXd load_matrix_csv(const std::filesystem::path &path, bool has_header = false);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// Windowed-sinc (Kaiser) polyphase resampling from fs to target_fs.
Signal resample(const Signal &x, int fs, int target_fs);

/// Resamples every channel; annotations (ms) are carried over unchanged.
Record resample(const Record &record, int target_fs);

} // namespace fecg
