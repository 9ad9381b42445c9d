#pragma once

// simulate -> decompose -> evaluate, driven by one JSON config.

#include "fecg/decompose.hpp"
#include "fecg/evaluate.hpp"
#include "fecg/simulate.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fecg {

inline constexpr const char *version = "0.1.0";

struct PipelineConfig {
    std::uint64_t seed = 7;
    std::filesystem::path out = "out";
    unsigned jobs = 0; // 0 = logical cores
    DecomposeConfig decompose;
    SimConfig sim;
    EvalConfig eval;
    std::size_t records = 10;
    std::size_t donors = 10;
    bool sweep = false; // r in {1/4, 1/6, 1/8} x SNR in {20, 10, 5} dB

    void validate() const;

    /// Unknown keys and wrongly typed values raise ArgumentError. Missing
    /// keys keep their current values, so flags can be layered on top.
    void merge_json(const nlohmann::json &j);

    /// Everything that determines the outputs. `jobs` and `out` are left out.
    nlohmann::ordered_json to_json() const;
};

PipelineConfig load_pipeline_config(const std::filesystem::path &path);

std::vector<std::pair<double, double>> sweep_conditions();

struct RecordDetail {
    Eigen::Index theta_index = -1;
    std::vector<double> theta_star;
    double maternal_f1 = 0;
    double identity_residual = 0; // max |z - (mecg + rfecg)|
    std::string error;
};

struct ConditionResult {
    double r = 0;
    double snr_db = 0;
    EvalReport report;
    std::map<std::string, RecordDetail> details;
};

struct PipelineResult {
    std::vector<ConditionResult> conditions;
    nlohmann::ordered_json report;
};

/// Truth fetal signal seen by a mix: sum_j theta_j fecg_j, run through the
/// same preprocessing as the recording.
Signal truth_fetal_signal(const Eigen::MatrixXd &fecg, const Eigen::VectorXd &theta, int fs, const FilterSpec &spec);

/// With write_outputs, writes report.json, boxplot.csv and run_meta.json under config.out.
PipelineResult run_pipeline(const PipelineConfig &config, bool write_outputs = true);

void write_json(const nlohmann::ordered_json &j, const std::filesystem::path &path);

} // namespace fecg
