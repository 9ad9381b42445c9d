#pragma once

// Semi-real abdominal recordings: a maternal vectorcardiogram projected onto
// lead directions plus a time-compressed fetal ECG and white noise.

#include "fecg/common.hpp"
#include "fecg/signal_io.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace fecg {

struct SimConfig {
    /// (theta_xy, theta_z) per output channel.
    std::vector<std::pair<double, double>> angles{{M_PI / 4, M_PI / 4}, {M_PI / 5, 3 * M_PI / 10}};
    double r = 0.25;
    double snr_db = 20.0; // +inf disables noise
    std::uint64_t seed = 7;
    double duration_s = 57.0;
    int out_fs = 1000;

    Eigen::Index channels() const { return static_cast<Eigen::Index>(angles.size()); }
    void validate() const;
};

/// (vx cos(theta_xy) + vy sin(theta_xy)) cos(theta_z) + vz sin(theta_z).
Signal project_vcg(const Signal &vx, const Signal &vy, const Signal &vz, double theta_xy, double theta_z);

struct MixedChannel {
    Signal channel;
    Signal mecg;
    Signal fecg; // already normalized and scaled by r
    double snr_db = 0;
    double ratio = 0;
};

/// mecg + r * fecg * rms(mecg)/rms(fecg) + N(0, mean(clean^2) / 10^(snr/10)).
MixedChannel mix(const Signal &mecg, const Signal &fecg, const SimConfig &config, std::uint64_t channel_seed);

struct SimRecord {
    Record record;          // noisy channels plus truth annotations
    Eigen::MatrixXd mecg;   // clean components, N x J
    Eigen::MatrixXd fecg;
    std::string maternal_donor;
    std::string fetal_donor;
    std::vector<double> measured_snr_db;
    std::vector<double> measured_ratio;
};

/// Maternal donors carry three VCG channels and an "r" annotation; fetal
/// donors at least as many leads as config.channels() and an "r" annotation.
/// The fetal donor is resampled to out_fs/2 and read at out_fs, doubling its
/// rate. Record i uses maternal donor i mod M, fetal donor i mod F and seed
/// config.seed + i. Donors that are too short are skipped with a warning.
std::vector<SimRecord> generate_dataset(const std::vector<Record> &maternal, const std::vector<Record> &fetal,
                                        const SimConfig &config, std::size_t count, unsigned jobs = 1);

/// Ground-truth component CSV: mecg_1..J then fecg_1..J.
void save_truth(const SimRecord &sim, const std::filesystem::path &dir);
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> load_truth(const std::filesystem::path &path);

struct DonorParams {
    double duration_s = 60;
    int fs = 1000;
    double hr_lo_bpm = 60, hr_hi_bpm = 90;
    double ectopy_rate = 0;  // probability a beat is premature
    bool fetal = false;      // two projected leads instead of three VCG axes
};

/// Gaussian-wave dipole model with respiratory and AR(1) rate variability.
Record synthetic_donor(const std::string &name, const DonorParams &params, std::uint64_t seed);

std::vector<Record> synthetic_maternal_donors(std::size_t count, double duration_s, std::uint64_t seed);
std::vector<Record> synthetic_fetal_donors(std::size_t count, double duration_s, std::uint64_t seed);

} // namespace fecg
