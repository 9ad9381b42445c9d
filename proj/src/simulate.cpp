#include "fecg/simulate.hpp"

#include "fecg/evaluate.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

namespace fecg {

void SimConfig::validate() const {
    if (angles.empty()) throw ArgumentError("simulation needs at least one channel angle pair");
    if (!(r > 0 && r < 1)) throw ArgumentError("r must lie in (0, 1)");
    if (std::isnan(snr_db)) throw ArgumentError("snr_db must be a number");
    if (!(duration_s > 0)) throw ArgumentError("duration must be positive");
    if (out_fs <= 0 || out_fs % 2 != 0) throw ArgumentError("out_fs must be a positive even rate");
}

Signal project_vcg(const Signal &vx, const Signal &vy, const Signal &vz, double theta_xy, double theta_z) {
    if (vx.size() != vy.size() || vx.size() != vz.size()) throw ArgumentError("project_vcg: length mismatch");
    return (vx * std::cos(theta_xy) + vy * std::sin(theta_xy)) * std::cos(theta_z) + vz * std::sin(theta_z);
}

MixedChannel mix(const Signal &mecg, const Signal &fecg, const SimConfig &config, std::uint64_t channel_seed) {
    if (!(config.r > 0 && config.r < 1)) throw ArgumentError("mix: r must lie in (0, 1)");
    if (mecg.size() != fecg.size()) throw ArgumentError("mix: length mismatch");
    const double fr = rms(fecg);
    if (!(fr > 0)) throw ArgumentError("mix: fetal signal is silent");
    MixedChannel out;
    out.mecg = mecg;
    out.fecg = fecg * (config.r * rms(mecg) / fr);
    const Signal clean = out.mecg + out.fecg;
    out.ratio = rms(out.fecg) / rms(out.mecg);
    if (std::isinf(config.snr_db) && config.snr_db > 0) {
        out.channel = clean;
        out.snr_db = config.snr_db;
        return out;
    }
    const double power = clean.squaredNorm() / static_cast<double>(clean.size());
    const double sd = std::sqrt(power / std::pow(10.0, config.snr_db / 10.0));
    std::mt19937_64 rng(channel_seed);
    std::normal_distribution<double> gauss(0.0, sd);
    Signal noise(clean.size());
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise(i) = gauss(rng);
    out.channel = clean + noise;
    out.snr_db = 10.0 * std::log10(power / (noise.squaredNorm() / static_cast<double>(noise.size())));
    return out;
}

namespace {

Record prepare(const Record &donor, int fs) { return donor.fs == fs ? donor : resample(donor, fs); }

PeakList clip(const PeakList &p, double scale, double limit_ms) {
    std::vector<double> out;
    for (double t : p)
        if (t * scale < limit_ms) out.push_back(t * scale);
    return PeakList(std::move(out));
}

const PeakList &beats_of(const Record &donor) {
    if (auto it = donor.annotations.find(ann::r); it != donor.annotations.end()) return it->second;
    if (auto it = donor.annotations.find(ann::maternal_r); it != donor.annotations.end()) return it->second;
    if (auto it = donor.annotations.find(ann::fetal_r); it != donor.annotations.end()) return it->second;
    throw DataError("donor " + donor.name + " has no beat annotations");
}

std::optional<SimRecord> simulate_one(const Record &md, const Record &fd, const SimConfig &cfg, std::size_t index) {
    const auto n = static_cast<Eigen::Index>(std::llround(cfg.duration_s * cfg.out_fs));
    const Record m = prepare(md, cfg.out_fs);
    const Record f = prepare(fd, cfg.out_fs / 2);
    if (m.channel_count() < 3) throw DataError("maternal donor " + md.name + " needs three VCG channels");
    if (m.length() < n || f.length() < n) {
        log::warn("simulate", "donor pair " + md.name + "/" + fd.name + " too short for " +
                                  std::to_string(cfg.duration_s) + " s; skipped");
        return std::nullopt;
    }
    const double limit_ms = cfg.duration_s * 1000.0;
    const PeakList fetal_r = clip(beats_of(fd), 0.5, limit_ms);
    const PeakList maternal_r = clip(beats_of(md), 1.0, limit_ms);

    const auto J = cfg.channels();
    SimRecord sim;
    sim.maternal_donor = md.name;
    sim.fetal_donor = fd.name;
    sim.record.name = "rec" + std::string(3 - std::min<std::size_t>(3, std::to_string(index).size()), '0') +
                      std::to_string(index);
    sim.record.fs = cfg.out_fs;
    sim.record.samples.resize(n, J);
    sim.mecg.resize(n, J);
    sim.fecg.resize(n, J);
    const Signal vx = m.samples.col(0).head(n), vy = m.samples.col(1).head(n), vz = m.samples.col(2).head(n);
    for (Eigen::Index j = 0; j < J; ++j) {
        const auto [txy, tz] = cfg.angles[static_cast<std::size_t>(j)];
        const Signal lead = f.samples.col(j % f.channel_count()).head(n);
        const auto ch = mix(project_vcg(vx, vy, vz, txy, tz), lead, cfg,
                            (cfg.seed + index) * 1000003ULL + static_cast<std::uint64_t>(j));
        sim.record.samples.col(j) = ch.channel;
        sim.mecg.col(j) = ch.mecg;
        sim.fecg.col(j) = ch.fecg;
        sim.measured_snr_db.push_back(ch.snr_db);
        sim.measured_ratio.push_back(ch.ratio);
        sim.record.channel_names.push_back("ch" + std::to_string(j + 1));
    }
    const auto lm = detect_pt(Signal(sim.fecg.col(0)), cfg.out_fs, fetal_r);
    sim.record.annotations[ann::maternal_r] = maternal_r;
    sim.record.annotations[ann::fetal_r] = fetal_r;
    sim.record.annotations[ann::fetal_p] = lm.p_list();
    sim.record.annotations[ann::fetal_t] = lm.t_list();
    sim.record.validate();
    return sim;
}

} // namespace

std::vector<SimRecord> generate_dataset(const std::vector<Record> &maternal, const std::vector<Record> &fetal,
                                        const SimConfig &config, std::size_t count, unsigned jobs) {
    config.validate();
    if (maternal.empty() || fetal.empty()) throw ArgumentError("generate_dataset: need maternal and fetal donors");
    std::vector<std::optional<SimRecord>> slots(count);
    parallel_for(count, jobs, [&](std::size_t i) {
        slots[i] = simulate_one(maternal[i % maternal.size()], fetal[i % fetal.size()], config, i);
    });
    std::vector<SimRecord> out;
    for (auto &s : slots)
        if (s) out.push_back(std::move(*s));
    return out;
}

void save_truth(const SimRecord &sim, const std::filesystem::path &dir) {
    const auto J = sim.mecg.cols();
    Eigen::MatrixXd both(sim.mecg.rows(), 2 * J);
    both << sim.mecg, sim.fecg;
    std::vector<std::string> header;
    for (Eigen::Index j = 0; j < J; ++j) header.push_back("mecg_" + std::to_string(j + 1));
    for (Eigen::Index j = 0; j < J; ++j) header.push_back("fecg_" + std::to_string(j + 1));
    save_matrix_csv(both, dir / (sim.record.name + ".truth.csv"), header);
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> load_truth(const std::filesystem::path &path) {
    const Eigen::MatrixXd both = load_matrix_csv(path, true);
    if (both.cols() % 2 != 0) throw ParseError(path.string(), 1, "truth file needs paired mecg/fecg columns");
    const auto J = both.cols() / 2;
    return {both.leftCols(J), both.rightCols(J)};
}

namespace {

struct Wave {
    double offset_ms;
    double width_ms;
    Eigen::Vector3d amp;
    bool scales_with_rr = false;
};

std::vector<Wave> morphology(bool fetal, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> jitter(0.8, 1.2);
    std::vector<Wave> w;
    if (!fetal) {
        w = {{-160, 25, {0.10, 0.05, -0.03}},
             {-25, 10, {-0.10, 0.05, 0.05}},
             {0, 10, {1.00, 0.60, -0.40}},
             {25, 10, {-0.25, -0.30, 0.20}},
             {260, 50, {0.25, 0.15, -0.10}, true}};
    } else {
        w = {{-130, 20, {0.16, -0.02, 0.12}},
             {-22, 8, {-0.10, -0.08, -0.02}},
             {0, 9, {0.80, -0.50, 0.60}},
             {22, 8, {-0.05, 0.40, 0.10}},
             {240, 45, {0.10, 0.22, 0.20}, true}};
    }
    for (auto &x : w) x.amp *= jitter(rng);
    return w;
}

} // namespace

Record synthetic_donor(const std::string &name, const DonorParams &p, std::uint64_t seed) {
    if (!(p.duration_s > 1) || p.fs <= 0 || !(p.hr_lo_bpm > 0 && p.hr_hi_bpm >= p.hr_lo_bpm))
        throw ArgumentError("synthetic_donor: bad parameters");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const double base_rr = 60.0 / (p.hr_lo_bpm + (p.hr_hi_bpm - p.hr_lo_bpm) * uni(rng));
    const double resp_hz = 0.2 + 0.1 * uni(rng);
    const double resp_phase = 2 * M_PI * uni(rng);
    const auto waves = morphology(p.fetal, rng);

    struct Beat {
        double t;
        double rr;
        bool ectopic;
    };
    std::vector<Beat> beats;
    double t = 0.3 + base_rr * uni(rng);
    double ar = 0;
    bool ectopic = false;
    bool compensate = false;
    while (t < p.duration_s - 0.5) {
        ar = 0.8 * ar + 0.01 * base_rr * gauss(rng);
        const double rr = base_rr * (1.0 + 0.04 * std::sin(2 * M_PI * resp_hz * t + resp_phase)) + ar;
        beats.push_back({t, rr, ectopic});
        if (compensate) {
            t += 1.35 * rr;
            ectopic = compensate = false;
        } else if (p.ectopy_rate > 0 && uni(rng) < p.ectopy_rate) {
            t += 0.65 * rr;
            ectopic = compensate = true;
        } else {
            t += rr;
        }
    }

    const auto n = static_cast<Eigen::Index>(std::llround(p.duration_s * p.fs));
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, 3);
    std::vector<double> r_ms;
    for (const auto &b : beats) {
        const double resp = 1.0 + 0.05 * std::sin(2 * M_PI * resp_hz * b.t + resp_phase);
        const double stretch = std::sqrt(std::clamp(b.rr, 0.25, 2.0));
        for (const auto &w : waves) {
            double width = w.width_ms * (w.scales_with_rr ? stretch : 1.0);
            double offset = w.offset_ms * (w.scales_with_rr ? stretch : 1.0);
            Eigen::Vector3d amp = w.amp * resp;
            if (b.ectopic) {
                width *= 1.6;
                amp *= 1.3;
                if (w.offset_ms < -50) amp.setZero(); // no P wave
            }
            const double center = b.t + offset / 1000.0;
            const double sigma = width / 1000.0;
            const auto lo = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::floor((center - 5 * sigma) * p.fs)));
            const auto hi = std::min<Eigen::Index>(n - 1, static_cast<Eigen::Index>(std::ceil((center + 5 * sigma) * p.fs)));
            for (Eigen::Index i = lo; i <= hi; ++i) {
                const double d = (static_cast<double>(i) / p.fs - center) / sigma;
                v.row(i) += amp.transpose() * std::exp(-0.5 * d * d);
            }
        }
        r_ms.push_back(std::round(b.t * p.fs) * 1000.0 / p.fs);
    }

    Record rec;
    rec.name = name;
    rec.fs = p.fs;
    if (p.fetal) {
        // two leads 90 degrees apart, straddling the R axis in the plane of the loop
        const Eigen::Vector3d axis = waves[2].amp.normalized();
        const Eigen::MatrixXd off = v - (v * axis) * axis.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(off.transpose() * off);
        const Eigen::Vector3d e = eig.eigenvectors().col(2).normalized();
        const Eigen::Vector3d lead_a = std::sqrt(0.5) * (axis + e);
        const Eigen::Vector3d lead_b = std::sqrt(0.5) * (axis - e);
        rec.samples.resize(n, 2);
        rec.samples.col(0) = v * lead_a;
        rec.samples.col(1) = v * lead_b;
        rec.channel_names = {"lead_a", "lead_b"};
    } else {
        rec.samples = v;
        rec.channel_names = {"vx", "vy", "vz"};
    }
    rec.annotations[ann::r] = PeakList(std::move(r_ms));
    rec.validate();
    return rec;
}

std::vector<Record> synthetic_maternal_donors(std::size_t count, double duration_s, std::uint64_t seed) {
    std::vector<Record> out;
    for (std::size_t k = 0; k < count; ++k) {
        DonorParams p;
        p.duration_s = duration_s;
        out.push_back(synthetic_donor("m" + std::to_string(k), p, seed * 7919ULL + 2 * k));
    }
    return out;
}

std::vector<Record> synthetic_fetal_donors(std::size_t count, double duration_s, std::uint64_t seed) {
    std::vector<Record> out;
    for (std::size_t k = 0; k < count; ++k) {
        DonorParams p;
        p.duration_s = duration_s;
        p.hr_lo_bpm = 65;
        p.hr_hi_bpm = 85;
        p.fetal = true;
        p.ectopy_rate = k % 3 == 2 ? 0.02 : 0.0;
        out.push_back(synthetic_donor("f" + std::to_string(k), p, seed * 7919ULL + 2 * k + 1));
    }
    return out;
}

} // namespace fecg
