// Acceptance run: one PASS / FAIL / SKIP line per criterion, exit status 1
// if anything failed.

#include "fecg/decompose.hpp"
#include "fecg/evaluate.hpp"
#include "fecg/pipeline.hpp"
#include "fecg/preprocess.hpp"
#include "fecg/shrinkage.hpp"
#include "fecg/simulate.hpp"

#include "support.hpp"

#include <Eigen/SVD>
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

using namespace fecg;
namespace ts = testing_support;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
    Status status = Status::fail;
    std::string detail;
};

class Notes {
public:
    template <typename... Args>
    void add(const char *fmt, Args... args) {
        char buf[256];
        std::snprintf(buf, sizeof buf, fmt, args...);
        if (!text_.empty()) text_ += "; ";
        text_ += buf;
    }
    void check(bool ok, const std::string &what) {
        if (!ok) {
            ok_ = false;
            if (!text_.empty()) text_ += "; ";
            text_ += "FAILED " + what;
        }
    }
    Outcome outcome() const { return {ok_ ? Status::pass : Status::fail, text_}; }

private:
    bool ok_ = true;
    std::string text_;
};

double top_singular(const Eigen::MatrixXd &m) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
    return svd.singularValues()(0);
}

std::string slurp(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome shrinker_formulas() {
    Notes n;
    bool edge = true;
    for (int k = 1; k <= 10; ++k) {
        const double beta = 0.1 * k;
        edge = edge && eta_star(1.0 + std::sqrt(beta), beta) == 0.0;
    }
    n.check(edge, "eta*(1+sqrt(beta), beta) == 0");
    n.check(eta_star(2.0, 1.0) == 1.0, "eta*(2, 1) == 1");
    double worst = 0;
    for (int i = 0; i <= 890; ++i) {
        const double lambda = 1.1 + 0.01 * i;
        worst = std::max(worst, std::abs(eta_star(lambda, 1e-9) - std::sqrt(lambda * lambda - 1)));
    }
    n.add("small-beta max error %.2e", worst);
    n.check(worst <= 1e-6, "small-beta limit");
    return n.outcome();
}

Outcome bulk_edge() {
    Notes n;
    DenoiseConfig c1;
    c1.c_noise = 1.0;
    for (auto [p, m, tol] : {std::tuple<Eigen::Index, Eigen::Index, double>{200, 400, 0.05}, {500, 1000, 0.03}}) {
        const double edge = 1.0 + std::sqrt(double(p) / double(m));
        const double top = top_singular(ts::gaussian(p, m, 1000 + static_cast<std::uint64_t>(p))) / std::sqrt(double(m));
        n.add("%ldx%ld top %.4f vs edge %.4f", static_cast<long>(p), static_cast<long>(m), top, edge);
        n.check(std::abs(top - edge) <= tol * edge, "bulk edge " + std::to_string(p) + "x" + std::to_string(m));
    }
    int zero = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed)
        if (optimal_shrink(ts::gaussian(200, 400, 5000 + seed), c1).kept_rank == 0) ++zero;
    n.add("kept_rank 0 in %d/50 seeds", zero);
    n.check(zero >= 48, "kept_rank 0 in >= 95% of seeds");
    return n.outcome();
}

Outcome spike_recovery() {
    Notes n;
    const Eigen::Index p = 500, m = 1000;
    DenoiseConfig c1;
    c1.c_noise = 1.0;
    const double sqrt_n = std::sqrt(double(m));
    for (double d : {1.5, 3.0, 6.0}) {
        const Eigen::MatrixXd x = sqrt_n * d * ts::unit_gaussian_vector(p, 7000 + static_cast<std::uint64_t>(d * 10)) *
                                  ts::unit_gaussian_vector(m, 8000 + static_cast<std::uint64_t>(d * 10)).transpose();
        const auto res = optimal_shrink(Eigen::MatrixXd(x + ts::gaussian(p, m, 9000 + static_cast<std::uint64_t>(d * 10))), c1);
        const double got = res.singular_values_shrunk(0) / sqrt_n;
        n.add("d=%.1f -> %.4f", d, got);
        n.check(std::abs(got - d) <= 0.05 * d, "recovered strength for d=" + std::to_string(d));
    }
    int wins = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const double d = std::vector<double>{1.5, 3.0, 6.0}[static_cast<std::size_t>(trial % 3)];
        const auto seed = static_cast<std::uint64_t>(20000 + 3 * trial);
        const Eigen::MatrixXd x =
            sqrt_n * d * ts::unit_gaussian_vector(p, seed) * ts::unit_gaussian_vector(m, seed + 1).transpose();
        const Eigen::MatrixXd y = x + ts::gaussian(p, m, seed + 2);
        const auto res = optimal_shrink(y, c1);
        Eigen::BDCSVD<Eigen::MatrixXd> svd(y, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::MatrixXd trunc =
            svd.singularValues()(0) * svd.matrixU().col(0) * svd.matrixV().col(0).transpose();
        if (top_singular(res.denoised - x) <= top_singular(trunc - x)) ++wins;
    }
    n.add("shrinkage beats rank-1 truncation in %d/50", wins);
    n.check(wins >= 45, "operator-norm loss comparison");
    return n.outcome();
}

Outcome filter_suite() {
    Notes n;
    const double fs = 1000;
    const FilterSpec spec;
    const Eigen::Index len = 20000, lo = len / 4, hi = 3 * len / 4;
    auto gain = [&](double f, auto &&filter) {
        const Signal x = ts::sine(f, fs, len);
        return ts::tone_amplitude(filter(x), f, fs, lo, hi) / ts::tone_amplitude(x, f, fs, lo, hi);
    };
    auto lp = [&](const Signal &x) { return butterworth_lowpass(x, fs, spec); };
    auto nf = [&](const Signal &x) { return notch_filter(x, fs, spec); };
    for (double f : {100.0, 200.0}) {
        const double g = gain(f, lp), want = ts::butterworth_digital_power(f, 100, fs, 5);
        n.add("lowpass %.0f Hz %.3e vs %.3e", f, g, want);
        n.check(std::abs(g - want) <= 0.05 * want, "lowpass at " + std::to_string(f));
    }
    const double depth = gain(60.0, nf);
    n.add("notch 60 Hz residual %.4f", depth);
    n.check(depth <= 0.03, "notch depth");
    for (double f : {58.0, 59.0, 61.0, 62.0}) {
        // forward-backward filtering: amplitude gain is the single-pass power response
        const double g = gain(f, nf), want = ts::notch_power(f, 60, 30, fs);
        n.check(std::abs(g - want) <= 0.05 * want, "notch shape at " + std::to_string(f));
    }
    const Signal y = median_detrend(Signal::Constant(5000, 1.7), fs, spec);
    n.check(y.cwiseAbs().maxCoeff() == 0.0, "detrend of constant");
    return n.outcome();
}

Outcome metric_suite() {
    Notes n;
    auto m = match_peaks(PeakList({1000, 2000}), PeakList({1010, 2500}), 50);
    n.check(m.tp() == 1 && m.fp == 1 && m.fn == 1 && m.pairs[0].second == 1010, "match example");
    m = match_peaks(PeakList({1000}), PeakList({960, 1040}), 50);
    n.check(m.tp() == 1 && m.pairs[0].second == 960 && m.fp == 1, "tie example");
    MatchResult h;
    h.pairs = {{1000, 1010}};
    h.fp = h.fn = 1;
    n.check(f1(h) == 0.5 && mae(h) == 10.0, "f1/mae example");
    const Signal z = Signal::LinSpaced(2000, 1.0, 3.0);
    const PeakList pk({100, 900});
    n.check(nmae(z, z, 1000, pk, pk) == 0.0, "nmae identity");
    n.check(std::abs(nmae(z, Signal(1.1 * z), 1000, pk, pk) - 0.1) < 1e-12, "nmae 1.1x");
    n.check(nmde({120, 130}, {120, 130}) == 0.0 && std::abs(nmde({120}, {132}) - 0.1) < 1e-12, "nmde examples");

    std::mt19937_64 rng(31337);
    std::uniform_real_distribution<double> jitter(-25.0, 25.0), gap(150.0, 400.0), pos(0.0, 3000.0);
    std::bernoulli_distribution drop(0.2), extra(0.3);
    int equal = 0, monotone = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> truth, det;
        double t = 100;
        for (int k = 0; k < 8; ++k) {
            truth.push_back(t);
            if (!drop(rng)) det.push_back(t + jitter(rng));
            t += gap(rng);
        }
        if (extra(rng)) det.push_back(pos(rng));
        std::sort(det.begin(), det.end());
        det.erase(std::unique(det.begin(), det.end()), det.end());
        const PeakList a(truth), b(det);
        if (match_peaks(a, b, 50).tp() == ts::brute_force_max_matching(truth, det, 50)) ++equal;
        const auto t10 = match_peaks(a, b, 10).tp(), t25 = match_peaks(a, b, 25).tp(), t50 = match_peaks(a, b, 50).tp();
        if (t10 <= t25 && t25 <= t50) ++monotone;
    }
    n.add("greedy == optimal %d/1000, monotone %d/1000", equal, monotone);
    n.check(equal == 1000, "greedy vs brute force");
    n.check(monotone == 1000, "TP monotone in window");
    return n.outcome();
}

struct SweepOutcome {
    Outcome result;
    PipelineResult run;
};

double record_nmde(const RecordScores &s) {
    std::vector<double> v;
    for (double x : {s.nmde_pr, s.nmde_qt, s.nmde_st})
        if (std::isfinite(x)) v.push_back(x);
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : mean(v);
}

SweepOutcome end_to_end(const std::filesystem::path &out) {
    PipelineConfig cfg;
    cfg.out = out;
    cfg.sweep = true;
    cfg.records = 10;
    cfg.donors = 10;
    const auto t0 = std::chrono::steady_clock::now();
    SweepOutcome so;
    so.run = run_pipeline(cfg);
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    Notes n;
    const ConditionResult *best = nullptr, *worst = nullptr;
    for (const auto &c : so.run.conditions) {
        if (c.r == 0.25 && c.snr_db == 20.0) best = &c;
        if (c.r == 0.125 && c.snr_db == 5.0) worst = &c;
    }
    if (!best || !worst) {
        n.check(false, "sweep is missing the corner conditions");
        so.result = n.outcome();
        return so;
    }
    auto medians = [](const ConditionResult &c) {
        std::vector<double> f, mae_ms, nm;
        for (const auto &[name, s] : c.report.per_recording) {
            f.push_back(s.f1);
            mae_ms.push_back(s.mae_ms);
            nm.push_back(record_nmde(s));
        }
        return std::array<double, 3>{summarize(f).median, summarize(mae_ms).median, summarize(nm).median};
    };
    const auto b = medians(*best), w = medians(*worst);
    for (const auto &c : so.run.conditions) {
        const auto m = medians(c);
        std::printf("    r=%.4f snr=%4.1f  median F1 %.4f  MAE %.2f ms  NMDE %.4f\n", c.r, c.snr_db, m[0], m[1], m[2]);
    }
    n.add("best F1 %.4f MAE %.2f ms NMDE %.4f", b[0], b[1], b[2]);
    n.add("worst F1 %.4f NMDE %.4f", w[0], w[2]);
    n.add("%.1f min", minutes);
    n.check(b[0] >= 0.95, "median F1 at (20 dB, 1/4)");
    n.check(b[1] <= 10.0, "median MAE at (20 dB, 1/4)");
    n.check(b[0] >= w[0], "F1 trend");
    n.check(b[2] <= w[2], "NMDE trend");
    n.check(minutes <= 20.0, "runtime");
    so.result = n.outcome();
    return so;
}

Outcome cinc2013() {
    const char *env = std::getenv("FECG_CINC2013_DIR");
    if (!env || !std::filesystem::exists(std::filesystem::path(env) / "a01.hea"))
        return {Status::skip, "set FECG_CINC2013_DIR to a folder with set-a WFDB records and .fqrs.txt files"};
    const std::filesystem::path dir(env);
    const std::vector<std::pair<int, int>> pairs{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
    std::map<std::pair<int, int>, std::vector<double>> f1s, maes;
    std::vector<double> best_per_record;
    for (int k = 1; k <= 75; ++k) {
        if (k == 54) continue;
        char name[16];
        std::snprintf(name, sizeof name, "a%02d.hea", k);
        if (!std::filesystem::exists(dir / name)) continue;
        const Record rec = load_record(dir / name);
        const auto truth_it = rec.annotations.find(ann::fetal_r);
        if (truth_it == rec.annotations.end()) continue;
        double best = 0;
        for (auto [i, j] : pairs) {
            Record two = rec;
            two.samples.resize(rec.length(), 2);
            two.samples << rec.samples.col(i), rec.samples.col(j);
            two.channel_names = {rec.channel_names[static_cast<std::size_t>(i)],
                                 rec.channel_names[static_cast<std::size_t>(j)]};
            DecomposeConfig cfg;
            cfg.jobs = default_jobs();
            double f = 0, e = std::numeric_limits<double>::quiet_NaN();
            try {
                const auto out = decompose(two, cfg);
                const auto m = match_peaks(truth_it->second, out.fetal_peaks, 50);
                f = f1(m);
                if (m.tp() > 0) e = mae(m);
            } catch (const DataError &) {
            }
            f1s[{i, j}].push_back(f);
            maes[{i, j}].push_back(e);
            best = std::max(best, f);
        }
        best_per_record.push_back(best);
    }
    if (best_per_record.empty()) return {Status::skip, "no usable set-a records found"};
    std::pair<int, int> best_pair{0, 3};
    double best_f1 = -1;
    for (const auto &[pr, v] : f1s) {
        const double m = mean(v);
        if (m > best_f1) {
            best_f1 = m;
            best_pair = pr;
        }
    }
    const double best_mae = summarize(maes[best_pair]).mean;
    const double f1_one = mean(best_per_record);
    Notes n;
    n.add("%zu records; best pair %d+%d F1 %.2f%% MAE %.2f ms; F1(1) %.2f%%", best_per_record.size(),
          best_pair.first + 1, best_pair.second + 1, 100 * best_f1, best_mae, 100 * f1_one);
    n.check(std::abs(100 * best_f1 - 93.21) <= 5.0, "best-pair F1");
    n.check(std::abs(best_mae - 5.44) <= 3.0, "best-pair MAE");
    n.check(100 * f1_one >= 90.0, "F1(1)");
    return n.outcome();
}

Outcome determinism(const std::filesystem::path &root) {
    Notes n;
    auto run = [&](const std::string &tag, unsigned jobs) {
        PipelineConfig cfg;
        cfg.out = root / tag;
        cfg.records = 3;
        cfg.donors = 3;
        cfg.jobs = jobs;
        run_pipeline(cfg);
        return slurp(cfg.out / "report.json");
    };
    const unsigned many = std::max(2u, default_jobs());
    const auto a = run("a", many), b = run("b", many), c = run("c", 1);
    n.add("report %zu bytes, jobs %u vs 1", a.size(), many);
    n.check(!a.empty(), "report written");
    n.check(a == b, "two runs identical");
    n.check(a == c, "jobs N vs jobs 1 identical");
    return n.outcome();
}

Outcome identity(const PipelineResult &sweep) {
    Notes n;
    std::size_t processed = 0, failed = 0;
    double worst = 0;
    for (const auto &c : sweep.conditions)
        for (const auto &[name, d] : c.details) {
            if (!d.error.empty()) {
                ++failed;
                continue;
            }
            ++processed;
            worst = std::max(worst, d.identity_residual);
        }
    n.add("%zu records, max residual %g, %zu not processed", processed, worst, failed);
    n.check(processed > 0 && worst == 0.0, "exact subtraction identity");

    SimConfig sc;
    const auto sims = generate_dataset(synthetic_maternal_donors(3, 60, 99), synthetic_fetal_donors(3, 116, 99), sc, 3);
    std::size_t same = 0;
    for (const auto &s : sims) {
        DecomposeConfig cfg;
        cfg.jobs = default_jobs();
        const auto a = decompose(s.record, cfg);
        Record scaled = s.record;
        scaled.samples *= 10.0;
        const auto b = decompose(scaled, cfg);
        if (a.theta_index == b.theta_index && a.fetal_peaks == b.fetal_peaks && a.maternal_peaks == b.maternal_peaks)
            ++same;
    }
    n.add("x10 scaling unchanged on %zu/%zu records", same, sims.size());
    n.check(same == sims.size(), "scale invariance");
    return n.outcome();
}

void report(int id, const char *title, const Outcome &o, std::set<int> &failures) {
    const char *tag = o.status == Status::pass ? "PASS" : o.status == Status::skip ? "SKIP" : "FAIL";
    if (o.status == Status::fail) failures.insert(id);
    std::printf("[%s] %d. %s: %s\n", tag, id, title, o.detail.c_str());
    std::fflush(stdout);
}

template <typename F>
Outcome guarded(F &&f) {
    try {
        return f();
    } catch (const std::exception &e) {
        return {Status::fail, std::string("exception: ") + e.what()};
    }
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"acceptance criteria"};
    std::vector<int> expected;
    app.add_option("--expect-fail", expected, "Criteria known to fail; they do not set the exit code")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    log::set_level(log::Level::error);
    const auto root = ts::scratch_dir("acceptance");
    std::set<int> failures;
    report(1, "shrinker formulas", guarded(shrinker_formulas), failures);
    report(2, "RMT bulk edge", guarded(bulk_edge), failures);
    report(3, "spike recovery", guarded(spike_recovery), failures);
    report(4, "filter suite", guarded(filter_suite), failures);
    report(5, "metric suite", guarded(metric_suite), failures);
    SweepOutcome sweep;
    try {
        sweep = end_to_end(root / "sweep");
    } catch (const std::exception &e) {
        sweep.result = {Status::fail, std::string("exception: ") + e.what()};
    }
    report(6, "end-to-end simulated sweep", sweep.result, failures);
    report(7, "CinC2013 set A", guarded(cinc2013), failures);
    report(8, "determinism", guarded([&] { return determinism(root / "det"); }), failures);
    report(9, "decomposition identity", guarded([&] { return identity(sweep.run); }), failures);
    std::printf("%zu criterion(s) failed\n", failures.size());

    const std::set<int> known(expected.begin(), expected.end());
    bool surprise = false;
    for (int id : failures)
        if (!known.count(id)) surprise = true;
    for (int id : known)
        if (!failures.count(id)) {
            std::printf("criterion %d was expected to fail but did not\n", id);
            surprise = true;
        }
    if (!known.empty() && !surprise) std::printf("all failures are the expected ones\n");
    return surprise ? 1 : 0;
}
