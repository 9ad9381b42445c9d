// fecg: command-line front end.
//   decompose  separate one record into maternal/fetal components
//   rpeaks     R peaks of one channel as a JSON array of ms
//   shrink     optimal shrinkage of a CSV matrix
//   simulate   semi-real dataset from donor recordings
//   evaluate   score decompose outputs against simulation truth
//   pipeline   simulate -> decompose -> evaluate
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 internal invariant violation.

#include "fecg/decompose.hpp"
#include "fecg/evaluate.hpp"
#include "fecg/pipeline.hpp"
#include "fecg/rpeak.hpp"
#include "fecg/shrinkage.hpp"
#include "fecg/signal_io.hpp"
#include "fecg/simulate.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace fecg;

namespace {

struct Globals {
    unsigned jobs = 0;
    std::uint64_t seed = 7;
    fs::path out = "out";
    fs::path config;
    std::string log_level = "info";
    double lp_cutoff = 100, notch = 60, median_short = 200, median_long = 600;
};

struct Flags {
    CLI::Option *jobs, *seed, *out, *lp, *notch, *ms, *ml;
};

PipelineConfig base_config(const Globals &g, const Flags &f) {
    PipelineConfig cfg;
    if (!g.config.empty()) cfg = load_pipeline_config(g.config);
    if (f.seed->count()) cfg.seed = g.seed;
    if (f.out->count()) cfg.out = g.out;
    if (f.jobs->count()) cfg.jobs = g.jobs;
    auto &filt = cfg.decompose.filter;
    if (f.lp->count()) filt.lowpass_cutoff = g.lp_cutoff;
    if (f.notch->count()) filt.notch_center = g.notch;
    if (f.ms->count()) filt.median_short_ms = g.median_short;
    if (f.ml->count()) filt.median_long_ms = g.median_long;
    cfg.decompose.jobs = cfg.jobs ? cfg.jobs : default_jobs();
    return cfg;
}

Record load_input(const fs::path &path) {
    if (!fs::exists(path)) throw DataError("input file not found: " + path.string());
    try {
        return load_record(path);
    } catch (const ArgumentError &e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

Record select_channels(const Record &rec, const std::vector<int> &channels) {
    if (channels.empty()) return rec;
    Record out = rec;
    out.samples.resize(rec.length(), static_cast<Eigen::Index>(channels.size()));
    out.channel_names.clear();
    for (std::size_t k = 0; k < channels.size(); ++k) {
        const int c = channels[k];
        if (c < 1 || c > rec.channel_count())
            throw ArgumentError("--channels: channel " + std::to_string(c) + " out of range 1.." +
                                std::to_string(rec.channel_count()));
        out.samples.col(static_cast<Eigen::Index>(k)) = rec.samples.col(c - 1);
        out.channel_names.push_back(rec.channel_names[static_cast<std::size_t>(c - 1)]);
    }
    return out;
}

ojson peaks_json(const PeakList &p) { return ojson(p.times()); }

ojson theta_json(const Eigen::VectorXd &t) { return ojson(std::vector<double>(t.data(), t.data() + t.size())); }

PeakList load_peaks_json(const fs::path &path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return PeakList(nlohmann::json::parse(in).get<std::vector<double>>());
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(path.string(), 0, e.what());
    } catch (const ArgumentError &e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::vector<fs::path> list_records(const fs::path &dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto &e : fs::directory_iterator(dir)) {
        const auto p = e.path();
        const auto name = p.filename().string();
        if (p.extension() == ".hea" || (p.extension() == ".csv" && name.find(".truth.") == std::string::npos))
            out.push_back(p);
    }
    std::sort(out.begin(), out.end());
    return out;
}

int run_decompose(const PipelineConfig &cfg, const fs::path &in, const std::vector<int> &channels) {
    const Record rec = select_channels(load_input(in), channels);
    const auto out = decompose(rec, cfg.decompose);
    fs::create_directories(cfg.out);
    save_matrix_csv(out.mecg, cfg.out / "mecg.csv", {"mecg"});
    save_matrix_csv(out.rfecg, cfg.out / "rfecg.csv", {"rfecg"});
    save_matrix_csv(out.fecg, cfg.out / "fecg.csv", {"fecg"});
    write_json(peaks_json(out.fetal_peaks), cfg.out / "fetal_peaks.json");
    write_json(peaks_json(out.maternal_peaks), cfg.out / "maternal_peaks.json");
    ojson sqi = ojson::array();
    for (Eigen::Index k = 0; k < out.grid.size(); ++k)
        sqi.push_back({{"index", k}, {"theta", theta_json(out.grid.theta(k))}, {"bsqi", out.sqi[static_cast<std::size_t>(k)]}});
    write_json(sqi, cfg.out / "sqi.json");
    write_json({{"index", out.theta_index}, {"theta", theta_json(out.theta_star)}, {"fs", out.fs},
                {"labels_swapped", out.labels_swapped}},
               cfg.out / "theta_star.json");
    log::info("cli", "theta* index " + std::to_string(out.theta_index) + ", " +
                         std::to_string(out.fetal_peaks.size()) + " fetal beats");
    return 0;
}

int run_rpeaks(const PipelineConfig &cfg, const fs::path &in, int channel, const std::string &mode,
               const fs::path &out_file, bool raw) {
    const Record rec = load_input(in);
    if (channel < 1 || channel > rec.channel_count()) throw ArgumentError("--channel out of range");
    const auto m = mode == "fetal" ? BeatMode::fetal : BeatMode::maternal;
    Signal x = rec.channel(channel - 1);
    if (!raw) x = preprocess(x, rec.fs, cfg.decompose.filter);
    const auto peaks = detect_rpeaks(x, rec.fs, m, cfg.decompose.rpeak);
    const auto j = peaks_json(peaks);
    if (out_file.empty())
        std::cout << j.dump() << '\n';
    else
        write_json(j, out_file);
    return 0;
}

int run_shrink(const fs::path &in, const fs::path &out_file, double c_noise, bool header) {
    if (!fs::exists(in)) throw DataError("input file not found: " + in.string());
    const Eigen::MatrixXd S = load_matrix_csv(in, header);
    DenoiseConfig dc;
    dc.c_noise = c_noise;
    const auto res = optimal_shrink(S, dc);
    if (!out_file.parent_path().empty()) fs::create_directories(out_file.parent_path());
    save_matrix_csv(res.denoised, out_file);
    ojson info = {{"sigma_hat", res.sigma_hat},
                  {"kept_rank", res.kept_rank},
                  {"beta", res.beta},
                  {"singular_values_raw", std::vector<double>(res.singular_values_raw.data(),
                                                              res.singular_values_raw.data() + res.singular_values_raw.size())},
                  {"singular_values_shrunk",
                   std::vector<double>(res.singular_values_shrunk.data(),
                                       res.singular_values_shrunk.data() + res.singular_values_shrunk.size())}};
    std::cout << info.dump() << '\n';
    return 0;
}

std::vector<Record> load_donors(const fs::path &dir) {
    std::vector<Record> out;
    for (const auto &p : list_records(dir)) out.push_back(load_input(p));
    if (out.empty()) throw DataError("no donor records in " + dir.string());
    return out;
}

int run_simulate(PipelineConfig cfg, const fs::path &mdir, const fs::path &fdir, std::size_t count,
                 std::size_t synthetic) {
    cfg.sim.seed = cfg.seed;
    std::vector<Record> maternal, fetal;
    if (mdir.empty() != fdir.empty()) throw ArgumentError("--maternal-dir and --fetal-dir go together");
    if (mdir.empty()) {
        maternal = synthetic_maternal_donors(synthetic, cfg.sim.duration_s + 3.0, cfg.seed);
        fetal = synthetic_fetal_donors(synthetic, 2.0 * cfg.sim.duration_s + 2.0, cfg.seed);
    } else {
        maternal = load_donors(mdir);
        fetal = load_donors(fdir);
    }
    const auto data = generate_dataset(maternal, fetal, cfg.sim, count, cfg.decompose.jobs);
    fs::create_directories(cfg.out);
    ojson recs = ojson::array();
    for (const auto &s : data) {
        save_record(s.record, cfg.out);
        save_truth(s, cfg.out);
        recs.push_back({{"name", s.record.name},
                        {"maternal_donor", s.maternal_donor},
                        {"fetal_donor", s.fetal_donor},
                        {"measured_snr_db", s.measured_snr_db},
                        {"measured_ratio", s.measured_ratio}});
    }
    write_json({{"version", version}, {"config", cfg.to_json()}, {"records", recs}}, cfg.out / "manifest.json");
    log::info("cli", "wrote " + std::to_string(data.size()) + " records to " + cfg.out.string());
    return 0;
}

int run_evaluate(const PipelineConfig &cfg, const fs::path &truth_dir, const fs::path &est_dir,
                 const fs::path &out_file, const fs::path &box_file) {
    EvalReport report;
    report.config = cfg.eval;
    for (const auto &p : list_records(truth_dir)) {
        const Record rec = load_input(p);
        const auto ed = est_dir / rec.name;
        if (!fs::exists(ed / "fecg.csv")) {
            log::warn("cli", "no estimate for " + rec.name + " under " + ed.string() + "; skipped");
            continue;
        }
        auto truth_it = rec.annotations.find(ann::fetal_r);
        if (truth_it == rec.annotations.end()) throw DataError(p.string() + ": no fetal_r truth annotations");
        const auto [mecg, fecg] = load_truth(truth_dir / (rec.name + ".truth.csv"));
        std::ifstream tin(ed / "theta_star.json");
        if (!tin) throw DataError("cannot open " + (ed / "theta_star.json").string());
        const auto ts = nlohmann::json::parse(tin);
        const auto theta_v = ts.at("theta").get<std::vector<double>>();
        const int fs_est = ts.at("fs").get<int>();
        if (fs_est != rec.fs) throw DataError(rec.name + ": estimate and truth sampling rates differ");
        const Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(theta_v.data(), static_cast<Eigen::Index>(theta_v.size()));
        const Signal truth = truth_fetal_signal(fecg, theta, rec.fs, cfg.decompose.filter);
        const Signal est = load_matrix_csv(ed / "fecg.csv", true).col(0);
        report.per_recording[rec.name] =
            evaluate_record(truth, truth_it->second, est, load_peaks_json(ed / "fetal_peaks.json"), rec.fs, cfg.eval);
    }
    if (report.per_recording.empty()) throw DataError("no records evaluated");
    const auto j = report.to_json();
    if (!out_file.parent_path().empty()) fs::create_directories(out_file.parent_path());
    write_json(j, out_file);
    if (!box_file.empty()) {
        std::ofstream box(box_file);
        if (!box) throw DataError("cannot write " + box_file.string());
        box << "metric,count,q1,median,q3,whisker_lo,whisker_hi,outliers\n";
        std::map<std::string, std::vector<double>> cols;
        for (const auto &[name, s] : report.per_recording) {
            cols["f1"].push_back(s.f1);
            cols["mae_ms"].push_back(s.mae_ms);
            cols["nmde_PR"].push_back(s.nmde_pr);
            cols["nmde_QT"].push_back(s.nmde_qt);
            cols["nmde_ST"].push_back(s.nmde_st);
        }
        for (const auto &[metric, vals] : cols) {
            std::vector<double> v;
            for (double x : vals)
                if (std::isfinite(x)) v.push_back(x);
            box << metric << ',' << v.size();
            if (v.empty()) {
                box << ",,,,,,\n";
                continue;
            }
            const auto b = boxplot(v);
            box << ',' << format_double(b.q1) << ',' << format_double(b.median) << ',' << format_double(b.q3) << ','
                << format_double(b.whisker_lo) << ',' << format_double(b.whisker_hi) << ',' << b.outliers.size() << '\n';
        }
    }
    std::cout << j.at("aggregates").dump() << '\n';
    return 0;
}

log::Level parse_level(const std::string &s) {
    if (s == "debug") return log::Level::debug;
    if (s == "warn") return log::Level::warn;
    if (s == "error") return log::Level::error;
    return log::Level::info;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Fetal ECG extraction by optimal shrinkage"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    Flags f{};
    f.jobs = app.add_option("--jobs", g.jobs, "Worker threads (default: logical cores)");
    f.seed = app.add_option("--seed", g.seed, "Random seed");
    f.out = app.add_option("--out", g.out, "Output directory (or file for evaluate)");
    app.add_option("--config", g.config, "JSON config; flags override it");
    app.add_option("--log-level", g.log_level, "debug, info, warn or error")
        ->check(CLI::IsMember({"debug", "info", "warn", "error"}));
    f.lp = app.add_option("--lp-cutoff", g.lp_cutoff, "Low-pass cutoff (Hz)");
    f.notch = app.add_option("--notch", g.notch, "Notch center (Hz)");
    f.ms = app.add_option("--median-short-ms", g.median_short, "Short median window (ms)");
    f.ml = app.add_option("--median-long-ms", g.median_long, "Long median window (ms)");

    auto *dec = app.add_subcommand("decompose", "Separate maternal and fetal components");
    fs::path dec_in;
    std::vector<int> dec_channels;
    int grid_steps = 14, iterations = 1, nonlocal_k = 0;
    dec->add_option("--in", dec_in, "Record (.csv or .hea)")->required();
    dec->add_option("--channels", dec_channels, "1-based channels to use")->delimiter(',');
    auto *o_grid = dec->add_option("--grid-steps", grid_steps, "Grid steps per axis");
    auto *o_iter = dec->add_option("--iterations", iterations, "Refinement iterations");
    auto *o_nl = dec->add_option("--nonlocal-median", nonlocal_k, "Nonlocal median neighbours (0 = off)");

    auto *rp = app.add_subcommand("rpeaks", "Detect R peaks on one channel");
    fs::path rp_in, rp_out;
    int rp_channel = 1;
    std::string rp_mode = "maternal";
    bool rp_raw = false;
    rp->add_option("--in", rp_in, "Record")->required();
    rp->add_option("--channel", rp_channel, "1-based channel");
    rp->add_option("--mode", rp_mode, "maternal or fetal")->check(CLI::IsMember({"maternal", "fetal"}));
    rp->add_option("--peaks-out", rp_out, "Write JSON here instead of stdout");
    rp->add_flag("--raw", rp_raw, "Skip preprocessing");

    auto *sh = app.add_subcommand("shrink", "Optimal shrinkage of a CSV matrix");
    fs::path sh_in, sh_out;
    double c_noise = 1.5;
    bool sh_header = false;
    sh->add_option("--in", sh_in, "Matrix CSV")->required();
    sh->add_option("--matrix-out", sh_out, "Denoised matrix CSV")->required();
    sh->add_option("--c-noise", c_noise, "Noise inflation constant");
    sh->add_flag("--header", sh_header, "Input has a header line");

    auto *sim = app.add_subcommand("simulate", "Generate semi-real recordings");
    fs::path mdir, fdir;
    double sim_r = 0.25, sim_snr = 20, sim_dur = 57;
    std::size_t sim_count = 40, sim_synth = 10;
    sim->add_option("--maternal-dir", mdir, "Maternal VCG donors");
    sim->add_option("--fetal-dir", fdir, "Fetal ECG donors");
    auto *o_sr = sim->add_option("--r", sim_r, "Fetal/maternal amplitude ratio");
    auto *o_ss = sim->add_option("--snr", sim_snr, "SNR (dB)");
    auto *o_sd = sim->add_option("--duration", sim_dur, "Seconds per record");
    sim->add_option("--count", sim_count, "Records to generate");
    sim->add_option("--synthetic-donors", sim_synth, "Synthetic donors when no donor dirs are given");

    auto *ev = app.add_subcommand("evaluate", "Score estimates against truth");
    fs::path ev_truth, ev_est, ev_box;
    double window_ms = 50;
    std::vector<double> windows;
    ev->add_option("--truth", ev_truth, "Directory written by simulate")->required();
    ev->add_option("--est", ev_est, "Directory with one decompose output folder per record")->required();
    auto *o_w = ev->add_option("--window-ms", window_ms, "Matching window");
    auto *o_ws = ev->add_option("--windows", windows, "Extra windows for F1")->delimiter(',');
    ev->add_option("--boxplot", ev_box, "Boxplot summary CSV");

    auto *pl = app.add_subcommand("pipeline", "simulate -> decompose -> evaluate");
    double pl_r = 0.25, pl_snr = 20;
    std::size_t pl_records = 10, pl_donors = 10;
    bool pl_sweep = false;
    auto *o_pr = pl->add_option("--r", pl_r, "Fetal/maternal amplitude ratio");
    auto *o_ps = pl->add_option("--snr", pl_snr, "SNR (dB)");
    auto *o_pn = pl->add_option("--records", pl_records, "Records per condition");
    auto *o_pd = pl->add_option("--donors", pl_donors, "Synthetic donors");
    auto *o_pw = pl->add_flag("--sweep", pl_sweep, "All nine (r, SNR) conditions");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        log::set_level(parse_level(g.log_level));
        PipelineConfig cfg = base_config(g, f);
        if (*dec) {
            if (o_grid->count()) cfg.decompose.grid_steps = grid_steps;
            if (o_iter->count()) cfg.decompose.iterations = iterations;
            if (o_nl->count()) cfg.decompose.nonlocal_k = nonlocal_k;
            return run_decompose(cfg, dec_in, dec_channels);
        }
        if (*rp) return run_rpeaks(cfg, rp_in, rp_channel, rp_mode, rp_out, rp_raw);
        if (*sh) return run_shrink(sh_in, sh_out, c_noise, sh_header);
        if (*sim) {
            if (o_sr->count()) cfg.sim.r = sim_r;
            if (o_ss->count()) cfg.sim.snr_db = sim_snr;
            if (o_sd->count()) cfg.sim.duration_s = sim_dur;
            cfg.sim.validate();
            return run_simulate(cfg, mdir, fdir, sim_count, sim_synth);
        }
        if (*ev) {
            if (o_w->count()) cfg.eval.window_ms = window_ms;
            if (o_ws->count()) cfg.eval.windows = windows;
            const fs::path out_file = f.out->count() ? g.out : fs::path("report.json");
            return run_evaluate(cfg, ev_truth, ev_est, out_file, ev_box);
        }
        if (*pl) {
            if (o_pr->count()) cfg.sim.r = pl_r;
            if (o_ps->count()) cfg.sim.snr_db = pl_snr;
            if (o_pn->count()) cfg.records = pl_records;
            if (o_pd->count()) cfg.donors = pl_donors;
            if (o_pw->count()) cfg.sweep = pl_sweep;
            run_pipeline(cfg);
            log::info("cli", "wrote " + (cfg.out / "report.json").string());
            return 0;
        }
    } catch (const ArgumentError &e) {
        log::write(log::Level::error, "cli", e.what());
        return 1;
    } catch (const InvariantError &e) {
        log::write(log::Level::error, e.module(), e.what());
        return 3;
    } catch (const DataError &e) {
        log::write(log::Level::error, "cli", e.what());
        return 2;
    } catch (const fs::filesystem_error &e) {
        log::write(log::Level::error, "cli", e.what());
        return 2;
    } catch (const std::exception &e) {
        log::write(log::Level::error, "cli", std::string("internal error: ") + e.what());
        return 3;
    }
    return 1;
}
