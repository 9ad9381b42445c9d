#include "fecg/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <set>

namespace fecg {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

void check_keys(const json &j, std::initializer_list<const char *> allowed, const std::string &where) {
    if (!j.is_object()) throw ArgumentError("config: '" + where + "' must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto &item : j.items())
        if (!ok.count(item.key())) throw ArgumentError("config: unknown key '" + item.key() + "' in " + where);
}

template <typename T>
void take(const json &j, const char *key, T &dst) {
    if (j.contains(key)) dst = j.at(key).get<T>();
}

void take_band(const json &j, const char *key, DeshapeParams &p) {
    if (!j.contains(key)) return;
    const auto band = j.at(key).get<std::vector<double>>();
    if (band.size() != 2) throw ArgumentError(std::string("config: ") + key + " needs [lo, hi]");
    p.f_lo = band[0];
    p.f_hi = band[1];
}

std::string label(double r, double snr) { return "r=" + format_double(r) + ",snr=" + format_double(snr); }

} // namespace

void PipelineConfig::validate() const {
    decompose.validate(sim.out_fs);
    sim.validate();
    eval.validate();
    if (records == 0) throw ArgumentError("records must be positive");
    if (donors == 0) throw ArgumentError("donors must be positive");
    if (sim.channels() > 3) throw ArgumentError("at most three simulated channels are supported");
    for (const auto *p : {&decompose.rpeak.maternal, &decompose.rpeak.fetal})
        if (!(p->f_lo > 0 && p->f_hi > p->f_lo && p->gamma > 0 && p->gamma <= 1 && p->window_s > 0 && p->hop_s > 0))
            throw ArgumentError("rpeak parameters out of range");
}

void PipelineConfig::merge_json(const json &j) {
    try {
        check_keys(j, {"seed", "records", "donors", "sweep", "filter", "denoise", "decompose", "rpeak", "simulate",
                       "evaluate"},
                   "config");
        take(j, "seed", seed);
        take(j, "records", records);
        take(j, "donors", donors);
        take(j, "sweep", sweep);
        if (j.contains("filter")) {
            const auto &f = j.at("filter");
            check_keys(f, {"lowpass_order", "lowpass_cutoff", "notch_center", "notch_q", "median_short_ms",
                           "median_long_ms"},
                       "filter");
            auto &s = decompose.filter;
            take(f, "lowpass_order", s.lowpass_order);
            take(f, "lowpass_cutoff", s.lowpass_cutoff);
            take(f, "notch_center", s.notch_center);
            take(f, "notch_q", s.notch_q);
            take(f, "median_short_ms", s.median_short_ms);
            take(f, "median_long_ms", s.median_long_ms);
        }
        if (j.contains("denoise")) {
            check_keys(j.at("denoise"), {"c_noise"}, "denoise");
            take(j.at("denoise"), "c_noise", decompose.denoise.c_noise);
        }
        if (j.contains("decompose")) {
            const auto &d = j.at("decompose");
            check_keys(d, {"grid_steps", "iterations", "nonlocal_k", "working_fs"}, "decompose");
            take(d, "grid_steps", decompose.grid_steps);
            take(d, "iterations", decompose.iterations);
            take(d, "nonlocal_k", decompose.nonlocal_k);
            take(d, "working_fs", decompose.working_fs);
        }
        if (j.contains("rpeak")) {
            const auto &r = j.at("rpeak");
            check_keys(r, {"maternal_band", "fetal_band", "window_s", "hop_s", "gamma", "ihr_penalty_per_hz",
                           "search_radius_ms", "rhythm_weight", "missed_beat_cost", "vote_window_ms", "fusion_keep"},
                       "rpeak");
            auto &c = decompose.rpeak;
            take_band(r, "maternal_band", c.maternal);
            take_band(r, "fetal_band", c.fetal);
            for (auto *p : {&c.maternal, &c.fetal}) {
                take(r, "window_s", p->window_s);
                take(r, "hop_s", p->hop_s);
                take(r, "gamma", p->gamma);
            }
            take(r, "ihr_penalty_per_hz", c.ihr_penalty_per_hz);
            take(r, "search_radius_ms", c.search_radius_ms);
            take(r, "rhythm_weight", c.rhythm_weight);
            take(r, "missed_beat_cost", c.missed_beat_cost);
            take(r, "vote_window_ms", c.vote_window_ms);
            take(r, "fusion_keep", c.fusion_keep);
        }
        if (j.contains("simulate")) {
            const auto &s = j.at("simulate");
            check_keys(s, {"r", "snr_db", "duration_s", "out_fs", "angles"}, "simulate");
            take(s, "r", sim.r);
            take(s, "snr_db", sim.snr_db);
            take(s, "duration_s", sim.duration_s);
            take(s, "out_fs", sim.out_fs);
            if (s.contains("angles")) {
                sim.angles.clear();
                for (const auto &a : s.at("angles")) {
                    const auto pair = a.get<std::vector<double>>();
                    if (pair.size() != 2) throw ArgumentError("config: each angle entry needs [theta_xy, theta_z]");
                    sim.angles.emplace_back(pair[0], pair[1]);
                }
            }
        }
        if (j.contains("evaluate")) {
            const auto &e = j.at("evaluate");
            check_keys(e, {"window_ms", "windows", "pt_windows"}, "evaluate");
            take(e, "window_ms", eval.window_ms);
            take(e, "windows", eval.windows);
            if (e.contains("pt_windows")) {
                const auto &w = e.at("pt_windows");
                check_keys(w, {"p_ms", "q_ms", "s_ms", "t_ms", "t_rr_fraction", "floor_fraction"}, "pt_windows");
                auto range = [&](const char *key, double &lo, double &hi) {
                    if (!w.contains(key)) return;
                    const auto v = w.at(key).get<std::vector<double>>();
                    if (v.size() != 2) throw ArgumentError(std::string("config: ") + key + " needs [lo, hi]");
                    lo = v[0];
                    hi = v[1];
                };
                range("p_ms", eval.pt.p_lo, eval.pt.p_hi);
                range("q_ms", eval.pt.q_lo, eval.pt.q_hi);
                range("s_ms", eval.pt.s_lo, eval.pt.s_hi);
                range("t_ms", eval.pt.t_lo, eval.pt.t_hi);
                take(w, "t_rr_fraction", eval.pt.t_rr_fraction);
                take(w, "floor_fraction", eval.pt.floor_fraction);
            }
        }
    } catch (const json::exception &e) {
        throw ArgumentError(std::string("config: ") + e.what());
    }
}

ojson PipelineConfig::to_json() const {
    const auto &f = decompose.filter;
    const auto &r = decompose.rpeak;
    ojson angles = ojson::array();
    for (const auto &[a, b] : sim.angles) angles.push_back({a, b});
    return {{"seed", seed},
            {"records", records},
            {"donors", donors},
            {"sweep", sweep},
            {"filter",
             {{"lowpass_order", f.lowpass_order},
              {"lowpass_cutoff", f.lowpass_cutoff},
              {"notch_center", f.notch_center},
              {"notch_q", f.notch_q},
              {"median_short_ms", f.median_short_ms},
              {"median_long_ms", f.median_long_ms}}},
            {"denoise", {{"c_noise", decompose.denoise.c_noise}}},
            {"decompose",
             {{"grid_steps", decompose.grid_steps},
              {"iterations", decompose.iterations},
              {"nonlocal_k", decompose.nonlocal_k},
              {"working_fs", decompose.working_fs}}},
            {"rpeak",
             {{"maternal_band", {r.maternal.f_lo, r.maternal.f_hi}},
              {"fetal_band", {r.fetal.f_lo, r.fetal.f_hi}},
              {"window_s", r.maternal.window_s},
              {"hop_s", r.maternal.hop_s},
              {"gamma", r.maternal.gamma},
              {"ihr_penalty_per_hz", r.ihr_penalty_per_hz},
              {"search_radius_ms", r.search_radius_ms},
              {"rhythm_weight", r.rhythm_weight},
              {"missed_beat_cost", r.missed_beat_cost},
              {"vote_window_ms", r.vote_window_ms},
              {"fusion_keep", r.fusion_keep}}},
            {"simulate",
             {{"r", sim.r},
              {"snr_db", sim.snr_db},
              {"duration_s", sim.duration_s},
              {"out_fs", sim.out_fs},
              {"angles", angles}}},
            {"evaluate",
             {{"window_ms", eval.window_ms}, {"windows", eval.windows}, {"pt_windows", fecg::to_json(eval.pt)}}}};
}

PipelineConfig load_pipeline_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error &e) {
        throw ParseError(path.string(), 0, e.what());
    }
    PipelineConfig cfg;
    cfg.merge_json(j);
    return cfg;
}

std::vector<std::pair<double, double>> sweep_conditions() {
    std::vector<std::pair<double, double>> out;
    for (double r : {1.0 / 4, 1.0 / 6, 1.0 / 8})
        for (double snr : {20.0, 10.0, 5.0}) out.emplace_back(r, snr);
    return out;
}

Signal truth_fetal_signal(const Eigen::MatrixXd &fecg, const Eigen::VectorXd &theta, int fs, const FilterSpec &spec) {
    if (fecg.cols() != theta.size()) throw ArgumentError("truth_fetal_signal: theta does not match channel count");
    return preprocess(Signal(fecg * theta), fs, spec);
}

void write_json(const ojson &j, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

namespace {

void evaluate_one(const SimRecord &sim, const PipelineConfig &cfg, RecordScores &scores, RecordDetail &detail) {
    const auto &truth_r = sim.record.annotations.at(ann::fetal_r);
    DecomposeConfig dc = cfg.decompose;
    dc.jobs = 1;
    try {
        const auto out = decompose(sim.record, dc);
        detail.theta_index = out.theta_index;
        detail.theta_star.assign(out.theta_star.data(), out.theta_star.data() + out.theta_star.size());
        detail.identity_residual = (out.z_theta_star - (out.mecg + out.rfecg)).cwiseAbs().maxCoeff();
        const auto mm = match_peaks(sim.record.annotations.at(ann::maternal_r), out.maternal_peaks, cfg.eval.window_ms);
        detail.maternal_f1 = f1(mm);
        Eigen::MatrixXd fecg = sim.fecg;
        if (sim.record.fs != out.fs) {
            Eigen::MatrixXd up(out.fecg.size(), fecg.cols());
            for (Eigen::Index j = 0; j < fecg.cols(); ++j) up.col(j) = resample(Signal(fecg.col(j)), sim.record.fs, out.fs);
            fecg = std::move(up);
        }
        const Signal truth = truth_fetal_signal(fecg, out.theta_star, out.fs, cfg.decompose.filter);
        scores = evaluate_record(truth, truth_r, out.fecg, out.fetal_peaks, out.fs, cfg.eval);
    } catch (const DataError &e) {
        log::warn("pipeline", sim.record.name + ": " + e.what());
        detail.error = e.what();
        const double nan = std::numeric_limits<double>::quiet_NaN();
        scores = RecordScores{};
        scores.fn = truth_r.size();
        scores.f1 = 0;
        scores.mae_ms = nan;
        for (double w : cfg.eval.windows) scores.f1_at[w] = 0;
        scores.nmae_p = scores.nmae_r = scores.nmae_t = nan;
        scores.nmde_pr = scores.nmde_qt = scores.nmde_st = nan;
    }
}

void write_boxplots(const std::vector<ConditionResult> &conds, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "condition,metric,count,q1,median,q3,whisker_lo,whisker_hi,outliers\n";
    const std::vector<std::pair<std::string, double RecordScores::*>> metrics{
        {"f1", &RecordScores::f1},           {"mae_ms", &RecordScores::mae_ms},   {"nmae_P", &RecordScores::nmae_p},
        {"nmae_R", &RecordScores::nmae_r},   {"nmae_T", &RecordScores::nmae_t},   {"nmde_PR", &RecordScores::nmde_pr},
        {"nmde_QT", &RecordScores::nmde_qt}, {"nmde_ST", &RecordScores::nmde_st}};
    for (const auto &c : conds) {
        for (const auto &[name, member] : metrics) {
            std::vector<double> v;
            for (const auto &[rec, s] : c.report.per_recording)
                if (std::isfinite(s.*member)) v.push_back(s.*member);
            out << '"' << label(c.r, c.snr_db) << "\"," << name << ',' << v.size();
            if (v.empty()) {
                out << ",,,,,,\n";
                continue;
            }
            const auto b = boxplot(v);
            out << ',' << format_double(b.q1) << ',' << format_double(b.median) << ',' << format_double(b.q3) << ','
                << format_double(b.whisker_lo) << ',' << format_double(b.whisker_hi) << ',';
            for (std::size_t i = 0; i < b.outliers.size(); ++i) out << (i ? ";" : "") << format_double(b.outliers[i]);
            out << '\n';
        }
    }
}

} // namespace

PipelineResult run_pipeline(const PipelineConfig &config, bool write_outputs) {
    config.validate();
    const unsigned jobs = config.jobs ? config.jobs : default_jobs();
    const double dur = config.sim.duration_s;
    const auto maternal = synthetic_maternal_donors(config.donors, dur + 3.0, config.seed);
    const auto fetal = synthetic_fetal_donors(config.donors, 2.0 * dur + 2.0, config.seed);

    std::vector<std::pair<double, double>> conds =
        config.sweep ? sweep_conditions() : std::vector<std::pair<double, double>>{{config.sim.r, config.sim.snr_db}};

    PipelineResult result;
    ojson per = ojson::object();
    ojson agg = ojson::object();
    ojson cond_list = ojson::array();
    for (const auto &[r, snr] : conds) {
        SimConfig sc = config.sim;
        sc.r = r;
        sc.snr_db = snr;
        sc.seed = config.seed;
        log::info("pipeline", "condition " + label(r, snr));
        const auto data = generate_dataset(maternal, fetal, sc, config.records, jobs);

        std::vector<RecordScores> scores(data.size());
        std::vector<RecordDetail> details(data.size());
        parallel_for(data.size(), jobs, [&](std::size_t i) { evaluate_one(data[i], config, scores[i], details[i]); });

        ConditionResult cr;
        cr.r = r;
        cr.snr_db = snr;
        cr.report.config = config.eval;
        for (std::size_t i = 0; i < data.size(); ++i) {
            cr.report.per_recording[data[i].record.name] = scores[i];
            cr.details[data[i].record.name] = details[i];
        }
        const auto rep = cr.report.to_json();
        const auto name = label(r, snr);
        for (const auto &[rec, entry] : rep.at("per_recording").items()) {
            ojson e = entry;
            const auto &d = cr.details.at(rec);
            e["theta_index"] = d.theta_index;
            e["theta_star"] = d.theta_star;
            e["maternal_f1"] = d.maternal_f1;
            if (!d.error.empty()) e["error"] = d.error;
            per[name + "/" + rec] = e;
        }
        agg[name] = rep.at("aggregates");
        cond_list.push_back({{"label", name}, {"r", r}, {"snr_db", snr}, {"records", data.size()}});
        result.conditions.push_back(std::move(cr));
    }
    result.report = {{"per_recording", per},
                     {"aggregates", agg},
                     {"conditions", cond_list},
                     {"config", config.to_json()}};

    if (write_outputs) {
        std::filesystem::create_directories(config.out);
        write_json(result.report, config.out / "report.json");
        write_boxplots(result.conditions, config.out / "boxplot.csv");
        write_json({{"version", version},
                    {"seed", config.seed},
                    {"jobs", jobs},
                    {"out", config.out.string()},
                    {"config", config.to_json()}},
                   config.out / "run_meta.json");
    }
    return result;
}

} // namespace fecg
