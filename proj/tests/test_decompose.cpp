#include "fecg/decompose.hpp"
#include "fecg/evaluate.hpp"
#include "fecg/simulate.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace fecg;
namespace ts = testing_support;

namespace {

SimRecord simulated(std::uint64_t seed, double r = 0.25, double snr = 20.0) {
    SimConfig cfg;
    cfg.seed = seed;
    cfg.r = r;
    cfg.snr_db = snr;
    auto sims = generate_dataset(synthetic_maternal_donors(1, 60, seed), synthetic_fetal_donors(1, 116, seed), cfg, 1);
    REQUIRE(sims.size() == 1);
    return sims.front();
}

Signal periodic(double period_ms, Eigen::Index n, double first_ms = 400) {
    const auto times = ts::regular_times(first_ms, period_ms, static_cast<double>(n) - 200);
    return ts::pulse_train(times, 1000, n, 10.0) - 0.3 * ts::pulse_train(times, 1000, n, 40.0) +
           0.2 * ts::pulse_train([&] {
               auto t = times;
               for (auto &v : t) v += 250;
               return t;
           }(), 1000, n, 50.0);
}

} // namespace

TEST_CASE("grid sizes and norms") {
    const auto g1 = CombinationGrid::standard(1);
    CHECK(g1.size() == 2);
    CHECK(g1.thetas(0, 0) == 1.0);
    CHECK(g1.thetas(0, 1) == -1.0);

    const auto g2 = CombinationGrid::standard(2);
    REQUIRE(g2.size() == 14);
    for (Eigen::Index k = 0; k < g2.size(); ++k) {
        CHECK(g2.theta(k).norm() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(g2.thetas(1, k) >= 0.0);
        CHECK(g2.thetas(0, k) == doctest::Approx(-1.0 + 2.0 * double(k + 1) / 14.0));
    }
    CHECK(g2.thetas(0, 13) == 1.0);

    const auto g3 = CombinationGrid::standard(3);
    CHECK(g3.size() > 14);
    for (Eigen::Index k = 0; k < g3.size(); ++k) {
        CHECK(g3.theta(k).norm() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(g3.thetas(2, k) >= 0.0);
    }
    CHECK_THROWS_AS(CombinationGrid::standard(4), ArgumentError);
}

TEST_CASE("linear combinations") {
    const Eigen::MatrixXd x = ts::gaussian(500, 2, 1);
    CombinationGrid g;
    g.thetas.resize(2, 2);
    g.thetas << 1.0, M_SQRT1_2, 0.0, -M_SQRT1_2;
    Eigen::MatrixXd same(500, 2);
    same << x.col(0), x.col(0);
    const auto z = linear_combinations(same, g);
    CHECK(z.col(0) == x.col(0));
    CHECK(z.col(1).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(linear_combinations(ts::gaussian(10, 3, 1), g), ArgumentError);
    g.thetas(0, 0) = 2.0;
    CHECK_THROWS_AS(linear_combinations(x, g), ArgumentError);
}

TEST_CASE("segment: regular beats") {
    const Signal z = ts::gaussian(20000, 1, 2);
    const auto peaks = PeakList(ts::regular_times(100, 800, 19700));
    const auto seg = segment(z, peaks, 1000);
    CHECK(seg.w == 800);
    CHECK(seg.data.rows() == 801);
    CHECK(seg.peak_offset == 300);
    CHECK(seg.source_peaks[0] == 900.0);
    for (Eigen::Index i = 0; i < seg.cycles(); ++i)
        CHECK(seg.data(seg.peak_offset, i) == z(seg.centers[static_cast<std::size_t>(i)]));
}

TEST_CASE("segment: window from the 95% quantile") {
    const PeakList peaks({1000, 1700, 2400, 3100, 4000, 5500});
    const auto seg = segment(Signal::Zero(8000), peaks, 1000);
    const double q = ts::quantile7({700, 700, 700, 900, 1500}, 0.95);
    CHECK(q == doctest::Approx(1380.0));
    CHECK(seg.w == std::lround(q));
}

TEST_CASE("segment: too few cycles") {
    CHECK_THROWS_AS(segment(Signal::Zero(5000), PeakList({1000, 2000}), 1000), TooShortError);
}

TEST_CASE("stitch: separate windows are copied, overlaps cross-fade") {
    Eigen::MatrixXd cyc = Eigen::MatrixXd::Ones(11, 3);
    cyc.col(1) *= 2;
    const auto apart = stitch(cyc, {10, 40, 70}, 5, 100);
    CHECK(apart(10) == 1.0);
    CHECK(apart(40) == 2.0);
    CHECK(apart(0) == 0.0);
    const auto close = stitch(Eigen::MatrixXd::Ones(11, 3), {10, 16, 22}, 5, 40);
    for (Eigen::Index t = 5; t <= 27; ++t) CHECK(close(t) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("estimate_component reproduces a periodic signal") {
    const Eigen::Index n = 30000;
    const Signal z = periodic(800, n);
    const auto peaks = PeakList(ts::regular_times(400, 800, static_cast<double>(n) - 200));
    const auto est = estimate_component(z, peaks, 1000);
    CHECK_FALSE(est.median_fallback);
    const auto &c = est.segments.centers;
    const Eigen::Index lo = c.front() - est.segments.peak_offset;
    const Eigen::Index hi = c.back() + (est.segments.data.rows() - 1 - est.segments.peak_offset);
    const Signal err = (est.component - z).segment(lo, hi - lo + 1);
    CHECK(err.norm() <= 0.01 * z.segment(lo, hi - lo + 1).norm());
}

TEST_CASE("estimate_component removes noise") {
    const Eigen::Index n = 30000;
    const Signal clean = periodic(800, n);
    const Signal z = clean + 0.05 * ts::gaussian(n, 1, 3);
    const auto peaks = PeakList(ts::regular_times(400, 800, static_cast<double>(n) - 200));
    const auto est = estimate_component(z, peaks, 1000);
    const Eigen::Index lo = 2000, hi = 27000;
    CHECK((est.component - clean).segment(lo, hi - lo).norm() < 0.5 * (z - clean).segment(lo, hi - lo).norm());
    CHECK(est.kept_rank >= 1);
}

TEST_CASE("estimate_component falls back to the median template") {
    const Signal z = periodic(800, 6000);
    const auto est = estimate_component(z, PeakList(ts::regular_times(400, 800, 5800)), 1000);
    CHECK(est.median_fallback);
    CHECK(est.segments.cycles() < 8);
}

TEST_CASE("nonlocal median") {
    SegmentMatrix seg;
    seg.data = ts::gaussian(50, 1, 4).replicate(1, 20);
    for (int i = 0; i < 20; ++i) seg.rr_ms.push_back(800 + 3 * i);
    const auto same = nonlocal_median(seg, 4);
    CHECK(same.data == seg.data);

    const Eigen::VectorXd tmpl = seg.data.col(0);
    seg.data.col(7) += ts::gaussian(50, 1, 5);
    const auto out = nonlocal_median(seg, 4);
    CHECK((out.data.col(7) - tmpl).norm() <= 0.01 * tmpl.norm());
    CHECK_THROWS_AS(nonlocal_median(seg, 20), ArgumentError);
    CHECK_THROWS_AS(nonlocal_median(seg, 1), ArgumentError);
}

TEST_CASE("exact_split: pieces add back to the mixture") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Signal z = ts::gaussian(5000, 1, 70 + seed) * std::pow(10.0, double(seed) - 2);
        const Signal m = 0.9 * z + 1e-3 * ts::gaussian(5000, 1, 80 + seed);
        const auto s = exact_split(z, m);
        CHECK((s.m + s.rest - s.z).cwiseAbs().maxCoeff() == 0.0);
        CHECK((s.z - z).cwiseAbs().maxCoeff() <= 1e-12 * z.cwiseAbs().maxCoeff());
        CHECK((s.m - m).cwiseAbs().maxCoeff() <= 1e-12 * z.cwiseAbs().maxCoeff());
    }
}

TEST_CASE("beat agreement and bsqi") {
    CHECK(beat_agreement(PeakList({1000, 2000}), PeakList({1005, 2400})) == 0.5);
    CHECK(beat_agreement(PeakList({1000}), PeakList({1000, 2000})) == 0.0);

    const Signal clean = ts::pulse_train(ts::regular_times(300, 430, 19700), 1000, 20000, 4.0);
    CHECK(bsqi(clean, 1000) == 1.0);

    // Both detectors chase the same energy bursts in white noise, so agreement sits above chance
    // (about 0.25 here) but well below a real rhythm.
    std::vector<double> noise, noisy_beats;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Signal w = ts::gaussian(20000, 1, 300 + seed);
        noise.push_back(bsqi(w, 1000));
        noisy_beats.push_back(bsqi(Signal(4.0 * clean + 0.3 * w), 1000));
    }
    CHECK(median(noise) <= 0.6);
    CHECK(median(noisy_beats) >= 0.95);
    CHECK_THROWS_AS(bsqi(Signal::Zero(3000), 1000), ArgumentError);
}

TEST_CASE("select_best picks the lowest index on ties") {
    CHECK(select_best({0.5, 0.9, 0.9, 0.1}) == 1);
    CHECK(select_best({0.0}) == 0);
    CHECK_THROWS_AS(select_best({}), ArgumentError);
}

TEST_CASE("decompose a simulated two-channel record") {
    const auto sim = simulated(11);
    const auto out = decompose(sim.record);
    CHECK(out.grid.size() == 14);
    CHECK(out.sqi.size() == 14);
    CHECK((out.z_theta_star - (out.mecg + out.rfecg)).cwiseAbs().maxCoeff() == 0.0);
    const auto m = match_peaks(sim.record.annotations.at(ann::fetal_r), out.fetal_peaks, 50.0);
    CHECK(f1(m) >= 0.95);
    CHECK(f1(match_peaks(sim.record.annotations.at(ann::maternal_r), out.maternal_peaks, 50.0)) >= 0.95);
    CHECK(out.fecg.size() == sim.record.length());
    CHECK_FALSE(out.labels_swapped);
}

TEST_CASE("decompose is unchanged by scaling and by the worker count") {
    const auto sim = simulated(12);
    DecomposeConfig cfg;
    cfg.jobs = 1;
    const auto a = decompose(sim.record, cfg);
    Record scaled = sim.record;
    scaled.samples *= 10.0;
    cfg.jobs = 4;
    const auto b = decompose(scaled, cfg);
    const auto c = decompose(sim.record, cfg);
    CHECK(a.theta_index == b.theta_index);
    CHECK(a.fetal_peaks == b.fetal_peaks);
    CHECK(a.maternal_peaks == b.maternal_peaks);
    CHECK(a.fecg == c.fecg);
    CHECK(a.sqi == c.sqi);
}

TEST_CASE("decompose runs on one channel and with the nonlocal median") {
    const auto sim = simulated(13);
    Record one = sim.record;
    one.samples = sim.record.samples.leftCols(1);
    one.channel_names.resize(1);
    DecomposeConfig cfg;
    cfg.nonlocal_k = 4;
    const auto out = decompose(one, cfg);
    CHECK(out.grid.size() == 2);
    CHECK((out.z_theta_star - (out.mecg + out.rfecg)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decompose on identical channels either runs or reports a data error") {
    const auto sim = simulated(14);
    Record dup = sim.record;
    dup.samples.col(1) = dup.samples.col(0);
    try {
        const auto out = decompose(dup);
        CHECK(out.grid.size() == 14);
    } catch (const DataError &) {
        CHECK(true);
    }
}

TEST_CASE("decompose rejects bad configuration") {
    const auto sim = simulated(15);
    DecomposeConfig cfg;
    cfg.grid_steps = 0;
    CHECK_THROWS_AS(decompose(sim.record, cfg), ArgumentError);
    cfg = {};
    cfg.nonlocal_k = 1;
    CHECK_THROWS_AS(decompose(sim.record, cfg), ArgumentError);
}
