#include <doctest.h>

#include "fpsr/imagedata.hpp"
#include "fpsr/poreeval.hpp"
#include "fpsr/synthgen.hpp"
#include "oracles.hpp"

using namespace fpsr;

namespace {

PorePointSet points(std::vector<PorePoint> p, int h = 50, int w = 50) {
    PorePointSet s;
    s.points = std::move(p);
    s.image_height = h;
    s.image_width = w;
    return s;
}

}  // namespace

TEST_CASE("extract_pore_coords basics") {
    CHECK(extract_pore_coords(Raster(20, 20, 0.0), 0.5, 2.0).detected.empty());
    const auto blob = render_pore_map(points({{7.0, 11.0}}, 21, 21), 1.5);
    const auto r = extract_pore_coords(blob, 0.5, 2.0);
    REQUIRE(r.detected.size() == 1);
    CHECK(r.detected.points[0] == PorePoint{7.0, 11.0});
    CHECK(r.scores[0] == doctest::Approx(1.0));
}

TEST_CASE("extract_pore_coords equals the brute-force NMS oracle") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> thr(0.0, 0.9), rad(0.0, 4.0);
    for (int trial = 0; trial < 300; ++trial) {
        const Raster m = oracle::random_map(rng, 20, 20);
        const double t = thr(rng), r = trial % 5 == 0 ? 0.0 : rad(rng);
        const auto got = extract_pore_coords(m, t, r);
        const auto want = oracle::nms(m, t, r);
        CHECK(oracle::same_points(got.detected, want.detected));
        CHECK(got.scores == want.scores);
    }
}

TEST_CASE("NMS ignores added sub-threshold pixels") {
    std::mt19937_64 rng(4);
    Raster m = oracle::random_map(rng, 16, 16);
    for (auto& v : m.data) v = v < 0.6 ? 0.0 : v;
    const auto base = extract_pore_coords(m, 0.6, 2.0);
    Raster noisy = m;
    std::uniform_real_distribution<double> u(0.0, 0.59);
    for (auto& v : noisy.data)
        if (v == 0.0) v = u(rng);
    // Every new value stays below every candidate, so no peak test changes.
    CHECK(oracle::same_points(extract_pore_coords(noisy, 0.6, 2.0).detected, base.detected));
}

TEST_CASE("match_detections examples") {
    const auto truth = points({{10, 10}, {20, 20}, {30, 5}});
    auto same = match_detections(truth, truth, 2.0);
    CHECK(same.tp == 3);
    CHECK(same.fp == 0);
    CHECK(same.fn == 0);
    auto none = match_detections(points({}), truth, 2.0);
    CHECK(none.tp == 0);
    CHECK(none.fp == 0);
    CHECK(none.fn == 3);

    // 3 detections, 2 truths, one detection far away.
    const auto det = points({{10.5, 10}, {19, 20}, {45, 45}});
    const auto two = points({{10, 10}, {20, 20}});
    const auto m = match_detections(det, two, 3.0);
    CHECK(m.tp == oracle::max_assignment(det, two, 3.0));
    CHECK(m.tp == 2);
    CHECK(m.fp == 1);
    CHECK(m.fn == 0);
}

TEST_CASE("match_detections equals the brute-force greedy oracle") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> n(0, 7);
    std::uniform_real_distribution<double> rad(0.5, 5.0);
    for (int trial = 0; trial < 300; ++trial) {
        const auto det = oracle::random_points(rng, n(rng), 15, 15, trial % 2 == 0);
        const auto truth = oracle::random_points(rng, n(rng), 15, 15, trial % 2 == 0);
        const double r = rad(rng);
        const auto got = match_detections(det, truth, r);
        const auto want = oracle::greedy_match(det, truth, r);
        CHECK(got.pairs == want.pairs);
        CHECK(got.tp == want.tp);
        // Greedy can never beat the optimum.
        CHECK(got.tp <= oracle::max_assignment(det, truth, r));
        // Swapping roles swaps FP and FN.
        const auto sw = match_detections(truth, det, r);
        CHECK(sw.tp == got.tp);
        CHECK(sw.fp == got.fn);
        CHECK(sw.fn == got.fp);
    }
}

TEST_CASE("greedy equals the optimum on well separated truth") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> jitter(-1.4, 1.4);
    for (int trial = 0; trial < 100; ++trial) {
        // Truth on a grid 10 px apart; detections within 1.4*sqrt(2) < radius 2.5 of one truth.
        PorePointSet truth = points({}), det = points({});
        for (int r = 5; r < 45; r += 10)
            for (int c = 5; c < 25; c += 10) truth.points.push_back({double(r), double(c)});
        for (const auto& p : truth.points)
            if (rng() % 3 != 0) det.points.push_back({p.row + jitter(rng), p.col + jitter(rng)});
        det.points.push_back({48.0, 48.0});
        CHECK(match_detections(det, truth, 2.5).tp == oracle::max_assignment(det, truth, 2.5));
    }
}

TEST_CASE("larger radius never loses matches") {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        const auto det = oracle::random_points(rng, 6, 20, 20, false);
        const auto truth = oracle::random_points(rng, 6, 20, 20, false);
        long prev = 0;
        for (double r = 0.5; r <= 8.0; r += 0.5) {
            const long tp = match_detections(det, truth, r).tp;
            CHECK(tp >= prev);
            prev = tp;
        }
    }
}

TEST_CASE("detection metrics") {
    const auto a = detection_metrics(943, 4, 57, 5.0);
    CHECK(a.tdr == doctest::Approx(0.943));
    CHECK(a.fdr == doctest::Approx(4.0 / 947.0));
    CHECK(a.fdr == doctest::Approx(0.0042).epsilon(0.01));
    const auto e = detection_metrics(0, 0, 0, 5.0);
    CHECK(e.tdr == 1.0);
    CHECK(e.fdr == 0.0);
    const auto h = detection_metrics(1, 1, 1, 5.0);
    CHECK(h.tdr == 0.5);
    CHECK(h.fdr == 0.5);
    CHECK_THROWS_AS(detection_metrics(-1, 0, 0, 1.0), std::invalid_argument);
    CHECK(default_match_radius(1200) == doctest::Approx(5.0));
    CHECK(default_match_radius(1000) == doctest::Approx(5.0 * 1000 / 1200));
    CHECK(default_nms_radius(1200) == doctest::Approx(3.0));
}

TEST_CASE("threshold sweep pools counts per threshold") {
    const auto truth = points({{10, 10}, {30, 30}});
    const auto map = render_pore_map(truth, 1.5);
    const auto sweep = threshold_sweep({map, map}, {truth, truth}, {0.5, 1.1}, 2.0, 2.0);
    REQUIRE(sweep.size() == 2);
    CHECK(sweep[0].metrics.true_positives == 4);
    CHECK(sweep[0].metrics.tdr == 1.0);
    CHECK(sweep[1].metrics.true_positives == 0);
    CHECK(sweep[1].metrics.false_negatives == 4);
}

TEST_CASE("rendered ground truth maps recover every planted pore") {
    SynthConfig cfg;
    cfg.noise_level = 0.0;
    for (int subject = 0; subject < 3; ++subject) {
        const auto master = render_subject(cfg, subject);
        const auto imp = render_impression(cfg, master, subject, 0, 0);
        const auto map = render_pore_map(imp.pores, default_pore_sigma(cfg.ppi));
        const auto det = extract_pore_coords(map, 0.3, 1.0);
        const auto m = match_detections(det.detected, imp.pores, cfg.pore_radius);
        CHECK(m.tp == static_cast<long>(imp.pores.size()));
    }
}
