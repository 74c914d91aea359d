#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <set>

#include "fpsr/poreeval.hpp"
#include "fpsr/synthgen.hpp"

using namespace fpsr;
using std::numbers::pi;

namespace {

double angle_gap(double a, double b) {
    const double d = std::fmod(std::abs(a - b), pi);
    return std::min(d, pi - d);
}

/// Dominant wavelength along rows or columns, from the line-averaged power spectrum.
double dominant_period(const Raster& img, bool along_rows) {
    const int n = along_rows ? img.width : img.height, lines = along_rows ? img.height : img.width;
    std::vector<double> power(n / 2 + 1, 0.0);
    for (int l = 0; l < lines; ++l) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += along_rows ? img.at(l, i) : img.at(i, l);
        mean /= n;
        for (int k = 1; k <= n / 2; ++k) {
            std::complex<double> acc = 0.0;
            for (int i = 0; i < n; ++i) {
                const double v = (along_rows ? img.at(l, i) : img.at(i, l)) - mean;
                acc += v * std::polar(1.0, -2.0 * pi * k * i / n);
            }
            power[k] += std::norm(acc);
        }
    }
    int best = 1;
    for (int k = 2; k <= n / 2; ++k)
        if (power[k] > power[best]) best = k;
    return static_cast<double>(n) / best;
}

double line_variance(const Raster& img, bool along_rows) {
    double total = 0.0;
    const int n = along_rows ? img.width : img.height, lines = along_rows ? img.height : img.width;
    for (int l = 0; l < lines; ++l) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += along_rows ? img.at(l, i) : img.at(i, l);
        mean /= n;
        for (int i = 0; i < n; ++i) {
            const double v = (along_rows ? img.at(l, i) : img.at(i, l)) - mean;
            total += v * v;
        }
    }
    return total;
}

/// Mean of value at a point minus its 7x7 neighbourhood mean; positive on bright blobs.
double blob_score(const Raster& img, const std::vector<PorePoint>& pts, double dr, double dc) {
    double s = 0.0;
    int n = 0;
    for (const auto& p : pts) {
        const int r = static_cast<int>(std::lround(p.row + dr)), c = static_cast<int>(std::lround(p.col + dc));
        if (r < 3 || c < 3 || r >= img.height - 3 || c >= img.width - 3) continue;
        double local = 0.0;
        for (int y = -3; y <= 3; ++y)
            for (int x = -3; x <= 3; ++x) local += img.at(r + y, c + x);
        s += img.at(r, c) - local / 49.0;
        ++n;
    }
    return n ? s / n : 0.0;
}

}  // namespace

TEST_CASE("generator is deterministic in its seed") {
    SynthConfig cfg;
    const auto a = render_subject(cfg, 1), b = render_subject(cfg, 1);
    CHECK(a.image.data == b.image.data);
    CHECK(a.pores.points == b.pores.points);
    const auto ia = render_impression(cfg, a, 1, 0, 2), ib = render_impression(cfg, b, 1, 0, 2);
    CHECK(ia.image.data == ib.image.data);
    SynthConfig other = cfg;
    other.orientation_seed = 2;
    CHECK(render_subject(other, 1).image.data != a.image.data);
    CHECK(mix_seed(1, 2) != mix_seed(2, 1));
}

TEST_CASE("orientation field modes") {
    SynthConfig cfg;
    cfg.orientation_mode = OrientationMode::Constant;
    cfg.constant_angle = 0.7;
    for (double v : generate_orientation_field(cfg, 3).data) CHECK(v == doctest::Approx(0.7));

    cfg.orientation_mode = OrientationMode::Random;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Raster t = generate_orientation_field(cfg, s);
        double worst = 0.0;
        for (int r = 0; r < t.height; ++r)
            for (int c = 0; c < t.width; ++c) {
                CHECK((t.at(r, c) >= 0.0 && t.at(r, c) < pi));
                if (c + 1 < t.width) worst = std::max(worst, angle_gap(t.at(r, c), t.at(r, c + 1)));
                if (r + 1 < t.height) worst = std::max(worst, angle_gap(t.at(r, c), t.at(r + 1, c)));
            }
        CHECK(worst < pi / 8);
    }
}

TEST_CASE("ridge period shows in the spectrum") {
    for (double period : {8.0, 12.0, 16.0}) {
        SynthConfig cfg;
        cfg.orientation_mode = OrientationMode::Constant;
        cfg.phase_noise = 0.0;
        cfg.minutiae_per_subject = 0;
        cfg.ridge_period = period;
        for (double angle : {0.0, pi / 2}) {
            cfg.constant_angle = angle;
            const auto img = synthesize_ridge_pattern(generate_orientation_field(cfg, 0), cfg, 0);
            // Ridges run along one axis; the intensity oscillates along the other.
            const bool rows = line_variance(img, true) > line_variance(img, false);
            CHECK(std::abs(dominant_period(img, rows) - period) <= 0.1 * period);
        }
    }
}

TEST_CASE("pore density") {
    SynthConfig cfg;
    cfg.pore_density = 0.0;
    const auto ridges = synthesize_ridge_pattern(generate_orientation_field(cfg, 0), cfg, 0);
    const auto [same, none] = plant_pores(ridges, cfg, 5);
    CHECK(none.empty());
    CHECK(same.data == ridges.data);

    cfg.pore_density = 15.0;
    const auto [img, pores] = plant_pores(ridges, cfg, 5);
    CHECK(pores.size() > 20);
    const double spacing = 2 * cfg.pore_radius + 1;
    for (std::size_t i = 0; i < pores.size(); ++i)
        for (std::size_t j = i + 1; j < pores.size(); ++j) {
            const double d = std::hypot(pores.points[i].row - pores.points[j].row,
                                        pores.points[i].col - pores.points[j].col);
            CHECK(d >= spacing - 1e-9);
        }
}

TEST_CASE("dataset layout") {
    SynthConfig cfg;
    cfg.image_h = cfg.image_w = 48;
    cfg.subject_count = 3;
    cfg.session_count = 2;
    cfg.impressions_per_subject = 2;
    const auto dir = std::filesystem::temp_directory_path() / "fpsr_unit" / "synth";
    std::filesystem::remove_all(dir);
    const Manifest m = generate_dataset(cfg, dir);
    CHECK(m.records.size() == 12);
    std::set<std::string> subjects, sessions;
    for (const auto& r : m.records) {
        subjects.insert(r.subject_id);
        sessions.insert(r.session_id);
        CHECK(std::filesystem::exists(dir / r.image));
        CHECK(std::filesystem::exists(dir / r.annotations));
    }
    CHECK(subjects.size() == 3);
    CHECK(sessions == std::set<std::string>{"1", "2"});
    CHECK(load_manifest(dir / "manifest.json").records.size() == 12);
    const auto img = load_image(dir / m.records[0].image, cfg.ppi);
    CHECK(img.height == 48);
}

TEST_CASE("impressions of one subject align and different subjects do not") {
    SynthConfig cfg;
    cfg.noise_level = 0.0;
    const auto master = render_subject(cfg, 0);
    const auto a = render_impression(cfg, master, 0, 0, 0), b = render_impression(cfg, master, 0, 0, 3);
    // Undo each translation: both land in master coordinates.
    auto to_master = [](const Impression& i) {
        PorePointSet s;
        s.image_height = s.image_width = 1000;
        for (const auto& p : i.pores.points) s.points.push_back({p.row + i.shift_row + 500, p.col + i.shift_col + 500});
        return s;
    };
    const auto ma = to_master(a), mb = to_master(b);
    const auto same = match_detections(ma, mb, 0.5);
    const long fewer = std::min(a.pores.size(), b.pores.size());
    CHECK(same.tp >= fewer * 8 / 10);

    const auto other = render_impression(cfg, render_subject(cfg, 1), 1, 0, 0);
    const auto cross = match_detections(a.pores, other.pores, cfg.pore_radius);
    CHECK(cross.tp < 0.3 * static_cast<double>(std::min(a.pores.size(), other.pores.size())));
}

TEST_CASE("warped impressions keep pores on their blobs") {
    SynthConfig cfg;
    cfg.noise_level = 0.0;
    cfg.contrast_jitter = 0.0;
    cfg.max_rotation = 0.15;
    cfg.distortion = 2.5;
    for (int subject = 0; subject < 3; ++subject) {
        const auto master = render_subject(cfg, subject);
        const auto imp = render_impression(cfg, master, subject, 0, 1);
        REQUIRE(imp.pores.size() > 20);
        const double on = blob_score(imp.image, imp.pores.points, 0, 0);
        CHECK(on > 0.0);
        for (auto [dr, dc] : {std::pair{2.0, 0.0}, {0.0, 2.0}, {-2.0, 0.0}, {0.0, -2.0}})
            CHECK(on > blob_score(imp.image, imp.pores.points, dr, dc));
    }
}

TEST_CASE("config validation") {
    SynthConfig cfg;
    cfg.ridge_period = 3;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SynthConfig{};
    cfg.noise_level = 0.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SynthConfig{};
    cfg.pore_radius = 6;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK_NOTHROW(SynthConfig{}.validate());
}
