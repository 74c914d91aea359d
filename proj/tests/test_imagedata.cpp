#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fpsr/imagedata.hpp"
#include "fpsr/quality.hpp"

using namespace fpsr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "fpsr_unit";
    fs::create_directories(dir);
    return dir / name;
}

void write_pgm(const fs::path& p, int h, int w, int value) {
    std::ofstream out(p, std::ios::binary);
    out << "P5\n" << w << ' ' << h << "\n255\n";
    for (int i = 0; i < h * w; ++i) out.put(static_cast<char>(value));
}

FingerprintImage ramp(int h, int w) {
    FingerprintImage img(h, w, 1000.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) img.at(r, c) = (r * w + c) / static_cast<double>(h * w);
    return img;
}

PorePointSet pts(std::vector<PorePoint> p, int h, int w) {
    PorePointSet s;
    s.points = std::move(p);
    s.image_height = h;
    s.image_width = w;
    return s;
}

}  // namespace

TEST_CASE("load_image scales by the format maximum") {
    write_pgm(scratch("white.pgm"), 6, 5, 255);
    write_pgm(scratch("black.pgm"), 6, 5, 0);
    const auto w = load_image(scratch("white.pgm"), 1200);
    CHECK(w.height == 6);
    CHECK(w.width == 5);
    CHECK(w.ppi == 1200);
    for (double v : w.data) CHECK(v == 1.0);
    for (double v : load_image(scratch("black.pgm"), 500).data) CHECK(v == 0.0);
    write_pgm(scratch("polyu.pgm"), 320, 240, 128);
    const auto p = load_image(scratch("polyu.pgm"), 1200);
    CHECK(p.height == 320);
    CHECK(p.width == 240);
    CHECK_THROWS(load_image(scratch("missing.png"), 500));
}

TEST_CASE("PNG round trip at 16 bits") {
    const auto img = ramp(13, 9);
    save_image(img, scratch("ramp.png"), 16);
    const auto back = load_image(scratch("ramp.png"), 1000);
    REQUIRE(back.same_size(img));
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5 / 65535.0 + 1e-12);
    save_image(img, scratch("ramp8.pgm"), 8);
    const auto b8 = load_image(scratch("ramp8.pgm"), 1000);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(b8.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("pore annotations") {
    CHECK(parse_pore_annotations("", 50, 50).empty());
    const auto dup = parse_pore_annotations("10 20\n10 20\n", 50, 50);
    REQUIRE(dup.size() == 1);
    CHECK(dup.points[0] == PorePoint{10, 20});
    const auto near = parse_pore_annotations("# comment\n5 5\n\n5.4 5.4\n", 50, 50);
    REQUIRE(near.size() == 1);
    CHECK(near.points[0].row == doctest::Approx(5.2));
    CHECK(near.points[0].col == doctest::Approx(5.2));
    const auto apart = parse_pore_annotations("5 5\n5 7\n", 50, 50);
    CHECK(apart.size() == 2);
    save_pore_annotations(apart, scratch("pores.txt"));
    FingerprintImage img(50, 50, 1000.0);
    CHECK(load_pore_annotations(scratch("pores.txt"), img).points == apart.points);
}

TEST_CASE("box degradation") {
    FingerprintImage half(8, 6, 1000.0, 0.5);
    const auto lr = degrade_to_lr(half, 2);
    CHECK(lr.height == 4);
    CHECK(lr.width == 3);
    CHECK(lr.ppi == 500.0);
    for (double v : lr.data) CHECK(v == 0.5);
    CHECK(degrade_to_lr(FingerprintImage(80, 60, 1000.0), 2).height == 40);
    CHECK(degrade_to_lr(FingerprintImage(80, 60, 1000.0), 2).width == 30);
    FingerprintImage checker(4, 4, 1000.0);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) checker.at(r, c) = (r + c) % 2;
    for (double v : degrade_to_lr(checker, 2).data) CHECK(v == 0.5);
}

TEST_CASE("upsampling baselines") {
    const auto lr = ramp(5, 4);
    const auto nn = upsample_nearest(lr, 2);
    CHECK(nn.height == 10);
    CHECK(nn.at(3, 5) == lr.at(1, 2));
    FingerprintImage flat(5, 4, 500.0, 0.3);
    for (double v : upsample_bicubic(flat, 2).data) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(upsample_bicubic(flat, 2).ppi == 1000.0);
}

TEST_CASE("pore map rendering") {
    for (double v : render_pore_map(pts({}, 10, 10), 1.0).data) CHECK(v == 0.0);
    const auto one = render_pore_map(pts({{10, 10}}, 21, 21), 1.0);
    int best = 0;
    for (int i = 1; i < static_cast<int>(one.size()); ++i)
        if (one.data[i] > one.data[best]) best = i;
    CHECK(best == 10 * 21 + 10);
    int ties = 0;
    for (double v : one.data) ties += v == one.data[best];
    CHECK(ties == 1);

    const auto two = render_pore_map(pts({{10, 9}, {10, 11}}, 21, 21), 1.0);
    for (int r = 0; r < 21; ++r)
        for (int c = 0; c < 21; ++c) {
            // Each footprint is cut at 4 sigma.
            auto bump = [&](double pc) {
                const double dr = r - 10.0, dc = c - pc;
                return std::abs(dr) <= 4 && std::abs(dc) <= 4 ? std::exp(-(dr * dr + dc * dc) / 2.0) : 0.0;
            };
            const double g = bump(9.0) + bump(11.0);
            CHECK(two.at(r, c) == doctest::Approx(std::min(1.0, g)).epsilon(1e-12));
        }
    CHECK(default_pore_sigma(1200) == doctest::Approx(2.0));
}

TEST_CASE("patch extraction") {
    const auto img = ramp(80, 60);
    const auto one = extract_patches(img, pts({}, 80, 60), 80, 60, 13, 7);
    REQUIRE(one.size() == 1);
    CHECK(one[0].image.data == img.data);

    const auto big = ramp(320, 240);
    const auto pores = pts({{100, 100}}, 320, 240);
    const auto patches = extract_patches(big, pores, 80, 60, 40, 30);
    CHECK(patches.size() == 49);
    int covering = 0;
    for (const auto& p : patches) {
        const bool covers = p.row0 <= 100 && 100 < p.row0 + 80 && p.col0 <= 100 && 100 < p.col0 + 60;
        if (covers) {
            ++covering;
            REQUIRE(p.pores.size() == 1);
            CHECK(p.pores.points[0] == PorePoint{100.0 - p.row0, 100.0 - p.col0});
        } else {
            CHECK(p.pores.empty());
        }
    }
    CHECK(covering == 2 * 2);
}

TEST_CASE("augmentation") {
    const auto img = ramp(16, 12);
    const auto sample = make_training_sample({img, pts({{4, 3}}, 16, 12), 0, 0}, 2, 1.0);
    CHECK(sample.lr_patch.height == 8);
    CHECK(sample.hr_pore_map.height == 16);

    const auto same = augment(sample, {}, 7, 2);
    CHECK(same.hr_patch.data == sample.hr_patch.data);
    CHECK(same.lr_patch.data == sample.lr_patch.data);
    CHECK(same.hr_pore_map.data == sample.hr_pore_map.data);

    const auto twice = augment(augment(sample, {Augment::HFlip}, 3, 2), {Augment::HFlip}, 3, 2);
    CHECK(twice.hr_patch.data == sample.hr_patch.data);
    CHECK(apply_hflip(apply_hflip(sample)).hr_pore_map.data == sample.hr_pore_map.data);
    CHECK(apply_vflip(apply_vflip(sample)).hr_patch.data == sample.hr_patch.data);

    FingerprintImage half(8, 8, 1000.0, 0.5);
    const auto g = apply_gamma(make_training_sample({half, pts({}, 8, 8), 0, 0}, 2, 1.0), 2.0);
    for (double v : g.hr_patch.data) CHECK(v == doctest::Approx(0.25));
    // LR is re-derived from the transformed HR.
    CHECK(g.lr_patch.data == degrade_to_lr(g.hr_patch, 2).data);

    const auto a = augment(sample, {Augment::Gamma, Augment::Scale, Augment::HFlip, Augment::VFlip}, 11, 2);
    const auto b = augment(sample, {Augment::Gamma, Augment::Scale, Augment::HFlip, Augment::VFlip}, 11, 2);
    CHECK(a.hr_patch.data == b.hr_patch.data);
    CHECK(a.lr_patch.data == degrade_to_lr(a.hr_patch, 2).data);
}

TEST_CASE("manifest round trip") {
    Manifest m;
    ManifestRecord r;
    r.image = "images/a.png";
    r.annotations = "pores/a.txt";
    r.subject_id = "s1";
    r.session_id = "1";
    r.impression = 2;
    r.ppi = 1000;
    r.shift_row = 1.5;
    m.records.push_back(r);
    save_manifest(m, scratch("manifest.json"));
    const auto back = load_manifest(scratch("manifest.json"));
    REQUIRE(back.records.size() == 1);
    CHECK(back.records[0].subject_id == "s1");
    CHECK(back.records[0].shift_row == 1.5);
    CHECK(back.resolve(back.records[0].image) == scratch("") / "images/a.png");
}

TEST_CASE("psnr and ssim") {
    const auto a = ramp(20, 20);
    CHECK(psnr(a, a) == kPsnrCap);
    FingerprintImage b = a;
    for (auto& v : b.data) v += 0.1;
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));
    CHECK(psnr(a, b) == psnr(b, a));
    double prev = kPsnrCap + 1;
    for (double amp : {0.01, 0.02, 0.05, 0.1, 0.2}) {
        FingerprintImage n = a;
        for (std::size_t i = 0; i < n.size(); ++i) n.data[i] += (i % 2 ? amp : -amp);
        const double p = psnr(a, n);
        CHECK(p < prev);
        prev = p;
    }
    CHECK_THROWS(psnr(a, ramp(20, 21)));
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ssim(a, b) < 1.0);
    const auto q = quality_report(a, b);
    CHECK(q.ssim >= 0.0);
    CHECK(q.ssim <= 1.0);
}

TEST_CASE("quality histogram") {
    const auto e = quality_histogram({}, 4, 0, 1);
    CHECK(e.counts == std::vector<long>{0, 0, 0, 0});
    const auto h = quality_histogram({0, 50, 100}, 2, 0, 100);
    CHECK(h.counts == std::vector<long>{1, 2});
    CHECK(quality_histogram({100, 0, 50}, 2, 0, 100).counts == h.counts);
    CHECK(quality_histogram({-1, 101}, 2, 0, 100).counts == std::vector<long>{0, 0});
    CHECK_THROWS(quality_histogram({1}, 2, 5, 5));
    CHECK_THROWS(quality_histogram({1}, 0, 0, 5));
}
