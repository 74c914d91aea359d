#include "fpsr/imagedata.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace fpsr {

namespace fs = std::filesystem;

Raster::Raster(int h, int w, double fill) : height(h), width(w) {
    if (h < 0 || w < 0) throw std::invalid_argument("negative raster size");
    data.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill);
}

FingerprintImage::FingerprintImage(int h, int w, double ppi_, double fill) : Raster(h, w, fill), ppi(ppi_) {}

void FingerprintImage::validate() const {
    if (height < kMinSide || width < kMinSide) {
        throw std::invalid_argument("image must be at least 8x8, got " + std::to_string(height) + "x" +
                                    std::to_string(width));
    }
    if (!(ppi > 0.0)) throw std::invalid_argument("ppi must be positive");
    if (data.size() != static_cast<std::size_t>(height) * width) {
        throw std::invalid_argument("pixel count does not match image size");
    }
    for (double v : data) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("intensity outside [0,1]");
    }
}

// --------------------------------------------------------------- annotations

PorePointSet dedupe_points(const PorePointSet& pores, double radius) {
    std::vector<PorePoint> pts = pores.points;
    const double r2 = radius * radius;
    // Merging can pull a mean within range of another cluster, so repeat until stable.
    for (bool merged = true; merged;) {
        merged = false;
        const std::size_t n = pts.size();
        std::vector<std::size_t> parent(n);
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](std::size_t i) {
            while (parent[i] != i) i = parent[i] = parent[parent[i]];
            return i;
        };
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dr = pts[i].row - pts[j].row, dc = pts[i].col - pts[j].col;
                if (dr * dr + dc * dc < r2) {
                    const auto a = find(i), b = find(j);
                    if (a != b) {
                        parent[std::max(a, b)] = std::min(a, b);
                        merged = true;
                    }
                }
            }
        }
        if (!merged) break;
        std::vector<double> sr(n, 0.0), sc(n, 0.0);
        std::vector<int> cnt(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto root = find(i);
            sr[root] += pts[i].row;
            sc[root] += pts[i].col;
            ++cnt[root];
        }
        std::vector<PorePoint> next;
        for (std::size_t i = 0; i < n; ++i) {
            if (cnt[i] > 0) next.push_back({sr[i] / cnt[i], sc[i] / cnt[i]});
        }
        pts = std::move(next);
    }
    return {std::move(pts), pores.image_height, pores.image_width};
}

PorePointSet parse_pore_annotations(const std::string& text, int image_height, int image_width) {
    PorePointSet set{{}, image_height, image_width};
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream fields(line);
        std::vector<std::string> tok;
        for (std::string t; fields >> t;) tok.push_back(t);
        if (tok.size() != 2) {
            throw ImageError("annotation line " + std::to_string(lineno) + ": expected 2 fields, got " +
                             std::to_string(tok.size()));
        }
        PorePoint p;
        try {
            std::size_t used0 = 0, used1 = 0;
            p.row = std::stod(tok[0], &used0);
            p.col = std::stod(tok[1], &used1);
            if (used0 != tok[0].size() || used1 != tok[1].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ImageError("annotation line " + std::to_string(lineno) + ": non-numeric coordinate");
        }
        if (!std::isfinite(p.row) || !std::isfinite(p.col) || !set.contains(p)) {
            throw ImageError("annotation line " + std::to_string(lineno) + ": coordinate (" + tok[0] + ", " +
                             tok[1] + ") outside image bounds");
        }
        set.points.push_back(p);
    }
    return dedupe_points(set, 1.0);
}

PorePointSet load_pore_annotations(const fs::path& path, const FingerprintImage& image) {
    std::ifstream in(path);
    if (!in) throw ImageError("cannot open annotations: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_pore_annotations(ss.str(), image.height, image.width);
}

void save_pore_annotations(const PorePointSet& pores, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ImageError("cannot write annotations: " + path.string());
    out << "# row col (" << pores.image_height << "x" << pores.image_width << ")\n";
    char buf[64];
    for (const auto& p : pores.points) {
        std::snprintf(buf, sizeof buf, "%.3f %.3f\n", p.row, p.col);
        out << buf;
    }
}

// ---------------------------------------------------------------- resampling

FingerprintImage degrade_to_lr(const FingerprintImage& hr, int factor) {
    if (factor < 2) throw std::invalid_argument("degradation factor must be >= 2");
    if (hr.height % factor != 0 || hr.width % factor != 0) {
        throw std::invalid_argument("image " + std::to_string(hr.height) + "x" + std::to_string(hr.width) +
                                    " not divisible by factor " + std::to_string(factor));
    }
    FingerprintImage lr(hr.height / factor, hr.width / factor, hr.ppi / factor);
    lr.subject_id = hr.subject_id;
    lr.session_id = hr.session_id;
    const double inv = 1.0 / (factor * factor);
    for (int r = 0; r < lr.height; ++r) {
        for (int c = 0; c < lr.width; ++c) {
            double s = 0.0;
            for (int dr = 0; dr < factor; ++dr) {
                for (int dc = 0; dc < factor; ++dc) s += hr.at(r * factor + dr, c * factor + dc);
            }
            lr.at(r, c) = s * inv;
        }
    }
    return lr;
}

FingerprintImage upsample_nearest(const FingerprintImage& lr, int factor) {
    if (factor < 1) throw std::invalid_argument("upsample factor must be >= 1");
    FingerprintImage hr(lr.height * factor, lr.width * factor, lr.ppi * factor);
    hr.subject_id = lr.subject_id;
    hr.session_id = lr.session_id;
    for (int r = 0; r < hr.height; ++r) {
        for (int c = 0; c < hr.width; ++c) hr.at(r, c) = lr.at(r / factor, c / factor);
    }
    return hr;
}

namespace {

double keys_weight(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
}

double bilinear(const Raster& src, double r, double c, bool clamp_edges, double outside) {
    if (!clamp_edges && (r < -0.5 || c < -0.5 || r > src.height - 0.5 || c > src.width - 0.5)) return outside;
    r = std::clamp(r, 0.0, static_cast<double>(src.height - 1));
    c = std::clamp(c, 0.0, static_cast<double>(src.width - 1));
    const int r0 = std::min(static_cast<int>(r), src.height - 1);
    const int c0 = std::min(static_cast<int>(c), src.width - 1);
    const int r1 = std::min(r0 + 1, src.height - 1);
    const int c1 = std::min(c0 + 1, src.width - 1);
    const double fr = r - r0, fc = c - c0;
    return (1 - fr) * ((1 - fc) * src.at(r0, c0) + fc * src.at(r0, c1)) +
           fr * ((1 - fc) * src.at(r1, c0) + fc * src.at(r1, c1));
}

}  // namespace

FingerprintImage upsample_bicubic(const FingerprintImage& lr, int factor) {
    if (factor < 1) throw std::invalid_argument("upsample factor must be >= 1");
    FingerprintImage hr(lr.height * factor, lr.width * factor, lr.ppi * factor);
    hr.subject_id = lr.subject_id;
    hr.session_id = lr.session_id;
    // Separable: rows first into a (lr.h x hr.w) buffer, then columns.
    Raster tmp(lr.height, hr.width);
    auto taps = [factor](int out, int n, std::array<int, 4>& idx, std::array<double, 4>& w) {
        const double src = (out + 0.5) / factor - 0.5;
        const int base = static_cast<int>(std::floor(src));
        for (int k = 0; k < 4; ++k) {
            const int i = base - 1 + k;
            idx[k] = std::clamp(i, 0, n - 1);
            w[k] = keys_weight(src - i);
        }
    };
    std::array<int, 4> idx{};
    std::array<double, 4> w{};
    for (int c = 0; c < hr.width; ++c) {
        taps(c, lr.width, idx, w);
        for (int r = 0; r < lr.height; ++r) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += w[k] * lr.at(r, idx[k]);
            tmp.at(r, c) = s;
        }
    }
    for (int r = 0; r < hr.height; ++r) {
        taps(r, lr.height, idx, w);
        for (int c = 0; c < hr.width; ++c) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += w[k] * tmp.at(idx[k], c);
            hr.at(r, c) = std::clamp(s, 0.0, 1.0);
        }
    }
    return hr;
}

// ----------------------------------------------------------------- pore maps

double default_pore_sigma(double ppi) { return 2.0 * ppi / 1200.0; }

PoreIntensityMap render_pore_map(const PorePointSet& pores, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
    PoreIntensityMap map(pores.image_height, pores.image_width, 0.0);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const int reach = static_cast<int>(std::ceil(4.0 * sigma));
    for (const auto& p : pores.points) {
        const int r0 = std::max(0, static_cast<int>(std::floor(p.row)) - reach);
        const int r1 = std::min(map.height - 1, static_cast<int>(std::ceil(p.row)) + reach);
        const int c0 = std::max(0, static_cast<int>(std::floor(p.col)) - reach);
        const int c1 = std::min(map.width - 1, static_cast<int>(std::ceil(p.col)) + reach);
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                const double dr = r - p.row, dc = c - p.col;
                map.at(r, c) += std::exp(-(dr * dr + dc * dc) * inv2s2);
            }
        }
    }
    for (double& v : map.data) v = std::min(v, 1.0);
    return map;
}

// ------------------------------------------------------------------- patches

std::vector<Patch> extract_patches(const FingerprintImage& image, const PorePointSet& pores, int patch_h,
                                   int patch_w, int stride_h, int stride_w) {
    if (patch_h <= 0 || patch_w <= 0) throw std::invalid_argument("patch size must be positive");
    if (stride_h < 1 || stride_w < 1) throw std::invalid_argument("stride must be >= 1");
    if (patch_h > image.height || patch_w > image.width) {
        throw std::invalid_argument("patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                                    " larger than image " + std::to_string(image.height) + "x" +
                                    std::to_string(image.width));
    }
    std::vector<Patch> out;
    for (int r0 = 0; r0 + patch_h <= image.height; r0 += stride_h) {
        for (int c0 = 0; c0 + patch_w <= image.width; c0 += stride_w) {
            Patch p;
            p.row0 = r0;
            p.col0 = c0;
            p.image = FingerprintImage(patch_h, patch_w, image.ppi);
            p.image.subject_id = image.subject_id;
            p.image.session_id = image.session_id;
            for (int r = 0; r < patch_h; ++r) {
                std::copy_n(&image.data[static_cast<std::size_t>(r0 + r) * image.width + c0], patch_w,
                            &p.image.data[static_cast<std::size_t>(r) * patch_w]);
            }
            p.pores.image_height = patch_h;
            p.pores.image_width = patch_w;
            for (const auto& q : pores.points) {
                if (q.row >= r0 && q.row < r0 + patch_h && q.col >= c0 && q.col < c0 + patch_w) {
                    p.pores.points.push_back({q.row - r0, q.col - c0});
                }
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

TrainingSample make_training_sample(const Patch& hr_patch, int factor, double sigma) {
    TrainingSample s;
    s.hr_patch = hr_patch.image;
    s.lr_patch = degrade_to_lr(hr_patch.image, factor);
    s.hr_pore_map = render_pore_map(hr_patch.pores, sigma);
    return s;
}

// -------------------------------------------------------------- augmentation

Raster hflip(const Raster& r) {
    Raster out(r.height, r.width);
    for (int y = 0; y < r.height; ++y) {
        for (int x = 0; x < r.width; ++x) out.at(y, x) = r.at(y, r.width - 1 - x);
    }
    return out;
}

Raster vflip(const Raster& r) {
    Raster out(r.height, r.width);
    for (int y = 0; y < r.height; ++y) {
        for (int x = 0; x < r.width; ++x) out.at(y, x) = r.at(r.height - 1 - y, x);
    }
    return out;
}

PorePointSet hflip(const PorePointSet& p) {
    PorePointSet out = p;
    for (auto& q : out.points) q.col = p.image_width - 1 - q.col;
    return out;
}

PorePointSet vflip(const PorePointSet& p) {
    PorePointSet out = p;
    for (auto& q : out.points) q.row = p.image_height - 1 - q.row;
    return out;
}

namespace {

FingerprintImage with_pixels(const FingerprintImage& like, Raster r) {
    FingerprintImage img = like;
    img.data = std::move(r.data);
    return img;
}

PoreIntensityMap as_map(Raster r) {
    PoreIntensityMap m;
    static_cast<Raster&>(m) = std::move(r);
    return m;
}

TrainingSample rebuild(FingerprintImage hr, PoreIntensityMap map, int factor) {
    TrainingSample s;
    s.lr_patch = degrade_to_lr(hr, factor);
    s.hr_patch = std::move(hr);
    s.hr_pore_map = std::move(map);
    return s;
}

Raster rescale_about_centre(const Raster& src, double scale, bool clamp_edges) {
    Raster out(src.height, src.width);
    const double cy = (src.height - 1) / 2.0, cx = (src.width - 1) / 2.0;
    for (int r = 0; r < src.height; ++r) {
        for (int c = 0; c < src.width; ++c) {
            out.at(r, c) = bilinear(src, (r - cy) / scale + cy, (c - cx) / scale + cx, clamp_edges, 0.0);
        }
    }
    return out;
}

}  // namespace

TrainingSample apply_hflip(const TrainingSample& s, int factor) {
    return rebuild(with_pixels(s.hr_patch, hflip(s.hr_patch)), as_map(hflip(s.hr_pore_map)), factor);
}

TrainingSample apply_vflip(const TrainingSample& s, int factor) {
    return rebuild(with_pixels(s.hr_patch, vflip(s.hr_patch)), as_map(vflip(s.hr_pore_map)), factor);
}

TrainingSample apply_gamma(const TrainingSample& s, double gamma, int factor) {
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
    FingerprintImage hr = s.hr_patch;
    for (double& v : hr.data) v = std::pow(v, gamma);
    return rebuild(std::move(hr), s.hr_pore_map, factor);
}

// Image borders are extended by replication; the pore map is padded with zeros.
TrainingSample apply_scale(const TrainingSample& s, double scale, int factor) {
    if (!(scale > 0.0)) throw std::invalid_argument("scale must be positive");
    FingerprintImage hr = with_pixels(s.hr_patch, rescale_about_centre(s.hr_patch, scale, true));
    Raster map = rescale_about_centre(s.hr_pore_map, scale, false);
    for (double& v : map.data) v = std::clamp(v, 0.0, 1.0);
    return rebuild(std::move(hr), as_map(std::move(map)), factor);
}

TrainingSample augment(const TrainingSample& sample, const std::set<Augment>& ops, std::uint64_t rng_seed,
                       int factor, const AugmentRanges& ranges) {
    if (ops.empty()) return sample;
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    // Draw every parameter regardless of which ops are enabled so that a given seed maps
    // to the same transform parameters for any op subset.
    const double scale = ranges.scale_lo + (ranges.scale_hi - ranges.scale_lo) * uni(rng);
    const bool do_h = uni(rng) < 0.5;
    const bool do_v = uni(rng) < 0.5;
    const double gamma = ranges.gamma_lo + (ranges.gamma_hi - ranges.gamma_lo) * uni(rng);

    TrainingSample s = sample;
    if (ops.count(Augment::Scale)) s = apply_scale(s, scale, factor);
    if (ops.count(Augment::HFlip) && do_h) s = apply_hflip(s, factor);
    if (ops.count(Augment::VFlip) && do_v) s = apply_vflip(s, factor);
    if (ops.count(Augment::Gamma)) s = apply_gamma(s, gamma, factor);
    return s;
}

// ------------------------------------------------------------------ manifest

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ImageError("cannot open manifest: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ImageError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    Manifest m;
    m.root = path.has_parent_path() ? path.parent_path() : fs::path(".");
    if (!j.contains("records") || !j["records"].is_array()) {
        throw ImageError("manifest " + path.string() + " has no records array");
    }
    for (const auto& r : j["records"]) {
        ManifestRecord rec;
        try {
            rec.image = r.at("image").get<std::string>();
            rec.annotations = r.value("annotations", std::string{});
            rec.subject_id = r.value("subject_id", std::string{});
            rec.session_id = r.value("session_id", std::string{});
            rec.impression = r.value("impression", 0);
            rec.ppi = r.at("ppi").get<double>();
            rec.shift_row = r.value("shift_row", 0.0);
            rec.shift_col = r.value("shift_col", 0.0);
        } catch (const nlohmann::json::exception& e) {
            throw ImageError("manifest " + path.string() + " has a malformed record: " + e.what());
        }
        m.records.push_back(std::move(rec));
    }
    return m;
}

void save_manifest(const Manifest& manifest, const fs::path& path) {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : manifest.records) {
        recs.push_back({{"image", r.image.generic_string()},
                        {"annotations", r.annotations.generic_string()},
                        {"subject_id", r.subject_id},
                        {"session_id", r.session_id},
                        {"impression", r.impression},
                        {"ppi", r.ppi},
                        {"shift_row", r.shift_row},
                        {"shift_col", r.shift_col}});
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ImageError("cannot write manifest: " + path.string());
    out << nlohmann::json{{"records", recs}}.dump(2) << '\n';
}

}  // namespace fpsr
