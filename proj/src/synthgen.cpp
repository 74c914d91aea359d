#include "fpsr/synthgen.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace fpsr {

namespace fs = std::filesystem;
using std::numbers::pi;

void SynthConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("synth config: " + m); };
    if (image_h < FingerprintImage::kMinSide || image_w < FingerprintImage::kMinSide) fail("image must be >= 8x8");
    if (ridge_period < 4.0) fail("ridge_period must be >= 4");
    if (!(pore_radius > 0.0) || pore_radius >= ridge_period / 2.0) fail("pore_radius must be in (0, ridge_period/2)");
    if (noise_level < 0.0 || noise_level > 0.2) fail("noise_level must be in [0, 0.2]");
    if (pore_density < 0.0) fail("pore_density must be >= 0");
    if (subject_count < 1 || impressions_per_subject < 1 || session_count < 1) fail("counts must be >= 1");
    if (!(ppi > 0.0)) fail("ppi must be positive");
    if (max_translation < 0) fail("max_translation must be >= 0");
    if (contrast_jitter < 0.0 || contrast_jitter >= 1.0) fail("contrast_jitter must be in [0,1)");
    if (minutiae_per_subject < 0) fail("minutiae_per_subject must be >= 0");
    if (ridge_family_size < 1) fail("ridge_family_size must be >= 1");
    if (!(max_rotation >= 0.0 && max_rotation <= 0.5)) fail("max_rotation must be in [0, 0.5] radians");
    if (!(distortion >= 0.0 && distortion <= 8.0)) fail("distortion must be in [0, 8] pixels");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finaliser over the combined words
    std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

namespace {

/// Sum of a few random low-frequency cosines with wavelength of at least the image extent.
struct SmoothField {
    struct Wave {
        double fy, fx, phase, amp;
    };
    std::vector<Wave> waves;

    SmoothField(std::mt19937_64& rng, int h, int w, int count, double amplitude) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double extent = std::max(h, w);
        for (int k = 0; k < count; ++k) {
            const double dir = 2.0 * pi * u(rng);
            const double wavelength = extent * (1.0 + 1.5 * u(rng));
            waves.push_back({std::sin(dir) / wavelength, std::cos(dir) / wavelength, 2.0 * pi * u(rng),
                             amplitude * (0.5 + 0.5 * u(rng)) / std::sqrt(static_cast<double>(count))});
        }
    }

    double operator()(double y, double x) const {
        double s = 0.0;
        for (const auto& w : waves) s += w.amp * std::cos(2.0 * pi * (w.fy * y + w.fx * x) + w.phase);
        return s;
    }
};

double wrap_pi(double a) {
    a = std::fmod(a, pi);
    return a < 0.0 ? a + pi : a;
}

/// Removes pi jumps from a smooth orientation field (no singular points).
Raster unwrap_orientation(const Raster& theta) {
    Raster u = theta;
    auto nearest = [](double ref, double v) { return v + pi * std::round((ref - v) / pi); };
    for (int r = 1; r < u.height; ++r) u.at(r, 0) = nearest(u.at(r - 1, 0), u.at(r, 0));
    for (int r = 0; r < u.height; ++r) {
        for (int c = 1; c < u.width; ++c) u.at(r, c) = nearest(u.at(r, c - 1), u.at(r, c));
    }
    return u;
}

/// Least-squares integration of a target phase gradient (gy, gx) with Neumann boundaries,
/// solved exactly in the DCT-II basis.
Raster integrate_gradient(const Raster& gy, const Raster& gx) {
    const int h = gy.height, w = gy.width;
    std::vector<double> f(static_cast<std::size_t>(h) * w, 0.0);
    // Divergence of the face-centred gradient field; boundary faces carry zero flux.
    auto idx = [w](int r, int c) { return static_cast<std::size_t>(r) * w + c; };
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double div = 0.0;
            if (c + 1 < w) div += 0.5 * (gx.at(r, c) + gx.at(r, c + 1));
            if (c > 0) div -= 0.5 * (gx.at(r, c - 1) + gx.at(r, c));
            if (r + 1 < h) div += 0.5 * (gy.at(r, c) + gy.at(r + 1, c));
            if (r > 0) div -= 0.5 * (gy.at(r - 1, c) + gy.at(r, c));
            f[idx(r, c)] = div;
        }
    }
    std::vector<double> coef(f.size());
    fftw_plan fwd = fftw_plan_r2r_2d(h, w, f.data(), coef.data(), FFTW_REDFT10, FFTW_REDFT10, FFTW_ESTIMATE);
    fftw_execute(fwd);
    fftw_destroy_plan(fwd);
    for (int k = 0; k < h; ++k) {
        for (int l = 0; l < w; ++l) {
            const double lambda = 2.0 * std::cos(pi * k / h) - 2.0 + 2.0 * std::cos(pi * l / w) - 2.0;
            coef[idx(k, l)] = (k == 0 && l == 0) ? 0.0 : coef[idx(k, l)] / lambda;
        }
    }
    Raster psi(h, w);
    fftw_plan inv = fftw_plan_r2r_2d(h, w, coef.data(), psi.data.data(), FFTW_REDFT01, FFTW_REDFT01, FFTW_ESTIMATE);
    fftw_execute(inv);
    fftw_destroy_plan(inv);
    const double norm = 1.0 / (4.0 * h * w);
    for (double& v : psi.data) v *= norm;
    return psi;
}

}  // namespace

Raster generate_orientation_field(const SynthConfig& config, std::uint64_t subject_seed) {
    config.validate();
    Raster theta(config.image_h, config.image_w);
    if (config.orientation_mode == OrientationMode::Constant) {
        std::fill(theta.data.begin(), theta.data.end(), wrap_pi(config.constant_angle));
        return theta;
    }
    std::mt19937_64 rng(mix_seed(config.orientation_seed, subject_seed));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double base = config.constant_angle + config.orientation_spread * u(rng);
    SmoothField wobble(rng, config.image_h, config.image_w, 3, config.orientation_wobble);
    for (int r = 0; r < theta.height; ++r) {
        for (int c = 0; c < theta.width; ++c) theta.at(r, c) = wrap_pi(base + wobble(r, c));
    }
    return theta;
}

FingerprintImage synthesize_ridge_pattern(const Raster& orientation, const SynthConfig& config,
                                          std::uint64_t phase_seed) {
    config.validate();
    if (orientation.height != config.image_h || orientation.width != config.image_w) {
        throw std::invalid_argument("orientation field size does not match config");
    }
    const int h = config.image_h, w = config.image_w;
    const double k = 2.0 * pi / config.ridge_period;
    const Raster theta = unwrap_orientation(orientation);
    Raster gy(h, w), gx(h, w);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        gy.data[i] = k * std::cos(theta.data[i]);
        gx.data[i] = k * std::sin(theta.data[i]);
    }
    const Raster psi = integrate_gradient(gy, gx);

    std::mt19937_64 rng(mix_seed(config.orientation_seed ^ 0xA5A5A5A5ull, phase_seed));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double offset = 2.0 * pi * u(rng);
    SmoothField noise(rng, h, w, 4, config.phase_noise);
    struct Spiral {
        double y, x, sign;
    };
    std::vector<Spiral> spirals;
    for (int m = 0; m < config.minutiae_per_subject; ++m) {
        spirals.push_back({h * (0.15 + 0.7 * u(rng)), w * (0.15 + 0.7 * u(rng)), u(rng) < 0.5 ? -1.0 : 1.0});
    }

    FingerprintImage img(h, w, config.ppi);
    const double g = config.ridge_gain;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double phase = psi.at(r, c) + offset + noise(r, c);
            for (const auto& s : spirals) phase += s.sign * std::atan2(r - s.y, c - s.x);
            // cos > 0 is a valley (bright); the sigmoid output spans about [0.05, 0.95].
            img.at(r, c) = 1.0 / (1.0 + std::exp(-g * std::cos(phase)));
        }
    }
    return img;
}

std::pair<FingerprintImage, PorePointSet> plant_pores(const FingerprintImage& image, const SynthConfig& config,
                                                      std::uint64_t rng_seed) {
    config.validate();
    FingerprintImage out = image;
    PorePointSet pores{{}, image.height, image.width};
    if (config.pore_density <= 0.0) return {out, pores};

    std::size_t ridge_pixels = 0;
    std::vector<std::pair<int, int>> candidates;
    // Pores sit on the dark ridge core, which keeps the blob peak at the planted pixel.
    const double core = 0.5 - 0.3 * (0.5 - *std::min_element(image.data.begin(), image.data.end()));
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) {
            const double v = image.at(r, c);
            if (v < 0.5) ++ridge_pixels;
            if (v < core) candidates.emplace_back(r, c);
        }
    }
    const auto target = static_cast<std::size_t>(std::llround(config.pore_density * ridge_pixels / 1000.0));
    std::mt19937_64 rng(rng_seed);
    std::shuffle(candidates.begin(), candidates.end(), rng);

    const double min_d = 2.0 * config.pore_radius + 1.0;
    const int cell = std::max(1, static_cast<int>(std::ceil(min_d)));
    const int gh = (image.height + cell - 1) / cell, gw = (image.width + cell - 1) / cell;
    std::vector<std::vector<int>> grid(static_cast<std::size_t>(gh) * gw);
    for (const auto& [r, c] : candidates) {
        if (pores.size() >= target) break;
        const int gr = r / cell, gc = c / cell;
        bool ok = true;
        for (int a = std::max(0, gr - 1); ok && a <= std::min(gh - 1, gr + 1); ++a) {
            for (int b = std::max(0, gc - 1); ok && b <= std::min(gw - 1, gc + 1); ++b) {
                for (int id : grid[static_cast<std::size_t>(a) * gw + b]) {
                    const double dr = pores.points[id].row - r, dc = pores.points[id].col - c;
                    if (dr * dr + dc * dc < min_d * min_d) {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if (!ok) continue;
        grid[static_cast<std::size_t>(gr) * gw + gc].push_back(static_cast<int>(pores.size()));
        pores.points.push_back({static_cast<double>(r), static_cast<double>(c)});
    }

    const double sigma = config.pore_radius / 2.0;
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const int reach = static_cast<int>(std::ceil(3.0 * sigma));
    for (const auto& p : pores.points) {
        const int pr = static_cast<int>(p.row), pc = static_cast<int>(p.col);
        for (int r = std::max(0, pr - reach); r <= std::min(out.height - 1, pr + reach); ++r) {
            for (int c = std::max(0, pc - reach); c <= std::min(out.width - 1, pc + reach); ++c) {
                const double d2 = (r - p.row) * (r - p.row) + (c - p.col) * (c - p.col);
                out.at(r, c) += config.pore_amplitude * std::exp(-d2 * inv2s2);
            }
        }
    }
    for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
    return {out, pores};
}

int canvas_margin(const SynthConfig& config) {
    if (config.max_rotation == 0.0 && config.distortion == 0.0) return config.max_translation;
    const double half_diag = 0.5 * std::hypot(config.image_h, config.image_w);
    const double reach = half_diag * std::sin(std::min(config.max_rotation, pi / 2.0)) + 2.0 * config.distortion;
    return config.max_translation + static_cast<int>(std::ceil(reach)) + 1;
}

SubjectMaster render_subject(const SynthConfig& config, int subject) {
    config.validate();
    const int margin = canvas_margin(config);
    SynthConfig canvas = config;
    canvas.image_h = config.image_h + 2 * margin;
    canvas.image_w = config.image_w + 2 * margin;
    const auto seed = static_cast<std::uint64_t>(subject);
    const auto family = static_cast<std::uint64_t>(subject / config.ridge_family_size);
    const Raster theta = generate_orientation_field(canvas, family);
    const FingerprintImage ridges = synthesize_ridge_pattern(theta, canvas, family);
    auto [img, pores] = plant_pores(ridges, canvas, mix_seed(config.orientation_seed + 0x51ull, seed));
    return {std::move(img), std::move(pores), margin};
}

Impression render_impression(const SynthConfig& config, const SubjectMaster& master, int subject, int session,
                             int impression) {
    std::mt19937_64 rng(mix_seed(mix_seed(config.orientation_seed + 0x1000ull, static_cast<std::uint64_t>(subject)),
                                 static_cast<std::uint64_t>(session) * 1000 + static_cast<std::uint64_t>(impression)));
    std::uniform_int_distribution<int> shift(-config.max_translation, config.max_translation);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    Impression imp;
    imp.shift_row = shift(rng);
    imp.shift_col = shift(rng);
    const double contrast = 1.0 + config.contrast_jitter * u(rng);
    const double brightness = 0.5 * config.contrast_jitter * u(rng);
    const int r0 = master.margin + imp.shift_row, c0 = master.margin + imp.shift_col;

    imp.image = FingerprintImage(config.image_h, config.image_w, config.ppi);
    imp.image.subject_id = "s" + std::to_string(subject);
    imp.image.session_id = std::to_string(session + 1);
    imp.pores.image_height = config.image_h;
    imp.pores.image_width = config.image_w;
    auto finish = [&](int r, int c, double master_value) {
        double v = 0.5 + contrast * (master_value - 0.5) + brightness;
        if (config.noise_level > 0.0) v += config.noise_level * noise(rng);
        imp.image.at(r, c) = std::clamp(v, 0.0, 1.0);
    };

    if (config.max_rotation == 0.0 && config.distortion == 0.0) {
        for (int r = 0; r < config.image_h; ++r) {
            for (int c = 0; c < config.image_w; ++c) finish(r, c, master.image.at(r0 + r, c0 + c));
        }
        for (const auto& p : master.pores.points) {
            const PorePoint q{p.row - r0, p.col - c0};
            if (imp.pores.contains(q)) imp.pores.points.push_back(q);
        }
        return imp;
    }

    // Rotation about the image centre plus a smooth displacement field; master coordinate
    // of impression pixel p is R(p - centre) + centre + offset + d(p).
    const double theta = config.max_rotation * u(rng);
    const SmoothField dy(rng, config.image_h, config.image_w, 4, config.distortion);
    const SmoothField dx(rng, config.image_h, config.image_w, 4, config.distortion);
    const double cs = std::cos(theta), sn = std::sin(theta);
    const double cr = (config.image_h - 1) / 2.0, cc = (config.image_w - 1) / 2.0;
    auto to_master = [&](double r, double c) {
        const double y = r - cr, x = c - cc;
        return std::pair{cs * y + sn * x + cr + r0 + dy(r, c), -sn * y + cs * x + cc + c0 + dx(r, c)};
    };
    const Raster& m = master.image;
    auto sample = [&](double y, double x) {
        y = std::clamp(y, 0.0, m.height - 1.0);
        x = std::clamp(x, 0.0, m.width - 1.0);
        const int y0 = std::min(static_cast<int>(y), m.height - 2), x0 = std::min(static_cast<int>(x), m.width - 2);
        const double fy = y - y0, fx = x - x0;
        return (1 - fy) * ((1 - fx) * m.at(y0, x0) + fx * m.at(y0, x0 + 1)) +
               fy * ((1 - fx) * m.at(y0 + 1, x0) + fx * m.at(y0 + 1, x0 + 1));
    };
    for (int r = 0; r < config.image_h; ++r) {
        for (int c = 0; c < config.image_w; ++c) {
            const auto [y, x] = to_master(r, c);
            finish(r, c, sample(y, x));
        }
    }
    // Pores: invert the forward map by fixed-point iteration on the smooth displacement.
    for (const auto& p : master.pores.points) {
        double r = 0.0, c = 0.0;
        double ddy = 0.0, ddx = 0.0;
        for (int it = 0; it < 20; ++it) {
            const double y = p.row - r0 - cr - ddy, x = p.col - c0 - cc - ddx;
            r = cs * y - sn * x + cr;
            c = sn * y + cs * x + cc;
            ddy = dy(r, c);
            ddx = dx(r, c);
        }
        const PorePoint q{r, c};
        if (imp.pores.contains(q)) imp.pores.points.push_back(q);
    }
    return imp;
}

Manifest generate_dataset(const SynthConfig& config, const fs::path& out_dir) {
    config.validate();
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "pores");
    Manifest manifest;
    manifest.root = out_dir;
    char name[64];
    for (int s = 0; s < config.subject_count; ++s) {
        const SubjectMaster master = render_subject(config, s);
        for (int sess = 0; sess < config.session_count; ++sess) {
            for (int i = 0; i < config.impressions_per_subject; ++i) {
                const Impression imp = render_impression(config, master, s, sess, i);
                std::snprintf(name, sizeof name, "s%03d_%d_%d", s, sess + 1, i);
                ManifestRecord rec;
                rec.image = fs::path("images") / (std::string(name) + ".png");
                rec.annotations = fs::path("pores") / (std::string(name) + ".txt");
                rec.subject_id = imp.image.subject_id;
                rec.session_id = imp.image.session_id;
                rec.impression = i;
                rec.ppi = config.ppi;
                rec.shift_row = imp.shift_row;
                rec.shift_col = imp.shift_col;
                save_image(imp.image, out_dir / rec.image, 16);
                save_pore_annotations(imp.pores, out_dir / rec.annotations);
                manifest.records.push_back(std::move(rec));
            }
        }
    }
    save_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

}  // namespace fpsr
