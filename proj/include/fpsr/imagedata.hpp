#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace fpsr {

/// Row-major single-channel raster.
struct Raster {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Raster() = default;
    Raster(int h, int w, double fill = 0.0);

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return data.size(); }
    bool same_size(const Raster& o) const { return height == o.height && width == o.width; }
};

/// Grayscale fingerprint with intensities in [0,1].
struct FingerprintImage : Raster {
    double ppi = 0.0;
    std::string subject_id;
    std::string session_id;

    FingerprintImage() = default;
    FingerprintImage(int h, int w, double ppi, double fill = 0.0);

    static constexpr int kMinSide = 8;
    /// Throws std::invalid_argument when an invariant is violated.
    void validate() const;
};

struct PorePoint {
    double row = 0.0;
    double col = 0.0;
    bool operator==(const PorePoint&) const = default;
};

/// Pore centres in one image frame.
struct PorePointSet {
    std::vector<PorePoint> points;
    int image_height = 0;
    int image_width = 0;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    bool contains(const PorePoint& p) const {
        return p.row >= 0.0 && p.col >= 0.0 && p.row < image_height && p.col < image_width;
    }
};

/// Per-pixel pore likelihood in [0,1].
struct PoreIntensityMap : Raster {
    using Raster::Raster;
};

struct TrainingSample {
    FingerprintImage lr_patch;
    FingerprintImage hr_patch;
    PoreIntensityMap hr_pore_map;
};

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------- I/O

/// Reads an 8/16-bit single-channel PGM (P2/P5) or PNG; intensities are divided by the
/// format maximum.
FingerprintImage load_image(const std::filesystem::path& path, double ppi);
/// Writes PGM or PNG by extension, quantized to `bit_depth` (8 or 16).
void save_image(const FingerprintImage& image, const std::filesystem::path& path,
                int bit_depth = 16);

/// One "row col" pair per line; '#' lines and blank lines are skipped. Points closer than
/// one pixel are merged into their mean.
PorePointSet load_pore_annotations(const std::filesystem::path& path, const FingerprintImage& image);
PorePointSet parse_pore_annotations(const std::string& text, int image_height, int image_width);
void save_pore_annotations(const PorePointSet& pores, const std::filesystem::path& path);

/// Merges clusters of points that lie within `radius` of each other (transitively) into their mean.
PorePointSet dedupe_points(const PorePointSet& pores, double radius = 1.0);

// ---------------------------------------------------------------- resampling

/// Box-filter downsampling over factor x factor blocks; ppi is divided by factor.
FingerprintImage degrade_to_lr(const FingerprintImage& hr, int factor);
FingerprintImage upsample_nearest(const FingerprintImage& lr, int factor);
/// Keys cubic convolution (a = -0.5) with clamped borders, pixel-centre aligned.
FingerprintImage upsample_bicubic(const FingerprintImage& lr, int factor);

// ---------------------------------------------------------------- pore maps

/// Gaussian width used for pore-map targets: 2 px at 1200 ppi, proportional to ppi.
double default_pore_sigma(double ppi);

/// Peak-1 isotropic Gaussian per pore, summed and clipped to [0,1]. Pixel (r,c) has its
/// centre at coordinate (r,c).
PoreIntensityMap render_pore_map(const PorePointSet& pores, double sigma);

// ------------------------------------------------------------------ patches

struct Patch {
    FingerprintImage image;
    PorePointSet pores;
    int row0 = 0;
    int col0 = 0;
};

/// Windows of patch_h x patch_w at row-major positions stepping by the strides.
std::vector<Patch> extract_patches(const FingerprintImage& image, const PorePointSet& pores,
                                   int patch_h, int patch_w, int stride_h, int stride_w);

/// HR patch -> (LR, HR, pore map) triple using box degradation.
TrainingSample make_training_sample(const Patch& hr_patch, int factor, double sigma);

// ------------------------------------------------------------- augmentation

enum class Augment { Gamma, Scale, HFlip, VFlip };

struct AugmentRanges {
    double gamma_lo = 0.5;
    double gamma_hi = 2.0;
    double scale_lo = 0.9;
    double scale_hi = 1.1;
};

/// Applies the selected operations in the fixed order scale, hflip, vflip, gamma. Flips are
/// applied with probability 1/2 each, the continuous parameters are drawn from `ranges`.
/// The LR patch is always re-derived from the transformed HR patch.
TrainingSample augment(const TrainingSample& sample, const std::set<Augment>& ops,
                       std::uint64_t rng_seed, int factor = 2, const AugmentRanges& ranges = {});

// Deterministic building blocks used by augment().
TrainingSample apply_hflip(const TrainingSample& s, int factor = 2);
TrainingSample apply_vflip(const TrainingSample& s, int factor = 2);
TrainingSample apply_gamma(const TrainingSample& s, double gamma, int factor = 2);
TrainingSample apply_scale(const TrainingSample& s, double scale, int factor = 2);

Raster hflip(const Raster& r);
Raster vflip(const Raster& r);
PorePointSet hflip(const PorePointSet& p);
PorePointSet vflip(const PorePointSet& p);

// ------------------------------------------------------------------ dataset

struct ManifestRecord {
    std::filesystem::path image;
    std::filesystem::path annotations;
    std::string subject_id;
    std::string session_id;
    int impression = 0;
    double ppi = 0.0;
    /// Planted translation relative to the subject's reference frame (synthetic data only).
    double shift_row = 0.0;
    double shift_col = 0.0;
};

struct Manifest {
    std::vector<ManifestRecord> records;
    /// Directory that relative record paths are resolved against.
    std::filesystem::path root;

    std::filesystem::path resolve(const std::filesystem::path& p) const {
        return p.is_absolute() ? p : root / p;
    }
};

/// JSON manifest: {"records": [{"image", "annotations", "subject_id", "session_id",
/// "impression", "ppi", "shift_row", "shift_col"}]}.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

}  // namespace fpsr
