#pragma once

#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "fpsr/imagedata.hpp"

namespace fpsr {

// ------------------------------------------------------------------- minutiae

enum class MinutiaKind { Ending, Bifurcation };

struct Minutia {
    double row = 0.0;
    double col = 0.0;
    /// Local ridge direction in [0, pi).
    double orientation = 0.0;
    MinutiaKind kind = MinutiaKind::Ending;
};

/// 0/1 raster.
struct BinaryImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    BinaryImage() = default;
    BinaryImage(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}
    std::uint8_t& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
    /// Out-of-range reads are background.
    std::uint8_t get(int r, int c) const {
        return r < 0 || c < 0 || r >= height || c >= width ? 0 : at(r, c);
    }
    std::size_t count() const;
};

struct MinutiaeParams {
    /// Minutiae closer than this to the image edge are discarded.
    int border = 8;
    /// Gaussian pre-smoothing at 1000 ppi (scaled by ppi); suppresses pores inside ridges.
    double smooth_sigma = 1.5;
    /// Local-mean window side at 1000 ppi (scaled by ppi).
    int mean_window = 25;
    /// Foreground components smaller than this are dropped before thinning.
    int min_component = 12;
    double distance_tol = 10.0;
    double angle_tol = std::numbers::pi / 8.0;
    /// Rotation search range (radians) and coarse step.
    double max_rotation = std::numbers::pi / 6.0;
    double rotation_step = std::numbers::pi / 90.0;
};

/// Ridge (dark) pixels as foreground: smoothed intensity below the local mean.
BinaryImage binarize_ridges(const FingerprintImage& image, const MinutiaeParams& params = {});
/// Zhang-Suen thinning to an 8-connected one-pixel skeleton.
BinaryImage thin(const BinaryImage& foreground);
/// Crossing-number detection on a skeleton: CN = 1 ending, CN = 3 bifurcation. Orientation is
/// taken from the skeleton branch direction. Same-kind detections within 2 px are merged.
std::vector<Minutia> minutiae_from_skeleton(const BinaryImage& skeleton, int border);
/// binarize -> thin -> crossing number. Throws std::invalid_argument on a blank image.
std::vector<Minutia> extract_minutiae(const FingerprintImage& image, const MinutiaeParams& params = {});

/// Number of one-to-one pairs within the distance and angle tolerances after mapping b by
/// rotation `theta` (about the origin) and translation (ty, tx).
int count_minutia_pairs(const std::vector<Minutia>& a, const std::vector<Minutia>& b, double theta, double ty,
                        double tx, const MinutiaeParams& params = {});
/// 2m/(|a|+|b|) for the best rigid alignment; 0 if either list is empty.
double minutiae_match_score(const std::vector<Minutia>& a, const std::vector<Minutia>& b,
                            const MinutiaeParams& params = {});

// ---------------------------------------------------------------- correlation

struct CorrelationParams {
    int max_shift = 16;
    /// Difference-of-Gaussians band at 1000 ppi, scaled by ppi. The 2/4 pair peaks near a
    /// 13 px period (the ridge band) and suppresses pore-sized blobs.
    double sigma_low = 2.0;
    double sigma_high = 4.0;
};

/// Band-passed image restricted to pixels whose filter support lies inside the image.
Raster bandpass(const Raster& image, double sigma_low, double sigma_high);
/// Max Pearson correlation over integer shifts within +-max_shift of the band-passed images,
/// mapped from [-1,1] to [0,1].
double correlation_match_score(const FingerprintImage& a, const FingerprintImage& b,
                               const CorrelationParams& params = {});

// ----------------------------------------------------------------------- pores

struct PoreMatchParams {
    /// Descriptor half-size at 1000 ppi, scaled by ppi.
    int patch_radius = 6;
    int iterations = 1000;
    /// Inlier radius at 1000 ppi, scaled by ppi.
    double inlier_radius = 4.0;
    std::uint64_t seed = 20240917;
    int min_pores = 4;
};

/// Zero-mean unit-norm intensity patch per pore (edge-replicated).
std::vector<std::vector<double>> pore_descriptors(const FingerprintImage& image, const PorePointSet& pores,
                                                  int radius);
/// inliers / min(|a|,|b|) of the best rigid model over mutual-nearest descriptor matches.
double pore_match_score(const FingerprintImage& image_a, const PorePointSet& pores_a,
                        const FingerprintImage& image_b, const PorePointSet& pores_b,
                        const PoreMatchParams& params = {});

// ------------------------------------------------------------ scores and ROC

enum class MatchLevel { Correlation, Minutiae, Pore, Fused };
std::string to_string(MatchLevel level);

struct MatchScore {
    double value = 0.0;
    MatchLevel level = MatchLevel::Fused;
    std::string probe;
    std::string gallery;
    bool genuine = false;
};

/// (s - min)/(max - min); all-equal input maps to 0.5.
std::vector<double> minmax_normalize(const std::vector<double>& scores);

/// Min-max normalises each level over its population, then averages the levels per pair.
/// Every level must hold the same set of (probe, gallery) pairs; the output follows the
/// order of the first level.
std::vector<MatchScore> fuse_scores(const std::vector<std::vector<MatchScore>>& per_level);

struct ImagePair {
    int probe = 0;
    int gallery = 0;
    bool genuine = false;
};

/// Genuine: every first-session impression against every second-session impression of the
/// same subject. Imposter: the first second-session impression of each subject against the
/// first first-session impression of every other subject. Sessions are ordered by label.
std::vector<ImagePair> make_pairs(const Manifest& manifest);

struct RocPoint {
    double threshold = 0.0;
    double far = 0.0;
    double tar = 0.0;
};

struct RocCurve {
    /// Ascending threshold; the last point is +inf (FAR = TAR = 0).
    std::vector<RocPoint> points;
    double eer = 0.0;
    double auc = 0.0;
};

/// Thresholds are all distinct scores plus +inf. FAR = #imposter >= t / #imposter,
/// FRR = #genuine < t / #genuine. EER is linearly interpolated at the first sign change of
/// FAR - FRR; AUC is the trapezoid area under (FAR, TAR).
RocCurve roc_and_eer(const std::vector<double>& genuine, const std::vector<double>& imposter);
RocCurve roc_and_eer(const std::vector<MatchScore>& scores);

}  // namespace fpsr
