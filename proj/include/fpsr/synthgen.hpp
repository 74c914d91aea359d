#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>

#include "fpsr/imagedata.hpp"

namespace fpsr {

enum class OrientationMode { Random, Constant };

struct SynthConfig {
    int image_h = 128;
    int image_w = 128;
    /// Ridge plus valley wavelength in pixels.
    double ridge_period = 12.0;
    std::uint64_t orientation_seed = 1;
    /// Pores per 1000 ridge pixels.
    double pore_density = 15.0;
    double pore_radius = 2.0;
    /// Std of additive Gaussian noise per impression.
    double noise_level = 0.03;
    int subject_count = 2;
    int impressions_per_subject = 5;
    int session_count = 1;
    double ppi = 1000.0;

    OrientationMode orientation_mode = OrientationMode::Random;
    /// Base angle used by OrientationMode::Constant.
    double constant_angle = 0.0;
    /// Range of the per-subject base angle; pi spans all directions.
    double orientation_spread = 3.14159265358979323846;
    /// Amplitude (radians) of the smooth orientation variation.
    double orientation_wobble = 0.35;
    /// Amplitude (radians) of the smooth phase noise.
    double phase_noise = 0.8;
    /// Spiral phase singularities per subject; each yields one ridge ending or bifurcation.
    int minutiae_per_subject = 8;
    /// Sigmoid gain applied to the ridge cosine.
    double ridge_gain = 3.0;
    /// Peak brightness added by a pore.
    double pore_amplitude = 0.55;
    int max_translation = 4;
    /// Impression contrast is scaled by a factor in [1-j, 1+j].
    double contrast_jitter = 0.1;
    /// Consecutive subjects sharing one ridge pattern (orientation, phase, minutiae); pore
    /// layouts stay independent. 1 gives every subject its own ridges.
    int ridge_family_size = 1;
    /// Per-impression rotation drawn from [-max_rotation, max_rotation] radians.
    double max_rotation = 0.0;
    /// Amplitude (pixels) of the smooth per-impression displacement field. With
    /// max_rotation it models elastic skin distortion; both 0 give pure integer shifts.
    double distortion = 0.0;

    /// Throws std::invalid_argument when an invariant is violated.
    void validate() const;
};

/// Subject-independent seed mixing used by every generator stage.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Smooth ridge-orientation angles in [0, pi) of size image_h x image_w.
Raster generate_orientation_field(const SynthConfig& config, std::uint64_t subject_seed);

/// Dark ridges on bright valleys, period ridge_period, following `orientation`.
/// `phase_seed` drives the phase noise and minutia placement.
FingerprintImage synthesize_ridge_pattern(const Raster& orientation, const SynthConfig& config,
                                          std::uint64_t phase_seed = 0);

/// Adds bright Gaussian blobs (sigma = pore_radius/2) on ridge pixels with a minimum spacing
/// of 2*pore_radius+1. Returns the image and the exact pore centres.
std::pair<FingerprintImage, PorePointSet> plant_pores(const FingerprintImage& image, const SynthConfig& config,
                                                      std::uint64_t rng_seed);

/// Master padding: max_translation plus the reach of rotation and distortion.
int canvas_margin(const SynthConfig& config);

/// Noise-free master rendering of a subject on a canvas padded by max_translation on each side.
struct SubjectMaster {
    FingerprintImage image;
    PorePointSet pores;
    int margin = 0;
};
SubjectMaster render_subject(const SynthConfig& config, int subject);

struct Impression {
    FingerprintImage image;
    PorePointSet pores;
    int shift_row = 0;
    int shift_col = 0;
};
/// One acquisition of a subject: crop of the master at a random translation, contrast
/// jitter and additive noise.
Impression render_impression(const SynthConfig& config, const SubjectMaster& master, int subject, int session,
                             int impression);

/// Writes subject_count x session_count x impressions_per_subject PNG images with pore
/// annotations and a manifest.json under `out_dir`; returns the manifest.
Manifest generate_dataset(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace fpsr
