#pragma once

#include <vector>

#include "fpsr/imagedata.hpp"

namespace fpsr {

/// Reported for identical images, where the true value is infinite.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1/mse) with peak 1.0, capped at kPsnrCap.
double psnr(const Raster& a, const Raster& b);

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1,
/// over window positions fully inside the image. Images smaller than the window use one
/// window covering the whole image. Result is in [-1, 1].
double ssim(const Raster& a, const Raster& b);

struct Histogram {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<long> counts;

    double bin_width() const { return (hi - lo) / static_cast<double>(counts.size()); }
};

/// Uniform bins over [lo, hi]; the last bin is closed on the right. Scores outside the range are ignored.
Histogram quality_histogram(const std::vector<double>& scores, int bins, double lo, double hi);

struct QualityReport {
    double psnr = 0.0;
    /// Clipped to [0,1].
    double ssim = 0.0;
};

QualityReport quality_report(const Raster& candidate, const Raster& reference);

}  // namespace fpsr
