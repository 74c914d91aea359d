#include "fpsr/quality.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fpsr {

namespace {

void require_same_size(const Raster& a, const Raster& b, const char* what) {
    if (!a.same_size(b)) {
        throw std::invalid_argument(std::string(what) + ": size mismatch " + std::to_string(a.height) + "x" +
                                    std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                    std::to_string(b.width));
    }
}

}  // namespace

double psnr(const Raster& a, const Raster& b) {
    require_same_size(a, b, "psnr");
    if (a.size() == 0) throw std::invalid_argument("psnr: empty image");
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Raster& a, const Raster& b) {
    require_same_size(a, b, "ssim");
    if (a.size() == 0) throw std::invalid_argument("ssim: empty image");
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int wh = std::min(11, a.height), ww = std::min(11, a.width);
    std::vector<double> kr(wh), kc(ww);
    auto gauss = [](std::vector<double>& k) {
        const double centre = (static_cast<double>(k.size()) - 1.0) / 2.0;
        double s = 0.0;
        for (std::size_t i = 0; i < k.size(); ++i) {
            k[i] = std::exp(-(i - centre) * (i - centre) / (2.0 * 1.5 * 1.5));
            s += k[i];
        }
        for (double& v : k) v /= s;
    };
    gauss(kr);
    gauss(kc);

    double total = 0.0;
    long windows = 0;
    for (int r0 = 0; r0 + wh <= a.height; ++r0) {
        for (int c0 = 0; c0 + ww <= a.width; ++c0) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int i = 0; i < wh; ++i) {
                for (int j = 0; j < ww; ++j) {
                    const double w = kr[i] * kc[j];
                    const double x = a.at(r0 + i, c0 + j), y = b.at(r0 + i, c0 + j);
                    ma += w * x;
                    mb += w * y;
                    saa += w * x * x;
                    sbb += w * y * y;
                    sab += w * x * y;
                }
            }
            const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++windows;
        }
    }
    return std::clamp(total / static_cast<double>(windows), -1.0, 1.0);
}

Histogram quality_histogram(const std::vector<double>& scores, int bins, double lo, double hi) {
    if (bins < 1) throw std::invalid_argument("quality_histogram: bins must be >= 1");
    if (!(lo < hi)) throw std::invalid_argument("quality_histogram: lo must be < hi");
    Histogram h{lo, hi, std::vector<long>(static_cast<std::size_t>(bins), 0)};
    for (double s : scores) {
        if (!(s >= lo && s <= hi)) continue;
        auto k = static_cast<long>(std::floor((s - lo) / (hi - lo) * bins));
        k = std::min<long>(k, bins - 1);
        ++h.counts[static_cast<std::size_t>(k)];
    }
    return h;
}

QualityReport quality_report(const Raster& candidate, const Raster& reference) {
    return {psnr(candidate, reference), std::clamp(ssim(candidate, reference), 0.0, 1.0)};
}

}  // namespace fpsr
