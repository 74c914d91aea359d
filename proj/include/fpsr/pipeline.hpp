#pragma once

#include <map>
#include <string>
#include <vector>

#include "fpsr/imagedata.hpp"
#include "fpsr/matcher.hpp"
#include "fpsr/networks.hpp"
#include "fpsr/poreeval.hpp"

namespace fpsr {

/// Whole-image super-resolution with the generator in evaluation mode. The output ppi is
/// the input ppi times the generator scale.
FingerprintImage superresolve(Generator& generator, const FingerprintImage& lr);

/// Pore intensity map of a whole image (evaluation mode, clipped to [0,1]).
PoreIntensityMap predict_pore_map(PoreDetector& detector, const Raster& image);

struct RecognitionConfig {
    MinutiaeParams minutiae;
    CorrelationParams correlation;
    PoreMatchParams pore;
    double pore_threshold = 0.5;
    /// 0 selects default_nms_radius(ppi).
    double nms_radius = 0.0;
};

/// One image of a recognition run with its detected pores.
struct RecognitionImage {
    std::string id;
    FingerprintImage image;
    PorePointSet pores;
};

struct RecognitionReport {
    /// Correlation, minutiae, pore and fused scores, grouped by level in that order.
    std::vector<MatchScore> scores;
    std::map<MatchLevel, RocCurve> roc;
};

/// Detects pores with `detector` (or keeps the given pores when null) and fills `pores`.
void detect_pores(std::vector<RecognitionImage>& images, PoreDetector* detector, const RecognitionConfig& cfg);

/// Scores every pair at each level, fuses them and computes ROC/EER per level.
RecognitionReport evaluate_recognition(const std::vector<RecognitionImage>& images,
                                       const std::vector<ImagePair>& pairs, const RecognitionConfig& cfg = {});

}  // namespace fpsr
