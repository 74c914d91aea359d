#pragma once

#include <utility>
#include <vector>

#include "fpsr/imagedata.hpp"

namespace fpsr {

struct DetectionResult {
    PorePointSet detected;
    /// Aligned with detected.points, descending.
    std::vector<double> scores;
};

struct DetectionMetrics {
    double tdr = 1.0;
    double fdr = 0.0;
    long true_positives = 0;
    long false_positives = 0;
    long false_negatives = 0;
    double match_radius = 0.0;
};

struct MatchOutcome {
    long tp = 0;
    long fp = 0;
    long fn = 0;
    /// (detected index, truth index) per true positive, in matching order.
    std::vector<std::pair<int, int>> pairs;
};

/// 5 px at 1200 ppi, proportional to ppi.
double default_match_radius(double ppi);
/// 3 px at 1200 ppi, proportional to ppi.
double default_nms_radius(double ppi);

/// Pixels >= threshold that are not exceeded by any 8-neighbour, suppressed greedily in
/// descending score order (ties in row-major order): a candidate is dropped when a kept
/// point lies within nms_radius (inclusive).
DetectionResult extract_pore_coords(const Raster& map, double threshold, double nms_radius);

/// Greedy one-to-one matching in ascending distance (ties by detected, then truth index);
/// only pairs with distance <= radius are eligible.
MatchOutcome match_detections(const PorePointSet& detected, const PorePointSet& truth, double radius);

/// tdr = TP/(TP+FN) (1 when there is no truth), fdr = FP/(TP+FP) (0 when nothing is detected).
DetectionMetrics detection_metrics(long tp, long fp, long fn, double radius);

struct SweepPoint {
    double threshold = 0.0;
    DetectionMetrics metrics;
};

/// Pools TP/FP/FN over all maps for each threshold.
std::vector<SweepPoint> threshold_sweep(const std::vector<Raster>& maps, const std::vector<PorePointSet>& truths,
                                        const std::vector<double>& thresholds, double match_radius,
                                        double nms_radius);

}  // namespace fpsr
