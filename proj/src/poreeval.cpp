#include "fpsr/poreeval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

namespace fpsr {

double default_match_radius(double ppi) { return 5.0 * ppi / 1200.0; }
double default_nms_radius(double ppi) { return 3.0 * ppi / 1200.0; }

DetectionResult extract_pore_coords(const Raster& map, double threshold, double nms_radius) {
    struct Cand {
        double score;
        int r, c;
    };
    std::vector<Cand> cands;
    for (int r = 0; r < map.height; ++r) {
        for (int c = 0; c < map.width; ++c) {
            const double v = map.at(r, c);
            if (v < threshold || v <= 0.0) continue;
            bool peak = true;
            for (int dr = -1; peak && dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if ((dr || dc) && rr >= 0 && cc >= 0 && rr < map.height && cc < map.width && map.at(rr, cc) > v) {
                        peak = false;
                        break;
                    }
                }
            }
            if (peak) cands.push_back({v, r, c});
        }
    }
    // Candidates were collected in row-major order; the stable sort keeps that order on ties.
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });

    DetectionResult out;
    out.detected.image_height = map.height;
    out.detected.image_width = map.width;
    const double r2 = nms_radius * nms_radius;
    const int cell = std::max(1, static_cast<int>(std::ceil(nms_radius)));
    const int gh = map.height / cell + 1, gw = map.width / cell + 1;
    std::vector<std::vector<int>> grid(static_cast<std::size_t>(gh) * gw);
    for (const auto& k : cands) {
        const int gr = k.r / cell, gc = k.c / cell;
        bool suppressed = false;
        for (int a = std::max(0, gr - 1); !suppressed && a <= std::min(gh - 1, gr + 1); ++a) {
            for (int b = std::max(0, gc - 1); !suppressed && b <= std::min(gw - 1, gc + 1); ++b) {
                for (int id : grid[static_cast<std::size_t>(a) * gw + b]) {
                    const auto& p = out.detected.points[id];
                    const double dr = p.row - k.r, dc = p.col - k.c;
                    if (dr * dr + dc * dc <= r2) {
                        suppressed = true;
                        break;
                    }
                }
            }
        }
        if (suppressed) continue;
        grid[static_cast<std::size_t>(gr) * gw + gc].push_back(static_cast<int>(out.scores.size()));
        out.detected.points.push_back({static_cast<double>(k.r), static_cast<double>(k.c)});
        out.scores.push_back(k.score);
    }
    return out;
}

MatchOutcome match_detections(const PorePointSet& detected, const PorePointSet& truth, double radius) {
    std::vector<std::tuple<double, int, int>> edges;
    const double r2 = radius * radius;
    for (int i = 0; i < static_cast<int>(detected.points.size()); ++i) {
        for (int j = 0; j < static_cast<int>(truth.points.size()); ++j) {
            const double dr = detected.points[i].row - truth.points[j].row;
            const double dc = detected.points[i].col - truth.points[j].col;
            const double d2 = dr * dr + dc * dc;
            if (d2 <= r2) edges.emplace_back(d2, i, j);
        }
    }
    std::sort(edges.begin(), edges.end());
    std::vector<char> det_used(detected.points.size(), 0), truth_used(truth.points.size(), 0);
    MatchOutcome m;
    for (const auto& [d2, i, j] : edges) {
        if (det_used[i] || truth_used[j]) continue;
        det_used[i] = truth_used[j] = 1;
        m.pairs.emplace_back(i, j);
    }
    m.tp = static_cast<long>(m.pairs.size());
    m.fp = static_cast<long>(detected.points.size()) - m.tp;
    m.fn = static_cast<long>(truth.points.size()) - m.tp;
    return m;
}

DetectionMetrics detection_metrics(long tp, long fp, long fn, double radius) {
    if (tp < 0 || fp < 0 || fn < 0) throw std::invalid_argument("detection counts must be non-negative");
    DetectionMetrics m;
    m.true_positives = tp;
    m.false_positives = fp;
    m.false_negatives = fn;
    m.match_radius = radius;
    m.tdr = tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.fdr = tp + fp == 0 ? 0.0 : static_cast<double>(fp) / static_cast<double>(tp + fp);
    return m;
}

std::vector<SweepPoint> threshold_sweep(const std::vector<Raster>& maps, const std::vector<PorePointSet>& truths,
                                        const std::vector<double>& thresholds, double match_radius,
                                        double nms_radius) {
    if (maps.size() != truths.size()) throw std::invalid_argument("threshold_sweep: maps/truths size mismatch");
    std::vector<SweepPoint> out;
    for (double t : thresholds) {
        long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < maps.size(); ++i) {
            const auto det = extract_pore_coords(maps[i], t, nms_radius);
            const auto m = match_detections(det.detected, truths[i], match_radius);
            tp += m.tp;
            fp += m.fp;
            fn += m.fn;
        }
        out.push_back({t, detection_metrics(tp, fp, fn, match_radius)});
    }
    return out;
}

}  // namespace fpsr
