#include "fpsr/pipeline.hpp"

#include <algorithm>
#include <stdexcept>

namespace fpsr {

using nn::Tensor;
using nn::Var;

namespace {

Var to_var(const Raster& img) {
    return Var(Tensor({1, 1, img.height, img.width}, img.data));
}

}  // namespace

FingerprintImage superresolve(Generator& generator, const FingerprintImage& lr) {
    lr.validate();
    const bool was_training = generator.training();
    generator.set_training(false);
    const Var out = generator.forward(to_var(lr));
    generator.set_training(was_training);
    const auto& s = out.value().shape();
    FingerprintImage sr(s.h, s.w, lr.ppi * generator.scale());
    for (std::size_t i = 0; i < sr.data.size(); ++i) sr.data[i] = std::clamp(out.value()[i], 0.0, 1.0);
    sr.subject_id = lr.subject_id;
    sr.session_id = lr.session_id;
    return sr;
}

PoreIntensityMap predict_pore_map(PoreDetector& detector, const Raster& image) {
    const bool was_training = detector.training();
    detector.set_training(false);
    const Var out = detector.forward(to_var(image));
    detector.set_training(was_training);
    PoreIntensityMap map(image.height, image.width);
    for (std::size_t i = 0; i < map.data.size(); ++i) map.data[i] = std::clamp(out.value()[i], 0.0, 1.0);
    return map;
}

void detect_pores(std::vector<RecognitionImage>& images, PoreDetector* detector, const RecognitionConfig& cfg) {
    if (!detector) return;
    for (auto& item : images) {
        const double nms = cfg.nms_radius > 0.0 ? cfg.nms_radius : default_nms_radius(item.image.ppi);
        item.pores = extract_pore_coords(predict_pore_map(*detector, item.image), cfg.pore_threshold, nms).detected;
    }
}

RecognitionReport evaluate_recognition(const std::vector<RecognitionImage>& images,
                                       const std::vector<ImagePair>& pairs, const RecognitionConfig& cfg) {
    if (pairs.empty()) throw std::invalid_argument("evaluate_recognition: no pairs");
    std::vector<std::vector<Minutia>> minutiae(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        try {
            minutiae[i] = extract_minutiae(images[i].image, cfg.minutiae);
        } catch (const std::invalid_argument&) {
            // A blank image has no minutiae; its minutiae scores are 0.
        }
    }

    std::vector<std::vector<MatchScore>> levels(3);
    for (const auto& p : pairs) {
        const auto& a = images.at(static_cast<std::size_t>(p.probe));
        const auto& b = images.at(static_cast<std::size_t>(p.gallery));
        auto score = [&](double v, MatchLevel level) { return MatchScore{v, level, a.id, b.id, p.genuine}; };
        levels[0].push_back(score(correlation_match_score(a.image, b.image, cfg.correlation), MatchLevel::Correlation));
        levels[1].push_back(score(minutiae_match_score(minutiae[static_cast<std::size_t>(p.probe)],
                                                       minutiae[static_cast<std::size_t>(p.gallery)], cfg.minutiae),
                                  MatchLevel::Minutiae));
        levels[2].push_back(
            score(pore_match_score(a.image, a.pores, b.image, b.pores, cfg.pore), MatchLevel::Pore));
    }
    const auto fused = fuse_scores(levels);

    RecognitionReport report;
    for (const auto& level : levels) {
        report.roc[level.front().level] = roc_and_eer(level);
        report.scores.insert(report.scores.end(), level.begin(), level.end());
    }
    report.roc[MatchLevel::Fused] = roc_and_eer(fused);
    report.scores.insert(report.scores.end(), fused.begin(), fused.end());
    return report;
}

}  // namespace fpsr
