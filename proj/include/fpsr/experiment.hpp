#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fpsr/config.hpp"

namespace fpsr {

/// Directory layout of one run.
struct RunLayout {
    std::filesystem::path root;

    std::filesystem::path data_dir() const { return root / "data"; }
    std::filesystem::path checkpoint(const std::string& phase) const { return root / "checkpoints" / phase; }
    std::filesystem::path log(const std::string& phase) const { return root / "logs" / (phase + ".csv"); }
    std::filesystem::path eval_dir() const { return root / "eval"; }
};

/// Writes config.json (the given text verbatim, or the resolved config when empty) and
/// config.resolved.json into the run root.
void archive_config(const ExperimentConfig& cfg, const RunLayout& run, const std::string& original_text = {});

/// Generates the synthetic dataset configured under dataset.synth into <root>/data.
Manifest run_synth(const ExperimentConfig& cfg, const RunLayout& run);

/// dataset.manifest, or the synthetic manifest under <root>/data. Throws if it is missing.
std::filesystem::path manifest_path(const ExperimentConfig& cfg, const RunLayout& run);
Manifest open_dataset(const ExperimentConfig& cfg, const RunLayout& run);

struct Split {
    std::vector<int> train;
    std::vector<int> test;
};
/// First `train_subjects` subjects (manifest order of first appearance) train, the rest are
/// held out. 0 puts every record in both lists.
Split split_subjects(const Manifest& manifest, int train_subjects);

inline const std::vector<std::string>& training_phases() {
    static const std::vector<std::string> phases{"verifier", "sr", "pore", "joint"};
    return phases;
}

/// Prerequisite checkpoints, missing from the run, that `phase` needs.
std::vector<std::string> missing_prerequisites(const RunLayout& run, const std::string& phase);

/// Runs one training phase. sr starts from the verifier checkpoint, joint from the sr
/// checkpoint plus the pore detector of the pore checkpoint; verifier and pore start fresh.
/// With `resume`, continues from that checkpoint instead. Writes logs/<phase>.csv and
/// checkpoints/<phase> after every epoch and at the end.
TrainState run_train(const ExperimentConfig& cfg, const RunLayout& run, const std::string& phase,
                     const std::optional<std::filesystem::path>& resume = std::nullopt,
                     std::ostream* progress = nullptr);

struct PoreEvalSummary {
    DetectionMetrics metrics;
    std::vector<SweepPoint> sweep;
    int images = 0;
};
/// Pore detection on real HR images of the evaluation subjects. Writes eval/pores.csv,
/// eval/pores_sweep.csv and eval/pores_summary.json.
PoreEvalSummary run_pore_eval(const ExperimentConfig& cfg, const RunLayout& run,
                              const std::filesystem::path& checkpoint);

struct QualitySummary {
    /// Means over held-out HR-sized patches.
    double psnr_sr = 0.0;
    double psnr_bicubic = 0.0;
    double psnr_nearest = 0.0;
    double ssim_sr = 0.0;
    double ssim_bicubic = 0.0;
    double ssim_nearest = 0.0;
    int patches = 0;
};

struct InputReport {
    /// "hr", "sr" or "lr".
    std::string input;
    RecognitionReport report;
};

struct RecognitionSummary {
    std::vector<InputReport> inputs;
    QualitySummary quality;
    long genuine = 0;
    long imposter = 0;
};
/// make_pairs -> per-level scores -> fusion -> ROC/EER for each configured input, plus
/// SR image quality against bicubic and nearest upsampling. Writes under eval/recognition.
RecognitionSummary run_recognition_eval(const ExperimentConfig& cfg, const RunLayout& run,
                                        const std::filesystem::path& checkpoint);

}  // namespace fpsr
