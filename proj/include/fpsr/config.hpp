#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpsr/pipeline.hpp"
#include "fpsr/synthgen.hpp"
#include "fpsr/training.hpp"

namespace fpsr {

/// Invalid or unknown configuration entry; the message names the dotted key.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DatasetConfig {
    /// Existing manifest; empty means the synthetic set under <output>/data.
    std::string manifest;
    std::optional<SynthConfig> synth;
    /// Subjects (in manifest order of first appearance) used for training; the rest are
    /// held out. 0 trains on every subject.
    int train_subjects = 0;
};

struct EvalConfig {
    double pore_threshold = 0.5;
    /// 0 selects the ppi-scaled defaults.
    double match_radius = 0.0;
    double nms_radius = 0.0;
    std::vector<double> sweep_thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    /// Only "two-session" (first session against second session) is defined.
    std::string protocol = "two-session";
    /// "test" (held-out subjects) or "all".
    std::string subjects = "test";
    /// Score rendered ground-truth maps instead of detector output (closed-loop check).
    bool ground_truth_maps = false;
    /// Recognition inputs: any of "hr", "sr", "lr".
    std::vector<std::string> inputs{"hr", "sr", "lr"};
    int histogram_bins = 20;
    MinutiaeParams minutiae;
    CorrelationParams correlation;
    PoreMatchParams pore_match;

    RecognitionConfig recognition() const;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    ModelConfig model;
    PatchConfig patch;
    TrainConfig train;
    EvalConfig eval;
    std::string output = "run";
};

/// Strict parse: every key must be known, types must match, then every section validates.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace fpsr
