#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fpsr/config.hpp"
#include "fpsr/imagedata.hpp"
#include "fpsr/training.hpp"

namespace fixture {

inline fpsr::Manifest synthetic_manifest(int subjects, int impressions, int sessions) {
    fpsr::Manifest m;
    for (int s = 0; s < subjects; ++s)
        for (int k = 0; k < sessions; ++k)
            for (int i = 0; i < impressions; ++i) {
                fpsr::ManifestRecord r;
                r.image = "s" + std::to_string(s) + "_" + std::to_string(k) + "_" + std::to_string(i) + ".png";
                r.subject_id = "s" + std::to_string(s);
                r.session_id = std::to_string(k + 1);
                r.impression = i;
                r.ppi = 1000;
                m.records.push_back(r);
            }
    return m;
}

/// Smallest widths the networks accept; for contract tests, not for quality.
inline fpsr::ModelConfig tiny_models() {
    fpsr::ModelConfig m;
    m.generator = {1, 4, 1, true};
    m.discriminator.base_width = 4;
    m.discriminator.dense_units = 8;
    m.verifier.base_width = 4;
    m.verifier.embedding_dim = 8;
    m.pore_detector.base_width = 2;
    m.pore_detector.max_width = 4;
    m.perceptual.base_width = 4;
    return m;
}

inline fpsr::TrainConfig tiny_train() {
    fpsr::TrainConfig t;
    t.batch_size = 4;
    t.sr_epochs = t.pore_epochs = t.verifier_epochs = 1;
    t.joint_phase1_epochs = t.joint_phase2_epochs = 1;
    t.max_steps = 2;
    t.seed = 3;
    return t;
}

/// Two subjects, two 32x32 impressions each, cut into 16x16 patches.
inline fpsr::PatchDataset tiny_data(const std::filesystem::path& dir) {
    fpsr::SynthConfig s;
    s.image_h = 32;
    s.image_w = 32;
    s.subject_count = 2;
    s.impressions_per_subject = 2;
    std::filesystem::remove_all(dir);
    const fpsr::Manifest m = fpsr::generate_dataset(s, dir);
    fpsr::PatchConfig p;
    p.patch_h = p.patch_w = 16;
    p.stride_h = p.stride_w = 16;
    return fpsr::build_patch_dataset(m, {}, p);
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline std::string params_of(fpsr::Network& n) { return fpsr::serialize_params(n.params()); }

}  // namespace fixture
