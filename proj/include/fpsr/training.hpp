#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fpsr/imagedata.hpp"
#include "fpsr/losses.hpp"
#include "fpsr/networks.hpp"
#include "fpsr/nn/optim.hpp"

namespace fpsr {

struct ModelConfig {
    GeneratorSpec generator;
    DiscriminatorSpec discriminator;
    VerifierSpec verifier;
    PoreDetectorSpec pore_detector;
    PerceptualSpec perceptual;
};

struct TrainConfig {
    int batch_size = 64;
    double sr_lr = 1e-4;
    double pore_lr = 1e-3;
    double verifier_lr = 1e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.9;
    int sr_epochs = 20;
    int pore_epochs = 30;
    int verifier_epochs = 20;
    int joint_phase1_epochs = 20;
    int joint_phase2_epochs = 20;
    /// Cap on optimizer steps per phase (0: no cap).
    long max_steps = 0;
    /// Per-phase caps ("verifier", "sr", "pore", "joint") that replace max_steps for that
    /// phase. The joint cap applies to each of its two sub-phases.
    std::map<std::string, long> phase_max_steps;
    /// This config with max_steps resolved for `phase`.
    TrainConfig for_phase(const std::string& phase) const;
    std::uint64_t seed = 1;
    LossWeights loss_weights;
    AdversarialForm adversarial_form = AdversarialForm::NonSaturating;
    std::string perceptual_layer = "relu2_2";
    std::vector<std::string> ridge_layers{"relu2_2"};
    double contrastive_margin = 1.0;
    /// Global gradient-norm clip; 0 disables.
    double grad_clip = 0.0;
    /// Discriminator updates per generator update.
    int d_steps_per_g = 1;
    /// Joint phase 1 keeps the pore detector frozen; false updates it in both phases.
    bool freeze_pore_in_phase1 = true;
    /// Train the discriminator during SR pretraining (the adversarial term is active).
    bool pretrain_adversarial = true;
    /// Pore-detector pretraining objective: "l1" (the pore loss) or "l2". On sparse pore maps
    /// L1 tends to collapse to the all-zero map (its per-pixel median) before it localizes.
    std::string pore_pretrain_loss = "l1";
    std::set<Augment> augment{Augment::Gamma, Augment::Scale, Augment::HFlip, Augment::VFlip};
    std::string device = "cpu";

    void validate() const;
};

/// HR patch geometry for building training samples.
struct PatchConfig {
    int patch_h = 80;
    int patch_w = 60;
    int stride_h = 20;
    int stride_w = 15;
    int factor = 2;
    /// Pore-map Gaussian width; 0 selects default_pore_sigma(ppi).
    double pore_sigma = 0.0;
};

struct PatchDataset {
    std::vector<TrainingSample> samples;
    /// Dense subject label per sample.
    std::vector<int> subject;
    /// Patch position index inside its source image.
    std::vector<int> position;
    /// Source manifest record per sample.
    std::vector<int> record;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

/// Loads the listed manifest records (all when empty) and cuts them into training samples.
PatchDataset build_patch_dataset(const Manifest& manifest, const std::vector<int>& records, const PatchConfig& cfg);

/// Every network of the pipeline plus the fixed perceptual extractor.
struct Models {
    Models(const ModelConfig& cfg, std::uint64_t seed);

    ModelConfig config;
    std::unique_ptr<Generator> generator;
    std::unique_ptr<Verifier> verifier;
    std::unique_ptr<Discriminator> discriminator;
    std::unique_ptr<PoreDetector> pore_detector;
    std::unique_ptr<PerceptualExtractor> perceptual;

    /// (name, network) for the four trainable networks, in checkpoint order.
    std::vector<std::pair<std::string, Network*>> trainable();
};

struct TrainState {
    TrainState(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

    std::unique_ptr<Models> models;
    nn::Adam opt_generator;
    nn::Adam opt_discriminator;
    nn::Adam opt_pore;
    nn::Adam opt_verifier;
    std::string phase = "init";
    /// Completed epochs of the current phase.
    long epoch = 0;
    /// Optimizer steps taken in the current phase.
    long phase_step = 0;
    /// Optimizer steps across all phases.
    long global_step = 0;
    std::mt19937_64 rng;
    /// Exponential moving averages of logged losses.
    std::map<std::string, double> running;

    std::vector<std::pair<std::string, nn::Adam*>> optimizers();
    /// Resets the per-phase counters when switching to another phase.
    void begin_phase(const std::string& name);
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// CSV rows "step,epoch,loss_name,value", written as they are produced.
class TrainingLog {
public:
    TrainingLog() = default;
    /// Opens `path` for writing, appending when `append` is set.
    explicit TrainingLog(const std::filesystem::path& path, bool append = false);

    void add(long step, long epoch, const std::string& name, double value);
    long rows() const { return rows_; }
    void flush();

private:
    std::ofstream out_;
    long rows_ = 0;
};

struct TrainHooks {
    /// Called after every completed epoch (e.g. to write a checkpoint).
    std::function<void(TrainState&)> on_epoch_end;
    /// Progress lines; null for silence.
    std::ostream* progress = nullptr;
};

/// Contrastive training of the verifier on same/different-subject pairs of LR patches,
/// nearest-upsampled to HR size.
void train_verifier(TrainState& state, const PatchDataset& data, const TrainConfig& cfg, TrainingLog& log,
                    const TrainHooks& hooks = {});
/// Generator + discriminator with the MSE, adversarial and perceptual terms only.
void pretrain_sr(TrainState& state, const PatchDataset& data, const TrainConfig& cfg, TrainingLog& log,
                 const TrainHooks& hooks = {});
/// Pore detector on real HR patches with the pore loss.
void pretrain_pore(TrainState& state, const PatchDataset& data, const TrainConfig& cfg, TrainingLog& log,
                   const TrainHooks& hooks = {});
/// Two sub-phases with the full weighted loss: "joint1" (pore detector frozen unless
/// configured otherwise) then "joint2" (pore detector updated). The verifier stays frozen.
void joint_train(TrainState& state, const PatchDataset& data, const TrainConfig& cfg, TrainingLog& log,
                 const TrainHooks& hooks = {});

/// Batched tensors for a list of sample indices.
struct Batch {
    nn::Tensor lr;
    nn::Tensor hr;
    nn::Tensor pore_map;
};
Batch make_batch(const std::vector<TrainingSample>& samples);

// ------------------------------------------------------------------ checkpoints

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

/// Directory with one blob per network and optimizer plus state.json holding the version,
/// counters, rng state, running losses, and the SHA-256 and spec hash of every blob.
void save_checkpoint(TrainState& state, const std::filesystem::path& dir);
/// Rebuilds the models from `model_cfg` and restores everything bit-exactly. Throws
/// CheckpointError on a hash mismatch, version mismatch or architecture mismatch.
TrainState load_checkpoint(const std::filesystem::path& dir, const ModelConfig& model_cfg,
                           const TrainConfig& train_cfg);
/// Restores a single network from a checkpoint directory.
void load_network(const std::filesystem::path& dir, const std::string& name, Network& net);

/// Raw parameter blob of one ParamStore.
std::string serialize_params(const nn::ParamStore& store);
void deserialize_params(const std::string& blob, nn::ParamStore& store, const std::string& what);

}  // namespace fpsr
