#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fpsr/nn/autograd.hpp"
#include "fpsr/nn/layers.hpp"

namespace fpsr {

struct GeneratorSpec {
    int residual_blocks = 7;
    int feature_maps = 64;
    /// Each stage is a sub-pixel convolution with factor 2.
    int upsample_stages = 1;
    /// Adds the logit of the nearest-upsampled input before the final sigmoid,
    /// so the trunk predicts a correction rather than the whole image.
    bool input_skip = true;
};

struct DiscriminatorSpec {
    /// Widths of the seven conv layers are base,base,2b,2b,4b,4b,8b.
    int base_width = 64;
    int dense_units = 1024;
    double leak = 0.2;
};

struct VerifierSpec {
    /// Tap widths are base, 2*base, 4*base.
    int base_width = 64;
    int embedding_dim = 128;
    double leak = 0.2;
};

struct PoreDetectorSpec {
    int base_width = 16;
    int max_width = 128;
    int residual_blocks = 8;
    double leak = 0.1;
};

struct PerceptualSpec {
    /// Stage widths are base, 2*base, 4*base.
    int base_width = 64;
    std::uint64_t seed = 0x9E3779B97F4A7C15ull;
};

/// Common plumbing: parameters, train/eval mode, description and spec hash.
class Network {
public:
    Network() = default;
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;
    virtual ~Network() = default;

    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    void set_training(bool on) { training_ = on; }
    bool training() const { return training_; }

    virtual std::string name() const = 0;
    /// Architecture string; identical for networks with identical layouts.
    virtual std::string architecture() const = 0;

    /// Multi-line listing of every parameter and buffer with its shape.
    std::string describe() const;
    /// SHA-256 of the architecture plus every entry name and shape.
    std::string spec_hash() const;

protected:
    nn::ParamStore params_;
    bool training_ = true;
};

class Generator : public Network {
public:
    Generator(GeneratorSpec spec, std::uint64_t seed);

    /// (n,1,h,w) -> (n,1,h*2^stages,w*2^stages), values in [0,1].
    nn::Var forward(const nn::Var& lr);

    const GeneratorSpec& spec() const { return spec_; }
    int scale() const { return 1 << spec_.upsample_stages; }
    std::string name() const override { return "generator"; }
    std::string architecture() const override;

    static constexpr int kMinInput = 8;

private:
    struct ResBlock {
        nn::Conv2d conv1, conv2;
        nn::BatchNorm2d bn1, bn2;
        nn::PReLU act;
    };
    struct UpStage {
        nn::Conv2d conv;
        nn::PReLU act;
    };

    GeneratorSpec spec_;
    nn::Conv2d head_;
    nn::PReLU head_act_;
    std::vector<ResBlock> blocks_;
    nn::Conv2d trunk_conv_;
    nn::BatchNorm2d trunk_bn_;
    std::vector<UpStage> up_;
    nn::Conv2d tail_;
};

/// The three verifier feature maps fused into the discriminator.
struct VerifierTaps {
    std::array<nn::Var, 3> maps;
};

struct VerifierOutput {
    nn::Var embedding;
    VerifierTaps taps;
};

class Verifier : public Network {
public:
    Verifier(VerifierSpec spec, std::uint64_t seed);

    VerifierOutput forward(const nn::Var& img);

    const VerifierSpec& spec() const { return spec_; }
    std::array<int, 3> tap_channels() const;
    std::string name() const override { return "verifier"; }
    std::string architecture() const override;

    static constexpr int kMinInput = 8;

private:
    VerifierSpec spec_;
    std::array<nn::Conv2d, 4> convs_;
    nn::Linear embed_;
};

class Discriminator : public Network {
public:
    Discriminator(DiscriminatorSpec spec, std::array<int, 3> tap_channels, std::uint64_t seed);

    /// Probability that `candidate` is a real HR image for the given LR input.
    /// lr is upsampled by nearest neighbour and stacked with the candidate.
    nn::Var forward(const nn::Var& lr, const nn::Var& candidate, const VerifierTaps& taps);

    /// Channel counts after each fusion concatenation.
    std::array<int, 3> fused_channels() const;
    /// Channel counts of the three fused feature maps seen by the last forward call.
    const std::array<int, 3>& last_fused_channels() const { return last_fused_; }

    const DiscriminatorSpec& spec() const { return spec_; }
    std::string name() const override { return "discriminator"; }
    std::string architecture() const override;

private:
    DiscriminatorSpec spec_;
    std::array<int, 3> tap_channels_;
    std::array<nn::Conv2d, 7> convs_;
    nn::Linear dense1_;
    nn::Linear dense2_;
    std::array<int, 3> last_fused_{};
};

class PoreDetector : public Network {
public:
    PoreDetector(PoreDetectorSpec spec, std::uint64_t seed);

    /// (n,1,h,w) -> (n,1,h,w) pore intensity in [0,1].
    nn::Var forward(const nn::Var& hr);

    const PoreDetectorSpec& spec() const { return spec_; }
    /// Number of weight layers (convolutions).
    int weight_layers() const;
    /// Zeroes both convolutions (and biases) of every residual branch.
    void zero_residual_branches();
    /// sigmoid(final(act(pad(initial(x))))): the path that remains with all branches zeroed.
    nn::Var shortcut_path(const nn::Var& hr) const;

    std::string name() const override { return "pore_detector"; }
    std::string architecture() const override;

private:
    struct Block {
        nn::Conv2d conv3;
        nn::Conv2d conv1;
        int width;
    };

    PoreDetectorSpec spec_;
    nn::Conv2d initial_;
    std::vector<Block> blocks_;
    nn::Conv2d final_;
};

/// Fixed VGG-style feature extractor with deterministic seeded weights.
/// Layers: conv1_1 relu1_1 conv1_2 relu1_2 pool1 conv2_1 relu2_1 conv2_2 relu2_2
/// pool2 conv3_1 relu3_1 conv3_2 relu3_2.
class PerceptualExtractor : public Network {
public:
    explicit PerceptualExtractor(PerceptualSpec spec = {});

    nn::Var features(const nn::Var& img, const std::string& layer) const;
    /// Activations for several layers from one pass.
    std::vector<nn::Var> features(const nn::Var& img, const std::vector<std::string>& layers) const;

    static const std::vector<std::string>& layer_names();
    /// (channels, height divisor) of a named layer.
    std::pair<int, int> layer_geometry(const std::string& layer) const;

    std::string name() const override { return "perceptual"; }
    std::string architecture() const override;

private:
    PerceptualSpec spec_;
    std::array<nn::Conv2d, 6> convs_;
};

}  // namespace fpsr
