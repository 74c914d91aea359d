#include "fpsr/networks.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "fpsr/hash.hpp"
#include "fpsr/nn/ops.hpp"

namespace fpsr {

using nn::Var;
namespace ops = nn::ops;

std::string Network::describe() const {
    std::ostringstream os;
    os << name() << " [" << architecture() << "]\n";
    for (const auto& e : params_.entries()) {
        os << "  " << e.name << ' ' << e.var.shape().str() << ' ' << e.var.value().size()
           << (e.trainable ? "" : " (buffer)") << '\n';
    }
    os << "  trainable parameters: " << params_.parameter_count() << '\n';
    return os.str();
}

std::string Network::spec_hash() const {
    std::ostringstream os;
    os << architecture() << '\n';
    for (const auto& e : params_.entries()) os << e.name << ' ' << e.var.shape().str() << '\n';
    return sha256_hex(os.str());
}

namespace {

void require_input(const Var& x, int min_hw, const char* who) {
    const auto s = x.shape();
    if (s.c != 1) {
        throw std::invalid_argument(std::string(who) + ": expected single-channel input, got " +
                                    s.str());
    }
    if (s.h < min_hw || s.w < min_hw) {
        throw std::invalid_argument(std::string(who) + ": input " + s.str() +
                                    " below minimum size " + std::to_string(min_hw));
    }
}

}  // namespace

// ---------------------------------------------------------------- generator

Generator::Generator(GeneratorSpec spec, std::uint64_t seed) : spec_(spec) {
    if (spec.upsample_stages < 1 || spec.residual_blocks < 0 || spec.feature_maps < 1) {
        throw std::invalid_argument("invalid generator spec");
    }
    std::mt19937_64 rng(seed);
    const int f = spec.feature_maps;
    head_ = nn::Conv2d(params_, "head", 1, f, 3, 1, rng);
    head_act_ = nn::PReLU(params_, "head.act", f);
    for (int b = 0; b < spec.residual_blocks; ++b) {
        const std::string p = "block" + std::to_string(b);
        ResBlock blk;
        blk.conv1 = nn::Conv2d(params_, p + ".conv1", f, f, 3, 1, rng);
        blk.bn1 = nn::BatchNorm2d(params_, p + ".bn1", f);
        blk.act = nn::PReLU(params_, p + ".act", f);
        blk.conv2 = nn::Conv2d(params_, p + ".conv2", f, f, 3, 1, rng);
        blk.bn2 = nn::BatchNorm2d(params_, p + ".bn2", f);
        blocks_.push_back(std::move(blk));
    }
    trunk_conv_ = nn::Conv2d(params_, "trunk.conv", f, f, 3, 1, rng);
    trunk_bn_ = nn::BatchNorm2d(params_, "trunk.bn", f);
    for (int s = 0; s < spec.upsample_stages; ++s) {
        const std::string p = "up" + std::to_string(s);
        UpStage st;
        st.conv = nn::Conv2d(params_, p + ".conv", f, 4 * f, 3, 1, rng);
        st.act = nn::PReLU(params_, p + ".act", f);
        up_.push_back(std::move(st));
    }
    // Small tail init keeps the initial output close to the skip path.
    tail_ = nn::Conv2d(params_, "tail", f, 1, 3, 1, rng, spec.input_skip ? 0.01 : 1.0);
}

std::string Generator::architecture() const {
    std::ostringstream os;
    os << "generator blocks=" << spec_.residual_blocks << " features=" << spec_.feature_maps
       << " upsample_stages=" << spec_.upsample_stages << " input_skip=" << spec_.input_skip;
    return os.str();
}

Var Generator::forward(const Var& lr) {
    require_input(lr, kMinInput, "generator");
    Var x = head_act_(head_(lr));
    const Var skip = x;
    for (auto& blk : blocks_) {
        Var y = blk.act(blk.bn1(blk.conv1(x), training_));
        y = blk.bn2(blk.conv2(y), training_);
        x = ops::add(x, y);
    }
    x = ops::add(trunk_bn_(trunk_conv_(x), training_), skip);
    for (auto& st : up_) x = st.act(ops::pixel_shuffle(st.conv(x), 2));
    Var logits = tail_(x);
    if (spec_.input_skip) {
        const Var up = ops::clamp(ops::upsample_nearest(lr, scale()), 1e-3, 1.0 - 1e-3);
        const Var logit_up = ops::sub(ops::log(up), ops::log(ops::add_scalar(ops::scale(up, -1.0), 1.0)));
        logits = ops::add(logits, logit_up);
    }
    return ops::sigmoid(logits);
}

// ----------------------------------------------------------------- verifier

Verifier::Verifier(VerifierSpec spec, std::uint64_t seed) : spec_(spec) {
    std::mt19937_64 rng(seed);
    const int b = spec.base_width;
    const std::array<int, 4> widths{b, 2 * b, 4 * b, 4 * b};
    int in = 1;
    for (int i = 0; i < 4; ++i) {
        convs_[i] = nn::Conv2d(params_, "conv" + std::to_string(i + 1), in, widths[i], 3, 2, rng);
        in = widths[i];
    }
    embed_ = nn::Linear(params_, "embed", in, spec.embedding_dim, rng, 1.0);
}

std::array<int, 3> Verifier::tap_channels() const {
    return {spec_.base_width, 2 * spec_.base_width, 4 * spec_.base_width};
}

std::string Verifier::architecture() const {
    std::ostringstream os;
    os << "verifier base=" << spec_.base_width << " embedding=" << spec_.embedding_dim
       << " leak=" << spec_.leak;
    return os.str();
}

VerifierOutput Verifier::forward(const Var& img) {
    require_input(img, kMinInput, "verifier");
    VerifierOutput out;
    Var x = img;
    for (int i = 0; i < 4; ++i) {
        x = ops::leaky_relu(convs_[i](x), spec_.leak);
        if (i < 3) out.taps.maps[i] = x;
    }
    out.embedding = embed_(ops::global_avg_pool(x));
    return out;
}

// ------------------------------------------------------------ discriminator

Discriminator::Discriminator(DiscriminatorSpec spec, std::array<int, 3> tap_channels,
                             std::uint64_t seed)
    : spec_(spec), tap_channels_(tap_channels) {
    std::mt19937_64 rng(seed);
    const int b = spec.base_width;
    const std::array<int, 7> widths{b, b, 2 * b, 2 * b, 4 * b, 4 * b, 8 * b};
    const std::array<int, 7> strides{1, 2, 1, 2, 1, 2, 2};
    int in = 2;  // LR (upsampled) stacked with the candidate
    int tap = 0;
    for (int i = 0; i < 7; ++i) {
        convs_[i] =
            nn::Conv2d(params_, "conv" + std::to_string(i + 1), in, widths[i], 3, strides[i], rng);
        in = widths[i];
        if (strides[i] == 2 && tap < 3) in += tap_channels_[tap++];
    }
    dense1_ = nn::Linear(params_, "dense1", in, spec.dense_units, rng);
    dense2_ = nn::Linear(params_, "dense2", spec.dense_units, 1, rng, 1.0);
}

std::array<int, 3> Discriminator::fused_channels() const {
    const int b = spec_.base_width;
    return {b + tap_channels_[0], 2 * b + tap_channels_[1], 4 * b + tap_channels_[2]};
}

std::string Discriminator::architecture() const {
    std::ostringstream os;
    os << "discriminator base=" << spec_.base_width << " dense=" << spec_.dense_units
       << " leak=" << spec_.leak << " taps=" << tap_channels_[0] << ',' << tap_channels_[1] << ','
       << tap_channels_[2];
    return os.str();
}

Var Discriminator::forward(const Var& lr, const Var& candidate, const VerifierTaps& taps) {
    const auto ls = lr.shape();
    const auto cs = candidate.shape();
    if (ls.n != cs.n || ls.c != 1 || cs.c != 1 || ls.h * 2 != cs.h || ls.w * 2 != cs.w) {
        throw std::invalid_argument("discriminator: candidate " + cs.str() +
                                    " is not 2x the LR input " + ls.str());
    }
    Var x = ops::concat_channels(ops::upsample_nearest(lr, 2), candidate);
    int tap = 0;
    for (int i = 0; i < 7; ++i) {
        x = ops::leaky_relu(convs_[i](x), spec_.leak);
        const bool is_tap = (i == 1 || i == 3 || i == 5);
        if (!is_tap) continue;
        const Var& t = taps.maps[tap];
        const auto xs = x.shape();
        if (!t.defined() || t.shape().n != xs.n || t.shape().h != xs.h || t.shape().w != xs.w ||
            t.shape().c != tap_channels_[tap]) {
            throw std::invalid_argument(
                "discriminator: fusion tap " + std::to_string(tap + 1) + " expects (" +
                std::to_string(xs.n) + ", " + std::to_string(tap_channels_[tap]) + ", " +
                std::to_string(xs.h) + ", " + std::to_string(xs.w) + "), got " +
                (t.defined() ? t.shape().str() : std::string("nothing")));
        }
        x = ops::concat_channels(x, t);
        last_fused_[tap] = x.shape().c;
        ++tap;
    }
    x = ops::leaky_relu(dense1_(ops::global_avg_pool(x)), spec_.leak);
    return ops::sigmoid(dense2_(x));
}

// ------------------------------------------------------------ pore detector

PoreDetector::PoreDetector(PoreDetectorSpec spec, std::uint64_t seed) : spec_(spec) {
    std::mt19937_64 rng(seed);
    initial_ = nn::Conv2d(params_, "initial", 1, spec.base_width, 3, 1, rng);
    int in = spec.base_width;
    for (int b = 0; b < spec.residual_blocks; ++b) {
        const int width = std::min(spec.base_width << (b / 2), spec.max_width);
        const std::string p = "block" + std::to_string(b);
        Block blk;
        blk.conv3 = nn::Conv2d(params_, p + ".conv3x3", in, width, 3, 1, rng);
        blk.conv1 = nn::Conv2d(params_, p + ".conv1x1", width, width, 1, 1, rng, 0.5);
        blk.width = width;
        blocks_.push_back(std::move(blk));
        in = width;
    }
    final_ = nn::Conv2d(params_, "final", in, 1, 1, 1, rng, 1.0);
}

int PoreDetector::weight_layers() const { return 2 + 2 * static_cast<int>(blocks_.size()); }

std::string PoreDetector::architecture() const {
    std::ostringstream os;
    os << "pore_detector base=" << spec_.base_width << " max=" << spec_.max_width
       << " blocks=" << spec_.residual_blocks << " leak=" << spec_.leak;
    return os.str();
}

void PoreDetector::zero_residual_branches() {
    for (auto& blk : blocks_) {
        for (nn::Conv2d* conv : {&blk.conv3, &blk.conv1}) {
            conv->weight.mutable_value().fill(0.0);
            conv->bias.mutable_value().fill(0.0);
        }
    }
}

Var PoreDetector::forward(const Var& hr) {
    require_input(hr, 1, "pore_detector");
    Var x = initial_(ops::scale(ops::add_scalar(hr, -0.5), 2.0));
    for (auto& blk : blocks_) {
        Var branch = blk.conv3(ops::leaky_relu(x, spec_.leak));
        branch = blk.conv1(ops::leaky_relu(branch, spec_.leak));
        x = ops::add(ops::pad_channels(x, blk.width), branch);
    }
    return ops::sigmoid(final_(ops::leaky_relu(x, spec_.leak)));
}

Var PoreDetector::shortcut_path(const Var& hr) const {
    Var x = initial_(ops::scale(ops::add_scalar(hr, -0.5), 2.0));
    x = ops::pad_channels(x, blocks_.empty() ? x.shape().c : blocks_.back().width);
    return ops::sigmoid(final_(ops::leaky_relu(x, spec_.leak)));
}

// --------------------------------------------------------------- perceptual

namespace {

const std::vector<std::string> kLayerNames{
    "conv1_1", "relu1_1", "conv1_2", "relu1_2", "pool1",   "conv2_1", "relu2_1",
    "conv2_2", "relu2_2", "pool2",   "conv3_1", "relu3_1", "conv3_2", "relu3_2"};

}  // namespace

PerceptualExtractor::PerceptualExtractor(PerceptualSpec spec) : spec_(spec) {
    std::mt19937_64 rng(spec.seed);
    const int b = spec.base_width;
    const std::array<int, 6> widths{b, b, 2 * b, 2 * b, 4 * b, 4 * b};
    int in = 3;
    for (int i = 0; i < 6; ++i) {
        const std::string name =
            "conv" + std::to_string(i / 2 + 1) + "_" + std::to_string(i % 2 + 1);
        convs_[i] = nn::Conv2d(params_, name, in, widths[i], 3, 1, rng);
        in = widths[i];
    }
    params_.set_frozen(true);
}

const std::vector<std::string>& PerceptualExtractor::layer_names() { return kLayerNames; }

std::pair<int, int> PerceptualExtractor::layer_geometry(const std::string& layer) const {
    const auto it = std::find(kLayerNames.begin(), kLayerNames.end(), layer);
    if (it == kLayerNames.end()) {
        throw std::invalid_argument("unknown perceptual layer '" + layer + "'");
    }
    const int idx = static_cast<int>(it - kLayerNames.begin());
    const int b = spec_.base_width;
    if (idx <= 3) return {b, 1};
    if (idx == 4) return {b, 2};
    if (idx <= 8) return {2 * b, 2};
    if (idx == 9) return {2 * b, 4};
    return {4 * b, 4};
}

std::string PerceptualExtractor::architecture() const {
    std::ostringstream os;
    os << "perceptual vgg-style base=" << spec_.base_width << " seed=" << spec_.seed;
    return os.str();
}

std::vector<Var> PerceptualExtractor::features(const Var& img,
                                               const std::vector<std::string>& layers) const {
    int deepest = -1;
    std::vector<int> wanted;
    for (const auto& l : layers) {
        const auto it = std::find(kLayerNames.begin(), kLayerNames.end(), l);
        if (it == kLayerNames.end()) {
            throw std::invalid_argument("unknown perceptual layer '" + l + "'");
        }
        wanted.push_back(static_cast<int>(it - kLayerNames.begin()));
        deepest = std::max(deepest, wanted.back());
    }
    if (img.shape().c != 1) {
        throw std::invalid_argument("perceptual extractor expects single-channel input");
    }
    std::vector<Var> acts(kLayerNames.size());
    const Var centred = ops::add_scalar(img, -0.5);
    Var x = ops::concat_channels(ops::concat_channels(centred, centred), centred);
    int conv = 0;
    for (int idx = 0; idx <= deepest; ++idx) {
        const std::string& n = kLayerNames[idx];
        if (n.rfind("conv", 0) == 0) {
            x = convs_[conv++](x);
        } else if (n.rfind("relu", 0) == 0) {
            x = ops::relu(x);
        } else {
            x = ops::avg_pool2(x);
        }
        acts[idx] = x;
    }
    std::vector<Var> out;
    out.reserve(wanted.size());
    for (int w : wanted) out.push_back(acts[w]);
    return out;
}

Var PerceptualExtractor::features(const Var& img, const std::string& layer) const {
    return features(img, std::vector<std::string>{layer}).front();
}

}  // namespace fpsr
