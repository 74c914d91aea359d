#pragma once

#include <string>
#include <vector>

#include "fpsr/networks.hpp"
#include "fpsr/nn/autograd.hpp"

namespace fpsr {

struct LossWeights {
    double mse = 1e-3;          // lambda1
    double adversarial = 1e-3;  // lambda2
    double perceptual = 1e-3;   // lambda3
    double ridge = 1e-2;        // lambda4
    double pore = 1e-2;         // lambda5
};

enum class AdversarialForm {
    /// -log D(fake)
    NonSaturating,
    /// log(1 - D(fake))
    Saturating,
};

/// Probabilities are clamped to [eps, 1-eps] before every log.
inline constexpr double kProbEps = 1e-7;

/// Mean squared pixel difference over the whole batch.
nn::Var mse_loss(const nn::Var& sr, const nn::Var& hr);

struct AdversarialLosses {
    nn::Var g_loss;
    nn::Var d_loss;
};

/// d_loss = -mean log d_real - mean log(1 - d_fake).
nn::Var discriminator_loss(const nn::Var& d_real, const nn::Var& d_fake);
nn::Var generator_adversarial_loss(const nn::Var& d_fake, AdversarialForm form = AdversarialForm::NonSaturating);
AdversarialLosses adversarial_losses(const nn::Var& d_real, const nn::Var& d_fake,
                                     AdversarialForm form = AdversarialForm::NonSaturating);

/// Mean squared difference of extractor activations at `layer`. hr features carry no gradient.
nn::Var perceptual_loss(const nn::Var& sr, const nn::Var& hr, const PerceptualExtractor& extractor,
                        const std::string& layer);

/// Per-sample Gram matrices (n,1,C,C) of a (n,C,H,W) feature map, normalised by C*H*W.
nn::Var gram_matrix(const nn::Var& features);

/// Sum over layers of the squared Frobenius distance between batch-averaged Gram matrices.
nn::Var ridge_loss(const nn::Var& sr, const nn::Var& hr, const PerceptualExtractor& extractor,
                   const std::vector<std::string>& layers);

/// Mean absolute difference per pixel, averaged over the batch.
nn::Var pore_loss(const nn::Var& pred, const nn::Var& gt);

struct LossParts {
    nn::Var mse;
    nn::Var adversarial;
    nn::Var perceptual;
    nn::Var ridge;
    nn::Var pore;
};

/// Weighted sum of the five parts. Undefined parts count as zero; a non-finite part throws.
nn::Var total_generator_loss(const LossParts& parts, const LossWeights& w);
double total_generator_loss(double mse, double adversarial, double perceptual, double ridge, double pore,
                            const LossWeights& w);

/// Mean over pairs of same ? d^2 : max(0, margin - d)^2 with d the Euclidean embedding distance.
/// `same` holds one 0/1 label per sample.
nn::Var contrastive_loss(const nn::Var& emb_a, const nn::Var& emb_b, const std::vector<int>& same, double margin = 1.0);

}  // namespace fpsr
