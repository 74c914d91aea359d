#include "fpsr/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "fpsr/nn/ops.hpp"

namespace fpsr {

using nn::Tensor;
using nn::Var;
namespace ops = nn::ops;

namespace {

void require_same_shape(const Var& a, const Var& b, const char* what) {
    if (!(a.shape() == b.shape())) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                                    b.shape().str());
    }
}

Var one_minus(const Var& x) { return ops::add_scalar(ops::scale(x, -1.0), 1.0); }

Var clamp_prob(const Var& p) { return ops::clamp(p, kProbEps, 1.0 - kProbEps); }

}  // namespace

Var mse_loss(const Var& sr, const Var& hr) {
    require_same_shape(sr, hr, "mse_loss");
    return ops::mean(ops::square(ops::sub(sr, hr)));
}

Var discriminator_loss(const Var& d_real, const Var& d_fake) {
    const Var real_term = ops::mean(ops::log(clamp_prob(d_real)));
    const Var fake_term = ops::mean(ops::log(one_minus(clamp_prob(d_fake))));
    return ops::scale(ops::add(real_term, fake_term), -1.0);
}

Var generator_adversarial_loss(const Var& d_fake, AdversarialForm form) {
    const Var p = clamp_prob(d_fake);
    if (form == AdversarialForm::Saturating) return ops::mean(ops::log(one_minus(p)));
    return ops::scale(ops::mean(ops::log(p)), -1.0);
}

AdversarialLosses adversarial_losses(const Var& d_real, const Var& d_fake, AdversarialForm form) {
    return {generator_adversarial_loss(d_fake, form), discriminator_loss(d_real, d_fake)};
}

Var perceptual_loss(const Var& sr, const Var& hr, const PerceptualExtractor& extractor, const std::string& layer) {
    require_same_shape(sr, hr, "perceptual_loss");
    const Var fs = extractor.features(sr, layer);
    const Var fh = nn::detach(extractor.features(hr, layer));
    return ops::mean(ops::square(ops::sub(fs, fh)));
}

Var gram_matrix(const Var& features) {
    if (features.shape().numel() == 0) throw std::invalid_argument("gram_matrix: empty feature map");
    return ops::gram(features);
}

Var ridge_loss(const Var& sr, const Var& hr, const PerceptualExtractor& extractor,
               const std::vector<std::string>& layers) {
    require_same_shape(sr, hr, "ridge_loss");
    if (layers.empty()) throw std::invalid_argument("ridge_loss: no layers given");
    const auto fs = extractor.features(sr, layers);
    const auto fh = extractor.features(hr, layers);
    Var total;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Var gs = ops::mean_over_batch(gram_matrix(fs[i]));
        const Var gh = nn::detach(ops::mean_over_batch(gram_matrix(fh[i])));
        const Var term = ops::sum(ops::square(ops::sub(gs, gh)));
        total = total.defined() ? ops::add(total, term) : term;
    }
    return total;
}

Var pore_loss(const Var& pred, const Var& gt) {
    require_same_shape(pred, gt, "pore_loss");
    return ops::mean(ops::abs(ops::sub(pred, gt)));
}

Var total_generator_loss(const LossParts& parts, const LossWeights& w) {
    const std::pair<const Var*, double> terms[] = {{&parts.mse, w.mse},
                                                   {&parts.adversarial, w.adversarial},
                                                   {&parts.perceptual, w.perceptual},
                                                   {&parts.ridge, w.ridge},
                                                   {&parts.pore, w.pore}};
    Var total;
    for (const auto& [part, weight] : terms) {
        if (!part->defined()) continue;
        if (!std::isfinite(part->value().item())) throw std::domain_error("total_generator_loss: non-finite part");
        const Var t = ops::scale(*part, weight);
        total = total.defined() ? ops::add(total, t) : t;
    }
    return total.defined() ? total : Var(Tensor::scalar(0.0));
}

double total_generator_loss(double mse, double adversarial, double perceptual, double ridge, double pore,
                            const LossWeights& w) {
    for (double v : {mse, adversarial, perceptual, ridge, pore}) {
        if (!std::isfinite(v)) throw std::domain_error("total_generator_loss: non-finite part");
    }
    return w.mse * mse + w.adversarial * adversarial + w.perceptual * perceptual + w.ridge * ridge + w.pore * pore;
}

Var contrastive_loss(const Var& emb_a, const Var& emb_b, const std::vector<int>& same, double margin) {
    require_same_shape(emb_a, emb_b, "contrastive_loss");
    const nn::Shape s = emb_a.shape();
    if (static_cast<int>(same.size()) != s.n) throw std::invalid_argument("contrastive_loss: label count mismatch");
    Tensor same_mask({s.n, 1, 1, 1}), diff_mask({s.n, 1, 1, 1});
    for (int i = 0; i < s.n; ++i) {
        same_mask[i] = same[i] ? 1.0 : 0.0;
        diff_mask[i] = same[i] ? 0.0 : 1.0;
    }
    const Var d2 = ops::sum_per_sample(ops::square(ops::sub(emb_a, emb_b)));
    // The offset keeps the sqrt derivative finite for coincident embeddings.
    const Var d = ops::sqrt(ops::add_scalar(d2, 1e-12));
    const Var hinge = ops::relu(ops::add_scalar(ops::scale(d, -1.0), margin));
    const Var per_pair = ops::add(ops::mul_const(d2, same_mask), ops::mul_const(ops::square(hinge), diff_mask));
    return ops::mean(per_pair);
}

}  // namespace fpsr
