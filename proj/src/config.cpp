#include "fpsr/config.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>

namespace fpsr {

using nlohmann::json;

RecognitionConfig EvalConfig::recognition() const {
    RecognitionConfig r;
    r.minutiae = minutiae;
    r.correlation = correlation;
    r.pore = pore_match;
    r.pore_threshold = pore_threshold;
    r.nms_radius = nms_radius;
    return r;
}

namespace {

/// Object section that records which keys were read; anything left over is unknown.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config key '" + label() + "' must be an object");
    }

    template <class T>
    void read(const char* key, T& out) {
        used_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key '" + join(key) + "' has the wrong type");
        }
    }

    std::optional<Section> child(const char* key) {
        used_.insert(key);
        if (!j_.contains(key) || j_.at(key).is_null()) return std::nullopt;
        return Section(j_.at(key), join(key));
    }

    bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void done() const {
        for (const auto& [key, value] : j_.items()) {
            if (!used_.count(key)) throw ConfigError("unknown config key '" + join(key) + "'");
        }
    }

private:
    std::string label() const { return path_.empty() ? "<root>" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <class Fn>
void checked(const std::string& section, Fn&& fn) {
    try {
        fn();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("config section '" + section + "': " + e.what());
    }
}

// ------------------------------------------------------------------ enums

std::string augment_name(Augment a) {
    switch (a) {
        case Augment::Gamma: return "gamma";
        case Augment::Scale: return "scale";
        case Augment::HFlip: return "hflip";
        case Augment::VFlip: return "vflip";
    }
    return "?";
}

Augment parse_augment(const std::string& s, const std::string& key) {
    for (Augment a : {Augment::Gamma, Augment::Scale, Augment::HFlip, Augment::VFlip}) {
        if (augment_name(a) == s) return a;
    }
    throw ConfigError("config key '" + key + "': unknown augmentation '" + s + "'");
}

// ------------------------------------------------------------------ sections

SynthConfig read_synth(Section s) {
    SynthConfig c;
    s.read("image_h", c.image_h);
    s.read("image_w", c.image_w);
    s.read("ridge_period", c.ridge_period);
    s.read("orientation_seed", c.orientation_seed);
    s.read("pore_density", c.pore_density);
    s.read("pore_radius", c.pore_radius);
    s.read("noise_level", c.noise_level);
    s.read("subject_count", c.subject_count);
    s.read("impressions_per_subject", c.impressions_per_subject);
    s.read("session_count", c.session_count);
    s.read("ppi", c.ppi);
    std::string mode = c.orientation_mode == OrientationMode::Random ? "random" : "constant";
    s.read("orientation_mode", mode);
    if (mode == "random") {
        c.orientation_mode = OrientationMode::Random;
    } else if (mode == "constant") {
        c.orientation_mode = OrientationMode::Constant;
    } else {
        throw ConfigError("config key '" + s.join("orientation_mode") + "' must be \"random\" or \"constant\"");
    }
    s.read("constant_angle", c.constant_angle);
    s.read("orientation_spread", c.orientation_spread);
    s.read("orientation_wobble", c.orientation_wobble);
    s.read("phase_noise", c.phase_noise);
    s.read("minutiae_per_subject", c.minutiae_per_subject);
    s.read("ridge_gain", c.ridge_gain);
    s.read("pore_amplitude", c.pore_amplitude);
    s.read("max_translation", c.max_translation);
    s.read("contrast_jitter", c.contrast_jitter);
    s.read("ridge_family_size", c.ridge_family_size);
    s.read("max_rotation", c.max_rotation);
    s.read("distortion", c.distortion);
    s.done();
    checked("dataset.synth", [&] { c.validate(); });
    return c;
}

json write_synth(const SynthConfig& c) {
    return {{"image_h", c.image_h},
            {"image_w", c.image_w},
            {"ridge_period", c.ridge_period},
            {"orientation_seed", c.orientation_seed},
            {"pore_density", c.pore_density},
            {"pore_radius", c.pore_radius},
            {"noise_level", c.noise_level},
            {"subject_count", c.subject_count},
            {"impressions_per_subject", c.impressions_per_subject},
            {"session_count", c.session_count},
            {"ppi", c.ppi},
            {"orientation_mode", c.orientation_mode == OrientationMode::Random ? "random" : "constant"},
            {"constant_angle", c.constant_angle},
            {"orientation_spread", c.orientation_spread},
            {"orientation_wobble", c.orientation_wobble},
            {"phase_noise", c.phase_noise},
            {"minutiae_per_subject", c.minutiae_per_subject},
            {"ridge_gain", c.ridge_gain},
            {"pore_amplitude", c.pore_amplitude},
            {"max_translation", c.max_translation},
            {"contrast_jitter", c.contrast_jitter},
            {"ridge_family_size", c.ridge_family_size},
            {"max_rotation", c.max_rotation},
            {"distortion", c.distortion}};
}

ModelConfig read_model(Section s) {
    ModelConfig m;
    if (auto g = s.child("generator")) {
        g->read("residual_blocks", m.generator.residual_blocks);
        g->read("feature_maps", m.generator.feature_maps);
        g->read("upsample_stages", m.generator.upsample_stages);
        g->read("input_skip", m.generator.input_skip);
        g->done();
    }
    if (auto d = s.child("discriminator")) {
        d->read("base_width", m.discriminator.base_width);
        d->read("dense_units", m.discriminator.dense_units);
        d->read("leak", m.discriminator.leak);
        d->done();
    }
    if (auto v = s.child("verifier")) {
        v->read("base_width", m.verifier.base_width);
        v->read("embedding_dim", m.verifier.embedding_dim);
        v->read("leak", m.verifier.leak);
        v->done();
    }
    if (auto p = s.child("pore_detector")) {
        p->read("base_width", m.pore_detector.base_width);
        p->read("max_width", m.pore_detector.max_width);
        p->read("residual_blocks", m.pore_detector.residual_blocks);
        p->read("leak", m.pore_detector.leak);
        p->done();
    }
    if (auto p = s.child("perceptual")) {
        p->read("base_width", m.perceptual.base_width);
        p->read("seed", m.perceptual.seed);
        p->done();
    }
    s.done();
    auto positive = [](int v, const char* key) {
        if (v < 1) throw ConfigError("config key 'model." + std::string(key) + "' must be >= 1");
    };
    positive(m.generator.feature_maps, "generator.feature_maps");
    positive(m.generator.upsample_stages, "generator.upsample_stages");
    positive(m.discriminator.base_width, "discriminator.base_width");
    positive(m.discriminator.dense_units, "discriminator.dense_units");
    positive(m.verifier.base_width, "verifier.base_width");
    positive(m.verifier.embedding_dim, "verifier.embedding_dim");
    positive(m.pore_detector.base_width, "pore_detector.base_width");
    positive(m.pore_detector.max_width, "pore_detector.max_width");
    positive(m.perceptual.base_width, "perceptual.base_width");
    if (m.generator.residual_blocks < 0 || m.pore_detector.residual_blocks < 0) {
        throw ConfigError("config key 'model.*.residual_blocks' must be >= 0");
    }
    return m;
}

json write_model(const ModelConfig& m) {
    return {{"generator",
             {{"residual_blocks", m.generator.residual_blocks},
              {"feature_maps", m.generator.feature_maps},
              {"upsample_stages", m.generator.upsample_stages},
              {"input_skip", m.generator.input_skip}}},
            {"discriminator",
             {{"base_width", m.discriminator.base_width},
              {"dense_units", m.discriminator.dense_units},
              {"leak", m.discriminator.leak}}},
            {"verifier",
             {{"base_width", m.verifier.base_width},
              {"embedding_dim", m.verifier.embedding_dim},
              {"leak", m.verifier.leak}}},
            {"pore_detector",
             {{"base_width", m.pore_detector.base_width},
              {"max_width", m.pore_detector.max_width},
              {"residual_blocks", m.pore_detector.residual_blocks},
              {"leak", m.pore_detector.leak}}},
            {"perceptual", {{"base_width", m.perceptual.base_width}, {"seed", m.perceptual.seed}}}};
}

PatchConfig read_patch(Section s) {
    PatchConfig p;
    s.read("patch_h", p.patch_h);
    s.read("patch_w", p.patch_w);
    s.read("stride_h", p.stride_h);
    s.read("stride_w", p.stride_w);
    s.read("factor", p.factor);
    s.read("pore_sigma", p.pore_sigma);
    s.done();
    if (p.factor < 2) throw ConfigError("config key 'patch.factor' must be >= 2");
    if (p.patch_h % p.factor != 0 || p.patch_w % p.factor != 0) {
        throw ConfigError("config key 'patch.patch_h/patch_w' must be divisible by patch.factor");
    }
    if (p.stride_h < 1 || p.stride_w < 1) throw ConfigError("config key 'patch.stride_h/stride_w' must be >= 1");
    if (p.pore_sigma < 0.0) throw ConfigError("config key 'patch.pore_sigma' must be >= 0");
    return p;
}

json write_patch(const PatchConfig& p) {
    return {{"patch_h", p.patch_h},   {"patch_w", p.patch_w}, {"stride_h", p.stride_h},
            {"stride_w", p.stride_w}, {"factor", p.factor},   {"pore_sigma", p.pore_sigma}};
}

TrainConfig read_train(Section s) {
    TrainConfig t;
    s.read("batch_size", t.batch_size);
    s.read("sr_lr", t.sr_lr);
    s.read("pore_lr", t.pore_lr);
    s.read("verifier_lr", t.verifier_lr);
    s.read("adam_beta1", t.adam_beta1);
    s.read("adam_beta2", t.adam_beta2);
    s.read("sr_epochs", t.sr_epochs);
    s.read("pore_epochs", t.pore_epochs);
    s.read("verifier_epochs", t.verifier_epochs);
    s.read("joint_phase1_epochs", t.joint_phase1_epochs);
    s.read("joint_phase2_epochs", t.joint_phase2_epochs);
    s.read("max_steps", t.max_steps);
    if (auto caps = s.child("phase_max_steps")) {
        for (const char* name : {"verifier", "sr", "pore", "joint"}) {
            long cap = std::numeric_limits<long>::min();
            caps->read(name, cap);
            if (cap != std::numeric_limits<long>::min()) t.phase_max_steps[name] = cap;
        }
        caps->done();
    }
    s.read("seed", t.seed);
    if (auto w = s.child("loss_weights")) {
        w->read("mse", t.loss_weights.mse);
        w->read("adversarial", t.loss_weights.adversarial);
        w->read("perceptual", t.loss_weights.perceptual);
        w->read("ridge", t.loss_weights.ridge);
        w->read("pore", t.loss_weights.pore);
        w->done();
    }
    std::string form = t.adversarial_form == AdversarialForm::NonSaturating ? "non_saturating" : "saturating";
    s.read("adversarial_form", form);
    if (form == "non_saturating") {
        t.adversarial_form = AdversarialForm::NonSaturating;
    } else if (form == "saturating") {
        t.adversarial_form = AdversarialForm::Saturating;
    } else {
        throw ConfigError("config key 'train.adversarial_form' must be \"non_saturating\" or \"saturating\"");
    }
    s.read("perceptual_layer", t.perceptual_layer);
    s.read("ridge_layers", t.ridge_layers);
    s.read("contrastive_margin", t.contrastive_margin);
    s.read("grad_clip", t.grad_clip);
    s.read("d_steps_per_g", t.d_steps_per_g);
    s.read("freeze_pore_in_phase1", t.freeze_pore_in_phase1);
    s.read("pretrain_adversarial", t.pretrain_adversarial);
    s.read("pore_pretrain_loss", t.pore_pretrain_loss);
    std::vector<std::string> augment_names;
    for (Augment a : t.augment) augment_names.push_back(augment_name(a));
    s.read("augment", augment_names);
    t.augment.clear();
    for (const auto& n : augment_names) t.augment.insert(parse_augment(n, s.join("augment")));
    s.read("device", t.device);
    s.done();
    const auto& layers = PerceptualExtractor::layer_names();
    auto known_layer = [&](const std::string& l) { return std::find(layers.begin(), layers.end(), l) != layers.end(); };
    if (!known_layer(t.perceptual_layer)) {
        throw ConfigError("config key 'train.perceptual_layer': unknown layer '" + t.perceptual_layer + "'");
    }
    for (const auto& l : t.ridge_layers) {
        if (!known_layer(l)) throw ConfigError("config key 'train.ridge_layers': unknown layer '" + l + "'");
    }
    checked("train", [&] { t.validate(); });
    return t;
}

json write_train(const TrainConfig& t) {
    json aug = json::array();
    for (Augment a : t.augment) aug.push_back(augment_name(a));
    return {{"batch_size", t.batch_size},
            {"sr_lr", t.sr_lr},
            {"pore_lr", t.pore_lr},
            {"verifier_lr", t.verifier_lr},
            {"adam_beta1", t.adam_beta1},
            {"adam_beta2", t.adam_beta2},
            {"sr_epochs", t.sr_epochs},
            {"pore_epochs", t.pore_epochs},
            {"verifier_epochs", t.verifier_epochs},
            {"joint_phase1_epochs", t.joint_phase1_epochs},
            {"joint_phase2_epochs", t.joint_phase2_epochs},
            {"max_steps", t.max_steps},
            {"phase_max_steps", t.phase_max_steps},
            {"seed", t.seed},
            {"loss_weights",
             {{"mse", t.loss_weights.mse},
              {"adversarial", t.loss_weights.adversarial},
              {"perceptual", t.loss_weights.perceptual},
              {"ridge", t.loss_weights.ridge},
              {"pore", t.loss_weights.pore}}},
            {"adversarial_form", t.adversarial_form == AdversarialForm::NonSaturating ? "non_saturating" : "saturating"},
            {"perceptual_layer", t.perceptual_layer},
            {"ridge_layers", t.ridge_layers},
            {"contrastive_margin", t.contrastive_margin},
            {"grad_clip", t.grad_clip},
            {"d_steps_per_g", t.d_steps_per_g},
            {"freeze_pore_in_phase1", t.freeze_pore_in_phase1},
            {"pretrain_adversarial", t.pretrain_adversarial},
            {"pore_pretrain_loss", t.pore_pretrain_loss},
            {"augment", aug},
            {"device", t.device}};
}

EvalConfig read_eval(Section s) {
    EvalConfig e;
    s.read("pore_threshold", e.pore_threshold);
    s.read("match_radius", e.match_radius);
    s.read("nms_radius", e.nms_radius);
    s.read("sweep_thresholds", e.sweep_thresholds);
    s.read("protocol", e.protocol);
    s.read("subjects", e.subjects);
    s.read("ground_truth_maps", e.ground_truth_maps);
    s.read("inputs", e.inputs);
    s.read("histogram_bins", e.histogram_bins);
    if (auto m = s.child("minutiae")) {
        m->read("border", e.minutiae.border);
        m->read("smooth_sigma", e.minutiae.smooth_sigma);
        m->read("mean_window", e.minutiae.mean_window);
        m->read("min_component", e.minutiae.min_component);
        m->read("distance_tol", e.minutiae.distance_tol);
        m->read("angle_tol", e.minutiae.angle_tol);
        m->read("max_rotation", e.minutiae.max_rotation);
        m->read("rotation_step", e.minutiae.rotation_step);
        m->done();
    }
    if (auto c = s.child("correlation")) {
        c->read("max_shift", e.correlation.max_shift);
        c->read("sigma_low", e.correlation.sigma_low);
        c->read("sigma_high", e.correlation.sigma_high);
        c->done();
    }
    if (auto p = s.child("pore_match")) {
        p->read("patch_radius", e.pore_match.patch_radius);
        p->read("iterations", e.pore_match.iterations);
        p->read("inlier_radius", e.pore_match.inlier_radius);
        p->read("seed", e.pore_match.seed);
        p->read("min_pores", e.pore_match.min_pores);
        p->done();
    }
    s.done();
    if (!(e.pore_threshold >= 0.0 && e.pore_threshold <= 1.0)) {
        throw ConfigError("config key 'eval.pore_threshold' must be in [0,1]");
    }
    if (e.match_radius < 0.0 || e.nms_radius < 0.0) throw ConfigError("config key 'eval.*_radius' must be >= 0");
    if (e.protocol != "two-session") throw ConfigError("config key 'eval.protocol' must be \"two-session\"");
    if (e.subjects != "test" && e.subjects != "all") {
        throw ConfigError("config key 'eval.subjects' must be \"test\" or \"all\"");
    }
    for (const auto& in : e.inputs) {
        if (in != "hr" && in != "sr" && in != "lr") {
            throw ConfigError("config key 'eval.inputs': unknown input '" + in + "' (hr, sr, lr)");
        }
    }
    if (e.histogram_bins < 1) throw ConfigError("config key 'eval.histogram_bins' must be >= 1");
    if (e.correlation.max_shift < 0 || !(e.correlation.sigma_low > 0.0) ||
        !(e.correlation.sigma_high > e.correlation.sigma_low)) {
        throw ConfigError("config section 'eval.correlation' is invalid (need max_shift >= 0, 0 < sigma_low < sigma_high)");
    }
    if (e.pore_match.iterations < 1 || e.pore_match.patch_radius < 1 || !(e.pore_match.inlier_radius > 0.0)) {
        throw ConfigError("config section 'eval.pore_match' is invalid");
    }
    return e;
}

json write_eval(const EvalConfig& e) {
    return {{"pore_threshold", e.pore_threshold},
            {"match_radius", e.match_radius},
            {"nms_radius", e.nms_radius},
            {"sweep_thresholds", e.sweep_thresholds},
            {"protocol", e.protocol},
            {"subjects", e.subjects},
            {"ground_truth_maps", e.ground_truth_maps},
            {"inputs", e.inputs},
            {"histogram_bins", e.histogram_bins},
            {"minutiae",
             {{"border", e.minutiae.border},
              {"smooth_sigma", e.minutiae.smooth_sigma},
              {"mean_window", e.minutiae.mean_window},
              {"min_component", e.minutiae.min_component},
              {"distance_tol", e.minutiae.distance_tol},
              {"angle_tol", e.minutiae.angle_tol},
              {"max_rotation", e.minutiae.max_rotation},
              {"rotation_step", e.minutiae.rotation_step}}},
            {"correlation",
             {{"max_shift", e.correlation.max_shift},
              {"sigma_low", e.correlation.sigma_low},
              {"sigma_high", e.correlation.sigma_high}}},
            {"pore_match",
             {{"patch_radius", e.pore_match.patch_radius},
              {"iterations", e.pore_match.iterations},
              {"inlier_radius", e.pore_match.inlier_radius},
              {"seed", e.pore_match.seed},
              {"min_pores", e.pore_match.min_pores}}}};
}

}  // namespace

ExperimentConfig experiment_from_json(const json& j) {
    ExperimentConfig cfg;
    Section root(j, "");
    root.read("output", cfg.output);
    if (auto d = root.child("dataset")) {
        d->read("manifest", cfg.dataset.manifest);
        d->read("train_subjects", cfg.dataset.train_subjects);
        if (auto s = d->child("synth")) cfg.dataset.synth = read_synth(*s);
        d->done();
        if (cfg.dataset.train_subjects < 0) throw ConfigError("config key 'dataset.train_subjects' must be >= 0");
    }
    if (auto m = root.child("model")) cfg.model = read_model(*m);
    if (auto p = root.child("patch")) cfg.patch = read_patch(*p);
    if (auto t = root.child("train")) cfg.train = read_train(*t);
    if (auto e = root.child("eval")) cfg.eval = read_eval(*e);
    root.done();
    return cfg;
}

json to_json(const ExperimentConfig& cfg) {
    json d = {{"manifest", cfg.dataset.manifest}, {"train_subjects", cfg.dataset.train_subjects}};
    if (cfg.dataset.synth) d["synth"] = write_synth(*cfg.dataset.synth);
    return {{"output", cfg.output},
            {"dataset", d},
            {"model", write_model(cfg.model)},
            {"patch", write_patch(cfg.patch)},
            {"train", write_train(cfg.train)},
            {"eval", write_eval(cfg.eval)}};
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return experiment_from_json(j);
}

}  // namespace fpsr
