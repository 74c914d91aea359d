#include "fpsr/training.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "fpsr/hash.hpp"
#include "fpsr/nn/ops.hpp"
#include "fpsr/synthgen.hpp"

namespace fpsr {

namespace fs = std::filesystem;
using nn::Tensor;
using nn::Var;

TrainConfig TrainConfig::for_phase(const std::string& phase) const {
    TrainConfig c = *this;
    if (const auto it = phase_max_steps.find(phase); it != phase_max_steps.end()) c.max_steps = it->second;
    return c;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(sr_lr > 0.0) || !(pore_lr > 0.0) || !(verifier_lr > 0.0)) fail("learning rates must be > 0");
    if (sr_epochs < 0 || pore_epochs < 0 || verifier_epochs < 0 || joint_phase1_epochs < 0 ||
        joint_phase2_epochs < 0) {
        fail("epochs must be >= 0");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        fail("adam betas must be in [0,1)");
    }
    if (max_steps < 0) fail("max_steps must be >= 0");
    for (const auto& [name, cap] : phase_max_steps) {
        if (name != "verifier" && name != "sr" && name != "pore" && name != "joint") {
            fail("phase_max_steps has unknown phase '" + name + "'");
        }
        if (cap < 0) fail("phase_max_steps values must be >= 0");
    }
    if (d_steps_per_g < 0) fail("d_steps_per_g must be >= 0");
    if (grad_clip < 0.0) fail("grad_clip must be >= 0");
    if (!(contrastive_margin > 0.0)) fail("contrastive_margin must be > 0");
    const auto& w = loss_weights;
    for (double v : {w.mse, w.adversarial, w.perceptual, w.ridge, w.pore}) {
        if (!(v >= 0.0)) fail("loss weights must be non-negative");
    }
    if (pore_pretrain_loss != "l1" && pore_pretrain_loss != "l2") {
        fail("pore_pretrain_loss must be \"l1\" or \"l2\"");
    }
    if (device != "cpu") fail("unsupported device '" + device + "' (only cpu)");
}

// ----------------------------------------------------------------------- data

PatchDataset build_patch_dataset(const Manifest& manifest, const std::vector<int>& records, const PatchConfig& cfg) {
    std::vector<int> idx = records;
    if (idx.empty()) {
        idx.resize(manifest.records.size());
        std::iota(idx.begin(), idx.end(), 0);
    }
    std::map<std::string, int> subject_ids;
    for (const auto& r : manifest.records) subject_ids.emplace(r.subject_id, 0);
    int next = 0;
    for (auto& [name, id] : subject_ids) id = next++;

    PatchDataset ds;
    for (int i : idx) {
        const auto& rec = manifest.records.at(static_cast<std::size_t>(i));
        FingerprintImage img = load_image(manifest.resolve(rec.image), rec.ppi);
        img.subject_id = rec.subject_id;
        img.session_id = rec.session_id;
        PorePointSet pores{{}, img.height, img.width};
        if (!rec.annotations.empty()) pores = load_pore_annotations(manifest.resolve(rec.annotations), img);
        const double sigma = cfg.pore_sigma > 0.0 ? cfg.pore_sigma : default_pore_sigma(img.ppi);
        const auto patches = extract_patches(img, pores, cfg.patch_h, cfg.patch_w, cfg.stride_h, cfg.stride_w);
        for (std::size_t p = 0; p < patches.size(); ++p) {
            ds.samples.push_back(make_training_sample(patches[p], cfg.factor, sigma));
            ds.subject.push_back(subject_ids[rec.subject_id]);
            ds.position.push_back(static_cast<int>(p));
            ds.record.push_back(i);
        }
    }
    return ds;
}

Batch make_batch(const std::vector<TrainingSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
    const auto& s0 = samples.front();
    const int n = static_cast<int>(samples.size());
    Batch b{Tensor({n, 1, s0.lr_patch.height, s0.lr_patch.width}),
            Tensor({n, 1, s0.hr_patch.height, s0.hr_patch.width}),
            Tensor({n, 1, s0.hr_pore_map.height, s0.hr_pore_map.width})};
    for (int i = 0; i < n; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        if (!s.lr_patch.same_size(s0.lr_patch) || !s.hr_patch.same_size(s0.hr_patch)) {
            throw std::invalid_argument("make_batch: samples differ in size");
        }
        std::copy(s.lr_patch.data.begin(), s.lr_patch.data.end(), b.lr.plane(i, 0));
        std::copy(s.hr_patch.data.begin(), s.hr_patch.data.end(), b.hr.plane(i, 0));
        std::copy(s.hr_pore_map.data.begin(), s.hr_pore_map.data.end(), b.pore_map.plane(i, 0));
    }
    return b;
}

// --------------------------------------------------------------------- models

Models::Models(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
    generator = std::make_unique<Generator>(cfg.generator, mix_seed(seed, 1));
    verifier = std::make_unique<Verifier>(cfg.verifier, mix_seed(seed, 2));
    discriminator = std::make_unique<Discriminator>(cfg.discriminator, verifier->tap_channels(), mix_seed(seed, 3));
    pore_detector = std::make_unique<PoreDetector>(cfg.pore_detector, mix_seed(seed, 4));
    perceptual = std::make_unique<PerceptualExtractor>(cfg.perceptual);
}

std::vector<std::pair<std::string, Network*>> Models::trainable() {
    return {{"generator", generator.get()},
            {"discriminator", discriminator.get()},
            {"pore_detector", pore_detector.get()},
            {"verifier", verifier.get()}};
}

namespace {

nn::AdamConfig adam(const TrainConfig& cfg, double lr) {
    nn::AdamConfig a;
    a.lr = lr;
    a.beta1 = cfg.adam_beta1;
    a.beta2 = cfg.adam_beta2;
    a.clip_norm = cfg.grad_clip;
    return a;
}

}  // namespace

TrainState::TrainState(const ModelConfig& model_cfg, const TrainConfig& train_cfg)
    : models(std::make_unique<Models>(model_cfg, train_cfg.seed)),
      opt_generator(models->generator->params(), adam(train_cfg, train_cfg.sr_lr)),
      opt_discriminator(models->discriminator->params(), adam(train_cfg, train_cfg.sr_lr)),
      opt_pore(models->pore_detector->params(), adam(train_cfg, train_cfg.pore_lr)),
      opt_verifier(models->verifier->params(), adam(train_cfg, train_cfg.verifier_lr)),
      rng(mix_seed(train_cfg.seed, 0x7A11)) {}

std::vector<std::pair<std::string, nn::Adam*>> TrainState::optimizers() {
    return {{"generator", &opt_generator},
            {"discriminator", &opt_discriminator},
            {"pore_detector", &opt_pore},
            {"verifier", &opt_verifier}};
}

void TrainState::begin_phase(const std::string& name) {
    if (phase == name) return;
    phase = name;
    epoch = 0;
    phase_step = 0;
}

// ------------------------------------------------------------------------ log

TrainingLog::TrainingLog(const fs::path& path, bool append) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const bool fresh = !append || !fs::exists(path) || fs::file_size(path) == 0;
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw TrainingError("cannot open training log " + path.string());
    if (fresh) out_ << "step,epoch,loss_name,value\n";
}

void TrainingLog::add(long step, long epoch, const std::string& name, double value) {
    ++rows_;
    if (!out_.is_open()) return;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    out_ << step << ',' << epoch << ',' << name << ',' << buf << '\n';
}

void TrainingLog::flush() {
    if (out_.is_open()) out_.flush();
}

// -------------------------------------------------------------------- loops

namespace {

void record(TrainState& st, TrainingLog& log, const std::string& name, double value) {
    if (!std::isfinite(value)) {
        throw TrainingError("non-finite " + name + " loss at step " + std::to_string(st.global_step) + " (phase " +
                            st.phase + ", epoch " + std::to_string(st.epoch) + ")");
    }
    log.add(st.global_step, st.epoch, name, value);
    auto [it, inserted] = st.running.emplace(name, value);
    if (!inserted) it->second = 0.98 * it->second + 0.02 * value;
}

std::vector<TrainingSample> gather(TrainState& st, const PatchDataset& data, const std::vector<std::size_t>& idx,
                                   const std::set<Augment>& ops) {
    std::vector<TrainingSample> out;
    out.reserve(idx.size());
    for (auto i : idx) {
        const std::uint64_t seed = st.rng();
        const auto& s = data.samples[i];
        out.push_back(ops.empty() ? s : augment(s, ops, seed, s.hr_patch.height / s.lr_patch.height));
    }
    return out;
}

/// Shuffled mini-batches per epoch; `step` consumes one batch of sample indices.
void run_epochs(TrainState& st, std::size_t n, const TrainConfig& cfg, int epochs, const TrainHooks& hooks,
                const std::function<void(const std::vector<std::size_t>&)>& step) {
    if (n == 0) throw TrainingError("empty dataset for phase " + st.phase);
    const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
    const std::size_t batches = n / bs;
    while (st.epoch < epochs) {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), st.rng);
        bool capped = false;
        for (std::size_t b = 0; b < batches; ++b) {
            if (cfg.max_steps > 0 && st.phase_step >= cfg.max_steps) {
                capped = true;
                break;
            }
            std::vector<std::size_t> idx(perm.begin() + static_cast<long>(b * bs),
                                         perm.begin() + static_cast<long>((b + 1) * bs));
            step(idx);
            ++st.phase_step;
            ++st.global_step;
            if (hooks.progress && st.phase_step % 10 == 0) {
                *hooks.progress << st.phase << " epoch " << st.epoch << " step " << st.phase_step;
                for (const auto& [k, v] : st.running) *hooks.progress << ' ' << k << '=' << v;
                *hooks.progress << '\n';
            }
        }
        if (capped || (cfg.max_steps > 0 && st.phase_step >= cfg.max_steps)) {
            st.epoch = epochs;
        } else {
            ++st.epoch;
        }
        if (hooks.on_epoch_end) hooks.on_epoch_end(st);
    }
}

struct FreezeGuard {
    nn::ParamStore& store;
    bool previous;
    FreezeGuard(nn::ParamStore& s, bool frozen) : store(s), previous(s.frozen()) { store.set_frozen(frozen); }
    ~FreezeGuard() { store.set_frozen(previous); }
};

/// One discriminator/generator round. `with_ridge_pore` enables the joint-training terms.
void gan_step(TrainState& st, const Batch& batch, const TrainConfig& cfg, TrainingLog& log, LossWeights w,
              bool with_ridge_pore, bool update_pore) {
    Models& m = *st.models;
    Generator& g = *m.generator;
    Discriminator& d = *m.discriminator;
    Verifier& v = *m.verifier;
    const Var lr(batch.lr), hr(batch.hr), gt_map(batch.pore_map);

    g.set_training(true);
    const Var sr = g.forward(lr);
    const bool adversarial = w.adversarial > 0.0 && cfg.d_steps_per_g > 0;

    if (adversarial) {
        const Var sr_fixed = nn::detach(sr);
        const VerifierTaps taps_real = v.forward(hr).taps;
        const VerifierTaps taps_fake = v.forward(sr_fixed).taps;
        for (int k = 0; k < cfg.d_steps_per_g; ++k) {
            const Var d_real = d.forward(lr, hr, taps_real);
            const Var d_fake = d.forward(lr, sr_fixed, taps_fake);
            const Var d_loss = discriminator_loss(d_real, d_fake);
            record(st, log, "d_loss", d_loss.value().item());
            nn::backward(d_loss);
            st.opt_discriminator.step();
            st.opt_discriminator.zero_grad();
        }
    }

    // Held through backward: requires_grad is read when gradients propagate, and a
    // discriminator left trainable would collect the generator's gradient.
    FreezeGuard freeze_d(d.params(), true);
    LossParts parts;
    parts.mse = mse_loss(sr, hr);
    if (adversarial) {
        const VerifierTaps taps_sr = v.forward(sr).taps;
        parts.adversarial = generator_adversarial_loss(d.forward(lr, sr, taps_sr), cfg.adversarial_form);
    }
    if (w.perceptual > 0.0) parts.perceptual = perceptual_loss(sr, hr, *m.perceptual, cfg.perceptual_layer);
    if (with_ridge_pore) {
        if (w.ridge > 0.0) parts.ridge = ridge_loss(sr, hr, *m.perceptual, cfg.ridge_layers);
        parts.pore = pore_loss(m.pore_detector->forward(sr), gt_map);
    }
    const Var total = total_generator_loss(parts, w);

    record(st, log, "mse", parts.mse.value().item());
    if (parts.adversarial.defined()) record(st, log, "adversarial", parts.adversarial.value().item());
    if (parts.perceptual.defined()) record(st, log, "perceptual", parts.perceptual.value().item());
    if (parts.ridge.defined()) record(st, log, "ridge", parts.ridge.value().item());
    if (parts.pore.defined()) record(st, log, "pore", parts.pore.value().item());
    record(st, log, "total", total.value().item());

    nn::backward(total);
    st.opt_generator.step();
    st.opt_generator.zero_grad();
    if (update_pore) st.opt_pore.step();
    st.opt_pore.zero_grad();
}

}  // namespace

void train_verifier(TrainState& st, const PatchDataset& data, const TrainConfig& cfg, TrainingLog& log,
                    const TrainHooks& hooks) {
    cfg.validate();
    st.begin_phase("verifier");
    if (data.empty()) throw TrainingError("train_verifier: empty dataset");
    std::map<int, std::vector<std::size_t>> by_subject;
    std::map<std::pair<int, int>, std::vector<std::size_t>> by_subject_position;
    for (std::size_t i = 0; i < data.size(); ++i) {
        by_subject[data.subject[i]].push_back(i);
        by_subject_position[{data.subject[i], data.position[i]}].push_back(i);
    }
    if (by_subject.size() < 2) throw TrainingError("train_verifier: single-class input, need two or more subjects");

    Verifier& v = *st.models->verifier;
    FreezeGuard unfreeze(v.params(), false);
    const int f = data.samples.front().hr_patch.height / data.samples.front().lr_patch.height;
    run_epochs(st, data.size(), cfg, cfg.verifier_epochs, hooks, [&](const std::vector<std::size_t>& anchors) {
        std::vector<TrainingSample> a, b;
        std::vector<int> same;
        for (std::size_t k = 0; k < anchors.size(); ++k) {
            const std::size_t i = anchors[k];
            const bool want_same = k % 2 == 0;
            std::size_t j = i;
            if (want_same) {
                const auto& pool = by_subject_position[{data.subject[i], data.position[i]}];
                if (pool.size() > 1) {
                    do {
                        j = pool[st.rng() % pool.size()];
                    } while (j == i);
                }
            } else {
                do {
                    j = st.rng() % data.size();
                } while (data.subject[j] == data.subject[i]);
            }
            a.push_back(data.samples[i]);
            b.push_back(data.samples[j]);
            same.push_back(want_same ? 1 : 0);
        }
        // LR patches brought to HR size, so the same weights accept generated HR samples.
        const Var ea = v.forward(nn::ops::upsample_nearest(Var(make_batch(a).lr), f)).embedding;
        const Var eb = v.forward(nn::ops::upsample_nearest(Var(make_batch(b).lr), f)).embedding;
        const Var loss = contrastive_loss(ea, eb, same, cfg.contrastive_margin);
        record(st, log, "contrastive", loss.value().item());
        nn::backward(loss);
        st.opt_verifier.step();
        st.opt_verifier.zero_grad();
    });
}

void pretrain_sr(TrainState& st, const PatchDataset& data, const TrainConfig& cfg, TrainingLog& log,
                 const TrainHooks& hooks) {
    cfg.validate();
    st.begin_phase("sr");
    Models& m = *st.models;
    FreezeGuard freeze_v(m.verifier->params(), true);
    FreezeGuard freeze_p(m.pore_detector->params(), true);
    LossWeights w = cfg.loss_weights;
    w.ridge = 0.0;
    w.pore = 0.0;
    if (!cfg.pretrain_adversarial) w.adversarial = 0.0;
    run_epochs(st, data.size(), cfg, cfg.sr_epochs, hooks, [&](const std::vector<std::size_t>& idx) {
        gan_step(st, make_batch(gather(st, data, idx, cfg.augment)), cfg, log, w, false, false);
    });
}

void pretrain_pore(TrainState& st, const PatchDataset& data, const TrainConfig& cfg, TrainingLog& log,
                   const TrainHooks& hooks) {
    cfg.validate();
    st.begin_phase("pore");
    PoreDetector& p = *st.models->pore_detector;
    FreezeGuard unfreeze(p.params(), false);
    run_epochs(st, data.size(), cfg, cfg.pore_epochs, hooks, [&](const std::vector<std::size_t>& idx) {
        const Batch batch = make_batch(gather(st, data, idx, cfg.augment));
        const Var pred = p.forward(Var(batch.hr));
        const Var gt(batch.pore_map);
        const Var loss = cfg.pore_pretrain_loss == "l2" ? mse_loss(pred, gt) : pore_loss(pred, gt);
        record(st, log, "pore", loss.value().item());
        nn::backward(loss);
        st.opt_pore.step();
        st.opt_pore.zero_grad();
    });
}

void joint_train(TrainState& st, const PatchDataset& data, const TrainConfig& cfg, TrainingLog& log,
                 const TrainHooks& hooks) {
    cfg.validate();
    Models& m = *st.models;
    FreezeGuard freeze_v(m.verifier->params(), true);
    const std::array<std::pair<const char*, int>, 2> phases{{{"joint1", cfg.joint_phase1_epochs},
                                                              {"joint2", cfg.joint_phase2_epochs}}};
    // A state resumed in joint2 must not rerun joint1.
    const std::size_t first = st.phase == "joint2" ? 1 : 0;
    for (std::size_t k = first; k < phases.size(); ++k) {
        st.begin_phase(phases[k].first);
        const bool update_pore = k == 1 || !cfg.freeze_pore_in_phase1;
        FreezeGuard pore_state(m.pore_detector->params(), !update_pore);
        run_epochs(st, data.size(), cfg, phases[k].second, hooks, [&](const std::vector<std::size_t>& idx) {
            gan_step(st, make_batch(gather(st, data, idx, cfg.augment)), cfg, log, cfg.loss_weights, true,
                     update_pore);
        });
    }
}

// --------------------------------------------------------------- checkpoints

namespace {

constexpr char kBlobMagic[8] = {'F', 'P', 'S', 'R', 'B', 'L', 'O', 'B'};

template <class T>
void put(std::string& out, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.append(b, sizeof(T));
}

template <class T>
T get(const std::string& in, std::size_t& pos, const std::string& what) {
    if (pos + sizeof(T) > in.size()) throw CheckpointError(what + ": truncated blob");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

std::string serialize_tensors(const std::vector<std::pair<std::string, const Tensor*>>& items) {
    std::string out(kBlobMagic, sizeof kBlobMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(items.size()));
    for (const auto& [name, t] : items) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        const auto s = t->shape();
        for (int d : {s.n, s.c, s.h, s.w}) put<std::int32_t>(out, d);
        out.append(reinterpret_cast<const char*>(t->data()), t->size() * sizeof(double));
    }
    return out;
}

void deserialize_tensors(const std::string& blob, const std::vector<std::pair<std::string, Tensor*>>& items,
                         const std::string& what) {
    if (blob.size() < sizeof kBlobMagic || std::memcmp(blob.data(), kBlobMagic, sizeof kBlobMagic) != 0) {
        throw CheckpointError(what + ": not a parameter blob");
    }
    std::size_t pos = sizeof kBlobMagic;
    const auto version = get<std::uint32_t>(blob, pos, what);
    if (version != static_cast<std::uint32_t>(kCheckpointVersion)) {
        throw CheckpointError(what + ": blob version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
    }
    const auto count = get<std::uint32_t>(blob, pos, what);
    if (count != items.size()) {
        throw CheckpointError(what + ": blob holds " + std::to_string(count) + " tensors, expected " +
                              std::to_string(items.size()));
    }
    for (const auto& [name, t] : items) {
        const auto len = get<std::uint32_t>(blob, pos, what);
        if (pos + len > blob.size()) throw CheckpointError(what + ": truncated blob");
        const std::string stored = blob.substr(pos, len);
        pos += len;
        nn::Shape s{};
        s.n = get<std::int32_t>(blob, pos, what);
        s.c = get<std::int32_t>(blob, pos, what);
        s.h = get<std::int32_t>(blob, pos, what);
        s.w = get<std::int32_t>(blob, pos, what);
        if (stored != name || !(s == t->shape())) {
            throw CheckpointError(what + ": tensor '" + stored + "' " + s.str() + " does not match '" + name + "' " +
                                  t->shape().str());
        }
        const std::size_t bytes = t->size() * sizeof(double);
        if (pos + bytes > blob.size()) throw CheckpointError(what + ": truncated blob");
        std::memcpy(t->data(), blob.data() + pos, bytes);
        pos += bytes;
    }
    if (pos != blob.size()) throw CheckpointError(what + ": trailing bytes in blob");
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw CheckpointError("missing checkpoint file " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + p.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + p.string());
}

std::string hex_sha(const std::string& bytes) {
    return sha256_hex(std::string_view(bytes.data(), bytes.size()));
}

nlohmann::json read_state(const fs::path& dir) {
    const auto text = read_file(dir / "state.json");
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("corrupt state.json in " + dir.string() + ": " + e.what());
    }
}

void check_version(const nlohmann::json& st, const fs::path& dir) {
    const int version = st.value("version", -1);
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint " + dir.string() + " has version " + std::to_string(version) +
                              ", expected " + std::to_string(kCheckpointVersion));
    }
}

std::string verified_blob(const fs::path& dir, const nlohmann::json& entry, const std::string& what) {
    const std::string file = entry.at("file").get<std::string>();
    const std::string bytes = read_file(dir / file);
    const std::string expected = entry.at("sha256").get<std::string>();
    if (hex_sha(bytes) != expected) {
        throw CheckpointError(what + ": hash mismatch for " + (dir / file).string() + " (corrupt or tampered blob)");
    }
    return bytes;
}

void restore_network(const fs::path& dir, const nlohmann::json& st, const std::string& name, Network& net) {
    if (!st.contains("networks") || !st["networks"].contains(name)) {
        throw CheckpointError("checkpoint " + dir.string() + " has no " + name);
    }
    const auto& entry = st["networks"][name];
    const std::string stored_hash = entry.at("spec_hash").get<std::string>();
    if (stored_hash != net.spec_hash()) {
        throw CheckpointError("architecture mismatch for " + name + ": checkpoint spec hash " +
                              stored_hash.substr(0, 12) + ", model spec hash " + net.spec_hash().substr(0, 12));
    }
    deserialize_params(verified_blob(dir, entry, name), net.params(), name);
}

}  // namespace

std::string serialize_params(const nn::ParamStore& store) {
    std::vector<std::pair<std::string, const Tensor*>> items;
    for (const auto& e : store.entries()) items.emplace_back(e.name, &e.var.value());
    return serialize_tensors(items);
}

void deserialize_params(const std::string& blob, nn::ParamStore& store, const std::string& what) {
    std::vector<std::pair<std::string, Tensor*>> items;
    for (const auto& e : store.entries()) {
        Var v = e.var;
        items.emplace_back(e.name, &v.mutable_value());
    }
    deserialize_tensors(blob, items, what);
}

void save_checkpoint(TrainState& state, const fs::path& dir) {
    fs::create_directories(dir);
    nlohmann::json st;
    st["version"] = kCheckpointVersion;
    st["phase"] = state.phase;
    st["epoch"] = state.epoch;
    st["phase_step"] = state.phase_step;
    st["global_step"] = state.global_step;
    std::ostringstream rng;
    rng << state.rng;
    st["rng"] = rng.str();
    nlohmann::json running = nlohmann::json::object();
    for (const auto& [k, v] : state.running) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%a", v);
        running[k] = buf;
    }
    st["running"] = running;
    for (auto& [name, net] : state.models->trainable()) {
        const std::string blob = serialize_params(net->params());
        const std::string file = name + ".bin";
        write_file(dir / file, blob);
        st["networks"][name] = {{"file", file}, {"sha256", hex_sha(blob)}, {"spec_hash", net->spec_hash()}};
    }
    for (auto& [name, opt] : state.optimizers()) {
        std::vector<std::pair<std::string, const Tensor*>> items;
        for (auto& [k, t] : opt->state()) items.emplace_back(k, t);
        const std::string blob = serialize_tensors(items);
        const std::string file = "adam_" + name + ".bin";
        write_file(dir / file, blob);
        st["optimizers"][name] = {{"file", file}, {"sha256", hex_sha(blob)}, {"steps", opt->steps()}};
    }
    write_file(dir / "state.json", st.dump(2) + "\n");
}

TrainState load_checkpoint(const fs::path& dir, const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
    const nlohmann::json st = read_state(dir);
    check_version(st, dir);
    TrainState state(model_cfg, train_cfg);
    for (auto& [name, net] : state.models->trainable()) restore_network(dir, st, name, *net);
    for (auto& [name, opt] : state.optimizers()) {
        if (!st.contains("optimizers") || !st["optimizers"].contains(name)) {
            throw CheckpointError("checkpoint " + dir.string() + " has no optimizer state for " + name);
        }
        const auto& entry = st["optimizers"][name];
        std::vector<std::pair<std::string, Tensor*>> items = opt->state();
        deserialize_tensors(verified_blob(dir, entry, "optimizer " + name), items, "optimizer " + name);
        opt->set_steps(entry.at("steps").get<long>());
    }
    state.phase = st.at("phase").get<std::string>();
    state.epoch = st.at("epoch").get<long>();
    state.phase_step = st.at("phase_step").get<long>();
    state.global_step = st.at("global_step").get<long>();
    std::istringstream rng(st.at("rng").get<std::string>());
    rng >> state.rng;
    if (!rng) throw CheckpointError("corrupt rng state in " + dir.string());
    for (const auto& [k, v] : st.at("running").items()) state.running[k] = std::strtod(v.get<std::string>().c_str(), nullptr);
    return state;
}

void load_network(const fs::path& dir, const std::string& name, Network& net) {
    const nlohmann::json st = read_state(dir);
    check_version(st, dir);
    restore_network(dir, st, name, net);
}

}  // namespace fpsr
