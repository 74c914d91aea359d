// fpsr: synthetic data, training phases, super-resolution and evaluation from one config.
//
// Exit codes: 0 success, 1 usage or config error, 2 runtime failure. Failures print one
// line "fpsr: error[<kind>]: <message>" on stderr.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fpsr/experiment.hpp"
#include "fpsr/quality.hpp"

namespace fs = std::filesystem;
using namespace fpsr;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string output;
    std::string device;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "Experiment config (JSON)");
    app->add_option("--seed", c.seed, "Overrides train.seed and dataset.synth.orientation_seed");
    app->add_option("--output", c.output, "Run directory (overrides the config's output)");
    app->add_option("--device", c.device, "Compute target (cpu)");
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot read config file " + p.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Parsed config plus its verbatim text (empty when running on defaults).
struct Loaded {
    ExperimentConfig cfg;
    std::string text;
    RunLayout run;
};

Loaded load(const Common& c) {
    Loaded l;
    if (!c.config.empty()) {
        l.text = read_text(c.config);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(l.text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("config file " + c.config + " is not valid JSON: " + e.what());
        }
        l.cfg = experiment_from_json(j);
    }
    if (c.seed) {
        l.cfg.train.seed = *c.seed;
        if (l.cfg.dataset.synth) l.cfg.dataset.synth->orientation_seed = *c.seed;
    }
    if (!c.device.empty()) l.cfg.train.device = c.device;
    if (!c.output.empty()) l.cfg.output = c.output;
    try {
        l.cfg.train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    l.run.root = l.cfg.output;
    return l;
}

int cmd_synth(const Common& c) {
    Loaded l = load(c);
    if (!l.cfg.dataset.synth) throw ConfigError("config key 'dataset.synth' is required for synth");
    archive_config(l.cfg, l.run, l.text);
    const Manifest m = run_synth(l.cfg, l.run);
    std::cout << (l.run.data_dir() / "manifest.json").string() << '\n';
    std::cerr << "wrote " << m.records.size() << " images\n";
    return 0;
}

int cmd_train(const Common& c, const std::string& phase, const std::string& resume, std::optional<int> epochs) {
    Loaded l = load(c);
    auto& t = l.cfg.train;
    if (epochs) {
        if (*epochs < 0) throw UsageError("--epochs must be >= 0");
        if (phase == "verifier") t.verifier_epochs = *epochs;
        if (phase == "sr") t.sr_epochs = *epochs;
        if (phase == "pore") t.pore_epochs = *epochs;
        if (phase == "joint") t.joint_phase1_epochs = t.joint_phase2_epochs = *epochs;
    }
    archive_config(l.cfg, l.run, l.text);
    std::optional<fs::path> from;
    if (!resume.empty()) from = fs::path(resume);
    const TrainState st = run_train(l.cfg, l.run, phase, from, &std::cerr);
    std::cout << l.run.checkpoint(phase).string() << '\n';
    std::cerr << "phase " << phase << ": " << st.phase_step << " steps, log " << l.run.log(phase).string() << '\n';
    return 0;
}

int cmd_superresolve(const Common& c, const std::string& checkpoint, const std::vector<std::string>& inputs,
                     const std::vector<std::string>& references, double ppi) {
    if (!references.empty() && references.size() != inputs.size()) {
        throw UsageError("--reference needs one file per input");
    }
    Common cc = c;
    if (cc.config.empty()) {
        // A run's checkpoint sits at <run>/checkpoints/<phase>; reuse the archived config.
        const fs::path guess = fs::path(checkpoint).parent_path().parent_path() / "config.resolved.json";
        if (fs::exists(guess)) cc.config = guess.string();
    }
    Loaded l = load(cc);
    Generator g(l.cfg.model.generator, 0);
    load_network(checkpoint, "generator", g);
    const fs::path out_dir = c.output.empty() ? fs::path(".") : fs::path(c.output);
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const FingerprintImage lr = load_image(inputs[i], ppi);
        if (lr.height < FingerprintImage::kMinSide || lr.width < FingerprintImage::kMinSide) {
            throw std::runtime_error(inputs[i] + ": input below the 8x8 minimum");
        }
        const FingerprintImage sr = superresolve(g, lr);
        const fs::path in(inputs[i]);
        const fs::path out = out_dir / (in.stem().string() + "_sr.png");
        save_image(sr, out, 16);
        std::cout << out.string() << ' ' << sr.height << 'x' << sr.width;
        if (!references.empty()) {
            const FingerprintImage ref = load_image(references[i], sr.ppi);
            const double p = psnr(sr, ref);
            std::cout << " psnr=" << p << (p >= kPsnrCap ? " (capped)" : "");
        }
        std::cout << '\n';
    }
    return 0;
}

int cmd_evaluate(const Common& c, const std::string& mode, std::string checkpoint) {
    Loaded l = load(c);
    archive_config(l.cfg, l.run, l.text);
    if (checkpoint.empty()) {
        const bool joint = fs::exists(l.run.checkpoint("joint") / "state.json");
        if (mode == "pores" && !joint) {
            checkpoint = l.run.checkpoint("pore").string();
        } else {
            checkpoint = l.run.checkpoint("joint").string();
        }
    }
    const bool needs_checkpoint = !(mode == "pores" && l.cfg.eval.ground_truth_maps);
    if (needs_checkpoint && !fs::exists(fs::path(checkpoint) / "state.json")) {
        throw std::runtime_error("required checkpoint " + checkpoint + " is missing");
    }
    if (mode == "pores") {
        const auto s = run_pore_eval(l.cfg, l.run, checkpoint);
        std::cout << "images=" << s.images << " tdr=" << s.metrics.tdr << " fdr=" << s.metrics.fdr << '\n';
    } else {
        const auto s = run_recognition_eval(l.cfg, l.run, checkpoint);
        std::cout << "genuine=" << s.genuine << " imposter=" << s.imposter << '\n';
        for (const auto& in : s.inputs) {
            std::cout << in.input;
            for (const auto& [level, roc] : in.report.roc) std::cout << ' ' << to_string(level) << "_eer=" << roc.eer;
            std::cout << '\n';
        }
        std::cout << "psnr sr=" << s.quality.psnr_sr << " bicubic=" << s.quality.psnr_bicubic
                  << " nearest=" << s.quality.psnr_nearest << '\n';
    }
    return 0;
}

int cmd_describe(const Common& c) {
    Loaded l = load(c);
    Models m(l.cfg.model, l.cfg.train.seed);
    for (Network* n : {static_cast<Network*>(m.generator.get()), static_cast<Network*>(m.discriminator.get()),
                       static_cast<Network*>(m.verifier.get()), static_cast<Network*>(m.pore_detector.get()),
                       static_cast<Network*>(m.perceptual.get())}) {
        std::cout << n->describe() << "  spec hash: " << n->spec_hash() << "\n\n";
    }
    return 0;
}

int fail(const char* kind, const std::string& msg, int code) {
    std::cerr << "fpsr: error[" << kind << "]: " << msg << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fingerprint super-resolution with pore detection"};
    app.require_subcommand(1);

    Common common;
    std::string phase, resume, checkpoint, mode;
    std::optional<int> epochs;
    std::vector<std::string> inputs, references;
    double ppi = 500.0;

    auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
    add_common(synth, common);

    auto* train = app.add_subcommand("train", "Run one training phase");
    add_common(train, common);
    train->add_option("--phase", phase, "verifier, sr, pore or joint")
        ->required()
        ->check(CLI::IsMember({"verifier", "sr", "pore", "joint"}));
    train->add_option("--resume", resume, "Checkpoint directory to continue from");
    train->add_option("--epochs", epochs, "Epochs for this phase (joint: each sub-phase)");

    auto* sr = app.add_subcommand("superresolve", "Super-resolve image files");
    add_common(sr, common);
    sr->add_option("--checkpoint", checkpoint, "Checkpoint directory with a generator")->required();
    sr->add_option("--reference", references, "HR reference per input; prints PSNR");
    sr->add_option("--ppi", ppi, "Input resolution");
    sr->add_option("inputs", inputs, "LR images (PNG/PGM)")->required();

    auto* ev = app.add_subcommand("evaluate", "Pore detection or recognition metrics");
    add_common(ev, common);
    ev->add_option("--mode", mode, "pores or recognition")->required()->check(CLI::IsMember({"pores", "recognition"}));
    ev->add_option("--checkpoint", checkpoint, "Checkpoint directory (default: the run's joint or pore)");

    auto* describe = app.add_subcommand("describe", "Print network layouts and parameter counts");
    add_common(describe, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 1);
    }

    try {
        if (synth->parsed()) return cmd_synth(common);
        if (train->parsed()) return cmd_train(common, phase, resume, epochs);
        if (sr->parsed()) return cmd_superresolve(common, checkpoint, inputs, references, ppi);
        if (ev->parsed()) return cmd_evaluate(common, mode, checkpoint);
        if (describe->parsed()) return cmd_describe(common);
    } catch (const ConfigError& e) {
        return fail("config", e.what(), 1);
    } catch (const UsageError& e) {
        return fail("usage", e.what(), 1);
    } catch (const CheckpointError& e) {
        return fail("checkpoint", e.what(), 2);
    } catch (const TrainingError& e) {
        return fail("training", e.what(), 2);
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 2);
    }
    return 1;
}
