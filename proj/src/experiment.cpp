#include "fpsr/experiment.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>

#include "fpsr/quality.hpp"

namespace fpsr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    return out;
}

void write_json(const fs::path& p, const json& j) {
    auto out = open_out(p);
    out << j.dump(2) << '\n';
}

std::vector<int> eval_records(const ExperimentConfig& cfg, const Manifest& man) {
    const Split split = split_subjects(man, cfg.dataset.train_subjects);
    if (cfg.eval.subjects == "test" && !split.test.empty()) return split.test;
    std::vector<int> all(man.records.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    return all;
}

FingerprintImage load_record(const Manifest& man, const ManifestRecord& rec) {
    FingerprintImage img = load_image(man.resolve(rec.image), rec.ppi);
    img.subject_id = rec.subject_id;
    img.session_id = rec.session_id;
    return img;
}

}  // namespace

void archive_config(const ExperimentConfig& cfg, const RunLayout& run, const std::string& original_text) {
    fs::create_directories(run.root);
    const std::string resolved = to_json(cfg).dump(2) + "\n";
    auto out = open_out(run.root / "config.json");
    out << (original_text.empty() ? resolved : original_text);
    auto res = open_out(run.root / "config.resolved.json");
    res << resolved;
}

Manifest run_synth(const ExperimentConfig& cfg, const RunLayout& run) {
    if (!cfg.dataset.synth) throw ConfigError("config key 'dataset.synth' is required for synth");
    return generate_dataset(*cfg.dataset.synth, run.data_dir());
}

fs::path manifest_path(const ExperimentConfig& cfg, const RunLayout& run) {
    const fs::path p = cfg.dataset.manifest.empty() ? run.data_dir() / "manifest.json" : fs::path(cfg.dataset.manifest);
    if (!fs::exists(p)) {
        throw std::runtime_error("dataset manifest " + p.string() + " not found" +
                                 (cfg.dataset.manifest.empty() ? " (run the synth command first)" : ""));
    }
    return p;
}

Manifest open_dataset(const ExperimentConfig& cfg, const RunLayout& run) {
    return load_manifest(manifest_path(cfg, run));
}

Split split_subjects(const Manifest& manifest, int train_subjects) {
    std::map<std::string, int> order;
    for (const auto& r : manifest.records) order.emplace(r.subject_id, static_cast<int>(order.size()));
    Split split;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const int idx = static_cast<int>(i);
        if (train_subjects <= 0) {
            split.train.push_back(idx);
            split.test.push_back(idx);
        } else if (order[manifest.records[i].subject_id] < train_subjects) {
            split.train.push_back(idx);
        } else {
            split.test.push_back(idx);
        }
    }
    return split;
}

std::vector<std::string> missing_prerequisites(const RunLayout& run, const std::string& phase) {
    std::vector<std::string> need;
    if (phase == "sr") need = {"verifier"};
    if (phase == "joint") need = {"sr", "pore"};
    std::vector<std::string> missing;
    for (const auto& p : need) {
        if (!fs::exists(run.checkpoint(p) / "state.json")) missing.push_back(p);
    }
    return missing;
}

TrainState run_train(const ExperimentConfig& cfg, const RunLayout& run, const std::string& phase,
                     const std::optional<fs::path>& resume, std::ostream* progress) {
    const auto& phases = training_phases();
    if (std::find(phases.begin(), phases.end(), phase) == phases.end()) {
        throw ConfigError("unknown training phase '" + phase + "' (verifier, sr, pore, joint)");
    }
    std::optional<TrainState> st;
    if (resume) {
        st.emplace(load_checkpoint(*resume, cfg.model, cfg.train));
        const bool ok = phase == "joint" ? (st->phase == "joint1" || st->phase == "joint2") : st->phase == phase;
        if (!ok) {
            throw TrainingError("checkpoint " + resume->string() + " belongs to phase '" + st->phase +
                                "', not '" + phase + "'");
        }
    } else {
        const auto missing = missing_prerequisites(run, phase);
        if (!missing.empty()) {
            std::string names;
            for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
            throw TrainingError("phase '" + phase + "' requires the pretrained " + names + " checkpoint (expected " +
                                run.checkpoint(missing.front()).string() + "); run train --phase " +
                                missing.front() + " first");
        }
        if (phase == "sr") {
            st.emplace(load_checkpoint(run.checkpoint("verifier"), cfg.model, cfg.train));
        } else if (phase == "joint") {
            st.emplace(load_checkpoint(run.checkpoint("sr"), cfg.model, cfg.train));
            load_network(run.checkpoint("pore"), "pore_detector", *st->models->pore_detector);
        } else {
            st.emplace(cfg.model, cfg.train);
        }
    }

    const Manifest man = open_dataset(cfg, run);
    const PatchDataset data = build_patch_dataset(man, split_subjects(man, cfg.dataset.train_subjects).train, cfg.patch);
    const TrainConfig tc = cfg.train.for_phase(phase);
    TrainingLog log(run.log(phase), resume.has_value());
    TrainHooks hooks;
    hooks.progress = progress;
    hooks.on_epoch_end = [&](TrainState& s) { save_checkpoint(s, run.checkpoint(phase)); };

    if (phase == "verifier") {
        train_verifier(*st, data, tc, log, hooks);
    } else if (phase == "sr") {
        pretrain_sr(*st, data, tc, log, hooks);
    } else if (phase == "pore") {
        pretrain_pore(*st, data, tc, log, hooks);
    } else {
        joint_train(*st, data, tc, log, hooks);
    }
    log.flush();
    save_checkpoint(*st, run.checkpoint(phase));
    return std::move(*st);
}

PoreEvalSummary run_pore_eval(const ExperimentConfig& cfg, const RunLayout& run, const fs::path& checkpoint) {
    const Manifest man = open_dataset(cfg, run);
    PoreDetector detector(cfg.model.pore_detector, 0);
    if (!cfg.eval.ground_truth_maps) load_network(checkpoint, "pore_detector", detector);

    std::vector<Raster> maps;
    std::vector<PorePointSet> truths;
    auto rows = open_out(run.eval_dir() / "pores.csv");
    rows << "image_id,threshold,radius,tp,fp,fn,tdr,fdr\n";
    long tp = 0, fp = 0, fn = 0;
    double radius0 = 0.0, nms0 = 0.0;
    for (int i : eval_records(cfg, man)) {
        const auto& rec = man.records[static_cast<std::size_t>(i)];
        if (rec.annotations.empty()) throw std::runtime_error("record " + rec.image.string() + " has no pore annotations");
        const FingerprintImage img = load_record(man, rec);
        const PorePointSet truth = load_pore_annotations(man.resolve(rec.annotations), img);
        const double sigma = cfg.patch.pore_sigma > 0.0 ? cfg.patch.pore_sigma : default_pore_sigma(img.ppi);
        Raster map = cfg.eval.ground_truth_maps ? Raster(render_pore_map(truth, sigma)) : Raster(predict_pore_map(detector, img));
        const double radius = cfg.eval.match_radius > 0.0 ? cfg.eval.match_radius : default_match_radius(img.ppi);
        const double nms = cfg.eval.nms_radius > 0.0 ? cfg.eval.nms_radius : default_nms_radius(img.ppi);
        if (maps.empty()) {
            radius0 = radius;
            nms0 = nms;
        }
        const auto det = extract_pore_coords(map, cfg.eval.pore_threshold, nms);
        const auto mo = match_detections(det.detected, truth, radius);
        const auto m = detection_metrics(mo.tp, mo.fp, mo.fn, radius);
        rows << rec.image.generic_string() << ',' << num(cfg.eval.pore_threshold) << ',' << num(radius) << ',' << mo.tp
             << ',' << mo.fp << ',' << mo.fn << ',' << num(m.tdr) << ',' << num(m.fdr) << '\n';
        tp += mo.tp;
        fp += mo.fp;
        fn += mo.fn;
        maps.push_back(std::move(map));
        truths.push_back(truth);
    }
    if (maps.empty()) throw std::runtime_error("no images to evaluate");

    PoreEvalSummary summary;
    summary.images = static_cast<int>(maps.size());
    summary.metrics = detection_metrics(tp, fp, fn, radius0);
    summary.sweep = threshold_sweep(maps, truths, cfg.eval.sweep_thresholds, radius0, nms0);

    auto sweep = open_out(run.eval_dir() / "pores_sweep.csv");
    sweep << "threshold,radius,tp,fp,fn,tdr,fdr\n";
    for (const auto& s : summary.sweep) {
        sweep << num(s.threshold) << ',' << num(radius0) << ',' << s.metrics.true_positives << ','
              << s.metrics.false_positives << ',' << s.metrics.false_negatives << ',' << num(s.metrics.tdr) << ','
              << num(s.metrics.fdr) << '\n';
    }
    const auto& m = summary.metrics;
    write_json(run.eval_dir() / "pores_summary.json",
               {{"images", summary.images},
                {"threshold", cfg.eval.pore_threshold},
                {"match_radius", radius0},
                {"nms_radius", nms0},
                {"source", cfg.eval.ground_truth_maps ? "ground_truth_maps" : checkpoint.string()},
                {"tp", m.true_positives},
                {"fp", m.false_positives},
                {"fn", m.false_negatives},
                {"tdr", m.tdr},
                {"fdr", m.fdr}});
    return summary;
}

RecognitionSummary run_recognition_eval(const ExperimentConfig& cfg, const RunLayout& run,
                                        const fs::path& checkpoint) {
    const Manifest man = open_dataset(cfg, run);
    Generator generator(cfg.model.generator, 0);
    PoreDetector detector(cfg.model.pore_detector, 0);
    load_network(checkpoint, "generator", generator);
    load_network(checkpoint, "pore_detector", detector);
    const int factor = generator.scale();
    if (factor != cfg.patch.factor) {
        throw ConfigError("config key 'patch.factor' (" + std::to_string(cfg.patch.factor) +
                          ") differs from the generator scale (" + std::to_string(factor) + ")");
    }

    Manifest subset;
    subset.root = man.root;
    for (int i : eval_records(cfg, man)) subset.records.push_back(man.records[static_cast<std::size_t>(i)]);
    const std::vector<ImagePair> pairs = make_pairs(subset);

    const fs::path dir = run.eval_dir() / "recognition";
    std::map<std::string, std::vector<RecognitionImage>> sets;
    std::map<std::string, std::vector<double>> patch_psnr;
    RecognitionSummary summary;
    QualitySummary& q = summary.quality;
    const auto& pc = cfg.patch;
    for (const auto& rec : subset.records) {
        const FingerprintImage hr = load_record(subset, rec);
        const FingerprintImage lr = degrade_to_lr(hr, factor);
        const FingerprintImage sr = superresolve(generator, lr);
        const FingerprintImage nearest = upsample_nearest(lr, factor);
        const FingerprintImage bicubic = upsample_bicubic(lr, factor);
        const PorePointSet none{{}, hr.height, hr.width};
        const auto ref = extract_patches(hr, none, pc.patch_h, pc.patch_w, pc.stride_h, pc.stride_w);
        const std::array<std::pair<const char*, const FingerprintImage*>, 3> methods{
            {{"sr", &sr}, {"bicubic", &bicubic}, {"nearest", &nearest}}};
        for (const auto& [name, img] : methods) {
            const auto cand = extract_patches(*img, none, pc.patch_h, pc.patch_w, pc.stride_h, pc.stride_w);
            for (std::size_t k = 0; k < cand.size(); ++k) {
                const auto r = quality_report(cand[k].image, ref[k].image);
                patch_psnr[name].push_back(r.psnr);
                const std::string n = name;
                (n == "sr" ? q.psnr_sr : n == "bicubic" ? q.psnr_bicubic : q.psnr_nearest) += r.psnr;
                (n == "sr" ? q.ssim_sr : n == "bicubic" ? q.ssim_bicubic : q.ssim_nearest) += r.ssim;
            }
        }
        q.patches += static_cast<int>(ref.size());
        const std::string id = rec.image.generic_string();
        sets["hr"].push_back({id, hr, {}});
        sets["sr"].push_back({id, sr, {}});
        sets["lr"].push_back({id, nearest, {}});
    }
    if (q.patches > 0) {
        for (double* v : {&q.psnr_sr, &q.psnr_bicubic, &q.psnr_nearest, &q.ssim_sr, &q.ssim_bicubic, &q.ssim_nearest}) {
            *v /= q.patches;
        }
    }

    auto pairs_out = open_out(dir / "pairs.csv");
    pairs_out << "probe,gallery,genuine\n";
    for (const auto& p : pairs) {
        pairs_out << subset.records[static_cast<std::size_t>(p.probe)].image.generic_string() << ','
                  << subset.records[static_cast<std::size_t>(p.gallery)].image.generic_string() << ','
                  << (p.genuine ? 1 : 0) << '\n';
        (p.genuine ? summary.genuine : summary.imposter) += 1;
    }

    const RecognitionConfig rc = cfg.eval.recognition();
    json inputs = json::object();
    for (const auto& input : cfg.eval.inputs) {
        auto& images = sets.at(input);
        detect_pores(images, &detector, rc);
        InputReport ir{input, evaluate_recognition(images, pairs, rc)};
        auto scores = open_out(dir / input / "scores.csv");
        scores << "probe,gallery,genuine,level,value\n";
        for (const auto& s : ir.report.scores) {
            scores << s.probe << ',' << s.gallery << ',' << (s.genuine ? 1 : 0) << ',' << to_string(s.level) << ','
                   << num(s.value) << '\n';
        }
        json levels = json::object();
        for (const auto& [level, roc] : ir.report.roc) {
            auto out = open_out(dir / input / ("roc_" + to_string(level) + ".csv"));
            out << "threshold,far,tar\n";
            for (const auto& p : roc.points) out << num(p.threshold) << ',' << num(p.far) << ',' << num(p.tar) << '\n';
            levels[to_string(level)] = {{"eer", roc.eer}, {"auc", roc.auc}};
        }
        write_json(dir / input / "summary.json", levels);
        inputs[input] = levels;
        summary.inputs.push_back(std::move(ir));
    }

    auto hist = open_out(dir / "quality_histogram.csv");
    const int bins = cfg.eval.histogram_bins;
    const double lo = 0.0, hi = 50.0;
    std::map<std::string, Histogram> h;
    for (const auto& [name, values] : patch_psnr) h[name] = quality_histogram(values, bins, lo, hi);
    hist << "bin_lo,bin_hi,sr,bicubic,nearest\n";
    for (int b = 0; b < bins; ++b) {
        const double w = (hi - lo) / bins;
        hist << num(lo + b * w) << ',' << num(lo + (b + 1) * w);
        for (const char* name : {"sr", "bicubic", "nearest"}) {
            hist << ',' << (h.count(name) ? h[name].counts[static_cast<std::size_t>(b)] : 0);
        }
        hist << '\n';
    }
    write_json(dir / "summary.json",
               {{"genuine_pairs", summary.genuine},
                {"imposter_pairs", summary.imposter},
                {"inputs", inputs},
                {"quality",
                 {{"patches", q.patches},
                  {"psnr_sr", q.psnr_sr},
                  {"psnr_bicubic", q.psnr_bicubic},
                  {"psnr_nearest", q.psnr_nearest},
                  {"ssim_sr", q.ssim_sr},
                  {"ssim_bicubic", q.ssim_bicubic},
                  {"ssim_nearest", q.ssim_nearest}}},
                {"checkpoint", checkpoint.string()}});
    return summary;
}

}  // namespace fpsr
