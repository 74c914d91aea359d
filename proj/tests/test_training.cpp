#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fpsr/synthgen.hpp"
#include "fpsr/training.hpp"
#include "fixtures.hpp"

using namespace fpsr;
namespace fs = std::filesystem;

using namespace fixture;

namespace {

const PatchDataset& tiny_data() {
    static const PatchDataset data = fixture::tiny_data(fs::temp_directory_path() / "fpsr_unit" / "train_data");
    return data;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / "fpsr_unit" / name;
    fs::remove_all(d);
    return d;
}

}  // namespace

TEST_CASE("patch dataset from a synthetic manifest") {
    const auto& d = tiny_data();
    CHECK(d.size() == 2 * 2 * 4);
    CHECK(d.samples[0].lr_patch.height == 8);
    CHECK(d.samples[0].lr_patch.width == 8);
    CHECK(d.subject.front() == 0);
    CHECK(d.subject.back() == 1);
    const Batch b = make_batch({d.samples[0], d.samples[1]});
    CHECK(b.hr.shape() == nn::Shape{2, 1, 16, 16});
    CHECK(b.lr.shape() == nn::Shape{2, 1, 8, 8});
    CHECK(b.pore_map.shape() == nn::Shape{2, 1, 16, 16});
}

TEST_CASE("train config validation and phase caps") {
    TrainConfig t = tiny_train();
    CHECK_NOTHROW(t.validate());
    t.phase_max_steps = {{"joint", 5}};
    CHECK(t.for_phase("joint").max_steps == 5);
    CHECK(t.for_phase("sr").max_steps == 2);
    t.phase_max_steps = {{"bogus", 5}};
    CHECK_THROWS(t.validate());
    t = tiny_train();
    t.batch_size = 0;
    CHECK_THROWS(t.validate());
}

TEST_CASE("checkpoint round trip is byte identical") {
    TrainState s(tiny_models(), tiny_train());
    TrainingLog log;
    pretrain_sr(s, tiny_data(), tiny_train(), log);
    CHECK(s.global_step == 2);
    const fs::path a = fresh_dir("ckpt_a"), b = fresh_dir("ckpt_b");
    save_checkpoint(s, a);
    TrainState back = load_checkpoint(a, tiny_models(), tiny_train());
    save_checkpoint(back, b);
    for (const auto& e : fs::directory_iterator(a)) CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
    CHECK(back.rng() == s.rng());
    CHECK(back.phase == s.phase);
    CHECK(back.global_step == s.global_step);
}

TEST_CASE("checkpoint loading rejects tampering and other architectures") {
    TrainState s(tiny_models(), tiny_train());
    const fs::path dir = fresh_dir("ckpt_bad");
    save_checkpoint(s, dir);
    CHECK_NOTHROW(load_checkpoint(dir, tiny_models(), tiny_train()));

    ModelConfig wider = tiny_models();
    wider.generator.feature_maps = 8;
    CHECK_THROWS_WITH_AS(load_checkpoint(dir, wider, tiny_train()), doctest::Contains("architecture mismatch"),
                         CheckpointError);

    std::string blob = slurp(dir / "generator.bin");
    blob[blob.size() - 1] ^= 1;
    std::ofstream(dir / "generator.bin", std::ios::binary) << blob;
    CHECK_THROWS_WITH_AS(load_checkpoint(dir, tiny_models(), tiny_train()), doctest::Contains("hash mismatch"),
                         CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(fresh_dir("ckpt_none"), tiny_models(), tiny_train()), CheckpointError);
}

TEST_CASE("training is deterministic in the seed") {
    auto run = [] {
        TrainState s(tiny_models(), tiny_train());
        TrainingLog log;
        train_verifier(s, tiny_data(), tiny_train(), log);
        pretrain_sr(s, tiny_data(), tiny_train(), log);
        pretrain_pore(s, tiny_data(), tiny_train(), log);
        joint_train(s, tiny_data(), tiny_train(), log);
        std::string all;
        for (auto& [name, net] : s.models->trainable()) all += params_of(*net);
        return all;
    };
    const std::string first = run();
    // Shift later heap addresses; results must not depend on buffer alignment.
    for (std::size_t pad : {8u, 24u, 40u}) {
        std::vector<char> hold(pad);
        auto* odd = new double[pad / 8 + 1];
        CHECK(run() == first);
        delete[] odd;
    }
}

TEST_CASE("zero epochs leave every network unchanged") {
    TrainConfig t = tiny_train();
    t.sr_epochs = t.pore_epochs = t.verifier_epochs = 0;
    t.joint_phase1_epochs = t.joint_phase2_epochs = 0;
    TrainState s(tiny_models(), t);
    std::vector<std::string> before;
    for (auto& [name, net] : s.models->trainable()) before.push_back(params_of(*net));
    TrainingLog log;
    train_verifier(s, tiny_data(), t, log);
    pretrain_sr(s, tiny_data(), t, log);
    pretrain_pore(s, tiny_data(), t, log);
    joint_train(s, tiny_data(), t, log);
    std::size_t i = 0;
    for (auto& [name, net] : s.models->trainable()) CHECK(params_of(*net) == before[i++]);
    CHECK(s.global_step == 0);
}

TEST_CASE("joint phase 1 freezes the pore detector and the verifier") {
    TrainConfig t = tiny_train();
    t.joint_phase2_epochs = 0;
    TrainState s(tiny_models(), t);
    const std::string pore = params_of(*s.models->pore_detector), ver = params_of(*s.models->verifier),
                      gen = params_of(*s.models->generator);
    TrainingLog log;
    joint_train(s, tiny_data(), t, log);
    CHECK(params_of(*s.models->pore_detector) == pore);
    CHECK(params_of(*s.models->verifier) == ver);
    CHECK(params_of(*s.models->generator) != gen);

    // Phase 2 updates the detector.
    TrainConfig t2 = tiny_train();
    t2.joint_phase1_epochs = 0;
    TrainState s2(tiny_models(), t2);
    joint_train(s2, tiny_data(), t2, log);
    CHECK(params_of(*s2.models->pore_detector) != pore);
    CHECK(params_of(*s2.models->verifier) == ver);
}

TEST_CASE("training log rows") {
    const fs::path p = fresh_dir("logs") / "x.csv";
    fs::create_directories(p.parent_path());
    {
        TrainingLog log(p);
        log.add(1, 0, "mse", 0.5);
        log.add(2, 0, "mse", 0.25);
        CHECK(log.rows() == 2);
    }
    const std::string text = slurp(p);
    CHECK(text.find("step,epoch,loss_name,value") == 0);
    CHECK(text.find("2,0,mse,") != std::string::npos);
}

TEST_CASE("no gradient outlives its optimizer step") {
    TrainState s(tiny_models(), tiny_train());
    TrainingLog log;
    pretrain_sr(s, tiny_data(), tiny_train(), log);
    joint_train(s, tiny_data(), tiny_train(), log);
    for (auto& [name, net] : s.models->trainable())
        for (const auto& e : net->params().entries()) {
            if (!e.var.has_grad()) continue;
            for (double g : e.var.grad().storage()) CHECK_MESSAGE(g == 0.0, name << " " << e.name);
        }
}
