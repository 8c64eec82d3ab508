#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bidc/errors.hpp"
#include "bidc/experiment.hpp"
#include "bidc/training.hpp"

using namespace bidc;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
    ModelConfig c;
    c.vocab_size = 22;
    c.d_h = 8;
    c.d_ff = 16;
    c.det_depth = 1;
    c.cor_depth = 1;
    c.interaction_layers = 1;
    c.max_len = 16;
    return c;
}

DatasetBundle tiny_data(std::size_t train = 96, std::size_t dev = 16) {
    CorpusSpec spec;
    spec.vocab_size = 20;
    spec.grammar_seed = 3;
    spec.seed = 17;
    spec.min_len = 4;
    spec.max_len = 9;
    spec.train = train;
    spec.dev = dev;
    spec.test = 16;
    spec.branching = 4;
    DatasetBundle data = generate_datasets(spec);
    return data;
}

std::string temp_file(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

bool same_values(const std::vector<Array>& a, const std::vector<Array>& b, double tol) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].same_shape(b[i])) return false;
        for (std::size_t j = 0; j < a[i].size(); ++j) {
            if (std::fabs(a[i][j] - b[i][j]) > tol) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("adamw: zero gradients leave parameters in place, decay shrinks them") {
    ModelConfig mc = tiny_model();
    Model model(mc, 1);
    auto before = model.params().snapshot_values();
    AdamState state = AdamState::like(model.params());
    TrainConfig tc;
    tc.weight_decay = 0.0;
    model.params().zero_grads();
    adamw_step(model.params(), state, tc);
    CHECK(same_values(model.params().snapshot_values(), before, 0.0));

    tc.weight_decay = 0.01;
    tc.learning_rate = 0.1;
    adamw_step(model.params(), state, tc);
    auto after = model.params().snapshot_values();
    for (std::size_t i = 0; i < before.size(); ++i) {
        for (std::size_t j = 0; j < before[i].size(); ++j) {
            CHECK(after[i][j] == doctest::Approx(before[i][j] * (1.0 - 0.1 * 0.01)).epsilon(1e-15));
        }
    }
}

TEST_CASE("adamw single-scalar hand example") {
    // p=1, g=1, lr=0.1, t=1: bias-corrected m_hat = 1, v_hat = 1,
    // p' = 1 - 0.1 * 1/(1 + 1e-8)
    ModelParams params;
    auto node = params.add("p", Array::scalar(1.0));
    node->grad[0] = 1.0;
    AdamState state = AdamState::like(params);
    TrainConfig tc;
    tc.learning_rate = 0.1;
    tc.weight_decay = 0.0;
    adamw_step(params, state, tc);
    const double expect = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
    CHECK(node->value[0] == doctest::Approx(expect).epsilon(1e-15));
    CHECK(node->value[0] == doctest::Approx(0.9).epsilon(1e-7));
}

TEST_CASE("adamw aborts on non-finite gradient, naming the parameter") {
    ModelParams params;
    auto node = params.add("bad_param", Array::scalar(1.0));
    node->grad[0] = std::nan("");
    AdamState state = AdamState::like(params);
    TrainConfig tc;
    CHECK_THROWS_WITH_AS(adamw_step(params, state, tc), doctest::Contains("bad_param"),
                         NumericError);
}

TEST_CASE("gradient clipping bounds the global norm") {
    ModelParams params;
    auto a = params.add("a", Array::vec({3.0, 4.0}));
    a->grad[0] = 30.0;
    a->grad[1] = 40.0;  // norm 50
    const double before = clip_gradients(params, 1.0);
    CHECK(before == doctest::Approx(50.0));
    double after = 0.0;
    for (std::size_t i = 0; i < a->grad.size(); ++i) after += a->grad[i] * a->grad[i];
    CHECK(std::sqrt(after) <= 1.0 + 1e-9);

    // clip_norm 0 disables clipping
    a->grad[0] = 30.0;
    a->grad[1] = 40.0;
    clip_gradients(params, 0.0);
    CHECK(a->grad[0] == 30.0);
}

TEST_CASE("train epochs=0 returns the initialized model and empty log") {
    DatasetBundle data = tiny_data();
    ModelConfig mc = tiny_model();
    TrainConfig tc;
    tc.epochs = 0;
    tc.seed = 5;
    TrainResult r = train(mc, data.train, data.dev, tc);
    CHECK(r.log.empty());
    CHECK(r.steps.empty());
    Model fresh(mc, 5);
    CHECK(same_values(r.final_params, fresh.params().snapshot_values(), 0.0));
    CHECK(same_values(r.best_params, fresh.params().snapshot_values(), 0.0));
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
    DatasetBundle data = tiny_data();
    ModelConfig mc = tiny_model();
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 11;
    TrainResult r1 = train(mc, data.train, data.dev, tc);
    TrainResult r2 = train(mc, data.train, data.dev, tc);
    CHECK(same_values(r1.final_params, r2.final_params, 0.0));
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].mean_loss == r2.log[i].mean_loss);
    }
}

TEST_CASE("per-step loss records obey the lambda mix exactly") {
    DatasetBundle data = tiny_data(64, 8);
    ModelConfig mc = tiny_model();
    TrainConfig tc;
    tc.epochs = 1;
    tc.lambda = 0.8;
    TrainResult r = train(mc, data.train, data.dev, tc);
    REQUIRE(!r.steps.empty());
    for (const auto& s : r.steps) {
        CHECK(std::fabs(s.loss - (0.8 * s.loss_cor + 0.2 * s.loss_det)) <= 1e-12);
    }
}

TEST_CASE("c-only training logs the correction loss as the whole loss") {
    DatasetBundle data = tiny_data(64, 8);
    ModelConfig mc = tiny_model();
    mc.mode = Mode::COnly;
    TrainConfig tc;
    tc.epochs = 1;
    tc.lambda = 0.3;
    TrainResult r = train(mc, data.train, data.dev, tc);
    for (const auto& s : r.steps) {
        CHECK(s.loss == s.loss_cor);
        CHECK(s.loss_det == 0.0);
    }
}

TEST_CASE("loss decreases on a small corpus") {
    DatasetBundle data = tiny_data(256, 16);
    ModelConfig mc = tiny_model();
    TrainConfig tc;
    tc.epochs = 5;
    tc.learning_rate = 3e-3;
    TrainResult r = train(mc, data.train, data.dev, tc);
    REQUIRE(r.log.size() == 5);
    CHECK(r.log[4].mean_loss < r.log[0].mean_loss);
}

TEST_CASE("checkpoint round trip: values bitwise, bytes identical") {
    ModelConfig mc = tiny_model();
    mc.lambda = 0.35;
    mc.gate_override_beta = 0.25;
    Model model(mc, 9);
    const std::string path = temp_file("bidc_ck_test.bidc");
    save_checkpoint(path, mc, model.params(), "abc123");

    LoadedCheckpoint ck = load_checkpoint(path);
    CHECK(ck.vocab_hash == "abc123");
    CHECK(ck.config.lambda == mc.lambda);
    CHECK(ck.config.gate_override_beta == mc.gate_override_beta);
    CHECK(!ck.config.gate_override_alpha);
    CHECK(mode_name(ck.config.mode) == mode_name(mc.mode));
    CHECK(same_values(ck.params.snapshot_values(), model.params().snapshot_values(), 0.0));
    CHECK(!ck.opt);

    const std::string path2 = temp_file("bidc_ck_test2.bidc");
    save_checkpoint(path2, ck.config, ck.params, ck.vocab_hash);
    CHECK(slurp(path) == slurp(path2));
    fs::remove(path);
    fs::remove(path2);
}

TEST_CASE("checkpoint with optimizer state round trips") {
    ModelConfig mc = tiny_model();
    Model model(mc, 4);
    AdamState state = AdamState::like(model.params());
    state.step = 42;
    for (auto& a : state.m) a.fill(0.5);
    for (auto& a : state.v) a.fill(0.25);
    const std::string path = temp_file("bidc_ck_opt.bidc");
    save_checkpoint(path, mc, model.params(), "h", &state, 3);
    LoadedCheckpoint ck = load_checkpoint(path);
    REQUIRE(ck.opt);
    CHECK(ck.opt->step == 42);
    CHECK(ck.next_epoch == 3);
    CHECK(ck.opt->m[0][0] == 0.5);
    CHECK(ck.opt->v[0][0] == 0.25);
    fs::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected without partial state") {
    ModelConfig mc = tiny_model();
    Model model(mc, 2);
    const std::string path = temp_file("bidc_ck_bad.bidc");
    save_checkpoint(path, mc, model.params(), "h");

    // truncated file
    const std::string full = slurp(path);
    {
        std::ofstream out(path, std::ios::binary);
        out << full.substr(0, full.size() - 64);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"), DataError);

    // bad magic
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE!\n" << full.substr(6);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), DataError);
    fs::remove(path);
}

TEST_CASE("resume from an epoch boundary reproduces the uninterrupted run") {
    DatasetBundle data = tiny_data(128, 16);
    ModelConfig mc = tiny_model();
    TrainConfig tc;
    tc.epochs = 4;
    tc.seed = 21;
    TrainResult full = train(mc, data.train, data.dev, tc);

    TrainConfig first_half = tc;
    first_half.epochs = 2;
    TrainResult half = train(mc, data.train, data.dev, first_half);
    ResumeState resume;
    resume.params = half.final_params;
    resume.opt = half.final_opt;
    resume.next_epoch = half.next_epoch;
    TrainResult second = train(mc, data.train, data.dev, tc, &resume);

    REQUIRE(second.log.size() == 2);
    CHECK(same_values(second.final_params, full.final_params, 1e-12));
}

TEST_CASE("train log serializes one json record per epoch") {
    std::vector<EpochRecord> log(2);
    log[0].epoch = 1;
    log[0].mean_loss = 1.5;
    log[1].epoch = 2;
    log[1].mean_loss = 0.75;
    const std::string text = train_log_jsonl(log);
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    CHECK(text.find("\"epoch\":1") != std::string::npos);
    CHECK(text.find("\"epoch\":2") != std::string::npos);
    CHECK(text.find("\"loss\":1.5") != std::string::npos);
}
