#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "vtt/commands.hpp"
#include "vtt/errors.hpp"
#include "vtt/serialize.hpp"

using namespace vtt;
using namespace vtt::testing;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
    RunConfig c;
    c.d = 16;
    c.embed_dim = 16;
    c.heads = 2;
    c.layers = 2;
    c.lora_rank = 2;
    c.epochs = 4;
    c.episodes = 2;
    c.m_query = 3;
    c.checkpoint_every = 1;
    c.data.per_class = 6;
    c.pretrain_steps = 5;
    c.pretrain_batch = 10;
    return c;
}

int run_vtt(const std::string& args) {
    const std::string cmd = std::string(VTT_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<nlohmann::ordered_json> read_jsonl(const fs::path& p) {
    std::vector<nlohmann::ordered_json> out;
    std::istringstream is(read_text_file(p));
    for (std::string line; std::getline(is, line);)
        if (!line.empty()) out.push_back(nlohmann::ordered_json::parse(line));
    return out;
}

// One dataset and one finished run shared by the slower tests.
class RunFixture : public ::testing::Test {
   protected:
    static void SetUpTestSuite() {
        root_ = new TempDir("cli_run");
        cfg_ = tiny_config();
        std::ostringstream sink;
        cmd_gen_data(cfg_, *root_ / "data", sink);
        cmd_train(cfg_, *root_ / "data", *root_ / "run", TrainOptions{}, sink);
    }
    static void TearDownTestSuite() {
        delete root_;
        root_ = nullptr;
    }

    static TempDir* root_;
    static RunConfig cfg_;
};

TempDir* RunFixture::root_ = nullptr;
RunConfig RunFixture::cfg_;

}  // namespace

TEST(Config, DefaultsAudit) {
    RunConfig c;
    EXPECT_EQ(c.beta, 7.0);
    EXPECT_EQ(c.lambda, 50u);
    EXPECT_EQ(c.tau, 0.01);
    EXPECT_EQ(c.gamma, 0.2);
    EXPECT_EQ(c.lora_rank, 16u);
    EXPECT_EQ(c.lora_alpha, 8.0);
    EXPECT_EQ(c.m_query, 15u);
    EXPECT_EQ(c.lora_placement, (std::vector<std::string>{"q", "v"}));
    EXPECT_EQ(c.lr, 1e-3);
    EXPECT_EQ(c.method, "vtt");
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonRoundTripIsByteIdentical) {
    RunConfig c = tiny_config();
    c.ablate = {"tia"};
    c.fusion_variant = "vt-2d";
    c.data.domains[1].permute_patches = true;
    const std::string text = c.dump();
    const RunConfig back = RunConfig::from_json(nlohmann::ordered_json::parse(text));
    EXPECT_EQ(back.dump(), text);
    EXPECT_EQ(back.hash(), c.hash());
    EXPECT_EQ(RunConfig{}.dump(), RunConfig::from_json(nlohmann::ordered_json::object()).dump());
}

TEST(Config, ValidationNamesTheField) {
    RunConfig c;
    c.data.domains[1].noise = -1;
    try {
        c.validate();
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("data.domains[1].noise"), std::string::npos);
    }
    auto j = RunConfig{}.to_json();
    j["train"]["betta"] = 3;
    EXPECT_THROW(RunConfig::from_json(j), ConfigError);
    auto wrong = RunConfig{}.to_json();
    wrong["train"]["beta"] = "seven";
    EXPECT_THROW(RunConfig::from_json(wrong), ConfigError);
}

TEST(ExitCodes, MappedFromErrorCategories) {
    EXPECT_EQ(exit_code_for(ConfigError("x")), kExitConfig);
    EXPECT_EQ(exit_code_for(ParameterError("x")), kExitConfig);
    EXPECT_EQ(exit_code_for(IoError("x")), kExitIo);
    EXPECT_EQ(exit_code_for(FormatError("x")), kExitIo);
    EXPECT_EQ(exit_code_for(NumericError("x")), kExitNumeric);
    EXPECT_EQ(exit_code_for(CompatibilityError("x")), kExitCompat);
    EXPECT_EQ(exit_code_for(std::runtime_error("x")), kExitFailure);
}

TEST(ExitCodes, FromTheBinary) {
    TempDir dir("exit");
    RunConfig bad;
    bad.data.domains[0].noise = -0.5;
    write_text_file(dir / "bad.json", bad.to_json().dump(2));
    EXPECT_EQ(run_vtt("config --config " + (dir / "bad.json").string()), kExitConfig);
    EXPECT_EQ(run_vtt("config --beta -1"), kExitConfig);
    EXPECT_EQ(run_vtt("config --lambda 2.5"), kExitConfig);
    EXPECT_EQ(run_vtt("train --nope"), kExitConfig);
    EXPECT_EQ(run_vtt("eval --checkpoint " + (dir / "missing").string() + " --data " + (dir / "missing").string()),
              kExitIo);
    EXPECT_EQ(run_vtt("config"), kExitOk);
    write_text_file(dir / "broken.json", "{\"train\": ");
    EXPECT_EQ(run_vtt("config --config " + (dir / "broken.json").string()), kExitConfig);
}

TEST(ConfidenceInterval, NormalApproximationAndSingleEpisode) {
    auto ci = confidence_interval({0.5, 0.7, 0.6, 0.8});
    EXPECT_NEAR(ci.mean, 0.65, 1e-12);
    ASSERT_TRUE(ci.half_width.has_value());
    EXPECT_NEAR(*ci.half_width, 1.96 * std::sqrt(0.05 / 3) / 2, 1e-12);
    auto one = confidence_interval({0.4});
    EXPECT_FALSE(one.half_width.has_value());
    EXPECT_EQ(format_ci(one), "40.00 +- n/a");
}

TEST(SampleEpisodes, IndexedReplay) {
    RunConfig c = tiny_config();
    auto data = generate_synthetic(c.data, c.seed);
    c.episodes = 5;
    auto all = sample_episodes(data, c, 1);
    c.episodes = 2;
    auto first = sample_episodes(data, c, 1);
    for (std::size_t e = 0; e < 2; ++e) EXPECT_EQ(all[e].support, first[e].support);
}

TEST_F(RunFixture, LayoutAndLogs) {
    const auto run = *root_ / "run";
    EXPECT_TRUE(fs::exists(run / "config.json"));
    EXPECT_TRUE(fs::exists(run / "manifest.json"));
    EXPECT_TRUE(fs::exists(run / "base" / "manifest.json"));
    for (const char* ep : {"ep000", "ep001"}) {
        EXPECT_TRUE(fs::exists(run / "episodes" / ep / "adapter" / "manifest.json"));
        EXPECT_TRUE(fs::exists(run / "episodes" / ep / "vtt" / "manifest.json"));
    }
    const auto logs = read_jsonl(run / "train.jsonl");
    ASSERT_EQ(logs.size(), 8u);
    for (const auto& l : logs) {
        for (const char* key : {"episode", "epoch", "step", "L_ce", "L_VtT", "C", "M_e", "mode"})
            EXPECT_TRUE(l.contains(key)) << key;
    }
    EXPECT_EQ(read_text_file(run / "config.json"), cfg_.dump());
}

TEST_F(RunFixture, EvalIgnoresTheVttModules) {
    TempDir copy("cli_parity");
    fs::copy(*root_ / "run", copy / "run", fs::copy_options::recursive);
    std::ostringstream sink;
    auto with = cmd_eval(copy / "run", *root_ / "data", cfg_, EvalRequest{}, sink);
    for (const char* ep : {"ep000", "ep001"}) fs::remove_all(copy / "run" / "episodes" / ep / "vtt");
    auto without = cmd_eval(copy / "run", *root_ / "data", cfg_, EvalRequest{}, sink);
    EXPECT_EQ(with.predictions, without.predictions);
    EXPECT_EQ(with.accuracy, without.accuracy);
    EXPECT_EQ(with.predictions.size(), 2u);
    EXPECT_EQ(with.predictions[0].size(), 15u);
}

TEST_F(RunFixture, SingleEpisodeEvalReportsNoInterval) {
    std::ostringstream out;
    EvalRequest req;
    req.episodes = 1;
    req.report = (*root_ / "eval1.json");
    auto r = cmd_eval(*root_ / "run", *root_ / "data", cfg_, req, out);
    EXPECT_EQ(r.accuracy.size(), 1u);
    EXPECT_NE(out.str().find("n/a"), std::string::npos);
    auto j = read_json_file(*root_ / "eval1.json");
    EXPECT_EQ(j["ci95"], "n/a");
    req.episodes = 9;
    EXPECT_THROW(cmd_eval(*root_ / "run", *root_ / "data", cfg_, req, out), CompatibilityError);
}

TEST_F(RunFixture, ZeroShotEvalOfTheBaseModel) {
    std::ostringstream out;
    EvalRequest req;
    req.zero_shot = true;
    auto a = cmd_eval(*root_ / "run", *root_ / "data", cfg_, req, out);
    auto b = cmd_eval(*root_ / "run" / "base", *root_ / "data", cfg_, EvalRequest{}, out);
    EXPECT_EQ(a.predictions, b.predictions);
}

TEST_F(RunFixture, ResumeReproducesTheUninterruptedRun) {
    TempDir dir("cli_resume");
    std::ostringstream sink;
    TrainOptions stop;
    stop.stop_after_epoch = 2;
    cmd_train(cfg_, *root_ / "data", dir / "run", stop, sink);
    EXPECT_FALSE(fs::exists(dir / "run" / "episodes" / "ep000" / "adapter"));
    TrainOptions resume;
    resume.resume = true;
    cmd_train(cfg_, *root_ / "data", dir / "run", resume, sink);
    for (const char* ep : {"ep000", "ep001"}) {
        auto a = load_bundle(*root_ / "run" / "episodes" / ep / "adapter");
        auto b = load_bundle(dir / "run" / "episodes" / ep / "adapter");
        ASSERT_EQ(a.size(), b.size());
        for (const auto& [name, t] : a) EXPECT_TRUE(t.bitwise_equal(b.at(name))) << ep << " " << name;
    }
    EXPECT_EQ(read_text_file(dir / "run" / "train.jsonl"), read_text_file(*root_ / "run" / "train.jsonl"));

    RunConfig other = cfg_;
    other.beta = 3;
    EXPECT_THROW(cmd_train(other, *root_ / "data", dir / "run", resume, sink), CompatibilityError);
}

TEST_F(RunFixture, ParallelEpisodesMatchSerial) {
    TempDir dir("cli_jobs");
    RunConfig c = cfg_;
    c.jobs = 2;
    std::ostringstream sink;
    TrainOptions opt;
    opt.base_dir = *root_ / "run" / "base";
    cmd_train(c, *root_ / "data", dir / "run", opt, sink);
    EXPECT_EQ(read_text_file(dir / "run" / "train.jsonl"), read_text_file(*root_ / "run" / "train.jsonl"));
}

TEST_F(RunFixture, DgsoAblationLogsCombinedEveryEpoch) {
    TempDir dir("cli_ablate");
    const std::string args = "train --data " + (*root_ / "data").string() + " --out " + (dir / "run").string() +
                             " --base " + (*root_ / "run" / "base").string() + " --config " +
                             (*root_ / "run" / "config.json").string() + " --ablate dgso --lambda 1 --epochs 6";
    ASSERT_EQ(run_vtt(args), kExitOk);
    const auto logs = read_jsonl(dir / "run" / "train.jsonl");
    ASSERT_EQ(logs.size(), 12u);
    for (const auto& l : logs) EXPECT_EQ(l["mode"], "combined");
}

TEST_F(RunFixture, CeMethodWritesNoVttModules) {
    TempDir dir("cli_ce");
    RunConfig c = cfg_;
    c.method = "ce";
    std::ostringstream sink;
    TrainOptions opt;
    opt.base_dir = *root_ / "run" / "base";
    cmd_train(c, *root_ / "data", dir / "run", opt, sink);
    EXPECT_FALSE(fs::exists(dir / "run" / "episodes" / "ep000" / "vtt"));
    for (const auto& l : read_jsonl(dir / "run" / "train.jsonl")) {
        EXPECT_EQ(l["mode"], "ce_only");
        EXPECT_TRUE(l["L_VtT"].is_null());
    }
}

TEST_F(RunFixture, SweepWritesOneRowPerLayerPlusBaseline) {
    TempDir dir("cli_sweep");
    std::ostringstream out;
    SweepRequest req;
    req.model_dir = *root_ / "run";
    auto rep = cmd_sweep(cfg_, *root_ / "data", req, dir.path(), out);
    EXPECT_EQ(rep.layer_accuracy.size(), cfg_.layers);
    std::istringstream csv(read_text_file(dir / "sweep_remove_zero_shot.csv"));
    std::size_t lines = 0;
    for (std::string line; std::getline(csv, line);) ++lines;
    EXPECT_EQ(lines, cfg_.layers + 2);  // header + baseline + l layers
    EXPECT_TRUE(fs::exists(dir / "sweep_remove_zero_shot.json"));
    auto again = cmd_sweep(cfg_, *root_ / "data", req, dir.path(), out);
    EXPECT_EQ(again.layer_accuracy, rep.layer_accuracy);
}

TEST_F(RunFixture, DiagnoseAndExportFeatures) {
    TempDir dir("cli_diag");
    std::ostringstream out;
    auto ratio = cmd_diagnose(*root_ / "run", "attention_ratio", std::nullopt, std::nullopt, dir / "ratio", out);
    ASSERT_EQ(ratio.rows.size(), cfg_.layers);
    for (const auto& r : ratio.rows) {
        EXPECT_GE(r.value, 0);
        EXPECT_LE(r.value, 1 + 1e-6);
    }
    cmd_export_features(*root_ / "run", *root_ / "data", dir / "features", out);
    auto archive = load_feature_archive(dir / "features");
    EXPECT_EQ(archive.tensors.size(), cfg_.layers + 1);
    EXPECT_EQ(archive.labels.size(), 60u);
    auto self = cmd_diagnose(dir / "features", "cka", std::nullopt, dir / "features", dir / "cka", out);
    for (const auto& r : self.rows) EXPECT_NEAR(r.value, 1.0, 1e-6);
    auto cross = cmd_diagnose(dir / "features", "cross_domain", std::nullopt, std::nullopt, dir / "xd", out);
    EXPECT_EQ(cross.rows.size(), cfg_.layers + 1);
    EXPECT_TRUE(fs::exists(dir / "xd" / "cross_domain.csv"));
    EXPECT_THROW(cmd_diagnose(dir / "features", "attention_ratio", std::nullopt, std::nullopt, dir / "x", out),
                 ParameterError);
}

TEST_F(RunFixture, MismatchedModelIsCompatibilityError) {
    RunConfig c = cfg_;
    c.d = 32;
    c.embed_dim = 32;
    c.heads = 4;
    TempDir dir("cli_compat");
    TrainOptions opt;
    opt.base_dir = *root_ / "run" / "base";
    std::ostringstream sink;
    EXPECT_THROW(cmd_train(c, *root_ / "data", dir / "run", opt, sink), CompatibilityError);
}
