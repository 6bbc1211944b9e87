#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "eqemu/datagen.hpp"
#include "eqemu/error.hpp"
#include "eqemu/evaluation.hpp"
#include "eqemu/optim.hpp"
#include "eqemu/pipeline.hpp"
#include "eqemu/training.hpp"

using namespace eqemu;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("eqemu_pipeline_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

template <class F>
ErrorKind kind_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no eqemu::Error thrown";
    return ErrorKind::InvalidArgument;
}

std::string error_text(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

// Small enough to run in a second or two.
json tiny_config(const fs::path& out, const std::string& command) {
    RunRequest r;
    r.command = command;
    r.seed = 5;
    r.out = out.string();
    r.overrides = {{"corpus.families", "ad,fisher"}, {"corpus.samples", "10"}, {"corpus.steps", "12"},
                   {"train.steps", "6"},             {"train.val_every", "3"}, {"eval.n_ic", "3"},
                   {"eval.steps", "20"}};
    return resolve_run_config(r);
}

json manifest_outputs(const fs::path& dir) {
    std::ifstream in(dir / "run_manifest.json");
    return json::parse(in).at("outputs");
}


}  // namespace

TEST(Config, ParsesKeyValueLinesWithComments) {
    const auto kv = parse_config_text("# header\nseed = 4\n\n  train.steps=10  # inline\nranges.kdv.epsilon = -20,-7\n");
    ASSERT_EQ(kv.size(), 3u);
    EXPECT_EQ(kv[0], (KeyValue{"seed", "4"}));
    EXPECT_EQ(kv[1], (KeyValue{"train.steps", "10"}));
    EXPECT_EQ(kv[2], (KeyValue{"ranges.kdv.epsilon", "-20,-7"}));
    EXPECT_EQ(kind_of([] { parse_config_text("no equals sign"); }), ErrorKind::Format);
}

TEST(Config, OverridesWinOverFlagsOverFile) {
    const auto dir = temp_dir("precedence");
    std::ofstream(dir / "run.cfg") << "seed = 1\ntrain.steps = 100\neval.n_ic = 7\ncorpus.samples = 11\n";
    RunRequest r;
    r.command = "train";
    r.config_file = dir / "run.cfg";
    r.seed = 2;
    r.flags = {{"train.steps", "200"}, {"eval.n_ic", "8"}};
    r.overrides = {{"train.steps", "300"}, {"seed", "9"}};
    const auto c = resolve_run_config(r);
    EXPECT_EQ(c.at("seed"), 9);
    EXPECT_EQ(c.at("train").at("seed"), 9);
    EXPECT_EQ(c.at("train").at("steps"), 300);
    EXPECT_EQ(c.at("eval").at("n_ic"), 8);
    EXPECT_EQ(c.at("corpus").at("samples"), 11);
}

TEST(Config, ArchAndPresetSelectDefaults) {
    RunRequest r;
    r.arch = "m3";
    r.preset = "paper";
    const auto c = resolve_run_config(r);
    EXPECT_EQ(c.at("arch"), "pino");
    EXPECT_EQ(c.at("model").at("channels"), 256);
    EXPECT_EQ(c.at("train").at("unroll"), 5);
    EXPECT_EQ(c.at("train").at("steps"), 100000);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    RunRequest r;
    r.overrides = {{"train.stepz", "3"}};
    EXPECT_EQ(kind_of([&] { resolve_run_config(r); }), ErrorKind::InvalidArgument);
    r.overrides = {{"arch", "m9"}};
    EXPECT_EQ(kind_of([&] { resolve_run_config(r); }), ErrorKind::InvalidArgument);
    r.overrides = {{"seed", "-1"}};
    EXPECT_EQ(kind_of([&] { resolve_run_config(r); }), ErrorKind::InvalidArgument);
    r.config_file = "/definitely/not/here.cfg";
    r.overrides.clear();
    EXPECT_EQ(kind_of([&] { resolve_run_config(r); }), ErrorKind::Io);
}

TEST(Config, RangeOverridesRescaleCoefficients) {
    RunRequest r;
    r.overrides = {{"ranges.kdv.epsilon", "-40,-7"}};
    const auto c = resolve_run_config(r);
    EXPECT_EQ(c.at("ranges").at("kdv.epsilon"), "-40,-7");
    const auto scale = c.at("model").at("coeff_scale").get<std::vector<double>>();
    const auto dflt = ModelConfig::make(Architecture::Lc, ScalePreset::Desk).coeff_scale;
    EXPECT_DOUBLE_EQ(scale[5], 2.0 * dflt[5]);
}

TEST(Hash, MatchesGitBlobIds) {
    // `printf 'hello\n' | git hash-object --stdin` and the empty blob.
    EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
    EXPECT_EQ(git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST(Generate, WritesCorpusAndManifestDeterministically) {
    const auto a = temp_dir("gen_a"), b = temp_dir("gen_b");
    std::ostringstream log;
    cmd_generate(tiny_config(a, "generate"), log);
    cmd_generate(tiny_config(b, "generate"), log);
    const auto corpus = read_corpus(a);
    EXPECT_EQ(corpus.train.size(), 8u);
    const auto outputs = manifest_outputs(a);
    EXPECT_EQ(outputs.size(), 1u + 2 * 8);
    EXPECT_EQ(outputs, manifest_outputs(b));
    std::ifstream in(a / "run_manifest.json");
    const auto m = json::parse(in);
    EXPECT_EQ(m.at("config").at("seed"), 5);
    EXPECT_EQ(m.at("version"), kToolVersion);
}

TEST(Generate, RefusesHeldOutFamilyInTrainSplit) {
    auto c = tiny_config(temp_dir("gen_burgers"), "generate");
    c["corpus"]["families"] = "burgers";
    std::ostringstream log;
    EXPECT_EQ(kind_of([&] { cmd_generate(c, log); }), ErrorKind::Contamination);
    c["corpus"]["split"] = "test";
    cmd_generate(c, log);  // test sets of the held-out family are fine
    EXPECT_TRUE(fs::exists(fs::path(c.at("out").get<std::string>()) / "test_burgers_0.traj"));
}

TEST(Train, MissingCorpusNamesThePath) {
    auto c = tiny_config(temp_dir("train_missing"), "train");
    c["corpus"]["dir"] = "/no/such/corpus";
    std::ostringstream log;
    EXPECT_EQ(kind_of([&] { cmd_train(c, log); }), ErrorKind::Io);
    EXPECT_NE(error_text([&] { cmd_train(c, log); }).find("/no/such/corpus"), std::string::npos);
}

TEST(Train, WritesCheckpointsAndResumesTheStepCounter) {
    const auto root = temp_dir("train");
    std::ostringstream log;
    auto g = tiny_config(root / "corpus", "generate");
    cmd_generate(g, log);

    auto c = tiny_config(root / "run", "train");
    c["corpus"]["dir"] = (root / "corpus").string();
    cmd_train(c, log);
    EXPECT_TRUE(fs::exists(root / "run" / "best.ckpt"));
    EXPECT_TRUE(fs::exists(root / "run" / "run_manifest.json"));
    EXPECT_EQ(read_curve_csv(root / "run" / "curve.csv").size(), 6u);
    EXPECT_EQ(ad::load_checkpoint(root / "run" / "last.ckpt").step, 6u);

    c["train"]["steps"] = 10;
    c["resume"] = (root / "run" / "last.ckpt").string();
    cmd_train(c, log);
    const auto curve = read_curve_csv(root / "run" / "curve.csv");
    ASSERT_EQ(curve.size(), 10u);
    for (std::size_t i = 0; i < curve.size(); ++i) EXPECT_EQ(curve[i].step, i);
    EXPECT_EQ(ad::load_checkpoint(root / "run" / "last.ckpt").step, 10u);
}

TEST(Eval, OracleClosureAndBurgersBaselines) {
    const auto dir = temp_dir("eval_oracle");
    auto c = tiny_config(dir, "eval");
    c["eval"]["model"] = "oracle";
    c["eval"]["pde"] = "burgers";
    std::ostringstream log;
    cmd_eval(c, log);
    EXPECT_NE(log.str().find("closure check passed"), std::string::npos);
    for (const char* f : {"reference_burgers_0.csv", "persistence_burgers_0.csv", "coarse_burgers_3.csv"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    const auto coarse = read_report(dir / "coarse_burgers_3.csv");
    for (double v : coarse.mean) EXPECT_TRUE(std::isfinite(v));
    EXPECT_GT(coarse.mean.back(), 0.0);
}

TEST(Eval, ExplicitParameterTuples) {
    const auto dir = temp_dir("eval_params");
    auto c = tiny_config(dir, "eval");
    c["eval"]["model"] = "persistence";
    c["eval"]["pde"] = "ad";
    c["eval"]["params"] = "c=1,nu=2; c=-1,nu=3";
    std::ostringstream log;
    cmd_eval(c, log);
    EXPECT_TRUE(fs::exists(dir / "persistence_advection_diffusion_1.csv"));
    c["eval"]["params"] = "c=1";
    EXPECT_EQ(kind_of([&] { cmd_eval(c, log); }), ErrorKind::InvalidArgument);
}

TEST(Eval, UnknownArchitectureInCheckpointIsStructured) {
    const auto dir = temp_dir("eval_badarch");
    EmulatorModel model(ModelConfig::make(Architecture::Lc, ScalePreset::Desk, 32), 1);
    save_model(model, dir / "good.ckpt");
    auto ckpt = ad::load_checkpoint(dir / "good.ckpt");
    ckpt.config["model"]["arch"] = "transformer9000";
    ad::save_checkpoint(ckpt, dir / "bad.ckpt");

    auto c = tiny_config(dir / "out", "eval");
    c["eval"]["model"] = (dir / "bad.ckpt").string();
    c["eval"]["pde"] = "kdv";
    std::ostringstream log;
    EXPECT_EQ(kind_of([&] { cmd_eval(c, log); }), ErrorKind::Format);
    c["eval"]["model"] = (dir / "absent.ckpt").string();
    EXPECT_EQ(kind_of([&] { cmd_eval(c, log); }), ErrorKind::Io);
}

TEST(Eval, BurgersOnContaminatedCheckpointIsRefused) {
    const auto dir = temp_dir("eval_contaminated");
    EmulatorModel model(ModelConfig::make(Architecture::Lc, ScalePreset::Desk), 1);
    const json manifest = {{"entries", json::array({{{"family", "burgers"}, {"split", "train"}, {"file", "x.traj"}}})}};
    save_model(model, dir / "m.ckpt", nullptr, {{"corpus_manifest", manifest}});
    auto c = tiny_config(dir / "out", "eval");
    c["eval"]["model"] = (dir / "m.ckpt").string();
    c["eval"]["pde"] = "burgers";
    std::ostringstream log;
    EXPECT_EQ(kind_of([&] { cmd_eval(c, log); }), ErrorKind::Contamination);
}

TEST(Sweep, GridRowsBandColumnAndSingleValue) {
    const auto dir = temp_dir("sweep");
    auto c = tiny_config(dir, "sweep");
    c["eval"]["model"] = "coarse";
    c["eval"]["pde"] = "kdv";
    c["sweep"]["param"] = "epsilon";
    c["sweep"]["range"] = "-30,0";
    c["sweep"]["count"] = 7;
    std::ostringstream log;
    cmd_sweep(c, log);
    const auto rows = read_sweep(dir / "sweep_kdv_epsilon.csv");
    ASSERT_EQ(rows.size(), 7u);
    for (const auto& r : rows) EXPECT_EQ(r.in_training_band, r.value >= -20.0 && r.value <= -7.0) << r.value;

    c["sweep"]["count"] = 1;
    c["sweep"]["range"] = "-12,-12";
    cmd_sweep(c, log);
    const auto one = read_sweep(dir / "sweep_kdv_epsilon.csv");
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].value, -12.0);
    EXPECT_TRUE(one[0].in_training_band);
}

TEST(Selfcheck, CleanBuildPassesWithTimings) {
    std::ostringstream log;
    const auto results = cmd_selfcheck(std::nullopt, log);
    ASSERT_EQ(results.size(), 3u);
    for (const auto& r : results) {
        EXPECT_TRUE(r.passed) << r.name;
        EXPECT_GE(r.seconds, 0.0);
        EXPECT_NE(log.str().find(r.name), std::string::npos);
    }
    const auto s = solver_analytic_check();
    EXPECT_LT(s.advection_linf, 1e-6);
    EXPECT_LT(s.diffusion_max_error, 1e-8);
}

TEST(Selfcheck, InjectedFaultIsReportedByName) {
    std::ostringstream log;
    const auto results = cmd_selfcheck(std::string("film"), log);
    EXPECT_FALSE(results[1].passed);
    EXPECT_TRUE(results[0].passed);
    EXPECT_NE(log.str().find("failed: film"), std::string::npos);
    EXPECT_EQ(kind_of([&] { cmd_selfcheck(std::string("nonexistent_op"), log); }), ErrorKind::InvalidArgument);
}
