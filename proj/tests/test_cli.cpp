#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "mslm/checkpoint.hpp"
#include "mslm/error.hpp"
#include "mslm/hpo.hpp"
#include "mslm/model.hpp"
#include "run_config.hpp"

using namespace mslm;
using namespace mslm::cli;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result invoke(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("mslm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    fs::path dir_;
};

std::string slurp(const std::string& path) { return read_file(path); }

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    for (std::string l; std::getline(ss, l);) out.push_back(l);
    return out;
}

// Drops the trailing seconds column of a log line.
std::string without_seconds(const std::string& line) { return line.substr(0, line.rfind(',')); }

}  // namespace

TEST(Presets, CharacterPresetValues) {
    const RunConfig ptb = preset("ptb-char");
    EXPECT_EQ(ptb.model.cell, CellType::lstm);
    EXPECT_EQ(ptb.model.layers, 3u);
    EXPECT_EQ(ptb.model.hidden_size, 1000u);
    EXPECT_EQ(ptb.model.embedding_size, 128u);
    EXPECT_EQ(ptb.model.dropout, (DropoutRates{0.0, 0.25, 0.1, 0.1, 0.5}));
    EXPECT_EQ(ptb.trainer.window.base_bptt, 150u);
    EXPECT_EQ(ptb.batch, 128u);
    EXPECT_EQ(ptb.trainer.schedule.lr0, 0.002);
    EXPECT_EQ(ptb.trainer.schedule.epochs, 500u);
    EXPECT_EQ(ptb.trainer.schedule.reductions, (std::vector<std::size_t>{300, 400}));
    EXPECT_EQ(ptb.trainer.reg.weight_decay, 1.2e-6);
    EXPECT_EQ(ptb.trainer.reg.ar_alpha, 0.0);
    EXPECT_EQ(ptb.trainer.reg.tar_beta, 0.0);

    const RunConfig e8 = preset("enwik8");
    EXPECT_EQ(e8.model.cell, CellType::lstm);
    EXPECT_EQ(e8.model.layers, 3u);
    EXPECT_EQ(e8.model.hidden_size, 1840u);
    EXPECT_EQ(e8.model.embedding_size, 400u);
    EXPECT_EQ(e8.model.dropout, (DropoutRates{0.0, 0.01, 0.01, 0.4, 0.2}));
    EXPECT_EQ(e8.trainer.window.base_bptt, 200u);
    EXPECT_EQ(e8.batch, 128u);
    EXPECT_EQ(e8.trainer.schedule.lr0, 0.001);
    EXPECT_EQ(e8.trainer.schedule.epochs, 50u);
    EXPECT_EQ(e8.trainer.schedule.reductions, (std::vector<std::size_t>{25, 35}));
}

TEST(Presets, WordPresetValuesAndParameterCount) {
    const RunConfig wt = preset("wt103");
    EXPECT_EQ(wt.model.cell, CellType::qrnn);
    EXPECT_EQ(wt.model.layers, 4u);
    EXPECT_EQ(wt.model.hidden_size, 2500u);
    EXPECT_EQ(wt.model.embedding_size, 400u);
    EXPECT_EQ(wt.trainer.window.base_bptt, 140u);
    EXPECT_EQ(wt.batch, 60u);
    EXPECT_EQ(wt.trainer.schedule.epochs, 14u);
    EXPECT_EQ(wt.trainer.schedule.reductions, (std::vector<std::size_t>{12}));
    EXPECT_EQ(wt.data.granularity, Granularity::word);
    const ModelConfig m = resolve_model(wt, 267735);
    EXPECT_EQ(m.cutoffs, (std::vector<std::size_t>{20000, 60000, 267735}));
    EXPECT_LT(std::abs(static_cast<double>(count_parameters(m)) - 151e6) / 151e6, 0.02);
    EXPECT_THROW(preset("ptb-word"), UsageError);
}

TEST(Presets, RoundTripThroughJson) {
    for (const auto& name : preset_names()) {
        const RunConfig p = preset(name);
        EXPECT_EQ(nlohmann::json(p).get<RunConfig>(), p) << name;
    }
}

TEST(Presets, ResolveModelDropsCutoffsBeyondTheVocabulary) {
    RunConfig r = preset("fixture-word");
    EXPECT_EQ(resolve_model(r, 254).cutoffs, (std::vector<std::size_t>{100, 254}));
    EXPECT_TRUE(resolve_model(r, 90).cutoffs.empty());
    r.model.cutoffs.clear();
    EXPECT_TRUE(resolve_model(r, 1000).cutoffs.empty());
}

TEST(Presets, OverridesWinAndMalformedInputIsUsage) {
    const RunConfig base = preset("fixture-char");
    const RunConfig over = apply_overrides(base, {{"model", {{"hidden_size", 7}}}, {"seed", 9}});
    EXPECT_EQ(over.model.hidden_size, 7u);
    EXPECT_EQ(over.model.embedding_size, base.model.embedding_size);
    EXPECT_EQ(over.seed, 9u);
    EXPECT_THROW(apply_overrides(base, {{"model", {{"cell", "gru"}}}}), UsageError);
    EXPECT_THROW(apply_overrides(base, {{"batch", "many"}}), UsageError);
}

TEST(ExitCodes, Mapping) {
    EXPECT_EQ(exit_code_for(UsageError("x")), kUsage);
    EXPECT_EQ(exit_code_for(NamingError("x")), kUsage);
    EXPECT_EQ(exit_code_for(DataError("x")), kData);
    EXPECT_EQ(exit_code_for(IngestionError("x")), kData);
    EXPECT_EQ(exit_code_for(DivergenceError("x", 3)), kDivergence);
    EXPECT_EQ(exit_code_for(CompatibilityError("x")), kCompatibility);
    EXPECT_EQ(exit_code_for(std::runtime_error("x")), kFailure);
}

TEST_F(CliTest, UsageErrors) {
    EXPECT_EQ(invoke({}).code, kUsage);
    EXPECT_EQ(invoke({"fly"}).code, kUsage);
    EXPECT_EQ(invoke({"train"}).code, kUsage);
    EXPECT_EQ(invoke({"train", "--preset", "nope"}).code, kUsage);
    EXPECT_EQ(invoke({"train", "--preset", "ptb-char", "--output", path("p")}).code, kUsage);  // no data paths
    EXPECT_EQ(invoke({"train", "--fixture", "--train", path("missing.txt"), "--output", path("m")}).code, kData);
    EXPECT_EQ(invoke({"--help"}).code, kOk);
}

TEST_F(CliTest, TrainWritesRunDirectoryUnderOutputRoot) {
    ::setenv("MSLM_OUTPUT_ROOT", dir_.c_str(), 1);
    const Result r = invoke({"train", "--fixture", "--epochs", "2", "--hidden", "16", "--emb", "8", "--quiet"});
    ::unsetenv("MSLM_OUTPUT_ROOT");
    ASSERT_EQ(r.code, kOk) << r.err;
    const fs::path run = dir_ / "fixture-char-1";
    for (const char* f : {"config.json", "seed.txt", "log.csv", "vocab.txt", "best.ckpt", "final.ckpt"}) {
        EXPECT_TRUE(fs::exists(run / f)) << f;
    }
    const auto log = lines(slurp((run / "log.csv").string()));
    ASSERT_EQ(log.size(), 3u);
    EXPECT_EQ(log[0], "epoch,lr,train_nats,valid_nats,valid_bpc_or_ppl,seconds");
    EXPECT_EQ(slurp((run / "seed.txt").string()), "1\n");

    RunConfig expected = preset("fixture-char");
    expected.model.hidden_size = 16;
    expected.model.embedding_size = 8;
    expected.trainer.schedule.epochs = 2;
    EXPECT_EQ(load_run_config((run / "config.json").string()), expected);

    // A second train into the same directory must not clobber it.
    ::setenv("MSLM_OUTPUT_ROOT", dir_.c_str(), 1);
    EXPECT_EQ(invoke({"train", "--fixture", "--epochs", "2", "--quiet"}).code, kUsage);
    ::unsetenv("MSLM_OUTPUT_ROOT");
}

TEST_F(CliTest, ConfigFileThenFlags) {
    std::ofstream(path("cfg.json")) << R"({"model": {"hidden_size": 12, "embedding_size": 6}, "trainer": {"schedule": {"epochs": 1}}, "batch": 8})";
    const Result r = invoke({"train", "--fixture", "--config", path("cfg.json"), "--batch", "4", "--output", path("run"), "--quiet"});
    ASSERT_EQ(r.code, kOk) << r.err;
    const RunConfig saved = load_run_config(path("run/config.json"));
    EXPECT_EQ(saved.model.hidden_size, 12u);
    EXPECT_EQ(saved.batch, 4u);
    EXPECT_EQ(saved.trainer.schedule.epochs, 1u);
    std::ofstream(path("bad.json")) << "{";
    EXPECT_EQ(invoke({"train", "--fixture", "--config", path("bad.json"), "--output", path("run2")}).code, kUsage);
}

TEST_F(CliTest, ResumeExtendsRunLosslessly) {
    const std::vector<std::string> common{"--fixture", "--hidden", "16", "--emb", "8", "--quiet", "--wdrop", "0.2",
                                          "--dropout-h", "0.1"};
    auto with = [&](std::vector<std::string> head, std::initializer_list<std::string> tail) {
        head.insert(head.end(), common.begin(), common.end());
        head.insert(head.end(), tail);
        return head;
    };
    ASSERT_EQ(invoke(with({"train"}, {"--epochs", "3", "--output", path("straight")})).code, kOk);
    ASSERT_EQ(invoke(with({"train"}, {"--epochs", "1", "--output", path("split")})).code, kOk);
    const Result resumed = invoke(with({"train"}, {"--epochs", "3", "--output", path("split"), "--resume"}));
    ASSERT_EQ(resumed.code, kOk) << resumed.err;

    const auto a = lines(slurp(path("straight/log.csv"))), b = lines(slurp(path("split/log.csv")));
    ASSERT_EQ(a.size(), 4u);
    ASSERT_EQ(b.size(), 4u);
    for (std::size_t i = 1; i < a.size(); ++i) EXPECT_EQ(without_seconds(a[i]), without_seconds(b[i]));
    const Checkpoint x = read_checkpoint(path("straight/final.ckpt")), y = read_checkpoint(path("split/final.ckpt"));
    for (const auto& [name, t] : x.tensors) {
        if (name.rfind("adam.", 0) == 0 || name.find('.') == std::string::npos || name.rfind("state", 0) == 0) continue;
        EXPECT_EQ(t, y.tensors.at(name)) << name;
    }
    auto mx = restore_model(x), my = restore_model(y);
    const auto px = mx->parameters(), py = my->parameters();
    for (std::size_t i = 0; i < px.size(); ++i) EXPECT_EQ(px[i]->value, py[i]->value) << px[i]->name;

    // A changed model cannot be resumed.
    EXPECT_EQ(invoke({"train", "--fixture", "--hidden", "17", "--emb", "8", "--epochs", "4", "--output", path("split"),
                   "--resume", "--quiet"})
                  .code,
              kCompatibility);
}

TEST_F(CliTest, EvalFreshModelNearUniformAndRepeatable) {
    ASSERT_EQ(invoke({"train", "--fixture", "--epochs", "0", "--output", path("fresh"), "--quiet"}).code, kOk);
    const Result first = invoke({"eval", "--checkpoint", path("fresh/final.ckpt"), "--csv", path("e1.csv")});
    const Result second = invoke({"eval", "--checkpoint", path("fresh/final.ckpt"), "--csv", path("e2.csv")});
    ASSERT_EQ(first.code, kOk) << first.err;
    EXPECT_EQ(first.out, second.out);
    const auto rows = lines(slurp(path("e1.csv")));
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0], "checkpoint,split,tokens,nats,bpc,perplexity");
    std::stringstream ss(rows[1]);
    std::vector<std::string> cells;
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    EXPECT_NEAR(std::stod(cells[4]), std::log2(51.0), 0.2);
}

TEST_F(CliTest, GranularityMismatchIsCompatibilityError) {
    ASSERT_EQ(invoke({"train", "--preset", "fixture-word", "--epochs", "0", "--output", path("w"), "--quiet"}).code, kOk);
    const std::string chars = std::string(MSLM_FIXTURE_DIR) + "/char_small.txt";
    EXPECT_EQ(invoke({"eval", "--checkpoint", path("w/final.ckpt"), "--data", chars, "--granularity", "char"}).code,
              kCompatibility);
    EXPECT_EQ(invoke({"eval", "--checkpoint", path("w/final.ckpt"), "--split", "test"}).code, kOk);
    EXPECT_EQ(invoke({"eval", "--checkpoint", path("nothing.ckpt")}).code, kData);
}

TEST_F(CliTest, AnalyzeOutputs) {
    ASSERT_EQ(invoke({"train", "--fixture", "--epochs", "1", "--hidden", "16", "--emb", "8", "--output", path("c"), "--quiet"}).code, kOk);
    const Result len = invoke({"analyze", "--checkpoint", path("c/final.ckpt"), "--analysis", "word-len", "--split", "train"});
    ASSERT_EQ(len.code, kOk) << len.err;
    const auto rows = lines(slurp(path("c/word_length.csv")));
    ASSERT_GT(rows.size(), 1u);
    EXPECT_EQ(rows[0], "word_len,position,mean_prob,count");
    std::set<std::size_t> lengths;
    for (std::size_t i = 1; i < rows.size(); ++i) lengths.insert(std::stoul(rows[i].substr(0, rows[i].find(','))));
    EXPECT_EQ(*lengths.begin(), 2u);
    EXPECT_EQ(lengths.size(), *lengths.rbegin() - 1);  // every length from 2 to the longest word

    EXPECT_EQ(invoke({"analyze", "--checkpoint", path("c/final.ckpt"), "--analysis", "char-pos"}).code, kOk);
    EXPECT_EQ(lines(slurp(path("c/char_position.csv")))[0], "position,mean_prob,count");
    EXPECT_EQ(invoke({"analyze", "--checkpoint", path("c/final.ckpt"), "--analysis", "word-pos"}).code, kUsage);
    EXPECT_EQ(invoke({"analyze", "--checkpoint", path("c/final.ckpt"), "--analysis", "letters"}).code, kUsage);

    ASSERT_EQ(invoke({"train", "--preset", "fixture-word", "--epochs", "1", "--output", path("w"), "--quiet"}).code, kOk);
    const Result pos = invoke({"analyze", "--checkpoint", path("w/final.ckpt"), "--analysis", "word-pos", "--anchor", "The"});
    ASSERT_EQ(pos.code, kOk) << pos.err;
    EXPECT_TRUE(fs::exists(path("w/word_position_The.csv")));
    const Result missing = invoke({"analyze", "--checkpoint", path("w/final.ckpt"), "--analysis", "word-pos", "--anchor", "Thee"});
    EXPECT_EQ(missing.code, kUsage);
    EXPECT_NE(missing.err.find("The"), std::string::npos);
    EXPECT_EQ(invoke({"analyze", "--checkpoint", path("w/final.ckpt"), "--analysis", "char-pos"}).code, kUsage);
}

TEST_F(CliTest, BenchGridRows) {
    const auto grid = default_bench_grid();
    EXPECT_TRUE(std::any_of(grid.begin(), grid.end(), [](const BenchConfig& c) { return c.layers == 4; }));
    const Result one = invoke({"bench", "--batch", "2", "--seq", "3", "--hidden", "8", "--layers", "2", "--reps", "1",
                            "--out", path("b.csv")});
    ASSERT_EQ(one.code, kOk) << one.err;
    const auto rows = lines(slurp(path("b.csv")));
    ASSERT_EQ(rows.size(), 3u);  // header + one row per cell
    EXPECT_EQ(rows[0], "cell,layers,hidden,batch,seq,fwd_ms,fwdbwd_ms");
    EXPECT_EQ(rows[1].substr(0, 5), "lstm,");
    EXPECT_EQ(rows[2].substr(0, 5), "qrnn,");
    EXPECT_EQ(invoke({"bench", "--cells", "gru", "--batch", "1"}).code, kUsage);
}

TEST_F(CliTest, HpoStudyResumesAndWritesOutputs) {
    const std::vector<std::string> base{"hpo", "--trials", "20", "--out", path("study"), "--trees", "50", "--limit-bytes", "3000"};
    auto with = [&](std::initializer_list<std::string> extra) {
        auto a = base;
        a.insert(a.end(), extra);
        return a;
    };
    const Result partial = invoke(with({"--stop-after", "7"}));
    ASSERT_EQ(partial.code, kOk) << partial.err;
    EXPECT_EQ(read_records(path("study/records.csv")).size(), 7u);
    EXPECT_EQ(invoke(base).code, kUsage);  // existing study without --resume
    const Result rest = invoke(with({"--resume"}));
    ASSERT_EQ(rest.code, kOk) << rest.err;
    const auto records = read_records(path("study/records.csv"));
    ASSERT_EQ(records.size(), 20u);
    std::set<std::uint64_t> seeds;
    for (const auto& r : records) seeds.insert(r.seed);
    EXPECT_EQ(seeds.size(), 20u);

    const auto imp = lines(slurp(path("study/importance.csv")));
    ASSERT_EQ(imp.size(), 10u);
    EXPECT_EQ(imp[0], "feature,importance");
    double total = 0.0;
    for (std::size_t i = 1; i < imp.size(); ++i) total += std::stod(imp[i].substr(imp[i].find(',') + 1));
    EXPECT_NEAR(total, 1.0, 1e-9);
    for (const auto& [x, y] : default_surface_pairs()) {
        for (const std::string suffix : {".csv", "_grid.csv"}) {
            const std::string f = path("study/surface_" + x + "_vs_" + y + suffix);
            ASSERT_TRUE(fs::exists(f)) << f;
            EXPECT_EQ(lines(slurp(f))[0], "x,y,metric");
        }
    }
}
