#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mslm/checkpoint.hpp"
#include "mslm/error.hpp"
#include "mslm/gradcheck.hpp"
#include "mslm/trainer.hpp"
#include "test_support.hpp"

using namespace mslm;
using mslm::testing::random_tensor;

namespace {

std::string fixture_prefix(std::size_t bytes) {
    return read_file(std::string(MSLM_FIXTURE_DIR) + "/char_small.txt").substr(0, bytes);
}

ModelConfig char_model(std::size_t vocab, CellType cell = CellType::lstm) {
    ModelConfig cfg;
    cfg.cell = cell;
    cfg.vocab_size = vocab;
    cfg.layers = 2;
    cfg.hidden_size = 16;
    cfg.embedding_size = 8;
    cfg.dropout = {0.1, 0.1, 0.1, 0.1, 0.2};
    return cfg;
}

TrainerConfig small_trainer(double lr = 3e-3) {
    TrainerConfig t;
    t.schedule.lr0 = lr;
    t.schedule.epochs = 2;
    t.window.base_bptt = 20;
    t.reg.ar_alpha = 1.0;
    t.reg.tar_beta = 1.0;
    t.reg.weight_decay = 1e-6;
    return t;
}

std::vector<Tensor> snapshot(LanguageModel& model) {
    std::vector<Tensor> out;
    for (auto* p : model.parameters()) out.push_back(p->value);
    return out;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("mslm_test_" + name)).string();
}

}  // namespace

TEST(Adam, OneStepMatchesScalarOracle) {
    for (double g : {0.3, -2.0, 1e-6}) {
        Parameter w("w", Tensor::vector({0.7}));
        w.grad[0] = g;
        Adam adam;
        const double lr = 0.01;
        adam.step(std::vector<Parameter*>{&w}, lr);
        const double m = 0.1 * g, v = 0.001 * g * g;
        const double expected = 0.7 - lr * (m / 0.1) / (std::sqrt(v / 0.001) + 1e-8);
        EXPECT_DOUBLE_EQ(w.value[0], expected);
        EXPECT_EQ(w.grad[0], g);
    }
}

TEST(Adam, MultiStepMatchesOracle) {
    Parameter w("w", Tensor::vector({1.0}));
    Adam adam;
    double x = 1.0, m = 0.0, v = 0.0;
    const double grads[] = {0.5, -0.1, 0.2, 0.0, 1.5};
    for (int t = 1; t <= 5; ++t) {
        const double g = grads[t - 1];
        w.grad[0] = g;
        adam.step(std::vector<Parameter*>{&w}, 0.05);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        EXPECT_NEAR(w.value[0], x, 1e-15);
    }
    EXPECT_EQ(adam.steps(), 5u);
}

TEST(Adam, ZeroGradientsFromFreshStateLeaveWeights) {
    Rng rng(1);
    Parameter w("w", random_tensor({3, 4}, rng));
    const Tensor before = w.value;
    Adam adam;
    adam.step(std::vector<Parameter*>{&w}, 0.1);
    EXPECT_EQ(w.value, before);
}

TEST(Adam, IdenticalParametersStayIdentical) {
    Rng rng(2);
    Parameter a("a", random_tensor({5}, rng));
    Parameter b("b", a.value);
    Adam adam;
    for (int step = 0; step < 50; ++step) {
        const Tensor g = random_tensor({5}, rng);
        a.grad = g;
        b.grad = g;
        adam.step(std::vector<Parameter*>{&a, &b}, 0.01);
        ASSERT_EQ(a.value, b.value);
    }
}

TEST(Adam, RejectsNonPositiveRate) {
    Parameter w("w", Tensor::vector({1.0}));
    Adam adam;
    EXPECT_THROW(adam.step(std::vector<Parameter*>{&w}, 0.0), DomainError);
    EXPECT_THROW(adam.step(std::vector<Parameter*>{&w}, -1.0), DomainError);
}

TEST(Schedule, StepDecayAtListedEpochs) {
    Schedule s{0.002, 500, {300, 400}, 10.0};
    EXPECT_DOUBLE_EQ(s.lr(1), 0.002);
    EXPECT_DOUBLE_EQ(s.lr(299), 0.002);
    EXPECT_DOUBLE_EQ(s.lr(300), 0.0002);
    EXPECT_DOUBLE_EQ(s.lr(400), 0.00002);
    for (std::size_t e = 1; e < 500; ++e) EXPECT_LE(s.lr(e + 1), s.lr(e));
}

TEST(Regularizers, ZeroCoefficientsReturnTheLossItself) {
    Rng rng(3);
    Tape tape;
    const Var loss = ops::sum(tape.input(random_tensor({2}, rng)));
    const Var raw = tape.input(random_tensor({6, 3}, rng));
    RegConfig cfg;
    const Var total = apply_regularizers(loss, raw, raw, 2, {}, cfg);
    EXPECT_EQ(total.id(), loss.id());
}

TEST(Regularizers, ArAndTarTerms) {
    Tape tape;
    const Var loss = tape.constant(Tensor::scalar(1.5));
    Tensor constant_in_time({4 * 3, 2});
    for (std::size_t r = 0; r < 12; ++r) {
        constant_in_time.at(r, 0) = static_cast<double>(r % 3);
        constant_in_time.at(r, 1) = -1.0;
    }
    RegConfig tar_only;
    tar_only.tar_beta = 7.0;
    EXPECT_EQ(apply_regularizers(loss, tape.constant(constant_in_time), tape.constant(constant_in_time), 3, {}, tar_only)
                  .value()[0],
              1.5);
    RegConfig ar_only;
    ar_only.ar_alpha = 1.0;
    const Var dropped = tape.constant(Tensor({5, 4}, 2.0));
    EXPECT_DOUBLE_EQ(apply_regularizers(loss, dropped, dropped, 1, {}, ar_only).value()[0], 1.5 + 4.0);
    EXPECT_THROW(
        {
            RegConfig bad;
            bad.ar_alpha = -1;
            apply_regularizers(loss, dropped, dropped, 1, {}, bad);
        },
        DomainError);
}

TEST(Regularizers, GradientsMatchFiniteDifferences) {
    Rng rng(4);
    Parameter w("w", random_tensor({3, 2}, rng));
    const Tensor x = random_tensor({8, 2}, rng);
    RegConfig cfg{0.7, 1.3, 0.05, 0.0};
    auto loss = [&](Tape& tape, const Var& in) {
        const Var h = ops::tanh(ops::matmul_nt(in, tape.param(w)));
        std::vector<Parameter*> params{&w};
        return apply_regularizers(ops::mean(h), h, ops::scale(h, 1.5), 2, params, cfg);
    };
    EXPECT_LT(finite_diff_check(loss, x, 1e-5), 1e-6);
    w.zero_grad();
    {
        Tape tape;
        backward(tape, loss(tape, tape.constant(x)));
    }
    EXPECT_LT(parameter_fd_check(w, [&] {
        Tape tape;
        return loss(tape, tape.constant(x)).value()[0];
    }, 1e-5), 1e-6);
}

TEST(Clip, Examples) {
    Parameter a("a", Tensor::vector({0.0, 0.0}));
    a.grad = Tensor::vector({0.3, 0.4});
    std::vector<Parameter*> ps{&a};
    EXPECT_EQ(clip_gradients(ps, 1.0), 1.0);
    EXPECT_EQ(a.grad, Tensor::vector({0.3, 0.4}));
    a.grad = Tensor::vector({3.0, 4.0});
    EXPECT_DOUBLE_EQ(clip_gradients(ps, 1.0), 0.2);
    EXPECT_DOUBLE_EQ(a.grad[0], 0.6);
    EXPECT_DOUBLE_EQ(a.grad[1], 0.8);
    a.grad = Tensor::vector({3.0, 4.0});
    EXPECT_EQ(clip_gradients(ps, 5.0), 1.0);
    EXPECT_THROW(clip_gradients(ps, 0.0), DomainError);
}

TEST(Clip, NormIsGlobalAcrossParameters) {
    Parameter a("a", Tensor::vector({0.0}));
    Parameter b("b", Tensor::vector({0.0}));
    a.grad[0] = 3.0;
    b.grad[0] = 4.0;
    std::vector<Parameter*> ps{&a, &b};
    clip_gradients(ps, 2.5);
    EXPECT_DOUBLE_EQ(gradient_norm(ps), 2.5);
    EXPECT_DOUBLE_EQ(a.grad[0] / b.grad[0], 0.75);
}

TEST(TrainEpoch, ZeroLearningRateLeavesParametersBitIdentical) {
    const Corpus corpus = tokenize(fixture_prefix(2000), Granularity::character);
    const BatchStream stream = batchify(corpus.tokens, 4);
    LanguageModel model(char_model(corpus.vocab.size()), 5);
    const auto before = snapshot(model);
    Trainer trainer(model, small_trainer(0.0), 6);
    const EpochStats stats = trainer.train_epoch(stream);
    EXPECT_GT(stats.windows, 0u);
    EXPECT_EQ(snapshot(model), before);
}

TEST(TrainEpoch, SameSeedSameLossSequence) {
    const Corpus corpus = tokenize(fixture_prefix(2000), Granularity::character);
    const BatchStream stream = batchify(corpus.tokens, 4);
    std::vector<std::vector<double>> runs;
    for (int rep = 0; rep < 2; ++rep) {
        LanguageModel model(char_model(corpus.vocab.size(), CellType::qrnn), 7);
        Trainer trainer(model, small_trainer(), 8);
        auto stats = trainer.train_epoch(stream);
        auto second = trainer.train_epoch(stream);
        stats.window_losses.insert(stats.window_losses.end(), second.window_losses.begin(), second.window_losses.end());
        runs.push_back(stats.window_losses);
        EXPECT_EQ(second.epoch, 2u);
    }
    EXPECT_EQ(runs[0], runs[1]);
    EXPECT_GT(runs[0].size(), 10u);
}

TEST(TrainEpoch, LossDecreasesOnRepeatedData) {
    const Corpus corpus = tokenize(fixture_prefix(1500), Granularity::character);
    const BatchStream stream = batchify(corpus.tokens, 4);
    ModelConfig cfg = char_model(corpus.vocab.size());
    cfg.dropout = {};
    LanguageModel model(cfg, 9);
    TrainerConfig tc = small_trainer(1e-2);
    tc.reg = {};
    Trainer trainer(model, tc, 10);
    const double first = trainer.train_epoch(stream).mean_nats;
    double last = first;
    for (int e = 0; e < 4; ++e) last = trainer.train_epoch(stream).mean_nats;
    EXPECT_LT(last, first - 0.3);
}

TEST(TrainEpoch, DivergenceRaisedBeforeParametersChange) {
    const Corpus corpus = tokenize(fixture_prefix(500), Granularity::character);
    const BatchStream stream = batchify(corpus.tokens, 2);
    LanguageModel model(char_model(corpus.vocab.size()), 11);
    model.embedding().value.at(0, 0) = 1e300;
    const auto before = snapshot(model);
    Trainer trainer(model, small_trainer(), 12);
    try {
        trainer.train_epoch(stream);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_EQ(e.window(), 0u);
    }
    EXPECT_EQ(snapshot(model), before);
}

TEST(Evaluate, UniformLogitsGiveLogVocabulary) {
    const Corpus corpus = tokenize(fixture_prefix(3000), Granularity::character);
    ModelConfig cfg = char_model(corpus.vocab.size());
    LanguageModel model(cfg, 13);
    model.embedding().value.fill(0.0);
    const EvalResult r = evaluate(model, batchify(corpus.tokens, 4), 50);
    EXPECT_NEAR(r.metrics.bpc, std::log2(static_cast<double>(corpus.vocab.size())), 1e-12);
    EXPECT_EQ(r.tokens, 4 * (3000 / 4 - 1));
}

TEST(Evaluate, BatchSizeInvariantOnFreshModel) {
    const Corpus corpus = tokenize(fixture_prefix(10000), Granularity::character);
    LanguageModel model(char_model(corpus.vocab.size()), 14);
    const double one = evaluate(model, batchify(corpus.tokens, 1), 100).metrics.bpc;
    const double sixteen = evaluate(model, batchify(corpus.tokens, 16), 100).metrics.bpc;
    EXPECT_NEAR(one, sixteen, 1e-3);
}

TEST(Evaluate, WindowLengthDoesNotChangeResult) {
    const Corpus corpus = tokenize(fixture_prefix(1000), Granularity::character);
    LanguageModel model(char_model(corpus.vocab.size()), 15);
    const auto stream = batchify(corpus.tokens, 3);
    const EvalResult a = evaluate(model, stream, 7, true);
    const EvalResult b = evaluate(model, stream, 64, true);
    ASSERT_EQ(a.log_probs.size(), b.log_probs.size());
    for (std::size_t i = 0; i < a.log_probs.size(); ++i) EXPECT_NEAR(a.log_probs[i], b.log_probs[i], 1e-12);
}

TEST(Evaluate, EmptySplitIsAContractError) {
    LanguageModel model(char_model(5), 16);
    EXPECT_THROW(evaluate(model, batchify({1, 2}, 2), 10), ContractError);
}

TEST(Checkpoint, RoundTripIsExact) {
    const Corpus corpus = tokenize(fixture_prefix(800), Granularity::character);
    ModelConfig cfg = char_model(corpus.vocab.size(), CellType::qrnn);
    cfg.cutoffs = {10, corpus.vocab.size()};
    LanguageModel model(cfg, 17);
    Trainer trainer(model, small_trainer(), 18);
    const BatchStream stream = batchify(corpus.tokens, 2);
    for (int i = 0; i < 3; ++i) trainer.train_window(stream);
    const std::string path = temp_path("roundtrip.ckpt");
    save_checkpoint(path, model, &corpus.vocab, &trainer, nlohmann::json{{"note", "x"}});
    const Checkpoint ckpt = read_checkpoint(path);
    auto restored = restore_model(ckpt);
    EXPECT_EQ(snapshot(*restored), snapshot(model));
    EXPECT_EQ(restored->config(), cfg);
    ASSERT_TRUE(ckpt.vocab.has_value());
    EXPECT_EQ(*ckpt.vocab, corpus.vocab);
    EXPECT_EQ(ckpt.extra["note"], "x");
    EXPECT_EQ(*ckpt.trainer_config, trainer.config());

    Trainer resumed(*restored, *ckpt.trainer_config, 0);
    restore_trainer(resumed, ckpt);
    EXPECT_EQ(resumed.optimizer().steps(), trainer.optimizer().steps());
    for (const auto& [name, m] : trainer.optimizer().moments()) {
        EXPECT_EQ(resumed.optimizer().moments().at(name).m, m.m);
        EXPECT_EQ(resumed.optimizer().moments().at(name).v, m.v);
    }
    EXPECT_EQ(resumed.position().cursor.position, trainer.position().cursor.position);
    EXPECT_EQ(resumed.rng().serialize(), trainer.rng().serialize());
    std::filesystem::remove(path);
}

TEST(Checkpoint, ResumeMidEpochReproducesUninterruptedRun) {
    const Corpus corpus = tokenize(fixture_prefix(1500), Granularity::character);
    const BatchStream stream = batchify(corpus.tokens, 3);
    const ModelConfig cfg = char_model(corpus.vocab.size());

    LanguageModel reference(cfg, 19);
    Trainer straight(reference, small_trainer(), 20);
    straight.train_epoch(stream);
    const EpochStats expected = straight.train_epoch(stream);

    LanguageModel interrupted(cfg, 19);
    Trainer first(interrupted, small_trainer(), 20);
    first.train_epoch(stream);
    for (int i = 0; i < 5; ++i) ASSERT_TRUE(first.train_window(stream));
    const std::string path = temp_path("resume.ckpt");
    save_checkpoint(path, interrupted, &corpus.vocab, &first);

    const Checkpoint ckpt = read_checkpoint(path);
    auto model = restore_model(ckpt);
    Trainer second(*model, *ckpt.trainer_config, 999);
    restore_trainer(second, ckpt);
    const EpochStats resumed = second.train_epoch(stream);
    EXPECT_EQ(resumed.window_losses, expected.window_losses);
    EXPECT_NEAR(resumed.mean_nats, expected.mean_nats, 1e-12);
    EXPECT_EQ(snapshot(*model), snapshot(reference));
    std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptMagicAndTruncationAreFormatErrors) {
    LanguageModel model(char_model(6), 21);
    const std::string path = temp_path("corrupt.ckpt");
    save_checkpoint(path, model, nullptr, nullptr);
    std::string bytes = read_file(path);
    {
        std::string bad = bytes;
        bad[0] = 'X';
        std::ofstream(path, std::ios::binary) << bad;
        EXPECT_THROW(read_checkpoint(path), FormatError);
    }
    {
        std::string bad = bytes;
        bad[4] = 9;
        std::ofstream(path, std::ios::binary) << bad;
        EXPECT_THROW(read_checkpoint(path), FormatError);
    }
    {
        std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 5);
        EXPECT_THROW(read_checkpoint(path), FormatError);
    }
    std::ofstream(path, std::ios::binary) << bytes;
    EXPECT_NO_THROW(read_checkpoint(path));
    const Checkpoint ckpt = read_checkpoint(path);
    LanguageModel other(char_model(7), 22);
    Trainer trainer(other, small_trainer(), 1);
    EXPECT_THROW(restore_trainer(trainer, ckpt), CompatibilityError);
    std::filesystem::remove(path);
}

TEST(Config, JsonRoundTrip) {
    ModelConfig cfg = char_model(51, CellType::qrnn);
    cfg.cutoffs = {10, 51};
    EXPECT_EQ(nlohmann::json(cfg).get<ModelConfig>(), cfg);
    TrainerConfig tc = small_trainer();
    tc.schedule.reductions = {25, 35};
    EXPECT_EQ(nlohmann::json(tc).get<TrainerConfig>(), tc);
    const Corpus words = tokenize("a b\nc a\n", Granularity::word);
    EXPECT_EQ(vocabulary_from_json(vocabulary_to_json(words.vocab)), words.vocab);
    EXPECT_THROW(nlohmann::json({{"cell", "gru"}}).get<ModelConfig>(), FormatError);
}

TEST(Checkpoint, ResumeAtEpochBoundary) {
    const Corpus corpus = tokenize(fixture_prefix(1200), Granularity::character);
    const BatchStream stream = batchify(corpus.tokens, 3);
    const ModelConfig cfg = char_model(corpus.vocab.size(), CellType::qrnn);
    LanguageModel reference(cfg, 23);
    Trainer straight(reference, small_trainer(), 24);
    straight.train_epoch(stream);
    const EpochStats expected = straight.train_epoch(stream);

    LanguageModel interrupted(cfg, 23);
    Trainer first(interrupted, small_trainer(), 24);
    first.train_epoch(stream);
    const std::string path = temp_path("boundary.ckpt");
    save_checkpoint(path, interrupted, &corpus.vocab, &first);
    const Checkpoint ckpt = read_checkpoint(path);
    auto model = restore_model(ckpt);
    Trainer second(*model, *ckpt.trainer_config, 0);
    restore_trainer(second, ckpt);
    EXPECT_EQ(second.position().epoch, 2u);
    EXPECT_EQ(second.train_epoch(stream).window_losses, expected.window_losses);
    EXPECT_EQ(snapshot(*model), snapshot(reference));
    std::filesystem::remove(path);
}
