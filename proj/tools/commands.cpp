#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include <CLI11.hpp>

#include "mslm/checkpoint.hpp"
#include "mslm/error.hpp"
#include "mslm/hpo.hpp"
#include "mslm/model.hpp"
#include "mslm/trainer.hpp"

namespace mslm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const DivergenceError*>(&e)) return kDivergence;
    if (dynamic_cast<const CompatibilityError*>(&e)) return kCompatibility;
    if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const NamingError*>(&e) ||
        dynamic_cast<const DomainError*>(&e)) {
        return kUsage;
    }
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const IngestionError*>(&e) ||
        dynamic_cast<const VocabularyError*>(&e) || dynamic_cast<const BoundsError*>(&e) ||
        dynamic_cast<const FormatError*>(&e)) {
        return kData;
    }
    return kFailure;
}

// ---------------------------------------------------------------------------
// Data

namespace {

std::string read_limited(const std::string& path, std::size_t limit) {
    std::string text = read_file(path);
    if (limit > 0 && text.size() > limit) text.resize(limit);
    return text;
}

VocabOptions vocab_options(const DataConfig& d, bool separate_splits) {
    VocabOptions o;
    o.min_count = d.min_count;
    if (!d.closed_vocab.empty()) o.closed = read_closed_vocabulary(d.closed_vocab);
    o.reserve_unk = separate_splits && d.granularity == Granularity::word;
    return o;
}

Splits carve(const std::vector<TokenId>& tokens, const DataConfig& d) {
    return split(tokens, split_by_fraction(tokens.size(), d.split[0], d.split[1], d.split[2]));
}

}  // namespace

LoadedData load_data(const DataConfig& d) {
    if (d.train.empty()) throw UsageError("no training data: set data.train or pass --train");
    LoadedData out;
    const bool separate = !d.valid.empty();
    Corpus corpus = tokenize(read_limited(d.train, d.limit_bytes), d.granularity, vocab_options(d, separate));
    out.vocab = std::move(corpus.vocab);
    if (separate) {
        out.train = std::move(corpus.tokens);
        out.valid = encode(read_limited(d.valid, d.limit_bytes), out.vocab);
        if (!d.test.empty()) out.test = encode(read_limited(d.test, d.limit_bytes), out.vocab);
    } else {
        Splits s = carve(corpus.tokens, d);
        out.train = std::move(s.train);
        out.valid = std::move(s.valid);
        out.test = std::move(s.test);
    }
    return out;
}

LoadedData encode_data(const DataConfig& d, const Vocabulary& vocab) {
    if (d.train.empty()) throw UsageError("the checkpoint's run has no data paths; pass --data");
    if (d.granularity != vocab.granularity()) {
        throw CompatibilityError("data is " + to_string(d.granularity) + "-level but the checkpoint vocabulary is " +
                                 to_string(vocab.granularity()) + "-level");
    }
    LoadedData out;
    out.vocab = vocab;
    try {
        if (!d.valid.empty()) {
            out.train = encode(read_limited(d.train, d.limit_bytes), vocab);
            out.valid = encode(read_limited(d.valid, d.limit_bytes), vocab);
            if (!d.test.empty()) out.test = encode(read_limited(d.test, d.limit_bytes), vocab);
        } else {
            Splits s = carve(encode(read_limited(d.train, d.limit_bytes), vocab), d);
            out.train = std::move(s.train);
            out.valid = std::move(s.valid);
            out.test = std::move(s.test);
        }
    } catch (const DataError& e) {
        throw CompatibilityError(std::string("data does not fit the checkpoint vocabulary: ") + e.what());
    } catch (const VocabularyError& e) {
        throw CompatibilityError(std::string("data does not fit the checkpoint vocabulary: ") + e.what());
    }
    return out;
}

std::vector<BenchConfig> default_bench_grid() {
    auto shape = [](std::size_t batch, std::size_t seq, std::size_t hidden, std::size_t layers) {
        BenchConfig c;
        c.batch = batch;
        c.seq = seq;
        c.hidden = hidden;
        c.layers = layers;
        return c;
    };
    // The last shape is the large word-level model with its width cut tenfold.
    return {shape(32, 140, 512, 2), shape(32, 1, 512, 2), shape(60, 140, 250, 4)};
}

std::vector<std::string> nearest_tokens(const Vocabulary& vocab, const std::string& query, std::size_t n) {
    auto distance = [](const std::string& a, const std::string& b) {
        std::vector<std::size_t> row(b.size() + 1);
        for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
        for (std::size_t i = 1; i <= a.size(); ++i) {
            std::size_t diag = row[0];
            row[0] = i;
            for (std::size_t j = 1; j <= b.size(); ++j) {
                const std::size_t up = row[j];
                row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
                diag = up;
            }
        }
        return row[b.size()];
    };
    std::vector<std::pair<std::size_t, std::size_t>> scored;  // (distance, id)
    for (std::size_t id = 0; id < vocab.size(); ++id) scored.emplace_back(distance(query, vocab.tokens()[id]), id);
    const std::size_t k = std::min(n, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(vocab.tokens()[scored[i].second]);
    return out;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

std::string format_metric(double v) {
    std::ostringstream s;
    s << std::setprecision(6) << std::fixed << v;
    return s.str();
}

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IngestionError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::ofstream open_output(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
    std::ofstream out(path, std::ios::out | mode);
    if (!out) throw IngestionError("cannot write '" + path.string() + "'");
    return out;
}

double headline(const Metrics& m, Granularity g) { return g == Granularity::character ? m.bpc : m.perplexity; }

struct TrainOptions {
    std::string preset;
    std::string config;
    bool fixture = false;
    bool resume = false;
    bool quiet = false;
    json patch = json::object();
};

int cmd_train(const TrainOptions& opts, std::ostream& out) {
    RunConfig cfg;
    if (opts.fixture && !opts.preset.empty() && opts.preset != "fixture-char") {
        throw UsageError("--fixture and --preset " + opts.preset + " conflict");
    }
    if (opts.fixture) {
        cfg = preset("fixture-char");
    } else if (!opts.preset.empty()) {
        cfg = preset(opts.preset);
    } else if (opts.config.empty()) {
        throw UsageError("train needs --preset, --config or --fixture");
    }
    if (!opts.config.empty()) cfg = apply_overrides(cfg, read_config_json(opts.config));
    cfg = apply_overrides(cfg, opts.patch);

    const fs::path dir = run_directory(cfg);
    const fs::path latest = dir / "latest.ckpt";
    if (fs::exists(latest) && !opts.resume) {
        throw UsageError("run directory '" + dir.string() + "' already holds a run; pass --resume or another --output");
    }
    if (opts.resume && !fs::exists(latest)) throw UsageError("nothing to resume in '" + dir.string() + "'");
    ensure_directory(dir);

    const LoadedData data = load_data(cfg.data);
    const ModelConfig model_cfg = resolve_model(cfg, data.vocab.size());
    validate(model_cfg);
    cfg.trainer.reg.validate();
    if (cfg.batch == 0 || cfg.eval_batch == 0) throw UsageError("batch sizes must be positive");
    const std::size_t eval_bptt = cfg.eval_bptt ? cfg.eval_bptt : cfg.trainer.window.base_bptt;
    const BatchStream train = batchify(data.train, cfg.batch);
    const BatchStream valid = batchify(data.valid, cfg.eval_batch);
    if (train.rows < 2) throw DataError("training split too small for batch size " + std::to_string(cfg.batch));
    if (valid.rows < 2) throw DataError("validation split too small for eval batch " + std::to_string(cfg.eval_batch));

    std::unique_ptr<LanguageModel> model;
    std::unique_ptr<Trainer> trainer;
    double best = std::numeric_limits<double>::infinity();
    if (opts.resume) {
        const Checkpoint ckpt = read_checkpoint(latest.string());
        if (!ckpt.vocab || !(*ckpt.vocab == data.vocab)) throw CompatibilityError("resumed run's vocabulary differs");
        if (ckpt.extra.contains("run")) {
            RunConfig saved = ckpt.extra["run"].get<RunConfig>();
            saved.trainer.schedule.epochs = cfg.trainer.schedule.epochs;  // extending a run is allowed
            if (!(saved == cfg)) throw CompatibilityError("resumed run's configuration differs from the saved one");
        }
        model = restore_model(ckpt);
        trainer = std::make_unique<Trainer>(*model, cfg.trainer, 0);
        restore_trainer(*trainer, ckpt);
        if (ckpt.extra.contains("best_valid_nats")) best = ckpt.extra["best_valid_nats"].get<double>();
        save_run_config((dir / "config.json").string(), cfg);
    } else {
        save_run_config((dir / "config.json").string(), cfg);
        open_output(dir / "seed.txt") << cfg.seed << '\n';
        {
            auto vocab_out = open_output(dir / "vocab.txt");
            data.vocab.dump(vocab_out);
        }
        open_output(dir / "log.csv") << "epoch,lr,train_nats,valid_nats,valid_bpc_or_ppl,seconds\n";
        model = std::make_unique<LanguageModel>(model_cfg, derive_seed(cfg.seed, 0));
        trainer = std::make_unique<Trainer>(*model, cfg.trainer, derive_seed(cfg.seed, 1));
    }

    const Granularity g = data.vocab.granularity();
    const char* unit = g == Granularity::character ? "bpc" : "ppl";
    if (!opts.quiet) {
        out << "run " << dir.string() << ": " << to_string(model_cfg.cell) << " " << model_cfg.layers << "x"
            << model_cfg.hidden_size << ", vocab " << data.vocab.size() << ", " << model->parameter_count()
            << " parameters, " << data.train.size() << " training tokens\n";
    }
    auto log = open_output(dir / "log.csv", std::ios::app);
    log << std::setprecision(17);
    while (trainer->position().epoch <= cfg.trainer.schedule.epochs) {
        const EpochStats stats = trainer->train_epoch(train);
        const EvalResult v = evaluate(*model, valid, eval_bptt);
        log << stats.epoch << ',' << stats.lr << ',' << stats.mean_nats << ',' << v.metrics.nats << ','
            << headline(v.metrics, g) << ',' << stats.seconds << '\n';
        log.flush();
        const bool improved = v.metrics.nats < best;
        if (improved) best = v.metrics.nats;
        json extra{{"run", cfg}, {"epoch", stats.epoch}, {"valid_nats", v.metrics.nats}, {"best_valid_nats", best}};
        if (improved) save_checkpoint((dir / "best.ckpt").string(), *model, &data.vocab, nullptr, extra);
        save_checkpoint(latest.string(), *model, &data.vocab, trainer.get(), extra);
        if (!opts.quiet) {
            out << "epoch " << stats.epoch << "  lr " << stats.lr << "  train " << format_metric(stats.mean_nats)
                << " nats  valid " << format_metric(v.metrics.nats) << " nats / " << format_metric(headline(v.metrics, g))
                << ' ' << unit << (improved ? "  *" : "") << "  (" << format_metric(stats.seconds) << " s)\n";
        }
    }
    json extra{{"run", cfg}, {"epoch", trainer->position().epoch - 1}, {"best_valid_nats", best}};
    save_checkpoint((dir / "final.ckpt").string(), *model, &data.vocab, trainer.get(), extra);
    if (!data.test.empty() && data.test.size() >= 2 * cfg.eval_batch) {
        const EvalResult t = evaluate(*model, batchify(data.test, cfg.eval_batch), eval_bptt);
        out << "test " << format_metric(t.metrics.nats) << " nats / " << format_metric(headline(t.metrics, g)) << ' '
            << unit << '\n';
    }
    return kOk;
}

struct CheckpointInput {
    std::string checkpoint;
    std::string split = "valid";
    std::string data;
    std::string granularity;
};

struct LoadedCheckpoint {
    std::unique_ptr<LanguageModel> model;
    Vocabulary vocab;
    std::vector<TokenId> tokens;
    std::optional<RunConfig> run;
};

LoadedCheckpoint load_for_scoring(const CheckpointInput& in) {
    const Checkpoint ckpt = read_checkpoint(in.checkpoint);
    if (!ckpt.vocab) throw CompatibilityError("checkpoint '" + in.checkpoint + "' carries no vocabulary");
    LoadedCheckpoint lc;
    lc.vocab = *ckpt.vocab;
    if (ckpt.extra.is_object() && ckpt.extra.contains("run")) {
        try {
            lc.run = ckpt.extra["run"].get<RunConfig>();
        } catch (const Error& e) {
            throw FormatError(std::string("checkpoint run configuration: ") + e.what());
        }
    }
    const Granularity declared = in.granularity.empty() ? lc.vocab.granularity() : parse_granularity(in.granularity);
    if (declared != lc.vocab.granularity()) {
        throw CompatibilityError("data declared " + to_string(declared) + "-level but the checkpoint is " +
                                 to_string(lc.vocab.granularity()) + "-level");
    }
    if (!in.data.empty()) {
        try {
            lc.tokens = encode(read_file(in.data), lc.vocab);
        } catch (const DataError& e) {
            throw CompatibilityError(std::string("data does not fit the checkpoint vocabulary: ") + e.what());
        } catch (const VocabularyError& e) {
            throw CompatibilityError(std::string("data does not fit the checkpoint vocabulary: ") + e.what());
        }
    } else {
        if (!lc.run) throw UsageError("checkpoint has no run configuration; pass --data");
        LoadedData d = encode_data(lc.run->data, lc.vocab);
        if (in.split == "train") {
            lc.tokens = std::move(d.train);
        } else if (in.split == "valid") {
            lc.tokens = std::move(d.valid);
        } else if (in.split == "test") {
            lc.tokens = std::move(d.test);
        } else {
            throw UsageError("unknown split '" + in.split + "' (train, valid or test)");
        }
    }
    if (lc.tokens.size() < 2) throw DataError("split '" + in.split + "' has fewer than two tokens");
    lc.model = restore_model(ckpt);
    return lc;
}

struct EvalOptions {
    CheckpointInput input;
    std::size_t batch = 0;
    std::size_t bptt = 0;
    std::string csv;
};

int cmd_eval(const EvalOptions& opts, std::ostream& out) {
    LoadedCheckpoint lc = load_for_scoring(opts.input);
    const std::size_t batch = opts.batch ? opts.batch : (lc.run ? lc.run->eval_batch : 1);
    std::size_t bptt = opts.bptt;
    if (bptt == 0 && lc.run) bptt = lc.run->eval_bptt ? lc.run->eval_bptt : lc.run->trainer.window.base_bptt;
    if (bptt == 0) bptt = 100;
    const BatchStream stream = batchify(lc.tokens, batch);
    if (stream.rows < 2) throw DataError("split too small for eval batch " + std::to_string(batch));
    const EvalResult r = evaluate(*lc.model, stream, bptt);
    const std::string label = opts.input.data.empty() ? opts.input.split : opts.input.data;
    out << "split " << label << "  tokens " << r.tokens << "  nats " << format_metric(r.metrics.nats);
    if (lc.vocab.granularity() == Granularity::character) {
        out << "  bpc " << format_metric(r.metrics.bpc) << '\n';
    } else {
        out << "  ppl " << format_metric(r.metrics.perplexity) << '\n';
    }
    const fs::path csv = opts.csv.empty()
                             ? fs::path(opts.input.checkpoint).parent_path() / ("eval_" + opts.input.split + ".csv")
                             : fs::path(opts.csv);
    auto f = open_output(csv);
    f << "checkpoint,split,tokens,nats,bpc,perplexity\n" << std::setprecision(17);
    f << opts.input.checkpoint << ',' << label << ',' << r.tokens << ',' << r.metrics.nats << ',' << r.metrics.bpc << ','
      << r.metrics.perplexity << '\n';
    return kOk;
}

struct AnalyzeOptions {
    CheckpointInput input;
    std::string analysis;
    std::string anchor = "The";
    std::size_t max_position = 10;
    std::size_t max_tokens = 0;
    std::size_t bptt = 200;
    std::string out_dir;
};

int cmd_analyze(const AnalyzeOptions& opts, std::ostream& out) {
    if (opts.analysis != "char-pos" && opts.analysis != "word-pos" && opts.analysis != "word-len") {
        throw UsageError("unknown analysis '" + opts.analysis + "' (char-pos, word-pos or word-len)");
    }
    LoadedCheckpoint lc = load_for_scoring(opts.input);
    const bool char_level = lc.vocab.granularity() == Granularity::character;
    if (opts.analysis == "word-pos" && char_level) throw UsageError("word-pos needs a word-level checkpoint");
    if (opts.analysis != "word-pos" && !char_level) throw UsageError(opts.analysis + " needs a character-level checkpoint");
    if (opts.analysis == "word-pos" && !lc.vocab.find(opts.anchor)) {
        std::string near;
        for (const auto& t : nearest_tokens(lc.vocab, opts.anchor)) near += (near.empty() ? "" : ", ") + t;
        throw UsageError("anchor '" + opts.anchor + "' is not in the vocabulary; nearest entries: " + near);
    }
    if (opts.max_tokens > 0 && lc.tokens.size() > opts.max_tokens) lc.tokens.resize(opts.max_tokens);
    const std::vector<double> probs = teacher_forced_probs(*lc.model, lc.tokens, opts.bptt);

    const fs::path dir = opts.out_dir.empty() ? fs::path(opts.input.checkpoint).parent_path() : fs::path(opts.out_dir);
    ensure_directory(dir);
    fs::path file;
    if (opts.analysis == "char-pos") {
        const PositionCurve c = char_position_curve(probs, lc.tokens, lc.vocab, opts.max_position);
        file = dir / "char_position.csv";
        auto f = open_output(file);
        write_position_csv(f, c);
        if (c.no_delimiter) out << "note: no whitespace in the split; all characters form one group\n";
    } else if (opts.analysis == "word-pos") {
        const PositionCurve c = word_position_curve(probs, lc.tokens, lc.vocab, opts.anchor, opts.max_position);
        file = dir / ("word_position_" + opts.anchor + ".csv");
        auto f = open_output(file);
        write_position_csv(f, c);
    } else {
        file = dir / "word_length.csv";
        auto f = open_output(file);
        write_word_length_csv(f, word_length_curve(probs, lc.tokens, lc.vocab));
    }
    out << "wrote " << file.string() << " (" << probs.size() << " scored tokens)\n";
    return kOk;
}

struct BenchOptions {
    std::vector<std::string> cells{"lstm", "qrnn"};
    std::optional<std::size_t> batch, seq, hidden, layers;
    std::size_t reps = 5;
    std::size_t warmup = 3;
    std::uint64_t seed = 1;
    std::string out_file;
};

int cmd_bench(const BenchOptions& opts, std::ostream& out) {
    std::vector<BenchConfig> grid;
    if (opts.batch || opts.seq || opts.hidden || opts.layers) {
        BenchConfig c;
        c.batch = opts.batch.value_or(c.batch);
        c.seq = opts.seq.value_or(c.seq);
        c.hidden = opts.hidden.value_or(c.hidden);
        c.layers = opts.layers.value_or(c.layers);
        grid.push_back(c);
    } else {
        grid = default_bench_grid();
    }
    std::vector<CellType> cells;
    for (const auto& name : opts.cells) cells.push_back(parse_cell_type(name));
    std::ostringstream csv;
    write_bench_header(csv);
    for (const auto& shape : grid) {
        for (CellType cell : cells) {
            BenchConfig c = shape;
            c.cell = cell;
            c.reps = opts.reps;
            c.warmup = opts.warmup;
            c.seed = opts.seed;
            write_bench_row(csv, throughput_bench(c));
        }
    }
    out << csv.str();
    if (!opts.out_file.empty()) open_output(opts.out_file) << csv.str();
    return kOk;
}

struct HpoOptions {
    std::size_t trials = 20;
    std::size_t workers = 1;
    std::uint64_t seed = 1;
    std::string scale = "desk";
    std::string data;
    std::size_t limit_bytes = 0;
    double valid_fraction = 0.2;
    std::string out_dir;
    bool resume = false;
    std::size_t trees = 200;
    std::size_t grid = 20;
    std::optional<std::size_t> stop_after;
};

int cmd_hpo(const HpoOptions& opts, std::ostream& out) {
    StudyConfig study;
    if (opts.scale == "desk") {
        study = desk_scale_study();
    } else if (opts.scale == "full") {
        study = full_scale_study();
    } else {
        throw UsageError("unknown --scale '" + opts.scale + "' (desk or full)");
    }
    study.trials = opts.trials;
    study.workers = opts.workers;
    study.seed = opts.seed;
    study.max_new_trials = opts.stop_after;
    if (!(opts.valid_fraction > 0.0 && opts.valid_fraction < 1.0)) throw UsageError("--valid-fraction must lie in (0, 1)");

    const std::string path = opts.data.empty() ? std::string(MSLM_FIXTURE_DIR) + "/char_small.txt" : opts.data;
    const std::size_t limit = opts.limit_bytes ? opts.limit_bytes : (opts.scale == "desk" ? 5000 : 0);
    const Corpus corpus = tokenize(read_limited(path, limit), Granularity::character);
    StudyData data;
    data.vocab_size = corpus.vocab.size();
    const auto cut = static_cast<std::size_t>(std::llround((1.0 - opts.valid_fraction) * static_cast<double>(corpus.tokens.size())));
    data.train.assign(corpus.tokens.begin(), corpus.tokens.begin() + static_cast<std::ptrdiff_t>(cut));
    data.valid.assign(corpus.tokens.begin() + static_cast<std::ptrdiff_t>(cut), corpus.tokens.end());

    const fs::path dir = opts.out_dir.empty() ? fs::path(default_output_root()) / ("hpo-" + std::to_string(opts.seed))
                                              : fs::path(opts.out_dir);
    const fs::path records_path = dir / "records.csv";
    if (fs::exists(records_path) && !opts.resume) {
        throw UsageError("'" + records_path.string() + "' exists; pass --resume to continue it");
    }
    ensure_directory(dir);
    open_output(dir / "study.json") << json{{"trials", study.trials},     {"seed", study.seed},
                                             {"scale", opts.scale},        {"data", path},
                                             {"limit_bytes", limit},       {"valid_fraction", opts.valid_fraction},
                                             {"trainer", study.trainer},   {"size_scale", study.size_scale},
                                             {"batch", study.batch},       {"eval_batch", study.eval_batch}}
                                              .dump(2)
                                       << '\n';

    const auto records = run_study(study, data, records_path.string());
    const auto ok = std::count_if(records.begin(), records.end(), [](const RunRecord& r) { return r.status == TrialStatus::ok; });
    out << "study: " << records.size() << " of " << study.trials << " trials recorded, " << ok << " ok\n";
    if (records.size() < study.trials) {
        out << "stopped early; rerun with --resume to finish\n";
        return kOk;
    }

    ForestConfig fc;
    fc.n_trees = opts.trees;
    Rng rng(derive_seed(opts.seed, 0xF0));
    const RegressionForest forest = fit_forest(records, fc, rng);
    const auto importance = feature_importance(forest);
    const auto& names = HyperParams::feature_names();
    {
        auto f = open_output(dir / "importance.csv");
        write_importance_csv(f, std::vector<std::string>(names.begin(), names.end()), importance);
    }
    for (std::size_t i = 0; i < names.size(); ++i) out << "  " << std::left << std::setw(12) << names[i] << ' ' << format_metric(importance[i]) << '\n';
    for (const auto& [x, y] : default_surface_pairs()) {
        const Surface s = joint_influence(records, x, y, opts.grid);
        const std::string stem = "surface_" + x + "_vs_" + y;
        auto points = open_output(dir / (stem + ".csv"));
        write_surface_points_csv(points, s);
        auto grid = open_output(dir / (stem + "_grid.csv"));
        write_surface_grid_csv(grid, s);
        if (s.degenerate) out << "note: " << stem << " is degenerate (a feature never varied)\n";
    }
    out << "wrote " << dir.string() << '\n';
    return kOk;
}

template <typename T>
void patch_if(const CLI::Option* opt, json& patch, const char* pointer, const T& value) {
    if (opt->count() > 0) patch[json::json_pointer(pointer)] = value;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Recurrent language models: train, evaluate, analyze, benchmark and study hyperparameters", "mslm"};
    app.require_subcommand(1);

    // train
    TrainOptions train_opts;
    auto* train = app.add_subcommand("train", "train a model and write a run directory");
    train->add_option("--preset", train_opts.preset, "named configuration")->check(CLI::IsMember(preset_names()));
    train->add_option("--config", train_opts.config, "JSON run configuration layered over the preset");
    train->add_flag("--fixture", train_opts.fixture, "train the bundled 10KB character corpus");
    train->add_flag("--resume", train_opts.resume, "continue the run in the output directory");
    train->add_flag("--quiet", train_opts.quiet, "no per-epoch output");
    std::string t_train, t_valid, t_test, t_gran, t_cell, t_out, t_closed;
    std::size_t t_limit = 0, t_min_count = 1, t_layers = 0, t_hidden = 0, t_emb = 0, t_bptt = 0, t_batch = 0,
                t_eval_batch = 0, t_eval_bptt = 0, t_epochs = 0;
    double t_de = 0, t_dh = 0, t_di = 0, t_do = 0, t_wd = 0, t_lr = 0, t_clip = 0, t_decay = 0, t_alpha = 0, t_beta = 0;
    std::vector<std::size_t> t_cutoffs, t_reductions;
    std::uint64_t t_seed = 0;
    bool t_fixed = false;
    struct Bound {
        CLI::Option* opt;
        std::function<void(json&)> apply;
    };
    std::vector<Bound> bound;
    auto bind = [&](const std::string& flag, auto& var, const char* pointer, const std::string& help) {
        CLI::Option* o = train->add_option(flag, var, help);
        bound.push_back({o, [o, &var, pointer](json& p) { patch_if(o, p, pointer, var); }});
    };
    bind("--train", t_train, "/data/train", "training text");
    bind("--valid", t_valid, "/data/valid", "validation text (default: carved from --train)");
    bind("--test", t_test, "/data/test", "test text");
    bind("--limit-bytes", t_limit, "/data/limit_bytes", "read at most this many bytes per file");
    bind("--granularity", t_gran, "/data/granularity", "character or word");
    bind("--min-count", t_min_count, "/data/min_count", "word mode: rarer words become <unk>");
    bind("--closed-vocab", t_closed, "/data/closed_vocab", "word list restricting the vocabulary");
    bind("--cell", t_cell, "/model/cell", "lstm or qrnn");
    bind("--layers", t_layers, "/model/layers", "recurrent layers");
    bind("--hidden", t_hidden, "/model/hidden_size", "hidden size");
    bind("--emb", t_emb, "/model/embedding_size", "embedding size");
    bind("--dropout-e", t_de, "/model/dropout/embedding", "embedding dropout");
    bind("--dropout-h", t_dh, "/model/dropout/hidden", "between-layer dropout");
    bind("--dropout-i", t_di, "/model/dropout/input", "input dropout");
    bind("--dropout-o", t_do, "/model/dropout/output", "output dropout");
    bind("--wdrop", t_wd, "/model/dropout/weight", "weight drop on recurrent weights");
    bind("--cutoffs", t_cutoffs, "/model/cutoffs", "adaptive softmax cluster boundaries");
    bind("--bptt", t_bptt, "/trainer/window/bptt", "base window length");
    bind("--batch", t_batch, "/batch", "training batch size");
    bind("--eval-batch", t_eval_batch, "/eval_batch", "evaluation batch size");
    bind("--eval-bptt", t_eval_bptt, "/eval_bptt", "evaluation window length");
    bind("--lr", t_lr, "/trainer/schedule/lr", "initial learning rate");
    bind("--epochs", t_epochs, "/trainer/schedule/epochs", "epochs");
    bind("--reductions", t_reductions, "/trainer/schedule/reductions", "epochs dividing the rate by 10");
    bind("--clip", t_clip, "/trainer/regularization/clip_norm", "gradient norm bound, 0 disables");
    bind("--weight-decay", t_decay, "/trainer/regularization/weight_decay", "L2 coefficient");
    bind("--alpha", t_alpha, "/trainer/regularization/ar_alpha", "activation regularization");
    bind("--beta", t_beta, "/trainer/regularization/tar_beta", "temporal activation regularization");
    bind("--seed", t_seed, "/seed", "master seed");
    bind("--output", t_out, "/output_dir", "run directory");
    auto* fixed = train->add_flag("--fixed-bptt", t_fixed, "disable randomized window lengths");

    // eval
    EvalOptions eval_opts;
    auto* eval = app.add_subcommand("eval", "score a split with a checkpoint");
    eval->add_option("--checkpoint", eval_opts.input.checkpoint, "checkpoint file")->required();
    eval->add_option("--split", eval_opts.input.split, "train, valid or test");
    eval->add_option("--data", eval_opts.input.data, "score this file instead of a configured split");
    eval->add_option("--granularity", eval_opts.input.granularity, "declared granularity of --data");
    eval->add_option("--batch", eval_opts.batch, "evaluation batch size");
    eval->add_option("--bptt", eval_opts.bptt, "window length");
    eval->add_option("--csv", eval_opts.csv, "metrics CSV path");

    // analyze
    AnalyzeOptions an_opts;
    auto* analyze = app.add_subcommand("analyze", "per-position probability curves");
    analyze->add_option("--checkpoint", an_opts.input.checkpoint, "checkpoint file")->required();
    analyze->add_option("--split", an_opts.input.split, "train, valid or test");
    analyze->add_option("--data", an_opts.input.data, "analyze this file instead of a configured split");
    analyze->add_option("--granularity", an_opts.input.granularity, "declared granularity of --data");
    analyze->add_option("--analysis", an_opts.analysis, "char-pos, word-pos or word-len")->required();
    analyze->add_option("--anchor", an_opts.anchor, "word-pos anchor token");
    analyze->add_option("--max-position", an_opts.max_position, "largest position kept, 0 keeps all");
    analyze->add_option("--max-tokens", an_opts.max_tokens, "score only this many leading tokens");
    analyze->add_option("--bptt", an_opts.bptt, "window length of the scoring pass");
    analyze->add_option("--out", an_opts.out_dir, "output directory");

    // bench
    BenchOptions bench_opts;
    std::size_t b_batch = 0, b_seq = 0, b_hidden = 0, b_layers = 0;
    auto* bench = app.add_subcommand("bench", "LSTM versus QRNN timing");
    bench->add_option("--cells", bench_opts.cells, "cells to time")->delimiter(',');
    auto* ob = bench->add_option("--batch", b_batch, "batch size");
    auto* os = bench->add_option("--seq", b_seq, "sequence length");
    auto* oh = bench->add_option("--hidden", b_hidden, "hidden size");
    auto* ol = bench->add_option("--layers", b_layers, "layers");
    bench->add_option("--reps", bench_opts.reps, "timed repetitions (median reported)");
    bench->add_option("--warmup", bench_opts.warmup, "discarded repetitions");
    bench->add_option("--seed", bench_opts.seed, "weight seed");
    bench->add_option("--out", bench_opts.out_file, "CSV path");

    // hpo
    HpoOptions hpo_opts;
    std::size_t h_stop = 0;
    auto* hpo = app.add_subcommand("hpo", "random hyperparameter study with forest importance");
    hpo->add_option("--trials", hpo_opts.trials, "number of trials");
    hpo->add_option("--workers", hpo_opts.workers, "parallel trials");
    hpo->add_option("--seed", hpo_opts.seed, "master seed");
    hpo->add_option("--scale", hpo_opts.scale, "desk or full");
    hpo->add_option("--data", hpo_opts.data, "character corpus (default: bundled fixture)");
    hpo->add_option("--limit-bytes", hpo_opts.limit_bytes, "bytes of the corpus used");
    hpo->add_option("--valid-fraction", hpo_opts.valid_fraction, "held-out share of the corpus");
    hpo->add_option("--out", hpo_opts.out_dir, "output directory");
    hpo->add_flag("--resume", hpo_opts.resume, "continue an interrupted study");
    hpo->add_option("--trees", hpo_opts.trees, "forest size");
    hpo->add_option("--grid", hpo_opts.grid, "surface grid points per axis");
    auto* stop = hpo->add_option("--stop-after", h_stop, "run at most this many new trials, then stop");

    std::vector<const char*> argv{"mslm"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
            return kOk;
        }
        err << "error: " << e.what() << '\n';
        return kUsage;
    }

    try {
        if (*train) {
            for (auto& b : bound) b.apply(train_opts.patch);
            if (fixed->count() > 0) train_opts.patch["trainer"]["window"]["randomize"] = !t_fixed;
            return cmd_train(train_opts, out);
        }
        if (*eval) return cmd_eval(eval_opts, out);
        if (*analyze) return cmd_analyze(an_opts, out);
        if (*bench) {
            if (ob->count()) bench_opts.batch = b_batch;
            if (os->count()) bench_opts.seq = b_seq;
            if (oh->count()) bench_opts.hidden = b_hidden;
            if (ol->count()) bench_opts.layers = b_layers;
            return cmd_bench(bench_opts, out);
        }
        if (*hpo) {
            if (stop->count()) hpo_opts.stop_after = h_stop;
            return cmd_hpo(hpo_opts, out);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const json::exception& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kUsage;
}

}  // namespace mslm::cli
