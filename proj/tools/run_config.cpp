#include "run_config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "mslm/checkpoint.hpp"
#include "mslm/error.hpp"

namespace mslm::cli {

using nlohmann::json;

namespace {

template <typename T>
void optional_field(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("config field '") + key + "': " + e.what());
    }
}

const std::string kFixtures = MSLM_FIXTURE_DIR;

RunConfig make_preset(const std::string& name, Granularity g, CellType cell, std::size_t layers, std::size_t hidden,
                       std::size_t emb, DropoutRates dropout, double weight_decay, std::size_t bptt,
                       std::size_t batch, double lr, std::size_t epochs, std::vector<std::size_t> reductions) {
    RunConfig r;
    r.name = name;
    r.data.granularity = g;
    r.model.cell = cell;
    r.model.layers = layers;
    r.model.hidden_size = hidden;
    r.model.embedding_size = emb;
    r.model.dropout = dropout;
    r.trainer.schedule = {lr, epochs, std::move(reductions), 10.0};
    r.trainer.reg.weight_decay = weight_decay;
    r.trainer.window.base_bptt = bptt;
    r.batch = batch;
    return r;
}

}  // namespace

void to_json(json& j, const DataConfig& d) {
    j = json{{"train", d.train},
             {"valid", d.valid},
             {"test", d.test},
             {"limit_bytes", d.limit_bytes},
             {"split", d.split},
             {"granularity", to_string(d.granularity)},
             {"min_count", d.min_count},
             {"closed_vocab", d.closed_vocab}};
}

void from_json(const json& j, DataConfig& d) {
    optional_field(j, "train", d.train);
    optional_field(j, "valid", d.valid);
    optional_field(j, "test", d.test);
    optional_field(j, "limit_bytes", d.limit_bytes);
    optional_field(j, "split", d.split);
    if (j.contains("granularity")) {
        std::string g;
        optional_field(j, "granularity", g);
        try {
            d.granularity = parse_granularity(g);
        } catch (const Error& e) {
            throw FormatError(e.what());
        }
    }
    optional_field(j, "min_count", d.min_count);
    optional_field(j, "closed_vocab", d.closed_vocab);
}

void to_json(json& j, const RunConfig& r) {
    j = json{{"name", r.name},         {"data", r.data},
             {"model", r.model},       {"trainer", r.trainer},
             {"batch", r.batch},       {"eval_batch", r.eval_batch},
             {"eval_bptt", r.eval_bptt}, {"seed", r.seed},
             {"output_dir", r.output_dir}};
}

void from_json(const json& j, RunConfig& r) {
    if (!j.is_object()) throw FormatError("run configuration must be a JSON object");
    optional_field(j, "name", r.name);
    optional_field(j, "data", r.data);
    optional_field(j, "model", r.model);
    optional_field(j, "trainer", r.trainer);
    optional_field(j, "batch", r.batch);
    optional_field(j, "eval_batch", r.eval_batch);
    optional_field(j, "eval_bptt", r.eval_bptt);
    optional_field(j, "seed", r.seed);
    optional_field(j, "output_dir", r.output_dir);
}

std::vector<std::string> preset_names() {
    return {"ptb-char", "enwik8", "wt103", "fixture-char", "fixture-word", "fixture-bytes"};
}

RunConfig preset(const std::string& name) {
    if (name == "ptb-char") {
        return make_preset(name, Granularity::character, CellType::lstm, 3, 1000, 128, {0.0, 0.25, 0.1, 0.1, 0.5},
                            1.2e-6, 150, 128, 0.002, 500, {300, 400});
    }
    if (name == "enwik8") {
        RunConfig r = make_preset(name, Granularity::character, CellType::lstm, 3, 1840, 400,
                                   {0.0, 0.01, 0.01, 0.4, 0.2}, 1.2e-6, 200, 128, 0.001, 50, {25, 35});
        r.data.split = {0.9, 0.05, 0.05};
        return r;
    }
    if (name == "wt103") {
        RunConfig r = make_preset(name, Granularity::word, CellType::qrnn, 4, 2500, 400, {0.0, 0.1, 0.1, 0.1, 0.0},
                                   0.0, 140, 60, 0.001, 14, {12});
        r.model.cutoffs = {20000, 60000};
        r.data.min_count = 3;
        return r;
    }
    if (name == "fixture-char") {
        RunConfig r = make_preset(name, Granularity::character, CellType::lstm, 1, 128, 128, {}, 0.0, 50, 16, 1e-2,
                                   50, {});
        r.data.train = kFixtures + "/char_small.txt";
        r.data.limit_bytes = 10000;
        return r;
    }
    if (name == "fixture-word") {
        RunConfig r = make_preset(name, Granularity::word, CellType::qrnn, 2, 64, 32, {0.0, 0.1, 0.1, 0.1, 0.1}, 0.0,
                                   35, 16, 3e-3, 3, {});
        r.data.train = kFixtures + "/word_small.txt";
        r.model.cutoffs = {100, 400};
        return r;
    }
    if (name == "fixture-bytes") {
        RunConfig r = make_preset(name, Granularity::character, CellType::lstm, 2, 64, 32, {0.0, 0.1, 0.1, 0.1, 0.2},
                                   0.0, 100, 32, 3e-3, 2, {});
        r.data.train = kFixtures + "/bytes_small.bin";
        r.data.limit_bytes = 200000;
        return r;
    }
    std::string known;
    for (const auto& n : preset_names()) known += " " + n;
    throw UsageError("unknown preset '" + name + "'; available:" + known);
}

RunConfig apply_overrides(const RunConfig& base, const json& patch) {
    if (!patch.is_object()) throw UsageError("configuration overrides must be a JSON object");
    json merged = base;
    merged.merge_patch(patch);
    try {
        return merged.get<RunConfig>();
    } catch (const FormatError& e) {
        throw UsageError(e.what());
    }
}

json read_config_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError("config '" + path + "' is not valid JSON: " + e.what());
    }
}

RunConfig load_run_config(const std::string& path) {
    const json j = read_config_json(path);
    try {
        return j.get<RunConfig>();
    } catch (const FormatError& e) {
        throw UsageError("config '" + path + "': " + e.what());
    }
}

void save_run_config(const std::string& path, const RunConfig& config) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write '" + path + "'");
    out << json(config).dump(2) << '\n';
}

ModelConfig resolve_model(const RunConfig& config, std::size_t vocab_size) {
    ModelConfig m = config.model;
    m.vocab_size = vocab_size;
    std::vector<std::size_t> cutoffs;
    for (std::size_t c : config.model.cutoffs) {
        if (c > 0 && c < vocab_size) cutoffs.push_back(c);
    }
    if (!cutoffs.empty()) cutoffs.push_back(vocab_size);
    m.cutoffs = std::move(cutoffs);
    return m;
}

std::string default_output_root() {
    const char* env = std::getenv("MSLM_OUTPUT_ROOT");
    return env && *env ? std::string(env) : std::string("runs");
}

std::string run_directory(const RunConfig& config) {
    if (!config.output_dir.empty()) return config.output_dir;
    const std::string name = config.name.empty() ? "run" : config.name;
    return (std::filesystem::path(default_output_root()) / (name + "-" + std::to_string(config.seed))).string();
}

}  // namespace mslm::cli
