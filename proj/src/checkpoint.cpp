#include "mslm/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mslm/error.hpp"

namespace mslm {

using nlohmann::json;

namespace {

template <typename T>
T field(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("config field '") + key + "': " + e.what());
    }
}

template <typename T>
void optional_field(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = field<T>(j, key);
}

}  // namespace

void to_json(json& j, const DropoutRates& d) {
    j = json{{"embedding", d.embedding}, {"hidden", d.hidden}, {"input", d.input}, {"output", d.output}, {"weight", d.weight}};
}

void from_json(const json& j, DropoutRates& d) {
    optional_field(j, "embedding", d.embedding);
    optional_field(j, "hidden", d.hidden);
    optional_field(j, "input", d.input);
    optional_field(j, "output", d.output);
    optional_field(j, "weight", d.weight);
}

void to_json(json& j, const ModelConfig& c) {
    j = json{{"cell", to_string(c.cell)},
             {"vocab_size", c.vocab_size},
             {"layers", c.layers},
             {"hidden_size", c.hidden_size},
             {"embedding_size", c.embedding_size},
             {"dropout", c.dropout},
             {"cutoffs", c.cutoffs}};
}

void from_json(const json& j, ModelConfig& c) {
    if (j.contains("cell")) {
        try {
            c.cell = parse_cell_type(field<std::string>(j, "cell"));
        } catch (const UsageError& e) {
            throw FormatError(e.what());
        }
    }
    optional_field(j, "vocab_size", c.vocab_size);
    optional_field(j, "layers", c.layers);
    optional_field(j, "hidden_size", c.hidden_size);
    optional_field(j, "embedding_size", c.embedding_size);
    optional_field(j, "dropout", c.dropout);
    optional_field(j, "cutoffs", c.cutoffs);
}

void to_json(json& j, const Schedule& s) {
    j = json{{"lr", s.lr0}, {"epochs", s.epochs}, {"reductions", s.reductions}, {"factor", s.factor}};
}

void from_json(const json& j, Schedule& s) {
    optional_field(j, "lr", s.lr0);
    optional_field(j, "epochs", s.epochs);
    optional_field(j, "reductions", s.reductions);
    optional_field(j, "factor", s.factor);
}

void to_json(json& j, const RegConfig& r) {
    j = json{{"ar_alpha", r.ar_alpha}, {"tar_beta", r.tar_beta}, {"weight_decay", r.weight_decay}, {"clip_norm", r.clip_norm}};
}

void from_json(const json& j, RegConfig& r) {
    optional_field(j, "ar_alpha", r.ar_alpha);
    optional_field(j, "tar_beta", r.tar_beta);
    optional_field(j, "weight_decay", r.weight_decay);
    optional_field(j, "clip_norm", r.clip_norm);
}

void to_json(json& j, const WindowSchedule& w) {
    j = json{{"bptt", w.base_bptt},       {"randomize", w.randomize}, {"full_length_prob", w.full_length_prob},
             {"stddev", w.stddev},        {"min_length", w.min_length}, {"max_extra", w.max_extra}};
}

void from_json(const json& j, WindowSchedule& w) {
    optional_field(j, "bptt", w.base_bptt);
    optional_field(j, "randomize", w.randomize);
    optional_field(j, "full_length_prob", w.full_length_prob);
    optional_field(j, "stddev", w.stddev);
    optional_field(j, "min_length", w.min_length);
    optional_field(j, "max_extra", w.max_extra);
}

void to_json(json& j, const AdamConfig& a) {
    j = json{{"beta1", a.beta1}, {"beta2", a.beta2}, {"epsilon", a.epsilon}};
}

void from_json(const json& j, AdamConfig& a) {
    optional_field(j, "beta1", a.beta1);
    optional_field(j, "beta2", a.beta2);
    optional_field(j, "epsilon", a.epsilon);
}

void to_json(json& j, const TrainerConfig& t) {
    j = json{{"schedule", t.schedule}, {"regularization", t.reg}, {"window", t.window}, {"adam", t.adam}};
}

void from_json(const json& j, TrainerConfig& t) {
    optional_field(j, "schedule", t.schedule);
    optional_field(j, "regularization", t.reg);
    optional_field(j, "window", t.window);
    optional_field(j, "adam", t.adam);
}

json vocabulary_to_json(const Vocabulary& v) {
    json tokens = json::array();
    for (const auto& t : v.tokens()) {
        if (v.granularity() == Granularity::character) {
            tokens.push_back(static_cast<int>(static_cast<unsigned char>(t[0])));
        } else {
            tokens.push_back(t);
        }
    }
    return json{{"granularity", to_string(v.granularity())}, {"tokens", tokens}, {"frequencies", v.frequencies()}};
}

Vocabulary vocabulary_from_json(const json& j) {
    const Granularity g = parse_granularity(field<std::string>(j, "granularity"));
    std::vector<std::string> tokens;
    for (const auto& t : j.at("tokens")) {
        if (g == Granularity::character) {
            tokens.emplace_back(1, static_cast<char>(t.get<int>()));
        } else {
            tokens.push_back(t.get<std::string>());
        }
    }
    return Vocabulary(g, std::move(tokens), field<std::vector<std::uint64_t>>(j, "frequencies"));
}

namespace {

constexpr char kMagic[4] = {'M', 'S', 'L', 'M'};

class Writer {
public:
    explicit Writer(std::ofstream& out) : out_(out) {}
    template <typename T>
    void pod(T value) {
        out_.write(reinterpret_cast<const char*>(&value), sizeof value);
    }
    void bytes(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

private:
    std::ofstream& out_;
};

class Reader {
public:
    Reader(const std::string& data, std::string path) : data_(data), path_(std::move(path)) {}
    template <typename T>
    T pod() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, data_.data() + pos_, sizeof value);
        pos_ += sizeof value;
        return value;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw FormatError("checkpoint '" + path_ + "' is truncated");
    }
    const std::string& data_;
    std::string path_;
    std::size_t pos_ = 0;
};

std::string hex_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(x)));
    return buf;
}

double parse_hex_double(const std::string& s) { return std::bit_cast<double>(std::stoull(s, nullptr, 16)); }

}  // namespace

void save_checkpoint(const std::string& path, LanguageModel& model, const Vocabulary* vocab, const Trainer* trainer,
                     const json& extra) {
    static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");
    json header{{"model", model.config()}, {"extra", extra}};
    if (vocab) header["vocab"] = vocabulary_to_json(*vocab);

    std::map<std::string, const Tensor*> tensors;
    for (Parameter* p : model.parameters()) tensors[p->name] = &p->value;
    Tensor losses;
    if (trainer) {
        const auto& pos = trainer->position();
        header["trainer_config"] = trainer->config();
        header["trainer_state"] = json{{"epoch", pos.epoch},
                                       {"window", pos.window},
                                       {"cursor", pos.cursor.position},
                                       {"tokens", pos.tokens},
                                       {"nats_sum", hex_double(pos.nats_sum)},
                                       {"rng", trainer->rng().serialize()},
                                       {"adam_steps", trainer->optimizer().steps()},
                                       {"hidden_layers", trainer->hidden().size()}};
        for (const auto& [name, m] : trainer->optimizer().moments()) {
            tensors["adam.m." + name] = &m.m;
            tensors["adam.v." + name] = &m.v;
        }
        for (std::size_t i = 0; i < trainer->hidden().size(); ++i) {
            tensors["state.h." + std::to_string(i)] = &trainer->hidden()[i].h;
            tensors["state.c." + std::to_string(i)] = &trainer->hidden()[i].c;
        }
        if (!pos.window_losses.empty()) {
            losses = Tensor({pos.window_losses.size()}, pos.window_losses);
            tensors["trainer.window_losses"] = &losses;
        }
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IngestionError("cannot write checkpoint '" + tmp + "'");
        Writer w(out);
        const std::string text = header.dump();
        w.bytes(std::string(kMagic, 4));
        w.pod<std::uint32_t>(kCheckpointVersion);
        w.pod<std::uint64_t>(text.size());
        w.bytes(text);
        w.pod<std::uint64_t>(tensors.size());
        for (const auto& [name, t] : tensors) {
            w.pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
            w.bytes(name);
            w.pod<std::uint32_t>(static_cast<std::uint32_t>(t->rank()));
            for (std::size_t d : t->shape()) w.pod<std::uint64_t>(d);
            out.write(reinterpret_cast<const char*>(t->raw()), static_cast<std::streamsize>(t->size() * sizeof(double)));
        }
        if (!out) throw IngestionError("failed writing checkpoint '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::string& path) {
    const std::string data = read_file(path);
    Reader r(data, path);
    if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0) {
        throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
    }
    r.bytes(4);
    if (const auto version = r.pod<std::uint32_t>(); version != kCheckpointVersion) {
        throw FormatError("checkpoint '" + path + "' has version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
    }
    Checkpoint ckpt;
    json header;
    try {
        header = json::parse(r.bytes(r.pod<std::uint64_t>()));
    } catch (const json::exception& e) {
        throw FormatError("checkpoint '" + path + "' header: " + e.what());
    }
    ckpt.model = field<ModelConfig>(header, "model");
    ckpt.extra = header.value("extra", json());
    if (header.contains("vocab")) ckpt.vocab = vocabulary_from_json(header["vocab"]);
    if (header.contains("trainer_config")) ckpt.trainer_config = field<TrainerConfig>(header, "trainer_config");
    ckpt.trainer_state = header.value("trainer_state", json());

    const auto count = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.pod<std::uint32_t>());
        Shape shape(r.pod<std::uint32_t>());
        std::size_t size = 1;
        for (auto& d : shape) size *= d = r.pod<std::uint64_t>();
        const std::string raw = r.bytes(size * sizeof(double));
        std::vector<double> values(size);
        std::memcpy(values.data(), raw.data(), raw.size());
        ckpt.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (!r.done()) throw FormatError("checkpoint '" + path + "' has trailing bytes");
    return ckpt;
}

namespace {

const Tensor& stored(const Checkpoint& ckpt, const std::string& name, const Shape& shape) {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw CompatibilityError("checkpoint lacks tensor '" + name + "'");
    if (it->second.shape() != shape) {
        throw CompatibilityError("checkpoint tensor '" + name + "' has shape " + to_string(it->second.shape()) +
                                 ", model expects " + to_string(shape));
    }
    return it->second;
}

}  // namespace

std::unique_ptr<LanguageModel> restore_model(const Checkpoint& ckpt) {
    auto model = std::make_unique<LanguageModel>(ckpt.model, 0);
    for (Parameter* p : model->parameters()) p->value = stored(ckpt, p->name, p->value.shape());
    return model;
}

void restore_trainer(Trainer& trainer, const Checkpoint& ckpt) {
    if (ckpt.trainer_state.is_null()) throw CompatibilityError("checkpoint holds no trainer state");
    if (ckpt.model != trainer.model().config()) throw CompatibilityError("checkpoint model differs from the trainer's");
    const json& s = ckpt.trainer_state;
    Trainer::Position pos;
    pos.epoch = field<std::size_t>(s, "epoch");
    pos.window = field<std::size_t>(s, "window");
    pos.cursor.position = field<std::size_t>(s, "cursor");
    pos.tokens = field<std::size_t>(s, "tokens");
    pos.nats_sum = parse_hex_double(field<std::string>(s, "nats_sum"));
    const auto losses = ckpt.tensors.find("trainer.window_losses");
    if (losses != ckpt.tensors.end()) pos.window_losses.assign(losses->second.data().begin(), losses->second.data().end());

    std::map<std::string, Adam::Moments> moments;
    for (Parameter* p : trainer.model().parameters()) {
        if (ckpt.tensors.count("adam.m." + p->name)) {
            moments[p->name] = {stored(ckpt, "adam.m." + p->name, p->value.shape()),
                                stored(ckpt, "adam.v." + p->name, p->value.shape())};
        }
    }
    Adam adam(trainer.config().adam);
    adam.restore(field<std::uint64_t>(s, "adam_steps"), std::move(moments));

    RecurrentState hidden(field<std::size_t>(s, "hidden_layers"));
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        for (auto [slot, key] : {std::pair{&hidden[i].h, "state.h."}, std::pair{&hidden[i].c, "state.c."}}) {
            const auto it = ckpt.tensors.find(key + std::to_string(i));
            if (it == ckpt.tensors.end()) throw FormatError("checkpoint lacks recurrent state for layer " + std::to_string(i));
            *slot = it->second;
        }
    }
    trainer.restore(std::move(pos), Rng::deserialize(field<std::string>(s, "rng")), std::move(hidden), std::move(adam));
}

}  // namespace mslm
