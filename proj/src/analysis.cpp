#include "mslm/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <ostream>

#include "mslm/error.hpp"
#include "mslm/trainer.hpp"

namespace mslm {

std::vector<double> teacher_forced_probs(LanguageModel& model, const std::vector<TokenId>& tokens, std::size_t bptt) {
    if (tokens.size() < 2) throw ContractError("teacher_forced_probs: need at least two tokens");
    EvalResult r = evaluate(model, batchify(tokens, 1), bptt, true);
    for (double& lp : r.log_probs) lp = std::exp(lp);
    return std::move(r.log_probs);
}

namespace {

void check_lengths(std::span<const double> probs, std::span<const TokenId> tokens) {
    if (tokens.empty() || probs.size() + 1 != tokens.size()) {
        throw DimensionError("analysis: expected " + std::to_string(tokens.empty() ? 0 : tokens.size() - 1) +
                             " probabilities, got " + std::to_string(probs.size()));
    }
}

bool is_whitespace(const std::string& token) {
    return token.size() == 1 && (token[0] == ' ' || token[0] == '\n' || token[0] == '\t' || token[0] == '\r');
}

bool is_letter(const std::string& token) {
    return token.size() == 1 && ((token[0] >= 'a' && token[0] <= 'z') || (token[0] >= 'A' && token[0] <= 'Z'));
}

void require_char(const Vocabulary& vocab, const char* what) {
    if (vocab.granularity() != Granularity::character) {
        throw UsageError(std::string(what) + " needs a character-level vocabulary");
    }
}

struct Accumulator {
    double sum = 0.0;
    std::size_t count = 0;
    void add(double p) {
        sum += p;
        ++count;
    }
};

PositionCurve to_curve(const std::map<std::size_t, Accumulator>& groups) {
    PositionCurve curve;
    for (const auto& [pos, acc] : groups) {
        if (acc.count > 0) curve.points.push_back({pos, acc.sum / static_cast<double>(acc.count), acc.count});
    }
    return curve;
}

}  // namespace

PositionCurve char_position_curve(std::span<const double> probs, std::span<const TokenId> tokens,
                                  const Vocabulary& vocab, std::size_t max_position) {
    check_lengths(probs, tokens);
    require_char(vocab, "char position curve");
    std::vector<bool> space(tokens.size());
    bool any_space = false;
    for (std::size_t j = 0; j < tokens.size(); ++j) any_space |= space[j] = is_whitespace(vocab.token(tokens[j]));
    if (!any_space) {
        Accumulator all;
        for (double p : probs) all.add(p);
        PositionCurve curve = to_curve({{1, all}});
        curve.no_delimiter = true;
        return curve;
    }
    std::map<std::size_t, Accumulator> groups;
    std::ptrdiff_t last_space = -1;
    if (space[0]) last_space = 0;
    for (std::size_t j = 1; j < tokens.size(); ++j) {
        const auto position = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(j) - last_space);
        if (max_position == 0 || position <= max_position) groups[position].add(probs[j - 1]);
        if (space[j]) last_space = static_cast<std::ptrdiff_t>(j);
    }
    return to_curve(groups);
}

PositionCurve word_position_curve(std::span<const double> probs, std::span<const TokenId> tokens,
                                  const Vocabulary& vocab, std::string_view anchor, std::size_t max_position) {
    check_lengths(probs, tokens);
    const auto anchor_id = vocab.find(anchor);
    if (!anchor_id) throw VocabularyError("anchor '" + std::string(anchor) + "' is not in the vocabulary");
    std::map<std::size_t, Accumulator> groups;
    std::optional<std::size_t> last_anchor;
    for (std::size_t j = 0; j < tokens.size(); ++j) {
        if (j > 0 && last_anchor) {
            const std::size_t position = j - *last_anchor;
            if (max_position == 0 || position <= max_position) groups[position].add(probs[j - 1]);
        }
        if (tokens[j] == *anchor_id) last_anchor = j;
    }
    return to_curve(groups);
}

std::vector<WordLengthPoint> word_length_curve(std::span<const double> probs, std::span<const TokenId> tokens,
                                               const Vocabulary& vocab) {
    check_lengths(probs, tokens);
    require_char(vocab, "word length curve");
    std::map<std::pair<std::size_t, std::size_t>, Accumulator> groups;
    std::size_t j = 0;
    while (j < tokens.size()) {
        if (!is_whitespace(vocab.token(tokens[j]))) {
            ++j;
            continue;
        }
        std::size_t end = j + 1;
        while (end < tokens.size() && is_letter(vocab.token(tokens[end]))) ++end;
        const std::size_t length = end - j - 1;
        if (length >= 2 && end < tokens.size() && is_whitespace(vocab.token(tokens[end]))) {
            for (std::size_t k = 1; k <= length + 1; ++k) groups[{length, k}].add(probs[j + k - 1]);
        }
        j = end;  // a terminating whitespace also opens the next word
    }
    std::vector<WordLengthPoint> out;
    for (const auto& [key, acc] : groups) {
        out.push_back({key.first, key.second, acc.sum / static_cast<double>(acc.count), acc.count});
    }
    return out;
}

void write_position_csv(std::ostream& out, const PositionCurve& curve) {
    out << "position,mean_prob,count\n";
    out.precision(17);
    for (const auto& p : curve.points) out << p.position << ',' << p.mean_prob << ',' << p.count << '\n';
}

void write_word_length_csv(std::ostream& out, const std::vector<WordLengthPoint>& curve) {
    out << "word_len,position,mean_prob,count\n";
    out.precision(17);
    for (const auto& p : curve) out << p.word_length << ',' << p.position << ',' << p.mean_prob << ',' << p.count << '\n';
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

BenchResult throughput_bench(const BenchConfig& config) {
    if (config.reps == 0 || config.layers == 0 || config.batch == 0 || config.seq == 0 || config.hidden == 0) {
        throw DomainError("bench: every dimension and the repetition count must be positive");
    }
    Rng rng(config.seed);
    std::vector<std::unique_ptr<RecurrentLayer>> layers;
    for (std::size_t i = 0; i < config.layers; ++i) {
        const std::string prefix = "bench" + std::to_string(i);
        if (config.cell == CellType::lstm) {
            layers.push_back(std::make_unique<LSTMLayer>(prefix, config.hidden, config.hidden, rng));
        } else {
            layers.push_back(std::make_unique<QRNNLayer>(prefix, config.hidden, config.hidden, qrnn_window(i), rng));
        }
    }
    const Tensor input = uniform_tensor({config.seq * config.batch, config.hidden}, -1.0, 1.0, rng);
    BenchResult result;
    result.config = config;

    auto run = [&](bool with_backward) {
        const auto start = std::chrono::steady_clock::now();
        Tape tape;
        Var x = tape.constant(input);
        for (auto& layer : layers) x = layer->forward(tape, x, config.batch, layer->zero_state(config.batch), 0.0, nullptr).hidden;
        if (with_backward) backward(tape, ops::sum(x));
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        if (!with_backward) {
            result.output_shape = x.shape();
            result.finite = result.finite && x.value().all_finite();
        }
        return ms;
    };
    auto timed = [&](bool with_backward) {
        for (std::size_t i = 0; i < config.warmup; ++i) run(with_backward);
        std::vector<double> times;
        for (std::size_t i = 0; i < config.reps; ++i) times.push_back(run(with_backward));
        return median(times);
    };
    result.fwd_ms = timed(false);
    result.fwdbwd_ms = timed(true);
    for (auto& layer : layers) zero_grads(layer->parameters());
    return result;
}

void write_bench_header(std::ostream& out) { out << "cell,layers,hidden,batch,seq,fwd_ms,fwdbwd_ms\n"; }

void write_bench_row(std::ostream& out, const BenchResult& r) {
    const auto& c = r.config;
    out << to_string(c.cell) << ',' << c.layers << ',' << c.hidden << ',' << c.batch << ',' << c.seq << ','
        << r.fwd_ms << ',' << r.fwdbwd_ms << '\n';
}

}  // namespace mslm
