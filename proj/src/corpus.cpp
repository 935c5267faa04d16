#include "mslm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mslm/error.hpp"

namespace mslm {

std::string to_string(Granularity g) { return g == Granularity::character ? "char" : "word"; }

Granularity parse_granularity(std::string_view name) {
    if (name == "char" || name == "character" || name == "byte") return Granularity::character;
    if (name == "word") return Granularity::word;
    throw UsageError("unknown granularity '" + std::string(name) + "' (expected char or word)");
}

Vocabulary::Vocabulary(Granularity granularity, std::vector<std::string> tokens, std::vector<std::uint64_t> frequencies)
    : granularity_(granularity), tokens_(std::move(tokens)), frequencies_(std::move(frequencies)) {
    if (tokens_.size() != frequencies_.size()) throw DimensionError("vocabulary: token and frequency counts differ");
    if (!std::is_sorted(frequencies_.begin(), frequencies_.end(), std::greater<>())) {
        throw OrderingError("vocabulary: ids must follow non-increasing frequency");
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (granularity_ == Granularity::character && tokens_[i].size() != 1) {
            throw VocabularyError("vocabulary: char tokens must be single bytes");
        }
        if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
            throw VocabularyError("vocabulary: duplicate token '" + tokens_[i] + "'");
        }
    }
}

const std::string& Vocabulary::token(TokenId id) const {
    if (id >= tokens_.size()) throw VocabularyError("vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

TokenId Vocabulary::id_of(std::string_view token) const {
    if (auto id = find(token)) return *id;
    if (granularity_ == Granularity::character) {
        throw DataError("byte " + std::to_string(static_cast<unsigned char>(token.empty() ? 0 : token[0])) +
                        " does not occur in the training vocabulary");
    }
    if (auto unk = unk_id()) return *unk;
    throw VocabularyError("word '" + std::string(token) + "' is out of vocabulary and no <unk> id exists");
}

void Vocabulary::dump(std::ostream& out) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        for (unsigned char ch : tokens_[i]) {
            if (ch < 0x20 || ch == 0x7f || ch == '\\') {
                char buf[5];
                std::snprintf(buf, sizeof buf, "\\x%02X", ch);
                out << buf;
            } else {
                out << static_cast<char>(ch);
            }
        }
        out << '\t' << frequencies_[i] << '\n';
    }
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f'; }

template <typename Fn>
void for_each_word(std::string_view raw, Fn&& fn) {
    std::size_t i = 0;
    while (i < raw.size()) {
        const std::size_t eol = std::min(raw.find('\n', i), raw.size());
        std::size_t j = i;
        while (j < eol) {
            while (j < eol && is_space(raw[j])) ++j;
            const std::size_t begin = j;
            while (j < eol && !is_space(raw[j])) ++j;
            if (j > begin) fn(raw.substr(begin, j - begin));
        }
        fn(kEosToken);
        i = eol + 1;
    }
}

struct Counted {
    std::string token;
    std::uint64_t count = 0;
    std::size_t first = 0;
};

Vocabulary rank(Granularity granularity, std::vector<Counted> entries) {
    std::stable_sort(entries.begin(), entries.end(), [](const Counted& a, const Counted& b) {
        return a.count != b.count ? a.count > b.count : a.first < b.first;
    });
    std::vector<std::string> tokens;
    std::vector<std::uint64_t> freq;
    for (auto& e : entries) {
        tokens.push_back(std::move(e.token));
        freq.push_back(e.count);
    }
    return Vocabulary(granularity, std::move(tokens), std::move(freq));
}

Corpus tokenize_chars(std::string_view raw) {
    std::array<std::uint64_t, 256> counts{};
    std::array<std::size_t, 256> first{};
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto b = static_cast<unsigned char>(raw[i]);
        if (counts[b]++ == 0) first[b] = i;
    }
    std::vector<Counted> entries;
    for (std::size_t b = 0; b < 256; ++b) {
        if (counts[b] > 0) entries.push_back({std::string(1, static_cast<char>(b)), counts[b], first[b]});
    }
    Corpus corpus;
    corpus.vocab = rank(Granularity::character, std::move(entries));
    corpus.tokens = encode(raw, corpus.vocab);
    return corpus;
}

Corpus tokenize_words(std::string_view raw, const VocabOptions& options) {
    std::unordered_map<std::string, std::size_t> slot;
    std::vector<Counted> entries;
    std::size_t position = 0;
    for_each_word(raw, [&](std::string_view w) {
        auto [it, inserted] = slot.emplace(std::string(w), entries.size());
        if (inserted) entries.push_back({std::string(w), 0, position});
        ++entries[it->second].count;
        ++position;
    });

    auto keep = [&](const Counted& e) {
        if (e.token == kEosToken) return true;
        if (e.token == kUnkToken) return false;  // literal <unk> merges into the pooled entry
        if (options.closed && !options.closed->count(e.token)) return false;
        return e.count >= options.min_count;
    };
    std::vector<Counted> kept;
    Counted unk{std::string(kUnkToken), 0, SIZE_MAX};
    for (auto& e : entries) {
        if (keep(e)) {
            kept.push_back(std::move(e));
        } else {
            unk.count += e.count;
            unk.first = std::min(unk.first, e.first);
        }
    }
    if (unk.count > 0 || options.reserve_unk) kept.push_back(std::move(unk));

    Corpus corpus;
    corpus.vocab = rank(Granularity::word, std::move(kept));
    corpus.tokens = encode(raw, corpus.vocab);
    return corpus;
}

}  // namespace

Corpus tokenize(std::string_view raw, Granularity granularity, const VocabOptions& options) {
    if (raw.empty()) throw IngestionError("tokenize: empty corpus");
    return granularity == Granularity::character ? tokenize_chars(raw) : tokenize_words(raw, options);
}

std::vector<TokenId> encode(std::string_view raw, const Vocabulary& vocab) {
    std::vector<TokenId> ids;
    if (vocab.granularity() == Granularity::character) {
        std::array<std::int64_t, 256> lut;
        lut.fill(-1);
        for (std::size_t i = 0; i < vocab.size(); ++i) lut[static_cast<unsigned char>(vocab.tokens()[i][0])] = static_cast<std::int64_t>(i);
        ids.reserve(raw.size());
        for (char c : raw) {
            const std::int64_t id = lut[static_cast<unsigned char>(c)];
            if (id < 0) vocab.id_of(std::string_view(&c, 1));  // raises
            ids.push_back(static_cast<TokenId>(id));
        }
        return ids;
    }
    for_each_word(raw, [&](std::string_view w) { ids.push_back(vocab.id_of(w)); });
    return ids;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IngestionError("failed reading '" + path + "'");
    return std::move(buf).str();
}

std::unordered_set<std::string> read_closed_vocabulary(const std::string& path) {
    std::unordered_set<std::string> words;
    std::istringstream in(read_file(path));
    for (std::string line; std::getline(in, line);) {
        while (!line.empty() && (line.back() == '\r' || is_space(line.back()))) line.pop_back();
        if (!line.empty()) words.insert(line);
    }
    return words;
}

std::size_t stray_angle_brackets(std::string_view text) {
    std::size_t stray = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text.compare(i, kUnkToken.size(), kUnkToken) == 0) {
            i += kUnkToken.size() - 1;
        } else if (text[i] == '<' || text[i] == '>') {
            ++stray;
        }
    }
    return stray;
}

Splits split(const std::vector<TokenId>& tokens, const SplitSizes& sizes) {
    const std::size_t total = sizes.train + sizes.valid + sizes.test;
    if (total > tokens.size() || total < sizes.train) {
        throw BoundsError("split: requested " + std::to_string(total) + " tokens from a corpus of " +
                          std::to_string(tokens.size()));
    }
    auto at = [&](std::size_t offset) { return tokens.begin() + static_cast<std::ptrdiff_t>(offset); };
    Splits out;
    out.train.assign(at(0), at(sizes.train));
    out.valid.assign(at(sizes.train), at(sizes.train + sizes.valid));
    out.test.assign(at(sizes.train + sizes.valid), at(total));
    return out;
}

SplitSizes split_by_fraction(std::size_t total, double train, double valid, double test) {
    if (train < 0 || valid < 0 || test < 0 || train + valid + test > 1.0 + 1e-12) {
        throw BoundsError("split: fractions must be non-negative and sum to at most 1");
    }
    SplitSizes sizes;
    sizes.train = static_cast<std::size_t>(std::floor(train * static_cast<double>(total)));
    sizes.valid = static_cast<std::size_t>(std::floor(valid * static_cast<double>(total)));
    sizes.test = std::abs(train + valid + test - 1.0) < 1e-12
                     ? total - sizes.train - sizes.valid
                     : static_cast<std::size_t>(std::floor(test * static_cast<double>(total)));
    return sizes;
}

std::vector<TokenId> BatchStream::column(std::size_t j) const {
    if (j >= batch) throw BoundsError("batch stream: column out of range");
    std::vector<TokenId> col(rows);
    for (std::size_t r = 0; r < rows; ++r) col[r] = at(r, j);
    return col;
}

BatchStream batchify(const std::vector<TokenId>& tokens, std::size_t batch) {
    if (batch == 0) throw BoundsError("batchify: batch size must be at least 1");
    if (batch > tokens.size()) {
        throw BoundsError("batchify: batch size " + std::to_string(batch) + " exceeds corpus length " +
                          std::to_string(tokens.size()));
    }
    BatchStream s;
    s.batch = batch;
    s.rows = tokens.size() / batch;
    s.dropped = tokens.size() - s.rows * batch;
    s.data.resize(s.rows * batch);
    for (std::size_t j = 0; j < batch; ++j) {
        for (std::size_t r = 0; r < s.rows; ++r) s.data[r * batch + j] = tokens[j * s.rows + r];
    }
    return s;
}

std::size_t sample_window_length(const WindowSchedule& schedule, Rng& rng) {
    if (schedule.base_bptt == 0) throw DomainError("window schedule: base length must be positive");
    if (!schedule.randomize) return schedule.base_bptt;
    const double base = rng.bernoulli(schedule.full_length_prob) ? static_cast<double>(schedule.base_bptt)
                                                                 : static_cast<double>(schedule.base_bptt) / 2.0;
    const double drawn = std::round(rng.normal(base, schedule.stddev));
    const double clamped = std::clamp(drawn, static_cast<double>(schedule.min_length),
                                      static_cast<double>(std::max(schedule.min_length, schedule.max_length())));
    return static_cast<std::size_t>(clamped);
}

std::optional<Window> fixed_window(const BatchStream& stream, WindowCursor& cursor, std::size_t length) {
    if (cursor.exhausted(stream)) return std::nullopt;
    const std::size_t steps = std::min(length, stream.rows - 1 - cursor.position);
    const std::size_t b = stream.batch;
    Window w;
    w.start = cursor.position;
    w.inputs = {steps, b, {}};
    w.targets = {steps, b, {}};
    const auto begin = stream.data.begin() + static_cast<std::ptrdiff_t>(cursor.position * b);
    w.inputs.ids.assign(begin, begin + static_cast<std::ptrdiff_t>(steps * b));
    w.targets.ids.assign(begin + static_cast<std::ptrdiff_t>(b), begin + static_cast<std::ptrdiff_t>((steps + 1) * b));
    cursor.position += steps;
    return w;
}

std::optional<Window> next_window(const BatchStream& stream, WindowCursor& cursor, const WindowSchedule& schedule,
                                  Rng& rng) {
    if (cursor.exhausted(stream)) return std::nullopt;
    return fixed_window(stream, cursor, sample_window_length(schedule, rng));
}

}  // namespace mslm
