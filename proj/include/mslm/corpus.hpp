#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mslm/tensor.hpp"
#include "mslm/tokens.hpp"

namespace mslm {

enum class Granularity { character, word };

std::string to_string(Granularity g);
Granularity parse_granularity(std::string_view name);

inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kEosToken = "<eos>";

struct VocabOptions {
    std::size_t min_count = 1;  // word mode: rarer words map to <unk>
    std::optional<std::unordered_set<std::string>> closed;  // word mode: only these survive
    bool reserve_unk = false;   // word mode: keep an <unk> id even if nothing maps to it
};

/// Ids are assigned by non-increasing frequency, ties by first occurrence.
class Vocabulary {
public:
    Vocabulary() = default;
    Vocabulary(Granularity granularity, std::vector<std::string> tokens, std::vector<std::uint64_t> frequencies);

    Granularity granularity() const noexcept { return granularity_; }
    std::size_t size() const noexcept { return tokens_.size(); }
    const std::string& token(TokenId id) const;
    std::uint64_t frequency(TokenId id) const { return frequencies_.at(id); }
    const std::vector<std::uint64_t>& frequencies() const noexcept { return frequencies_; }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    std::optional<TokenId> find(std::string_view token) const;
    std::optional<TokenId> unk_id() const { return find(kUnkToken); }

    /// Word mode maps unknown words to <unk> (VocabularyError if absent);
    /// char mode has no fallback and raises DataError.
    TokenId id_of(std::string_view token) const;

    /// UTF-8 lines "token<TAB>frequency"; line number = id. Bytes that would
    /// break the line format are written as \xHH.
    void dump(std::ostream& out) const;

    bool operator==(const Vocabulary& other) const {
        return granularity_ == other.granularity_ && tokens_ == other.tokens_ && frequencies_ == other.frequencies_;
    }

private:
    Granularity granularity_ = Granularity::character;
    std::vector<std::string> tokens_;
    std::vector<std::uint64_t> frequencies_;
    std::unordered_map<std::string, TokenId> index_;
};

struct Corpus {
    std::vector<TokenId> tokens;
    Vocabulary vocab;
};

/// Char mode: one token per byte. Word mode: whitespace-separated words with
/// <eos> closing every line.
Corpus tokenize(std::string_view raw, Granularity granularity, const VocabOptions& options = {});

/// Encodes text with an existing vocabulary (validation / test files).
std::vector<TokenId> encode(std::string_view raw, const Vocabulary& vocab);

/// Whole file as raw bytes. IngestionError when unreadable.
std::string read_file(const std::string& path);
/// One token per line, blank lines ignored.
std::unordered_set<std::string> read_closed_vocabulary(const std::string& path);

/// Number of '<' or '>' bytes that are not part of a literal "<unk>".
std::size_t stray_angle_brackets(std::string_view text);

struct SplitSizes {
    std::size_t train = 0;
    std::size_t valid = 0;
    std::size_t test = 0;
};

struct Splits {
    std::vector<TokenId> train;
    std::vector<TokenId> valid;
    std::vector<TokenId> test;
};

/// Contiguous prefixes in train/valid/test order.
Splits split(const std::vector<TokenId>& tokens, const SplitSizes& sizes);
/// Sizes from fractions; test takes the remainder when the fractions sum to 1.
SplitSizes split_by_fraction(std::size_t total, double train, double valid, double test);

/// Corpus folded into `batch` contiguous columns: entry (r, j) = tokens[j * rows + r].
struct BatchStream {
    std::size_t rows = 0;
    std::size_t batch = 0;
    std::size_t dropped = 0;  // trailing tokens trimmed off
    std::vector<TokenId> data;  // row-major [rows x batch]

    TokenId at(std::size_t r, std::size_t j) const { return data[r * batch + j]; }
    std::vector<TokenId> column(std::size_t j) const;
};

BatchStream batchify(const std::vector<TokenId>& tokens, std::size_t batch);

struct WindowSchedule {
    std::size_t base_bptt = 70;
    bool randomize = true;
    double full_length_prob = 0.95;  // otherwise the base is halved
    double stddev = 5.0;
    std::size_t min_length = 5;
    std::size_t max_extra = 20;  // lengths never exceed base_bptt + max_extra

    std::size_t max_length() const noexcept { return base_bptt + max_extra; }
    bool operator==(const WindowSchedule&) const = default;
};

struct Window {
    TokenGrid inputs;
    TokenGrid targets;
    std::size_t start = 0;  // stream row of inputs(0, .)
};

/// Sequential reader over a stream. Copyable: the position is its only state.
struct WindowCursor {
    std::size_t position = 0;

    bool exhausted(const BatchStream& stream) const noexcept { return position + 1 >= stream.rows; }
};

/// Samples the next window length (randomized or fixed) and advances the cursor.
/// Returns nothing once fewer than two rows remain, which ends the epoch.
std::optional<Window> next_window(const BatchStream& stream, WindowCursor& cursor, const WindowSchedule& schedule,
                                  Rng& rng);

/// Window of exactly `length` rows (clamped to what remains); no sampling.
std::optional<Window> fixed_window(const BatchStream& stream, WindowCursor& cursor, std::size_t length);

std::size_t sample_window_length(const WindowSchedule& schedule, Rng& rng);

}  // namespace mslm
