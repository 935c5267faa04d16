#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mslm/corpus.hpp"
#include "mslm/model.hpp"
#include "mslm/recurrent.hpp"

namespace mslm {

/// p[t] = P(tokens[t+1] | tokens[0..t]) from one mask-free pass with carried state.
/// Length tokens.size() - 1.
std::vector<double> teacher_forced_probs(LanguageModel& model, const std::vector<TokenId>& tokens,
                                         std::size_t bptt = 200);

struct PositionPoint {
    std::size_t position = 0;  // 1-based
    double mean_prob = 0.0;
    std::size_t count = 0;
};

struct PositionCurve {
    std::vector<PositionPoint> points;  // ascending position, empty positions omitted
    bool no_delimiter = false;          // char curve found no whitespace: one group
};

/// Groups every scored character by its offset from the preceding whitespace
/// (the start of the text counts as whitespace). A whitespace character itself
/// sits one past the word it ends. max_position 0 keeps every offset.
PositionCurve char_position_curve(std::span<const double> probs, std::span<const TokenId> tokens,
                                  const Vocabulary& vocab, std::size_t max_position = 10);

/// Offsets 1, 2, ... after each occurrence of `anchor`; a token belongs to the
/// most recent anchor only. VocabularyError when the anchor is not in the vocabulary.
PositionCurve word_position_curve(std::span<const double> probs, std::span<const TokenId> tokens,
                                  const Vocabulary& vocab, std::string_view anchor, std::size_t max_position = 10);

struct WordLengthPoint {
    std::size_t word_length = 0;
    std::size_t position = 0;  // 1..word_length+1, the last being the terminating whitespace
    double mean_prob = 0.0;
    std::size_t count = 0;
};

/// Words are runs of two or more ASCII letters with whitespace on both sides.
std::vector<WordLengthPoint> word_length_curve(std::span<const double> probs, std::span<const TokenId> tokens,
                                               const Vocabulary& vocab);

void write_position_csv(std::ostream& out, const PositionCurve& curve);
void write_word_length_csv(std::ostream& out, const std::vector<WordLengthPoint>& curve);

struct BenchConfig {
    CellType cell = CellType::lstm;
    std::size_t batch = 32;
    std::size_t seq = 140;
    std::size_t hidden = 512;
    std::size_t layers = 2;
    std::size_t reps = 5;
    std::size_t warmup = 3;
    std::uint64_t seed = 1;
};

struct BenchResult {
    BenchConfig config;
    double fwd_ms = 0.0;     // median
    double fwdbwd_ms = 0.0;  // median
    Shape output_shape;
    bool finite = true;
};

/// Times a stack of `layers` recurrent layers of width `hidden` on random input.
/// Warmup repetitions are always run and discarded.
BenchResult throughput_bench(const BenchConfig& config);

void write_bench_header(std::ostream& out);
void write_bench_row(std::ostream& out, const BenchResult& result);

}  // namespace mslm
