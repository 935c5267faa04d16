#pragma once

#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

#include "mslm/analysis.hpp"
#include "mslm/corpus.hpp"
#include "run_config.hpp"

namespace mslm::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kDivergence = 4, kCompatibility = 5 };

/// Maps library failures onto the documented exit codes.
int exit_code_for(const std::exception& e);

/// Entry point shared by the executable and the tests; `args` excludes the
/// program name. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct LoadedData {
    Vocabulary vocab;
    std::vector<TokenId> train;
    std::vector<TokenId> valid;
    std::vector<TokenId> test;
};

/// Builds the vocabulary on the training text (or the whole file when the
/// splits are carved out of it) and encodes every split.
LoadedData load_data(const DataConfig& config);

/// Re-encodes the configured data under a saved vocabulary.
LoadedData encode_data(const DataConfig& config, const Vocabulary& vocab);

std::vector<BenchConfig> default_bench_grid();

/// Up to `n` vocabulary entries closest to `query` by edit distance.
std::vector<std::string> nearest_tokens(const Vocabulary& vocab, const std::string& query, std::size_t n = 5);

}  // namespace mslm::cli
