#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace mslm {

using TokenId = std::uint32_t;

/// Time-major grid of token ids: entry (t, b) lives at t * batch + b.
struct TokenGrid {
    std::size_t steps = 0;
    std::size_t batch = 0;
    std::vector<TokenId> ids;

    TokenId at(std::size_t t, std::size_t b) const { return ids[t * batch + b]; }
    std::size_t size() const noexcept { return ids.size(); }
};

}  // namespace mslm
