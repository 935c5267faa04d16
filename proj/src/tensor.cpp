#include "mslm/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mslm/error.hpp"

namespace mslm {

std::string to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    for (auto extent : shape_) {
        if (extent == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape_));
    }
    data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    for (auto extent : shape_) {
        if (extent == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape_));
    }
    if (data_.size() != element_count(shape_)) {
        throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             to_string(shape_));
    }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t n_rows = rows.size();
    const std::size_t n_cols = n_rows ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(n_rows * n_cols);
    for (const auto& row : rows) {
        if (row.size() != n_cols) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({n_rows, n_cols}, std::move(data));
}

std::size_t Tensor::rows() const noexcept {
    if (shape_.empty()) return 0;
    if (shape_.size() == 1) return 1;
    return data_.size() / shape_.back();
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }

Tensor Tensor::reshaped(Shape shape) const {
    if (element_count(shape) != data_.size()) {
        throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
}

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

void zero_grads(std::span<Parameter* const> params) {
    for (auto* p : params) p->zero_grad();
}

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

// xoshiro256** seeded through splitmix64.
Rng::Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : s_) word = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = std::rotl(s_[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw DomainError("uniform_int: inverted range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64());
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t draw;
    do {
        draw = next_u64();
    } while (draw >= limit);
    return lo + static_cast<std::int64_t>(draw % span);
}

double Rng::normal(double mean, double stddev) {
    // Box-Muller without caching the second variate.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

Rng Rng::split() { return Rng(next_u64()); }

std::string Rng::serialize() const {
    std::ostringstream out;
    out << s_[0] << ' ' << s_[1] << ' ' << s_[2] << ' ' << s_[3];
    return out.str();
}

Rng Rng::deserialize(const std::string& state) {
    Rng rng;
    std::istringstream in(state);
    for (auto& word : rng.s_) {
        if (!(in >> word)) throw FormatError("malformed rng state: '" + state + "'");
    }
    return rng;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t x = base ^ (index * 0xd1b54a32d192ed03ULL);
    splitmix64(x);
    return splitmix64(x);
}

Tensor bernoulli_mask(const Shape& shape, double keep_prob, Rng& rng) {
    if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) {
        throw DomainError("keep probability must lie in [0,1], got " + std::to_string(keep_prob));
    }
    Tensor mask(shape);
    if (keep_prob == 0.0) return mask;
    if (keep_prob == 1.0) {
        mask.fill(1.0);
        return mask;
    }
    const double scale = 1.0 / keep_prob;
    for (auto& v : mask.data()) v = rng.bernoulli(keep_prob) ? scale : 0.0;
    return mask;
}

Tensor uniform_tensor(const Shape& shape, double lo, double hi, Rng& rng) {
    Tensor t(shape);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace mslm
