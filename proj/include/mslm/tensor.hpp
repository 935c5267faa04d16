#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace mslm {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Cache-line aligned storage. A fixed alignment keeps vectorized kernels on the
/// same code path for every buffer, so results are bitwise reproducible.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

/// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor scalar(double value) { return Tensor({1}, value); }
    static Tensor vector(std::initializer_list<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Rank-2 views; a rank-1 tensor behaves as a single row.
    std::size_t rows() const noexcept;
    std::size_t cols() const noexcept;

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double* raw() noexcept { return data_.data(); }
    const double* raw() const noexcept { return data_.data(); }

    void fill(double value);
    bool all_finite() const noexcept;
    double sum() const noexcept;
    Tensor reshaped(Shape shape) const;

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double, AlignedAllocator<double>> data_;
};

/// Trainable weight with a gradient accumulator of identical shape.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Tensor value);

    std::string name;
    Tensor value;
    Tensor grad;

    void zero_grad() { grad.fill(0.0); }
};

void zero_grads(std::span<Parameter* const> params);

/// Seeded generator with reproducible streams. Sampling routines are written
/// out here rather than taken from <random> distributions so the full state is
/// the engine state and can be checkpointed exactly.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();
    double uniform();                          // [0, 1)
    double uniform(double lo, double hi);      // [lo, hi)
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive
    double normal(double mean, double stddev);
    bool bernoulli(double p);

    /// Independent child generator; advances this generator by one draw.
    Rng split();

    std::string serialize() const;
    static Rng deserialize(const std::string& state);

private:
    std::uint64_t s_[4];
};

/// Derives a well-mixed seed from (base, index) pairs.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// Inverted-dropout mask: entries are 0 with probability 1-keep_prob and
/// 1/keep_prob otherwise. keep_prob == 0 gives an all-zero mask.
Tensor bernoulli_mask(const Shape& shape, double keep_prob, Rng& rng);

Tensor uniform_tensor(const Shape& shape, double lo, double hi, Rng& rng);

}  // namespace mslm
