#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mslm/autograd.hpp"
#include "mslm/tokens.hpp"

namespace mslm {

/// Frequency-ordered partition of the vocabulary. Ids below cutoffs[0] form the
/// shortlist; [cutoffs[k-1], cutoffs[k]) is tail cluster k. The last cutoff is V.
class ClusterPlan {
public:
    ClusterPlan() = default;
    /// Validates cutoffs (strictly ascending, last == vocab_size). Empty means [V].
    ClusterPlan(std::size_t vocab_size, std::vector<std::size_t> cutoffs);

    std::size_t vocab_size() const noexcept { return cutoffs_.empty() ? 0 : cutoffs_.back(); }
    std::size_t shortlist_size() const noexcept { return cutoffs_.front(); }
    std::size_t num_clusters() const noexcept { return cutoffs_.size() - 1; }
    std::size_t head_size() const noexcept { return shortlist_size() + num_clusters(); }
    const std::vector<std::size_t>& cutoffs() const noexcept { return cutoffs_; }

    /// 0 for shortlist words, k >= 1 for tail cluster k.
    std::size_t cluster_of(std::size_t id) const;
    std::size_t cluster_begin(std::size_t k) const { return cutoffs_.at(k - 1); }
    std::size_t cluster_end(std::size_t k) const { return cutoffs_.at(k); }

    /// Fraction of the training targets expected to be served by the head alone
    /// (filled in by build_plan; 1.0 for a degenerate plan).
    double head_fraction = 1.0;

private:
    std::vector<std::size_t> cutoffs_;
};

/// frequencies[i] is the training count of id i (non-increasing).
ClusterPlan build_plan(std::span<const std::uint64_t> frequencies, std::vector<std::size_t> cutoffs);

/// Output layer tied to the input embedding. Word targets are embedding rows;
/// the only untied parameters are the cluster-token vectors and the biases.
class AdaptiveSoftmax {
public:
    AdaptiveSoftmax(ClusterPlan plan, std::size_t embedding_size, Rng rng);

    struct Result {
        Var log_probs;                  // [N] natural-log probabilities of the targets
        std::size_t logits_computed = 0;  // head rows * head size + materialized tail logits
    };

    /// hidden: [N x e]; embedding: leaf for the shared [V x e] matrix.
    Result log_prob(Tape& tape, const Var& hidden, std::span<const TokenId> targets, const Var& embedding);

    /// Log-probabilities of every vocabulary word, [N x V]. No tape; used for
    /// enumeration checks and analysis.
    Tensor full_log_probs(const Tensor& hidden, const Tensor& embedding) const;

    const ClusterPlan& plan() const noexcept { return plan_; }
    std::vector<Parameter*> parameters();
    std::size_t parameter_count() const;

    Parameter word_bias;                      // [V]
    std::optional<Parameter> cluster_vectors;  // [K x e] when K > 0
    std::optional<Parameter> cluster_bias;     // [K]

private:
    ClusterPlan plan_;
    std::size_t embedding_size_;
};

struct Metrics {
    double nats = 0.0;
    double bpc = 0.0;
    double perplexity = 0.0;
};

/// Mean negative log-likelihood in nats, its base-2 form, and exp(nats).
Metrics loss_and_metrics(std::span<const double> log_probs);
Metrics metrics_from_nats(double mean_nats);

}  // namespace mslm
