#include "mslm/adaptive_softmax.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "mslm/error.hpp"

namespace mslm {

ClusterPlan::ClusterPlan(std::size_t vocab_size, std::vector<std::size_t> cutoffs) : cutoffs_(std::move(cutoffs)) {
    if (vocab_size == 0) throw BoundsError("cluster plan: empty vocabulary");
    if (cutoffs_.empty()) cutoffs_.push_back(vocab_size);
    for (std::size_t i = 0; i < cutoffs_.size(); ++i) {
        if (cutoffs_[i] > vocab_size) {
            throw BoundsError("cluster plan: cutoff " + std::to_string(cutoffs_[i]) + " exceeds vocabulary size " +
                              std::to_string(vocab_size));
        }
        if (cutoffs_[i] == 0 || (i > 0 && cutoffs_[i] <= cutoffs_[i - 1])) {
            throw BoundsError("cluster plan: cutoffs must be positive and strictly ascending");
        }
    }
    if (cutoffs_.back() != vocab_size) {
        throw BoundsError("cluster plan: last cutoff must equal the vocabulary size " + std::to_string(vocab_size));
    }
}

std::size_t ClusterPlan::cluster_of(std::size_t id) const {
    if (id >= vocab_size()) throw VocabularyError("cluster plan: id " + std::to_string(id) + " out of range");
    return static_cast<std::size_t>(std::upper_bound(cutoffs_.begin(), cutoffs_.end(), id) - cutoffs_.begin());
}

ClusterPlan build_plan(std::span<const std::uint64_t> frequencies, std::vector<std::size_t> cutoffs) {
    if (!std::is_sorted(frequencies.begin(), frequencies.end(), std::greater<>())) {
        throw OrderingError("build_plan: frequencies must be sorted in non-increasing order");
    }
    ClusterPlan plan(frequencies.size(), std::move(cutoffs));
    const double total = std::accumulate(frequencies.begin(), frequencies.end(), 0.0);
    const double head = std::accumulate(frequencies.begin(), frequencies.begin() + static_cast<std::ptrdiff_t>(plan.shortlist_size()), 0.0);
    plan.head_fraction = total > 0.0 ? head / total : 1.0;
    return plan;
}

AdaptiveSoftmax::AdaptiveSoftmax(ClusterPlan plan, std::size_t embedding_size, Rng rng)
    : plan_(std::move(plan)), embedding_size_(embedding_size) {
    word_bias = Parameter("softmax.word_bias", Tensor({plan_.vocab_size()}));
    if (const std::size_t k = plan_.num_clusters(); k > 0) {
        cluster_vectors = Parameter("softmax.cluster_vectors", uniform_tensor({k, embedding_size}, -0.1, 0.1, rng));
        cluster_bias = Parameter("softmax.cluster_bias", Tensor({k}));
    }
}

std::vector<Parameter*> AdaptiveSoftmax::parameters() {
    std::vector<Parameter*> out{&word_bias};
    if (cluster_vectors) {
        out.push_back(&*cluster_vectors);
        out.push_back(&*cluster_bias);
    }
    return out;
}

std::size_t AdaptiveSoftmax::parameter_count() const {
    const std::size_t k = plan_.num_clusters();
    return plan_.vocab_size() + k * embedding_size_ + k;
}

namespace {

// Rows [begin, end) of a bias vector as a rank-1 Var.
Var bias_slice(const Var& bias, std::size_t begin, std::size_t end) {
    const std::size_t n = bias.value().size();
    if (begin == 0 && end == n) return bias;
    return ops::reshape(ops::slice_rows(ops::reshape(bias, {n, 1}), begin, end), {end - begin});
}

}  // namespace

AdaptiveSoftmax::Result AdaptiveSoftmax::log_prob(Tape& tape, const Var& hidden, std::span<const TokenId> targets,
                                                  const Var& embedding) {
    const Tensor& hv = hidden.value();
    const std::size_t vocab = plan_.vocab_size();
    if (embedding.value().shape() != Shape{vocab, embedding_size_}) {
        throw DimensionError("adaptive softmax: embedding " + to_string(embedding.shape()) + " does not match plan");
    }
    if (hv.rank() != 2 || hv.cols() != embedding_size_ || hv.rows() != targets.size()) {
        throw DimensionError("adaptive softmax: hidden " + to_string(hv.shape()) + " vs " +
                             std::to_string(targets.size()) + " targets of width " + std::to_string(embedding_size_));
    }
    const std::size_t n = targets.size();
    const std::size_t shortlist = plan_.shortlist_size();
    const std::size_t clusters = plan_.num_clusters();

    const Var word_b = tape.param(word_bias);
    Var head_weight = clusters == 0 ? embedding : ops::slice_rows(embedding, 0, shortlist);
    Var head_bias = bias_slice(word_b, 0, shortlist);
    if (clusters > 0) {
        const Var w_parts[] = {head_weight, tape.param(*cluster_vectors)};
        head_weight = ops::concat_rows(w_parts);
        const Var b_parts[] = {ops::reshape(head_bias, {shortlist, 1}), ops::reshape(tape.param(*cluster_bias), {clusters, 1})};
        head_bias = ops::reshape(ops::concat_rows(b_parts), {shortlist + clusters});
    }
    const Var head = ops::log_softmax_rows(ops::add_bias(ops::matmul_nt(hidden, head_weight), head_bias));

    std::vector<std::size_t> head_cols(n);
    std::vector<std::vector<std::size_t>> members(clusters + 1);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t id = targets[r];
        if (id >= vocab) {
            throw VocabularyError("adaptive softmax: target " + std::to_string(id) + " outside vocabulary of " +
                                  std::to_string(vocab));
        }
        const std::size_t k = plan_.cluster_of(id);
        head_cols[r] = k == 0 ? id : shortlist + k - 1;
        if (k > 0) members[k].push_back(r);
    }
    Var total = ops::pick(head, std::move(head_cols));
    Result result;
    result.logits_computed = n * plan_.head_size();

    // Only clusters that contain at least one target are evaluated.
    for (std::size_t k = 1; k <= clusters; ++k) {
        if (members[k].empty()) continue;
        const std::size_t begin = plan_.cluster_begin(k);
        const std::size_t end = plan_.cluster_end(k);
        std::vector<std::size_t> local(members[k].size());
        for (std::size_t i = 0; i < local.size(); ++i) local[i] = targets[members[k][i]] - begin;
        const Var rows = ops::gather_rows(hidden, members[k]);
        const Var logits = ops::add_bias(ops::matmul_nt(rows, ops::slice_rows(embedding, begin, end)),
                                         bias_slice(word_b, begin, end));
        const Var within = ops::pick(ops::log_softmax_rows(logits), std::move(local));
        total = ops::add(total, ops::scatter(within, members[k], n));
        result.logits_computed += members[k].size() * (end - begin);
    }
    result.log_probs = total;
    return result;
}

Tensor AdaptiveSoftmax::full_log_probs(const Tensor& hidden, const Tensor& embedding) const {
    const std::size_t n = hidden.rows();
    const std::size_t e = embedding_size_;
    const std::size_t vocab = plan_.vocab_size();
    const std::size_t shortlist = plan_.shortlist_size();
    const std::size_t clusters = plan_.num_clusters();
    Tensor out({n, vocab});
    auto dot = [e](const double* a, const double* b) {
        double s = 0.0;
        for (std::size_t j = 0; j < e; ++j) s += a[j] * b[j];
        return s;
    };
    for (std::size_t r = 0; r < n; ++r) {
        const double* h = hidden.raw() + r * e;
        Tensor head({plan_.head_size()});
        for (std::size_t w = 0; w < shortlist; ++w) head[w] = dot(h, embedding.raw() + w * e) + word_bias.value[w];
        for (std::size_t k = 0; k < clusters; ++k) {
            head[shortlist + k] = dot(h, cluster_vectors->value.raw() + k * e) + cluster_bias->value[k];
        }
        const Tensor head_lp = log_softmax_row(head);
        for (std::size_t w = 0; w < shortlist; ++w) out.at(r, w) = head_lp[w];
        for (std::size_t k = 1; k <= clusters; ++k) {
            const std::size_t begin = plan_.cluster_begin(k);
            const std::size_t end = plan_.cluster_end(k);
            Tensor tail({end - begin});
            for (std::size_t w = begin; w < end; ++w) tail[w - begin] = dot(h, embedding.raw() + w * e) + word_bias.value[w];
            const Tensor tail_lp = log_softmax_row(tail);
            for (std::size_t w = begin; w < end; ++w) out.at(r, w) = head_lp[shortlist + k - 1] + tail_lp[w - begin];
        }
    }
    return out;
}

Metrics metrics_from_nats(double mean_nats) {
    return {mean_nats, mean_nats / std::numbers::ln2, std::exp(mean_nats)};
}

Metrics loss_and_metrics(std::span<const double> log_probs) {
    if (log_probs.empty()) throw ContractError("loss_and_metrics: empty batch");
    const double total = std::accumulate(log_probs.begin(), log_probs.end(), 0.0);
    return metrics_from_nats(-total / static_cast<double>(log_probs.size()));
}

}  // namespace mslm
