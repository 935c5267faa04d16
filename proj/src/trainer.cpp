#include "mslm/trainer.hpp"

#include <chrono>
#include <cmath>

#include "mslm/error.hpp"

namespace mslm {

void Adam::step(std::span<Parameter* const> params, double lr) {
    if (!(lr > 0.0)) throw DomainError("adam: learning rate must be positive, got " + std::to_string(lr));
    ++steps_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (Parameter* p : params) {
        auto [it, fresh] = moments_.try_emplace(p->name);
        if (fresh) {
            it->second.m = Tensor(p->value.shape());
            it->second.v = Tensor(p->value.shape());
        } else if (it->second.m.shape() != p->value.shape()) {
            throw DimensionError("adam: moment shape mismatch for " + p->name);
        }
        double* m = it->second.m.raw();
        double* v = it->second.v.raw();
        double* w = p->value.raw();
        const double* g = p->grad.raw();
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
        }
    }
}

void Adam::restore(std::uint64_t steps, std::map<std::string, Moments> moments) {
    steps_ = steps;
    moments_ = std::move(moments);
}

void adam_step(std::span<Parameter* const> params, Adam& state, double lr) { state.step(params, lr); }

double Schedule::lr(std::size_t epoch) const {
    std::size_t drops = 0;
    for (std::size_t r : reductions) drops += r <= epoch;
    return lr0 / std::pow(factor, static_cast<double>(drops));
}

void RegConfig::validate() const {
    if (ar_alpha < 0 || tar_beta < 0 || weight_decay < 0 || clip_norm < 0) {
        throw DomainError("regularization coefficients must be non-negative");
    }
}

Var apply_regularizers(const Var& loss, const Var& raw, const Var& dropped, std::size_t batch,
                       std::span<Parameter* const> params, const RegConfig& config) {
    config.validate();
    Var total = loss;
    if (config.ar_alpha > 0.0) total = ops::add(total, ops::scale(ops::mean(ops::square(dropped)), config.ar_alpha));
    const std::size_t rows = raw.value().rows();
    if (config.tar_beta > 0.0 && rows > batch) {
        const Var diff = ops::sub(ops::slice_rows(raw, batch, rows), ops::slice_rows(raw, 0, rows - batch));
        total = ops::add(total, ops::scale(ops::mean(ops::square(diff)), config.tar_beta));
    }
    if (config.weight_decay > 0.0) {
        Tape& tape = loss.tape();
        for (Parameter* p : params) {
            total = ops::add(total, ops::scale(ops::sum(ops::square(tape.param(*p))), config.weight_decay));
        }
    }
    return total;
}

double gradient_norm(std::span<Parameter* const> params) {
    double sq = 0.0;
    for (const Parameter* p : params) {
        for (double g : p->grad.data()) sq += g * g;
    }
    return std::sqrt(sq);
}

double clip_gradients(std::span<Parameter* const> params, double max_norm) {
    if (!(max_norm > 0.0)) throw DomainError("clip_gradients: max_norm must be positive");
    const double norm = gradient_norm(params);
    if (norm <= max_norm) return 1.0;
    const double scale = max_norm / norm;
    for (Parameter* p : params) {
        for (double& g : p->grad.data()) g *= scale;
    }
    return scale;
}

Trainer::Trainer(LanguageModel& model, TrainerConfig config, std::uint64_t seed)
    : model_(model), config_(std::move(config)), adam_(config_.adam), rng_(seed) {
    config_.reg.validate();
    zero_grads(model_.parameters());
}

bool Trainer::train_window(const BatchStream& stream) {
    using clock = std::chrono::steady_clock;
    const auto started = clock::now();
    if (hidden_.empty() || hidden_.front().h.rows() != stream.batch) hidden_ = model_.initial_state(stream.batch);
    auto window = next_window(stream, position_.cursor, config_.window, rng_);
    if (!window) return false;

    const auto params = model_.parameters();
    Tape tape;
    auto out = model_.forward(tape, window->inputs, window->targets, hidden_, {true, &rng_});
    const double nats = out.loss.value()[0];
    if (!std::isfinite(nats)) {
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(position_.epoch) + ", window " +
                                  std::to_string(position_.window),
                              position_.window);
    }
    backward(tape, apply_regularizers(out.loss, out.raw, out.output, stream.batch, params, config_.reg));
    if (!std::isfinite(gradient_norm(params))) {
        zero_grads(params);
        throw DivergenceError("non-finite gradient at epoch " + std::to_string(position_.epoch) + ", window " +
                                  std::to_string(position_.window),
                              position_.window);
    }
    if (config_.reg.clip_norm > 0.0) clip_gradients(params, config_.reg.clip_norm);
    if (const double lr = current_lr(); lr > 0.0) adam_.step(params, lr);
    zero_grads(params);

    hidden_ = std::move(out.state);
    const std::size_t n = window->targets.size();
    ++position_.window;
    position_.tokens += n;
    position_.nats_sum += nats * static_cast<double>(n);
    position_.window_losses.push_back(nats);
    epoch_seconds_ += std::chrono::duration<double>(clock::now() - started).count();
    if (on_window) on_window(*this);
    return true;
}

EpochStats Trainer::train_epoch(const BatchStream& stream) {
    while (train_window(stream)) {
    }
    EpochStats stats;
    stats.epoch = position_.epoch;
    stats.lr = current_lr();
    stats.windows = position_.window;
    stats.tokens = position_.tokens;
    stats.mean_nats = position_.tokens > 0 ? position_.nats_sum / static_cast<double>(position_.tokens) : 0.0;
    stats.seconds = epoch_seconds_;
    stats.window_losses = std::move(position_.window_losses);
    position_ = Position{};
    position_.epoch = stats.epoch + 1;
    hidden_.clear();
    epoch_seconds_ = 0.0;
    return stats;
}

void Trainer::restore(Position position, Rng rng, RecurrentState hidden, Adam adam) {
    position_ = std::move(position);
    rng_ = rng;
    hidden_ = std::move(hidden);
    adam_ = std::move(adam);
}

EvalResult evaluate(LanguageModel& model, const BatchStream& stream, std::size_t bptt, bool keep_log_probs) {
    if (stream.rows < 2) throw ContractError("evaluate: split has no targets");
    if (bptt == 0) throw DomainError("evaluate: bptt must be positive");
    const std::size_t batch = stream.batch;
    RecurrentState state = model.initial_state(batch);
    WindowCursor cursor;
    std::vector<std::vector<double>> columns(keep_log_probs ? batch : 0);
    double total = 0.0;
    std::size_t count = 0;
    while (auto w = fixed_window(stream, cursor, bptt)) {
        Tape tape;
        auto out = model.forward(tape, w->inputs, w->targets, state, {});
        const Tensor& lp = out.log_probs.value();
        for (std::size_t i = 0; i < lp.size(); ++i) {
            total += lp[i];
            if (keep_log_probs) columns[i % batch].push_back(lp[i]);
        }
        count += lp.size();
        state = std::move(out.state);
    }
    EvalResult result;
    result.tokens = count;
    result.metrics = metrics_from_nats(-total / static_cast<double>(count));
    for (auto& c : columns) result.log_probs.insert(result.log_probs.end(), c.begin(), c.end());
    return result;
}

}  // namespace mslm
