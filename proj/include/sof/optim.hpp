#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sof/autodiff.hpp"

namespace sof {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer_kind(std::string_view name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t steps = 0;       // full-batch steps, or epochs when batching
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    double clamp_eps = kDefaultClampEps;

    void validate() const;
};

/// theta <- theta - lr * grad, in place.
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double learning_rate);

struct AdamState {
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::uint64_t step = 0;

    static AdamState zeros_like(std::span<const Tensor> params);
};

/// One bias-corrected Adam update; increments state.step before using it.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state,
               const OptimizerConfig& config);

/// Owns the optimizer state for one parameter set.
class Optimizer {
public:
    Optimizer(OptimizerConfig config, std::span<const Tensor> params);
    void step(std::span<Tensor> params, std::span<const Tensor> grads);
    const OptimizerConfig& config() const noexcept { return config_; }

private:
    OptimizerConfig config_;
    AdamState adam_;
};

struct TrainingTrace {
    /// losses[0] is the loss before any update, followed by one entry per
    /// step: the full-batch loss after the step, or the minibatch loss the
    /// step descended on.
    std::vector<double> losses;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    OptimizerConfig config;
};

/// Builds the scalar loss for one batch. `batch` is empty in full-batch mode.
using LossClosure =
    std::function<ad::Var(ad::Graph&, std::span<const ad::Var> params, std::span<const std::size_t> batch)>;

/// Returns the batches (lists of example indices) to visit in one epoch.
using BatchPlan = std::function<std::vector<std::vector<std::size_t>>(std::uint64_t epoch)>;

/// Minimizes the loss in place. Without a plan every step is one full-batch
/// update; with a plan config.steps counts epochs. Throws TrainingError when a
/// loss or gradient is non-finite.
TrainingTrace train(std::vector<Tensor>& params, const LossClosure& loss, const BatchPlan& plan,
                    const OptimizerConfig& config);

} // namespace sof
