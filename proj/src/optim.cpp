#include "sof/optim.hpp"

#include <chrono>
#include <cmath>

#include "sof/error.hpp"

namespace sof {

namespace {

void require_aligned(std::span<const Tensor> params, std::span<const Tensor> grads, const char* op) {
    if (params.size() != grads.size())
        throw ShapeError(std::string(op) + ": " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (!params[i].same_shape(grads[i]))
            throw ShapeError(std::string(op) + ": gradient " + std::to_string(i) + " has the wrong shape");
}

struct StepResult {
    double loss;
    std::vector<Tensor> grads;
};

StepResult evaluate_loss(const std::vector<Tensor>& params, const LossClosure& loss,
                         std::span<const std::size_t> batch, double eps) {
    ad::Graph g(eps);
    std::vector<ad::Var> vars;
    vars.reserve(params.size());
    for (const auto& t : params) vars.push_back(g.parameter(t));
    const ad::Var out = loss(g, vars, batch);
    return {out.scalar(), g.backward(out)};
}

void require_finite(const StepResult& r, std::size_t step) {
    if (!std::isfinite(r.loss))
        throw TrainingError("non-finite loss (" + std::to_string(r.loss) + ") at step " + std::to_string(step));
    for (const auto& t : r.grads)
        for (double v : t.data)
            if (!std::isfinite(v)) throw TrainingError("non-finite gradient at step " + std::to_string(step));
}

} // namespace

OptimizerKind parse_optimizer_kind(std::string_view name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw Error("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0)) throw Error("optimizer: learning rate must be positive");
    if (batch_size == 0) throw Error("optimizer: batch size must be at least 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw Error("optimizer: Adam betas must lie in [0, 1)");
}

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double learning_rate) {
    require_aligned(params, grads, "sgd_step");
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t i = 0; i < params[p].size(); ++i) params[p].data[i] -= learning_rate * grads[p].data[i];
}

AdamState AdamState::zeros_like(std::span<const Tensor> params) {
    AdamState s;
    for (const auto& t : params) {
        s.first_moment.emplace_back(t.rows, t.cols);
        s.second_moment.emplace_back(t.rows, t.cols);
    }
    return s;
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state,
               const OptimizerConfig& config) {
    require_aligned(params, grads, "adam_step");
    if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: state does not match parameters");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& m = state.first_moment[p].data;
        auto& v = state.second_moment[p].data;
        auto& theta = params[p].data;
        const auto& g = grads[p].data;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            theta[i] -= config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.adam_eps);
        }
    }
}

Optimizer::Optimizer(OptimizerConfig config, std::span<const Tensor> params) : config_(config) {
    config_.validate();
    if (config_.kind == OptimizerKind::adam) adam_ = AdamState::zeros_like(params);
}

void Optimizer::step(std::span<Tensor> params, std::span<const Tensor> grads) {
    if (config_.kind == OptimizerKind::adam)
        adam_step(params, grads, adam_, config_);
    else
        sgd_step(params, grads, config_.learning_rate);
}

TrainingTrace train(std::vector<Tensor>& params, const LossClosure& loss, const BatchPlan& plan,
                    const OptimizerConfig& config) {
    const auto start = std::chrono::steady_clock::now();
    Optimizer opt(config, params);
    TrainingTrace trace;
    trace.seed = config.seed;
    trace.config = config;

    if (!plan) {
        StepResult r = evaluate_loss(params, loss, {}, config.clamp_eps);
        require_finite(r, 0);
        trace.losses.push_back(r.loss);
        for (std::size_t step = 1; step <= config.steps; ++step) {
            opt.step(params, r.grads);
            r = evaluate_loss(params, loss, {}, config.clamp_eps);
            require_finite(r, step);
            trace.losses.push_back(r.loss);
        }
    } else {
        bool first = true;
        std::size_t step = 0;
        for (std::uint64_t epoch = 0; epoch < config.steps; ++epoch) {
            for (const auto& batch : plan(epoch)) {
                StepResult r = evaluate_loss(params, loss, batch, config.clamp_eps);
                require_finite(r, step);
                if (first) {
                    trace.losses.push_back(r.loss);
                    first = false;
                }
                opt.step(params, r.grads);
                trace.losses.push_back(r.loss);
                ++step;
            }
        }
        if (first) {
            auto batches = plan(0);
            std::vector<std::size_t> none;
            const auto& b = batches.empty() ? none : batches.front();
            trace.losses.push_back(evaluate_loss(params, loss, b, config.clamp_eps).loss);
        }
    }
    trace.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return trace;
}

} // namespace sof
