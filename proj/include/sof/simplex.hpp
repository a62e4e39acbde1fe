#pragma once

// Finite-case objectives on the probability simplex.
//
// Every divergence takes distributions over the same index space. Regularizers
// take the constraint as a ModelSet and only touch its indices. KL follows the
// 0*log(0/q) = 0 convention and returns +infinity instead of throwing when
// p_i > 0 meets q_i = 0.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sof/autodiff.hpp"
#include "sof/prop_logic.hpp"

namespace sof {

inline constexpr double kSimplexTolerance = 1e-9;

/// Point on the simplex: nonnegative entries summing to 1 within 1e-9.
class CategoricalDistribution {
public:
    explicit CategoricalDistribution(std::vector<double> probs);

    static CategoricalDistribution uniform(std::size_t m);
    /// Rescales nonnegative weights with a positive total.
    static CategoricalDistribution normalized(std::vector<double> weights);

    std::size_t size() const noexcept { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }
    const std::vector<double>& probs() const noexcept { return probs_; }
    std::span<const double> span() const noexcept { return probs_; }

private:
    std::vector<double> probs_;
};

double bhattacharyya(const CategoricalDistribution& p, const CategoricalDistribution& q);
/// arccos of the Bhattacharyya coefficient, in [0, pi/2].
double fisher_rao(const CategoricalDistribution& p, const CategoricalDistribution& q);
double kl_divergence(const CategoricalDistribution& p, const CategoricalDistribution& q);
double l2_distance(const CategoricalDistribution& p, const CategoricalDistribution& q);
double total_variation(const CategoricalDistribution& p, const CategoricalDistribution& q);

double fisher_regularizer(const ModelSet& m, const CategoricalDistribution& f);
double kl_regularizer(const ModelSet& m, const CategoricalDistribution& f);
/// Mass that `omega` places on the models of the constraint.
double wmc(const ModelSet& m, const CategoricalDistribution& omega);
/// -log wmc; +infinity when no mass is on the models.
double semantic_loss(const ModelSet& m, const CategoricalDistribution& omega);

inline double combined_loss(double task, double sof, double alpha, double beta) {
    return alpha * task + beta * sof;
}

/// Which constraint objective to train with.
enum class LossKind { fisher, kl, l2, wmc, sloss };

LossKind parse_loss_kind(std::string_view name);
std::string to_string(LossKind kind);
inline constexpr LossKind kAllLossKinds[] = {LossKind::fisher, LossKind::kl, LossKind::l2, LossKind::wmc,
                                             LossKind::sloss};

/// Objective value in closed form. For wmc this is -W (the trained quantity).
double constraint_objective(LossKind kind, const ModelSet& m, const CategoricalDistribution& f);

namespace ad {

// Differentiable objectives. `f` holds one distribution per column
// (2^n x batch); each returns a 1 x batch row of per-column losses.
Var fisher_regularizer(const ModelSet& m, Var f);
Var kl_regularizer(const ModelSet& m, Var f);
Var neg_wmc(const ModelSet& m, Var f);
Var semantic_loss(const ModelSet& m, Var f);
Var l2_to_constraint(const ModelSet& m, Var f);
Var constraint_loss(LossKind kind, const ModelSet& m, Var f);

/// The same objectives when only log weights of the models are available
/// (|M| x batch), as with a factorized output layer. `sum_sq_weights` is
/// sum over all assignments of w(s)^2 (1 x batch); only the L2 objective reads it.
Var constraint_loss_from_log_weights(LossKind kind, std::size_t model_count, Var log_weights,
                                     Var sum_sq_weights);

} // namespace ad

} // namespace sof
