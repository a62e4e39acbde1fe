#include "sof/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sof/error.hpp"

namespace sof {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_size(const CategoricalDistribution& p, const CategoricalDistribution& q, const char* op) {
    if (p.size() != q.size())
        throw ShapeError(std::string(op) + ": distributions of length " + std::to_string(p.size()) + " and " +
                         std::to_string(q.size()));
}

void require_model_space(const ModelSet& m, const CategoricalDistribution& f, const char* op) {
    if (f.size() != m.space_size())
        throw ShapeError(std::string(op) + ": distribution of length " + std::to_string(f.size()) +
                         " over a space of " + std::to_string(m.space_size()) + " assignments");
}

void require_models(const ModelSet& m, const char* op) {
    if (m.empty()) throw UnsatisfiableError(std::string(op) + ": constraint has no models");
}

} // namespace

CategoricalDistribution::CategoricalDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw Error("CategoricalDistribution: empty");
    for (double p : probs_)
        if (!(p >= 0.0) || !std::isfinite(p))
            throw Error("CategoricalDistribution: entries must be finite and nonnegative");
    const double total = pairwise_sum(probs_);
    if (std::abs(total - 1.0) > kSimplexTolerance)
        throw Error("CategoricalDistribution: entries sum to " + std::to_string(total));
}

CategoricalDistribution CategoricalDistribution::uniform(std::size_t m) {
    if (m == 0) throw Error("CategoricalDistribution: empty");
    return CategoricalDistribution(std::vector<double>(m, 1.0 / static_cast<double>(m)));
}

CategoricalDistribution CategoricalDistribution::normalized(std::vector<double> weights) {
    const double total = pairwise_sum(weights);
    if (!(total > 0.0) || !std::isfinite(total)) throw Error("CategoricalDistribution: weights must have positive total");
    for (double& w : weights) w /= total;
    return CategoricalDistribution(std::move(weights));
}

double bhattacharyya(const CategoricalDistribution& p, const CategoricalDistribution& q) {
    require_same_size(p, q, "bhattacharyya");
    std::vector<double> terms(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) terms[i] = std::sqrt(p[i] * q[i]);
    return std::clamp(pairwise_sum(terms), 0.0, 1.0);
}

double fisher_rao(const CategoricalDistribution& p, const CategoricalDistribution& q) {
    return std::acos(bhattacharyya(p, q));
}

double kl_divergence(const CategoricalDistribution& p, const CategoricalDistribution& q) {
    require_same_size(p, q, "kl_divergence");
    std::vector<double> terms;
    terms.reserve(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0) return kInf;
        terms.push_back(p[i] * std::log(p[i] / q[i]));
    }
    return std::max(0.0, pairwise_sum(terms));
}

double l2_distance(const CategoricalDistribution& p, const CategoricalDistribution& q) {
    require_same_size(p, q, "l2_distance");
    std::vector<double> terms(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) terms[i] = (p[i] - q[i]) * (p[i] - q[i]);
    return std::sqrt(pairwise_sum(terms));
}

double total_variation(const CategoricalDistribution& p, const CategoricalDistribution& q) {
    require_same_size(p, q, "total_variation");
    std::vector<double> terms(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) terms[i] = std::abs(p[i] - q[i]);
    return 0.5 * pairwise_sum(terms);
}

double fisher_regularizer(const ModelSet& m, const CategoricalDistribution& f) {
    require_models(m, "fisher_regularizer");
    require_model_space(m, f, "fisher_regularizer");
    std::vector<double> roots;
    roots.reserve(m.size());
    for (auto i : m.indices()) roots.push_back(std::sqrt(f[i]));
    const double bc = pairwise_sum(roots) / std::sqrt(static_cast<double>(m.size()));
    return std::acos(std::clamp(bc, 0.0, 1.0));
}

double kl_regularizer(const ModelSet& m, const CategoricalDistribution& f) {
    require_models(m, "kl_regularizer");
    require_model_space(m, f, "kl_regularizer");
    std::vector<double> logs;
    logs.reserve(m.size());
    for (auto i : m.indices()) {
        if (f[i] == 0.0) return kInf;
        logs.push_back(std::log(f[i]));
    }
    const double count = static_cast<double>(m.size());
    return std::max(0.0, -std::log(count) - pairwise_sum(logs) / count);
}

double wmc(const ModelSet& m, const CategoricalDistribution& omega) {
    require_model_space(m, omega, "wmc");
    std::vector<double> mass;
    mass.reserve(m.size());
    for (auto i : m.indices()) mass.push_back(omega[i]);
    return std::clamp(pairwise_sum(mass), 0.0, 1.0);
}

double semantic_loss(const ModelSet& m, const CategoricalDistribution& omega) {
    const double w = wmc(m, omega);
    return w > 0.0 ? -std::log(w) : kInf;
}

LossKind parse_loss_kind(std::string_view name) {
    if (name == "fisher") return LossKind::fisher;
    if (name == "kl") return LossKind::kl;
    if (name == "l2") return LossKind::l2;
    if (name == "wmc") return LossKind::wmc;
    if (name == "sloss") return LossKind::sloss;
    throw Error("unknown loss '" + std::string(name) + "' (expected fisher, kl, l2, wmc or sloss)");
}

std::string to_string(LossKind kind) {
    switch (kind) {
    case LossKind::fisher: return "fisher";
    case LossKind::kl: return "kl";
    case LossKind::l2: return "l2";
    case LossKind::wmc: return "wmc";
    case LossKind::sloss: return "sloss";
    }
    return "?";
}

double constraint_objective(LossKind kind, const ModelSet& m, const CategoricalDistribution& f) {
    switch (kind) {
    case LossKind::fisher: return fisher_regularizer(m, f);
    case LossKind::kl: return kl_regularizer(m, f);
    case LossKind::l2: return l2_distance(constraint_distribution(m), f);
    case LossKind::wmc: return -wmc(m, f);
    case LossKind::sloss: return semantic_loss(m, f);
    }
    return 0.0;
}

namespace ad {

namespace {

std::vector<std::size_t> model_rows(const ModelSet& m, Var f, const char* op) {
    require_models(m, op);
    if (f.rows() != m.space_size())
        throw ShapeError(std::string(op) + ": expected " + std::to_string(m.space_size()) + " rows, got " +
                         std::to_string(f.rows()));
    return {m.indices().begin(), m.indices().end()};
}

} // namespace

Var fisher_regularizer(const ModelSet& m, Var f) {
    auto rows = model_rows(m, f, "fisher_regularizer");
    const double inv_root = 1.0 / std::sqrt(static_cast<double>(m.size()));
    return arccos(scale(col_sum(sqrt(gather_rows(f, std::move(rows)))), inv_root));
}

Var kl_regularizer(const ModelSet& m, Var f) {
    auto rows = model_rows(m, f, "kl_regularizer");
    const double count = static_cast<double>(m.size());
    return shift(scale(col_sum(log(gather_rows(f, std::move(rows)))), -1.0 / count), -std::log(count));
}

Var neg_wmc(const ModelSet& m, Var f) {
    auto rows = model_rows(m, f, "neg_wmc");
    return neg(col_sum(gather_rows(f, std::move(rows))));
}

Var semantic_loss(const ModelSet& m, Var f) {
    auto rows = model_rows(m, f, "semantic_loss");
    return neg(log(col_sum(gather_rows(f, std::move(rows)))));
}

Var l2_to_constraint(const ModelSet& m, Var f) {
    model_rows(m, f, "l2_to_constraint");
    const auto rho = constraint_distribution(m);
    Var target = f.graph->constant(Tensor::column(rho.probs()));
    return sqrt(col_sum(square(sub(f, target))));
}

Var constraint_loss(LossKind kind, const ModelSet& m, Var f) {
    switch (kind) {
    case LossKind::fisher: return fisher_regularizer(m, f);
    case LossKind::kl: return kl_regularizer(m, f);
    case LossKind::l2: return l2_to_constraint(m, f);
    case LossKind::wmc: return neg_wmc(m, f);
    case LossKind::sloss: return semantic_loss(m, f);
    }
    throw Error("constraint_loss: unknown kind");
}

Var constraint_loss_from_log_weights(LossKind kind, std::size_t model_count, Var log_weights,
                                     Var sum_sq_weights) {
    if (model_count == 0) throw UnsatisfiableError("constraint has no models");
    if (log_weights.rows() != model_count)
        throw ShapeError("constraint_loss_from_log_weights: expected " + std::to_string(model_count) + " rows");
    const double count = static_cast<double>(model_count);
    switch (kind) {
    case LossKind::fisher:
        return arccos(scale(col_sum(exp(scale(log_weights, 0.5))), 1.0 / std::sqrt(count)));
    case LossKind::kl:
        return shift(scale(col_sum(log_weights), -1.0 / count), -std::log(count));
    case LossKind::wmc:
        return neg(col_sum(exp(log_weights)));
    case LossKind::sloss:
        return neg(log(col_sum(exp(log_weights))));
    case LossKind::l2: {
        // ||w - rho||^2 = sum w^2 - (2/|M|) sum_M w + 1/|M|
        Var cross = scale(col_sum(exp(log_weights)), -2.0 / count);
        return sqrt(shift(add(sum_sq_weights, cross), 1.0 / count));
    }
    }
    throw Error("constraint_loss_from_log_weights: unknown kind");
}

} // namespace ad

} // namespace sof
