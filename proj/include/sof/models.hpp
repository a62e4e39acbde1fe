#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sof/autodiff.hpp"
#include "sof/prop_logic.hpp"
#include "sof/simplex.hpp"

namespace sof {

// ---------------------------------------------------------------------------
// Fourier signal perceptron over {0,1}^n.
//
// g(s) = sum_w alpha_w * (-1)^<w,s> is a real signal on the Boolean cube; the
// head turns it into a distribution over the 2^n assignments:
//   squared_amplitude: f(s) = g(s)^2 / sum_t g(t)^2
//   softmax:           f(s) = exp g(s) / sum_t exp g(t)
// ---------------------------------------------------------------------------

enum class FspHead { squared_amplitude, softmax };

FspHead parse_fsp_head(std::string_view name);
std::string to_string(FspHead head);

struct FSPModel {
    std::size_t num_vars = 0;
    std::vector<double> coefficients; // one per w in {0,1}^n, indexed like assignments
    FspHead head = FspHead::squared_amplitude;
};

/// 2^n x 2^n matrix with entry (s, w) = (-1)^popcount(s & w).
Tensor walsh_matrix(std::size_t num_vars);

CategoricalDistribution fsp_distribution(const FSPModel& model);
namespace ad {
/// Differentiable forward pass; `coefficients` is a 2^n x 1 Var. Returns 2^n x 1.
Var fsp_distribution(Var coefficients, std::size_t num_vars, FspHead head);
} // namespace ad

inline constexpr double kFspInitFloor = 1e-4;

/// Coefficients whose forward pass approximates `target`, with zero entries
/// floored at `floor` before inversion.
FSPModel init_from_target(const CategoricalDistribution& target, double floor = kFspInitFloor,
                          FspHead head = FspHead::squared_amplitude);

// ---------------------------------------------------------------------------
// Multilayer perceptron: relu hidden layers, sigmoid outputs.
// ---------------------------------------------------------------------------

struct MLPModel {
    std::vector<std::size_t> layer_sizes;
    std::vector<Tensor> weights; // weights[l] is (layer_sizes[l+1] x layer_sizes[l])
    std::vector<Tensor> biases;  // biases[l] is (layer_sizes[l+1] x 1)
    std::uint64_t seed = 0;

    /// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
    static MLPModel initialize(std::vector<std::size_t> layer_sizes, std::uint64_t seed);

    std::size_t input_size() const { return layer_sizes.front(); }
    std::size_t output_size() const { return layer_sizes.back(); }
    std::size_t parameter_count() const;
    /// [W0, b0, W1, b1, ...]
    std::vector<Tensor> parameters() const;
    void set_parameters(std::vector<Tensor> params);
};

std::vector<double> mlp_forward(const MLPModel& model, std::span<const double> input);
namespace ad {
/// `params` as returned by MLPModel::parameters(); `inputs` is (in x batch).
Var mlp_forward(std::span<const Var> params, Var inputs);
} // namespace ad
/// Sigmoid outputs for a batch of column inputs (in x batch) -> (out x batch).
Tensor mlp_predict(const MLPModel& model, const Tensor& inputs);

/// Binary checkpoint, all integers and floats little-endian:
///   magic "SOFCKPT\0" (8 bytes), u32 version (=1), u32 layer count L,
///   L x u64 layer sizes, u64 seed, f64 sigma, u64 parameter count P,
///   P x f64 parameters in MLPModel::parameters() order, row-major.
void save_checkpoint(const MLPModel& model, const std::filesystem::path& path, double sigma = 0.0);
MLPModel load_checkpoint(const std::filesystem::path& path, double* sigma = nullptr);

// ---------------------------------------------------------------------------
// Distribution over 2^k assignments induced by k independent Bernoulli outputs:
// w(s) = prod_i p_i^{s_i} (1 - p_i)^{1 - s_i}.
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMaxBernoulliOutputs = 20;

CategoricalDistribution bernoulli_product_distribution(std::span<const double> p);

/// Closed-form KL(p || q) between two Bernoulli products.
double factorized_kl(std::span<const double> p, std::span<const double> q);
/// Closed-form Bhattacharyya coefficient between two Bernoulli products.
double factorized_bc(std::span<const double> p, std::span<const double> q);
double factorized_fisher(std::span<const double> p, std::span<const double> q);

namespace ad {

/// log w(s) for each model s of `m` (|M| x batch) from probabilities (k x batch).
Var bernoulli_log_weights(Var probs, const ModelSet& m);
/// sum over all 2^k assignments of w(s)^2 = prod_i (p_i^2 + (1-p_i)^2), per column.
Var bernoulli_sum_sq(Var probs);

// Divergences between teacher and student Bernoulli products, one per column
// (1 x batch). The teacher comes first, as the constraint does in KL(rho || f).
Var factorized_kl(Var teacher, Var student);
Var factorized_fisher(Var teacher, Var student);
Var factorized_l2(Var teacher, Var student);

/// Mean of squared differences over every entry.
Var mse(Var predictions, Var targets);

} // namespace ad

// ---------------------------------------------------------------------------
// Isotropic bivariate normal N(mean, sigma^2 I).
// ---------------------------------------------------------------------------

inline constexpr double kDefaultNormalSigma = 0.35;

struct BivariateNormal {
    std::array<double, 2> mean{0.0, 0.0};
    double sigma = kDefaultNormalSigma;
};

double normal_pdf(const BivariateNormal& m, std::array<double, 2> x);
double normal_log_pdf(const BivariateNormal& m, std::array<double, 2> x);

double mse_loss(std::span<const double> p, std::span<const double> target);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(std::span<const std::vector<double>> outputs, std::span<const std::size_t> labels);
/// Same for the columns of an (classes x batch) prediction matrix.
double accuracy(const Tensor& outputs, std::span<const std::size_t> labels);

std::size_t argmax(std::span<const double> values);

} // namespace sof
