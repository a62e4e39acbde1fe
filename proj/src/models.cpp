#include "sof/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "sof/error.hpp"
#include "sof/rng.hpp"

namespace sof {

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'O', 'F', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

void require_open_unit(std::span<const double> p, const char* op) {
    for (double v : p)
        if (!(v > 0.0 && v < 1.0))
            throw Error(std::string(op) + ": Bernoulli parameters must lie in (0, 1)");
}

void put_u32(std::ostream& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::ostream& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_le(std::istream& in, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof()) throw DecodeError("checkpoint: truncated file");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

} // namespace

FspHead parse_fsp_head(std::string_view name) {
    if (name == "squared" || name == "squared_amplitude") return FspHead::squared_amplitude;
    if (name == "softmax") return FspHead::softmax;
    throw Error("unknown FSP head '" + std::string(name) + "' (expected squared or softmax)");
}

std::string to_string(FspHead head) {
    return head == FspHead::softmax ? "softmax" : "squared";
}

Tensor walsh_matrix(std::size_t num_vars) {
    if (num_vars > kMaxEnumerationVars) throw Error("walsh_matrix: too many variables");
    const std::size_t m = std::size_t{1} << num_vars;
    Tensor b(m, m);
    for (std::size_t s = 0; s < m; ++s)
        for (std::size_t w = 0; w < m; ++w) b(s, w) = (std::popcount(s & w) % 2 == 0) ? 1.0 : -1.0;
    return b;
}

CategoricalDistribution fsp_distribution(const FSPModel& model) {
    const std::size_t m = std::size_t{1} << model.num_vars;
    if (model.coefficients.size() != m)
        throw ShapeError("fsp_distribution: expected " + std::to_string(m) + " coefficients");
    const Tensor b = walsh_matrix(model.num_vars);
    std::vector<double> g(m, 0.0);
    for (std::size_t s = 0; s < m; ++s)
        for (std::size_t w = 0; w < m; ++w) g[s] += b(s, w) * model.coefficients[w];

    if (model.head == FspHead::softmax) {
        const double hi = *std::max_element(g.begin(), g.end());
        for (double& v : g) v = std::exp(v - hi);
        return CategoricalDistribution::normalized(std::move(g));
    }
    for (double& v : g) v *= v;
    if (pairwise_sum(g) == 0.0) return CategoricalDistribution::uniform(m);
    return CategoricalDistribution::normalized(std::move(g));
}

namespace ad {

Var fsp_distribution(Var coefficients, std::size_t num_vars, FspHead head) {
    const std::size_t m = std::size_t{1} << num_vars;
    if (coefficients.rows() != m || coefficients.cols() != 1)
        throw ShapeError("fsp_distribution: expected a " + std::to_string(m) + "x1 coefficient vector");
    Var basis = coefficients.graph->constant(walsh_matrix(num_vars));
    Var signal = matmul(basis, coefficients);
    if (head == FspHead::softmax) return softmax(signal);
    Var power = square(signal);
    return div(power, sum(power));
}

} // namespace ad

FSPModel init_from_target(const CategoricalDistribution& target, double floor, FspHead head) {
    const std::size_t m = target.size();
    if (!std::has_single_bit(m)) throw ShapeError("init_from_target: length must be a power of two");
    const auto n = static_cast<std::size_t>(std::countr_zero(m));
    std::vector<double> g(m);
    for (std::size_t s = 0; s < m; ++s) {
        const double t = std::max(target[s], floor);
        g[s] = head == FspHead::softmax ? std::log(t) : std::sqrt(t);
    }
    // The Walsh matrix is symmetric and squares to m * I.
    const Tensor b = walsh_matrix(n);
    FSPModel model{n, std::vector<double>(m, 0.0), head};
    for (std::size_t w = 0; w < m; ++w) {
        double acc = 0.0;
        for (std::size_t s = 0; s < m; ++s) acc += b(w, s) * g[s];
        model.coefficients[w] = acc / static_cast<double>(m);
    }
    return model;
}

MLPModel MLPModel::initialize(std::vector<std::size_t> layer_sizes, std::uint64_t seed) {
    if (layer_sizes.size() < 2) throw Error("MLPModel: need at least an input and an output layer");
    for (auto s : layer_sizes)
        if (s == 0) throw Error("MLPModel: layer sizes must be positive");
    MLPModel model;
    model.layer_sizes = std::move(layer_sizes);
    model.seed = seed;
    for (std::size_t l = 0; l + 1 < model.layer_sizes.size(); ++l) {
        const auto fan_in = model.layer_sizes[l];
        const auto fan_out = model.layer_sizes[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Rng rng(seed, l);
        Tensor w(fan_out, fan_in);
        for (double& v : w.data) v = rng.uniform(-limit, limit);
        model.weights.push_back(std::move(w));
        model.biases.emplace_back(fan_out, 1);
    }
    return model;
}

std::size_t MLPModel::parameter_count() const {
    std::size_t total = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) total += weights[l].size() + biases[l].size();
    return total;
}

std::vector<Tensor> MLPModel::parameters() const {
    std::vector<Tensor> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        out.push_back(weights[l]);
        out.push_back(biases[l]);
    }
    return out;
}

void MLPModel::set_parameters(std::vector<Tensor> params) {
    if (params.size() != 2 * weights.size()) throw ShapeError("MLPModel: wrong parameter count");
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (!params[2 * l].same_shape(weights[l]) || !params[2 * l + 1].same_shape(biases[l]))
            throw ShapeError("MLPModel: parameter shape mismatch in layer " + std::to_string(l));
        weights[l] = std::move(params[2 * l]);
        biases[l] = std::move(params[2 * l + 1]);
    }
}

namespace ad {

Var mlp_forward(std::span<const Var> params, Var inputs) {
    if (params.empty() || params.size() % 2 != 0) throw ShapeError("mlp_forward: expected [W, b] pairs");
    Var h = inputs;
    const std::size_t layers = params.size() / 2;
    for (std::size_t l = 0; l < layers; ++l) {
        Var z = add(matmul(params[2 * l], h), params[2 * l + 1]);
        h = l + 1 == layers ? sigmoid(z) : relu(z);
    }
    return h;
}

} // namespace ad

std::vector<double> mlp_forward(const MLPModel& model, std::span<const double> input) {
    if (input.size() != model.input_size())
        throw ShapeError("mlp_forward: input of length " + std::to_string(input.size()) + ", expected " +
                         std::to_string(model.input_size()));
    const Tensor out = mlp_predict(model, Tensor::column(std::vector<double>(input.begin(), input.end())));
    return out.data;
}

Tensor mlp_predict(const MLPModel& model, const Tensor& inputs) {
    if (inputs.rows != model.input_size()) throw ShapeError("mlp_predict: input rows mismatch");
    ad::Graph g;
    std::vector<ad::Var> params;
    for (const auto& t : model.parameters()) params.push_back(g.constant(t));
    return ad::mlp_forward(params, g.constant(inputs)).value();
}

void save_checkpoint(const MLPModel& model, const std::filesystem::path& path, double sigma) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("checkpoint: cannot open " + path.string() + " for writing");
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(model.layer_sizes.size()));
    for (auto s : model.layer_sizes) put_u64(out, s);
    put_u64(out, model.seed);
    put_f64(out, sigma);
    put_u64(out, model.parameter_count());
    for (const auto& t : model.parameters())
        for (double v : t.data) put_f64(out, v);
    if (!out) throw Error("checkpoint: write failed for " + path.string());
}

MLPModel load_checkpoint(const std::filesystem::path& path, double* sigma) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("checkpoint: cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw DecodeError("checkpoint: bad magic in " + path.string());
    const auto version = static_cast<std::uint32_t>(get_le(in, 4));
    if (version != kCheckpointVersion)
        throw DecodeError("checkpoint: unsupported version " + std::to_string(version));
    const auto layers = static_cast<std::uint32_t>(get_le(in, 4));
    if (layers < 2 || layers > 64) throw DecodeError("checkpoint: implausible layer count");
    std::vector<std::size_t> sizes(layers);
    for (auto& s : sizes) s = get_le(in, 8);
    const std::uint64_t seed = get_le(in, 8);
    const double sig = std::bit_cast<double>(get_le(in, 8));
    const std::uint64_t count = get_le(in, 8);

    MLPModel model = MLPModel::initialize(sizes, seed);
    if (count != model.parameter_count()) throw DecodeError("checkpoint: parameter count does not match layers");
    auto params = model.parameters();
    for (auto& t : params)
        for (double& v : t.data) v = std::bit_cast<double>(get_le(in, 8));
    model.set_parameters(std::move(params));
    if (sigma) *sigma = sig;
    return model;
}

CategoricalDistribution bernoulli_product_distribution(std::span<const double> p) {
    const std::size_t k = p.size();
    if (k > kMaxBernoulliOutputs)
        throw Error("bernoulli_product_distribution: " + std::to_string(k) + " outputs exceed the ceiling of " +
                    std::to_string(kMaxBernoulliOutputs));
    for (double v : p)
        if (!(v >= 0.0 && v <= 1.0)) throw Error("bernoulli_product_distribution: parameters must lie in [0, 1]");
    const std::size_t m = std::size_t{1} << k;
    std::vector<double> w(m);
    for (std::size_t s = 0; s < m; ++s) {
        double prod = 1.0;
        for (std::size_t i = 0; i < k; ++i) prod *= ((s >> (k - 1 - i)) & 1u) ? p[i] : 1.0 - p[i];
        w[s] = prod;
    }
    return CategoricalDistribution(std::move(w));
}

double factorized_kl(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ShapeError("factorized_kl: length mismatch");
    require_open_unit(p, "factorized_kl");
    require_open_unit(q, "factorized_kl");
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        total += p[i] * std::log(p[i] / q[i]) + (1.0 - p[i]) * std::log((1.0 - p[i]) / (1.0 - q[i]));
    return total;
}

double factorized_bc(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ShapeError("factorized_bc: length mismatch");
    require_open_unit(p, "factorized_bc");
    require_open_unit(q, "factorized_bc");
    double prod = 1.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        prod *= std::sqrt(p[i] * q[i]) + std::sqrt((1.0 - p[i]) * (1.0 - q[i]));
    return prod;
}

double factorized_fisher(std::span<const double> p, std::span<const double> q) {
    return std::acos(std::clamp(factorized_bc(p, q), 0.0, 1.0));
}

namespace ad {

Var bernoulli_log_weights(Var probs, const ModelSet& m) {
    const std::size_t k = probs.rows();
    if (k != m.num_vars())
        throw ShapeError("bernoulli_log_weights: " + std::to_string(k) + " outputs for a constraint over " +
                         std::to_string(m.num_vars()) + " variables");
    Tensor on(m.size(), k);
    Tensor off(m.size(), k);
    for (std::size_t r = 0; r < m.size(); ++r) {
        for (std::size_t i = 0; i < k; ++i) {
            const bool bit = (m.indices()[r] >> (k - 1 - i)) & 1u;
            on(r, i) = bit ? 1.0 : 0.0;
            off(r, i) = bit ? 0.0 : 1.0;
        }
    }
    Graph& g = *probs.graph;
    Var log_p = log(probs);
    Var log_q = log(1.0 - probs);
    return add(matmul(g.constant(std::move(on)), log_p), matmul(g.constant(std::move(off)), log_q));
}

Var bernoulli_sum_sq(Var probs) {
    return exp(col_sum(log(add(square(probs), square(1.0 - probs)))));
}

Var factorized_kl(Var teacher, Var student) {
    Var t_on = teacher;
    Var t_off = 1.0 - teacher;
    Var cross = add(mul(t_on, log(student)), mul(t_off, log(1.0 - student)));
    Var entropy = add(mul(t_on, log(t_on)), mul(t_off, log(t_off)));
    return col_sum(sub(entropy, cross));
}

Var factorized_fisher(Var teacher, Var student) {
    Var both_on = sqrt(mul(teacher, student));
    Var both_off = sqrt(mul(1.0 - teacher, 1.0 - student));
    return arccos(exp(col_sum(log(add(both_on, both_off)))));
}

Var factorized_l2(Var teacher, Var student) {
    auto product = [](Var per_output) { return exp(col_sum(log(per_output))); };
    Var tt = product(add(square(teacher), square(1.0 - teacher)));
    Var ss = product(add(square(student), square(1.0 - student)));
    Var ts = product(add(mul(teacher, student), mul(1.0 - teacher, 1.0 - student)));
    return sqrt(add(add(tt, ss), scale(ts, -2.0)));
}

Var mse(Var predictions, Var targets) {
    if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
        throw ShapeError("mse: prediction and target shapes differ");
    return mean(square(sub(predictions, targets)));
}

} // namespace ad

double normal_pdf(const BivariateNormal& m, std::array<double, 2> x) {
    return std::exp(normal_log_pdf(m, x));
}

double normal_log_pdf(const BivariateNormal& m, std::array<double, 2> x) {
    if (!(m.sigma > 0.0)) throw Error("BivariateNormal: sigma must be positive");
    const double dx = x[0] - m.mean[0];
    const double dy = x[1] - m.mean[1];
    const double var = m.sigma * m.sigma;
    return -std::log(2.0 * std::numbers::pi * var) - (dx * dx + dy * dy) / (2.0 * var);
}

double mse_loss(std::span<const double> p, std::span<const double> target) {
    if (p.size() != target.size()) throw ShapeError("mse_loss: length mismatch");
    if (p.empty()) throw ShapeError("mse_loss: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - target[i]) * (p[i] - target[i]);
    return total / static_cast<double>(p.size());
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) throw ShapeError("argmax: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

double accuracy(std::span<const std::vector<double>> outputs, std::span<const std::size_t> labels) {
    if (outputs.size() != labels.size()) throw ShapeError("accuracy: outputs and labels differ in length");
    if (outputs.empty()) throw Error("accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < outputs.size(); ++i) hits += argmax(outputs[i]) == labels[i];
    return static_cast<double>(hits) / static_cast<double>(outputs.size());
}

double accuracy(const Tensor& outputs, std::span<const std::size_t> labels) {
    if (outputs.cols != labels.size()) throw ShapeError("accuracy: outputs and labels differ in length");
    if (labels.empty()) throw Error("accuracy: empty input");
    std::size_t hits = 0;
    std::vector<double> column(outputs.rows);
    for (std::size_t c = 0; c < outputs.cols; ++c) {
        for (std::size_t r = 0; r < outputs.rows; ++r) column[r] = outputs(r, c);
        hits += argmax(column) == labels[c];
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

} // namespace sof
