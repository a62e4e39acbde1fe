#include "sof/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sof/error.hpp"

namespace sof {

namespace {

using ad::Graph;
using ad::Op;
using ad::Var;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMajor>;
using ConstMapRM = Eigen::Map<const RowMajor>;

ConstMapRM as_matrix(const Tensor& t) { return ConstMapRM(t.data.data(), t.rows, t.cols); }
MapRM as_matrix(Tensor& t) { return MapRM(t.data.data(), t.rows, t.cols); }

std::string shape_str(const Tensor& t) {
    return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

// Broadcast bookkeeping for elementwise binary ops.
struct Broadcast {
    std::size_t rows, cols;
    bool a_row_bc, a_col_bc, b_row_bc, b_col_bc;

    std::size_t ia(const Tensor& a, std::size_t r, std::size_t c) const {
        return (a_row_bc ? 0 : r) * a.cols + (a_col_bc ? 0 : c);
    }
    std::size_t ib(const Tensor& b, std::size_t r, std::size_t c) const {
        return (b_row_bc ? 0 : r) * b.cols + (b_col_bc ? 0 : c);
    }
};

Broadcast broadcast(const Tensor& a, const Tensor& b, const char* op) {
    auto dim = [&](std::size_t x, std::size_t y) {
        if (x == y || y == 1) return x;
        if (x == 1) return y;
        throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                         shape_str(b));
    };
    Broadcast bc{};
    bc.rows = dim(a.rows, b.rows);
    bc.cols = dim(a.cols, b.cols);
    bc.a_row_bc = a.rows == 1 && bc.rows != 1;
    bc.a_col_bc = a.cols == 1 && bc.cols != 1;
    bc.b_row_bc = b.rows == 1 && bc.rows != 1;
    bc.b_col_bc = b.cols == 1 && bc.cols != 1;
    return bc;
}

template <typename F>
Tensor elementwise(const Tensor& a, const Tensor& b, const char* name, F f) {
    const auto bc = broadcast(a, b, name);
    Tensor out(bc.rows, bc.cols);
    for (std::size_t r = 0; r < bc.rows; ++r)
        for (std::size_t c = 0; c < bc.cols; ++c)
            out(r, c) = f(a.data[bc.ia(a, r, c)], b.data[bc.ib(b, r, c)]);
    return out;
}

template <typename F>
Tensor map(const Tensor& a, F f) {
    Tensor out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = f(a.data[i]);
    return out;
}

Graph& graph_of(Var a) {
    if (a.graph == nullptr) throw Error("autodiff: Var is not attached to a graph");
    return *a.graph;
}

Graph& graph_of(Var a, Var b) {
    if (a.graph != b.graph) throw Error("autodiff: Vars belong to different graphs");
    return graph_of(a);
}

Var unary(Var a, Op op, Tensor value, double aux = 0.0) {
    Graph::Node n;
    n.op = op;
    n.a = a.id;
    n.aux = aux;
    n.value = std::move(value);
    return graph_of(a).push(std::move(n));
}

Var binary(Var a, Var b, Op op, Tensor value) {
    Graph::Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    n.value = std::move(value);
    return graph_of(a, b).push(std::move(n));
}

void accumulate(Tensor& grad, const Tensor& like) {
    if (grad.size() == 0) grad = Tensor(like.rows, like.cols);
}

} // namespace

double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 16) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

Tensor::Tensor(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c)
        throw ShapeError("Tensor: " + std::to_string(data.size()) + " values for shape " +
                         std::to_string(r) + "x" + std::to_string(c));
}

Tensor Tensor::column(std::vector<double> values) {
    const auto n = values.size();
    return Tensor(n, 1, std::move(values));
}

namespace ad {

const Tensor& Var::value() const { return graph->value(*this); }

double Var::scalar() const {
    const auto& v = value();
    if (v.size() != 1) throw ShapeError("autodiff: expected a scalar, got " + shape_str(v));
    return v.data[0];
}

Var Graph::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Graph::parameter(Tensor value) {
    Node n;
    n.op = Op::parameter;
    n.value = std::move(value);
    auto v = push(std::move(n));
    parameters_.push_back(v.id);
    return v;
}

Var add(Var a, Var b) {
    return binary(a, b, Op::add, elementwise(a.value(), b.value(), "add", std::plus<>{}));
}
Var sub(Var a, Var b) {
    return binary(a, b, Op::sub, elementwise(a.value(), b.value(), "sub", std::minus<>{}));
}
Var mul(Var a, Var b) {
    return binary(a, b, Op::mul, elementwise(a.value(), b.value(), "mul", std::multiplies<>{}));
}
Var div(Var a, Var b) {
    return binary(a, b, Op::div, elementwise(a.value(), b.value(), "div", std::divides<>{}));
}

Var matmul(Var a, Var b) {
    const auto& x = a.value();
    const auto& y = b.value();
    if (x.cols != y.rows)
        throw ShapeError("matmul: incompatible shapes " + shape_str(x) + " and " + shape_str(y));
    Tensor out(x.rows, y.cols);
    as_matrix(out).noalias() = as_matrix(x) * as_matrix(y);
    return binary(a, b, Op::matmul, std::move(out));
}

Var sum(Var a) { return unary(a, Op::sum, Tensor::scalar(pairwise_sum(a.value().data))); }

Var col_sum(Var a) {
    const auto& x = a.value();
    Tensor out(1, x.cols);
    std::vector<double> column(x.rows);
    for (std::size_t c = 0; c < x.cols; ++c) {
        for (std::size_t r = 0; r < x.rows; ++r) column[r] = x(r, c);
        out.data[c] = pairwise_sum(column);
    }
    return unary(a, Op::col_sum, std::move(out));
}

Var mean(Var a) {
    const auto n = a.value().size();
    if (n == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var neg(Var a) { return unary(a, Op::neg, map(a.value(), [](double x) { return -x; })); }

Var scale(Var a, double factor) {
    return unary(a, Op::scale, map(a.value(), [=](double x) { return factor * x; }), factor);
}

Var shift(Var a, double offset) {
    return unary(a, Op::shift, map(a.value(), [=](double x) { return x + offset; }), offset);
}

Var exp(Var a) { return unary(a, Op::exp, map(a.value(), [](double x) { return std::exp(x); })); }

Var log(Var a) {
    const double eps = graph_of(a).clamp_eps();
    return unary(a, Op::log, map(a.value(), [=](double x) { return std::log(std::max(x, eps)); }));
}

Var sqrt(Var a) {
    const double eps = graph_of(a).clamp_eps();
    return unary(a, Op::sqrt, map(a.value(), [=](double x) { return std::sqrt(std::max(x, eps)); }));
}

Var square(Var a) { return unary(a, Op::square, map(a.value(), [](double x) { return x * x; })); }

Var arccos(Var a) {
    const double eps = graph_of(a).clamp_eps();
    return unary(a, Op::arccos, map(a.value(), [=](double x) {
                     return std::acos(std::clamp(x, -1.0 + eps, 1.0 - eps));
                 }));
}

Var sigmoid(Var a) {
    return unary(a, Op::sigmoid, map(a.value(), [](double x) {
                     if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
                     const double e = std::exp(x);
                     return e / (1.0 + e);
                 }));
}

Var relu(Var a) { return unary(a, Op::relu, map(a.value(), [](double x) { return x > 0 ? x : 0.0; })); }

Var softmax(Var a) {
    const auto& x = a.value();
    Tensor out(x.rows, x.cols);
    for (std::size_t c = 0; c < x.cols; ++c) {
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < x.rows; ++r) hi = std::max(hi, x(r, c));
        double z = 0.0;
        for (std::size_t r = 0; r < x.rows; ++r) z += (out(r, c) = std::exp(x(r, c) - hi));
        for (std::size_t r = 0; r < x.rows; ++r) out(r, c) /= z;
    }
    return unary(a, Op::softmax, std::move(out));
}

Var dot(Var a, Var b) {
    const auto& x = a.value();
    const auto& y = b.value();
    if (!x.same_shape(y)) throw ShapeError("dot: shapes " + shape_str(x) + " and " + shape_str(y));
    std::vector<double> prod(x.size());
    for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = x.data[i] * y.data[i];
    return binary(a, b, Op::dot, Tensor::scalar(pairwise_sum(prod)));
}

Var gather_rows(Var a, std::vector<std::size_t> rows) {
    const auto& x = a.value();
    Tensor out(rows.size(), x.cols);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= x.rows)
            throw ShapeError("gather_rows: row " + std::to_string(rows[k]) + " out of range for " +
                             shape_str(x));
        for (std::size_t c = 0; c < x.cols; ++c) out(k, c) = x(rows[k], c);
    }
    Graph::Node n;
    n.op = Op::gather_rows;
    n.a = a.id;
    n.index = std::move(rows);
    n.value = std::move(out);
    return graph_of(a).push(std::move(n));
}

Var element(Var a, std::size_t row, std::size_t col) {
    const auto& x = a.value();
    if (row >= x.rows || col >= x.cols)
        throw ShapeError("element: (" + std::to_string(row) + "," + std::to_string(col) +
                         ") out of range for " + shape_str(x));
    Graph::Node n;
    n.op = Op::element;
    n.a = a.id;
    n.row = row;
    n.col = col;
    n.value = Tensor::scalar(x(row, col));
    return graph_of(a).push(std::move(n));
}

std::vector<Tensor> Graph::backward(Var output) const {
    if (output.graph != this) throw Error("backward: output belongs to another graph");
    if (value(output).size() != 1)
        throw ShapeError("backward: output must be scalar, got " + shape_str(value(output)));

    std::vector<Tensor> grads(output.id + 1);
    grads[output.id] = Tensor::scalar(1.0);

    for (std::size_t id = output.id + 1; id-- > 0;) {
        const Node& n = nodes_[id];
        const Tensor& g = grads[id];
        if (g.size() == 0) continue;
        const Tensor& out = n.value;

        switch (n.op) {
        case Op::constant:
        case Op::parameter:
            break;
        case Op::add:
        case Op::sub:
        case Op::mul:
        case Op::div: {
            const Tensor& x = nodes_[n.a].value;
            const Tensor& y = nodes_[n.b].value;
            const auto bc = broadcast(x, y, "backward");
            Tensor& ga = grads[n.a];
            accumulate(ga, x);
            // Same node twice (e.g. x*x) must accumulate into one buffer.
            Tensor gb_local;
            Tensor& gb = n.a == n.b ? gb_local : grads[n.b];
            accumulate(gb, y);
            for (std::size_t r = 0; r < bc.rows; ++r) {
                for (std::size_t c = 0; c < bc.cols; ++c) {
                    const double gi = g(r, c);
                    const auto ia = bc.ia(x, r, c);
                    const auto ib = bc.ib(y, r, c);
                    switch (n.op) {
                    case Op::add: ga.data[ia] += gi; gb.data[ib] += gi; break;
                    case Op::sub: ga.data[ia] += gi; gb.data[ib] -= gi; break;
                    case Op::mul:
                        ga.data[ia] += gi * y.data[ib];
                        gb.data[ib] += gi * x.data[ia];
                        break;
                    default:
                        ga.data[ia] += gi / y.data[ib];
                        gb.data[ib] -= gi * x.data[ia] / (y.data[ib] * y.data[ib]);
                        break;
                    }
                }
            }
            if (n.a == n.b)
                for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += gb_local.data[i];
            break;
        }
        case Op::matmul: {
            const Tensor& x = nodes_[n.a].value;
            const Tensor& y = nodes_[n.b].value;
            if (nodes_[n.a].op != Op::constant) {
                accumulate(grads[n.a], x);
                as_matrix(grads[n.a]).noalias() += as_matrix(g) * as_matrix(y).transpose();
            }
            if (nodes_[n.b].op != Op::constant) {
                accumulate(grads[n.b], y);
                as_matrix(grads[n.b]).noalias() += as_matrix(x).transpose() * as_matrix(g);
            }
            break;
        }
        case Op::sum: {
            Tensor& ga = grads[n.a];
            accumulate(ga, nodes_[n.a].value);
            for (double& v : ga.data) v += g.data[0];
            break;
        }
        case Op::col_sum: {
            const Tensor& x = nodes_[n.a].value;
            Tensor& ga = grads[n.a];
            accumulate(ga, x);
            for (std::size_t r = 0; r < x.rows; ++r)
                for (std::size_t c = 0; c < x.cols; ++c) ga(r, c) += g.data[c];
            break;
        }
        case Op::dot: {
            const Tensor& x = nodes_[n.a].value;
            const Tensor& y = nodes_[n.b].value;
            const double gi = g.data[0];
            accumulate(grads[n.a], x);
            for (std::size_t i = 0; i < x.size(); ++i) grads[n.a].data[i] += gi * y.data[i];
            accumulate(grads[n.b], y);
            for (std::size_t i = 0; i < y.size(); ++i) grads[n.b].data[i] += gi * x.data[i];
            break;
        }
        case Op::softmax: {
            Tensor& ga = grads[n.a];
            accumulate(ga, out);
            for (std::size_t c = 0; c < out.cols; ++c) {
                double inner = 0.0;
                for (std::size_t r = 0; r < out.rows; ++r) inner += g(r, c) * out(r, c);
                for (std::size_t r = 0; r < out.rows; ++r) ga(r, c) += out(r, c) * (g(r, c) - inner);
            }
            break;
        }
        case Op::gather_rows: {
            Tensor& ga = grads[n.a];
            accumulate(ga, nodes_[n.a].value);
            for (std::size_t k = 0; k < n.index.size(); ++k)
                for (std::size_t c = 0; c < out.cols; ++c) ga(n.index[k], c) += g(k, c);
            break;
        }
        case Op::element: {
            Tensor& ga = grads[n.a];
            accumulate(ga, nodes_[n.a].value);
            ga(n.row, n.col) += g.data[0];
            break;
        }
        default: {
            // Elementwise unary ops: ga += g * f'(x).
            const Tensor& x = nodes_[n.a].value;
            Tensor& ga = grads[n.a];
            accumulate(ga, x);
            const double eps = eps_;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double xi = x.data[i];
                const double yi = out.data[i];
                double d = 0.0;
                switch (n.op) {
                case Op::neg: d = -1.0; break;
                case Op::scale: d = n.aux; break;
                case Op::shift: d = 1.0; break;
                case Op::exp: d = yi; break;
                case Op::log: d = xi >= eps ? 1.0 / xi : 0.0; break;
                case Op::sqrt: d = xi >= eps ? 0.5 / yi : 0.0; break;
                case Op::square: d = 2.0 * xi; break;
                case Op::arccos:
                    d = (xi > -1.0 + eps && xi < 1.0 - eps) ? -1.0 / std::sqrt(1.0 - xi * xi) : 0.0;
                    break;
                case Op::sigmoid: d = yi * (1.0 - yi); break;
                case Op::relu: d = xi > 0 ? 1.0 : 0.0; break;
                default: throw Error("backward: unhandled op");
                }
                ga.data[i] += g.data[i] * d;
            }
            break;
        }
        }
    }

    std::vector<Tensor> result;
    result.reserve(parameters_.size());
    for (auto id : parameters_) {
        if (id < grads.size() && grads[id].size() != 0)
            result.push_back(std::move(grads[id]));
        else
            result.emplace_back(nodes_[id].value.rows, nodes_[id].value.cols);
    }
    return result;
}

Evaluation evaluate(const ScalarFunction& fn, std::span<const Tensor> point, double clamp_eps) {
    Graph g(clamp_eps);
    std::vector<Var> params;
    params.reserve(point.size());
    for (const auto& t : point) params.push_back(g.parameter(t));
    const Var out = fn(g, params);
    return {out.scalar(), g.backward(out)};
}

double evaluate_value(const ScalarFunction& fn, std::span<const Tensor> point, double clamp_eps) {
    Graph g(clamp_eps);
    std::vector<Var> params;
    params.reserve(point.size());
    for (const auto& t : point) params.push_back(g.parameter(t));
    return fn(g, params).scalar();
}

double gradient_check(const ScalarFunction& fn, std::span<const Tensor> point, double h,
                      double clamp_eps) {
    const auto analytic = evaluate(fn, point, clamp_eps);
    if (!std::isfinite(analytic.value)) throw Error("gradient_check: non-finite forward value");

    std::vector<Tensor> probe(point.begin(), point.end());
    double worst = 0.0;
    for (std::size_t p = 0; p < probe.size(); ++p) {
        for (std::size_t i = 0; i < probe[p].size(); ++i) {
            const double saved = probe[p].data[i];
            probe[p].data[i] = saved + h;
            const double up = evaluate_value(fn, probe, clamp_eps);
            probe[p].data[i] = saved - h;
            const double down = evaluate_value(fn, probe, clamp_eps);
            probe[p].data[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw Error("gradient_check: non-finite forward value in the h-neighborhood");
            const double central = (up - down) / (2.0 * h);
            const double err =
                std::abs(analytic.gradient[p].data[i] - central) / std::max(1.0, std::abs(central));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

} // namespace ad
} // namespace sof
