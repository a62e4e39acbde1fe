#pragma once

// Reverse-mode differentiation over dense 2-D tensors.
//
// A Graph records every operation applied to its Vars as a node holding the
// cached forward value. backward() walks the nodes in reverse creation order,
// which is a valid topological order because inputs always precede outputs.
//
// Elementwise binary ops broadcast a dimension of size 1 against the other
// operand, so scalars, column vectors and row vectors combine with matrices.
// Batches are stored column-wise: a (features x batch) matrix.
//
// log, sqrt and arccos are evaluated on clamped inputs (log(max(x, eps)),
// sqrt(max(x, eps)), arccos(clamp(x, -1 + eps, 1 - eps))) and differentiate
// the clamped function exactly, so the derivative is zero outside the clamp.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace sof {

inline constexpr double kDefaultClampEps = 1e-12;

/// Row-major dense matrix of doubles.
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Tensor(std::size_t r, std::size_t c, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }
    static Tensor column(std::vector<double> values);
    static Tensor column(std::initializer_list<double> values) { return column(std::vector<double>(values)); }

    std::size_t size() const noexcept { return data.size(); }
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    bool same_shape(const Tensor& o) const noexcept { return rows == o.rows && cols == o.cols; }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

namespace ad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the Graph lives.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    double scalar() const;
    std::size_t rows() const { return value().rows; }
    std::size_t cols() const { return value().cols; }
};

enum class Op {
    constant,
    parameter,
    add,
    sub,
    mul,
    div,
    matmul,
    sum,
    col_sum,
    neg,
    scale,
    shift,
    exp,
    log,
    sqrt,
    square,
    arccos,
    sigmoid,
    relu,
    softmax,
    dot,
    gather_rows,
    element,
};

class Graph {
public:
    explicit Graph(double clamp_eps = kDefaultClampEps) : eps_(clamp_eps) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    Var constant(double value) { return constant(Tensor::scalar(value)); }
    /// A leaf whose gradient backward() reports, in creation order.
    Var parameter(Tensor value);

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    double clamp_eps() const noexcept { return eps_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t parameter_count() const noexcept { return parameters_.size(); }

    /// Gradients of the 1x1 output with respect to every parameter leaf.
    std::vector<Tensor> backward(Var output) const;

    // Used by the op implementations.
    struct Node {
        Op op = Op::constant;
        std::size_t a = 0;
        std::size_t b = 0;
        double aux = 0.0;
        std::size_t row = 0;
        std::size_t col = 0;
        std::vector<std::size_t> index;
        Tensor value;
    };
    Var push(Node node);
    const Node& node(std::size_t id) const { return nodes_[id]; }

private:
    double eps_;
    std::vector<Node> nodes_;
    std::vector<std::size_t> parameters_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
/// Matrix product; with a column vector on the right this is a matvec.
Var matmul(Var a, Var b);
inline Var matvec(Var a, Var x) { return matmul(a, x); }
/// Sum of all entries (1x1).
Var sum(Var a);
/// Sum down each column (1 x cols).
Var col_sum(Var a);
Var mean(Var a);
Var neg(Var a);
Var scale(Var a, double factor);
Var shift(Var a, double offset);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var arccos(Var a);
Var sigmoid(Var a);
Var relu(Var a);
/// Softmax over each column.
Var softmax(Var a);
/// Sum of the elementwise product (1x1); shapes must match.
Var dot(Var a, Var b);
/// Rows of `a` selected by `rows`, in the given order.
Var gather_rows(Var a, std::vector<std::size_t> rows);
Var element(Var a, std::size_t row, std::size_t col);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator+(Var a, double c) { return shift(a, c); }
inline Var operator+(double c, Var a) { return shift(a, c); }
inline Var operator-(Var a, double c) { return shift(a, -c); }
inline Var operator-(double c, Var a) { return shift(neg(a), c); }

/// Builds a scalar objective on a fresh graph from the parameter leaves.
using ScalarFunction = std::function<Var(Graph&, std::span<const Var>)>;

struct Evaluation {
    double value = 0.0;
    std::vector<Tensor> gradient;
};

Evaluation evaluate(const ScalarFunction& fn, std::span<const Tensor> point,
                    double clamp_eps = kDefaultClampEps);
double evaluate_value(const ScalarFunction& fn, std::span<const Tensor> point,
                      double clamp_eps = kDefaultClampEps);

/// Max over all parameter entries of |analytic - central difference| /
/// max(1, |central difference|). Throws if any forward value is non-finite.
double gradient_check(const ScalarFunction& fn, std::span<const Tensor> point, double h = 1e-5,
                      double clamp_eps = kDefaultClampEps);

} // namespace ad

/// Pairwise (cascade) summation; fixed association order for a given length.
double pairwise_sum(std::span<const double> values);

} // namespace sof
