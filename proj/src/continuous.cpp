#include "sof/continuous.hpp"

#include <cctype>
#include <cmath>
#include <memory>
#include <numbers>
#include <string_view>

#include "sof/error.hpp"
#include "sof/rng.hpp"

namespace sof {

namespace {

// Expression over (x, y) compiled to a closure tree.
using Expr = std::function<double(double, double)>;

class ExprParser {
public:
    explicit ExprParser(std::string_view text) : text_(text) {}

    PointPredicate parse_inequality() {
        Expr lhs = parse_sum();
        skip_ws();
        std::string op;
        if (starts("<=") || starts(">=")) op = std::string(text_.substr(pos_, 2));
        else if (starts("<") || starts(">")) op = std::string(text_.substr(pos_, 1));
        else throw ParseError("expected a comparison (<=, <, >=, >)", pos_);
        pos_ += op.size();
        Expr rhs = parse_sum();
        skip_ws();
        if (pos_ != text_.size()) throw ParseError("unexpected trailing input", pos_);
        if (op == "<=") return [=](double x, double y) { return lhs(x, y) <= rhs(x, y); };
        if (op == "<") return [=](double x, double y) { return lhs(x, y) < rhs(x, y); };
        if (op == ">=") return [=](double x, double y) { return lhs(x, y) >= rhs(x, y); };
        return [=](double x, double y) { return lhs(x, y) > rhs(x, y); };
    }

private:
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
    bool starts(std::string_view s) const { return text_.substr(pos_, s.size()) == s; }
    bool accept(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    Expr parse_sum() {
        Expr e = parse_product();
        for (;;) {
            if (accept('+')) {
                Expr r = parse_product();
                e = [=](double x, double y) { return e(x, y) + r(x, y); };
            } else if (accept('-')) {
                Expr r = parse_product();
                e = [=](double x, double y) { return e(x, y) - r(x, y); };
            } else {
                return e;
            }
        }
    }

    Expr parse_product() {
        Expr e = parse_power();
        for (;;) {
            if (accept('*')) {
                Expr r = parse_power();
                e = [=](double x, double y) { return e(x, y) * r(x, y); };
            } else if (accept('/')) {
                Expr r = parse_power();
                e = [=](double x, double y) { return e(x, y) / r(x, y); };
            } else {
                return e;
            }
        }
    }

    Expr parse_power() {
        Expr base = parse_unary();
        if (accept('^')) {
            Expr exponent = parse_power();
            return [=](double x, double y) { return std::pow(base(x, y), exponent(x, y)); };
        }
        return base;
    }

    Expr parse_unary() {
        if (accept('-')) {
            Expr e = parse_unary();
            return [=](double x, double y) { return -e(x, y); };
        }
        return parse_atom();
    }

    Expr parse_atom() {
        skip_ws();
        if (pos_ >= text_.size()) throw ParseError("unexpected end of expression", pos_);
        if (accept('(')) {
            Expr e = parse_sum();
            if (!accept(')')) throw ParseError("expected ')'", pos_);
            return e;
        }
        const char c = text_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t used = 0;
            const double v = std::stod(std::string(text_.substr(pos_)), &used);
            pos_ += used;
            return [=](double, double) { return v; };
        }
        if (std::isalpha(static_cast<unsigned char>(c))) {
            const std::size_t start = pos_;
            while (pos_ < text_.size() && std::isalnum(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            const auto word = text_.substr(start, pos_ - start);
            if (word == "x") return [](double x, double) { return x; };
            if (word == "y") return [](double, double y) { return y; };
            if (word == "pi") return [](double, double) { return std::numbers::pi; };
            double (*fn)(double) = nullptr;
            if (word == "sqrt") fn = [](double v) { return std::sqrt(v); };
            else if (word == "abs") fn = [](double v) { return std::abs(v); };
            else if (word == "exp") fn = [](double v) { return std::exp(v); };
            else if (word == "log") fn = [](double v) { return std::log(v); };
            else if (word == "sin") fn = [](double v) { return std::sin(v); };
            else if (word == "cos") fn = [](double v) { return std::cos(v); };
            else throw ParseError("unknown identifier '" + std::string(word) + "'", start);
            if (!accept('(')) throw ParseError("expected '(' after function name", pos_);
            Expr arg = parse_sum();
            if (!accept(')')) throw ParseError("expected ')'", pos_);
            return [=](double x, double y) { return fn(arg(x, y)); };
        }
        throw ParseError(std::string("unexpected character '") + c + "'", pos_);
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

void require_grid_matches(const Region& region, const QuadratureGrid& grid, const char* op) {
    if (grid.size() == 0) throw Error(std::string(op) + ": empty quadrature grid");
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (!region.contains(grid.x[i], grid.y[i]))
            throw Error(std::string(op) + ": grid node outside region '" + region.name + "'");
    const double total = grid.total_weight();
    if (std::abs(total - region.measure) > 0.05 * region.measure)
        throw Error(std::string(op) + ": grid covers area " + std::to_string(total) + " but region '" + region.name +
                    "' has area " + std::to_string(region.measure));
}

std::vector<double> evaluate_at_nodes(const PointFunction& fn, const QuadratureGrid& grid) {
    std::vector<double> v(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) v[i] = fn(grid.x[i], grid.y[i]);
    return v;
}

void rule_nodes(QuadratureRule rule, std::size_t n, double lo, double hi, std::vector<double>& nodes,
                std::vector<double>& weights) {
    nodes.resize(n);
    weights.resize(n);
    const double width = hi - lo;
    if (rule == QuadratureRule::midpoint) {
        for (std::size_t i = 0; i < n; ++i) {
            nodes[i] = lo + width * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
            weights[i] = width / static_cast<double>(n);
        }
        return;
    }
    gauss_legendre(n, nodes, weights);
    for (std::size_t i = 0; i < n; ++i) {
        nodes[i] = lo + 0.5 * width * (nodes[i] + 1.0);
        weights[i] *= 0.5 * width;
    }
}

} // namespace

void Region::validate() const {
    if (!contains) throw Error("region '" + name + "': missing indicator");
    if (!(measure > 0.0) || !std::isfinite(measure))
        throw Error("region '" + name + "': measure must be finite and positive");
    if (!(bounds.area() > 0.0)) throw Error("region '" + name + "': degenerate bounding box");
}

Region quarter_disc_region() {
    Region r;
    r.name = "quarter_disc";
    r.contains = [](double x, double y) { return x * x + y * y <= 1.0 && x >= 0.0 && y >= 0.0; };
    r.measure = std::numbers::pi / 4.0;
    r.bounds = {0.0, 1.0, 0.0, 1.0};
    r.polar = PolarRanges{0.0, 1.0, 0.0, std::numbers::pi / 2.0};
    return r;
}

Region region_from_constraints(const std::string& name, Box bounds, const std::vector<std::string>& inequalities,
                               std::size_t mc_samples, std::uint64_t seed) {
    if (inequalities.empty()) throw Error("region '" + name + "': no inequalities given");
    std::vector<PointPredicate> tests;
    for (const auto& text : inequalities) tests.push_back(ExprParser(text).parse_inequality());
    Region r;
    r.name = name;
    r.bounds = bounds;
    r.contains = [tests, bounds](double x, double y) {
        if (x < bounds.x_min || x > bounds.x_max || y < bounds.y_min || y > bounds.y_max) return false;
        for (const auto& t : tests)
            if (!t(x, y)) return false;
        return true;
    };
    r.measure = 1.0; // placeholder so the estimator can run
    if (!(bounds.area() > 0.0)) throw Error("region '" + name + "': degenerate bounding box");
    r.measure = monte_carlo_integrate([](double, double) { return 1.0; }, r, mc_samples, seed).estimate;
    r.validate();
    return r;
}

double QuadratureGrid::total_weight() const { return pairwise_sum(weights); }

void gauss_legendre(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights) {
    if (n == 0) throw Error("gauss_legendre: need at least one node");
    nodes.assign(n, 0.0);
    weights.assign(n, 0.0);
    const double dn = static_cast<double>(n);
    for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
        // Newton iteration from the Chebyshev-like initial guess.
        double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (dn + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = z;
            for (std::size_t k = 2; k <= n; ++k) {
                const double dk = static_cast<double>(k);
                const double p2 = ((2.0 * dk - 1.0) * z * p1 - (dk - 1.0) * p0) / dk;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) p0 = 1.0, p1 = z;
            dp = dn * (z * p1 - p0) / (z * z - 1.0);
            const double step = p1 / dp;
            z -= step;
            if (std::abs(step) < 1e-15) break;
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
}

QuadratureGrid polar_quadrature(std::size_t n_r, std::size_t n_theta, QuadratureRule rule, PolarRanges ranges) {
    if (n_r < 2 || n_theta < 2) throw Error("polar_quadrature: resolution must be at least 2x2");
    if (!(ranges.r_max > ranges.r_min) || !(ranges.theta_max > ranges.theta_min) || ranges.r_min < 0.0)
        throw Error("polar_quadrature: degenerate ranges");
    std::vector<double> rn, rw, tn, tw;
    rule_nodes(rule, n_r, ranges.r_min, ranges.r_max, rn, rw);
    rule_nodes(rule, n_theta, ranges.theta_min, ranges.theta_max, tn, tw);
    QuadratureGrid g;
    g.n_first = n_r;
    g.n_second = n_theta;
    g.x.reserve(n_r * n_theta);
    g.y.reserve(n_r * n_theta);
    g.weights.reserve(n_r * n_theta);
    for (std::size_t i = 0; i < n_r; ++i) {
        for (std::size_t j = 0; j < n_theta; ++j) {
            g.x.push_back(rn[i] * std::cos(tn[j]));
            g.y.push_back(rn[i] * std::sin(tn[j]));
            g.weights.push_back(rw[i] * tw[j] * rn[i]);
        }
    }
    return g;
}

QuadratureGrid box_quadrature(const Region& region, std::size_t n_x, std::size_t n_y) {
    region.validate();
    if (n_x < 2 || n_y < 2) throw Error("box_quadrature: resolution must be at least 2x2");
    const auto& b = region.bounds;
    const double dx = (b.x_max - b.x_min) / static_cast<double>(n_x);
    const double dy = (b.y_max - b.y_min) / static_cast<double>(n_y);
    QuadratureGrid g;
    g.n_first = n_x;
    g.n_second = n_y;
    for (std::size_t i = 0; i < n_x; ++i) {
        for (std::size_t j = 0; j < n_y; ++j) {
            const double x = b.x_min + (static_cast<double>(i) + 0.5) * dx;
            const double y = b.y_min + (static_cast<double>(j) + 0.5) * dy;
            if (!region.contains(x, y)) continue;
            g.x.push_back(x);
            g.y.push_back(y);
            g.weights.push_back(dx * dy);
        }
    }
    if (g.size() == 0) throw Error("box_quadrature: no grid node falls inside region '" + region.name + "'");
    return g;
}

QuadratureGrid region_quadrature(const Region& region, std::size_t n_first, std::size_t n_second,
                                 QuadratureRule rule) {
    if (region.polar) return polar_quadrature(n_first, n_second, rule, *region.polar);
    return box_quadrature(region, n_first, n_second);
}

double integrate(const PointFunction& fn, const QuadratureGrid& grid) {
    std::vector<double> terms = evaluate_at_nodes(fn, grid);
    for (std::size_t i = 0; i < terms.size(); ++i) terms[i] *= grid.weights[i];
    return pairwise_sum(terms);
}

double w_integral(const PointFunction& density, const QuadratureGrid& grid) {
    std::vector<double> terms = evaluate_at_nodes(density, grid);
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (!std::isfinite(terms[i])) throw Error("w_integral: non-finite density at a quadrature node");
        terms[i] *= grid.weights[i];
    }
    return pairwise_sum(terms);
}

double kl_continuous(const Region& region, const PointFunction& density, const QuadratureGrid& grid) {
    require_grid_matches(region, grid, "kl_continuous");
    std::vector<double> terms = evaluate_at_nodes(density, grid);
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (!(terms[i] > 0.0) || !std::isfinite(terms[i]))
            throw Error("kl_continuous: density must be positive and finite on the region");
        terms[i] = std::log(terms[i]) * grid.weights[i];
    }
    return -std::log(region.measure) - pairwise_sum(terms) / region.measure;
}

double kl_continuous(const Region& region, const BivariateNormal& f, const QuadratureGrid& grid) {
    require_grid_matches(region, grid, "kl_continuous");
    std::vector<double> terms(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        terms[i] = normal_log_pdf(f, {grid.x[i], grid.y[i]}) * grid.weights[i];
    return -std::log(region.measure) - pairwise_sum(terms) / region.measure;
}

double tv_continuous(const Region& region, const PointFunction& density, const QuadratureGrid& grid) {
    require_grid_matches(region, grid, "tv_continuous");
    const double uniform = 1.0 / region.measure;
    std::vector<double> gap(grid.size());
    std::vector<double> mass(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double f = density(grid.x[i], grid.y[i]);
        if (!std::isfinite(f) || f < 0.0) throw Error("tv_continuous: density must be finite and nonnegative");
        gap[i] = std::abs(uniform - f) * grid.weights[i];
        mass[i] = f * grid.weights[i];
    }
    const double outside = std::max(0.0, 1.0 - pairwise_sum(mass));
    return 0.5 * (pairwise_sum(gap) + outside);
}

double tv_continuous(const Region& region, const BivariateNormal& f, const QuadratureGrid& grid) {
    return tv_continuous(region, [&](double x, double y) { return normal_pdf(f, {x, y}); }, grid);
}

MonteCarloEstimate monte_carlo_integrate(const PointFunction& fn, const Region& region, std::size_t n_samples,
                                         std::uint64_t seed) {
    if (n_samples == 0) throw Error("monte_carlo_integrate: need at least one sample");
    if (!region.contains) throw Error("monte_carlo_integrate: region has no indicator");
    const auto& b = region.bounds;
    const double area = b.area();
    if (!(area > 0.0)) throw Error("monte_carlo_integrate: degenerate bounding box");
    Rng rng(seed, 0x6d63);
    std::vector<double> values(n_samples);
    for (auto& v : values) {
        const double x = rng.uniform(b.x_min, b.x_max);
        const double y = rng.uniform(b.y_min, b.y_max);
        v = region.contains(x, y) ? fn(x, y) : 0.0;
    }
    const double n = static_cast<double>(n_samples);
    const double mean = pairwise_sum(values) / n;
    std::vector<double> sq(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) sq[i] = (values[i] - mean) * (values[i] - mean);
    const double var = n_samples > 1 ? pairwise_sum(sq) / (n - 1.0) : 0.0;
    return {area * mean, area * std::sqrt(var / n)};
}

namespace ad {

namespace {

Var squared_distance(Var mean, const QuadratureGrid& grid) {
    if (mean.rows() != 2 || mean.cols() != 1) throw ShapeError("normal density: mean must be 2x1");
    Graph& g = *mean.graph;
    Var xs = g.constant(Tensor(1, grid.size(), grid.x));
    Var ys = g.constant(Tensor(1, grid.size(), grid.y));
    Var dx = sub(xs, element(mean, 0, 0));
    Var dy = sub(ys, element(mean, 1, 0));
    return add(square(dx), square(dy));
}

} // namespace

Var normal_log_density(Var mean, double sigma, const QuadratureGrid& grid) {
    if (!(sigma > 0.0)) throw Error("normal density: sigma must be positive");
    const double var = sigma * sigma;
    return shift(scale(squared_distance(mean, grid), -0.5 / var), -std::log(2.0 * std::numbers::pi * var));
}

Var normal_density(Var mean, double sigma, const QuadratureGrid& grid) {
    return exp(normal_log_density(mean, sigma, grid));
}

Var w_integral(Var density_at_nodes, const QuadratureGrid& grid) {
    Var w = density_at_nodes.graph->constant(Tensor(1, grid.size(), grid.weights));
    return dot(density_at_nodes, w);
}

Var kl_continuous(const Region& region, Var log_density_at_nodes, const QuadratureGrid& grid) {
    region.validate();
    Var w = log_density_at_nodes.graph->constant(Tensor(1, grid.size(), grid.weights));
    return shift(scale(dot(log_density_at_nodes, w), -1.0 / region.measure), -std::log(region.measure));
}

} // namespace ad

} // namespace sof
