#include "sof/prop_logic.hpp"

#include <algorithm>
#include <cctype>

#include "sof/error.hpp"
#include "sof/simplex.hpp"

namespace sof {

namespace {

using Kind = Formula::Kind;

bool eval_node(const Formula::Node& n, const Assignment& a) {
    switch (n.kind) {
    case Kind::variable: return a[n.var];
    case Kind::negation: return !eval_node(*n.lhs, a);
    case Kind::conjunction: return eval_node(*n.lhs, a) && eval_node(*n.rhs, a);
    case Kind::disjunction: return eval_node(*n.lhs, a) || eval_node(*n.rhs, a);
    case Kind::implication: return !eval_node(*n.lhs, a) || eval_node(*n.rhs, a);
    case Kind::equivalence: return eval_node(*n.lhs, a) == eval_node(*n.rhs, a);
    case Kind::truth: return true;
    case Kind::falsity: return false;
    }
    return false;
}

bool equal_nodes(const Formula::Node& x, const Formula::Node& y) {
    if (x.kind != y.kind) return false;
    switch (x.kind) {
    case Kind::variable: return x.var == y.var;
    case Kind::truth:
    case Kind::falsity: return true;
    case Kind::negation: return equal_nodes(*x.lhs, *y.lhs);
    default: return equal_nodes(*x.lhs, *y.lhs) && equal_nodes(*x.rhs, *y.rhs);
    }
}

std::string node_text(const Formula::Node& n) {
    auto bin = [&](const char* op) {
        return "(" + node_text(*n.lhs) + " " + op + " " + node_text(*n.rhs) + ")";
    };
    switch (n.kind) {
    case Kind::variable: return "x" + std::to_string(n.var + 1);
    case Kind::negation: return "!" + node_text(*n.lhs);
    case Kind::conjunction: return bin("&");
    case Kind::disjunction: return bin("|");
    case Kind::implication: return bin("->");
    case Kind::equivalence: return bin("<->");
    case Kind::truth: return "true";
    case Kind::falsity: return "false";
    }
    return {};
}

enum class Tok { var, lit_true, lit_false, bang, amp, bar, arrow, darrow, lparen, rparen, end };

struct Token {
    Tok kind;
    std::size_t pos;
    std::size_t var = 0; // 1-based as written
};

class Parser {
public:
    // num_vars == 0 means "infer from the text".
    Parser(std::string_view text, std::size_t num_vars) : text_(text), num_vars_(num_vars) {
        tokenize();
        if (num_vars_ == 0) {
            for (const auto& t : tokens_)
                if (t.kind == Tok::var) num_vars_ = std::max(num_vars_, t.var);
            if (num_vars_ == 0) num_vars_ = 1;
        }
    }

    Formula parse() {
        Formula f = parse_iff();
        if (peek().kind != Tok::end) fail("unexpected token");
        return f;
    }

private:
    [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, peek().pos); }

    const Token& peek() const { return tokens_[cur_]; }
    bool accept(Tok k) {
        if (peek().kind != k) return false;
        ++cur_;
        return true;
    }

    void tokenize() {
        std::size_t i = 0;
        while (i < text_.size()) {
            const char c = text_[i];
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++i;
                continue;
            }
            const auto starts = [&](std::string_view s) { return text_.substr(i, s.size()) == s; };
            if (c == '!') tokens_.push_back({Tok::bang, i++});
            else if (c == '&') tokens_.push_back({Tok::amp, i++});
            else if (c == '|') tokens_.push_back({Tok::bar, i++});
            else if (c == '(') tokens_.push_back({Tok::lparen, i++});
            else if (c == ')') tokens_.push_back({Tok::rparen, i++});
            else if (starts("<->")) { tokens_.push_back({Tok::darrow, i}); i += 3; }
            else if (starts("->")) { tokens_.push_back({Tok::arrow, i}); i += 2; }
            else if (c == 'x') {
                const std::size_t start = i++;
                std::size_t index = 0;
                std::size_t digits = 0;
                while (i < text_.size() && std::isdigit(static_cast<unsigned char>(text_[i]))) {
                    index = index * 10 + static_cast<std::size_t>(text_[i] - '0');
                    if (index > 1'000'000) throw ParseError("variable index too large", start);
                    ++i;
                    ++digits;
                }
                if (digits == 0) throw ParseError("expected digits after 'x'", i);
                if (index == 0) throw ParseError("variables are numbered from x1", start);
                tokens_.push_back({Tok::var, start, index});
            } else if (std::isalpha(static_cast<unsigned char>(c))) {
                const std::size_t start = i;
                while (i < text_.size() && std::isalnum(static_cast<unsigned char>(text_[i]))) ++i;
                const auto word = text_.substr(start, i - start);
                if (word == "true") tokens_.push_back({Tok::lit_true, start});
                else if (word == "false") tokens_.push_back({Tok::lit_false, start});
                else throw ParseError("unknown identifier '" + std::string(word) + "'", start);
            } else {
                throw ParseError(std::string("unexpected character '") + c + "'", i);
            }
        }
        tokens_.push_back({Tok::end, text_.size()});
    }

    Formula parse_iff() {
        Formula f = parse_impl();
        while (accept(Tok::darrow)) f = Formula::iff(f, parse_impl());
        return f;
    }
    Formula parse_impl() {
        Formula f = parse_or();
        while (accept(Tok::arrow)) f = Formula::implies(f, parse_or());
        return f;
    }
    Formula parse_or() {
        Formula f = parse_and();
        while (accept(Tok::bar)) f = f | parse_and();
        return f;
    }
    Formula parse_and() {
        Formula f = parse_unary();
        while (accept(Tok::amp)) f = f & parse_unary();
        return f;
    }
    Formula parse_unary() {
        const Token t = peek();
        switch (t.kind) {
        case Tok::bang:
            ++cur_;
            return !parse_unary();
        case Tok::lparen: {
            ++cur_;
            Formula f = parse_iff();
            if (!accept(Tok::rparen)) fail("expected ')'");
            return f;
        }
        case Tok::var:
            if (t.var > num_vars_)
                throw ParseError("variable x" + std::to_string(t.var) + " exceeds " +
                                     std::to_string(num_vars_) + " declared variables",
                                 t.pos);
            ++cur_;
            return Formula::var(t.var - 1, num_vars_);
        case Tok::lit_true: ++cur_; return Formula::constant(true, num_vars_);
        case Tok::lit_false: ++cur_; return Formula::constant(false, num_vars_);
        case Tok::end: fail("unexpected end of input");
        default: fail("expected a variable, constant, '!' or '('");
        }
    }

    std::string_view text_;
    std::size_t num_vars_;
    std::vector<Token> tokens_;
    std::size_t cur_ = 0;
};

} // namespace

Formula Formula::var(std::size_t index, std::size_t num_vars) {
    if (index >= num_vars)
        throw Error("variable index " + std::to_string(index) + " out of range for " +
                    std::to_string(num_vars) + " variables");
    return Formula(std::make_shared<const Node>(Node{Kind::variable, index, nullptr, nullptr}), num_vars);
}

Formula Formula::constant(bool value, std::size_t num_vars) {
    return Formula(std::make_shared<const Node>(Node{value ? Kind::truth : Kind::falsity, 0, nullptr, nullptr}),
                   num_vars);
}

Formula operator!(const Formula& f) {
    return Formula(std::make_shared<const Formula::Node>(Formula::Node{Kind::negation, 0, f.root_, nullptr}),
                   f.num_vars_);
}

Formula Formula::binary(Kind kind, const Formula& a, const Formula& b) {
    return Formula(std::make_shared<const Node>(Node{kind, 0, a.root_, b.root_}),
                   std::max(a.num_vars_, b.num_vars_));
}

Formula operator&(const Formula& a, const Formula& b) { return Formula::binary(Kind::conjunction, a, b); }
Formula operator|(const Formula& a, const Formula& b) { return Formula::binary(Kind::disjunction, a, b); }
Formula Formula::implies(const Formula& a, const Formula& b) { return binary(Kind::implication, a, b); }
Formula Formula::iff(const Formula& a, const Formula& b) { return binary(Kind::equivalence, a, b); }

std::string Formula::to_string() const { return node_text(*root_); }

bool operator==(const Formula& a, const Formula& b) {
    return a.num_vars_ == b.num_vars_ && equal_nodes(*a.root_, *b.root_);
}

Formula parse_formula(std::string_view text, std::size_t num_vars) {
    if (num_vars == 0) throw Error("parse_formula: num_vars must be positive");
    return Parser(text, num_vars).parse();
}

Formula parse_formula(std::string_view text) { return Parser(text, 0).parse(); }

bool eval_formula(const Formula& f, const Assignment& a) {
    if (a.size() != f.num_vars())
        throw ShapeError("eval_formula: assignment has " + std::to_string(a.size()) +
                         " values, formula has " + std::to_string(f.num_vars()) + " variables");
    return eval_node(f.root(), a);
}

std::uint64_t index_of_assignment(const Assignment& a) {
    std::uint64_t index = 0;
    for (std::size_t i = 0; i < a.size(); ++i) index = (index << 1) | (a[i] ? 1u : 0u);
    return index;
}

Assignment assignment_of_index(std::uint64_t index, std::size_t num_vars) {
    Assignment a;
    a.bits.resize(num_vars);
    for (std::size_t i = 0; i < num_vars; ++i) a.bits[i] = (index >> (num_vars - 1 - i)) & 1u;
    return a;
}

ModelSet ModelSet::from_indices(std::size_t num_vars, std::vector<std::uint64_t> indices) {
    if (num_vars > 63) throw Error("ModelSet: too many variables");
    const std::uint64_t space = std::uint64_t{1} << num_vars;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= space) throw Error("ModelSet: index out of range");
        if (i > 0 && indices[i] <= indices[i - 1])
            throw Error("ModelSet: indices must be strictly increasing");
    }
    return ModelSet(num_vars, std::move(indices));
}

bool ModelSet::contains(std::uint64_t index) const {
    return std::binary_search(indices_.begin(), indices_.end(), index);
}

std::vector<Assignment> ModelSet::models() const {
    std::vector<Assignment> out;
    out.reserve(indices_.size());
    for (auto i : indices_) out.push_back(assignment_of_index(i, num_vars_));
    return out;
}

ModelSet ModelSet::complement() const {
    std::vector<std::uint64_t> rest;
    std::size_t k = 0;
    for (std::uint64_t i = 0; i < space_size(); ++i) {
        if (k < indices_.size() && indices_[k] == i) ++k;
        else rest.push_back(i);
    }
    return ModelSet(num_vars_, std::move(rest));
}

ModelSet enumerate_models(const Formula& f, std::size_t max_vars) {
    const std::size_t n = f.num_vars();
    if (n > max_vars)
        throw Error("enumerate_models: " + std::to_string(n) +
                    " variables exceed the exhaustive-enumeration ceiling of " + std::to_string(max_vars) +
                    " (2^n assignments are scanned)");
    std::vector<std::uint64_t> found;
    const std::uint64_t space = std::uint64_t{1} << n;
    for (std::uint64_t i = 0; i < space; ++i)
        if (eval_node(f.root(), assignment_of_index(i, n))) found.push_back(i);
    return ModelSet::from_indices(n, std::move(found));
}

Formula one_hot_formula(std::size_t n) {
    if (n == 0) throw Error("one_hot_formula: n must be at least 1");
    Formula result = Formula::constant(false, n);
    for (std::size_t i = 0; i < n; ++i) {
        Formula term = Formula::var(i, n);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) term = term & !Formula::var(j, n);
        result = i == 0 ? term : (result | term);
    }
    return result;
}

CategoricalDistribution constraint_distribution(const ModelSet& m) {
    if (m.empty()) throw UnsatisfiableError("constraint has no models; its uniform distribution is undefined");
    std::vector<double> probs(m.space_size(), 0.0);
    const double mass = 1.0 / static_cast<double>(m.size());
    for (auto i : m.indices()) probs[i] = mass;
    return CategoricalDistribution(std::move(probs));
}

std::string truth_table_label(const ModelSet& m) {
    std::string label(m.space_size(), '0');
    for (auto i : m.indices()) label[i] = '1';
    return label;
}

std::vector<LabeledModelSet> enumerate_two_var_formulas() {
    std::vector<LabeledModelSet> out;
    for (unsigned table = 1; table < 16; ++table) {
        std::vector<std::uint64_t> idx;
        for (unsigned i = 0; i < 4; ++i)
            if ((table >> (3 - i)) & 1u) idx.push_back(i);
        auto ms = ModelSet::from_indices(2, std::move(idx));
        auto label = truth_table_label(ms);
        out.push_back({std::move(label), std::move(ms)});
    }
    return out;
}

} // namespace sof
