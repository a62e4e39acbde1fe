#pragma once

// Propositional constraints: formulas, assignments, model sets and the
// uniform distribution over a formula's models.
//
// Assignments map to indices with x1 as the most significant bit, so for two
// variables the order is (0,0), (0,1), (1,0), (1,1) and XOR prints as
// [0, 1, 1, 0].

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sof {

class CategoricalDistribution;

inline constexpr std::size_t kMaxEnumerationVars = 20;

class Formula {
public:
    enum class Kind { variable, negation, conjunction, disjunction, implication, equivalence, truth, falsity };

    struct Node {
        Kind kind;
        std::size_t var = 0;
        std::shared_ptr<const Node> lhs;
        std::shared_ptr<const Node> rhs;
    };
    using NodePtr = std::shared_ptr<const Node>;

    static Formula var(std::size_t index, std::size_t num_vars);
    static Formula constant(bool value, std::size_t num_vars);
    friend Formula operator!(const Formula& f);
    friend Formula operator&(const Formula& a, const Formula& b);
    friend Formula operator|(const Formula& a, const Formula& b);
    static Formula implies(const Formula& a, const Formula& b);
    static Formula iff(const Formula& a, const Formula& b);

    std::size_t num_vars() const noexcept { return num_vars_; }
    const Node& root() const noexcept { return *root_; }
    Kind kind() const noexcept { return root_->kind; }

    /// Fully parenthesized text in the parser's grammar.
    std::string to_string() const;

    /// Structural equality of the trees.
    friend bool operator==(const Formula& a, const Formula& b);

private:
    Formula(NodePtr root, std::size_t num_vars) : root_(std::move(root)), num_vars_(num_vars) {}
    static Formula binary(Kind kind, const Formula& a, const Formula& b);

    NodePtr root_;
    std::size_t num_vars_;
};

struct Assignment {
    std::vector<bool> bits;

    std::size_t size() const noexcept { return bits.size(); }
    bool operator[](std::size_t i) const { return bits[i]; }
    friend bool operator==(const Assignment&, const Assignment&) = default;
};

/// Grammar (lowest to highest precedence): <->, ->, |, &, !. Binary operators
/// associate to the left. Variables are written x1, x2, ... (1-based).
Formula parse_formula(std::string_view text, std::size_t num_vars);
/// Same, with num_vars taken as the largest variable index mentioned.
Formula parse_formula(std::string_view text);

bool eval_formula(const Formula& f, const Assignment& a);

std::uint64_t index_of_assignment(const Assignment& a);
Assignment assignment_of_index(std::uint64_t index, std::size_t num_vars);

class ModelSet {
public:
    /// Validates that `indices` are strictly increasing and < 2^num_vars.
    static ModelSet from_indices(std::size_t num_vars, std::vector<std::uint64_t> indices);

    std::size_t num_vars() const noexcept { return num_vars_; }
    std::uint64_t space_size() const noexcept { return std::uint64_t{1} << num_vars_; }
    const std::vector<std::uint64_t>& indices() const noexcept { return indices_; }
    std::size_t size() const noexcept { return indices_.size(); }
    bool empty() const noexcept { return indices_.empty(); }
    bool contains(std::uint64_t index) const;
    std::vector<Assignment> models() const;
    ModelSet complement() const;

    friend bool operator==(const ModelSet&, const ModelSet&) = default;

private:
    ModelSet(std::size_t n, std::vector<std::uint64_t> idx) : num_vars_(n), indices_(std::move(idx)) {}

    std::size_t num_vars_ = 0;
    std::vector<std::uint64_t> indices_;
};

ModelSet enumerate_models(const Formula& f, std::size_t max_vars = kMaxEnumerationVars);

/// Exactly-one-of x1..xn.
Formula one_hot_formula(std::size_t n);

CategoricalDistribution constraint_distribution(const ModelSet& m);

struct LabeledModelSet {
    std::string label; // truth table over (0,0),(0,1),(1,0),(1,1), e.g. "0110"
    ModelSet models;
};

/// The 15 satisfiable Boolean functions of two variables, ordered by label.
std::vector<LabeledModelSet> enumerate_two_var_formulas();

/// Truth-table label of a model set ("0110" for XOR).
std::string truth_table_label(const ModelSet& m);

} // namespace sof
