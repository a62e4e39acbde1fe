#include "doctest.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>

#include "sof/error.hpp"
#include "sof/prop_logic.hpp"
#include "sof/rng.hpp"
#include "sof/simplex.hpp"

using namespace sof;

namespace {

Formula x(std::size_t i, std::size_t n) { return Formula::var(i, n); }

// Random formula over n variables, depth-limited.
Formula random_formula(Rng& rng, std::size_t n, int depth) {
    if (depth == 0 || rng.below(4) == 0) {
        const auto r = rng.below(n + 2);
        if (r == n) return Formula::constant(true, n);
        if (r == n + 1) return Formula::constant(false, n);
        return x(r, n);
    }
    const Formula a = random_formula(rng, n, depth - 1);
    switch (rng.below(5)) {
    case 0: return !a;
    case 1: return a & random_formula(rng, n, depth - 1);
    case 2: return a | random_formula(rng, n, depth - 1);
    case 3: return Formula::implies(a, random_formula(rng, n, depth - 1));
    default: return Formula::iff(a, random_formula(rng, n, depth - 1));
    }
}

// Truth-functional semantics written out independently of eval_formula.
bool oracle_eval(const Formula::Node& node, std::uint64_t index, std::size_t n) {
    using K = Formula::Kind;
    switch (node.kind) {
    case K::variable: return (index >> (n - 1 - node.var)) & 1U;
    case K::negation: return !oracle_eval(*node.lhs, index, n);
    case K::conjunction: return oracle_eval(*node.lhs, index, n) && oracle_eval(*node.rhs, index, n);
    case K::disjunction: return oracle_eval(*node.lhs, index, n) || oracle_eval(*node.rhs, index, n);
    case K::implication: return !oracle_eval(*node.lhs, index, n) || oracle_eval(*node.rhs, index, n);
    case K::equivalence: return oracle_eval(*node.lhs, index, n) == oracle_eval(*node.rhs, index, n);
    case K::truth: return true;
    case K::falsity: return false;
    }
    return false;
}

} // namespace

TEST_CASE("parse_formula builds the expected trees") {
    CHECK(parse_formula("x1 & !x2", 2) == (x(0, 2) & !x(1, 2)));
    const Formula xor_text = parse_formula("(x1 | x2) & !(x1 & x2)", 2);
    CHECK(xor_text == ((x(0, 2) | x(1, 2)) & !(x(0, 2) & x(1, 2))));
    CHECK(parse_formula("true", 3).kind() == Formula::Kind::truth);
    CHECK(parse_formula("false", 1).kind() == Formula::Kind::falsity);
}

TEST_CASE("operator precedence and associativity") {
    const std::size_t n = 3;
    // ! binds tighter than &, & tighter than |, | tighter than ->, -> tighter than <->.
    CHECK(parse_formula("!x1 & x2 | x3", n) == (((!x(0, n)) & x(1, n)) | x(2, n)));
    CHECK(parse_formula("x1 | x2 -> x3", n) == Formula::implies(x(0, n) | x(1, n), x(2, n)));
    CHECK(parse_formula("x1 -> x2 <-> x3", n) == Formula::iff(Formula::implies(x(0, n), x(1, n)), x(2, n)));
    CHECK(parse_formula("x1 -> x2 -> x3", n) == Formula::implies(Formula::implies(x(0, n), x(1, n)), x(2, n)));
    CHECK(parse_formula("x1 & (x2 | x3)", n) == (x(0, n) & (x(1, n) | x(2, n))));
}

TEST_CASE("parse errors carry the character position") {
    try {
        parse_formula("x1 &&", 2);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.position() == 4);
    }
    CHECK_THROWS_AS(parse_formula("x3", 2), ParseError);
    CHECK_THROWS_AS(parse_formula("x0", 2), ParseError);
    CHECK_THROWS_AS(parse_formula("(x1 & x2", 2), ParseError);
    CHECK_THROWS_AS(parse_formula("", 2), ParseError);
    CHECK_THROWS_AS(parse_formula("x1 x2", 2), ParseError);
}

TEST_CASE("to_string round-trips through the parser") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const Formula f = random_formula(rng, 4, 4);
        CHECK(parse_formula(f.to_string(), 4) == f);
    }
}

TEST_CASE("eval_formula semantics") {
    const Formula xr = parse_formula("(x1 | x2) & !(x1 & x2)", 2);
    CHECK(eval_formula(xr, Assignment{{false, true}}));
    CHECK_FALSE(eval_formula(xr, Assignment{{false, false}}));
    CHECK(eval_formula(Formula::constant(true, 2), Assignment{{true, false}}));
    CHECK_THROWS_AS(eval_formula(xr, Assignment{{true}}), ShapeError);
}

TEST_CASE("index_of_assignment puts x1 at the most significant bit") {
    CHECK(index_of_assignment(Assignment{{false, true}}) == 1);
    CHECK(index_of_assignment(Assignment{{true, false}}) == 2);
    CHECK(index_of_assignment(Assignment{{false, false}}) == 0);
    for (std::size_t n = 1; n <= 8; ++n) {
        std::set<std::uint64_t> seen;
        for (std::uint64_t i = 0; i < (std::uint64_t{1} << n); ++i) {
            const Assignment a = assignment_of_index(i, n);
            CHECK(a.size() == n);
            CHECK(index_of_assignment(a) == i);
            seen.insert(index_of_assignment(a));
        }
        CHECK(seen.size() == (std::size_t{1} << n));
    }
}

TEST_CASE("enumerate_models matches exhaustive evaluation") {
    const Formula xr = parse_formula("(x1 | x2) & !(x1 & x2)", 2);
    const ModelSet m = enumerate_models(xr);
    CHECK(m.indices() == std::vector<std::uint64_t>{1, 2});
    CHECK(m.size() == 2);
    CHECK(enumerate_models(Formula::constant(false, 2)).empty());
    CHECK(enumerate_models(one_hot_formula(4)).size() == 4);

    Rng rng(11);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n = 1 + rng.below(10);
        const Formula f = random_formula(rng, n, 5);
        const ModelSet ms = enumerate_models(f);
        std::vector<std::uint64_t> expected;
        for (std::uint64_t i = 0; i < (std::uint64_t{1} << n); ++i) {
            const bool sat = oracle_eval(f.root(), i, n);
            CHECK(eval_formula(f, assignment_of_index(i, n)) == sat);
            if (sat) expected.push_back(i);
        }
        CHECK(ms.indices() == expected);
    }
}

TEST_CASE("enumerate_models refuses formulas above the ceiling") {
    CHECK_THROWS_AS(enumerate_models(Formula::constant(true, 21)), Error);
    CHECK_THROWS_AS(enumerate_models(Formula::constant(true, 12), 10), Error);
}

TEST_CASE("one_hot_formula has exactly the one-hot models") {
    CHECK(enumerate_models(one_hot_formula(2)).indices() == std::vector<std::uint64_t>{1, 2});
    CHECK(enumerate_models(one_hot_formula(3)).size() == 3);
    CHECK(enumerate_models(one_hot_formula(10)).size() == 10);
    for (std::size_t n = 1; n <= 12; ++n) {
        const ModelSet m = enumerate_models(one_hot_formula(n));
        REQUIRE(m.size() == n);
        for (auto idx : m.indices()) CHECK(std::popcount(idx) == 1);
    }
    CHECK_THROWS_AS(one_hot_formula(0), Error);
}

TEST_CASE("constraint_distribution is uniform on the models") {
    const ModelSet xr = enumerate_models(parse_formula("(x1 | x2) & !(x1 & x2)", 2));
    CHECK(constraint_distribution(xr).probs() == std::vector<double>{0.0, 0.5, 0.5, 0.0});
    CHECK(constraint_distribution(enumerate_models(Formula::constant(true, 2))).probs() ==
          std::vector<double>{0.25, 0.25, 0.25, 0.25});
    CHECK_THROWS_AS(constraint_distribution(enumerate_models(Formula::constant(false, 2))), UnsatisfiableError);

    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        const ModelSet m = enumerate_models(random_formula(rng, n, 4));
        if (m.empty()) continue;
        const auto rho = constraint_distribution(m);
        double total = 0.0;
        for (std::size_t i = 0; i < rho.size(); ++i) {
            total += rho[i];
            if (m.contains(i)) CHECK(rho[i] == doctest::Approx(1.0 / m.size()).epsilon(1e-15));
            else CHECK(rho[i] == 0.0);
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("the fifteen satisfiable two-variable formulas") {
    const auto all = enumerate_two_var_formulas();
    CHECK(all.size() == 15);
    std::set<std::string> labels;
    for (const auto& l : all) {
        labels.insert(l.label);
        CHECK(!l.models.empty());
        CHECK(truth_table_label(l.models) == l.label);
    }
    CHECK(labels.size() == 15);
    const auto xr = std::find_if(all.begin(), all.end(), [](const auto& l) { return l.label == "0110"; });
    REQUIRE(xr != all.end());
    CHECK(xr->models.indices() == std::vector<std::uint64_t>{1, 2});
    const auto full = std::find_if(all.begin(), all.end(), [](const auto& l) { return l.label == "1111"; });
    REQUIRE(full != all.end());
    CHECK(full->models.size() == 4);
}

TEST_CASE("ModelSet validation and complement") {
    CHECK_THROWS_AS(ModelSet::from_indices(2, {2, 1}), Error);
    CHECK_THROWS_AS(ModelSet::from_indices(2, {1, 1}), Error);
    CHECK_THROWS_AS(ModelSet::from_indices(2, {4}), Error);
    const ModelSet m = ModelSet::from_indices(3, {0, 5, 7});
    CHECK(m.complement().indices() == std::vector<std::uint64_t>{1, 2, 3, 4, 6});
    CHECK(m.complement().complement() == m);
}
