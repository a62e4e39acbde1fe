#include "doctest.h"

#include <cmath>
#include <limits>
#include <numbers>

#include "sof/error.hpp"
#include "sof/prop_logic.hpp"
#include "sof/rng.hpp"
#include "sof/simplex.hpp"
#include "test_util.hpp"

using namespace sof;
using Dist = CategoricalDistribution;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

ModelSet xor_models() { return ModelSet::from_indices(2, {1, 2}); }
Dist rho_xor() { return Dist({0.0, 0.5, 0.5, 0.0}); }
Dist uniform4() { return Dist::uniform(4); }

} // namespace

TEST_CASE("CategoricalDistribution validates its entries") {
    CHECK_THROWS_AS(Dist({0.5, 0.6}), Error);
    CHECK_THROWS_AS(Dist({-0.1, 1.1}), Error);
    CHECK_THROWS_AS(Dist(std::vector<double>{}), Error);
    CHECK_NOTHROW(Dist({0.5, 0.5 + 1e-10}));
    CHECK(Dist::normalized({1.0, 3.0}).probs() == std::vector<double>{0.25, 0.75});
    CHECK_THROWS_AS(Dist::normalized({0.0, 0.0}), Error);
}

TEST_CASE("bhattacharyya examples") {
    CHECK(bhattacharyya(rho_xor(), rho_xor()) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(bhattacharyya(Dist({1, 0}), Dist({0, 1})) == 0.0);
    CHECK(bhattacharyya(rho_xor(), uniform4()) == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-14));
    CHECK_THROWS_AS(bhattacharyya(Dist({1, 0}), uniform4()), ShapeError);
}

TEST_CASE("fisher_rao examples") {
    CHECK(fisher_rao(rho_xor(), rho_xor()) == 0.0);
    CHECK(fisher_rao(Dist({1, 0}), Dist({0, 1})) == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));
    CHECK(fisher_rao(rho_xor(), uniform4()) == doctest::Approx(std::numbers::pi / 4).epsilon(1e-14));
    CHECK_THROWS_AS(fisher_rao(Dist({1, 0}), uniform4()), ShapeError);
}

TEST_CASE("kl_divergence examples") {
    CHECK(kl_divergence(rho_xor(), rho_xor()) == 0.0);
    CHECK(kl_divergence(rho_xor(), uniform4()) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(kl_divergence(Dist({1, 0}), Dist({0, 1})) == kInf);
    CHECK_THROWS_AS(kl_divergence(Dist({1, 0}), uniform4()), ShapeError);
}

TEST_CASE("l2 and total variation examples") {
    CHECK(l2_distance(rho_xor(), rho_xor()) == 0.0);
    CHECK(l2_distance(Dist({1, 0, 0, 0}), Dist({0, 1, 0, 0})) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
    CHECK(l2_distance(rho_xor(), uniform4()) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(total_variation(rho_xor(), rho_xor()) == 0.0);
    CHECK(total_variation(Dist({1, 0}), Dist({0, 1})) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(total_variation(rho_xor(), uniform4()) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("regularizer examples") {
    const ModelSet m = xor_models();
    CHECK(fisher_regularizer(m, rho_xor()) == 0.0);
    CHECK(fisher_regularizer(m, uniform4()) == doctest::Approx(std::numbers::pi / 4).epsilon(1e-14));
    CHECK(fisher_regularizer(m, Dist({1, 0, 0, 0})) == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));

    CHECK(kl_regularizer(m, rho_xor()) == doctest::Approx(0.0));
    CHECK(std::abs(kl_regularizer(m, rho_xor())) < 1e-15);
    CHECK(kl_regularizer(m, uniform4()) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(kl_regularizer(m, Dist({0, 1, 0, 0})) == kInf);

    const ModelSet empty = ModelSet::from_indices(2, {});
    CHECK_THROWS_AS(fisher_regularizer(empty, uniform4()), UnsatisfiableError);
    CHECK_THROWS_AS(kl_regularizer(empty, uniform4()), UnsatisfiableError);
}

TEST_CASE("wmc and semantic loss examples") {
    const ModelSet m = xor_models();
    CHECK(wmc(m, rho_xor()) == 1.0);
    CHECK(wmc(m, uniform4()) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(wmc(ModelSet::from_indices(2, {0, 1, 2, 3}), Dist({0.1, 0.2, 0.3, 0.4})) == doctest::Approx(1.0));
    CHECK_THROWS_AS(wmc(m, Dist({0.5, 0.5})), ShapeError);

    CHECK(semantic_loss(m, rho_xor()) == 0.0);
    CHECK(semantic_loss(m, uniform4()) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(semantic_loss(m, Dist({1, 0, 0, 0})) == kInf);
}

TEST_CASE("combined_loss examples") {
    CHECK(combined_loss(0.3, 0.7, 1.0, 0.1) == doctest::Approx(0.37).epsilon(1e-15));
    CHECK(combined_loss(1.25, 99.0, 1.0, 0.0) == 1.25);
    CHECK(combined_loss(0.0, 2.5, 0.0, 1.0) == 2.5);
}

TEST_CASE("metric axioms on random triples") {
    Rng rng(2024);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t m = 2 + rng.below(15);
        const Dist p = testutil::random_interior(rng, m);
        const Dist q = testutil::random_interior(rng, m);
        const Dist r = testutil::random_interior(rng, m);
        CHECK(std::abs(fisher_rao(p, q) - fisher_rao(q, p)) <= 1e-12);
        CHECK(std::abs(l2_distance(p, q) - l2_distance(q, p)) <= 1e-12);
        CHECK(fisher_rao(p, r) <= fisher_rao(p, q) + fisher_rao(q, r) + 1e-9);
        CHECK(l2_distance(p, r) <= l2_distance(p, q) + l2_distance(q, r) + 1e-9);
        const double fr = fisher_rao(p, q);
        CHECK(fr >= 0.0);
        CHECK(fr <= std::numbers::pi / 2);
        CHECK(kl_divergence(p, q) >= 0.0);
        const double tv = total_variation(p, q);
        CHECK(tv >= 0.0);
        CHECK(tv <= 1.0);
    }
}

TEST_CASE("regularizers agree with the divergences to rho") {
    Rng rng(99);
    for (const auto& l : enumerate_two_var_formulas()) {
        const Dist rho = constraint_distribution(l.models);
        for (int i = 0; i < 100; ++i) {
            const Dist f = testutil::random_interior(rng, 4);
            CHECK(std::abs(fisher_regularizer(l.models, f) - fisher_rao(rho, f)) <= 1e-12);
            CHECK(std::abs(kl_regularizer(l.models, f) - kl_divergence(rho, f)) <= 1e-12);
        }
    }
}

TEST_CASE("wmc of a set and its complement sum to one") {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const std::size_t n = 1 + rng.below(8);
        std::vector<std::uint64_t> idx;
        for (std::uint64_t s = 0; s < (std::uint64_t{1} << n); ++s)
            if (rng.below(2)) idx.push_back(s);
        const ModelSet m = ModelSet::from_indices(n, idx);
        const Dist w = testutil::random_interior(rng, std::size_t{1} << n);
        const double a = wmc(m, w);
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
        CHECK(std::abs(a + wmc(m.complement(), w) - 1.0) <= 1e-12);
    }
}

TEST_CASE("only the divergences have a unique minimizer") {
    // Grid over the 3-simplex with step 1/20.
    const int steps = 20;
    std::vector<Dist> grid;
    for (int a = 0; a <= steps; ++a)
        for (int b = 0; a + b <= steps; ++b)
            for (int c = 0; a + b + c <= steps; ++c) {
                const int d = steps - a - b - c;
                grid.emplace_back(std::vector<double>{double(a) / steps, double(b) / steps, double(c) / steps,
                                                      double(d) / steps});
            }

    for (const auto& l : enumerate_two_var_formulas()) {
        const Dist rho = constraint_distribution(l.models);
        // rho is on the grid only when 20 is divisible by |M|.
        if (steps % l.models.size() != 0) continue;
        for (auto kind : {LossKind::fisher, LossKind::kl}) {
            std::size_t minimizers = 0;
            double best = kInf;
            for (const auto& f : grid) best = std::min(best, constraint_objective(kind, l.models, f));
            for (const auto& f : grid) {
                if (constraint_objective(kind, l.models, f) <= best + 1e-9) {
                    ++minimizers;
                    CHECK(total_variation(f, rho) <= 1e-12);
                }
            }
            CHECK(minimizers == 1);
            CHECK(std::abs(best) <= 1e-12);
        }
        // -W and -log W reach their optimum on every distribution inside M.
        std::size_t inside = 0;
        for (const auto& f : grid) {
            const bool supported = wmc(l.models, f) >= 1.0 - 1e-12;
            if (supported) {
                ++inside;
                CHECK(constraint_objective(LossKind::wmc, l.models, f) == doctest::Approx(-1.0));
                CHECK(std::abs(constraint_objective(LossKind::sloss, l.models, f)) <= 1e-12);
            } else {
                CHECK(constraint_objective(LossKind::wmc, l.models, f) > -1.0 + 1e-12);
                CHECK(constraint_objective(LossKind::sloss, l.models, f) > 1e-12);
            }
        }
        if (l.models.size() > 1) CHECK(inside > 1);
    }
}

TEST_CASE("loss kind names") {
    for (auto k : kAllLossKinds) CHECK(parse_loss_kind(to_string(k)) == k);
    CHECK_THROWS_AS(parse_loss_kind("hinge"), Error);
}

TEST_CASE("constraint_objective matches the named functions") {
    Rng rng(8);
    const ModelSet m = ModelSet::from_indices(3, {0, 3, 5});
    const Dist rho = constraint_distribution(m);
    for (int i = 0; i < 20; ++i) {
        const Dist f = testutil::random_interior(rng, 8);
        CHECK(constraint_objective(LossKind::fisher, m, f) == fisher_regularizer(m, f));
        CHECK(constraint_objective(LossKind::kl, m, f) == kl_regularizer(m, f));
        CHECK(constraint_objective(LossKind::wmc, m, f) == -wmc(m, f));
        CHECK(constraint_objective(LossKind::sloss, m, f) == semantic_loss(m, f));
        CHECK(std::abs(constraint_objective(LossKind::l2, m, f) - l2_distance(rho, f)) <= 1e-12);
    }
}
