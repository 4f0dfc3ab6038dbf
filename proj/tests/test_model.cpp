#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mrfibp/model.hpp"
#include "support.hpp"

using namespace mrfibp;
using namespace mrfibp::testing;

namespace {

FeatureBag two_patch_bag() {
    FeatureBag bag = grid_layout("two", 2, 1, 1, 2);
    for (auto& p : bag.patches) p.feature = Vector::Ones(3);
    return bag;
}

// Plain-loop joint from the model definition: urn term for every column in
// use, Potts term per undirected edge, isotropic Gaussians for X and A.
double joint_oracle(const std::vector<FeatureBag>& bags, const std::vector<BinaryMatrix>& zs, const Matrix& a,
                    const Hyperparams& hp) {
    const double two_pi = 2.0 * std::numbers::pi;
    double total = 0.0;
    std::vector<bool> used(static_cast<std::size_t>(a.rows()), false);
    for (std::size_t i = 0; i < bags.size(); ++i) {
        const auto& z = zs[i];
        const double n = static_cast<double>(z.rows());
        for (Eigen::Index k = 0; k < z.cols(); ++k) {
            double m = 0;
            for (Eigen::Index j = 0; j < z.rows(); ++j) m += z(j, k);
            if (m == 0) continue;
            used[static_cast<std::size_t>(k)] = true;
            total += std::log(std::tgamma(n - m + 1) * std::tgamma(m) / std::tgamma(n + 1));
            for (const auto& [p, q] : bags[i].adjacency)
                if (p < q && z(p, k) == z(q, k)) total += hp.beta;
        }
        for (Eigen::Index j = 0; j < z.rows(); ++j)
            for (Eigen::Index d = 0; d < a.cols(); ++d) {
                double mean = 0;
                for (Eigen::Index k = 0; k < z.cols(); ++k) mean += z(j, k) * a(k, d);
                const double r = bags[i].patches[static_cast<std::size_t>(j)].feature(d) - mean;
                total += -0.5 * std::log(two_pi * hp.sigma_x * hp.sigma_x) - r * r / (2 * hp.sigma_x * hp.sigma_x);
            }
    }
    for (Eigen::Index k = 0; k < a.rows(); ++k)
        if (used[static_cast<std::size_t>(k)])
            for (Eigen::Index d = 0; d < a.cols(); ++d)
                total += -0.5 * std::log(two_pi * hp.sigma_a * hp.sigma_a) -
                         a(k, d) * a(k, d) / (2 * hp.sigma_a * hp.sigma_a);
    return total;
}

} // namespace

TEST_CASE("hyperparameter invariants") {
    Hyperparams hp;
    CHECK_NOTHROW(hp.validate());
    CHECK(hp.alpha == 2.0);
    CHECK(hp.beta == 1.0);
    CHECK(hp.sigma_x == 0.5);
    CHECK(hp.sigma_a == 1.0);
    hp.k_supervised = hp.k_max + 1;
    CHECK_THROWS_AS(hp.validate(), Error);
    hp = {};
    hp.beta = -0.1;
    CHECK_THROWS_AS(hp.validate(), Error);
    hp = {};
    hp.sigma_x = 0;
    CHECK_THROWS_AS(hp.validate(), Error);
}

TEST_CASE("validate_bag") {
    SUBCASE("well-formed two-patch bag passes") { CHECK(validate_bag(two_patch_bag()).ok()); }
    SUBCASE("asymmetric adjacency names the pair") {
        auto bag = two_patch_bag();
        bag.adjacency = {{0, 1}};
        const auto r = validate_bag(bag);
        REQUIRE_FALSE(r.ok());
        CHECK(r.violations.front().find("(0,1)") != std::string::npos);
    }
    SUBCASE("overlapping masks are reported") {
        auto bag = two_patch_bag();
        bag.patches[1].mask = {{0, 2}};
        const auto r = validate_bag(bag);
        REQUIRE_FALSE(r.ok());
        bool overlap = false;
        for (const auto& v : r.violations) overlap |= v.find("overlap") != std::string::npos;
        CHECK(overlap);
    }
    SUBCASE("self loops and unknown endpoints") {
        auto bag = two_patch_bag();
        bag.adjacency.push_back({1, 1});
        bag.adjacency.push_back({0, 7});
        bag.adjacency.push_back({7, 0});
        CHECK(validate_bag(bag).violations.size() >= 2);
    }
    SUBCASE("uncovered pixels") {
        auto bag = two_patch_bag();
        bag.width = 3;
        CHECK_FALSE(validate_bag(bag).ok());
    }
}

TEST_CASE("FactorState bookkeeping") {
    FactorState s(3, 2);
    s.set(0, 1, true);
    s.set(2, 1, true);
    s.set(2, 1, true);
    CHECK(s.count(1) == 2);
    CHECK(s.count(0) == 0);
    s.resize_factors(4);
    CHECK(s.k_active() == 4);
    CHECK(s.count(3) == 0);
    s.remove_factor(0);
    CHECK(s.count(0) == 2);
    CHECK(s.k_active() == 3);
    const auto t = FactorState::from_z(s.z());
    CHECK(t == s);
    Hyperparams hp;
    CHECK_NOTHROW(s.check_invariants(hp));
    hp.k_supervised = 4;
    CHECK_THROWS_AS(s.check_invariants(hp), Error);
}

TEST_CASE("log_joint: single patch with zero residual") {
    Hyperparams hp;
    hp.beta = 0.0;
    Matrix x(1, 3);
    x << 0.3, -1.2, 2.0;
    const auto bag = chain_bag("one", 1, x);
    const FactorState s = FactorState::from_z(BinaryMatrix::Ones(1, 1));
    const double got = log_joint(std::vector{bag}, std::vector{s}, point_model(x, hp), hp);
    const double d = 3.0;
    const double likelihood = -0.5 * d * std::log(2 * std::numbers::pi * hp.sigma_x * hp.sigma_x);
    const double prior = -0.5 * d * std::log(2 * std::numbers::pi) - 0.5 * x.squaredNorm();
    CHECK(got == doctest::Approx(likelihood + prior).epsilon(1e-12));
}

TEST_CASE("log_joint: potts term counts each undirected edge once") {
    // Three mutually adjacent patches, one all-on column: three agreeing edges.
    Matrix x = Matrix::Zero(3, 1);
    FeatureBag bag = chain_bag("tri", 3, x);
    bag.adjacency.push_back({0, 2});
    bag.adjacency.push_back({2, 0});
    const FactorState s = FactorState::from_z(BinaryMatrix::Ones(3, 1));
    Hyperparams hp;
    hp.beta = 0.0;
    const auto model = point_model(Matrix::Ones(1, 1), hp);
    const double flat = log_joint(std::vector{bag}, std::vector{s}, model, hp);
    hp.beta = 2.0;
    const double coupled = log_joint(std::vector{bag}, std::vector{s}, model, hp);
    CHECK(coupled - flat == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("log_joint matches a plain-loop oracle on every small configuration") {
    std::mt19937_64 rng(11);
    Hyperparams hp;
    hp.beta = 0.7;
    hp.sigma_x = 0.8;
    hp.sigma_a = 1.3;
    const Matrix a = gaussian_matrix(2, 2, rng);
    const Matrix x = gaussian_matrix(3, 2, rng);
    const auto bag = chain_bag("c", 3, x);
    for (unsigned bits = 0; bits < 64; ++bits) {
        const auto z = bits_matrix(3, 2, bits);
        const double got = log_joint(std::vector{bag}, std::vector{FactorState::from_z(z)}, point_model(a, hp), hp);
        const double want = joint_oracle({bag}, {z}, a, hp);
        CHECK(relative_error(got, want) < 1e-12);
    }
}

TEST_CASE("log_joint invariances") {
    std::mt19937_64 rng(5);
    Hyperparams hp;
    const Matrix a = gaussian_matrix(3, 2, rng);
    const Matrix x = gaussian_matrix(4, 2, rng);
    const auto bag = chain_bag("c", 4, x);
    BinaryMatrix z(4, 3);
    z << 1, 0, 0, 1, 1, 0, 0, 1, 0, 0, 0, 0;
    const double base = log_joint(std::vector{bag}, std::vector{FactorState::from_z(z)}, point_model(a, hp), hp);

    SUBCASE("patch permutation") {
        // Reverse the patch order and relabel adjacency accordingly.
        const std::vector<int> perm = {3, 2, 1, 0};
        FeatureBag p = bag;
        BinaryMatrix pz(4, 3);
        for (int j = 0; j < 4; ++j) {
            p.patches[static_cast<std::size_t>(j)] = bag.patches[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])];
            pz.row(j) = z.row(perm[static_cast<std::size_t>(j)]);
        }
        const double got = log_joint(std::vector{p}, std::vector{FactorState::from_z(pz)}, point_model(a, hp), hp);
        CHECK(relative_error(got, base) < 1e-12);
    }
    SUBCASE("dropping an all-zero column") {
        const BinaryMatrix dropped = z.leftCols(2);
        const double got = log_joint(std::vector{bag}, std::vector{FactorState::from_z(dropped)},
                                     point_model(a.topRows(2), hp), hp);
        CHECK(relative_error(got, base) < 1e-12);
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(log_joint(std::vector{bag}, std::vector{FactorState::from_z(z)}, point_model(a.topRows(2), hp), hp),
                        Error);
    }
}

TEST_CASE("AppearanceModel validation and free names") {
    Hyperparams hp;
    auto m = point_model(Matrix::Zero(2, 3), hp);
    CHECK_NOTHROW(m.validate());
    m.covariance(0, 1) = 0.5;
    CHECK_THROWS_AS(m.validate(), Error);
    const std::vector<std::string> names = {"red", "free-0", "free-4", "free-x"};
    CHECK(next_free_serial(names) == 5);
    CHECK(free_factor_name(5) == "free-5");
}
