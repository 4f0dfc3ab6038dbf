#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mrfibp/transfer.hpp"
#include "support.hpp"

using namespace mrfibp;
using namespace mrfibp::testing;

namespace {

Matrix random_spd(Eigen::Index k, std::mt19937_64& rng) {
    const Matrix b = gaussian_matrix(k, k, rng);
    return b * b.transpose() + 0.5 * Matrix::Identity(k, k);
}

struct Instance {
    FeatureBag bag;
    FactorState state;
    Matrix z;
    Matrix x;
};

Instance random_instance(Eigen::Index n, Eigen::Index k, Eigen::Index d, std::mt19937_64& rng) {
    Instance in;
    in.x = gaussian_matrix(n, d, rng);
    BinaryMatrix z(n, k);
    std::bernoulli_distribution coin(0.5);
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = coin(rng);
    in.bag = chain_bag("t", static_cast<int>(n), in.x);
    in.state = FactorState::from_z(z);
    in.z = z.cast<double>();
    return in;
}

AppearanceModel prior_model(const Matrix& mean, const Matrix& cov, const Hyperparams& hp) {
    std::vector<std::string> names;
    for (Eigen::Index k = 0; k < mean.rows(); ++k) names.push_back("s" + std::to_string(k));
    return AppearanceModel::from_posterior(mean, cov, names, hp);
}

} // namespace

TEST_CASE("extend_prior") {
    Hyperparams hp;
    hp.sigma_a = 1.5;
    std::mt19937_64 rng(3);
    const auto source = prior_model(gaussian_matrix(6, 4, rng), random_spd(6, rng), hp);

    SUBCASE("same size is the identity") {
        const auto same = extend_prior(source, 6, hp);
        CHECK(same.mean == source.mean);
        CHECK(same.covariance == source.covariance);
        CHECK(same.factor_names == source.factor_names);
    }
    SUBCASE("new block is zero-mean, isotropic and decoupled") {
        const auto ext = extend_prior(source, 10, hp);
        CHECK(ext.factors() == 10);
        CHECK(ext.mean.topRows(6) == source.mean);
        CHECK(ext.mean.bottomRows(4).isZero(0.0));
        CHECK(ext.covariance.topLeftCorner(6, 6) == source.covariance);
        CHECK(ext.covariance.topRightCorner(6, 4).isZero(0.0));
        CHECK(ext.covariance.bottomLeftCorner(4, 6).isZero(0.0));
        CHECK(ext.covariance.bottomRightCorner(4, 4) == 2.25 * Matrix::Identity(4, 4));
        CHECK(ext.covariance.llt().info() == Eigen::Success);
        CHECK(ext.factor_names[6].starts_with("free-"));
    }
    SUBCASE("a 60-factor source grows to 80") {
        hp.k_max = 100;
        const auto big = prior_model(gaussian_matrix(60, 5, rng), random_spd(60, rng), hp);
        const auto ext = extend_prior(big, 80, hp);
        CHECK(ext.factors() == 80);
        CHECK(ext.mean.bottomRows(20).isZero(0.0));
        CHECK(ext.covariance.llt().info() == Eigen::Success);
    }
    SUBCASE("bounds") {
        hp.k_max = 8;
        CHECK_THROWS_AS(extend_prior(source, 9, hp), Error);
        CHECK_THROWS_AS(extend_prior(source, 5, hp), Error);
    }
}

TEST_CASE("adapt_appearance against the printed precision form") {
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        Hyperparams hp;
        hp.sigma_x = 0.4 + 0.1 * trial;
        const auto in = random_instance(7, 3, 2, rng);
        const Matrix mu_s = gaussian_matrix(3, 2, rng);
        const Matrix sigma_s = random_spd(3, rng);
        const auto t = adapt_appearance(std::vector{in.state}, std::vector{in.bag}, prior_model(mu_s, sigma_s, hp), hp);

        const double s2 = hp.sigma_x * hp.sigma_x;
        const Matrix sigma_s_inv = gauss_jordan_solve(sigma_s, Matrix::Identity(3, 3));
        const Matrix precision = gram_oracle(in.z) + s2 * sigma_s_inv;
        const Matrix sigma_t = s2 * gauss_jordan_solve(precision, Matrix::Identity(3, 3));
        const Matrix mu_t = sigma_t * (cross_oracle(in.z, in.x) / s2 + sigma_s_inv * mu_s);
        CHECK(max_abs_diff(t.covariance, sigma_t) < 1e-10);
        CHECK(max_abs_diff(t.mean, mu_t) < 1e-10);
    }
}

TEST_CASE("adapt_appearance limit identities") {
    std::mt19937_64 rng(42);
    Hyperparams hp;
    hp.sigma_x = 0.6;
    hp.sigma_a = 1.2;

    SUBCASE("empty target returns the prior bit for bit") {
        auto in = random_instance(5, 4, 3, rng);
        in.state = FactorState(5, 4);
        const auto prior = prior_model(gaussian_matrix(4, 3, rng), random_spd(4, rng), hp);
        const auto t = adapt_appearance(std::vector{in.state}, std::vector{in.bag}, prior, hp);
        CHECK(t.mean == prior.mean);
        CHECK(t.covariance == prior.covariance);
    }
    SUBCASE("uninformative prior reproduces the auxiliary posterior") {
        const auto in = random_instance(9, 3, 2, rng);
        const auto flat = prior_model(Matrix::Zero(3, 2), hp.sigma_a * hp.sigma_a * Matrix::Identity(3, 3), hp);
        const auto t = adapt_appearance(std::vector{in.state}, std::vector{in.bag}, flat, hp);
        SweepConfig cfg;
        cfg.sample_appearance = false;
        Rng r = make_stream(0, "x");
        const auto s = sample_appearance(std::vector{in.state}, std::vector{in.bag}, hp, cfg, r);
        CHECK(max_abs_diff(t.mean, s.mean) <= 1e-10 * std::max(1.0, s.mean.cwiseAbs().maxCoeff()));
        CHECK(max_abs_diff(t.covariance, s.covariance) <= 1e-10 * std::max(1.0, s.covariance.cwiseAbs().maxCoeff()));
    }
    SUBCASE("a near-certain source pins the target mean") {
        const auto in = random_instance(12, 3, 2, rng);
        const Matrix mu_s = gaussian_matrix(3, 2, rng);
        const auto prior = prior_model(mu_s, 1e-8 * random_spd(3, rng), hp);
        const auto t = adapt_appearance(std::vector{in.state}, std::vector{in.bag}, prior, hp);
        CHECK((t.mean - mu_s).norm() < 1e-3);
    }
}

TEST_CASE("adapt_target") {
    Hyperparams hp;
    hp.sigma_x = 0.3;
    std::mt19937_64 rng(5);
    const auto source = prior_model(gaussian_matrix(4, 3, rng), 0.01 * Matrix::Identity(4, 4), hp);
    std::vector<FeatureBag> target;
    for (int i = 0; i < 4; ++i) {
        FeatureBag bag = grid_layout("t" + std::to_string(i), 4, 4, 4, 4);
        for (auto& p : bag.patches) p.feature = gaussian_matrix(3, 1, rng);
        target.push_back(std::move(bag));
    }
    SweepConfig cfg = SweepConfig::target_defaults();
    cfg.iterations = 30;
    cfg.burn_in = 5;
    cfg.retain_samples = 10;

    SUBCASE("k_target rows and marginals in range") {
        const auto r = adapt_target(target, source, hp, cfg, 10);
        CHECK(r.model.factors() == 10);
        REQUIRE(r.marginals.size() == 4);
        for (const auto& m : r.marginals) {
            CHECK(m.rows() == 16);
            CHECK(m.minCoeff() >= 0.0);
            CHECK(m.maxCoeff() <= 1.0);
        }
    }
    SUBCASE("frozen appearance keeps the extended prior") {
        cfg.update_appearance = false;
        const auto r = adapt_target(target, source, hp, cfg, 10);
        const auto ext = extend_prior(source, 10, hp);
        CHECK(r.model.mean == ext.mean);
        CHECK(r.model.covariance == ext.covariance);
    }
    SUBCASE("deterministic, with any thread count") {
        const auto a = adapt_target(target, source, hp, cfg, 8);
        cfg.threads = 3;
        const auto b = adapt_target(target, source, hp, cfg, 8);
        CHECK(a.model.mean == b.model.mean);
        CHECK(a.states == b.states);
        CHECK(a.marginals == b.marginals);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(adapt_target({}, source, hp, cfg, 8), Error);
        auto wrong = target;
        for (auto& p : wrong[0].patches) p.feature = Vector::Zero(5);
        CHECK_THROWS_AS(adapt_target(wrong, source, hp, cfg, 8), Error);
    }
    SUBCASE("learning from scratch") {
        const auto r = adapt_target(target, empty_model(3, hp), hp, cfg, 6);
        CHECK(r.model.factors() == 6);
    }
}
