#include "mrfibp/transfer.hpp"

#include <algorithm>

namespace mrfibp {

AppearanceModel extend_prior(const AppearanceModel& source, std::size_t k_target,
                             const Hyperparams& hp) {
    const auto k_source = source.factors();
    if (k_target < k_source)
        throw Error(ErrorCode::invalid_argument, "k_target is smaller than the source model");
    if (k_target > hp.k_max)
        throw Error(ErrorCode::invalid_argument,
                    "k_target " + std::to_string(k_target) + " exceeds k_max " + std::to_string(hp.k_max));
    if (k_target == k_source) return source;

    const auto ks = static_cast<Eigen::Index>(k_source);
    const auto kt = static_cast<Eigen::Index>(k_target);
    const auto d = source.mean.cols();
    const Matrix& source_a = source.appearance.size() != 0 ? source.appearance : source.mean;

    AppearanceModel out;
    out.mean = Matrix::Zero(kt, d);
    out.mean.topRows(ks) = source.mean;
    out.appearance = Matrix::Zero(kt, d);
    out.appearance.topRows(ks) = source_a;
    out.covariance = Matrix::Zero(kt, kt);
    out.covariance.topLeftCorner(ks, ks) = source.covariance;
    out.covariance.bottomRightCorner(kt - ks, kt - ks) =
        hp.sigma_a * hp.sigma_a * Matrix::Identity(kt - ks, kt - ks);
    out.factor_names = source.factor_names;
    auto serial = next_free_serial(out.factor_names);
    while (out.factor_names.size() < k_target) out.factor_names.push_back(free_factor_name(serial++));
    out.hyperparams = source.hyperparams;
    return out;
}

AppearanceModel adapt_appearance(std::span<const FactorState> states,
                                 std::span<const PreparedImage> images,
                                 const AppearanceModel& prior, const Hyperparams& hp) {
    const auto k = static_cast<Eigen::Index>(prior.factors());
    for (const auto& img : images)
        if (img.features.cols() != prior.mean.cols())
            throw Error(ErrorCode::dimension_mismatch, "target feature dimension differs from the prior");
    const auto stats = sufficient_stats(states, images, prior.factors());
    if (stats.cross.cols() != prior.mean.cols() && !images.empty())
        throw Error(ErrorCode::dimension_mismatch, "target feature dimension differs from the prior");

    if (k > 0) {
        Eigen::LLT<Matrix> check(prior.covariance);
        if (check.info() != Eigen::Success)
            throw Error(ErrorCode::validation, "singular prior covariance");
    }

    const double s2 = hp.sigma_x * hp.sigma_x;
    const Matrix& sigma = prior.covariance;
    Matrix cross = stats.cross;
    if (images.empty()) cross = Matrix::Zero(k, prior.mean.cols());

    const Matrix system = Matrix::Identity(k, k) + sigma * stats.gram / s2;
    const Eigen::PartialPivLU<Matrix> lu(system);
    Matrix mean = lu.solve(prior.mean + sigma * cross / s2);
    Matrix cov = lu.solve(sigma);
    cov = (0.5 * (cov + cov.transpose())).eval();
    return AppearanceModel::from_posterior(std::move(mean), std::move(cov), prior.factor_names, hp);
}

AppearanceModel adapt_appearance(std::span<const FactorState> states,
                                 std::span<const FeatureBag> bags, const AppearanceModel& prior,
                                 const Hyperparams& hp) {
    const auto images = prepare_images(bags);
    return adapt_appearance(states, images, prior, hp);
}

AppearanceModel empty_model(std::size_t feature_dim, const Hyperparams& hp) {
    return AppearanceModel::from_posterior(Matrix(0, static_cast<Eigen::Index>(feature_dim)),
                                           Matrix(0, 0), {}, hp);
}

TargetResult adapt_target(std::span<const FeatureBag> target_bags, const AppearanceModel& source,
                          const Hyperparams& hp, const SweepConfig& cfg, std::size_t k_target) {
    cfg.validate();
    if (target_bags.empty()) throw Error(ErrorCode::invalid_argument, "adapt_target: empty target");
    for (const auto& bag : target_bags)
        if (bag.feature_dim() != source.feature_dim())
            throw Error(ErrorCode::dimension_mismatch,
                        bag.image_id + ": feature dimension " + std::to_string(bag.feature_dim()) +
                            " differs from source " + std::to_string(source.feature_dim()));

    AppearanceModel prior = extend_prior(source, k_target, hp);
    const auto images = prepare_images(target_bags);

    std::vector<FactorState> states;
    states.reserve(images.size());
    for (const auto& img : images) {
        Rng rng = make_stream(hp.rng_seed, "target-init:" + img.bag->image_id);
        FactorState state(img.size(), k_target);
        for (std::size_t j = 0; j < state.patches(); ++j)
            for (std::size_t k = 0; k < k_target; ++k) state.set(j, k, bernoulli(rng, 0.5));
        states.push_back(std::move(state));
    }

    // Labels never clamp here: everything is unsupervised on the target.
    Hyperparams sweep_hp = hp;
    sweep_hp.k_supervised = 0;

    AppearanceModel model = prior;
    if (model.appearance.size() == 0) model.appearance = model.mean;
    std::vector<Matrix> marginals(images.size());
    const auto first_retained = cfg.iterations - cfg.retain_samples;

    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        sweep_all(states, images, {}, model, sweep_hp, cfg, t);
        if (model.factors() > prior.factors()) {
            // New target factors get the free-factor prior.
            const auto k0 = static_cast<Eigen::Index>(prior.factors());
            const auto n = static_cast<Eigen::Index>(model.factors()) - k0;
            AppearanceModel grown = extend_prior(prior, model.factors(), hp);
            grown.appearance.bottomRows(n) = model.appearance.bottomRows(n);
            grown.factor_names = model.factor_names;
            prior = std::move(grown);
        }
        for (auto& s : states) s.resize_factors(model.factors());

        if (cfg.update_appearance && (t + 1) % cfg.appearance_resample_period == 0) {
            AppearanceModel next = adapt_appearance(states, images, prior, hp);
            if (cfg.sample_appearance && t < cfg.burn_in) {
                Rng rng = make_stream(hp.rng_seed, "target-appearance", t);
                next.appearance = draw_appearance(next.mean, next.covariance, rng);
            }
            model = std::move(next);
        }

        if (t >= first_retained) {
            for (std::size_t i = 0; i < images.size(); ++i) {
                const Matrix z = states[i].as_real(model.factors());
                auto& acc = marginals[i];
                if (acc.size() == 0) acc = Matrix::Zero(z.rows(), z.cols());
                if (acc.cols() < z.cols()) {
                    const auto old = acc.cols();
                    acc.conservativeResize(Eigen::NoChange, z.cols());
                    acc.rightCols(z.cols() - old).setZero();
                }
                acc += z;
            }
        }
    }
    for (auto& acc : marginals) acc /= static_cast<double>(cfg.retain_samples);
    return {std::move(model), std::move(states), std::move(marginals)};
}

} // namespace mrfibp
