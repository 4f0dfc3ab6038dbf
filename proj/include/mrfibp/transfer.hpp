#pragma once

// Unsupervised adaptation of a source appearance model to a target image
// set, with the source posterior acting as the prior.

#include <cstddef>
#include <span>
#include <vector>

#include "mrfibp/gibbs.hpp"
#include "mrfibp/model.hpp"

namespace mrfibp {

/// Appends k_target - K_source free factors with a N(0, sigma_a^2 I) prior,
/// block-diagonal to the source covariance.
AppearanceModel extend_prior(const AppearanceModel& source, std::size_t k_target,
                             const Hyperparams& hp);

/// Posterior of A on the target data under the prior N(mu_S, Sigma_S):
///   Sigma_T = sigma_x^2 (Z^T Z + sigma_x^2 Sigma_S^-1)^-1
///   mu_T    = Sigma_T (sigma_x^-2 Z^T X + Sigma_S^-1 mu_S)
/// evaluated as (I + Sigma_S G / sigma_x^2)^-1 applied to Sigma_S and to
/// mu_S + Sigma_S Z^T X / sigma_x^2, which is the same expression without
/// inverting Sigma_S and returns the prior bit-for-bit on empty data.
AppearanceModel adapt_appearance(std::span<const FactorState> states,
                                 std::span<const PreparedImage> images,
                                 const AppearanceModel& prior, const Hyperparams& hp);
AppearanceModel adapt_appearance(std::span<const FactorState> states,
                                 std::span<const FeatureBag> bags, const AppearanceModel& prior,
                                 const Hyperparams& hp);

struct TargetResult {
    AppearanceModel model;
    std::vector<FactorState> states;
    /// Per image, the mean of z over the last retain_samples sweeps (N x K).
    std::vector<Matrix> marginals;
};

/// Model with no factors, for learning the target from scratch.
AppearanceModel empty_model(std::size_t feature_dim, const Hyperparams& hp);

TargetResult adapt_target(std::span<const FeatureBag> target_bags, const AppearanceModel& source,
                          const Hyperparams& hp, const SweepConfig& cfg, std::size_t k_target);

} // namespace mrfibp
