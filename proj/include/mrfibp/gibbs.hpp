#pragma once

// Auxiliary-phase learning: per-patch Gibbs updates of the binary factor
// matrix (urn prior x Potts coupling x Gaussian likelihood), supervision
// clamping, Poisson new-factor birth and the conjugate appearance posterior.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrfibp/model.hpp"
#include "mrfibp/rng.hpp"

namespace mrfibp {

/// Contiguous range of supervised factor indices.
struct FactorBlock {
    std::size_t begin = 0;
    std::size_t count = 0;

    bool contains(std::size_t k) const { return k >= begin && k < begin + count; }
};

struct SweepConfig {
    std::size_t iterations = 2000;
    std::size_t appearance_resample_period = 1;
    bool birth_enabled = true;
    std::size_t birth_truncation = 3;
    /// Draw A from its posterior during burn-in; the mean is used afterwards.
    bool sample_appearance = true;
    std::size_t burn_in = 500;
    std::size_t retain_samples = 1;
    /// False freezes the appearance at its initial value (NoAdapt).
    bool update_appearance = true;
    /// Worker threads for per-image sweeps; results do not depend on it.
    std::size_t threads = 1;
    /// Background factors: off on foreground patches, while the remaining
    /// supervised factors are off on background patches.
    FactorBlock background{};

    void validate() const;

    static SweepConfig auxiliary_defaults();
    static SweepConfig target_defaults();
};

/// Bag with the derived data the sampler reads repeatedly.
struct PreparedImage {
    const FeatureBag* bag = nullptr;
    NeighborLists neighbors;
    Matrix features;

    std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
};

PreparedImage prepare_image(const FeatureBag& bag);
std::vector<PreparedImage> prepare_images(std::span<const FeatureBag> bags);

/// p(z_jk = 1 | rest) for an unsupervised cell. Zero when no other patch of
/// the image uses factor k.
double factor_conditional(const FactorState& state, const FeatureBag& bag,
                          const AppearanceModel& appearance, std::size_t j, std::size_t k,
                          const Hyperparams& hp);
double factor_conditional(const FactorState& state, const PreparedImage& image,
                          const Matrix& appearance, std::size_t j, std::size_t k,
                          const Hyperparams& hp);

/// Value a cell is clamped to by the labels, if any.
std::optional<bool> clamped_value(const SupervisionLabels& labels, std::size_t j, std::size_t k,
                                  std::size_t k_supervised, FactorBlock background = {});

/// Replaces the unsupervised probability according to the labels: strong
/// cells become 0/1, weak labels multiply the z = 1 weight by L_k.
double apply_supervision(double raw, const SupervisionLabels& labels, std::size_t j,
                         std::size_t k, std::size_t k_supervised, FactorBlock background = {});

/// Samples n ~ p(n) Poisson(alpha / N) N(r; 0, (sigma_x^2 + n sigma_a^2) I)
/// over n <= birth_truncation, where r is the current residual of patch j,
/// and appends n columns active only at j with their appearance rows drawn
/// from the posterior given r. Returns the number of new factors.
std::size_t birth_new_factors(FactorState& state, const FeatureBag& bag,
                              AppearanceModel& appearance, std::size_t j, const Hyperparams& hp,
                              const SweepConfig& cfg, Rng& rng);

/// Appearance rows of factors born during one image sweep, in column order
/// after the model's factors.
struct SweepOutcome {
    Matrix born_rows;
};

/// One pass over patches (ascending) and factors (ascending), then births at
/// each patch when enabled.
SweepOutcome sweep_image(FactorState& state, const PreparedImage& image,
                         const AppearanceModel& appearance, const SupervisionLabels& labels,
                         const Hyperparams& hp, const SweepConfig& cfg, Rng& rng);
SweepOutcome sweep_image(FactorState& state, const FeatureBag& bag,
                         const AppearanceModel& appearance, const SupervisionLabels& labels,
                         const Hyperparams& hp, const SweepConfig& cfg, Rng& rng);

/// Sweeps every image once against a fixed appearance snapshot, then merges
/// births into the model in image order. Each image draws from its own
/// stream (rng_seed, image_id, sweep_index), so the thread count does not
/// change the outcome. `labels` may be empty (no supervision).
void sweep_all(std::vector<FactorState>& states, std::span<const PreparedImage> images,
               std::span<const SupervisionLabels> labels, AppearanceModel& model,
               const Hyperparams& hp, const SweepConfig& cfg, std::size_t sweep_index);

/// Z~^T Z~ and Z~^T X~ accumulated over all images.
struct SufficientStats {
    Matrix gram;
    Matrix cross;
};

SufficientStats sufficient_stats(std::span<const FactorState> states,
                                 std::span<const PreparedImage> images, std::size_t factors);

/// Gaussian posterior of A under the isotropic N(0, sigma_a^2 I) prior.
/// With `draw` the returned appearance is a posterior sample; otherwise it
/// equals the mean. Names beyond `names` are generated.
AppearanceModel sample_appearance(std::span<const FactorState> states,
                                  std::span<const PreparedImage> images, const Hyperparams& hp,
                                  bool draw, Rng& rng, std::span<const std::string> names = {});
AppearanceModel sample_appearance(std::span<const FactorState> states,
                                  std::span<const FeatureBag> bags, const Hyperparams& hp,
                                  const SweepConfig& cfg, Rng& rng,
                                  std::span<const std::string> names = {});

/// Appearance = mean + chol(covariance) E with E standard normal.
Matrix draw_appearance(const Matrix& mean, const Matrix& covariance, Rng& rng);

struct LabeledBag {
    FeatureBag bag;
    SupervisionLabels labels;
};

/// One annotated source. Label vectors follow `vocabulary` order; it may
/// cover only part of the global supervised vocabulary.
struct Dataset {
    std::string name;
    std::vector<std::string> vocabulary;
    std::vector<LabeledBag> items;
};

/// Union of dataset vocabularies in first-appearance order. Throws
/// vocabulary_mismatch unless it has exactly k_supervised names.
std::vector<std::string> merge_vocabularies(std::span<const Dataset> datasets,
                                            std::size_t k_supervised);

/// Re-expresses a dataset's labels over the global vocabulary, marking the
/// factors it does not annotate.
SupervisionLabels align_labels(const SupervisionLabels& labels,
                               std::span<const std::string> local_vocabulary,
                               std::span<const std::string> global_vocabulary);

struct TrainingResult {
    AppearanceModel model;
    std::vector<FactorState> states;
};

using SweepObserver = std::function<void(std::size_t sweep, const AppearanceModel& model,
                                         std::span<const FactorState> states)>;

TrainingResult train_auxiliary(std::span<const Dataset> datasets, const Hyperparams& hp,
                               const SweepConfig& cfg, const SweepObserver& observer = {});

namespace detail {

/// Sweep fast path: probability from the dot product of the residual with
/// z_jk removed against A_k. Exposed for tests.
double conditional_from_residual(double residual_dot, double row_norm2, int others_on,
                                 std::size_t patches, std::size_t neighbors_on,
                                 std::size_t neighbors_off, const Hyperparams& hp);

} // namespace detail

} // namespace mrfibp
