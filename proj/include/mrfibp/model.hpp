#pragma once

// Core value types of the MRF-IBP factor model and its unnormalized joint.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mrfibp/error.hpp"

namespace mrfibp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using BinaryMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct Hyperparams {
    double alpha = 2.0;   ///< IBP sparsity prior
    double beta = 1.0;    ///< Potts coupling between neighbouring patches
    double sigma_x = 0.5; ///< observation noise std
    double sigma_a = 1.0; ///< appearance prior std
    std::size_t k_supervised = 0;
    std::size_t k_max = 100;
    std::uint64_t rng_seed = 0;

    /// Throws Error(invalid_argument) when an invariant does not hold.
    void validate() const;

    bool operator==(const Hyperparams&) const = default;
};

/// A horizontal run of pixels, addressed by row-major linear index.
struct PixelRun {
    std::int64_t start = 0;
    std::int64_t length = 0;

    bool operator==(const PixelRun&) const = default;
};

struct Patch {
    int id = 0;
    std::vector<PixelRun> mask;
    Vector feature;
};

/// One image as a bag of super-pixel patches plus their adjacency graph.
/// Adjacency pairs are directed entries over patch ids; a well-formed bag
/// lists both (a, b) and (b, a).
struct FeatureBag {
    std::string image_id;
    int width = 0;
    int height = 0;
    std::vector<Patch> patches;
    std::vector<std::pair<int, int>> adjacency;

    std::size_t size() const { return patches.size(); }
    std::size_t feature_dim() const {
        return patches.empty() ? 0 : static_cast<std::size_t>(patches.front().feature.size());
    }
};

struct ValidationReport {
    std::vector<std::string> violations;

    bool ok() const { return violations.empty(); }
};

ValidationReport validate_bag(const FeatureBag& bag);

/// Neighbour lists indexed by patch position (not patch id).
using NeighborLists = std::vector<std::vector<std::size_t>>;

/// Throws Error(validation) if an adjacency endpoint is not a patch id.
NeighborLists neighbor_lists(const FeatureBag& bag);

/// N x D matrix whose row j is the feature of patch j.
Matrix feature_matrix(const FeatureBag& bag);

/// Patch position covering each pixel (row-major), -1 where uncovered.
std::vector<std::int32_t> pixel_labels(const FeatureBag& bag);

enum class SupervisionMode { none, weak, strong };

std::string_view to_string(SupervisionMode mode);
SupervisionMode supervision_mode_from_string(std::string_view text);

/// Strong (per patch) or weak (per image) annotations of the first
/// k_supervised factors. `annotated`, when non-empty, marks which of those
/// factors the source dataset labels at all; the rest pass through.
struct SupervisionLabels {
    SupervisionMode mode = SupervisionMode::none;
    std::vector<std::uint8_t> weak;
    std::vector<std::vector<std::uint8_t>> strong;
    std::vector<std::uint8_t> foreground;
    std::vector<std::uint8_t> annotated;

    bool is_annotated(std::size_t k) const {
        return annotated.empty() || (k < annotated.size() && annotated[k] != 0);
    }

    bool operator==(const SupervisionLabels&) const = default;
};

/// Throws Error(validation) when label shapes disagree with the bag or K_s.
void validate_labels(const SupervisionLabels& labels, const FeatureBag& bag,
                     std::size_t k_supervised);

/// Per-image binary factor matrix with maintained column counts m_k.
/// Only the first k_active columns are stored; anything beyond is zero.
class FactorState {
  public:
    FactorState() = default;
    FactorState(std::size_t patches, std::size_t factors);

    /// Adopts a 0/1 matrix and derives the column counts.
    static FactorState from_z(BinaryMatrix z);

    std::size_t patches() const { return static_cast<std::size_t>(z_.rows()); }
    std::size_t k_active() const { return static_cast<std::size_t>(z_.cols()); }

    bool get(std::size_t j, std::size_t k) const { return z_(j, k) != 0; }
    void set(std::size_t j, std::size_t k, bool on);

    int count(std::size_t k) const { return counts_[k]; }
    const std::vector<int>& counts() const { return counts_; }
    const BinaryMatrix& z() const { return z_; }

    /// Grows with zero columns or drops trailing columns.
    void resize_factors(std::size_t factors);
    void remove_factor(std::size_t k);

    /// Z as a real matrix, zero-padded to `factors` columns.
    Matrix as_real(std::size_t factors) const;

    /// Checks counts against z and K_s <= k_active <= k_max.
    void check_invariants(const Hyperparams& hp) const;

    bool operator==(const FactorState& other) const {
        return z_ == other.z_ && counts_ == other.counts_;
    }

  private:
    BinaryMatrix z_;
    std::vector<int> counts_;
};

struct AppearanceModel {
    Matrix mean;       ///< K x D posterior mean of the factor appearances
    Matrix covariance; ///< K x K, shared across feature dimensions
    Matrix appearance; ///< K x D values the sampler conditions on
    std::vector<std::string> factor_names;
    Hyperparams hyperparams;

    std::size_t factors() const { return static_cast<std::size_t>(mean.rows()); }
    std::size_t feature_dim() const { return static_cast<std::size_t>(mean.cols()); }

    void validate() const;

    /// Point-estimate model: appearance set to the mean.
    static AppearanceModel from_posterior(Matrix mean, Matrix covariance,
                                          std::vector<std::string> names,
                                          const Hyperparams& hp);
};

std::string free_factor_name(std::size_t serial);

/// Smallest serial not yet used by a "free-<n>" name.
std::size_t next_free_serial(std::span<const std::string> names);

/// Unnormalized log joint of appearances, factor matrices and features.
/// Columns with m_k = 0 in an image are inactive there; factors unused in
/// every image carry no appearance-prior term. Constants that cancel at
/// fixed K+ are dropped. The Potts term is counted once per undirected edge.
double log_joint(std::span<const FeatureBag> bags, std::span<const FactorState> states,
                 const AppearanceModel& appearance, const Hyperparams& hp);

} // namespace mrfibp
