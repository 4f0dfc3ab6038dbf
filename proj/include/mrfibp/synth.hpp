#pragma once

// Planted-factor generator: a labelled source domain, a shifted unlabelled
// target domain with two views per identity, and the ground truth for both.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mrfibp/gibbs.hpp"
#include "mrfibp/model.hpp"

namespace mrfibp {

struct SyntheticSpec {
    std::size_t n_images = 50;     ///< source images
    std::size_t n_identities = 25; ///< target identities, two views each
    int grid = 8;                  ///< patches per side
    int width = 48;
    int height = 128;
    std::size_t k_true = 8;
    std::size_t d = 16;
    double noise_std = 0.1;
    double coherence = 0.8;          ///< probability a patch copies a visited neighbour
    double density = 0.3;            ///< probability of a fresh draw being on
    double appearance_scale = 1.0;   ///< std of the planted appearance rows
    double view_perturbation = 0.05; ///< per-cell flip probability between views
    std::vector<double> domain_shift; ///< added to every target factor row; empty = none
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const SyntheticSpec&) const = default;
};

std::string to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const std::string& text);

struct SyntheticData {
    Dataset source; ///< strong labels over all planted factors
    std::vector<FeatureBag> target;
    std::vector<BinaryMatrix> source_truth;
    std::vector<BinaryMatrix> target_truth;
    Matrix appearance;        ///< planted source rows, k_true x d
    Matrix target_appearance; ///< appearance + domain_shift
    /// (view 0 id, view 1 id) per target identity.
    std::vector<std::pair<std::string, std::string>> reid_pairs;
};

std::string synthetic_factor_name(std::size_t k);

/// Deterministic in spec (including seed).
SyntheticData synth_generate(const SyntheticSpec& spec);

/// Smallest Euclidean distance between two rows.
double min_row_distance(const Matrix& rows);

} // namespace mrfibp
