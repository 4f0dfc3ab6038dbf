#pragma once

// Re-identification by banded window matching, CMC evaluation, and
// attribute-description search with precision/recall evaluation.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrfibp/model.hpp"
#include "mrfibp/representation.hpp"

namespace mrfibp {

// ---- re-identification ----------------------------------------------------

double patch_distance(const Vector& a, const Vector& b);

/// Per probe window, the best gallery window within row_band grid rows.
std::array<double, kGridWindows> window_distances(const GridDescriptor& probe,
                                                  const GridDescriptor& gallery, int row_band = 1);

/// Mean of the two directional sums of per-window minima.
double image_distance(const GridDescriptor& probe, const GridDescriptor& gallery, int row_band = 1);

/// Probe rows are filled concurrently when threads > 1.
Matrix distance_matrix(std::span<const GridDescriptor> probes, std::span<const GridDescriptor> gallery,
                       int row_band = 1, std::size_t threads = 1);

/// 1-based rank of gallery column `truth` in row `probe`; ties go to the lower index.
std::size_t match_rank(const Matrix& distances, Eigen::Index probe, std::size_t truth);

/// Entry r-1 is the fraction of probes whose true match ranks within r.
std::vector<double> cmc_curve(const Matrix& distances, std::span<const std::size_t> truth);

// ---- search ---------------------------------------------------------------

struct QueryGroup {
    std::vector<std::size_t> factors;
    bool colocated = true;

    bool operator==(const QueryGroup&) const = default;
};

struct QueryTerm {
    std::vector<QueryGroup> groups;

    void validate(std::size_t factors) const;
    bool operator==(const QueryTerm&) const = default;
};

double group_score(const HeatMapStack& stack, const QueryGroup& group);

/// Product of the group scores.
double score_query(const HeatMapStack& stack, const QueryTerm& query);

struct RankedImage {
    std::string image_id;
    double score = 0.0;
};

/// Descending score, ties by ascending image id. With min_score set, only
/// images scoring strictly above it are returned.
std::vector<RankedImage> rank_images(std::span<const HeatMapStack> stacks, const QueryTerm& query,
                                     std::optional<double> min_score = std::nullopt);

/// "A+B-C": terms joined by '+', a term of several names joined by '-' is a
/// co-located group. Names that themselves contain '-' are matched whole
/// before any split is tried.
QueryTerm parse_query(std::string_view text, std::span<const std::string> names);

/// Index of an exact factor name; unknown_factor (with the nearest names)
/// otherwise.
std::size_t factor_index(std::string_view name, std::span<const std::string> names);

/// Up to `limit` names closest to `name` by edit distance.
std::vector<std::string> nearest_names(std::string_view name, std::span<const std::string> names,
                                       std::size_t limit = 3);

struct PrPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

struct PrCurve {
    std::vector<PrPoint> points;
    double average_precision = 0.0;
};

PrCurve pr_curve(std::span<const double> scores, const std::vector<bool>& relevant);

void write_cmc_csv(std::ostream& out, std::span<const double> cmc);
void write_pr_csv(std::ostream& out, const PrCurve& curve);

} // namespace mrfibp
