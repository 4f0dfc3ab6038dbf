#pragma once

// Line-delimited feature files, checkpoints, heat-map and state exports.
//
// Feature file: one JSON object per line. An optional first line
// {"vocabulary": [...]} names the supervised attributes; every other line is
//   {"image_id", "width", "height",
//    "patches": [{"id", "rle_mask": [[start, length], ...], "feature": [...]}],
//    "adjacency": [[a, b], ...],
//    "labels": {"mode": "none|weak|strong", "weak": [...], "strong": [[...]], "fg": [...]}}

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mrfibp/gibbs.hpp"
#include "mrfibp/model.hpp"
#include "mrfibp/representation.hpp"

namespace mrfibp {

inline constexpr int kCheckpointVersion = 1;

/// Without a vocabulary line, labelled files get names attr-0, attr-1, ...
Dataset read_feature_bags(std::istream& in, const std::string& name = "features");
Dataset load_feature_bags(const std::filesystem::path& path);

void write_feature_bags(std::ostream& out, const Dataset& dataset);
void save_feature_bags(const std::filesystem::path& path, const Dataset& dataset);

/// A checkpoint stores the posterior (mean, covariance), not the last draw.
void write_model(std::ostream& out, const AppearanceModel& model);
AppearanceModel read_model(std::istream& in);
void save_model(const std::filesystem::path& path, const AppearanceModel& model);
AppearanceModel load_model(const std::filesystem::path& path);

void write_heatmaps(std::ostream& out, const std::vector<HeatMapStack>& stacks);
std::vector<HeatMapStack> read_heatmaps(std::istream& in);
void save_heatmaps(const std::filesystem::path& path, const std::vector<HeatMapStack>& stacks);
std::vector<HeatMapStack> load_heatmaps(const std::filesystem::path& path);

/// Per-image inference output: final sample, marginals and the descriptor.
struct ImageState {
    std::string image_id;
    int width = 0;
    int height = 0;
    std::vector<std::string> factor_names;
    BinaryMatrix z;
    Matrix marginals;
    GridDescriptor descriptor;
};

void write_states(std::ostream& out, const std::vector<ImageState>& states);
std::vector<ImageState> read_states(std::istream& in);
void save_states(const std::filesystem::path& path, const std::vector<ImageState>& states);
std::vector<ImageState> load_states(const std::filesystem::path& path);

/// Two-column "probe_id,gallery_id" pairs; a header line is skipped if present.
std::vector<std::pair<std::string, std::string>> load_pairs(const std::filesystem::path& path);
void save_pairs(const std::filesystem::path& path,
                const std::vector<std::pair<std::string, std::string>>& pairs);

} // namespace mrfibp
