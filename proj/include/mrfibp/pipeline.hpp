#pragma once

// Glue between inference output and the retrieval layer.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mrfibp/io.hpp"
#include "mrfibp/representation.hpp"
#include "mrfibp/transfer.hpp"

namespace mrfibp {

/// Heat maps and grid descriptors for every target image.
std::vector<ImageState> describe_images(std::span<const FeatureBag> bags, const TargetResult& result);

std::vector<HeatMapStack> heatmaps_of(std::span<const FeatureBag> bags, const TargetResult& result);

/// Probes are the first ids of the pairs and the gallery is the second ids,
/// in pair order. Throws when an id has no state.
std::vector<double> reid_cmc(std::span<const ImageState> states,
                             std::span<const std::pair<std::string, std::string>> pairs,
                             int row_band = 1, std::size_t threads = 1);

/// Separate probe and gallery sets; the whole gallery is ranked and each
/// pair names a probe and its true gallery match.
std::vector<double> reid_cmc(std::span<const ImageState> probes, std::span<const ImageState> gallery,
                             std::span<const std::pair<std::string, std::string>> pairs,
                             int row_band = 1, std::size_t threads = 1);

} // namespace mrfibp
