#pragma once

// Demo feature extractor: k-means color codebooks in RGB and CIELAB, and
// per-cell visual-word histograms on a regular cell grid.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mrfibp/model.hpp"

namespace mrfibp {

using Color = std::array<double, 3>;

struct Codebook {
    std::vector<Color> centroids;
    std::size_t iterations = 0;

    std::size_t size() const { return centroids.size(); }
    std::size_t nearest(const Color& c) const;
};

/// Called after each assignment step with (iteration, objective).
using KMeansObserver = std::function<void(std::size_t, double)>;

inline constexpr std::size_t kKMeansIterationCap = 100;

/// Lloyd's k-means, initialized from k distinct sample points chosen by seed.
Codebook build_codebook(std::span<const Color> pixels, std::size_t k, std::uint64_t seed,
                        const KMeansObserver& observer = {});

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data; ///< interleaved RGB, row-major

    Color pixel(int x, int y) const;
};

/// Binary (P6) or ASCII (P3) PPM with maxval 255.
RgbImage read_ppm(std::istream& in);
RgbImage load_ppm(const std::filesystem::path& path);
void write_ppm(std::ostream& out, const RgbImage& image);

/// sRGB in [0, 255] to CIELAB under D65.
Color rgb_to_lab(const Color& rgb);

struct ColorCodebooks {
    Codebook rgb;
    Codebook lab;

    std::size_t feature_dim() const { return rgb.size() + lab.size(); }
};

/// Codebooks from every pixel of the given images (subsampled to at most
/// max_samples pixels, chosen by seed).
ColorCodebooks build_color_codebooks(std::span<const RgbImage> images, std::size_t words,
                                     std::uint64_t seed, std::size_t max_samples = 200000);

/// One patch per grid cell; the feature is the RGB-word histogram followed
/// by the LAB-word histogram, each L1-normalized. Cells are 4-connected.
FeatureBag extract_color_features(const RgbImage& image, const ColorCodebooks& codebooks, int rows,
                                  int cols, const std::string& image_id);

/// Regular grid of rows x cols cells over a width x height image, with
/// 4-connected adjacency and empty features.
FeatureBag grid_layout(const std::string& image_id, int width, int height, int rows, int cols);

} // namespace mrfibp
