#pragma once

// Per-pixel factor heat maps and the fixed-size 2x7 grid descriptor.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mrfibp/model.hpp"

namespace mrfibp {

/// K per-pixel activation maps, row-major, values in [0, 1].
struct HeatMapStack {
    std::string image_id;
    int width = 0;
    int height = 0;
    std::vector<std::string> factor_names;
    std::vector<std::vector<float>> maps;

    std::size_t factors() const { return maps.size(); }
    float at(std::size_t k, int x, int y) const {
        return maps[k][static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                       static_cast<std::size_t>(x)];
    }
};

inline constexpr int kWindowSize = 32;
inline constexpr int kGridRows = 7;
inline constexpr int kGridCols = 2;
inline constexpr std::size_t kGridWindows = kGridRows * kGridCols;

struct WindowOrigin {
    int row = 0;
    int col = 0;
    int x = 0;
    int y = 0;

    bool operator==(const WindowOrigin&) const = default;
};

struct GridWindow {
    WindowOrigin origin;
    Vector sums;   ///< raw per-factor sums of M_k over the window
    Vector vector; ///< sums, L1-normalized
};

struct GridDescriptor {
    std::string image_id;
    std::array<GridWindow, kGridWindows> windows;

    std::size_t factors() const { return static_cast<std::size_t>(windows.front().vector.size()); }
};

/// Mean of z over the retained samples, painted onto each patch's pixels.
HeatMapStack accumulate_heatmaps(const FeatureBag& bag, std::span<const FactorState> trailing_states,
                                 std::span<const std::string> factor_names = {});

/// Same as accumulate_heatmaps, from precomputed per-patch marginals (N x K).
HeatMapStack heatmaps_from_marginals(const FeatureBag& bag, const Matrix& marginals,
                                     std::span<const std::string> factor_names = {});

/// Window origins in row-major grid order (row 0..6, then column 0..1).
std::array<WindowOrigin, kGridWindows> grid_windows(int width, int height);

GridDescriptor grid_descriptor(const HeatMapStack& stack);

/// L1 normalization; zero vectors stay zero.
Vector l1_normalized(const Vector& v);

} // namespace mrfibp
