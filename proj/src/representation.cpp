#include "mrfibp/representation.hpp"

#include <algorithm>
#include <cmath>

namespace mrfibp {

namespace {

std::vector<std::string> names_for(std::span<const std::string> given, std::size_t factors) {
    std::vector<std::string> out(given.begin(), given.begin() + std::min(given.size(), factors));
    for (auto k = out.size(); k < factors; ++k) out.push_back("factor-" + std::to_string(k));
    return out;
}

} // namespace

HeatMapStack heatmaps_from_marginals(const FeatureBag& bag, const Matrix& marginals,
                                     std::span<const std::string> factor_names) {
    if (static_cast<std::size_t>(marginals.rows()) != bag.size())
        throw Error(ErrorCode::dimension_mismatch, bag.image_id + ": marginals do not match patches");
    const auto labels = pixel_labels(bag);
    if (std::find(labels.begin(), labels.end(), -1) != labels.end())
        throw Error(ErrorCode::validation, bag.image_id + ": pixel not covered by any patch");

    const auto factors = static_cast<std::size_t>(marginals.cols());
    HeatMapStack stack;
    stack.image_id = bag.image_id;
    stack.width = bag.width;
    stack.height = bag.height;
    stack.factor_names = names_for(factor_names, factors);
    stack.maps.assign(factors, std::vector<float>(labels.size(), 0.0f));
    for (std::size_t k = 0; k < factors; ++k) {
        auto& map = stack.maps[k];
        for (std::size_t p = 0; p < labels.size(); ++p)
            map[p] = static_cast<float>(
                std::clamp(marginals(labels[p], static_cast<Eigen::Index>(k)), 0.0, 1.0));
    }
    return stack;
}

HeatMapStack accumulate_heatmaps(const FeatureBag& bag, std::span<const FactorState> trailing_states,
                                 std::span<const std::string> factor_names) {
    if (trailing_states.empty())
        throw Error(ErrorCode::invalid_argument, "accumulate_heatmaps: no retained samples");
    std::size_t factors = 0;
    for (const auto& s : trailing_states) {
        if (s.patches() != bag.size())
            throw Error(ErrorCode::dimension_mismatch, bag.image_id + ": state does not match patches");
        factors = std::max(factors, s.k_active());
    }
    Matrix mean = Matrix::Zero(static_cast<Eigen::Index>(bag.size()), static_cast<Eigen::Index>(factors));
    for (const auto& s : trailing_states) mean += s.as_real(factors);
    mean /= static_cast<double>(trailing_states.size());
    return heatmaps_from_marginals(bag, mean, factor_names);
}

std::array<WindowOrigin, kGridWindows> grid_windows(int width, int height) {
    if (width < kWindowSize || height < kWindowSize)
        throw Error(ErrorCode::invalid_argument,
                    "image " + std::to_string(width) + "x" + std::to_string(height) +
                        " is smaller than the 32x32 window");
    std::array<WindowOrigin, kGridWindows> out{};
    const double x_step = static_cast<double>(width - kWindowSize) / (kGridCols - 1);
    const double y_step = static_cast<double>(height - kWindowSize) / (kGridRows - 1);
    for (int r = 0; r < kGridRows; ++r)
        for (int c = 0; c < kGridCols; ++c)
            out[static_cast<std::size_t>(r * kGridCols + c)] =
                WindowOrigin{r, c, static_cast<int>(std::lround(c * x_step)),
                             static_cast<int>(std::lround(r * y_step))};
    return out;
}

Vector l1_normalized(const Vector& v) {
    const double total = v.cwiseAbs().sum();
    return total > 0.0 ? Vector(v / total) : v;
}

GridDescriptor grid_descriptor(const HeatMapStack& stack) {
    const auto origins = grid_windows(stack.width, stack.height);
    const auto factors = static_cast<Eigen::Index>(stack.factors());
    GridDescriptor out;
    out.image_id = stack.image_id;
    for (std::size_t g = 0; g < kGridWindows; ++g) {
        auto& window = out.windows[g];
        window.origin = origins[g];
        window.sums = Vector::Zero(factors);
        for (Eigen::Index k = 0; k < factors; ++k) {
            const auto& map = stack.maps[static_cast<std::size_t>(k)];
            double sum = 0.0;
            for (int y = window.origin.y; y < window.origin.y + kWindowSize; ++y) {
                const auto row = static_cast<std::size_t>(y) * static_cast<std::size_t>(stack.width);
                for (int x = window.origin.x; x < window.origin.x + kWindowSize; ++x)
                    sum += map[row + static_cast<std::size_t>(x)];
            }
            window.sums(k) = sum;
        }
        window.vector = l1_normalized(window.sums);
    }
    return out;
}

} // namespace mrfibp
