#include "mrfibp/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_map>

namespace mrfibp {

void Hyperparams::validate() const {
    std::ostringstream msg;
    if (!(alpha > 0.0)) msg << "alpha must be positive; ";
    if (!(beta >= 0.0)) msg << "beta must be non-negative; ";
    if (!(sigma_x > 0.0)) msg << "sigma_x must be positive; ";
    if (!(sigma_a > 0.0)) msg << "sigma_a must be positive; ";
    if (k_max == 0) msg << "k_max must be positive; ";
    if (k_supervised > k_max) msg << "k_supervised exceeds k_max; ";
    if (const auto text = msg.str(); !text.empty())
        throw Error(ErrorCode::invalid_argument, "hyperparameters: " + text);
}

ValidationReport validate_bag(const FeatureBag& bag) {
    ValidationReport report;
    auto fail = [&](const std::string& what) {
        report.violations.push_back(bag.image_id + ": " + what);
    };

    if (bag.width <= 0 || bag.height <= 0) {
        fail("image dimensions must be positive");
        return report;
    }
    if (bag.patches.empty()) fail("bag has no patches");

    const auto dim = bag.feature_dim();
    std::set<int> ids;
    for (const auto& patch : bag.patches) {
        if (!ids.insert(patch.id).second)
            fail("duplicate patch id " + std::to_string(patch.id));
        if (static_cast<std::size_t>(patch.feature.size()) != dim)
            fail("patch " + std::to_string(patch.id) + " feature length " +
                 std::to_string(patch.feature.size()) + " differs from " + std::to_string(dim));
        if (!patch.feature.allFinite())
            fail("patch " + std::to_string(patch.id) + " feature has non-finite entries");
    }

    const std::int64_t pixels = static_cast<std::int64_t>(bag.width) * bag.height;
    std::vector<int> cover(static_cast<std::size_t>(pixels), 0);
    bool overlap_reported = false;
    for (const auto& patch : bag.patches) {
        for (const auto& run : patch.mask) {
            if (run.length <= 0 || run.start < 0 || run.start + run.length > pixels) {
                fail("patch " + std::to_string(patch.id) + " mask run out of image bounds");
                continue;
            }
            for (std::int64_t p = run.start; p < run.start + run.length; ++p) {
                if (++cover[static_cast<std::size_t>(p)] > 1 && !overlap_reported) {
                    fail("pixel overlap at index " + std::to_string(p) + " (patch " +
                         std::to_string(patch.id) + ")");
                    overlap_reported = true;
                }
            }
        }
    }
    const auto uncovered = std::count(cover.begin(), cover.end(), 0);
    if (uncovered > 0) fail(std::to_string(uncovered) + " pixels not covered by any patch");

    std::set<std::pair<int, int>> pairs(bag.adjacency.begin(), bag.adjacency.end());
    for (const auto& [a, b] : bag.adjacency) {
        const auto tag = "(" + std::to_string(a) + "," + std::to_string(b) + ")";
        if (a == b) fail("adjacency self-loop " + tag);
        if (!ids.contains(a) || !ids.contains(b)) fail("adjacency endpoint not a patch id " + tag);
        if (!pairs.contains({b, a})) fail("asymmetric adjacency " + tag);
    }
    return report;
}

NeighborLists neighbor_lists(const FeatureBag& bag) {
    std::unordered_map<int, std::size_t> index;
    for (std::size_t j = 0; j < bag.patches.size(); ++j) index.emplace(bag.patches[j].id, j);

    NeighborLists out(bag.patches.size());
    for (const auto& [a, b] : bag.adjacency) {
        const auto ia = index.find(a);
        const auto ib = index.find(b);
        if (ia == index.end() || ib == index.end())
            throw Error(ErrorCode::validation,
                        bag.image_id + ": adjacency endpoint is not a patch id");
        if (ia->second != ib->second) out[ia->second].push_back(ib->second);
    }
    for (auto& list : out) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
    }
    return out;
}

Matrix feature_matrix(const FeatureBag& bag) {
    Matrix x(static_cast<Eigen::Index>(bag.size()), static_cast<Eigen::Index>(bag.feature_dim()));
    for (std::size_t j = 0; j < bag.size(); ++j) {
        if (static_cast<std::size_t>(bag.patches[j].feature.size()) != bag.feature_dim())
            throw Error(ErrorCode::dimension_mismatch, bag.image_id + ": ragged feature vectors");
        x.row(static_cast<Eigen::Index>(j)) = bag.patches[j].feature.transpose();
    }
    return x;
}

std::vector<std::int32_t> pixel_labels(const FeatureBag& bag) {
    const std::int64_t pixels = static_cast<std::int64_t>(bag.width) * bag.height;
    std::vector<std::int32_t> labels(static_cast<std::size_t>(std::max<std::int64_t>(pixels, 0)), -1);
    for (std::size_t j = 0; j < bag.patches.size(); ++j) {
        for (const auto& run : bag.patches[j].mask) {
            const auto begin = std::clamp<std::int64_t>(run.start, 0, pixels);
            const auto end = std::clamp<std::int64_t>(run.start + run.length, 0, pixels);
            std::fill(labels.begin() + begin, labels.begin() + end, static_cast<std::int32_t>(j));
        }
    }
    return labels;
}

std::string_view to_string(SupervisionMode mode) {
    switch (mode) {
    case SupervisionMode::none: return "none";
    case SupervisionMode::weak: return "weak";
    case SupervisionMode::strong: return "strong";
    }
    return "none";
}

SupervisionMode supervision_mode_from_string(std::string_view text) {
    if (text == "none") return SupervisionMode::none;
    if (text == "weak") return SupervisionMode::weak;
    if (text == "strong") return SupervisionMode::strong;
    throw Error(ErrorCode::parse_error, "unknown supervision mode '" + std::string(text) + "'");
}

void validate_labels(const SupervisionLabels& labels, const FeatureBag& bag,
                     std::size_t k_supervised) {
    auto fail = [&](const std::string& what) {
        throw Error(ErrorCode::validation, bag.image_id + ": labels: " + what);
    };
    switch (labels.mode) {
    case SupervisionMode::none: break;
    case SupervisionMode::weak:
        if (labels.weak.size() != k_supervised)
            fail("weak label length " + std::to_string(labels.weak.size()) + " != " +
                 std::to_string(k_supervised));
        break;
    case SupervisionMode::strong:
        if (labels.strong.size() != bag.size())
            fail("strong labels for " + std::to_string(labels.strong.size()) + " patches, bag has " +
                 std::to_string(bag.size()));
        for (const auto& row : labels.strong)
            if (row.size() != k_supervised)
                fail("strong label length " + std::to_string(row.size()) + " != " +
                     std::to_string(k_supervised));
        break;
    }
    if (!labels.foreground.empty() && labels.foreground.size() != bag.size())
        fail("foreground mask length differs from patch count");
    if (!labels.annotated.empty() && labels.annotated.size() != k_supervised)
        fail("annotated-factor mask length differs from k_supervised");
}

FactorState::FactorState(std::size_t patches, std::size_t factors)
    : z_(BinaryMatrix::Zero(static_cast<Eigen::Index>(patches), static_cast<Eigen::Index>(factors))),
      counts_(factors, 0) {}

FactorState FactorState::from_z(BinaryMatrix z) {
    FactorState state;
    state.counts_.resize(static_cast<std::size_t>(z.cols()));
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
        int sum = 0;
        for (Eigen::Index j = 0; j < z.rows(); ++j) {
            if (z(j, k) > 1) throw Error(ErrorCode::validation, "factor matrix entries must be 0 or 1");
            sum += z(j, k);
        }
        state.counts_[static_cast<std::size_t>(k)] = sum;
    }
    state.z_ = std::move(z);
    return state;
}

void FactorState::set(std::size_t j, std::size_t k, bool on) {
    auto& cell = z_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
    const std::uint8_t value = on ? 1 : 0;
    if (cell == value) return;
    counts_[k] += on ? 1 : -1;
    cell = value;
}

void FactorState::resize_factors(std::size_t factors) {
    const auto old = k_active();
    z_.conservativeResize(Eigen::NoChange, static_cast<Eigen::Index>(factors));
    if (factors > old)
        z_.rightCols(static_cast<Eigen::Index>(factors - old)).setZero();
    counts_.resize(factors, 0);
}

void FactorState::remove_factor(std::size_t k) {
    const auto n = static_cast<Eigen::Index>(k_active());
    const auto col = static_cast<Eigen::Index>(k);
    if (col + 1 < n) z_.middleCols(col, n - col - 1) = z_.rightCols(n - col - 1).eval();
    z_.conservativeResize(Eigen::NoChange, n - 1);
    counts_.erase(counts_.begin() + col);
}

Matrix FactorState::as_real(std::size_t factors) const {
    Matrix out = Matrix::Zero(z_.rows(), static_cast<Eigen::Index>(std::max(factors, k_active())));
    out.leftCols(z_.cols()) = z_.cast<double>();
    return out;
}

void FactorState::check_invariants(const Hyperparams& hp) const {
    for (Eigen::Index k = 0; k < z_.cols(); ++k) {
        const int sum = z_.col(k).cast<int>().sum();
        if (sum != counts_[static_cast<std::size_t>(k)])
            throw Error(ErrorCode::internal, "factor count m_" + std::to_string(k) + " out of sync");
    }
    if (k_active() < hp.k_supervised || k_active() > hp.k_max)
        throw Error(ErrorCode::internal, "k_active outside [k_supervised, k_max]");
}

void AppearanceModel::validate() const {
    const auto k = mean.rows();
    if (covariance.rows() != k || covariance.cols() != k ||
        static_cast<std::size_t>(k) != factor_names.size() ||
        (appearance.size() != 0 && (appearance.rows() != k || appearance.cols() != mean.cols())))
        throw Error(ErrorCode::dimension_mismatch, "appearance model: inconsistent factor counts");
    for (Eigen::Index i = 0; i < k; ++i) {
        if (!(covariance(i, i) > 0.0))
            throw Error(ErrorCode::validation, "appearance model: covariance diagonal not positive");
        for (Eigen::Index j = 0; j < i; ++j)
            if (covariance(i, j) != covariance(j, i))
                throw Error(ErrorCode::validation, "appearance model: covariance not symmetric");
    }
}

AppearanceModel AppearanceModel::from_posterior(Matrix mean, Matrix covariance,
                                                std::vector<std::string> names,
                                                const Hyperparams& hp) {
    AppearanceModel model;
    model.appearance = mean;
    model.mean = std::move(mean);
    model.covariance = std::move(covariance);
    model.factor_names = std::move(names);
    model.hyperparams = hp;
    return model;
}

std::string free_factor_name(std::size_t serial) { return "free-" + std::to_string(serial); }

std::size_t next_free_serial(std::span<const std::string> names) {
    std::size_t next = 0;
    for (const auto& name : names) {
        if (!name.starts_with("free-")) continue;
        std::size_t value = 0;
        const auto* first = name.data() + 5;
        const auto* last = name.data() + name.size();
        const auto [ptr, ec] = std::from_chars(first, last, value);
        if (ec == std::errc() && ptr == last) next = std::max(next, value + 1);
    }
    return next;
}

namespace {

double log_gaussian_isotropic(double squared_norm, double dim, double variance) {
    return -0.5 * dim * std::log(2.0 * std::numbers::pi * variance) - squared_norm / (2.0 * variance);
}

} // namespace

double log_joint(std::span<const FeatureBag> bags, std::span<const FactorState> states,
                 const AppearanceModel& appearance, const Hyperparams& hp) {
    if (bags.size() != states.size())
        throw Error(ErrorCode::dimension_mismatch, "log_joint: bag and state counts differ");
    const Matrix& a = appearance.appearance.size() != 0 ? appearance.appearance : appearance.mean;
    const auto k_total = static_cast<std::size_t>(a.rows());
    const auto dim = static_cast<double>(a.cols());

    double total = 0.0;
    std::vector<bool> used(k_total, false);
    for (std::size_t i = 0; i < bags.size(); ++i) {
        const auto& bag = bags[i];
        const auto& state = states[i];
        if (state.patches() != bag.size())
            throw Error(ErrorCode::dimension_mismatch,
                        "log_joint: state rows differ from patch count for " + bag.image_id);
        if (state.k_active() > k_total)
            throw Error(ErrorCode::dimension_mismatch,
                        "log_joint: state has more factors than the appearance model");
        if (bag.size() > 0 && bag.feature_dim() != static_cast<std::size_t>(a.cols()))
            throw Error(ErrorCode::dimension_mismatch, "log_joint: feature dimension mismatch");

        const auto n = static_cast<double>(bag.size());
        const auto nbrs = neighbor_lists(bag);
        for (std::size_t k = 0; k < state.k_active(); ++k) {
            const int m = state.count(k);
            if (m == 0) continue;
            used[k] = true;
            total += std::lgamma(n - m + 1.0) + std::lgamma(static_cast<double>(m)) - std::lgamma(n + 1.0);
            std::size_t agreeing = 0;
            for (std::size_t j = 0; j < bag.size(); ++j)
                for (const auto jn : nbrs[j])
                    if (state.get(j, k) == state.get(jn, k)) ++agreeing;
            total += 0.5 * hp.beta * static_cast<double>(agreeing);
        }

        const Matrix z = state.as_real(k_total);
        const Matrix residual = feature_matrix(bag) - z * a;
        total += log_gaussian_isotropic(residual.squaredNorm(), dim * n, hp.sigma_x * hp.sigma_x);
    }
    for (std::size_t k = 0; k < k_total; ++k)
        if (used[k])
            total += log_gaussian_isotropic(a.row(static_cast<Eigen::Index>(k)).squaredNorm(), dim,
                                            hp.sigma_a * hp.sigma_a);
    return total;
}

} // namespace mrfibp
