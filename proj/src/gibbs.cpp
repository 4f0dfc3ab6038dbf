#include "mrfibp/gibbs.hpp"
#include "mrfibp/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include <spdlog/spdlog.h>

namespace mrfibp {

void SweepConfig::validate() const {
    if (iterations == 0)
        throw Error(ErrorCode::invalid_argument, "empty training schedule: iterations must be positive");
    if (appearance_resample_period == 0)
        throw Error(ErrorCode::invalid_argument, "appearance_resample_period must be positive");
    if (burn_in >= iterations)
        throw Error(ErrorCode::invalid_argument, "burn_in must be smaller than iterations");
    if (retain_samples == 0 || retain_samples > iterations - burn_in)
        throw Error(ErrorCode::invalid_argument, "retain_samples must be in [1, iterations - burn_in]");
    if (birth_enabled && birth_truncation == 0)
        throw Error(ErrorCode::invalid_argument, "birth_truncation must be positive");
    if (threads == 0) throw Error(ErrorCode::invalid_argument, "threads must be positive");
}

SweepConfig SweepConfig::auxiliary_defaults() { return SweepConfig{}; }

SweepConfig SweepConfig::target_defaults() {
    SweepConfig cfg;
    cfg.iterations = 100;
    cfg.burn_in = 20;
    cfg.retain_samples = 20;
    cfg.birth_enabled = false;
    return cfg;
}

PreparedImage prepare_image(const FeatureBag& bag) {
    return PreparedImage{&bag, neighbor_lists(bag), feature_matrix(bag)};
}

std::vector<PreparedImage> prepare_images(std::span<const FeatureBag> bags) {
    std::vector<PreparedImage> out;
    out.reserve(bags.size());
    for (const auto& bag : bags) out.push_back(prepare_image(bag));
    return out;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t neighbors_on(const FactorState& state, const NeighborLists& nbrs, std::size_t j,
                         std::size_t k) {
    std::size_t on = 0;
    for (const auto jn : nbrs[j]) on += state.get(jn, k) ? 1 : 0;
    return on;
}

RowVector patch_residual(const FactorState& state, const PreparedImage& image, const Matrix& a,
                         std::size_t j) {
    RowVector r = image.features.row(static_cast<Eigen::Index>(j));
    for (std::size_t k = 0; k < state.k_active(); ++k)
        if (state.get(j, k)) r -= a.row(static_cast<Eigen::Index>(k));
    return r;
}

std::vector<std::size_t> active_factors(const FactorState& state, std::size_t j) {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < state.k_active(); ++k)
        if (state.get(j, k)) out.push_back(k);
    return out;
}

void check_patch_index(const FactorState& state, std::size_t j, std::size_t k) {
    if (j >= state.patches())
        throw Error(ErrorCode::index_out_of_range, "patch index " + std::to_string(j) + " out of range");
    if (k >= state.k_active())
        throw Error(ErrorCode::index_out_of_range, "factor index " + std::to_string(k) + " out of range");
}

// Appends up to cfg.birth_truncation new factors at patch j given its
// residual r, which is updated in place. Returns the number born.
std::size_t birth_at(FactorState& state, std::size_t j, RowVector& r, Matrix& a, Vector& row_norms,
                     std::size_t patches, const Hyperparams& hp, const SweepConfig& cfg, Rng& rng) {
    if (!cfg.birth_enabled) return 0;
    const auto k_now = static_cast<std::size_t>(a.rows());
    const std::size_t room = hp.k_max > k_now ? hp.k_max - k_now : 0;
    const std::size_t limit = std::min(cfg.birth_truncation, room);
    if (limit == 0) {
        spdlog::debug("birth skipped at patch {}: k_max={} reached", j, hp.k_max);
        return 0;
    }
    const double lambda = hp.alpha / static_cast<double>(patches);
    if (!(lambda > 0.0)) return 0;

    const double s2x = hp.sigma_x * hp.sigma_x;
    const double s2a = hp.sigma_a * hp.sigma_a;
    const double dim = static_cast<double>(a.cols());
    const double rr = r.squaredNorm();

    std::vector<double> logw(limit + 1);
    for (std::size_t n = 0; n <= limit; ++n) {
        const double nn = static_cast<double>(n);
        const double var = s2x + nn * s2a;
        logw[n] = nn * std::log(lambda) - lambda - std::lgamma(nn + 1.0) -
                  0.5 * dim * std::log(2.0 * std::numbers::pi * var) - rr / (2.0 * var);
    }
    const double top = *std::max_element(logw.begin(), logw.end());
    double total = 0.0;
    for (auto& w : logw) total += (w = std::exp(w - top));
    double u = uniform01(rng) * total;
    std::size_t born = 0;
    for (; born < limit; ++born) {
        if (u < logw[born]) break;
        u -= logw[born];
    }
    if (born == 0) return 0;

    // Conditional draw of the new rows given their sum must explain r:
    // a_t = u_t + c (r - sum u - e), u_t ~ N(0, s2a I), e ~ N(0, s2x I).
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto d = a.cols();
    Matrix rows(static_cast<Eigen::Index>(born), d);
    for (Eigen::Index t = 0; t < rows.rows(); ++t)
        for (Eigen::Index c = 0; c < d; ++c) rows(t, c) = hp.sigma_a * normal(rng);
    RowVector noise(d);
    for (Eigen::Index c = 0; c < d; ++c) noise(c) = hp.sigma_x * normal(rng);
    const double gain = s2a / (s2x + static_cast<double>(born) * s2a);
    const RowVector innovation = r - rows.colwise().sum() - noise;
    rows.rowwise() += gain * innovation;

    const auto k0 = a.rows();
    a.conservativeResize(k0 + rows.rows(), Eigen::NoChange);
    a.bottomRows(rows.rows()) = rows;
    row_norms.conservativeResize(a.rows());
    row_norms.tail(rows.rows()) = rows.rowwise().squaredNorm();

    state.resize_factors(static_cast<std::size_t>(a.rows()));
    for (std::size_t t = 0; t < born; ++t) state.set(j, static_cast<std::size_t>(k0) + t, true);
    r -= rows.colwise().sum();
    return born;
}

} // namespace

namespace detail {

double conditional_from_residual(double residual_dot, double row_norm2, int others_on,
                                 std::size_t patches, std::size_t neighbors_on,
                                 std::size_t neighbors_off, const Hyperparams& hp) {
    if (others_on <= 0) return 0.0;
    const double m = others_on;
    const double n = static_cast<double>(patches);
    const double log_odds = std::log(m) - std::log(n - m) +
                            hp.beta * (static_cast<double>(neighbors_on) - static_cast<double>(neighbors_off)) +
                            (2.0 * residual_dot - row_norm2) / (2.0 * hp.sigma_x * hp.sigma_x);
    return sigmoid(log_odds);
}

} // namespace detail

double factor_conditional(const FactorState& state, const PreparedImage& image, const Matrix& a,
                          std::size_t j, std::size_t k, const Hyperparams& hp) {
    check_patch_index(state, j, k);
    if (state.patches() != image.size())
        throw Error(ErrorCode::dimension_mismatch, "state rows differ from patch count");
    if (static_cast<std::size_t>(a.rows()) < state.k_active() || a.cols() != image.features.cols())
        throw Error(ErrorCode::dimension_mismatch, "appearance does not match state or features");

    const int m = state.count(k) - (state.get(j, k) ? 1 : 0);
    if (m == 0) return 0.0;
    const double n = static_cast<double>(state.patches());

    RowVector with = image.features.row(static_cast<Eigen::Index>(j));
    for (std::size_t kk = 0; kk < state.k_active(); ++kk)
        if (kk != k && state.get(j, kk)) with -= a.row(static_cast<Eigen::Index>(kk));
    const RowVector without = with;
    with -= a.row(static_cast<Eigen::Index>(k));

    const auto on = neighbors_on(state, image.neighbors, j, k);
    const auto off = image.neighbors[j].size() - on;
    const double s2 = hp.sigma_x * hp.sigma_x;
    const double log_w1 = std::log(m / n) + hp.beta * static_cast<double>(on) - with.squaredNorm() / (2.0 * s2);
    const double log_w0 =
        std::log((n - m) / n) + hp.beta * static_cast<double>(off) - without.squaredNorm() / (2.0 * s2);
    return sigmoid(log_w1 - log_w0);
}

double factor_conditional(const FactorState& state, const FeatureBag& bag,
                          const AppearanceModel& appearance, std::size_t j, std::size_t k,
                          const Hyperparams& hp) {
    return factor_conditional(state, prepare_image(bag), appearance.appearance, j, k, hp);
}

std::optional<bool> clamped_value(const SupervisionLabels& labels, std::size_t j, std::size_t k,
                                  std::size_t k_supervised, FactorBlock background) {
    if (k >= k_supervised) return std::nullopt;
    const bool annotated = labels.is_annotated(k);
    if (labels.mode == SupervisionMode::strong && annotated) {
        if (j >= labels.strong.size() || labels.strong[j].size() < k_supervised)
            throw Error(ErrorCode::validation, "strong labels shorter than k_supervised");
        return labels.strong[j][k] != 0;
    }
    if (!labels.foreground.empty() && background.count > 0) {
        if (j >= labels.foreground.size())
            throw Error(ErrorCode::validation, "foreground mask shorter than patch count");
        const bool fg = labels.foreground[j] != 0;
        if (fg == background.contains(k)) return false;
    }
    if (labels.mode == SupervisionMode::weak && annotated) {
        if (labels.weak.size() < k_supervised)
            throw Error(ErrorCode::validation, "weak labels shorter than k_supervised");
        if (labels.weak[k] == 0) return false;
    }
    return std::nullopt;
}

double apply_supervision(double raw, const SupervisionLabels& labels, std::size_t j, std::size_t k,
                         std::size_t k_supervised, FactorBlock background) {
    if (const auto forced = clamped_value(labels, j, k, k_supervised, background))
        return *forced ? 1.0 : 0.0;
    return raw;
}

std::size_t birth_new_factors(FactorState& state, const FeatureBag& bag,
                              AppearanceModel& appearance, std::size_t j, const Hyperparams& hp,
                              const SweepConfig& cfg, Rng& rng) {
    const auto image = prepare_image(bag);
    if (j >= image.size()) throw Error(ErrorCode::index_out_of_range, "patch index out of range");
    if (state.k_active() > appearance.factors())
        throw Error(ErrorCode::dimension_mismatch, "state has more factors than the appearance model");
    state.resize_factors(appearance.factors());

    Matrix a = appearance.appearance;
    Vector norms = a.rowwise().squaredNorm();
    RowVector r = patch_residual(state, image, a, j);
    const auto k0 = a.rows();
    const auto born = birth_at(state, j, r, a, norms, image.size(), hp, cfg, rng);
    if (born == 0) return 0;

    const auto n = static_cast<Eigen::Index>(born);
    const Matrix rows = a.bottomRows(n);
    appearance.appearance = a;
    appearance.mean.conservativeResize(k0 + n, Eigen::NoChange);
    appearance.mean.bottomRows(n) = rows;
    Matrix cov = Matrix::Zero(k0 + n, k0 + n);
    cov.topLeftCorner(k0, k0) = appearance.covariance;
    cov.bottomRightCorner(n, n) = hp.sigma_a * hp.sigma_a * Matrix::Identity(n, n);
    appearance.covariance = std::move(cov);
    auto serial = next_free_serial(appearance.factor_names);
    for (std::size_t t = 0; t < born; ++t) appearance.factor_names.push_back(free_factor_name(serial++));
    return born;
}

SweepOutcome sweep_image(FactorState& state, const PreparedImage& image,
                         const AppearanceModel& appearance, const SupervisionLabels& labels,
                         const Hyperparams& hp, const SweepConfig& cfg, Rng& rng) {
    const auto k0 = appearance.factors();
    const auto patches = image.size();
    if (state.patches() != patches)
        throw Error(ErrorCode::dimension_mismatch, "state rows differ from patch count for " +
                                                       image.bag->image_id);
    if (state.k_active() > k0)
        throw Error(ErrorCode::dimension_mismatch, "state has more factors than the appearance model");
    if (appearance.appearance.cols() != image.features.cols())
        throw Error(ErrorCode::dimension_mismatch, "feature dimension differs from the appearance model");
    if (labels.mode == SupervisionMode::strong && labels.strong.size() != patches)
        throw Error(ErrorCode::validation, "strong labels do not match patches of " + image.bag->image_id);
    state.resize_factors(k0);

    Matrix local;
    const Matrix* a = &appearance.appearance;
    if (cfg.birth_enabled) {
        local = appearance.appearance;
        a = &local;
    }
    Vector norms = a->rowwise().squaredNorm();

    for (std::size_t j = 0; j < patches; ++j) {
        RowVector r = patch_residual(state, image, *a, j);
        const auto degree = image.neighbors[j].size();
        for (std::size_t k = 0; k < static_cast<std::size_t>(a->rows()); ++k) {
            const bool current = state.get(j, k);
            bool next = false;
            if (const auto forced = clamped_value(labels, j, k, hp.k_supervised, cfg.background)) {
                next = *forced;
            } else {
                const int others = state.count(k) - (current ? 1 : 0);
                if (others > 0) {
                    const auto row = a->row(static_cast<Eigen::Index>(k));
                    const auto kk = static_cast<Eigen::Index>(k);
                    const double dot = r.dot(row) + (current ? norms(kk) : 0.0);
                    const auto on = neighbors_on(state, image.neighbors, j, k);
                    const double p = detail::conditional_from_residual(dot, norms(kk), others, patches,
                                                                       on, degree - on, hp);
                    next = bernoulli(rng, p);
                }
            }
            if (next != current) {
                state.set(j, k, next);
                if (next)
                    r -= a->row(static_cast<Eigen::Index>(k));
                else
                    r += a->row(static_cast<Eigen::Index>(k));
            }
        }
        if (cfg.birth_enabled) birth_at(state, j, r, local, norms, patches, hp, cfg, rng);
    }

    SweepOutcome outcome;
    if (cfg.birth_enabled && static_cast<std::size_t>(local.rows()) > k0)
        outcome.born_rows = local.bottomRows(local.rows() - static_cast<Eigen::Index>(k0));
    else
        outcome.born_rows = Matrix(0, appearance.appearance.cols());
    return outcome;
}

SweepOutcome sweep_image(FactorState& state, const FeatureBag& bag,
                         const AppearanceModel& appearance, const SupervisionLabels& labels,
                         const Hyperparams& hp, const SweepConfig& cfg, Rng& rng) {
    return sweep_image(state, prepare_image(bag), appearance, labels, hp, cfg, rng);
}

namespace {

void append_factors(AppearanceModel& model, const Matrix& rows, const Hyperparams& hp) {
    const auto k0 = model.mean.rows();
    const auto n = rows.rows();
    if (n == 0) return;
    model.mean.conservativeResize(k0 + n, Eigen::NoChange);
    model.mean.bottomRows(n) = rows;
    model.appearance.conservativeResize(k0 + n, Eigen::NoChange);
    model.appearance.bottomRows(n) = rows;
    Matrix cov = Matrix::Zero(k0 + n, k0 + n);
    cov.topLeftCorner(k0, k0) = model.covariance;
    cov.bottomRightCorner(n, n) = hp.sigma_a * hp.sigma_a * Matrix::Identity(n, n);
    model.covariance = std::move(cov);
    auto serial = next_free_serial(model.factor_names);
    for (Eigen::Index t = 0; t < n; ++t) model.factor_names.push_back(free_factor_name(serial++));
}

} // namespace

void sweep_all(std::vector<FactorState>& states, std::span<const PreparedImage> images,
               std::span<const SupervisionLabels> labels, AppearanceModel& model,
               const Hyperparams& hp, const SweepConfig& cfg, std::size_t sweep_index) {
    if (states.size() != images.size())
        throw Error(ErrorCode::dimension_mismatch, "state and image counts differ");
    if (!labels.empty() && labels.size() != images.size())
        throw Error(ErrorCode::dimension_mismatch, "label and image counts differ");

    const SupervisionLabels unlabeled;
    const auto k0 = static_cast<Eigen::Index>(model.factors());
    std::vector<SweepOutcome> outcomes(images.size());
    for_each_index(images.size(), cfg.threads, [&](std::size_t i) {
        Rng rng = make_stream(hp.rng_seed, images[i].bag->image_id, sweep_index);
        outcomes[i] = sweep_image(states[i], images[i], model, labels.empty() ? unlabeled : labels[i],
                                  hp, cfg, rng);
    });

    // Births are image-local during the sweep; give them global columns in
    // image order so the result is schedule independent.
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Matrix& rows = outcomes[i].born_rows;
        if (rows.rows() == 0) continue;
        const auto k_now = static_cast<Eigen::Index>(model.factors());
        const auto room = static_cast<Eigen::Index>(hp.k_max) - k_now;
        const auto kept = std::clamp<Eigen::Index>(room, 0, rows.rows());
        if (kept < rows.rows())
            spdlog::info("k_max={} reached: dropped {} new factor(s) from {}", hp.k_max,
                         rows.rows() - kept, images[i].bag->image_id);

        const BinaryMatrix& z = states[i].z();
        BinaryMatrix moved = BinaryMatrix::Zero(z.rows(), k_now + kept);
        moved.leftCols(k0) = z.leftCols(k0);
        moved.middleCols(k_now, kept) = z.middleCols(k0, kept);
        states[i] = FactorState::from_z(std::move(moved));
        append_factors(model, rows.topRows(kept), hp);
    }
}

SufficientStats sufficient_stats(std::span<const FactorState> states,
                                 std::span<const PreparedImage> images, std::size_t factors) {
    if (states.size() != images.size())
        throw Error(ErrorCode::dimension_mismatch, "state and image counts differ");
    const auto k = static_cast<Eigen::Index>(factors);
    const auto d = images.empty() ? Eigen::Index{0} : images.front().features.cols();
    SufficientStats stats{Matrix::Zero(k, k), Matrix::Zero(k, d)};
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& state = states[i];
        if (state.patches() != images[i].size())
            throw Error(ErrorCode::dimension_mismatch, "state rows differ from patch count");
        if (state.k_active() > factors)
            throw Error(ErrorCode::dimension_mismatch, "state has more factors than expected");
        if (images[i].features.cols() != d)
            throw Error(ErrorCode::dimension_mismatch, "images disagree on feature dimension");
        for (std::size_t j = 0; j < state.patches(); ++j) {
            const auto on = active_factors(state, j);
            for (const auto p : on) {
                const auto pi = static_cast<Eigen::Index>(p);
                stats.cross.row(pi) += images[i].features.row(static_cast<Eigen::Index>(j));
                for (const auto q : on) stats.gram(pi, static_cast<Eigen::Index>(q)) += 1.0;
            }
        }
    }
    return stats;
}

Matrix draw_appearance(const Matrix& mean, const Matrix& covariance, Rng& rng) {
    Eigen::LLT<Matrix> llt(covariance);
    if (llt.info() != Eigen::Success)
        throw Error(ErrorCode::internal, "appearance covariance is not positive definite");
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix e(mean.rows(), mean.cols());
    for (Eigen::Index c = 0; c < e.cols(); ++c)
        for (Eigen::Index r = 0; r < e.rows(); ++r) e(r, c) = normal(rng);
    return mean + llt.matrixL() * e;
}

namespace {

std::vector<std::string> complete_names(std::span<const std::string> names, std::size_t factors) {
    std::vector<std::string> out(names.begin(), names.begin() + std::min(names.size(), factors));
    auto serial = next_free_serial(out);
    while (out.size() < factors) out.push_back(free_factor_name(serial++));
    return out;
}

} // namespace

AppearanceModel sample_appearance(std::span<const FactorState> states,
                                  std::span<const PreparedImage> images, const Hyperparams& hp,
                                  bool draw, Rng& rng, std::span<const std::string> names) {
    if (images.empty()) throw Error(ErrorCode::invalid_argument, "sample_appearance: no images");
    std::size_t factors = 0;
    for (const auto& s : states) factors = std::max(factors, s.k_active());
    const auto stats = sufficient_stats(states, images, factors);

    const auto k = static_cast<Eigen::Index>(factors);
    const double s2x = hp.sigma_x * hp.sigma_x;
    const Matrix precision = stats.gram + (s2x / (hp.sigma_a * hp.sigma_a)) * Matrix::Identity(k, k);
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() != Eigen::Success)
        throw Error(ErrorCode::internal, "appearance posterior precision is not positive definite");

    Matrix mean = llt.solve(stats.cross);
    Matrix cov = s2x * llt.solve(Matrix::Identity(k, k));
    cov = (0.5 * (cov + cov.transpose())).eval();

    auto model = AppearanceModel::from_posterior(std::move(mean), std::move(cov),
                                                 complete_names(names, factors), hp);
    if (draw) {
        // Sigma = s2x (U^T U)^-1, so sigma_x U^-1 E has covariance Sigma.
        std::normal_distribution<double> normal(0.0, 1.0);
        Matrix e(model.mean.rows(), model.mean.cols());
        for (Eigen::Index c = 0; c < e.cols(); ++c)
            for (Eigen::Index r = 0; r < e.rows(); ++r) e(r, c) = normal(rng);
        model.appearance = model.mean + hp.sigma_x * llt.matrixU().solve(e);
    }
    return model;
}

AppearanceModel sample_appearance(std::span<const FactorState> states,
                                  std::span<const FeatureBag> bags, const Hyperparams& hp,
                                  const SweepConfig& cfg, Rng& rng,
                                  std::span<const std::string> names) {
    const auto images = prepare_images(bags);
    return sample_appearance(states, images, hp, cfg.sample_appearance, rng, names);
}

std::vector<std::string> merge_vocabularies(std::span<const Dataset> datasets,
                                            std::size_t k_supervised) {
    std::vector<std::string> merged;
    for (const auto& ds : datasets) {
        std::vector<std::string> seen;
        for (const auto& name : ds.vocabulary) {
            if (std::find(seen.begin(), seen.end(), name) != seen.end())
                throw Error(ErrorCode::vocabulary_mismatch,
                            "dataset '" + ds.name + "' repeats attribute '" + name + "'");
            seen.push_back(name);
            if (std::find(merged.begin(), merged.end(), name) == merged.end()) merged.push_back(name);
        }
    }
    if (merged.size() != k_supervised)
        throw Error(ErrorCode::vocabulary_mismatch,
                    "datasets name " + std::to_string(merged.size()) + " supervised factors, expected " +
                        std::to_string(k_supervised));
    return merged;
}

SupervisionLabels align_labels(const SupervisionLabels& labels,
                               std::span<const std::string> local_vocabulary,
                               std::span<const std::string> global_vocabulary) {
    const auto k_s = global_vocabulary.size();
    std::vector<std::size_t> to_global;
    for (const auto& name : local_vocabulary) {
        const auto it = std::find(global_vocabulary.begin(), global_vocabulary.end(), name);
        if (it == global_vocabulary.end())
            throw Error(ErrorCode::vocabulary_mismatch, "attribute '" + name + "' not in vocabulary");
        to_global.push_back(static_cast<std::size_t>(it - global_vocabulary.begin()));
    }

    SupervisionLabels out;
    out.mode = labels.mode;
    out.foreground = labels.foreground;
    out.annotated.assign(k_s, 0);
    for (const auto g : to_global) out.annotated[g] = 1;

    auto remap = [&](const std::vector<std::uint8_t>& local) {
        if (local.size() != to_global.size())
            throw Error(ErrorCode::vocabulary_mismatch,
                        "label length " + std::to_string(local.size()) + " differs from vocabulary size " +
                            std::to_string(to_global.size()));
        std::vector<std::uint8_t> global(k_s, 0);
        for (std::size_t l = 0; l < local.size(); ++l) global[to_global[l]] = local[l];
        return global;
    };
    if (labels.mode == SupervisionMode::weak) out.weak = remap(labels.weak);
    if (labels.mode == SupervisionMode::strong)
        for (const auto& row : labels.strong) out.strong.push_back(remap(row));
    return out;
}

namespace {

void remove_factor_row(AppearanceModel& model, Eigen::Index k) {
    auto drop_row = [k](Matrix& m) {
        const auto n = m.rows();
        if (k + 1 < n) m.middleRows(k, n - k - 1) = m.bottomRows(n - k - 1).eval();
        m.conservativeResize(n - 1, Eigen::NoChange);
    };
    auto drop_col = [k](Matrix& m) {
        const auto n = m.cols();
        if (k + 1 < n) m.middleCols(k, n - k - 1) = m.rightCols(n - k - 1).eval();
        m.conservativeResize(Eigen::NoChange, n - 1);
    };
    drop_row(model.mean);
    drop_row(model.appearance);
    drop_row(model.covariance);
    drop_col(model.covariance);
    model.factor_names.erase(model.factor_names.begin() + k);
}

// Free factors no image uses any more are removed so births do not pile up
// against k_max.
void prune_unused_factors(std::vector<FactorState>& states, AppearanceModel& model,
                          std::size_t keep_below) {
    for (auto k = model.factors(); k-- > keep_below;) {
        int total = 0;
        for (const auto& s : states)
            if (k < s.k_active()) total += s.count(k);
        if (total > 0) continue;
        for (auto& s : states)
            if (k < s.k_active()) s.remove_factor(k);
        remove_factor_row(model, static_cast<Eigen::Index>(k));
    }
}

} // namespace

TrainingResult train_auxiliary(std::span<const Dataset> datasets, const Hyperparams& hp,
                               const SweepConfig& cfg, const SweepObserver& observer) {
    cfg.validate();
    hp.validate();
    std::size_t total = 0;
    for (const auto& ds : datasets) total += ds.items.size();
    if (total == 0) throw Error(ErrorCode::invalid_argument, "train_auxiliary: empty input");

    const auto vocabulary = merge_vocabularies(datasets, hp.k_supervised);

    std::vector<PreparedImage> images;
    std::vector<SupervisionLabels> labels;
    images.reserve(total);
    labels.reserve(total);
    std::size_t dim = 0;
    for (const auto& ds : datasets) {
        for (const auto& item : ds.items) {
            if (images.empty()) dim = item.bag.feature_dim();
            if (item.bag.feature_dim() != dim)
                throw Error(ErrorCode::dimension_mismatch,
                            item.bag.image_id + ": feature dimension differs across datasets");
            auto aligned = align_labels(item.labels, ds.vocabulary, vocabulary);
            validate_labels(aligned, item.bag, hp.k_supervised);
            images.push_back(prepare_image(item.bag));
            labels.push_back(std::move(aligned));
        }
    }

    std::vector<FactorState> states;
    states.reserve(total);
    for (std::size_t i = 0; i < images.size(); ++i) {
        Rng rng = make_stream(hp.rng_seed, "init:" + images[i].bag->image_id);
        FactorState state(images[i].size(), hp.k_supervised);
        for (std::size_t j = 0; j < state.patches(); ++j)
            for (std::size_t k = 0; k < hp.k_supervised; ++k) {
                const auto forced = clamped_value(labels[i], j, k, hp.k_supervised, cfg.background);
                state.set(j, k, forced ? *forced : bernoulli(rng, 0.5));
            }
        states.push_back(std::move(state));
    }

    Rng init_rng = make_stream(hp.rng_seed, "appearance-init");
    AppearanceModel model = sample_appearance(states, images, hp, false, init_rng, vocabulary);

    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        sweep_all(states, images, labels, model, hp, cfg, t);
        if (cfg.birth_enabled) prune_unused_factors(states, model, hp.k_supervised);
        if (cfg.update_appearance && (t + 1) % cfg.appearance_resample_period == 0) {
            Rng rng = make_stream(hp.rng_seed, "appearance", t);
            const bool draw = cfg.sample_appearance && t < cfg.burn_in;
            const auto names = model.factor_names;
            for (auto& s : states) s.resize_factors(model.factors());
            model = sample_appearance(states, images, hp, draw, rng, names);
        }
        if (observer) observer(t, model, states);
    }
    for (auto& s : states) s.resize_factors(model.factors());
    return {std::move(model), std::move(states)};
}

} // namespace mrfibp
