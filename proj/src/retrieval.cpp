#include "mrfibp/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <numeric>
#include <ostream>

#include <spdlog/fmt/fmt.h>

#include "mrfibp/parallel.hpp"

namespace mrfibp {

double patch_distance(const Vector& a, const Vector& b) {
    if (a.size() != b.size())
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("patch vectors differ in length ({} vs {})", a.size(), b.size()));
    return (l1_normalized(a) - l1_normalized(b)).cwiseAbs().sum();
}

std::array<double, kGridWindows> window_distances(const GridDescriptor& probe,
                                                  const GridDescriptor& gallery, int row_band) {
    if (probe.factors() != gallery.factors())
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("{} has {} factors, {} has {}", probe.image_id, probe.factors(),
                                gallery.image_id, gallery.factors()));
    if (row_band < 0) throw Error(ErrorCode::invalid_argument, "row_band must be non-negative");
    std::array<double, kGridWindows> out{};
    for (std::size_t g = 0; g < kGridWindows; ++g) {
        const auto& pw = probe.windows[g];
        double best = std::numeric_limits<double>::infinity();
        for (const auto& gw : gallery.windows)
            if (std::abs(gw.origin.row - pw.origin.row) <= row_band)
                best = std::min(best, patch_distance(pw.vector, gw.vector));
        out[g] = best;
    }
    return out;
}

double image_distance(const GridDescriptor& probe, const GridDescriptor& gallery, int row_band) {
    const auto forward = window_distances(probe, gallery, row_band);
    const auto backward = window_distances(gallery, probe, row_band);
    const double f = std::accumulate(forward.begin(), forward.end(), 0.0);
    const double b = std::accumulate(backward.begin(), backward.end(), 0.0);
    return 0.5 * (f + b);
}

Matrix distance_matrix(std::span<const GridDescriptor> probes, std::span<const GridDescriptor> gallery,
                       int row_band, std::size_t threads) {
    Matrix d(static_cast<Eigen::Index>(probes.size()), static_cast<Eigen::Index>(gallery.size()));
    for_each_index(probes.size(), threads, [&](std::size_t p) {
        for (std::size_t g = 0; g < gallery.size(); ++g)
            d(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(g)) =
                image_distance(probes[p], gallery[g], row_band);
    });
    return d;
}

std::size_t match_rank(const Matrix& distances, Eigen::Index probe, std::size_t truth) {
    const auto t = static_cast<Eigen::Index>(truth);
    const double target = distances(probe, t);
    std::size_t rank = 1;
    for (Eigen::Index g = 0; g < distances.cols(); ++g) {
        const double v = distances(probe, g);
        if (v < target || (v == target && g < t)) ++rank;
    }
    return rank;
}

std::vector<double> cmc_curve(const Matrix& distances, std::span<const std::size_t> truth) {
    const auto probes = static_cast<std::size_t>(distances.rows());
    const auto gallery = static_cast<std::size_t>(distances.cols());
    if (truth.size() != probes)
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("{} truth entries for {} probes", truth.size(), probes));
    if (probes == 0) throw Error(ErrorCode::invalid_argument, "cmc_curve: no probes");
    std::vector<std::size_t> hits(gallery + 1, 0);
    for (std::size_t p = 0; p < probes; ++p) {
        if (truth[p] >= gallery)
            throw Error(ErrorCode::index_out_of_range,
                        fmt::format("probe {} references gallery index {} of {}", p, truth[p], gallery));
        ++hits[match_rank(distances, static_cast<Eigen::Index>(p), truth[p])];
    }
    std::vector<double> cmc(gallery);
    std::size_t cumulative = 0;
    for (std::size_t r = 1; r <= gallery; ++r) {
        cumulative += hits[r];
        cmc[r - 1] = static_cast<double>(cumulative) / static_cast<double>(probes);
    }
    return cmc;
}

void QueryTerm::validate(std::size_t factors) const {
    if (groups.empty()) throw Error(ErrorCode::invalid_argument, "query has no groups");
    for (const auto& g : groups) {
        if (g.factors.empty()) throw Error(ErrorCode::invalid_argument, "query group is empty");
        for (auto k : g.factors)
            if (k >= factors)
                throw Error(ErrorCode::index_out_of_range,
                            fmt::format("factor index {} out of range (K={})", k, factors));
    }
}

double group_score(const HeatMapStack& stack, const QueryGroup& group) {
    if (group.factors.size() == 1 || !group.colocated) {
        double score = 1.0;
        for (auto k : group.factors) {
            const auto& m = stack.maps[k];
            score *= m.empty() ? 0.0 : static_cast<double>(*std::max_element(m.begin(), m.end()));
        }
        return score;
    }
    const auto pixels = stack.maps[group.factors.front()].size();
    double best = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) {
        double v = 1.0;
        for (auto k : group.factors) v *= static_cast<double>(stack.maps[k][p]);
        best = std::max(best, v);
    }
    return best;
}

double score_query(const HeatMapStack& stack, const QueryTerm& query) {
    query.validate(stack.factors());
    double score = 1.0;
    for (const auto& g : query.groups) score *= group_score(stack, g);
    return score;
}

std::vector<RankedImage> rank_images(std::span<const HeatMapStack> stacks, const QueryTerm& query,
                                     std::optional<double> min_score) {
    std::vector<RankedImage> out;
    out.reserve(stacks.size());
    for (const auto& s : stacks) {
        const double score = score_query(s, query);
        if (!min_score || score > *min_score) out.push_back({s.image_id, score});
    }
    std::sort(out.begin(), out.end(), [](const RankedImage& a, const RankedImage& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.image_id < b.image_id;
    });
    return out;
}

namespace {

std::size_t edit_distance(std::string_view a, std::string_view b) {
    std::vector<std::size_t> row(b.size() + 1);
    std::iota(row.begin(), row.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const auto up = row[j];
            const bool same = std::tolower(static_cast<unsigned char>(a[i - 1])) ==
                              std::tolower(static_cast<unsigned char>(b[j - 1]));
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (same ? 0 : 1)});
            diag = up;
        }
    }
    return row[b.size()];
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    for (;;) {
        const auto at = s.find(sep);
        out.push_back(s.substr(0, at));
        if (at == std::string_view::npos) return out;
        s.remove_prefix(at + 1);
    }
}

std::optional<std::size_t> find_name(std::string_view name, std::span<const std::string> names) {
    for (std::size_t k = 0; k < names.size(); ++k)
        if (names[k] == name) return k;
    return std::nullopt;
}

[[noreturn]] void unknown_name(std::string_view name, std::span<const std::string> names) {
    const auto near = nearest_names(name, names);
    std::string hint;
    for (const auto& n : near) hint += (hint.empty() ? "" : ", ") + n;
    throw Error(ErrorCode::unknown_factor,
                fmt::format("unknown attribute '{}'{}", name, hint.empty() ? "" : "; nearest: " + hint));
}

// Fewest-names split of a '-' joined term.
QueryGroup parse_group(std::string_view term, std::span<const std::string> names) {
    const auto parts = split(term, '-');
    const auto n = parts.size();
    auto chunk = [&](std::size_t i, std::size_t j) {
        return term.substr(static_cast<std::size_t>(parts[i].data() - term.data()),
                           static_cast<std::size_t>(parts[j - 1].data() + parts[j - 1].size() -
                                                    parts[i].data()));
    };
    constexpr auto none = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> cost(n + 1, none), from(n + 1, 0);
    std::vector<std::size_t> factor(n + 1, 0);
    cost[0] = 0;
    for (std::size_t j = 1; j <= n; ++j)
        for (std::size_t i = 0; i < j; ++i) {
            if (cost[i] == none) continue;
            const auto k = find_name(chunk(i, j), names);
            if (k && cost[i] + 1 < cost[j]) {
                cost[j] = cost[i] + 1;
                from[j] = i;
                factor[j] = *k;
            }
        }
    if (cost[n] == none) {
        // Name the first segment no known name can cover.
        for (std::size_t s = 0; s < n; ++s) {
            bool covered = false;
            for (std::size_t i = 0; i <= s && !covered; ++i)
                for (std::size_t j = s + 1; j <= n && !covered; ++j)
                    covered = find_name(chunk(i, j), names).has_value();
            if (!covered) unknown_name(parts[s], names);
        }
        unknown_name(term, names);
    }
    QueryGroup group;
    for (auto j = n; j > 0; j = from[j]) group.factors.push_back(factor[j]);
    std::reverse(group.factors.begin(), group.factors.end());
    group.colocated = true;
    return group;
}

} // namespace

std::vector<std::string> nearest_names(std::string_view name, std::span<const std::string> names,
                                       std::size_t limit) {
    std::vector<std::pair<std::size_t, std::size_t>> scored;
    for (std::size_t k = 0; k < names.size(); ++k) scored.emplace_back(edit_distance(name, names[k]), k);
    std::stable_sort(scored.begin(), scored.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < std::min(limit, scored.size()); ++i) out.push_back(names[scored[i].second]);
    return out;
}

QueryTerm parse_query(std::string_view text, std::span<const std::string> names) {
    QueryTerm query;
    for (auto raw : split(text, '+')) {
        const auto term = trim(raw);
        if (term.empty())
            throw Error(ErrorCode::parse_error, fmt::format("empty term in query '{}'", text));
        query.groups.push_back(parse_group(term, names));
    }
    return query;
}

PrCurve pr_curve(std::span<const double> scores, const std::vector<bool>& relevant) {
    if (scores.size() != relevant.size())
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("{} scores for {} relevance labels", scores.size(), relevant.size()));
    const auto total = static_cast<std::size_t>(std::count(relevant.begin(), relevant.end(), true));
    if (total == 0) throw Error(ErrorCode::invalid_argument, "pr_curve: no relevant images");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    PrCurve curve;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto idx = order[i];
        const double precision = static_cast<double>(hits + (relevant[idx] ? 1 : 0)) /
                                        static_cast<double>(i + 1);
        if (relevant[idx]) {
            ++hits;
            curve.average_precision += precision;
        }
        curve.points.push_back({scores[idx], precision,
                                static_cast<double>(hits) / static_cast<double>(total)});
    }
    curve.average_precision /= static_cast<double>(total);
    return curve;
}

void write_cmc_csv(std::ostream& out, std::span<const double> cmc) {
    out << "rank,accuracy\n";
    for (std::size_t r = 0; r < cmc.size(); ++r) out << fmt::format("{},{}\n", r + 1, cmc[r]);
}

void write_pr_csv(std::ostream& out, const PrCurve& curve) {
    out << "threshold,precision,recall\n";
    for (const auto& p : curve.points) out << fmt::format("{},{},{}\n", p.threshold, p.precision, p.recall);
    out << fmt::format("AP,{}\n", curve.average_precision);
}

std::size_t factor_index(std::string_view name, std::span<const std::string> names) {
    if (const auto k = find_name(name, names)) return *k;
    unknown_name(name, names);
}

} // namespace mrfibp
