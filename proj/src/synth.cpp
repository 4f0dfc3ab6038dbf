#include "mrfibp/synth.hpp"

#include <algorithm>
#include <limits>
#include <random>

#include <json.hpp>
#include <spdlog/fmt/fmt.h>

#include "mrfibp/features.hpp"
#include "mrfibp/rng.hpp"

namespace mrfibp {

using json = nlohmann::json;

void SyntheticSpec::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::invalid_argument, "synthetic spec: " + what); };
    if (n_images == 0 || n_identities == 0 || k_true == 0 || d == 0 || grid <= 0)
        fail("counts must be positive");
    if (width < grid || height < grid) fail("image smaller than the patch grid");
    if (!(coherence >= 0.0 && coherence <= 1.0)) fail("coherence must lie in [0, 1]");
    if (!(density >= 0.0 && density <= 1.0)) fail("density must lie in [0, 1]");
    if (!(view_perturbation >= 0.0 && view_perturbation <= 1.0)) fail("view_perturbation must lie in [0, 1]");
    if (!(noise_std >= 0.0) || !(appearance_scale > 0.0)) fail("noise_std >= 0 and appearance_scale > 0 required");
    if (!domain_shift.empty() && domain_shift.size() != d) fail("domain_shift length must equal d");
}

std::string to_json(const SyntheticSpec& s) {
    json j = {{"n_images", s.n_images},
              {"n_identities", s.n_identities},
              {"grid", s.grid},
              {"width", s.width},
              {"height", s.height},
              {"k_true", s.k_true},
              {"d", s.d},
              {"noise_std", s.noise_std},
              {"coherence", s.coherence},
              {"density", s.density},
              {"appearance_scale", s.appearance_scale},
              {"view_perturbation", s.view_perturbation},
              {"domain_shift", s.domain_shift},
              {"seed", s.seed}};
    return j.dump(2);
}

SyntheticSpec synthetic_spec_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::parse_error, std::string("synthetic spec: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::parse_error, "synthetic spec: expected an object");
    SyntheticSpec s;
    auto take = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const json::exception&) {
            throw Error(ErrorCode::parse_error, fmt::format("synthetic spec: field '{}' has the wrong type", key));
        }
    };
    for (const auto& [key, _] : j.items()) {
        static const std::vector<std::string> known = {
            "n_images", "n_identities", "grid", "width", "height", "k_true", "d", "noise_std", "coherence",
            "density", "appearance_scale", "view_perturbation", "domain_shift", "seed"};
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw Error(ErrorCode::parse_error, fmt::format("synthetic spec: unknown field '{}'", key));
    }
    take("n_images", s.n_images);
    take("n_identities", s.n_identities);
    take("grid", s.grid);
    take("width", s.width);
    take("height", s.height);
    take("k_true", s.k_true);
    take("d", s.d);
    take("noise_std", s.noise_std);
    take("coherence", s.coherence);
    take("density", s.density);
    take("appearance_scale", s.appearance_scale);
    take("view_perturbation", s.view_perturbation);
    take("domain_shift", s.domain_shift);
    take("seed", s.seed);
    s.validate();
    return s;
}

std::string synthetic_factor_name(std::size_t k) { return "attr" + std::to_string(k); }

namespace {

// Row-major sweep: each cell copies a visited (left/up) neighbour with
// probability `coherence`, otherwise draws fresh.
BinaryMatrix coherent_states(const SyntheticSpec& spec, Rng& rng) {
    const int g = spec.grid;
    BinaryMatrix z(g * g, static_cast<Eigen::Index>(spec.k_true));
    for (Eigen::Index k = 0; k < z.cols(); ++k)
        for (int r = 0; r < g; ++r)
            for (int c = 0; c < g; ++c) {
                const int j = r * g + c;
                int visited[2];
                int n = 0;
                if (c > 0) visited[n++] = j - 1;
                if (r > 0) visited[n++] = j - g;
                const bool copy = n > 0 && uniform01(rng) < spec.coherence;
                if (copy) {
                    const int from = visited[n == 1 ? 0 : static_cast<int>(uniform01(rng) * 2.0)];
                    z(j, k) = z(from, k);
                } else {
                    z(j, k) = bernoulli(rng, spec.density) ? 1 : 0;
                }
            }
    return z;
}

FeatureBag observe(const SyntheticSpec& spec, const std::string& id, const BinaryMatrix& z,
                   const Matrix& a, Rng& rng) {
    FeatureBag bag = grid_layout(id, spec.width, spec.height, spec.grid, spec.grid);
    std::normal_distribution<double> noise(0.0, 1.0);
    const Matrix x = z.cast<double>() * a;
    for (std::size_t j = 0; j < bag.size(); ++j) {
        Vector f = x.row(static_cast<Eigen::Index>(j)).transpose();
        if (spec.noise_std > 0.0)
            for (Eigen::Index dd = 0; dd < f.size(); ++dd) f(dd) += spec.noise_std * noise(rng);
        bag.patches[j].feature = std::move(f);
    }
    return bag;
}

} // namespace

SyntheticData synth_generate(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticData out;
    const auto k = static_cast<Eigen::Index>(spec.k_true);
    const auto d = static_cast<Eigen::Index>(spec.d);

    {
        Rng rng = make_stream(spec.seed, "synth-appearance");
        std::normal_distribution<double> normal(0.0, spec.appearance_scale);
        out.appearance.resize(k, d);
        for (Eigen::Index r = 0; r < k; ++r)
            for (Eigen::Index c = 0; c < d; ++c) out.appearance(r, c) = normal(rng);
    }
    out.target_appearance = out.appearance;
    if (!spec.domain_shift.empty())
        for (Eigen::Index r = 0; r < k; ++r)
            for (Eigen::Index c = 0; c < d; ++c) out.target_appearance(r, c) += spec.domain_shift[static_cast<std::size_t>(c)];

    out.source.name = "synthetic-source";
    for (std::size_t f = 0; f < spec.k_true; ++f) out.source.vocabulary.push_back(synthetic_factor_name(f));
    for (std::size_t i = 0; i < spec.n_images; ++i) {
        Rng state_rng = make_stream(spec.seed, "synth-source-z", i);
        Rng noise_rng = make_stream(spec.seed, "synth-source-x", i);
        auto z = coherent_states(spec, state_rng);
        LabeledBag item;
        item.bag = observe(spec, fmt::format("src{:04d}", i), z, out.appearance, noise_rng);
        item.labels.mode = SupervisionMode::strong;
        for (Eigen::Index j = 0; j < z.rows(); ++j) {
            std::vector<std::uint8_t> row(spec.k_true);
            for (Eigen::Index f = 0; f < k; ++f) row[static_cast<std::size_t>(f)] = z(j, f);
            item.labels.strong.push_back(std::move(row));
        }
        out.source.items.push_back(std::move(item));
        out.source_truth.push_back(std::move(z));
    }

    for (std::size_t id = 0; id < spec.n_identities; ++id) {
        Rng state_rng = make_stream(spec.seed, "synth-target-z", id);
        const auto base = coherent_states(spec, state_rng);
        std::pair<std::string, std::string> pair;
        for (int view = 0; view < 2; ++view) {
            Rng view_rng = make_stream(spec.seed, "synth-target-view", 2 * id + static_cast<std::size_t>(view));
            Rng noise_rng = make_stream(spec.seed, "synth-target-x", 2 * id + static_cast<std::size_t>(view));
            BinaryMatrix z = base;
            for (Eigen::Index j = 0; j < z.rows(); ++j)
                for (Eigen::Index f = 0; f < k; ++f)
                    if (bernoulli(view_rng, spec.view_perturbation)) z(j, f) = 1 - z(j, f);
            const auto image_id = fmt::format("id{:04d}-v{}", id, view);
            (view == 0 ? pair.first : pair.second) = image_id;
            out.target.push_back(observe(spec, image_id, z, out.target_appearance, noise_rng));
            out.target_truth.push_back(std::move(z));
        }
        out.reid_pairs.push_back(std::move(pair));
    }
    return out;
}

double min_row_distance(const Matrix& rows) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < rows.rows(); ++a)
        for (Eigen::Index b = a + 1; b < rows.rows(); ++b) best = std::min(best, (rows.row(a) - rows.row(b)).norm());
    return best;
}

} // namespace mrfibp
