#include "mrfibp/io.hpp"

#include <fstream>
#include <set>

#include <json.hpp>
#include <spdlog/fmt/fmt.h>

#include "mrfibp/rng.hpp"

namespace mrfibp {

using json = nlohmann::json;

namespace {

// Parse context: "<source>:<line>" plus the image id once known.
struct Where {
    std::string source;
    std::size_t line = 0;
    std::string image;

    [[noreturn]] void fail(const std::string& field, const std::string& what) const {
        std::string at = fmt::format("{}:{}", source, line);
        if (!image.empty()) at += fmt::format(" (image '{}')", image);
        throw Error(ErrorCode::parse_error, fmt::format("{}: field '{}': {}", at, field, what));
    }
};

const json& member(const json& obj, const std::string& key, const std::string& field, const Where& w) {
    if (!obj.is_object()) w.fail(field, "expected an object");
    const auto it = obj.find(key);
    if (it == obj.end()) w.fail(field.empty() ? key : field + "." + key, "missing");
    return *it;
}

const json& array_at(const json& obj, const std::string& key, const std::string& field, const Where& w) {
    const auto& v = member(obj, key, field, w);
    if (!v.is_array()) w.fail(field.empty() ? key : field + "." + key, "expected an array");
    return v;
}

double number(const json& v, const std::string& field, const Where& w) {
    if (!v.is_number()) w.fail(field, "expected a number");
    return v.get<double>();
}

std::int64_t integer(const json& v, const std::string& field, const Where& w) {
    if (!v.is_number_integer()) w.fail(field, "expected an integer");
    return v.get<std::int64_t>();
}

std::uint8_t flag(const json& v, const std::string& field, const Where& w) {
    if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
    const auto x = v.is_number_integer() ? v.get<std::int64_t>() : -1;
    if (x != 0 && x != 1) w.fail(field, "expected 0 or 1");
    return static_cast<std::uint8_t>(x);
}

std::string text(const json& v, const std::string& field, const Where& w) {
    if (!v.is_string()) w.fail(field, "expected a string");
    return v.get<std::string>();
}

std::vector<std::uint8_t> flags(const json& arr, const std::string& field, const Where& w) {
    if (!arr.is_array()) w.fail(field, "expected an array");
    std::vector<std::uint8_t> out;
    out.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(flag(arr[i], fmt::format("{}[{}]", field, i), w));
    return out;
}

json flags_json(const std::vector<std::uint8_t>& v) {
    json out = json::array();
    for (auto x : v) out.push_back(static_cast<int>(x));
    return out;
}

json matrix_json(const Matrix& m) {
    json out = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        out.push_back(std::move(row));
    }
    return out;
}

Matrix matrix_from(const json& arr, Eigen::Index cols, const std::string& field, const Where& w) {
    if (!arr.is_array()) w.fail(field, "expected an array of rows");
    Matrix m(static_cast<Eigen::Index>(arr.size()), cols);
    for (std::size_t r = 0; r < arr.size(); ++r) {
        const auto& row = arr[r];
        const auto rf = fmt::format("{}[{}]", field, r);
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            w.fail(rf, fmt::format("expected {} values", cols));
        for (Eigen::Index c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), c) = number(row[static_cast<std::size_t>(c)], rf, w);
    }
    return m;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
    return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw Error(ErrorCode::io, "write failed: " + path.string());
}

// Calls fn(parsed, where) for every non-blank line.
template <typename Fn>
void for_each_record(std::istream& in, const std::string& source, Fn&& fn) {
    std::string line;
    Where w{source, 0, {}};
    while (std::getline(in, line)) {
        ++w.line;
        w.image.clear();
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error(ErrorCode::parse_error, fmt::format("{}:{}: {}", source, w.line, e.what()));
        }
        fn(record, w);
    }
}

Patch parse_patch(const json& p, const std::string& field, const Where& w) {
    Patch patch;
    patch.id = static_cast<int>(integer(member(p, "id", field, w), field + ".id", w));
    const auto& runs = array_at(p, "rle_mask", field, w);
    for (std::size_t r = 0; r < runs.size(); ++r) {
        const auto rf = fmt::format("{}.rle_mask[{}]", field, r);
        if (!runs[r].is_array() || runs[r].size() != 2) w.fail(rf, "expected [start, length]");
        patch.mask.push_back({integer(runs[r][0], rf, w), integer(runs[r][1], rf, w)});
    }
    const auto& feature = array_at(p, "feature", field, w);
    patch.feature.resize(static_cast<Eigen::Index>(feature.size()));
    for (std::size_t d = 0; d < feature.size(); ++d)
        patch.feature(static_cast<Eigen::Index>(d)) = number(feature[d], fmt::format("{}.feature[{}]", field, d), w);
    return patch;
}

SupervisionLabels parse_labels(const json& l, const Where& w) {
    SupervisionLabels labels;
    const auto mode = text(member(l, "mode", "labels", w), "labels.mode", w);
    try {
        labels.mode = supervision_mode_from_string(mode);
    } catch (const Error& e) {
        w.fail("labels.mode", e.what());
    }
    if (l.contains("weak")) labels.weak = flags(l["weak"], "labels.weak", w);
    if (l.contains("strong")) {
        const auto& s = l["strong"];
        if (!s.is_array()) w.fail("labels.strong", "expected an array of rows");
        for (std::size_t j = 0; j < s.size(); ++j)
            labels.strong.push_back(flags(s[j], fmt::format("labels.strong[{}]", j), w));
    }
    if (l.contains("fg")) labels.foreground = flags(l["fg"], "labels.fg", w);
    return labels;
}

std::size_t label_width(const SupervisionLabels& l) {
    if (l.mode == SupervisionMode::weak) return l.weak.size();
    if (l.mode == SupervisionMode::strong && !l.strong.empty()) return l.strong.front().size();
    return 0;
}

} // namespace

Dataset read_feature_bags(std::istream& in, const std::string& name) {
    Dataset dataset;
    dataset.name = name;
    bool have_vocabulary = false;
    bool first = true;
    std::set<std::string> seen;
    std::vector<std::size_t> lines;

    for_each_record(in, name, [&](const json& record, Where& w) {
        if (first && record.is_object() && record.contains("vocabulary")) {
            first = false;
            const auto& v = array_at(record, "vocabulary", "", w);
            for (std::size_t i = 0; i < v.size(); ++i)
                dataset.vocabulary.push_back(text(v[i], fmt::format("vocabulary[{}]", i), w));
            have_vocabulary = true;
            return;
        }
        first = false;
        LabeledBag item;
        auto& bag = item.bag;
        bag.image_id = text(member(record, "image_id", "", w), "image_id", w);
        w.image = bag.image_id;
        bag.width = static_cast<int>(integer(member(record, "width", "", w), "width", w));
        bag.height = static_cast<int>(integer(member(record, "height", "", w), "height", w));
        const auto& patches = array_at(record, "patches", "", w);
        for (std::size_t j = 0; j < patches.size(); ++j)
            bag.patches.push_back(parse_patch(patches[j], fmt::format("patches[{}]", j), w));
        const auto& adjacency = array_at(record, "adjacency", "", w);
        for (std::size_t e = 0; e < adjacency.size(); ++e) {
            const auto ef = fmt::format("adjacency[{}]", e);
            if (!adjacency[e].is_array() || adjacency[e].size() != 2) w.fail(ef, "expected [a, b]");
            bag.adjacency.emplace_back(static_cast<int>(integer(adjacency[e][0], ef, w)),
                                       static_cast<int>(integer(adjacency[e][1], ef, w)));
        }
        if (record.contains("labels")) item.labels = parse_labels(record["labels"], w);

        const auto report = validate_bag(bag);
        if (!report.ok())
            throw Error(ErrorCode::validation,
                        fmt::format("{}:{}: image '{}': {}", name, w.line, bag.image_id, report.violations.front()));
        if (!seen.insert(bag.image_id).second)
            throw Error(ErrorCode::validation,
                        fmt::format("{}:{}: duplicate image_id '{}'", name, w.line, bag.image_id));
        lines.push_back(w.line);
        dataset.items.push_back(std::move(item));
    });

    if (!have_vocabulary) {
        std::size_t width = 0;
        for (const auto& item : dataset.items) width = std::max(width, label_width(item.labels));
        for (std::size_t k = 0; k < width; ++k) dataset.vocabulary.push_back("attr-" + std::to_string(k));
    }
    for (std::size_t i = 0; i < dataset.items.size(); ++i) {
        const auto& item = dataset.items[i];
        try {
            validate_labels(item.labels, item.bag, dataset.vocabulary.size());
        } catch (const Error& e) {
            throw Error(ErrorCode::validation, fmt::format("{}:{}: {}", name, lines[i], e.what()));
        }
    }
    return dataset;
}

Dataset load_feature_bags(const std::filesystem::path& path) {
    auto in = open_in(path);
    auto dataset = read_feature_bags(in, path.string());
    dataset.name = path.stem().string();
    return dataset;
}

void write_feature_bags(std::ostream& out, const Dataset& dataset) {
    if (!dataset.vocabulary.empty()) out << json{{"vocabulary", dataset.vocabulary}}.dump() << '\n';
    for (const auto& item : dataset.items) {
        const auto& bag = item.bag;
        json patches = json::array();
        for (const auto& p : bag.patches) {
            json runs = json::array();
            for (const auto& r : p.mask) runs.push_back({r.start, r.length});
            patches.push_back({{"id", p.id},
                               {"rle_mask", std::move(runs)},
                               {"feature", std::vector<double>(p.feature.begin(), p.feature.end())}});
        }
        json adjacency = json::array();
        for (const auto& [a, b] : bag.adjacency) adjacency.push_back({a, b});
        json record = {{"image_id", bag.image_id},
                       {"width", bag.width},
                       {"height", bag.height},
                       {"patches", std::move(patches)},
                       {"adjacency", std::move(adjacency)}};
        const auto& l = item.labels;
        if (l.mode != SupervisionMode::none || !l.foreground.empty()) {
            json labels = {{"mode", std::string(to_string(l.mode))}};
            if (!l.weak.empty()) labels["weak"] = flags_json(l.weak);
            if (!l.strong.empty()) {
                json rows = json::array();
                for (const auto& row : l.strong) rows.push_back(flags_json(row));
                labels["strong"] = std::move(rows);
            }
            if (!l.foreground.empty()) labels["fg"] = flags_json(l.foreground);
            record["labels"] = std::move(labels);
        }
        out << record.dump() << '\n';
    }
}

void save_feature_bags(const std::filesystem::path& path, const Dataset& dataset) {
    auto out = open_out(path);
    write_feature_bags(out, dataset);
    finish(out, path);
}

// ---- checkpoints ----------------------------------------------------------

namespace {

std::string checksum_of(const json& body) {
    return fmt::format("{:016x}", fnv1a(body.dump()));
}

} // namespace

void write_model(std::ostream& out, const AppearanceModel& model) {
    model.validate();
    const auto& hp = model.hyperparams;
    json body = {{"version", kCheckpointVersion},
                 {"factor_names", model.factor_names},
                 {"k_supervised", hp.k_supervised},
                 {"feature_dim", model.feature_dim()},
                 {"hyperparams",
                  {{"alpha", hp.alpha},
                   {"beta", hp.beta},
                   {"sigma_x", hp.sigma_x},
                   {"sigma_a", hp.sigma_a},
                   {"k_supervised", hp.k_supervised},
                   {"k_max", hp.k_max},
                   {"rng_seed", hp.rng_seed}}},
                 {"mean", matrix_json(model.mean)},
                 {"covariance", matrix_json(model.covariance)}};
    body["checksum"] = checksum_of(body);
    out << body.dump() << '\n';
}

AppearanceModel read_model(std::istream& in) {
    const std::string content{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    json body;
    try {
        body = json::parse(content);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::checkpoint_corrupt, std::string("checkpoint is truncated or malformed: ") + e.what());
    }
    if (!body.is_object() || !body.contains("version") || !body["version"].is_number_integer())
        throw Error(ErrorCode::checkpoint_corrupt, "checkpoint has no version field");
    const auto version = body["version"].get<std::int64_t>();
    if (version != kCheckpointVersion)
        throw Error(ErrorCode::checkpoint_version,
                    fmt::format("checkpoint version {} is not supported (expected {})", version, kCheckpointVersion));
    if (!body.contains("checksum") || !body["checksum"].is_string())
        throw Error(ErrorCode::checkpoint_corrupt, "checkpoint has no checksum");
    const auto stored = body["checksum"].get<std::string>();
    body.erase("checksum");
    if (checksum_of(body) != stored) throw Error(ErrorCode::checkpoint_corrupt, "checkpoint checksum mismatch");

    try {
        const Where w{"checkpoint", 1, {}};
        Hyperparams hp;
        const auto& h = member(body, "hyperparams", "", w);
        hp.alpha = number(member(h, "alpha", "hyperparams", w), "hyperparams.alpha", w);
        hp.beta = number(member(h, "beta", "hyperparams", w), "hyperparams.beta", w);
        hp.sigma_x = number(member(h, "sigma_x", "hyperparams", w), "hyperparams.sigma_x", w);
        hp.sigma_a = number(member(h, "sigma_a", "hyperparams", w), "hyperparams.sigma_a", w);
        hp.k_supervised = member(h, "k_supervised", "hyperparams", w).get<std::size_t>();
        hp.k_max = member(h, "k_max", "hyperparams", w).get<std::size_t>();
        hp.rng_seed = member(h, "rng_seed", "hyperparams", w).get<std::uint64_t>();
        if (member(body, "k_supervised", "", w).get<std::size_t>() != hp.k_supervised)
            w.fail("k_supervised", "disagrees with hyperparams");

        std::vector<std::string> names;
        const auto& n = array_at(body, "factor_names", "", w);
        for (std::size_t i = 0; i < n.size(); ++i) names.push_back(text(n[i], fmt::format("factor_names[{}]", i), w));
        const auto d = static_cast<Eigen::Index>(member(body, "feature_dim", "", w).get<std::size_t>());
        const auto k = static_cast<Eigen::Index>(names.size());
        Matrix mean = matrix_from(array_at(body, "mean", "", w), d, "mean", w);
        Matrix cov = matrix_from(array_at(body, "covariance", "", w), k, "covariance", w);
        if (mean.rows() != k || cov.rows() != k) w.fail("mean", "row count differs from factor_names");
        auto model = AppearanceModel::from_posterior(std::move(mean), std::move(cov), std::move(names), hp);
        model.validate();
        return model;
    } catch (const Error& e) {
        throw Error(ErrorCode::checkpoint_corrupt, e.what());
    } catch (const json::exception& e) {
        throw Error(ErrorCode::checkpoint_corrupt, e.what());
    }
}

void save_model(const std::filesystem::path& path, const AppearanceModel& model) {
    auto out = open_out(path);
    write_model(out, model);
    finish(out, path);
}

AppearanceModel load_model(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_model(in);
}

// ---- heat maps ------------------------------------------------------------

void write_heatmaps(std::ostream& out, const std::vector<HeatMapStack>& stacks) {
    for (const auto& s : stacks) {
        json maps = json::object();
        for (std::size_t k = 0; k < s.factors(); ++k) maps[s.factor_names[k]] = s.maps[k];
        json record = {{"image_id", s.image_id},
                       {"width", s.width},
                       {"height", s.height},
                       {"factors", s.factor_names},
                       {"maps", std::move(maps)}};
        out << record.dump() << '\n';
    }
}

std::vector<HeatMapStack> read_heatmaps(std::istream& in) {
    std::vector<HeatMapStack> out;
    for_each_record(in, "heatmaps", [&](const json& record, Where& w) {
        HeatMapStack s;
        s.image_id = text(member(record, "image_id", "", w), "image_id", w);
        w.image = s.image_id;
        s.width = static_cast<int>(integer(member(record, "width", "", w), "width", w));
        s.height = static_cast<int>(integer(member(record, "height", "", w), "height", w));
        const auto& maps = member(record, "maps", "", w);
        if (!maps.is_object()) w.fail("maps", "expected an object");
        if (record.contains("factors")) {
            const auto& f = record["factors"];
            if (!f.is_array()) w.fail("factors", "expected an array");
            for (std::size_t i = 0; i < f.size(); ++i) s.factor_names.push_back(text(f[i], "factors", w));
        } else {
            for (const auto& [name, _] : maps.items()) s.factor_names.push_back(name);
        }
        const auto pixels = static_cast<std::size_t>(s.width) * static_cast<std::size_t>(s.height);
        for (const auto& name : s.factor_names) {
            const auto& grid = member(maps, name, "maps", w);
            const auto field = "maps." + name;
            if (!grid.is_array() || grid.size() != pixels)
                w.fail(field, fmt::format("expected {} values", pixels));
            std::vector<float> values(pixels);
            for (std::size_t p = 0; p < pixels; ++p) {
                const double v = number(grid[p], field, w);
                if (!(v >= 0.0 && v <= 1.0)) w.fail(field, "value outside [0, 1]");
                values[p] = static_cast<float>(v);
            }
            s.maps.push_back(std::move(values));
        }
        out.push_back(std::move(s));
    });
    return out;
}

void save_heatmaps(const std::filesystem::path& path, const std::vector<HeatMapStack>& stacks) {
    auto out = open_out(path);
    write_heatmaps(out, stacks);
    finish(out, path);
}

std::vector<HeatMapStack> load_heatmaps(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_heatmaps(in);
}

// ---- per-image states -----------------------------------------------------

void write_states(std::ostream& out, const std::vector<ImageState>& states) {
    for (const auto& s : states) {
        json z = json::array();
        for (Eigen::Index j = 0; j < s.z.rows(); ++j) {
            json row = json::array();
            for (Eigen::Index k = 0; k < s.z.cols(); ++k) row.push_back(static_cast<int>(s.z(j, k)));
            z.push_back(std::move(row));
        }
        json windows = json::array();
        for (const auto& g : s.descriptor.windows)
            windows.push_back({{"row", g.origin.row},
                               {"col", g.origin.col},
                               {"x", g.origin.x},
                               {"y", g.origin.y},
                               {"sums", std::vector<double>(g.sums.begin(), g.sums.end())},
                               {"vector", std::vector<double>(g.vector.begin(), g.vector.end())}});
        json record = {{"image_id", s.image_id},
                       {"width", s.width},
                       {"height", s.height},
                       {"factor_names", s.factor_names},
                       {"z", std::move(z)},
                       {"marginals", matrix_json(s.marginals)},
                       {"windows", std::move(windows)}};
        out << record.dump() << '\n';
    }
}

std::vector<ImageState> read_states(std::istream& in) {
    std::vector<ImageState> out;
    for_each_record(in, "states", [&](const json& record, Where& w) {
        ImageState s;
        s.image_id = text(member(record, "image_id", "", w), "image_id", w);
        w.image = s.image_id;
        s.width = static_cast<int>(integer(member(record, "width", "", w), "width", w));
        s.height = static_cast<int>(integer(member(record, "height", "", w), "height", w));
        const auto& names = array_at(record, "factor_names", "", w);
        for (std::size_t i = 0; i < names.size(); ++i) s.factor_names.push_back(text(names[i], "factor_names", w));
        const auto k = static_cast<Eigen::Index>(s.factor_names.size());

        const auto& z = array_at(record, "z", "", w);
        s.z = BinaryMatrix::Zero(static_cast<Eigen::Index>(z.size()), k);
        for (std::size_t j = 0; j < z.size(); ++j) {
            const auto row = flags(z[j], fmt::format("z[{}]", j), w);
            if (static_cast<Eigen::Index>(row.size()) > k) w.fail(fmt::format("z[{}]", j), "more entries than factors");
            for (std::size_t c = 0; c < row.size(); ++c)
                s.z(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = row[c];
        }
        s.marginals = matrix_from(array_at(record, "marginals", "", w), k, "marginals", w);

        const auto& windows = array_at(record, "windows", "", w);
        if (windows.size() != kGridWindows) w.fail("windows", fmt::format("expected {} windows", kGridWindows));
        s.descriptor.image_id = s.image_id;
        for (std::size_t g = 0; g < kGridWindows; ++g) {
            const auto& src = windows[g];
            const auto f = fmt::format("windows[{}]", g);
            auto& dst = s.descriptor.windows[g];
            dst.origin = {static_cast<int>(integer(member(src, "row", f, w), f + ".row", w)),
                          static_cast<int>(integer(member(src, "col", f, w), f + ".col", w)),
                          static_cast<int>(integer(member(src, "x", f, w), f + ".x", w)),
                          static_cast<int>(integer(member(src, "y", f, w), f + ".y", w))};
            auto vec = [&](const char* key) {
                const auto& a = array_at(src, key, f, w);
                if (static_cast<Eigen::Index>(a.size()) != k) w.fail(f + "." + key, fmt::format("expected {} values", k));
                Vector v(k);
                for (Eigen::Index i = 0; i < k; ++i) v(i) = number(a[static_cast<std::size_t>(i)], f + "." + key, w);
                return v;
            };
            dst.sums = vec("sums");
            dst.vector = vec("vector");
        }
        out.push_back(std::move(s));
    });
    return out;
}

void save_states(const std::filesystem::path& path, const std::vector<ImageState>& states) {
    auto out = open_out(path);
    write_states(out, states);
    finish(out, path);
}

std::vector<ImageState> load_states(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_states(in);
}

std::vector<std::pair<std::string, std::string>> load_pairs(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
            throw Error(ErrorCode::parse_error, fmt::format("{}:{}: expected 'probe_id,gallery_id'", path.string(), n));
        auto a = line.substr(0, comma), b = line.substr(comma + 1);
        if (n == 1 && a == "probe_id" && b == "gallery_id") continue;
        out.emplace_back(std::move(a), std::move(b));
    }
    return out;
}

void save_pairs(const std::filesystem::path& path,
                const std::vector<std::pair<std::string, std::string>>& pairs) {
    auto out = open_out(path);
    out << "probe_id,gallery_id\n";
    for (const auto& [a, b] : pairs) out << a << ',' << b << '\n';
    finish(out, path);
}

} // namespace mrfibp
