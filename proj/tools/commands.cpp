#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <ostream>
#include <optional>
#include <sstream>
#include <unordered_map>

// Eigen before httplib: glibc's resolv.h defines a `_res` macro that
// collides with Eigen parameter names.
#include "mrfibp/features.hpp"
#include "mrfibp/io.hpp"
#include "mrfibp/pipeline.hpp"
#include "mrfibp/retrieval.hpp"
#include "mrfibp/service.hpp"
#include "mrfibp/synth.hpp"
#include "mrfibp/transfer.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace mrfibp::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::ofstream open_file(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
    return out;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
    std::vector<std::string> aux;
    std::vector<std::string> supervision;
    std::string out;
    std::size_t iters = 2000;
    std::size_t burn_in = 500;
    std::uint64_t seed = 0;
    bool no_mrf = false;
    bool no_birth = false;
    std::size_t log_every = 1;
    std::size_t threads = 1;
    Hyperparams hp;
};

// Re-labels a dataset to the requested supervision; strong labels can be
// weakened (any patch on), weak ones cannot be strengthened.
void apply_supervision_mode(Dataset& ds, const std::string& mode) {
    if (mode == "auto") return;
    const auto target = supervision_mode_from_string(mode);
    for (auto& item : ds.items) {
        auto& l = item.labels;
        if (l.mode == target) continue;
        if (target == SupervisionMode::none) {
            l.mode = SupervisionMode::none;
            l.weak.clear();
            l.strong.clear();
        } else if (target == SupervisionMode::weak && l.mode == SupervisionMode::strong) {
            l.weak.assign(ds.vocabulary.size(), 0);
            for (const auto& row : l.strong)
                for (std::size_t k = 0; k < row.size() && k < l.weak.size(); ++k) l.weak[k] |= row[k];
            l.mode = SupervisionMode::weak;
            l.strong.clear();
        } else {
            throw Error(ErrorCode::validation,
                        fmt::format("{}: image '{}' has {} labels, cannot use them as {}", ds.name,
                                    item.bag.image_id, to_string(l.mode), mode));
        }
    }
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
    if (!a.supervision.empty() && a.supervision.size() != 1 && a.supervision.size() != a.aux.size())
        throw Error(ErrorCode::invalid_argument, "--supervision must be given once or once per --aux file");
    std::vector<Dataset> datasets;
    for (std::size_t i = 0; i < a.aux.size(); ++i) {
        datasets.push_back(load_feature_bags(a.aux[i]));
        if (!a.supervision.empty()) apply_supervision_mode(datasets.back(), a.supervision[a.supervision.size() == 1 ? 0 : i]);
    }
    std::vector<std::string> vocabulary;
    for (const auto& ds : datasets)
        for (const auto& n : ds.vocabulary)
            if (std::find(vocabulary.begin(), vocabulary.end(), n) == vocabulary.end()) vocabulary.push_back(n);

    Hyperparams hp = a.hp;
    hp.k_supervised = vocabulary.size();
    hp.rng_seed = a.seed;
    if (a.no_mrf) hp.beta = 0.0;
    SweepConfig cfg = SweepConfig::auxiliary_defaults();
    cfg.iterations = a.iters;
    cfg.burn_in = std::min(a.burn_in, a.iters > 0 ? a.iters - 1 : 0);
    cfg.birth_enabled = !a.no_birth;
    cfg.threads = a.threads;

    std::vector<FeatureBag> bags;
    for (const auto& ds : datasets)
        for (const auto& item : ds.items) bags.push_back(item.bag);

    spdlog::info("train: {} images, {} supervised factors, {} sweeps", bags.size(), hp.k_supervised, cfg.iterations);
    const auto observer = [&](std::size_t sweep, const AppearanceModel& model, std::span<const FactorState> states) {
        if (a.log_every == 0 || ((sweep + 1) % a.log_every != 0 && sweep + 1 != cfg.iterations)) return;
        out << fmt::format("sweep {} factors {} log_joint {:.6f}\n", sweep + 1, model.factors(),
                           log_joint(bags, states, model, hp));
    };
    const auto result = train_auxiliary(datasets, hp, cfg, observer);
    save_model(a.out, result.model);
    out << fmt::format("wrote {} ({} factors)\n", a.out, result.model.factors());
    return 0;
}

// ---- adapt -----------------------------------------------------------------

struct AdaptArgs {
    std::string target;
    std::string source;
    std::string out;
    std::size_t iters = 100;
    std::size_t k = 80;
    std::optional<std::uint64_t> seed;
    bool no_adapt = false;
    bool no_transfer = false;
    bool no_mrf = false;
    std::size_t threads = 1;
};

int cmd_adapt(const AdaptArgs& a, std::ostream& out) {
    const auto target = load_feature_bags(a.target);
    std::vector<FeatureBag> bags;
    for (const auto& item : target.items) bags.push_back(item.bag);
    if (bags.empty()) throw Error(ErrorCode::invalid_argument, a.target + ": no images");

    const AppearanceModel source = load_model(a.source);
    Hyperparams hp = source.hyperparams;
    if (a.seed) hp.rng_seed = *a.seed;
    if (a.no_mrf) hp.beta = 0.0;
    hp.k_max = std::max(hp.k_max, a.k);

    SweepConfig cfg = SweepConfig::target_defaults();
    cfg.iterations = a.iters;
    cfg.retain_samples = std::max<std::size_t>(1, std::min(cfg.retain_samples, a.iters));
    cfg.burn_in = std::min(cfg.burn_in, a.iters - std::min(a.iters, cfg.retain_samples));
    cfg.update_appearance = !a.no_adapt;
    cfg.threads = a.threads;

    const AppearanceModel start = a.no_transfer ? empty_model(bags.front().feature_dim(), hp) : source;
    spdlog::info("adapt: {} images, {} source factors, k={}", bags.size(), start.factors(), a.k);
    const auto result = adapt_target(bags, start, hp, cfg, a.k);

    const fs::path dir = a.out;
    fs::create_directories(dir);
    save_model(dir / "model.json", result.model);
    save_states(dir / "states.jsonl", describe_images(bags, result));
    save_heatmaps(dir / "heatmaps.jsonl", heatmaps_of(bags, result));
    out << fmt::format("wrote {}/{{model.json,states.jsonl,heatmaps.jsonl}} ({} images, {} factors)\n",
                       dir.string(), bags.size(), result.model.factors());
    return 0;
}

// ---- reid ------------------------------------------------------------------

struct ReidArgs {
    std::string probe;
    std::string gallery;
    std::string truth;
    std::string out;
    int row_band = 1;
    std::size_t threads = 1;
};

int cmd_reid(const ReidArgs& a, std::ostream& out) {
    const auto probes = load_states(a.probe);
    const auto pairs = load_pairs(a.truth);
    if (pairs.empty()) throw Error(ErrorCode::validation, a.truth + ": no truth pairs");
    // One file for both sides: the gallery is the set of second ids, so a
    // probe never meets itself.
    const bool shared = fs::equivalent(a.probe, a.gallery);
    const auto cmc = shared ? reid_cmc(probes, pairs, a.row_band, a.threads)
                            : reid_cmc(probes, load_states(a.gallery), pairs, a.row_band, a.threads);
    if (!a.out.empty()) {
        auto f = open_file(a.out);
        write_cmc_csv(f, cmc);
    }
    for (std::size_t r : {1u, 5u, 10u, 20u})
        if (r <= cmc.size()) out << fmt::format("rank-{} {:.4f}\n", r, cmc[r - 1]);
    return 0;
}

// ---- search ----------------------------------------------------------------

struct SearchArgs {
    std::string index;
    std::string query;
    std::vector<std::size_t> independent;
    bool all_independent = false;
    std::optional<double> min_score;
    std::string out;
    std::string relevance;
    std::string pr_out;
};

// "image_id,relevant" lines, relevant in {0, 1}; a header line is skipped.
std::unordered_map<std::string, bool> load_relevance(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::unordered_map<std::string, bool> out;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto comma = line.find(',');
        const auto id = line.substr(0, comma);
        const auto flag = comma == std::string::npos ? "" : line.substr(comma + 1);
        if (n == 1 && flag != "0" && flag != "1") continue;
        if (flag != "0" && flag != "1")
            throw Error(ErrorCode::parse_error, fmt::format("{}:{}: expected 'image_id,0|1'", path.string(), n));
        out[id] = flag == "1";
    }
    return out;
}

int cmd_search(const SearchArgs& a, std::ostream& out) {
    const SearchIndex index(load_heatmaps(a.index));
    QueryTerm query = parse_query(a.query, index.factor_names());
    for (auto g : a.independent) {
        if (g >= query.groups.size())
            throw Error(ErrorCode::index_out_of_range,
                        fmt::format("--independent {}: query has {} terms", g, query.groups.size()));
        query.groups[g].colocated = false;
    }
    if (a.all_independent)
        for (auto& g : query.groups) g.colocated = false;

    const auto ranked = index.search(query, a.min_score);
    std::ostringstream table;
    table << "rank,image_id,score\n";
    for (std::size_t i = 0; i < ranked.size(); ++i)
        table << fmt::format("{},{},{:.17g}\n", i + 1, ranked[i].image_id, ranked[i].score);
    if (a.out.empty()) {
        out << table.str();
    } else {
        open_file(a.out) << table.str();
        out << fmt::format("{} results written to {}\n", ranked.size(), a.out);
    }

    if (!a.relevance.empty()) {
        const auto labels = load_relevance(a.relevance);
        // Every indexed image takes part in the PR curve, not only those above min_score.
        const auto all = index.search(query);
        std::vector<double> scores;
        std::vector<bool> relevant;
        for (const auto& r : all) {
            const auto it = labels.find(r.image_id);
            scores.push_back(r.score);
            relevant.push_back(it != labels.end() && it->second);
        }
        const auto curve = pr_curve(scores, relevant);
        if (!a.pr_out.empty()) {
            auto f = open_file(a.pr_out);
            write_pr_csv(f, curve);
        }
        out << fmt::format("AP {:.6f}\n", curve.average_precision);
    }
    return 0;
}

// ---- serve -----------------------------------------------------------------

struct ServeArgs {
    std::string index;
    std::string ckpt;
    std::string addr = "127.0.0.1:8080";
};

int cmd_serve(const ServeArgs& a, std::ostream& out) {
    const SearchIndex index(load_heatmaps(a.index));
    std::optional<AppearanceModel> model;
    if (!a.ckpt.empty()) model = load_model(a.ckpt);

    const auto colon = a.addr.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::invalid_argument, "--addr must be host:port");
    const auto host = a.addr.substr(0, colon);
    int port = 0;
    try {
        port = std::stoi(a.addr.substr(colon + 1));
    } catch (const std::exception&) {
        throw Error(ErrorCode::invalid_argument, "--addr: bad port in '" + a.addr + "'");
    }

    httplib::Server server;
    mount_routes(server, index, model ? &*model : nullptr);
    if (!server.bind_to_port(host, port)) throw Error(ErrorCode::io, "cannot bind " + a.addr);
    out << fmt::format("serving {} images on http://{}\n", index.size(), a.addr) << std::flush;
    spdlog::info("listening on {}", a.addr);
    server.listen_after_bind();
    return 0;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
    std::string spec;
    std::string out;
    std::optional<std::uint64_t> seed;
};

json truth_record(const std::string& id, const std::string& domain, const BinaryMatrix& z) {
    json rows = json::array();
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
        json row = json::array();
        for (Eigen::Index k = 0; k < z.cols(); ++k) row.push_back(static_cast<int>(z(j, k)));
        rows.push_back(std::move(row));
    }
    return {{"image_id", id}, {"domain", domain}, {"z", std::move(rows)}};
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    SyntheticSpec spec = a.spec.empty() ? SyntheticSpec{} : synthetic_spec_from_json(read_text(a.spec));
    if (a.seed) spec.seed = *a.seed;
    const auto data = synth_generate(spec);
    const fs::path dir = a.out;
    fs::create_directories(dir);

    save_feature_bags(dir / "source.jsonl", data.source);
    Dataset target;
    target.name = "synthetic-target";
    for (const auto& bag : data.target) target.items.push_back({bag, {}});
    save_feature_bags(dir / "target.jsonl", target);
    save_pairs(dir / "pairs.csv", data.reid_pairs);
    {
        auto f = open_file(dir / "truth.jsonl");
        for (std::size_t i = 0; i < data.source.items.size(); ++i)
            f << truth_record(data.source.items[i].bag.image_id, "source", data.source_truth[i]).dump() << '\n';
        for (std::size_t i = 0; i < data.target.size(); ++i)
            f << truth_record(data.target[i].image_id, "target", data.target_truth[i]).dump() << '\n';
    }
    {
        json manifest = {{"spec", json::parse(to_json(spec))},
                         {"files", {{"source", "source.jsonl"}, {"target", "target.jsonl"},
                                    {"truth", "truth.jsonl"}, {"pairs", "pairs.csv"}}},
                         {"source_images", data.source.items.size()},
                         {"target_images", data.target.size()},
                         {"min_row_distance", min_row_distance(data.appearance)}};
        open_file(dir / "manifest.json") << manifest.dump(2) << '\n';
    }
    out << fmt::format("wrote {} source and {} target images to {}\n", data.source.items.size(), data.target.size(),
                       dir.string());
    return 0;
}

// ---- extract ---------------------------------------------------------------

struct ExtractArgs {
    std::vector<std::string> images;
    std::string out;
    std::size_t words = 150;
    int rows = 8;
    int cols = 4;
    std::uint64_t seed = 0;
};

int cmd_extract(const ExtractArgs& a, std::ostream& out) {
    std::vector<RgbImage> images;
    for (const auto& p : a.images) images.push_back(load_ppm(p));
    const auto books = build_color_codebooks(images, a.words, a.seed);
    Dataset ds;
    ds.name = fs::path(a.out).stem().string();
    for (std::size_t i = 0; i < images.size(); ++i)
        ds.items.push_back({extract_color_features(images[i], books, a.rows, a.cols, fs::path(a.images[i]).stem().string()), {}});
    save_feature_bags(a.out, ds);
    out << fmt::format("wrote {} images, D={} to {}\n", ds.items.size(), books.feature_dim(), a.out);
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"MRF-IBP latent attribute engine"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Learn factor appearances from annotated auxiliary data");
    t->add_option("--aux", train.aux, "Feature file (repeatable)")->required()->check(CLI::ExistingFile);
    t->add_option("--supervision", train.supervision, "strong|weak|none|auto, once or per --aux file")
        ->check(CLI::IsMember({"strong", "weak", "none", "auto"}));
    t->add_option("--out", train.out, "Checkpoint to write")->required();
    t->add_option("--iters", train.iters, "Gibbs sweeps")->capture_default_str();
    t->add_option("--burn-in", train.burn_in, "Sweeps drawing A from its posterior")->capture_default_str();
    t->add_option("--seed", train.seed)->capture_default_str();
    t->add_option("--alpha", train.hp.alpha)->capture_default_str();
    t->add_option("--beta", train.hp.beta)->capture_default_str();
    t->add_option("--sigma-x", train.hp.sigma_x)->capture_default_str();
    t->add_option("--sigma-a", train.hp.sigma_a)->capture_default_str();
    t->add_option("--k-max", train.hp.k_max)->capture_default_str();
    t->add_option("--threads", train.threads)->capture_default_str();
    t->add_option("--log-every", train.log_every, "Print the log joint every n sweeps (0: never)")->capture_default_str();
    t->add_flag("--no-mrf", train.no_mrf, "Drop the spatial coupling (beta = 0)");
    t->add_flag("--no-birth", train.no_birth, "Disable new-factor births");

    AdaptArgs adapt;
    auto* ad = app.add_subcommand("adapt", "Adapt a checkpoint to unlabelled target data");
    ad->add_option("--target", adapt.target)->required()->check(CLI::ExistingFile);
    ad->add_option("--source", adapt.source, "Source checkpoint")->required()->check(CLI::ExistingFile);
    ad->add_option("--out", adapt.out, "Output directory")->required();
    ad->add_option("--iters", adapt.iters)->capture_default_str();
    ad->add_option("--k", adapt.k, "Factors after adding free ones")->capture_default_str();
    ad->add_option("--seed", adapt.seed, "Overrides the checkpoint seed");
    ad->add_option("--threads", adapt.threads)->capture_default_str();
    ad->add_flag("--no-adapt", adapt.no_adapt, "Freeze the source appearances");
    ad->add_flag("--no-transfer", adapt.no_transfer, "Learn the target from scratch");
    ad->add_flag("--no-mrf", adapt.no_mrf, "Drop the spatial coupling (beta = 0)");

    ReidArgs reid;
    auto* r = app.add_subcommand("reid", "Rank a gallery for each probe and report CMC");
    r->add_option("--probe", reid.probe, "States file")->required()->check(CLI::ExistingFile);
    r->add_option("--gallery", reid.gallery, "States file")->required()->check(CLI::ExistingFile);
    r->add_option("--truth", reid.truth, "probe_id,gallery_id CSV")->required()->check(CLI::ExistingFile);
    r->add_option("--out", reid.out, "CMC CSV");
    r->add_option("--row-band", reid.row_band)->capture_default_str();
    r->add_option("--threads", reid.threads)->capture_default_str();

    SearchArgs search;
    auto* s = app.add_subcommand("search", "Rank images by an attribute description");
    s->add_option("--index", search.index, "Heat-map file")->required()->check(CLI::ExistingFile);
    s->add_option("--query", search.query, "Terms joined by '+', co-located names joined by '-'")->required();
    s->add_option("--independent", search.independent, "Score term i without co-location (0-based, repeatable)");
    s->add_flag("--all-independent", search.all_independent, "Score every term without co-location");
    s->add_option("--min-score", search.min_score, "Keep only scores above this");
    s->add_option("--out", search.out, "Ranking CSV (stdout when absent)");
    s->add_option("--relevance", search.relevance, "image_id,0|1 CSV for a PR curve")->check(CLI::ExistingFile);
    s->add_option("--pr-out", search.pr_out, "PR CSV");

    ServeArgs serve;
    auto* sv = app.add_subcommand("serve", "Serve the search API");
    sv->add_option("--index", serve.index, "Heat-map file")->required()->check(CLI::ExistingFile);
    sv->add_option("--ckpt", serve.ckpt, "Checkpoint reported by /api/health")->check(CLI::ExistingFile);
    sv->add_option("--addr", serve.addr, "host:port")->capture_default_str();

    SynthArgs synth;
    auto* sy = app.add_subcommand("synth", "Generate a planted-factor benchmark");
    sy->add_option("--spec", synth.spec, "JSON spec; defaults when absent")->check(CLI::ExistingFile);
    sy->add_option("--out", synth.out, "Output directory")->required();
    sy->add_option("--seed", synth.seed, "Overrides the seed given in --spec");

    ExtractArgs extract;
    auto* ex = app.add_subcommand("extract", "Color-histogram features from PPM images");
    ex->add_option("--image", extract.images, "PPM file (repeatable)")->required()->check(CLI::ExistingFile);
    ex->add_option("--out", extract.out, "Feature file to write")->required();
    ex->add_option("--words", extract.words, "Codewords per color space")->capture_default_str();
    ex->add_option("--rows", extract.rows)->capture_default_str();
    ex->add_option("--cols", extract.cols)->capture_default_str();
    ex->add_option("--seed", extract.seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error[invalid_argument]: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*t) return cmd_train(train, out);
        if (*ad) return cmd_adapt(adapt, out);
        if (*r) return cmd_reid(reid, out);
        if (*s) return cmd_search(search, out);
        if (*sv) return cmd_serve(serve, out);
        if (*sy) return cmd_synth(synth, out);
        if (*ex) return cmd_extract(extract, out);
    } catch (const Error& e) {
        err << "error[" << to_string(e.code()) << "]: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error[internal]: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

} // namespace mrfibp::cli
