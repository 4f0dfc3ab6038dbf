#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "mrfibp/features.hpp"
#include "mrfibp/io.hpp"
#include "mrfibp/synth.hpp"

using namespace mrfibp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), "mrfibp");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

} // namespace

TEST_CASE("help and argument errors") {
    const auto help = run({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("search") != std::string::npos);
    CHECK(run({"train", "--help"}).code == 0);

    const auto none = run({});
    CHECK(none.code == 2);
    CHECK(none.err.starts_with("error[invalid_argument]"));
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"train", "--aux", "/nonexistent.jsonl"}).code == 2);
    CHECK(run({"search", "--index"}).code == 2);
}

TEST_CASE("library errors exit with 1 and name the code") {
    TempDir dir("mrfibp_cli_errors");
    std::ofstream(dir / "bad.jsonl") << "{\"image_id\": 3}\n";
    const auto r = run({"train", "--aux", dir / "bad.jsonl", "--out", dir / "m.json"});
    CHECK(r.code == 1);
    CHECK(r.err.starts_with("error[parse_error]"));

    std::ofstream(dir / "spec.json") << "{\"k_tru\": 3}";
    const auto s = run({"synth", "--spec", dir / "spec.json", "--out", dir / "x"});
    CHECK(s.code == 1);
    CHECK(s.err.find("k_tru") != std::string::npos);
}

TEST_CASE("synth, train, adapt, reid and search round trip") {
    TempDir dir("mrfibp_cli_pipeline");
    SyntheticSpec spec;
    spec.n_images = 8;
    spec.n_identities = 6;
    spec.k_true = 3;
    spec.d = 6;
    spec.seed = 5;
    std::ofstream(dir / "spec.json") << to_json(spec);

    const auto sy = run({"synth", "--spec", dir / "spec.json", "--out", dir / "data"});
    REQUIRE(sy.code == 0);
    for (const char* f : {"source.jsonl", "target.jsonl", "pairs.csv", "truth.jsonl", "manifest.json"})
        CHECK(fs::exists(dir.path / "data" / f));

    const auto tr = run({"train", "--aux", dir / "data/source.jsonl", "--out", dir / "model.json", "--iters", "20",
                         "--burn-in", "5", "--log-every", "10", "--seed", "3"});
    REQUIRE(tr.code == 0);
    CHECK(tr.out.find("sweep 10 factors") != std::string::npos);
    const auto model = load_model(dir / "model.json");
    CHECK(model.factors() >= 3);
    CHECK(model.hyperparams.k_supervised == 3);
    CHECK(model.factor_names[0] == synthetic_factor_name(0));

    SUBCASE("strong labels can be trained as weak but not the other way") {
        CHECK(run({"train", "--aux", dir / "data/source.jsonl", "--out", dir / "w.json", "--iters", "4", "--supervision",
                   "weak"}).code == 0);
        CHECK(run({"train", "--aux", dir / "data/target.jsonl", "--out", dir / "s.json", "--iters", "4", "--supervision",
                   "strong"}).code == 1);
    }

    const auto ad = run({"adapt", "--target", dir / "data/target.jsonl", "--source", dir / "model.json", "--out",
                         dir / "adapted", "--iters", "10", "--k", "6"});
    REQUIRE(ad.code == 0);
    const auto adapted = load_model(dir / "adapted/model.json");
    CHECK(adapted.factors() == 6);
    const auto states = load_states(dir / "adapted/states.jsonl");
    CHECK(states.size() == 12);
    const auto stacks = load_heatmaps(dir / "adapted/heatmaps.jsonl");
    CHECK(stacks.size() == 12);

    const auto re = run({"reid", "--probe", dir / "adapted/states.jsonl", "--gallery", dir / "adapted/states.jsonl",
                         "--truth", dir / "data/pairs.csv", "--out", dir / "cmc.csv"});
    REQUIRE(re.code == 0);
    CHECK(re.out.starts_with("rank-1 "));
    CHECK(re.out.find("rank-5 ") != std::string::npos);
    std::ifstream cmc(dir / "cmc.csv");
    std::string header;
    std::getline(cmc, header);
    CHECK(header == "rank,accuracy");

    const std::string q = stacks[0].factor_names[0] + "-" + stacks[0].factor_names[1];
    const auto se = run({"search", "--index", dir / "adapted/heatmaps.jsonl", "--query", q});
    REQUIRE(se.code == 0);
    CHECK(se.out.starts_with("rank,image_id,score\n1,"));
    CHECK(std::count(se.out.begin(), se.out.end(), '\n') == 13);

    std::ofstream(dir / "rel.csv") << stacks[0].image_id << ",1\n" << stacks[1].image_id << ",0\n";
    const auto pr = run({"search", "--index", dir / "adapted/heatmaps.jsonl", "--query", q, "--all-independent",
                         "--relevance", dir / "rel.csv", "--out", dir / "rank.csv", "--pr-out", dir / "pr.csv"});
    REQUIRE(pr.code == 0);
    CHECK(pr.out.find("AP ") != std::string::npos);
    CHECK(fs::exists(dir.path / "pr.csv"));
    CHECK(run({"search", "--index", dir / "adapted/heatmaps.jsonl", "--query", q, "--independent", "4"}).code == 1);
    CHECK(run({"search", "--index", dir / "adapted/heatmaps.jsonl", "--query", "nonsense"}).err.find("unknown_factor") !=
          std::string::npos);
}

TEST_CASE("extract writes one bag per image") {
    TempDir dir("mrfibp_cli_extract");
    for (int i = 0; i < 2; ++i) {
        RgbImage img{8, 16, {}};
        for (int p = 0; p < 8 * 16; ++p)
            for (int c = 0; c < 3; ++c) img.data.push_back(static_cast<std::uint8_t>((p * (c + 1) + 40 * i) % 256));
        std::ofstream f(dir / ("img" + std::to_string(i) + ".ppm"), std::ios::binary);
        write_ppm(f, img);
    }
    const auto r = run({"extract", "--image", dir / "img0.ppm", "--image", dir / "img1.ppm", "--out",
                        dir / "feat.jsonl", "--words", "4", "--rows", "4", "--cols", "2"});
    REQUIRE(r.code == 0);
    const auto ds = load_feature_bags(dir / "feat.jsonl");
    REQUIRE(ds.items.size() == 2);
    CHECK(ds.items[1].bag.image_id == "img1");
    CHECK(ds.items[0].bag.size() == 8);
    CHECK(ds.items[0].bag.feature_dim() == 8);
}
