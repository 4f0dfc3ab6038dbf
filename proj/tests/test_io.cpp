#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "mrfibp/io.hpp"
#include "mrfibp/transfer.hpp"
#include "support.hpp"

using namespace mrfibp;
using namespace mrfibp::testing;

namespace {

Dataset sample_dataset() {
    std::mt19937_64 rng(12);
    Dataset ds;
    ds.name = "sample";
    ds.vocabulary = {"red", "shirt"};
    for (int i = 0; i < 3; ++i) {
        LabeledBag item;
        item.bag = grid_layout("img-" + std::to_string(i), 6, 4, 2, 3);
        for (auto& p : item.bag.patches) p.feature = gaussian_matrix(5, 1, rng);
        if (i == 0) {
            item.labels.mode = SupervisionMode::strong;
            for (std::size_t j = 0; j < item.bag.size(); ++j)
                item.labels.strong.push_back({static_cast<std::uint8_t>(j % 2), static_cast<std::uint8_t>(j % 3 == 0)});
            item.labels.foreground = {1, 1, 0, 1, 0, 1};
        } else if (i == 1) {
            item.labels.mode = SupervisionMode::weak;
            item.labels.weak = {1, 0};
        }
        ds.items.push_back(std::move(item));
    }
    return ds;
}

std::string dump(const Dataset& ds) {
    std::ostringstream out;
    write_feature_bags(out, ds);
    return out.str();
}

AppearanceModel sample_model(std::size_t k, std::size_t d) {
    std::mt19937_64 rng(7);
    Hyperparams hp;
    hp.k_supervised = 2;
    hp.rng_seed = 0xfeedfacecafebeefULL;
    const auto kk = static_cast<Eigen::Index>(k);
    const Matrix b = gaussian_matrix(kk, kk, rng);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < k; ++i) names.push_back(i < 2 ? "attr" + std::to_string(i) : free_factor_name(i));
    return AppearanceModel::from_posterior(gaussian_matrix(kk, static_cast<Eigen::Index>(d), rng),
                                           b * b.transpose() + Matrix::Identity(kk, kk), names, hp);
}

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::internal;
}

} // namespace

TEST_CASE("feature files round-trip") {
    const auto ds = sample_dataset();
    std::istringstream in(dump(ds));
    const auto back = read_feature_bags(in, "sample");
    CHECK(back.vocabulary == ds.vocabulary);
    REQUIRE(back.items.size() == ds.items.size());
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        const auto& a = ds.items[i];
        const auto& b = back.items[i];
        CHECK(a.bag.image_id == b.bag.image_id);
        CHECK(a.bag.width == b.bag.width);
        CHECK(a.bag.adjacency == b.bag.adjacency);
        CHECK(a.labels == b.labels);
        for (std::size_t j = 0; j < a.bag.size(); ++j) {
            CHECK(a.bag.patches[j].id == b.bag.patches[j].id);
            CHECK(a.bag.patches[j].mask == b.bag.patches[j].mask);
            CHECK(a.bag.patches[j].feature == b.bag.patches[j].feature);
        }
    }
    CHECK(dump(back) == dump(ds));
    CHECK(back.items[1].labels.mode == SupervisionMode::weak);
}

TEST_CASE("feature file diagnostics") {
    const auto text = dump(sample_dataset());
    SUBCASE("strong labels with the wrong patch count name the image") {
        auto ds = sample_dataset();
        ds.items[0].labels.strong.pop_back();
        std::istringstream in(dump(ds));
        try {
            read_feature_bags(in, "bad");
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::validation);
            CHECK(std::string(e.what()).find("img-0") != std::string::npos);
        }
    }
    SUBCASE("malformed json reports the line") {
        std::istringstream in(text + "{\"image_id\": \"x\", \n");
        try {
            read_feature_bags(in, "bad");
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::parse_error);
            CHECK(std::string(e.what()).find("bad:5") != std::string::npos);
        }
    }
    SUBCASE("a wrong field type names the field") {
        auto lines = text;
        const auto at = lines.find("\"width\":6");
        REQUIRE(at != std::string::npos);
        lines.replace(at, 9, "\"width\":\"6\"");
        std::istringstream in(lines);
        try {
            read_feature_bags(in, "bad");
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("width") != std::string::npos);
        }
    }
    SUBCASE("invalid bags are rejected") {
        auto ds = sample_dataset();
        ds.items[2].bag.adjacency.pop_back();
        std::istringstream in(dump(ds));
        CHECK(code_of([&] { read_feature_bags(in); }) == ErrorCode::validation);
    }
    SUBCASE("duplicate ids") {
        auto ds = sample_dataset();
        ds.items[1].bag.image_id = "img-0";
        std::istringstream in(dump(ds));
        CHECK(code_of([&] { read_feature_bags(in); }) == ErrorCode::validation);
    }
    SUBCASE("missing file") { CHECK(code_of([] { load_feature_bags("/nonexistent/x.jsonl"); }) == ErrorCode::io); }
}

TEST_CASE("checkpoints") {
    const auto model = sample_model(6, 4);
    std::ostringstream out;
    write_model(out, model);
    const std::string text = out.str();

    SUBCASE("lossless round trip") {
        std::istringstream in(text);
        const auto back = read_model(in);
        CHECK(back.mean == model.mean);
        CHECK(back.covariance == model.covariance);
        CHECK(back.factor_names == model.factor_names);
        CHECK(back.hyperparams == model.hyperparams);
    }
    SUBCASE("truncation") {
        std::istringstream in(text.substr(0, text.size() / 2));
        CHECK(code_of([&] { read_model(in); }) == ErrorCode::checkpoint_corrupt);
    }
    SUBCASE("tampered values fail the checksum") {
        auto j = nlohmann::json::parse(text);
        j["mean"][0][0] = j["mean"][0][0].get<double>() + 1e-9;
        std::istringstream in(j.dump());
        CHECK(code_of([&] { read_model(in); }) == ErrorCode::checkpoint_corrupt);
    }
    SUBCASE("other versions") {
        auto j = nlohmann::json::parse(text);
        j["version"] = kCheckpointVersion + 1;
        std::istringstream in(j.dump());
        CHECK(code_of([&] { read_model(in); }) == ErrorCode::checkpoint_version);
    }
    SUBCASE("a 60-factor checkpoint extends to 80") {
        const auto big = sample_model(60, 3);
        const auto path = std::filesystem::temp_directory_path() / "mrfibp_test_ckpt.json";
        save_model(path, big);
        const auto loaded = load_model(path);
        std::filesystem::remove(path);
        const auto ext = extend_prior(loaded, 80, loaded.hyperparams);
        CHECK(ext.factors() == 80);
        CHECK(ext.mean.topRows(60) == big.mean);
    }
}

TEST_CASE("heat maps, states and pairs round-trip") {
    std::mt19937_64 rng(3);
    auto stack = constant_stack("im", 40, 36, {0.25f, 1.0f, 0.0f});
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : stack.maps[0]) v = u(rng);

    std::stringstream hm;
    write_heatmaps(hm, {stack});
    const auto back = read_heatmaps(hm);
    REQUIRE(back.size() == 1);
    CHECK(back[0].maps == stack.maps);
    CHECK(back[0].factor_names == stack.factor_names);

    SUBCASE("out-of-range heat values are rejected") {
        auto bad = stack;
        bad.maps[1][0] = 1.5f;
        std::stringstream s;
        write_heatmaps(s, {bad});
        CHECK_THROWS_AS(read_heatmaps(s), Error);
    }

    ImageState st;
    st.image_id = "im";
    st.width = 40;
    st.height = 36;
    st.factor_names = stack.factor_names;
    st.z = BinaryMatrix::Zero(4, 3);
    st.z(1, 2) = 1;
    st.marginals = Matrix::Constant(4, 3, 0.125);
    st.descriptor = grid_descriptor(stack);
    std::stringstream ss;
    write_states(ss, {st});
    const auto sb = read_states(ss);
    REQUIRE(sb.size() == 1);
    CHECK(sb[0].z == st.z);
    CHECK(sb[0].marginals == st.marginals);
    for (std::size_t w = 0; w < kGridWindows; ++w) {
        CHECK(sb[0].descriptor.windows[w].vector == st.descriptor.windows[w].vector);
        CHECK(sb[0].descriptor.windows[w].origin == st.descriptor.windows[w].origin);
    }

    const auto path = std::filesystem::temp_directory_path() / "mrfibp_test_pairs.csv";
    save_pairs(path, {{"a", "b"}, {"c", "d"}});
    const auto pairs = load_pairs(path);
    std::filesystem::remove(path);
    CHECK(pairs == std::vector<std::pair<std::string, std::string>>{{"a", "b"}, {"c", "d"}});
}
