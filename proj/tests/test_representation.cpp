#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mrfibp/representation.hpp"
#include "support.hpp"

using namespace mrfibp;
using namespace mrfibp::testing;

namespace {

std::vector<int> xs(const std::array<WindowOrigin, kGridWindows>& w) {
    std::vector<int> out;
    for (const auto& o : w)
        if (std::find(out.begin(), out.end(), o.x) == out.end()) out.push_back(o.x);
    return out;
}

std::vector<int> ys(const std::array<WindowOrigin, kGridWindows>& w) {
    std::vector<int> out;
    for (const auto& o : w)
        if (std::find(out.begin(), out.end(), o.y) == out.end()) out.push_back(o.y);
    return out;
}

} // namespace

TEST_CASE("grid_windows placement") {
    SUBCASE("48 x 128") {
        const auto w = grid_windows(48, 128);
        CHECK(xs(w) == std::vector<int>{0, 16});
        CHECK(ys(w) == std::vector<int>{0, 16, 32, 48, 64, 80, 96});
    }
    SUBCASE("60 x 160") {
        const auto w = grid_windows(60, 160);
        CHECK(xs(w) == std::vector<int>{0, 28});
        CHECK(ys(w) == std::vector<int>{0, 21, 43, 64, 85, 107, 128});
    }
    SUBCASE("32 x 32 collapses to one origin") {
        for (const auto& o : grid_windows(32, 32)) CHECK((o.x == 0 && o.y == 0));
    }
    SUBCASE("row-major order") {
        const auto w = grid_windows(48, 128);
        CHECK(w[0].row == 0);
        CHECK(w[0].col == 0);
        CHECK(w[1].row == 0);
        CHECK(w[1].col == 1);
        CHECK(w[13].row == 6);
        CHECK(w[13].col == 1);
    }
    SUBCASE("too small") {
        CHECK_THROWS_AS(grid_windows(31, 64), Error);
        CHECK_THROWS_AS(grid_windows(64, 31), Error);
    }
}

TEST_CASE("accumulate_heatmaps") {
    FeatureBag bag = grid_layout("h", 4, 2, 1, 2);
    SUBCASE("one sample paints the patch mask") {
        FactorState s(2, 1);
        s.set(1, 0, true);
        const auto m = accumulate_heatmaps(bag, std::vector{s});
        CHECK(m.at(0, 0, 0) == 0.0f);
        CHECK(m.at(0, 1, 1) == 0.0f);
        CHECK(m.at(0, 2, 0) == 1.0f);
        CHECK(m.at(0, 3, 1) == 1.0f);
        CHECK(m.factor_names == std::vector<std::string>{"factor-0"});
    }
    SUBCASE("ten of twenty samples give one half") {
        std::vector<FactorState> samples;
        for (int t = 0; t < 20; ++t) {
            FactorState s(2, 2);
            s.set(0, 0, t % 2 == 0);
            samples.push_back(s);
        }
        const auto m = accumulate_heatmaps(bag, samples, std::vector<std::string>{"a", "b"});
        CHECK(m.at(0, 0, 0) == 0.5f);
        CHECK(m.at(0, 3, 0) == 0.0f);
        for (float v : m.maps[1]) CHECK(v == 0.0f);
    }
    SUBCASE("uncovered pixels and empty input") {
        bag.width = 5;
        CHECK_THROWS_AS(accumulate_heatmaps(bag, std::vector{FactorState(2, 1)}), Error);
        CHECK_THROWS_AS(accumulate_heatmaps(bag, std::vector<FactorState>{}), Error);
    }
}

TEST_CASE("grid_descriptor sums") {
    SUBCASE("full map sums to the window area") {
        const auto d = grid_descriptor(constant_stack("c", 48, 128, {1.0f}));
        for (const auto& w : d.windows) {
            CHECK(w.sums(0) == 1024.0);
            CHECK(w.vector(0) == 1.0);
        }
    }
    SUBCASE("empty map stays zero") {
        const auto d = grid_descriptor(constant_stack("c", 48, 128, {0.0f}));
        for (const auto& w : d.windows) CHECK(w.vector.isZero(0.0));
    }
    SUBCASE("disjoint halves of a window") {
        auto s = constant_stack("c", 32, 32, {0.0f, 0.0f});
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) s.maps[x < 16 ? 0 : 1][static_cast<std::size_t>(y * 32 + x)] = 1.0f;
        const auto d = grid_descriptor(s);
        CHECK(d.windows[0].sums(0) == 512.0);
        CHECK(d.windows[0].sums(1) == 512.0);
        CHECK(d.windows[0].vector(0) == 0.5);
        CHECK(d.windows[0].vector(1) == 0.5);
    }
}

TEST_CASE("grid_descriptor properties") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    auto s = constant_stack("p", 48, 128, {0, 0, 0});
    for (auto& m : s.maps)
        for (auto& v : m) v = u(rng);
    const auto d = grid_descriptor(s);

    SUBCASE("factor permutation permutes entries") {
        auto p = s;
        std::swap(p.maps[0], p.maps[2]);
        const auto dp = grid_descriptor(p);
        for (std::size_t w = 0; w < kGridWindows; ++w) {
            CHECK(dp.windows[w].sums(0) == d.windows[w].sums(2));
            CHECK(dp.windows[w].sums(2) == d.windows[w].sums(0));
            CHECK(dp.windows[w].sums(1) == d.windows[w].sums(1));
        }
    }
    SUBCASE("raising a map never lowers its sums") {
        auto up = s;
        for (auto& v : up.maps[1]) v = std::min(1.0f, v + 0.1f);
        const auto du = grid_descriptor(up);
        for (std::size_t w = 0; w < kGridWindows; ++w) CHECK(du.windows[w].sums(1) >= d.windows[w].sums(1));
    }
    SUBCASE("patch re-indexing does not matter") {
        FeatureBag bag = grid_layout("r", 48, 128, 8, 4);
        Matrix marg(32, 2);
        for (Eigen::Index i = 0; i < marg.size(); ++i) marg(i) = u(rng);
        FeatureBag rev = bag;
        std::reverse(rev.patches.begin(), rev.patches.end());
        const Matrix rmarg = marg.colwise().reverse();
        const auto a = grid_descriptor(heatmaps_from_marginals(bag, marg));
        const auto b = grid_descriptor(heatmaps_from_marginals(rev, rmarg));
        for (std::size_t w = 0; w < kGridWindows; ++w) CHECK(a.windows[w].sums == b.windows[w].sums);
    }
    SUBCASE("entries bounded by the window area") {
        for (const auto& w : d.windows) {
            CHECK(w.sums.maxCoeff() <= 1024.0);
            CHECK(w.vector.sum() == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("l1_normalized") {
    Vector v(3);
    v << 1, 3, 0;
    const Vector n = l1_normalized(v);
    CHECK(n(0) == 0.25);
    CHECK(n(1) == 0.75);
    CHECK(l1_normalized(Vector::Zero(2)).isZero(0.0));
}
