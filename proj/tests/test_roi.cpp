#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "smoe/errors.hpp"
#include "smoe/roi.hpp"

using namespace smoe;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name, const std::string& contents)
        : path("/tmp/smoe_roi_" + name) {
        std::ofstream out(path);
        out << contents;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("load_roi reads level, hemisphere and indices") {
    TempFile f("basic.json", R"({"level":6,"hemi":"L","indices":[0,1,2]})");
    auto mask = load_roi(f.path);
    CHECK(mask.level == 6);
    CHECK(mask.hemisphere == Hemisphere::Left);
    CHECK(mask.count() == 3);
    CHECK(mask.total() == 40962);
}

TEST_CASE("load_roi accepts an empty index list") {
    TempFile f("empty.json", R"({"level":2,"hemi":"R","indices":[]})");
    auto mask = load_roi(f.path);
    CHECK(mask.count() == 0);
    CHECK(mask.total() == 162);
}

TEST_CASE("load_roi rejects malformed masks") {
    TempFile dup("dup.json", R"({"level":2,"hemi":"L","indices":[3,3]})");
    CHECK_THROWS_AS(load_roi(dup.path), FormatError);
    TempFile oob("oob.json", R"({"level":0,"hemi":"L","indices":[12]})");
    CHECK_THROWS_AS(load_roi(oob.path), FormatError);
    TempFile unsorted("unsorted.json", R"({"level":2,"hemi":"L","indices":[5,2]})");
    CHECK_THROWS_AS(load_roi(unsorted.path), FormatError);
    TempFile badhemi("badhemi.json", R"({"level":2,"hemi":"X","indices":[1]})");
    CHECK_THROWS_AS(load_roi(badhemi.path), FormatError);
}

TEST_CASE("save/load round-trips a mask") {
    auto mask = RoiMask::from_indices(3, Hemisphere::Right, {0, 7, 100, 641});
    save_roi(mask, "/tmp/smoe_roi_rt.json");
    auto back = load_roi("/tmp/smoe_roi_rt.json");
    CHECK(back.level == mask.level);
    CHECK(back.hemisphere == mask.hemisphere);
    CHECK(back.selected == mask.selected);
    std::remove("/tmp/smoe_roi_rt.json");
}

TEST_CASE("coarsen: full masks stay full, empty stay empty") {
    auto h = build_hierarchy(2);
    auto full = coarsen(RoiMask::full(2, Hemisphere::Left), h, 1);
    CHECK(full.at_level(1).count() == 42);
    auto empty = coarsen(RoiMask::from_indices(2, Hemisphere::Left, {}), h, 0);
    CHECK(empty.at_level(1).count() == 0);
    CHECK(empty.at_level(0).count() == 0);
}

TEST_CASE("coarsen single vertex matches brute-force support scan") {
    auto h = build_hierarchy(2);
    auto pyr = coarsen(RoiMask::from_indices(2, Hemisphere::Left, {0}), h, 1);
    const auto& coarse = pyr.at_level(1);
    const auto& supports = h.supports(1);
    for (VertexId c = 0; c < coarse.total(); ++c) {
        bool expect = false;
        for (VertexId f : supports[c]) expect = expect || (f == 0);
        CHECK(coarse.is_selected(c) == expect);
    }
}

TEST_CASE("coarsen is monotone in the fine mask") {
    auto h = build_hierarchy(2);
    auto base = RoiMask::from_indices(2, Hemisphere::Left, {5, 40, 77});
    auto more = RoiMask::from_indices(2, Hemisphere::Left, {5, 40, 77, 120});
    auto pa = coarsen(base, h, 0);
    auto pb = coarsen(more, h, 0);
    for (int l = 1; l >= 0; --l)
        for (VertexId v = 0; v < pa.at_level(l).total(); ++v)
            if (pa.at_level(l).is_selected(v)) CHECK(pb.at_level(l).is_selected(v));
}

TEST_CASE("coarsen pyramid invariant holds at every intermediate level") {
    auto h = build_hierarchy(3);
    auto mask = RoiMask::from_indices(3, Hemisphere::Right, {1, 2, 3, 100, 200, 300, 641});
    auto pyr = coarsen(mask, h, 0);
    for (int l = 3; l > 0; --l) {
        const auto& fine = pyr.at_level(l);
        const auto& coarse = pyr.at_level(l - 1);
        const auto& supports = h.supports(l - 1);
        for (VertexId c = 0; c < coarse.total(); ++c) {
            bool any = false;
            for (VertexId f : supports[c]) any = any || fine.is_selected(f);
            CHECK(coarse.is_selected(c) == any);
        }
    }
}

TEST_CASE("coarsen rejects a target at or above the mask level") {
    auto h = build_hierarchy(2);
    CHECK_THROWS_AS(coarsen(RoiMask::full(1, Hemisphere::Left), h, 1), ConfigError);
    CHECK_THROWS_AS(coarsen(RoiMask::full(1, Hemisphere::Left), h, 2), ConfigError);
}

TEST_CASE("reduction_stats reproduces the published visual-ROI arithmetic") {
    // 4,613 + 4,875 selected of 2*40,962 vertices -> 88.42% removed
    std::vector<VertexId> left_ids(4613), right_ids(4875);
    for (VertexId i = 0; i < 4613; ++i) left_ids[i] = i;
    for (VertexId i = 0; i < 4875; ++i) right_ids[i] = i;
    auto left = RoiMask::from_indices(6, Hemisphere::Left, left_ids);
    auto right = RoiMask::from_indices(6, Hemisphere::Right, right_ids);
    auto stats = reduction_stats(left, right);
    CHECK(stats.selected == 9488);
    CHECK(stats.total == 81924);
    CHECK(stats.fraction_removed == doctest::Approx(0.8842).epsilon(1e-4));
}

TEST_CASE("reduction_stats edge cases") {
    auto full_l = RoiMask::full(2, Hemisphere::Left);
    auto full_r = RoiMask::full(2, Hemisphere::Right);
    CHECK(reduction_stats(full_l, full_r).fraction_removed == 0.0);
    auto empty_l = RoiMask::from_indices(2, Hemisphere::Left, {});
    auto empty_r = RoiMask::from_indices(2, Hemisphere::Right, {});
    CHECK(reduction_stats(empty_l, empty_r).fraction_removed == 1.0);
    CHECK_THROWS_AS(reduction_stats(full_l, RoiMask::full(3, Hemisphere::Right)), ConfigError);
}
