#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>

#include "darr/rng.hpp"
#include "darr/volume.hpp"

using namespace darr;

namespace {

Volume random_volume(Vec3i shape, u64 seed, float lo = -10.f, float hi = 10.f) {
    Volume v(shape, {1, 1, 1});
    Rng rng(seed);
    for (auto& x : v.data) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

}  // namespace

TEST_CASE("row_major_label matches l = x + Wy + WHz") {
    CHECK(row_major_label(0, 0, 0, 3, 3) == 0);
    CHECK(row_major_label(1, 2, 0, 3, 3) == 7);
    CHECK(row_major_label(2, 2, 2, 3, 3) == 26);  // last cell of the 27-patch puzzle
    CHECK(row_major_label(1, 0, 2, 2, 3) == 13);
    CHECK_THROWS_AS(row_major_label(3, 0, 0, 3, 3), DomainError);
    CHECK_THROWS_AS(row_major_label(0, 3, 0, 3, 3), DomainError);
    CHECK_THROWS_AS(row_major_label(0, -1, 0, 3, 3), DomainError);
    CHECK_THROWS_AS(row_major_label(0, 0, -1, 3, 3), DomainError);
}

TEST_CASE("labels are a bijection onto [0, WHL) for every grid up to 5x5x5") {
    for (int w = 1; w <= 5; ++w)
        for (int h = 1; h <= 5; ++h)
            for (int l = 1; l <= 5; ++l) {
                std::vector<int> hits(static_cast<std::size_t>(w) * h * l, 0);
                for (int z = 0; z < l; ++z)
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x)
                            ++hits[static_cast<std::size_t>(row_major_label(x, y, z, w, h))];
                CHECK(std::all_of(hits.begin(), hits.end(), [](int c) { return c == 1; }));
            }
}

TEST_CASE("partition_volume tiles in ascending label order") {
    PatchGrid grid{2, 2, 2, {4, 4, 4}};
    Volume vol = random_volume(grid.full_shape(), 7);
    auto patches = partition_volume(vol, grid);
    REQUIRE(patches.size() == 8);
    for (i64 a = 0; a < 8; ++a) CHECK(patches[static_cast<std::size_t>(a)].label == a);
    // spot-check: patch with label 3 (cell x=1,y=1,z=0) holds the right voxels
    CHECK(patches[3].at(0, 0, 0) == vol.at(4, 4, 0));
    CHECK(patches[3].at(3, 2, 1) == vol.at(7, 6, 1));

    SECTION("patches tile the volume: disjoint and covering") {
        Volume cover(grid.full_shape(), {1, 1, 1}, 0.f);
        for (const auto& p : patches) {
            const i64 cx = p.label % grid.w;
            const i64 cy = (p.label / grid.w) % grid.h;
            const i64 cz = p.label / (grid.w * grid.h);
            for (i64 z = 0; z < 4; ++z)
                for (i64 y = 0; y < 4; ++y)
                    for (i64 x = 0; x < 4; ++x)
                        cover.at(cx * 4 + x, cy * 4 + y, cz * 4 + z) += 1.f;
        }
        CHECK(std::all_of(cover.data.begin(), cover.data.end(),
                          [](float v) { return v == 1.f; }));
    }
}

TEST_CASE("partition of a 1x1x1 grid returns the resampled volume as one patch") {
    PatchGrid grid{1, 1, 1, {6, 6, 6}};
    Volume vol = random_volume({6, 6, 6}, 3);
    auto patches = partition_volume(vol, grid);
    REQUIRE(patches.size() == 1);
    CHECK(patches[0].label == 0);
    CHECK(std::equal(patches[0].values.begin(), patches[0].values.end(), vol.data.begin()));
}

TEST_CASE("volumes off the grid geometry get resampled, then reassemble round-trips") {
    PatchGrid grid{3, 3, 3, {4, 4, 4}};
    Volume vol = random_volume({17, 13, 9}, 11);
    Volume resampled = resample_trilinear(vol, grid.full_shape());
    auto patches = partition_volume(vol, grid);
    REQUIRE(static_cast<i64>(patches.size()) == grid.cells());
    Volume back = reassemble(patches, grid);
    REQUIRE(back.shape == resampled.shape);
    for (std::size_t i = 0; i < back.data.size(); ++i) CHECK(back.data[i] == resampled.data[i]);
}

TEST_CASE("reassemble places patches by label, not by position") {
    PatchGrid grid{2, 1, 2, {3, 3, 3}};
    Volume vol = random_volume(grid.full_shape(), 23);
    auto patches = partition_volume(vol, grid);
    Rng rng(5);
    Permutation perm = sample_permutation(grid.cells(), rng);
    auto shuffled = apply_permutation(patches, perm);
    Volume a = reassemble(patches, grid);
    Volume b = reassemble(shuffled, grid);
    CHECK(std::equal(a.data.begin(), a.data.end(), b.data.begin()));

    SECTION("duplicate labels are an integrity error") {
        shuffled[0].label = shuffled[1].label;
        CHECK_THROWS_AS(reassemble(shuffled, grid), IntegrityError);
    }
}

TEST_CASE("sample_permutation basics") {
    Rng rng(42);
    CHECK(sample_permutation(1, rng).order == std::vector<i64>{0});
    CHECK_THROWS_AS(sample_permutation(0, rng), DomainError);

    Rng a(123), b(123);
    auto p1 = sample_permutation(27, a);
    auto p2 = sample_permutation(27, b);
    CHECK(p1.order == p2.order);
    p1.validate();
}

TEST_CASE("sample_permutation is uniform over orderings (n=3, 1e5 draws)") {
    // brute-force frequency oracle: 6 orderings, each should be ~1/6
    std::map<std::vector<i64>, int> counts;
    Rng rng(2024);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) counts[sample_permutation(3, rng).order]++;
    REQUIRE(counts.size() == 6);
    for (const auto& [order, c] : counts) {
        const double freq = static_cast<double>(c) / draws;
        CHECK(freq == Catch::Approx(1.0 / 6.0).margin(0.01));
    }
}

TEST_CASE("apply_permutation reorders while preserving patch-label pairing") {
    PatchGrid grid{3, 1, 1, {2, 2, 2}};
    Volume vol = random_volume(grid.full_shape(), 9);
    auto patches = partition_volume(vol, grid);

    Permutation identity = Permutation::identity(3);
    auto same = apply_permutation(patches, identity);
    for (std::size_t i = 0; i < 3; ++i) CHECK(same[i].label == patches[i].label);

    Permutation perm;
    perm.order = {2, 0, 1};
    auto shuffled = apply_permutation(patches, perm);
    CHECK(shuffled[0].label == 2);
    CHECK(shuffled[1].label == 0);
    CHECK(shuffled[2].label == 1);
    CHECK(shuffled[0].at(1, 1, 1) == patches[2].at(1, 1, 1));

    SECTION("sorting by stored label restores the original order") {
        std::sort(shuffled.begin(), shuffled.end(),
                  [](const LabeledPatch& a, const LabeledPatch& b) { return a.label < b.label; });
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(shuffled[i].label == patches[i].label);
            CHECK(std::equal(shuffled[i].values.begin(), shuffled[i].values.end(),
                             patches[i].values.begin()));
        }
    }

    SECTION("length mismatch is a domain error") {
        Permutation bad;
        bad.order = {0, 1};
        CHECK_THROWS_AS(apply_permutation(patches, bad), DomainError);
    }
}

TEST_CASE("permutation round-trip over random draws") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        const i64 n = 1 + static_cast<i64>(rng.below(30));
        std::vector<LabeledPatch> items(static_cast<std::size_t>(n));
        for (i64 i = 0; i < n; ++i) {
            items[static_cast<std::size_t>(i)].label = i;
            items[static_cast<std::size_t>(i)].shape = {1, 1, 1};
            items[static_cast<std::size_t>(i)].values = {static_cast<float>(i)};
        }
        auto shuffled = apply_permutation(items, sample_permutation(n, rng));
        std::sort(shuffled.begin(), shuffled.end(),
                  [](const LabeledPatch& a, const LabeledPatch& b) { return a.label < b.label; });
        for (i64 i = 0; i < n; ++i) {
            CHECK(shuffled[static_cast<std::size_t>(i)].label == i);
            CHECK(shuffled[static_cast<std::size_t>(i)].values[0] == static_cast<float>(i));
        }
    }
}

TEST_CASE("squeeze_axial block-averages slabs") {
    SECTION("factor 1 is the identity") {
        LabeledPatch p;
        p.shape = {3, 3, 4};
        p.values.assign(36, 2.5f);
        auto q = squeeze_axial(p, 1);
        CHECK(q.shape == p.shape);
        CHECK(q.values == p.values);
    }

    SECTION("64x64x64 squeezes to 64x64x16 at factor 4") {
        LabeledPatch p;
        p.shape = {64, 64, 64};
        p.values.resize(64 * 64 * 64);
        for (std::size_t i = 0; i < p.values.size(); ++i)
            p.values[i] = static_cast<float>(i % 97) * 0.25f;
        auto q = squeeze_axial(p, 4);
        CHECK(q.shape == Vec3i{64, 64, 16});
        // oracle: direct mean of the four source slices at a few sites
        for (auto [x, y, k] : {std::array<i64, 3>{0, 0, 0}, {13, 60, 7}, {63, 63, 15}}) {
            float mean = 0.f;
            for (i64 f = 0; f < 4; ++f) mean += p.values[((k * 4 + f) * 64 + y) * 64 + x];
            mean /= 4.f;
            CHECK(q.values[(k * 64 + y) * 64 + x] == Catch::Approx(mean).epsilon(1e-6));
        }
    }

    SECTION("constant patches stay constant") {
        LabeledPatch p;
        p.shape = {5, 4, 8};
        p.values.assign(5 * 4 * 8, -3.25f);
        auto q = squeeze_axial(p, 2);
        CHECK(std::all_of(q.values.begin(), q.values.end(),
                          [](float v) { return v == -3.25f; }));
    }

    SECTION("non-divisible extent is a size error") {
        LabeledPatch p;
        p.shape = {2, 2, 5};
        p.values.assign(20, 0.f);
        CHECK_THROWS_AS(squeeze_axial(p, 2), SizeError);
    }
}

TEST_CASE("squeeze_axial is linear") {
    Rng rng(31);
    const Vec3i shape{6, 5, 8};
    const int factor = 4;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<float> p(static_cast<std::size_t>(shape.count()));
        std::vector<float> q(p.size());
        for (auto& v : p) v = static_cast<float>(rng.uniform(-5, 5));
        for (auto& v : q) v = static_cast<float>(rng.uniform(-5, 5));
        const float a = static_cast<float>(rng.uniform(-2, 2));
        const float b = static_cast<float>(rng.uniform(-2, 2));
        std::vector<float> mix(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) mix[i] = a * p[i] + b * q[i];
        auto sp = squeeze_axial_values(p, shape, factor);
        auto sq = squeeze_axial_values(q, shape, factor);
        auto smix = squeeze_axial_values(mix, shape, factor);
        for (std::size_t i = 0; i < smix.size(); ++i) {
            const float expect = a * sp[i] + b * sq[i];
            CHECK(smix[i] == Catch::Approx(expect).epsilon(1e-6).margin(1e-6));
        }
    }
}

TEST_CASE("resample preserves physical extent in spacing metadata") {
    Volume vol = random_volume({8, 8, 8}, 1);
    vol.spacing = {1.0, 1.0, 2.0};
    Volume out = resample_trilinear(vol, {16, 8, 4});
    CHECK(out.spacing.x == Catch::Approx(0.5));
    CHECK(out.spacing.y == Catch::Approx(1.0));
    CHECK(out.spacing.z == Catch::Approx(4.0));

    Volume flat({4, 4, 4}, {1, 1, 1}, 3.5f);
    Volume up = resample_trilinear(flat, {9, 5, 7});
    CHECK(std::all_of(up.data.begin(), up.data.end(),
                      [](float v) { return v == Catch::Approx(3.5f); }));
}

TEST_CASE("volume and mask invariants") {
    Volume v({2, 2, 2}, {1, 1, 1}, 0.f);
    v.data[3] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(v.validate(), DomainError);
    CHECK_THROWS_AS(Volume({2, 2, 2}, {1, 0.0, 1}), DomainError);

    SegmentationMask m({2, 2, 2}, 3, 0);
    m.labels[0] = 3;
    CHECK_THROWS_AS(m.validate(), DomainError);
}
