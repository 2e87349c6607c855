#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "darr/phantom.hpp"

using namespace darr;

TEST_CASE("generation is a pure function of (spec, seed)") {
    PhantomSpec spec = default_phantom_spec();
    auto a = generate_phantom(spec, 99);
    auto b = generate_phantom(spec, 99);
    CHECK(a.volume.data == b.volume.data);
    CHECK(a.mask.labels == b.mask.labels);
    auto c = generate_phantom(spec, 100);
    CHECK(a.mask.labels != c.mask.labels);
}

TEST_CASE("single centered ellipsoid voxel count matches the analytic volume") {
    PhantomSpec spec;
    spec.num_organs = 1;
    spec.base_shape = {48, 48, 48};
    spec.jitter = 0.0;
    spec.texture_sigma = 0.0;
    spec.organ_templates = {OrganTemplate{{11.0, 9.0, 13.0}, 200.0}};
    spec.relative_offsets = {{0.5, 0.5, 0.5}};
    auto c = generate_phantom(spec, 1);
    const i64 voxels = std::count_if(c.mask.labels.begin(), c.mask.labels.end(),
                                     [](u16 v) { return v == 1; });
    const double analytic = 4.0 / 3.0 * M_PI * 11.0 * 9.0 * 13.0;
    CHECK(std::abs(static_cast<double>(voxels) - analytic) / analytic < 0.05);
}

TEST_CASE("organ-center rank order along each axis is stable across seeds") {
    // the relational prior: relative organ order never changes, only jitters
    PhantomSpec spec = default_phantom_spec();
    std::vector<std::array<std::vector<double>, 3>> centers(100);
    for (int s = 0; s < 100; ++s) {
        auto c = generate_phantom(spec, static_cast<u64>(s));
        std::vector<double> cx(8, 0), cy(8, 0), cz(8, 0), n(8, 0);
        for (i64 z = 0; z < c.mask.shape.z; ++z)
            for (i64 y = 0; y < c.mask.shape.y; ++y)
                for (i64 x = 0; x < c.mask.shape.x; ++x) {
                    const u16 v = c.mask.at(x, y, z);
                    if (v == 0) continue;
                    cx[v - 1] += static_cast<double>(x);
                    cy[v - 1] += static_cast<double>(y);
                    cz[v - 1] += static_cast<double>(z);
                    n[v - 1] += 1;
                }
        for (int k = 0; k < 8; ++k) {
            REQUIRE(n[static_cast<std::size_t>(k)] > 0);
            centers[static_cast<std::size_t>(s)][0].push_back(cx[static_cast<std::size_t>(k)] /
                                                              n[static_cast<std::size_t>(k)]);
            centers[static_cast<std::size_t>(s)][1].push_back(cy[static_cast<std::size_t>(k)] /
                                                              n[static_cast<std::size_t>(k)]);
            centers[static_cast<std::size_t>(s)][2].push_back(cz[static_cast<std::size_t>(k)] /
                                                              n[static_cast<std::size_t>(k)]);
        }
    }
    auto rank_order = [](const std::vector<double>& v) {
        std::vector<int> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](int a, int b) {
            return v[static_cast<std::size_t>(a)] < v[static_cast<std::size_t>(b)];
        });
        return idx;
    };
    for (int axis = 0; axis < 3; ++axis) {
        const auto ref = rank_order(centers[0][static_cast<std::size_t>(axis)]);
        for (int s = 1; s < 100; ++s)
            CHECK(rank_order(centers[static_cast<std::size_t>(s)][static_cast<std::size_t>(axis)]) ==
                  ref);
    }
}

TEST_CASE("organs never overlap and every label is populated") {
    PhantomSpec spec = default_phantom_spec();
    for (u64 seed : {0ull, 5ull, 123ull}) {
        auto c = generate_phantom(spec, seed);
        std::vector<i64> counts(static_cast<std::size_t>(spec.num_organs) + 1, 0);
        for (u16 v : c.mask.labels) ++counts[v];
        for (int k = 1; k <= spec.num_organs; ++k) CHECK(counts[static_cast<std::size_t>(k)] > 0);
    }

    SECTION("configured overlap is a configuration error") {
        PhantomSpec bad = default_phantom_spec();
        bad.relative_offsets[1] = bad.relative_offsets[0];
        CHECK_THROWS_AS(generate_phantom(bad, 1), ConfigError);
    }

    SECTION("containment violations are caught up front") {
        PhantomSpec bad = default_phantom_spec();
        bad.relative_offsets[0] = {0.02, 0.5, 0.5};
        CHECK_THROWS_AS(generate_phantom(bad, 1), ConfigError);
    }
}

TEST_CASE("identity shift is a no-op") {
    PhantomSpec spec = default_phantom_spec();
    auto c = generate_phantom(spec, 3);
    Volume shifted = apply_domain_shift(c.volume, DomainShift{}, 77);
    CHECK(shifted.data == c.volume.data);
    CHECK(shifted.shape == c.volume.shape);
}

TEST_CASE("gain/bias is an affine map on intensities") {
    Volume vol({6, 6, 4}, {1, 1, 1}, 100.f);
    DomainShift shift;
    shift.intensity_gain = 2.0;
    shift.intensity_bias = -10.0;
    Volume out = apply_domain_shift(vol, shift, 0);
    CHECK(std::all_of(out.data.begin(), out.data.end(),
                      [](float v) { return v == Catch::Approx(190.f); }));
}

TEST_CASE("axial factor halves slices and doubles spacing") {
    Volume vol({8, 8, 64}, {1, 1, 1});
    for (i64 z = 0; z < 64; ++z)
        for (i64 y = 0; y < 8; ++y)
            for (i64 x = 0; x < 8; ++x) vol.at(x, y, z) = static_cast<float>(z);
    DomainShift shift;
    shift.axial_spacing_factor = 2;
    Volume out = apply_domain_shift(vol, shift, 0);
    CHECK(out.shape == Vec3i{8, 8, 32});
    CHECK(out.spacing.z == Catch::Approx(2.0));
    // block mean of slices {2k, 2k+1} is 2k + 0.5
    CHECK(out.at(0, 0, 0) == Catch::Approx(0.5f));
    CHECK(out.at(3, 3, 31) == Catch::Approx(62.5f));

    SegmentationMask mask({8, 8, 64}, 2, 1);
    SegmentationMask mout = apply_domain_shift_mask(mask, shift);
    CHECK(mout.shape == Vec3i{8, 8, 32});
}

TEST_CASE("make_domain_pair shares the anatomy prior and separates seed streams") {
    PhantomSpec spec = default_phantom_spec();
    spec.base_shape = {32, 32, 32};
    // halve organ sizes so they fit the smaller test volume
    for (auto& t : spec.organ_templates)
        t.half_axes = {t.half_axes.x / 2, t.half_axes.y / 2, t.half_axes.z / 2};
    auto [src, tgt] = make_domain_pair(spec, default_source_shift(), default_target_shift(), 4, 9);
    REQUIRE(src.cases.size() == 4);
    REQUIRE(tgt.cases.size() == 4);
    // disjoint seeds across the 8 cases
    std::vector<u64> seeds = src.seeds;
    seeds.insert(seeds.end(), tgt.seeds.begin(), tgt.seeds.end());
    std::sort(seeds.begin(), seeds.end());
    CHECK(std::adjacent_find(seeds.begin(), seeds.end()) == seeds.end());
    // default target shift: axial extent is 1/4 of source
    CHECK(tgt.cases[0].volume.shape.z == src.cases[0].volume.shape.z / 4);
    // masks stay at the anatomical grid
    CHECK(tgt.cases[0].mask.shape == spec.base_shape);

    SECTION("equal shifts give statistically identical domains") {
        auto [s2, t2] =
            make_domain_pair(spec, default_source_shift(), default_source_shift(), 2, 9);
        CHECK(s2.cases[0].volume.shape == t2.cases[0].volume.shape);
    }
}

TEST_CASE("learnability guard: intensities must clear 2x the shift noise") {
    PhantomSpec spec = default_phantom_spec();
    DomainShift noisy;
    noisy.noise_sigma = 50.0;  // far above the ~15 intensity gap
    CHECK_THROWS_AS(validate_learnable(spec, noisy), ConfigError);
    CHECK_NOTHROW(validate_learnable(spec, default_target_shift()));
}

TEST_CASE("default intensity ladder maps organ k onto organ k+1 under the default shift") {
    const PhantomSpec spec = default_phantom_spec();
    const DomainShift shift = default_target_shift();
    for (int k = 0; k + 1 < spec.num_organs; ++k) {
        const double shifted = shift.intensity_gain *
                                   spec.organ_templates[static_cast<std::size_t>(k)].intensity +
                               shift.intensity_bias;
        CHECK(shifted ==
              Catch::Approx(spec.organ_templates[static_cast<std::size_t>(k) + 1].intensity)
                  .margin(1e-9));
    }
}
