#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "darr/common.hpp"
#include "darr/rng.hpp"
#include "darr/volume.hpp"

namespace darr {

struct OrganTemplate {
    Vec3d half_axes{6, 6, 6};  // voxels
    double intensity = 100.0;
};

/// Procedural organ-layout recipe. Organs are axis-aligned ellipsoids at fixed
/// relative offsets from the volume origin, jittered per case; the layout is
/// what makes patch location predictable from content.
struct PhantomSpec {
    int num_organs = 8;
    std::vector<OrganTemplate> organ_templates;
    std::vector<Vec3d> relative_offsets;  // fraction of volume extent per axis
    double jitter = 0.03;                 // max offset perturbation, fraction of extent
    double background_intensity = 20.0;
    double texture_sigma = 2.0;  // per-voxel Gaussian texture on top of the means
    Vec3i base_shape{64, 64, 64};

    void validate() const {
        require<ConfigError>(num_organs >= 0, "PhantomSpec: num_organs must be >= 0");
        require<ConfigError>(static_cast<int>(organ_templates.size()) == num_organs,
                             "PhantomSpec: organ_templates size != num_organs");
        require<ConfigError>(static_cast<int>(relative_offsets.size()) == num_organs,
                             "PhantomSpec: relative_offsets size != num_organs");
        require<ConfigError>(jitter >= 0.0 && texture_sigma >= 0.0,
                             "PhantomSpec: jitter and texture_sigma must be >= 0");
        require<ConfigError>(base_shape.x >= 4 && base_shape.y >= 4 && base_shape.z >= 4,
                             "PhantomSpec: base_shape too small");
        const double ex = static_cast<double>(base_shape.x);
        const double ey = static_cast<double>(base_shape.y);
        const double ez = static_cast<double>(base_shape.z);
        for (int k = 0; k < num_organs; ++k) {
            const auto& t = organ_templates[static_cast<std::size_t>(k)];
            const auto& o = relative_offsets[static_cast<std::size_t>(k)];
            require<ConfigError>(t.half_axes.x >= 1 && t.half_axes.y >= 1 && t.half_axes.z >= 1,
                                 "PhantomSpec: organ half_axes must be >= 1 voxel");
            const bool inside =
                (o.x - jitter) * ex - t.half_axes.x >= 0.0 &&
                (o.x + jitter) * ex + t.half_axes.x <= ex - 1.0 &&
                (o.y - jitter) * ey - t.half_axes.y >= 0.0 &&
                (o.y + jitter) * ey + t.half_axes.y <= ey - 1.0 &&
                (o.z - jitter) * ez - t.half_axes.z >= 0.0 &&
                (o.z + jitter) * ez + t.half_axes.z <= ez - 1.0;
            require<ConfigError>(inside, "PhantomSpec: organ " + std::to_string(k + 1) +
                                             " can leave the volume after max jitter");
        }
    }

    double min_intensity_separation() const {
        double sep = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < organ_templates.size(); ++i)
            for (std::size_t j = i + 1; j < organ_templates.size(); ++j)
                sep = std::min(sep,
                               std::abs(organ_templates[i].intensity - organ_templates[j].intensity));
        return sep;
    }
};

/// Scanner/protocol perturbation recipe, applied in acquisition order:
/// blur -> axial thick-slice downsample -> intensity gain/bias -> noise.
struct DomainShift {
    int axial_spacing_factor = 1;  // slice-thickness multiplier
    double intensity_gain = 1.0;
    double intensity_bias = 0.0;
    double noise_sigma = 0.0;  // additive Gaussian, absolute units
    double blur_sigma = 0.0;   // Gaussian smoothing, voxels

    void validate() const {
        require<ConfigError>(axial_spacing_factor >= 1,
                             "DomainShift: axial_spacing_factor must be >= 1");
        require<ConfigError>(std::isfinite(intensity_gain) && std::isfinite(intensity_bias),
                             "DomainShift: gain/bias must be finite");
        require<ConfigError>(noise_sigma >= 0.0 && blur_sigma >= 0.0,
                             "DomainShift: sigmas must be >= 0");
    }

    bool is_identity() const {
        return axial_spacing_factor == 1 && intensity_gain == 1.0 && intensity_bias == 0.0 &&
               noise_sigma == 0.0 && blur_sigma == 0.0;
    }
};

inline void validate_learnable(const PhantomSpec& spec, const DomainShift& shift) {
    if (spec.num_organs < 2) return;
    require<ConfigError>(spec.min_intensity_separation() >= 2.0 * shift.noise_sigma,
                         "PhantomSpec: organ intensities closer than 2x shift noise sigma");
}

// ---------------------------------------------------------------------------
// Defaults. Organ intensities follow the ladder I[k+1] = 1.1*I[k] + 5, i.e.
// the default target shift (gain 1.1, bias 5) maps each organ's intensity
// onto the next organ's source intensity. Intensity alone then misidentifies
// every organ on the target domain; the fixed spatial layout is what
// disambiguates them.
// ---------------------------------------------------------------------------

inline PhantomSpec default_phantom_spec() {
    PhantomSpec spec;
    spec.num_organs = 8;
    spec.base_shape = {64, 64, 64};
    spec.background_intensity = 20.0;
    spec.texture_sigma = 2.0;
    spec.jitter = 0.03;
    spec.relative_offsets = {
        {0.30, 0.30, 0.30}, {0.70, 0.32, 0.28}, {0.28, 0.68, 0.33}, {0.72, 0.70, 0.30},
        {0.33, 0.30, 0.70}, {0.68, 0.28, 0.72}, {0.30, 0.72, 0.68}, {0.70, 0.68, 0.72},
    };
    const std::array<Vec3d, 8> axes = {{
        {7, 6, 8}, {6, 8, 6}, {8, 6, 6}, {6, 6, 7}, {8, 7, 5}, {5, 7, 7}, {7, 8, 5}, {6, 7, 7},
    }};
    spec.organ_templates.resize(8);
    double intensity = 100.0;
    for (int k = 0; k < 8; ++k) {
        spec.organ_templates[static_cast<std::size_t>(k)] = {axes[static_cast<std::size_t>(k)],
                                                             intensity};
        intensity = 1.1 * intensity + 5.0;
    }
    return spec;
}

inline DomainShift default_source_shift() { return DomainShift{}; }

inline DomainShift default_target_shift() {
    DomainShift s;
    s.axial_spacing_factor = 4;
    s.intensity_gain = 1.1;
    s.intensity_bias = 5.0;
    s.noise_sigma = 4.5;  // ~0.02 x default intensity dynamic range
    s.blur_sigma = 1.0;
    return s;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Mask labels 1..K over background 0; organ k sits at its jittered relative
/// offset. Pure function of (spec, seed). Overlapping organs are a
/// configuration error, never silently overwritten.
inline CaseData generate_phantom(const PhantomSpec& spec, u64 seed) {
    spec.validate();
    Rng rng(seed);
    Volume vol(spec.base_shape, {1, 1, 1}, static_cast<float>(spec.background_intensity));
    SegmentationMask mask(spec.base_shape, spec.num_organs + 1, 0);
    const double ex = static_cast<double>(spec.base_shape.x);
    const double ey = static_cast<double>(spec.base_shape.y);
    const double ez = static_cast<double>(spec.base_shape.z);

    for (int k = 0; k < spec.num_organs; ++k) {
        const auto& t = spec.organ_templates[static_cast<std::size_t>(k)];
        const auto& off = spec.relative_offsets[static_cast<std::size_t>(k)];
        const double cx = (off.x + rng.uniform(-spec.jitter, spec.jitter)) * ex;
        const double cy = (off.y + rng.uniform(-spec.jitter, spec.jitter)) * ey;
        const double cz = (off.z + rng.uniform(-spec.jitter, spec.jitter)) * ez;
        const i64 x0 = std::max<i64>(0, static_cast<i64>(std::floor(cx - t.half_axes.x)));
        const i64 x1 = std::min<i64>(spec.base_shape.x - 1,
                                     static_cast<i64>(std::ceil(cx + t.half_axes.x)));
        const i64 y0 = std::max<i64>(0, static_cast<i64>(std::floor(cy - t.half_axes.y)));
        const i64 y1 = std::min<i64>(spec.base_shape.y - 1,
                                     static_cast<i64>(std::ceil(cy + t.half_axes.y)));
        const i64 z0 = std::max<i64>(0, static_cast<i64>(std::floor(cz - t.half_axes.z)));
        const i64 z1 = std::min<i64>(spec.base_shape.z - 1,
                                     static_cast<i64>(std::ceil(cz + t.half_axes.z)));
        bool painted = false;
        for (i64 z = z0; z <= z1; ++z)
            for (i64 y = y0; y <= y1; ++y)
                for (i64 x = x0; x <= x1; ++x) {
                    const double dx = (static_cast<double>(x) - cx) / t.half_axes.x;
                    const double dy = (static_cast<double>(y) - cy) / t.half_axes.y;
                    const double dz = (static_cast<double>(z) - cz) / t.half_axes.z;
                    if (dx * dx + dy * dy + dz * dz > 1.0) continue;
                    require<ConfigError>(mask.at(x, y, z) == 0,
                                         "generate_phantom: organs " +
                                             std::to_string(mask.at(x, y, z)) + " and " +
                                             std::to_string(k + 1) + " overlap");
                    mask.at(x, y, z) = static_cast<u16>(k + 1);
                    vol.at(x, y, z) = static_cast<float>(t.intensity);
                    painted = true;
                }
        require<ConfigError>(painted, "generate_phantom: organ " + std::to_string(k + 1) +
                                          " produced no voxels");
    }
    if (spec.texture_sigma > 0.0)
        for (auto& v : vol.data)
            v += static_cast<float>(spec.texture_sigma * rng.normal());
    return {std::move(vol), std::move(mask)};
}

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable Gaussian blur with clamped boundaries.
inline void gaussian_blur_inplace(Volume& vol, double sigma) {
    if (sigma <= 0.0) return;
    const auto kernel = gaussian_kernel(sigma);
    const int radius = (static_cast<int>(kernel.size()) - 1) / 2;
    const Vec3i s = vol.shape;
    std::vector<float> tmp(vol.data.size());
    auto pass = [&](const std::vector<float>& in, std::vector<float>& out, int axis) {
        const i64 n_axis = axis == 0 ? s.x : axis == 1 ? s.y : s.z;
        for (i64 z = 0; z < s.z; ++z)
            for (i64 y = 0; y < s.y; ++y)
                for (i64 x = 0; x < s.x; ++x) {
                    double acc = 0.0;
                    for (int t = -radius; t <= radius; ++t) {
                        i64 xx = x, yy = y, zz = z;
                        i64& c = axis == 0 ? xx : axis == 1 ? yy : zz;
                        c = std::clamp<i64>(c + t, 0, n_axis - 1);
                        acc += kernel[static_cast<std::size_t>(t + radius)] *
                               in[static_cast<std::size_t>((zz * s.y + yy) * s.x + xx)];
                    }
                    out[static_cast<std::size_t>((z * s.y + y) * s.x + x)] =
                        static_cast<float>(acc);
                }
    };
    pass(vol.data, tmp, 0);
    pass(tmp, vol.data, 1);
    pass(vol.data, tmp, 2);
    vol.data.swap(tmp);
}

}  // namespace detail

/// blur -> axial block-average downsample (spacing.z scaled up) -> gain/bias
/// -> additive noise. Pure function of (vol, shift, seed).
inline Volume apply_domain_shift(const Volume& vol, const DomainShift& shift, u64 seed) {
    shift.validate();
    Volume out = vol;
    detail::gaussian_blur_inplace(out, shift.blur_sigma);
    if (shift.axial_spacing_factor > 1) {
        const int f = shift.axial_spacing_factor;
        require<SizeError>(out.shape.z % f == 0,
                           "apply_domain_shift: axial extent " + std::to_string(out.shape.z) +
                               " not divisible by spacing factor " + std::to_string(f));
        out.data = squeeze_axial_values(out.data, out.shape, f);
        out.shape.z /= f;
        out.spacing.z *= f;
    }
    if (shift.intensity_gain != 1.0 || shift.intensity_bias != 0.0)
        for (auto& v : out.data)
            v = static_cast<float>(shift.intensity_gain * v + shift.intensity_bias);
    if (shift.noise_sigma > 0.0) {
        Rng rng(seed);
        for (auto& v : out.data) v += static_cast<float>(shift.noise_sigma * rng.normal());
    }
    return out;
}

/// Nearest-neighbor companion downsample for the ground-truth mask.
inline SegmentationMask apply_domain_shift_mask(const SegmentationMask& mask,
                                                const DomainShift& shift) {
    shift.validate();
    if (shift.axial_spacing_factor <= 1) return mask;
    return resample_nearest(
        mask, {mask.shape.x, mask.shape.y, mask.shape.z / shift.axial_spacing_factor});
}

struct DomainDataset {
    std::string domain;
    std::vector<CaseData> cases;
    std::vector<u64> seeds;
};

/// Source/target datasets sharing one anatomy prior (same spec), differing
/// only via their shifts. Seed streams are disjoint between domains and cases.
/// Masks stay at the native generation grid (the anatomical ground truth);
/// only the volumes go through the scanner simulation.
inline std::pair<DomainDataset, DomainDataset> make_domain_pair(const PhantomSpec& spec,
                                                                const DomainShift& source_shift,
                                                                const DomainShift& target_shift,
                                                                int n_cases, u64 seed) {
    require<DomainError>(n_cases >= 1, "make_domain_pair: n_cases must be >= 1");
    validate_learnable(spec, source_shift);
    validate_learnable(spec, target_shift);
    DomainDataset src{"source", {}, {}};
    DomainDataset tgt{"target", {}, {}};
    for (int i = 0; i < n_cases; ++i) {
        const u64 ss = derive_seed(seed, static_cast<u64>(i));
        const u64 ts = derive_seed(seed, 0x80000000ull + static_cast<u64>(i));
        auto sc = generate_phantom(spec, ss);
        sc.volume = apply_domain_shift(sc.volume, source_shift, derive_seed(ss, 1));
        src.cases.push_back(std::move(sc));
        src.seeds.push_back(ss);
        auto tc = generate_phantom(spec, ts);
        tc.volume = apply_domain_shift(tc.volume, target_shift, derive_seed(ts, 1));
        tgt.cases.push_back(std::move(tc));
        tgt.seeds.push_back(ts);
    }
    return {std::move(src), std::move(tgt)};
}

// ---------------------------------------------------------------------------
// JSON round-trip for CLI config files
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const Vec3d& v) { j = {v.x, v.y, v.z}; }
inline void from_json(const nlohmann::json& j, Vec3d& v) {
    v = {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}
inline void to_json(nlohmann::json& j, const Vec3i& v) { j = {v.x, v.y, v.z}; }
inline void from_json(const nlohmann::json& j, Vec3i& v) {
    v = {j.at(0).get<i64>(), j.at(1).get<i64>(), j.at(2).get<i64>()};
}

inline void to_json(nlohmann::json& j, const OrganTemplate& t) {
    j = {{"half_axes", t.half_axes}, {"intensity", t.intensity}};
}
inline void from_json(const nlohmann::json& j, OrganTemplate& t) {
    t.half_axes = j.at("half_axes").get<Vec3d>();
    t.intensity = j.at("intensity").get<double>();
}

inline void to_json(nlohmann::json& j, const PhantomSpec& s) {
    j = {{"num_organs", s.num_organs},
         {"organ_templates", s.organ_templates},
         {"relative_offsets", s.relative_offsets},
         {"jitter", s.jitter},
         {"background_intensity", s.background_intensity},
         {"texture_sigma", s.texture_sigma},
         {"base_shape", s.base_shape}};
}
inline void from_json(const nlohmann::json& j, PhantomSpec& s) {
    const PhantomSpec defaults = default_phantom_spec();
    s.num_organs = j.value("num_organs", defaults.num_organs);
    s.organ_templates = j.value("organ_templates", defaults.organ_templates);
    s.relative_offsets = j.value("relative_offsets", defaults.relative_offsets);
    s.jitter = j.value("jitter", defaults.jitter);
    s.background_intensity = j.value("background_intensity", defaults.background_intensity);
    s.texture_sigma = j.value("texture_sigma", defaults.texture_sigma);
    s.base_shape = j.value("base_shape", defaults.base_shape);
}

inline void to_json(nlohmann::json& j, const DomainShift& s) {
    j = {{"axial_spacing_factor", s.axial_spacing_factor},
         {"intensity_gain", s.intensity_gain},
         {"intensity_bias", s.intensity_bias},
         {"noise_sigma", s.noise_sigma},
         {"blur_sigma", s.blur_sigma}};
}
inline void from_json(const nlohmann::json& j, DomainShift& s) {
    s.axial_spacing_factor = j.value("axial_spacing_factor", 1);
    s.intensity_gain = j.value("intensity_gain", 1.0);
    s.intensity_bias = j.value("intensity_bias", 0.0);
    s.noise_sigma = j.value("noise_sigma", 0.0);
    s.blur_sigma = j.value("blur_sigma", 0.0);
}

}  // namespace darr
