#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "darr/common.hpp"
#include "darr/rng.hpp"

namespace darr {

struct Vec3i {
    i64 x = 0, y = 0, z = 0;
    bool operator==(const Vec3i&) const = default;
    i64 count() const { return x * y * z; }
};

struct Vec3d {
    double x = 1.0, y = 1.0, z = 1.0;
    bool operator==(const Vec3d&) const = default;
};

inline std::string to_string(const Vec3i& v) {
    return std::to_string(v.x) + "x" + std::to_string(v.y) + "x" + std::to_string(v.z);
}

/// 3D scalar grid with per-axis physical spacing (mm). x is the fastest
/// memory axis: data[(z*Y + y)*X + x].
struct Volume {
    Vec3i shape;
    Vec3d spacing;
    std::vector<float> data;

    Volume() = default;
    Volume(Vec3i s, Vec3d sp, float fill = 0.f)
        : shape(s), spacing(sp), data(static_cast<std::size_t>(s.count()), fill) {
        validate_meta();
    }

    float& at(i64 x, i64 y, i64 z) { return data[idx(x, y, z)]; }
    float at(i64 x, i64 y, i64 z) const { return data[idx(x, y, z)]; }
    std::size_t idx(i64 x, i64 y, i64 z) const {
        return static_cast<std::size_t>((z * shape.y + y) * shape.x + x);
    }

    void validate_meta() const {
        require<SizeError>(shape.x >= 1 && shape.y >= 1 && shape.z >= 1,
                           "Volume: shape must be positive, got " + to_string(shape));
        require<DomainError>(spacing.x > 0 && spacing.y > 0 && spacing.z > 0,
                             "Volume: spacing must be strictly positive");
    }

    void validate() const {
        validate_meta();
        require<SizeError>(data.size() == static_cast<std::size_t>(shape.count()),
                           "Volume: data size does not match shape");
        for (float v : data)
            require<DomainError>(std::isfinite(v), "Volume: non-finite intensity");
    }
};

/// Integer label grid paired with a Volume; label 0 is background.
struct SegmentationMask {
    Vec3i shape;
    int num_classes = 2;
    std::vector<u16> labels;

    SegmentationMask() = default;
    SegmentationMask(Vec3i s, int nc, u16 fill = 0)
        : shape(s), num_classes(nc), labels(static_cast<std::size_t>(s.count()), fill) {}

    u16& at(i64 x, i64 y, i64 z) { return labels[idx(x, y, z)]; }
    u16 at(i64 x, i64 y, i64 z) const { return labels[idx(x, y, z)]; }
    std::size_t idx(i64 x, i64 y, i64 z) const {
        return static_cast<std::size_t>((z * shape.y + y) * shape.x + x);
    }

    void validate() const {
        require<SizeError>(labels.size() == static_cast<std::size_t>(shape.count()),
                           "SegmentationMask: label size does not match shape");
        require<DomainError>(num_classes >= 1, "SegmentationMask: num_classes must be >= 1");
        for (u16 v : labels)
            require<DomainError>(v < num_classes, "SegmentationMask: label out of range");
    }
};

/// A volume with its ground-truth mask; the unit datasets are made of.
struct CaseData {
    Volume volume;
    SegmentationMask mask;
};

/// W x H x L cell layout with a fixed per-cell voxel shape.
struct PatchGrid {
    int w = 3, h = 3, l = 3;
    Vec3i patch_shape{64, 64, 64};

    i64 cells() const { return static_cast<i64>(w) * h * l; }
    Vec3i full_shape() const { return {w * patch_shape.x, h * patch_shape.y, l * patch_shape.z}; }

    void validate() const {
        require<DomainError>(w >= 1 && h >= 1 && l >= 1, "PatchGrid: W,H,L must be >= 1");
        require<DomainError>(patch_shape.x >= 1 && patch_shape.y >= 1 && patch_shape.z >= 1,
                             "PatchGrid: patch_shape must be >= 1 per axis");
    }
};

/// Row-major cell label l = x + W*y + W*H*z.
inline i64 row_major_label(i64 x, i64 y, i64 z, i64 w, i64 h) {
    require<DomainError>(w >= 1 && h >= 1, "row_major_label: W,H must be >= 1");
    require<DomainError>(x >= 0 && x < w, "row_major_label: x out of range");
    require<DomainError>(y >= 0 && y < h, "row_major_label: y out of range");
    require<DomainError>(z >= 0, "row_major_label: z out of range");
    return x + w * y + w * h * z;
}

/// One grid cell's voxels plus the row-major label of the cell it came from.
struct LabeledPatch {
    Vec3i shape;
    i64 label = 0;
    std::vector<float> values;

    float at(i64 x, i64 y, i64 z) const {
        return values[static_cast<std::size_t>((z * shape.y + y) * shape.x + x)];
    }
};

struct Permutation {
    std::vector<i64> order;

    i64 size() const { return static_cast<i64>(order.size()); }

    static Permutation identity(i64 n) {
        Permutation p;
        p.order.resize(static_cast<std::size_t>(n));
        for (i64 i = 0; i < n; ++i) p.order[static_cast<std::size_t>(i)] = i;
        return p;
    }

    void validate() const {
        std::vector<i64> seen(order.size(), 0);
        for (i64 v : order) {
            require<IntegrityError>(v >= 0 && v < size(), "Permutation: index out of range");
            require<IntegrityError>(seen[static_cast<std::size_t>(v)]++ == 0,
                                    "Permutation: duplicate index");
        }
    }
};

/// Uniform over all n! orderings (Fisher-Yates on the forked stream).
inline Permutation sample_permutation(i64 n, Rng& rng) {
    require<DomainError>(n >= 1, "sample_permutation: n must be >= 1");
    Permutation p = Permutation::identity(n);
    rng.shuffle(p.order);
    return p;
}

/// Output position a holds input element order[a]; patches keep their own labels.
template <class P>
inline std::vector<P> apply_permutation(const std::vector<P>& items, const Permutation& perm) {
    require<DomainError>(static_cast<i64>(items.size()) == perm.size(),
                         "apply_permutation: length mismatch");
    perm.validate();
    std::vector<P> out;
    out.reserve(items.size());
    for (i64 a = 0; a < perm.size(); ++a)
        out.push_back(items[static_cast<std::size_t>(perm.order[static_cast<std::size_t>(a)])]);
    return out;
}

namespace detail {
// Half-pixel-center coordinate mapping shared by the resamplers.
inline double src_coord(i64 out, i64 out_n, i64 in_n) {
    return (static_cast<double>(out) + 0.5) * static_cast<double>(in_n) / static_cast<double>(out_n) - 0.5;
}
}  // namespace detail

/// Trilinear resampling to a new voxel count; physical extent is preserved,
/// so spacing rescales by old/new counts.
inline Volume resample_trilinear(const Volume& vol, Vec3i out_shape) {
    vol.validate_meta();
    require<SizeError>(out_shape.x >= 1 && out_shape.y >= 1 && out_shape.z >= 1,
                       "resample_trilinear: output shape must be positive");
    if (out_shape == vol.shape) return vol;
    Volume out(out_shape,
               {vol.spacing.x * static_cast<double>(vol.shape.x) / static_cast<double>(out_shape.x),
                vol.spacing.y * static_cast<double>(vol.shape.y) / static_cast<double>(out_shape.y),
                vol.spacing.z * static_cast<double>(vol.shape.z) / static_cast<double>(out_shape.z)});
    for (i64 z = 0; z < out_shape.z; ++z) {
        const double fz = detail::src_coord(z, out_shape.z, vol.shape.z);
        const i64 z0 = std::clamp<i64>(static_cast<i64>(std::floor(fz)), 0, vol.shape.z - 1);
        const i64 z1 = std::min<i64>(z0 + 1, vol.shape.z - 1);
        const double tz = std::clamp(fz - static_cast<double>(z0), 0.0, 1.0);
        for (i64 y = 0; y < out_shape.y; ++y) {
            const double fy = detail::src_coord(y, out_shape.y, vol.shape.y);
            const i64 y0 = std::clamp<i64>(static_cast<i64>(std::floor(fy)), 0, vol.shape.y - 1);
            const i64 y1 = std::min<i64>(y0 + 1, vol.shape.y - 1);
            const double ty = std::clamp(fy - static_cast<double>(y0), 0.0, 1.0);
            for (i64 x = 0; x < out_shape.x; ++x) {
                const double fx = detail::src_coord(x, out_shape.x, vol.shape.x);
                const i64 x0 = std::clamp<i64>(static_cast<i64>(std::floor(fx)), 0, vol.shape.x - 1);
                const i64 x1 = std::min<i64>(x0 + 1, vol.shape.x - 1);
                const double tx = std::clamp(fx - static_cast<double>(x0), 0.0, 1.0);
                const double c00 = vol.at(x0, y0, z0) * (1 - tx) + vol.at(x1, y0, z0) * tx;
                const double c10 = vol.at(x0, y1, z0) * (1 - tx) + vol.at(x1, y1, z0) * tx;
                const double c01 = vol.at(x0, y0, z1) * (1 - tx) + vol.at(x1, y0, z1) * tx;
                const double c11 = vol.at(x0, y1, z1) * (1 - tx) + vol.at(x1, y1, z1) * tx;
                const double c0 = c00 * (1 - ty) + c10 * ty;
                const double c1 = c01 * (1 - ty) + c11 * ty;
                out.at(x, y, z) = static_cast<float>(c0 * (1 - tz) + c1 * tz);
            }
        }
    }
    return out;
}

inline SegmentationMask resample_nearest(const SegmentationMask& mask, Vec3i out_shape) {
    require<SizeError>(out_shape.x >= 1 && out_shape.y >= 1 && out_shape.z >= 1,
                       "resample_nearest: output shape must be positive");
    if (out_shape == mask.shape) return mask;
    SegmentationMask out(out_shape, mask.num_classes);
    for (i64 z = 0; z < out_shape.z; ++z) {
        const i64 sz = std::clamp<i64>(
            static_cast<i64>(std::llround(detail::src_coord(z, out_shape.z, mask.shape.z))), 0,
            mask.shape.z - 1);
        for (i64 y = 0; y < out_shape.y; ++y) {
            const i64 sy = std::clamp<i64>(
                static_cast<i64>(std::llround(detail::src_coord(y, out_shape.y, mask.shape.y))), 0,
                mask.shape.y - 1);
            for (i64 x = 0; x < out_shape.x; ++x) {
                const i64 sx = std::clamp<i64>(
                    static_cast<i64>(std::llround(detail::src_coord(x, out_shape.x, mask.shape.x))),
                    0, mask.shape.x - 1);
                out.at(x, y, z) = mask.at(sx, sy, sz);
            }
        }
    }
    return out;
}

/// Tiles the (resampled) volume into W*H*L disjoint patches in ascending
/// row-major label order. Volumes whose shape is not grid.full_shape() are
/// trilinearly resampled first, keeping the puzzle geometry fixed.
inline std::vector<LabeledPatch> partition_volume(const Volume& vol, const PatchGrid& grid) {
    grid.validate();
    vol.validate_meta();
    const Volume* src = &vol;
    Volume resampled;
    if (vol.shape != grid.full_shape()) {
        resampled = resample_trilinear(vol, grid.full_shape());
        src = &resampled;
    }
    const Vec3i ps = grid.patch_shape;
    std::vector<LabeledPatch> out;
    out.reserve(static_cast<std::size_t>(grid.cells()));
    for (int cz = 0; cz < grid.l; ++cz)
        for (int cy = 0; cy < grid.h; ++cy)
            for (int cx = 0; cx < grid.w; ++cx) {
                LabeledPatch p;
                p.shape = ps;
                p.label = row_major_label(cx, cy, cz, grid.w, grid.h);
                p.values.resize(static_cast<std::size_t>(ps.count()));
                std::size_t k = 0;
                for (i64 z = 0; z < ps.z; ++z)
                    for (i64 y = 0; y < ps.y; ++y) {
                        const float* row =
                            src->data.data() + src->idx(cx * ps.x, cy * ps.y + y, cz * ps.z + z);
                        for (i64 x = 0; x < ps.x; ++x) p.values[k++] = row[x];
                    }
                out.push_back(std::move(p));
            }
    return out;
}

/// Same tiling applied to a mask (no resampling here; caller aligns shapes).
inline std::vector<SegmentationMask> partition_mask(const SegmentationMask& mask,
                                                    const PatchGrid& grid) {
    grid.validate();
    const SegmentationMask* src = &mask;
    SegmentationMask resampled;
    if (mask.shape != grid.full_shape()) {
        resampled = resample_nearest(mask, grid.full_shape());
        src = &resampled;
    }
    const Vec3i ps = grid.patch_shape;
    std::vector<SegmentationMask> out;
    out.reserve(static_cast<std::size_t>(grid.cells()));
    for (int cz = 0; cz < grid.l; ++cz)
        for (int cy = 0; cy < grid.h; ++cy)
            for (int cx = 0; cx < grid.w; ++cx) {
                SegmentationMask p(ps, src->num_classes);
                std::size_t k = 0;
                for (i64 z = 0; z < ps.z; ++z)
                    for (i64 y = 0; y < ps.y; ++y)
                        for (i64 x = 0; x < ps.x; ++x)
                            p.labels[k++] = src->at(cx * ps.x + x, cy * ps.y + y, cz * ps.z + z);
                out.push_back(std::move(p));
            }
    return out;
}

/// Thick-slice simulation: output slice k is the mean of input slices
/// [k*factor, (k+1)*factor). In-plane extents are untouched.
template <class T>
inline std::vector<T> squeeze_axial_values(const std::vector<T>& values, Vec3i shape, int factor) {
    require<DomainError>(factor >= 1, "squeeze_axial: factor must be >= 1");
    require<SizeError>(shape.z % factor == 0,
                       "squeeze_axial: axial extent " + std::to_string(shape.z) +
                           " not divisible by factor " + std::to_string(factor));
    if (factor == 1) return values;
    const i64 out_z = shape.z / factor;
    const i64 plane = shape.x * shape.y;
    std::vector<T> out(static_cast<std::size_t>(plane * out_z), T(0));
    const T inv = T(1) / static_cast<T>(factor);
    for (i64 k = 0; k < out_z; ++k) {
        T* dst = out.data() + k * plane;
        for (int f = 0; f < factor; ++f) {
            const T* srcp = values.data() + (k * factor + f) * plane;
            for (i64 i = 0; i < plane; ++i) dst[i] += srcp[i];
        }
        for (i64 i = 0; i < plane; ++i) dst[i] *= inv;
    }
    return out;
}

inline LabeledPatch squeeze_axial(const LabeledPatch& patch, int factor) {
    LabeledPatch out;
    out.label = patch.label;
    out.shape = {patch.shape.x, patch.shape.y, patch.shape.z / std::max(factor, 1)};
    out.values = squeeze_axial_values(patch.values, patch.shape, factor);
    return out;
}

/// Places each patch at the cell its label encodes; inverse of partition_volume
/// on the resampled volume. Spacing is the caller's business.
inline Volume reassemble(const std::vector<LabeledPatch>& patches, const PatchGrid& grid,
                         Vec3d spacing = {1, 1, 1}) {
    grid.validate();
    require<IntegrityError>(static_cast<i64>(patches.size()) == grid.cells(),
                            "reassemble: expected " + std::to_string(grid.cells()) + " patches");
    std::vector<char> seen(patches.size(), 0);
    Volume out(grid.full_shape(), spacing);
    const Vec3i ps = grid.patch_shape;
    for (const auto& p : patches) {
        require<IntegrityError>(p.label >= 0 && p.label < grid.cells(),
                                "reassemble: label out of range");
        require<IntegrityError>(!seen[static_cast<std::size_t>(p.label)],
                                "reassemble: duplicate label " + std::to_string(p.label));
        require<ShapeError>(p.shape == ps, "reassemble: patch shape mismatch");
        seen[static_cast<std::size_t>(p.label)] = 1;
        const i64 cx = p.label % grid.w;
        const i64 cy = (p.label / grid.w) % grid.h;
        const i64 cz = p.label / (static_cast<i64>(grid.w) * grid.h);
        std::size_t k = 0;
        for (i64 z = 0; z < ps.z; ++z)
            for (i64 y = 0; y < ps.y; ++y)
                for (i64 x = 0; x < ps.x; ++x)
                    out.at(cx * ps.x + x, cy * ps.y + y, cz * ps.z + z) = p.values[k++];
    }
    return out;
}

}  // namespace darr
