#pragma once

#include <vector>

#include "darr/common.hpp"
#include "darr/volume.hpp"

namespace darr::nn {

/// Dense channels-first activation tensor. Memory layout is
/// v[((c*Z + z)*Y + y)*X + x]: one contiguous plane per channel, x fastest.
template <class T>
struct Feat {
    int channels = 0;
    Vec3i shape;  // (X, Y, Z)
    std::vector<T> v;

    Feat() = default;
    Feat(int c, Vec3i s, T fill = T(0))
        : channels(c), shape(s), v(static_cast<std::size_t>(c) * voxels_of(s), fill) {}

    static std::size_t voxels_of(Vec3i s) { return static_cast<std::size_t>(s.count()); }
    i64 voxels() const { return shape.count(); }
    std::size_t size() const { return v.size(); }

    T* plane(int c) { return v.data() + static_cast<std::size_t>(c) * voxels_of(shape); }
    const T* plane(int c) const { return v.data() + static_cast<std::size_t>(c) * voxels_of(shape); }

    T& at(int c, i64 x, i64 y, i64 z) {
        return v[(static_cast<std::size_t>(c) * shape.z + z) * shape.y * shape.x + y * shape.x + x];
    }
    T at(int c, i64 x, i64 y, i64 z) const {
        return v[(static_cast<std::size_t>(c) * shape.z + z) * shape.y * shape.x + y * shape.x + x];
    }

    void zero() { std::fill(v.begin(), v.end(), T(0)); }

    bool same_geometry(const Feat& o) const { return channels == o.channels && shape == o.shape; }
};

template <class T>
inline Feat<T> from_values(const std::vector<float>& values, Vec3i shape) {
    Feat<T> f(1, shape);
    for (std::size_t i = 0; i < values.size(); ++i) f.v[i] = static_cast<T>(values[i]);
    return f;
}

template <class T>
inline void add_into(Feat<T>& dst, const Feat<T>& src) {
    require<ShapeError>(dst.same_geometry(src), "add_into: geometry mismatch");
    for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

}  // namespace darr::nn
