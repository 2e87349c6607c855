#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "darr/nn/tensor.hpp"
#include "darr/rng.hpp"

namespace darr::nn {

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>>;
template <class T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>>;

template <class T>
struct Param {
    std::string name;
    std::vector<i64> shape;
    std::vector<T> w;
    std::vector<T> g;

    i64 count() const { return static_cast<i64>(w.size()); }
    void zero_grad() { std::fill(g.begin(), g.end(), T(0)); }
};

template <class T>
inline void zero_grads(const std::vector<Param<T>*>& params) {
    for (auto* p : params) p->zero_grad();
}

template <class T>
inline i64 param_count(const std::vector<Param<T>*>& params) {
    i64 n = 0;
    for (auto* p : params) n += p->count();
    return n;
}

template <class T>
inline u64 params_checksum(const std::vector<Param<T>*>& params) {
    u64 h = 0xcbf29ce484222325ull;
    for (auto* p : params) h = fnv1a(p->w.data(), p->w.size() * sizeof(T), h);
    return h;
}

// Shared per-thread im2col scratch. Workers each run on their own thread, so
// a thread_local buffer keeps replicas reentrant without per-layer copies.
template <class T>
inline std::vector<T>& col_scratch() {
    thread_local std::vector<T> buf;
    return buf;
}

// ---------------------------------------------------------------------------
// Conv3d: zero-padded dense convolution via im2col + GEMM.
// Weights: w[k + K*co] with k = ((cin*ks + dz)*ks + dy)*ks + dx, K = Cin*ks^3.
// ---------------------------------------------------------------------------
template <class T>
struct Conv3d {
    int in_c = 0, out_c = 0, ksize = 3, stride = 1, pad = 1;
    Param<T> weight, bias;
    Feat<T> input_;  // stashed by forward for the backward pass

    Conv3d() = default;
    Conv3d(std::string name, int in_channels, int out_channels, int k, int s, int p)
        : in_c(in_channels), out_c(out_channels), ksize(k), stride(s), pad(p) {
        const i64 kk = static_cast<i64>(in_c) * ksize * ksize * ksize;
        weight.name = name + ".weight";
        weight.shape = {kk, out_c};
        weight.w.assign(static_cast<std::size_t>(kk * out_c), T(0));
        weight.g = weight.w;
        bias.name = name + ".bias";
        bias.shape = {out_c};
        bias.w.assign(static_cast<std::size_t>(out_c), T(0));
        bias.g = bias.w;
    }

    void init(Rng& rng) {
        const double fan_in = static_cast<double>(in_c) * ksize * ksize * ksize;
        const double sigma = std::sqrt(2.0 / fan_in);
        for (auto& v : weight.w) v = static_cast<T>(sigma * rng.normal());
        std::fill(bias.w.begin(), bias.w.end(), T(0));
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    Vec3i out_shape(Vec3i in) const {
        auto dim = [&](i64 n) {
            const i64 span = n + 2 * pad - ksize;
            require<ShapeError>(span >= 0 && span % stride == 0,
                                "Conv3d: input extent " + std::to_string(n) +
                                    " incompatible with k=" + std::to_string(ksize) +
                                    " s=" + std::to_string(stride) + " p=" + std::to_string(pad));
            return span / stride + 1;
        };
        return {dim(in.x), dim(in.y), dim(in.z)};
    }

    // Fills cols (N_out x K, column-major) so that column k holds input channel
    // cin shifted by the kernel offset, sampled on the output lattice.
    void im2col(const Feat<T>& x, Vec3i os, std::vector<T>& cols) const {
        const i64 n_out = os.count();
        const i64 kk = static_cast<i64>(in_c) * ksize * ksize * ksize;
        cols.resize(static_cast<std::size_t>(n_out * kk));
        i64 k = 0;
        for (int cin = 0; cin < in_c; ++cin) {
            const T* src = x.plane(cin);
            for (int dz = 0; dz < ksize; ++dz)
                for (int dy = 0; dy < ksize; ++dy)
                    for (int dx = 0; dx < ksize; ++dx, ++k) {
                        T* dst = cols.data() + static_cast<std::size_t>(k * n_out);
                        for (i64 oz = 0; oz < os.z; ++oz) {
                            const i64 iz = oz * stride + dz - pad;
                            if (iz < 0 || iz >= x.shape.z) {
                                std::fill(dst, dst + os.y * os.x, T(0));
                                dst += os.y * os.x;
                                continue;
                            }
                            for (i64 oy = 0; oy < os.y; ++oy) {
                                const i64 iy = oy * stride + dy - pad;
                                if (iy < 0 || iy >= x.shape.y) {
                                    std::fill(dst, dst + os.x, T(0));
                                    dst += os.x;
                                    continue;
                                }
                                const T* row = src + (iz * x.shape.y + iy) * x.shape.x;
                                if (stride == 1) {
                                    for (i64 ox = 0; ox < os.x; ++ox) {
                                        const i64 ix = ox + dx - pad;
                                        dst[ox] = (ix >= 0 && ix < x.shape.x) ? row[ix] : T(0);
                                    }
                                } else {
                                    for (i64 ox = 0; ox < os.x; ++ox) {
                                        const i64 ix = ox * stride + dx - pad;
                                        dst[ox] = (ix >= 0 && ix < x.shape.x) ? row[ix] : T(0);
                                    }
                                }
                                dst += os.x;
                            }
                        }
                    }
        }
    }

    Feat<T> forward(const Feat<T>& x) {
        require<ShapeError>(x.channels == in_c, "Conv3d: expected " + std::to_string(in_c) +
                                                    " input channels, got " +
                                                    std::to_string(x.channels));
        const Vec3i os = out_shape(x.shape);
        input_ = x;
        auto& cols = col_scratch<T>();
        im2col(x, os, cols);
        const i64 n_out = os.count();
        const i64 kk = weight.shape[0];
        Feat<T> y(out_c, os);
        MatMap<T>(y.v.data(), n_out, out_c).noalias() =
            ConstMatMap<T>(cols.data(), n_out, kk) * ConstMatMap<T>(weight.w.data(), kk, out_c);
        for (int co = 0; co < out_c; ++co) {
            T* p = y.plane(co);
            const T b = bias.w[static_cast<std::size_t>(co)];
            for (i64 i = 0; i < n_out; ++i) p[i] += b;
        }
        return y;
    }

    Feat<T> backward(const Feat<T>& gout) {
        const Vec3i os = out_shape(input_.shape);
        require<ShapeError>(gout.channels == out_c && gout.shape == os,
                            "Conv3d: gradient geometry mismatch");
        const i64 n_out = os.count();
        const i64 kk = weight.shape[0];
        auto& cols = col_scratch<T>();
        im2col(input_, os, cols);
        ConstMatMap<T> g(gout.v.data(), n_out, out_c);
        MatMap<T>(weight.g.data(), kk, out_c).noalias() +=
            ConstMatMap<T>(cols.data(), n_out, kk).transpose() * g;
        for (int co = 0; co < out_c; ++co)
            bias.g[static_cast<std::size_t>(co)] += g.col(co).sum();
        // reuse the scratch for dCols, then scatter back to input geometry
        MatMap<T>(cols.data(), n_out, kk).noalias() =
            g * ConstMatMap<T>(weight.w.data(), kk, out_c).transpose();
        Feat<T> gin(in_c, input_.shape);
        i64 k = 0;
        for (int cin = 0; cin < in_c; ++cin) {
            T* dstp = gin.plane(cin);
            for (int dz = 0; dz < ksize; ++dz)
                for (int dy = 0; dy < ksize; ++dy)
                    for (int dx = 0; dx < ksize; ++dx, ++k) {
                        const T* srcp = cols.data() + static_cast<std::size_t>(k * n_out);
                        for (i64 oz = 0; oz < os.z; ++oz) {
                            const i64 iz = oz * stride + dz - pad;
                            if (iz < 0 || iz >= input_.shape.z) {
                                srcp += os.y * os.x;
                                continue;
                            }
                            for (i64 oy = 0; oy < os.y; ++oy) {
                                const i64 iy = oy * stride + dy - pad;
                                if (iy < 0 || iy >= input_.shape.y) {
                                    srcp += os.x;
                                    continue;
                                }
                                T* row = dstp + (iz * input_.shape.y + iy) * input_.shape.x;
                                for (i64 ox = 0; ox < os.x; ++ox) {
                                    const i64 ix = ox * stride + dx - pad;
                                    if (ix >= 0 && ix < input_.shape.x) row[ix] += srcp[ox];
                                }
                                srcp += os.x;
                            }
                        }
                    }
        }
        return gin;
    }
};

// ---------------------------------------------------------------------------
// InstanceNorm: per-channel normalization over the voxel dimension of a single
// instance. No running statistics (batch size 1 makes them degenerate).
// ---------------------------------------------------------------------------
template <class T>
struct InstanceNorm {
    int channels = 0;
    T eps = static_cast<T>(1e-5);
    Param<T> gamma, beta;
    Feat<T> xhat_;
    std::vector<T> inv_std_;

    InstanceNorm() = default;
    InstanceNorm(std::string name, int c) : channels(c) {
        gamma.name = name + ".gamma";
        gamma.shape = {c};
        gamma.w.assign(static_cast<std::size_t>(c), T(1));
        gamma.g.assign(static_cast<std::size_t>(c), T(0));
        beta.name = name + ".beta";
        beta.shape = {c};
        beta.w.assign(static_cast<std::size_t>(c), T(0));
        beta.g = beta.w;
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }

    Feat<T> forward(const Feat<T>& x) {
        require<ShapeError>(x.channels == channels, "InstanceNorm: channel mismatch");
        const i64 n = x.voxels();
        Feat<T> y(channels, x.shape);
        xhat_ = Feat<T>(channels, x.shape);
        inv_std_.assign(static_cast<std::size_t>(channels), T(0));
        for (int c = 0; c < channels; ++c) {
            const T* p = x.plane(c);
            T mean = 0;
            for (i64 i = 0; i < n; ++i) mean += p[i];
            mean /= static_cast<T>(n);
            T var = 0;
            for (i64 i = 0; i < n; ++i) var += (p[i] - mean) * (p[i] - mean);
            var /= static_cast<T>(n);
            const T istd = T(1) / std::sqrt(var + eps);
            inv_std_[static_cast<std::size_t>(c)] = istd;
            T* xh = xhat_.plane(c);
            T* yp = y.plane(c);
            const T gc = gamma.w[static_cast<std::size_t>(c)];
            const T bc = beta.w[static_cast<std::size_t>(c)];
            for (i64 i = 0; i < n; ++i) {
                xh[i] = (p[i] - mean) * istd;
                yp[i] = gc * xh[i] + bc;
            }
        }
        return y;
    }

    Feat<T> backward(const Feat<T>& gout) {
        require<ShapeError>(gout.same_geometry(xhat_), "InstanceNorm: gradient geometry mismatch");
        const i64 n = xhat_.voxels();
        Feat<T> gin(channels, xhat_.shape);
        for (int c = 0; c < channels; ++c) {
            const T* go = gout.plane(c);
            const T* xh = xhat_.plane(c);
            T sum_g = 0, sum_gx = 0;
            for (i64 i = 0; i < n; ++i) {
                sum_g += go[i];
                sum_gx += go[i] * xh[i];
            }
            gamma.g[static_cast<std::size_t>(c)] += sum_gx;
            beta.g[static_cast<std::size_t>(c)] += sum_g;
            const T gc = gamma.w[static_cast<std::size_t>(c)];
            const T istd = inv_std_[static_cast<std::size_t>(c)];
            const T inv_n = T(1) / static_cast<T>(n);
            T* gi = gin.plane(c);
            for (i64 i = 0; i < n; ++i)
                gi[i] = gc * istd * (go[i] - inv_n * sum_g - xh[i] * inv_n * sum_gx);
        }
        return gin;
    }
};

template <class T>
struct ReLU {
    Feat<T> out_;

    Feat<T> forward(const Feat<T>& x) {
        Feat<T> y(x.channels, x.shape);
        for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] > T(0) ? x.v[i] : T(0);
        out_ = y;
        return y;
    }

    Feat<T> backward(const Feat<T>& gout) {
        require<ShapeError>(gout.same_geometry(out_), "ReLU: gradient geometry mismatch");
        Feat<T> gin(gout.channels, gout.shape);
        for (std::size_t i = 0; i < gout.v.size(); ++i)
            gin.v[i] = out_.v[i] > T(0) ? gout.v[i] : T(0);
        return gin;
    }
};

/// Nearest-neighbor x2 upsampling on all axes (decoder path).
template <class T>
struct NearestUpsample2 {
    Vec3i in_shape_;

    Feat<T> forward(const Feat<T>& x) {
        in_shape_ = x.shape;
        Feat<T> y(x.channels, {x.shape.x * 2, x.shape.y * 2, x.shape.z * 2});
        for (int c = 0; c < x.channels; ++c) {
            const T* src = x.plane(c);
            T* dst = y.plane(c);
            for (i64 z = 0; z < y.shape.z; ++z)
                for (i64 yy = 0; yy < y.shape.y; ++yy) {
                    const T* row = src + ((z / 2) * x.shape.y + (yy / 2)) * x.shape.x;
                    T* orow = dst + (z * y.shape.y + yy) * y.shape.x;
                    for (i64 xx = 0; xx < y.shape.x; ++xx) orow[xx] = row[xx / 2];
                }
        }
        return y;
    }

    Feat<T> backward(const Feat<T>& gout) {
        Feat<T> gin(gout.channels, in_shape_);
        gin.zero();
        for (int c = 0; c < gout.channels; ++c) {
            const T* src = gout.plane(c);
            T* dst = gin.plane(c);
            for (i64 z = 0; z < gout.shape.z; ++z)
                for (i64 yy = 0; yy < gout.shape.y; ++yy) {
                    T* orow = dst + ((z / 2) * in_shape_.y + (yy / 2)) * in_shape_.x;
                    const T* row = src + (z * gout.shape.y + yy) * gout.shape.x;
                    for (i64 xx = 0; xx < gout.shape.x; ++xx) orow[xx / 2] += row[xx];
                }
        }
        return gin;
    }
};

/// Fixed linear (half-pixel-center) upsampling along z by an integer factor.
/// The non-learned standardization path and the SR global skip both use this.
template <class T>
struct LinearUpsampleZ {
    int factor = 1;
    Vec3i in_shape_;

    explicit LinearUpsampleZ(int f = 1) : factor(f) {}

    Feat<T> forward(const Feat<T>& x) {
        in_shape_ = x.shape;
        if (factor == 1) return x;
        Feat<T> y(x.channels, {x.shape.x, x.shape.y, x.shape.z * factor});
        const i64 plane = x.shape.x * x.shape.y;
        for (int c = 0; c < x.channels; ++c) {
            const T* src = x.plane(c);
            T* dst = y.plane(c);
            for (i64 z = 0; z < y.shape.z; ++z) {
                const double fz = (static_cast<double>(z) + 0.5) / factor - 0.5;
                const i64 z0 = std::clamp<i64>(static_cast<i64>(std::floor(fz)), 0, x.shape.z - 1);
                const i64 z1 = std::min<i64>(z0 + 1, x.shape.z - 1);
                const T t = static_cast<T>(std::clamp(fz - static_cast<double>(z0), 0.0, 1.0));
                const T* s0 = src + z0 * plane;
                const T* s1 = src + z1 * plane;
                T* o = dst + z * plane;
                for (i64 i = 0; i < plane; ++i) o[i] = (T(1) - t) * s0[i] + t * s1[i];
            }
        }
        return y;
    }

    Feat<T> backward(const Feat<T>& gout) {
        if (factor == 1) return gout;
        Feat<T> gin(gout.channels, in_shape_);
        gin.zero();
        const i64 plane = in_shape_.x * in_shape_.y;
        for (int c = 0; c < gout.channels; ++c) {
            const T* src = gout.plane(c);
            T* dst = gin.plane(c);
            for (i64 z = 0; z < gout.shape.z; ++z) {
                const double fz = (static_cast<double>(z) + 0.5) / factor - 0.5;
                const i64 z0 = std::clamp<i64>(static_cast<i64>(std::floor(fz)), 0, in_shape_.z - 1);
                const i64 z1 = std::min<i64>(z0 + 1, in_shape_.z - 1);
                const T t = static_cast<T>(std::clamp(fz - static_cast<double>(z0), 0.0, 1.0));
                const T* g = src + z * plane;
                T* d0 = dst + z0 * plane;
                T* d1 = dst + z1 * plane;
                for (i64 i = 0; i < plane; ++i) {
                    d0[i] += (T(1) - t) * g[i];
                    d1[i] += t * g[i];
                }
            }
        }
        return gin;
    }
};

/// Subpixel upsampling along the axial axis: channel groups of size `factor`
/// interleave into z positions. (C, X, Y, Z) -> (C/factor, X, Y, Z*factor).
template <class T>
struct AxialPixelShuffle {
    int factor = 1;

    explicit AxialPixelShuffle(int f = 1) : factor(f) {}

    Feat<T> forward(const Feat<T>& x) {
        require<ShapeError>(x.channels % factor == 0,
                            "AxialPixelShuffle: channels not divisible by factor");
        if (factor == 1) return x;
        Feat<T> y(x.channels / factor, {x.shape.x, x.shape.y, x.shape.z * factor});
        const i64 plane = x.shape.x * x.shape.y;
        for (int co = 0; co < y.channels; ++co)
            for (int df = 0; df < factor; ++df) {
                const T* src = x.plane(co * factor + df);
                T* dst = y.plane(co);
                for (i64 zi = 0; zi < x.shape.z; ++zi)
                    std::copy(src + zi * plane, src + (zi + 1) * plane,
                              dst + (zi * factor + df) * plane);
            }
        return y;
    }

    Feat<T> backward(const Feat<T>& gout) {
        if (factor == 1) return gout;
        Feat<T> gin(gout.channels * factor,
                    {gout.shape.x, gout.shape.y, gout.shape.z / factor});
        const i64 plane = gout.shape.x * gout.shape.y;
        for (int co = 0; co < gout.channels; ++co)
            for (int df = 0; df < factor; ++df) {
                T* dst = gin.plane(co * factor + df);
                const T* src = gout.plane(co);
                for (i64 zi = 0; zi < gin.shape.z; ++zi)
                    std::copy(src + (zi * factor + df) * plane, src + (zi * factor + df + 1) * plane,
                              dst + zi * plane);
            }
        return gin;
    }
};

template <class T>
inline std::vector<T> gap_forward(const Feat<T>& x) {
    std::vector<T> out(static_cast<std::size_t>(x.channels), T(0));
    const i64 n = x.voxels();
    for (int c = 0; c < x.channels; ++c) {
        const T* p = x.plane(c);
        T s = 0;
        for (i64 i = 0; i < n; ++i) s += p[i];
        out[static_cast<std::size_t>(c)] = s / static_cast<T>(n);
    }
    return out;
}

template <class T>
inline Feat<T> gap_backward(const std::vector<T>& gout, int channels, Vec3i shape) {
    Feat<T> gin(channels, shape);
    const i64 n = gin.voxels();
    for (int c = 0; c < channels; ++c) {
        const T v = gout[static_cast<std::size_t>(c)] / static_cast<T>(n);
        T* p = gin.plane(c);
        for (i64 i = 0; i < n; ++i) p[i] = v;
    }
    return gin;
}

// ---------------------------------------------------------------------------
// Fully connected layer. Weights w[i + in*o]: column o holds output o.
// ---------------------------------------------------------------------------
template <class T>
struct Linear {
    int in_dim = 0, out_dim = 0;
    Param<T> weight, bias;
    std::vector<T> input_;

    Linear() = default;
    Linear(std::string name, int in, int out) : in_dim(in), out_dim(out) {
        weight.name = name + ".weight";
        weight.shape = {in, out};
        weight.w.assign(static_cast<std::size_t>(in) * out, T(0));
        weight.g = weight.w;
        bias.name = name + ".bias";
        bias.shape = {out};
        bias.w.assign(static_cast<std::size_t>(out), T(0));
        bias.g = bias.w;
    }

    void init(Rng& rng) {
        const double sigma = std::sqrt(2.0 / static_cast<double>(in_dim));
        for (auto& v : weight.w) v = static_cast<T>(sigma * rng.normal());
        std::fill(bias.w.begin(), bias.w.end(), T(0));
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    std::vector<T> forward(const std::vector<T>& x) {
        require<ShapeError>(static_cast<int>(x.size()) == in_dim,
                            "Linear: expected input size " + std::to_string(in_dim) + ", got " +
                                std::to_string(x.size()));
        input_ = x;
        std::vector<T> y(bias.w);
        for (int o = 0; o < out_dim; ++o) {
            const T* wcol = weight.w.data() + static_cast<std::size_t>(o) * in_dim;
            T acc = 0;
            for (int i = 0; i < in_dim; ++i) acc += wcol[i] * x[static_cast<std::size_t>(i)];
            y[static_cast<std::size_t>(o)] += acc;
        }
        return y;
    }

    std::vector<T> backward(const std::vector<T>& gout) {
        std::vector<T> gin(static_cast<std::size_t>(in_dim), T(0));
        for (int o = 0; o < out_dim; ++o) {
            const T go = gout[static_cast<std::size_t>(o)];
            T* gcol = weight.g.data() + static_cast<std::size_t>(o) * in_dim;
            const T* wcol = weight.w.data() + static_cast<std::size_t>(o) * in_dim;
            for (int i = 0; i < in_dim; ++i) {
                gcol[i] += go * input_[static_cast<std::size_t>(i)];
                gin[static_cast<std::size_t>(i)] += go * wcol[i];
            }
            bias.g[static_cast<std::size_t>(o)] += go;
        }
        return gin;
    }
};

template <class T>
struct VecReLU {
    std::vector<T> out_;

    std::vector<T> forward(const std::vector<T>& x) {
        out_ = x;
        for (auto& v : out_)
            if (v < T(0)) v = T(0);
        return out_;
    }

    std::vector<T> backward(const std::vector<T>& gout) {
        std::vector<T> gin(gout.size());
        for (std::size_t i = 0; i < gout.size(); ++i)
            gin[i] = out_[i] > T(0) ? gout[i] : T(0);
        return gin;
    }
};

}  // namespace darr::nn
