#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "fieldgen/tensor.hpp"

// Forward/backward primitives for the networks. Spatial tensors are
// channel-major [C, D, H, W]; token matrices are [N, F] row-major.
// Backward functions ACCUMULATE into parameter gradients and return the
// input gradient.

namespace fieldgen::ops {

struct ConvSpec {
    int in_c = 0;
    int out_c = 0;
    int k = 3;
    int stride = 1;
    int pad = 1;

    int out_side(int side) const { return (side + 2 * pad - k) / stride + 1; }
    int patch() const { return in_c * k * k * k; }
};

namespace detail {

// col is [P, in_c*k^3] for P = out_d*out_h*out_w output positions.
template <typename T>
void im2col(const Tensor<T>& x, const ConvSpec& cs, Tensor<T>& col) {
    const int d = x.shape[1], h = x.shape[2], w = x.shape[3];
    const int od = cs.out_side(d), oh = cs.out_side(h), ow = cs.out_side(w);
    const int patch = cs.patch();
    const std::int64_t positions = static_cast<std::int64_t>(od) * oh * ow;
    if (col.numel() != positions * patch) {
        col.shape = {static_cast<int>(positions), patch};
        col.data.assign(static_cast<std::size_t>(positions) * patch, T(0));
    }
    T* out = col.ptr();
    const T* in = x.ptr();
    std::int64_t p = 0;
    for (int zo = 0; zo < od; ++zo)
        for (int yo = 0; yo < oh; ++yo)
            for (int xo = 0; xo < ow; ++xo, ++p) {
                T* row = out + p * patch;
                int zi0 = zo * cs.stride - cs.pad;
                int yi0 = yo * cs.stride - cs.pad;
                int xi0 = xo * cs.stride - cs.pad;
                std::int64_t q = 0;
                for (int c = 0; c < cs.in_c; ++c) {
                    const T* chan = in + static_cast<std::int64_t>(c) * d * h * w;
                    for (int a = 0; a < cs.k; ++a) {
                        int zi = zi0 + a;
                        for (int b = 0; b < cs.k; ++b) {
                            int yi = yi0 + b;
                            for (int e = 0; e < cs.k; ++e, ++q) {
                                int xi = xi0 + e;
                                bool in_box = zi >= 0 && zi < d && yi >= 0 && yi < h &&
                                              xi >= 0 && xi < w;
                                row[q] = in_box
                                             ? chan[(static_cast<std::int64_t>(zi) * h + yi) * w + xi]
                                             : T(0);
                            }
                        }
                    }
                }
            }
}

template <typename T>
void col2im_add(const Tensor<T>& dcol, const ConvSpec& cs, Tensor<T>& dx) {
    const int d = dx.shape[1], h = dx.shape[2], w = dx.shape[3];
    const int od = cs.out_side(d), oh = cs.out_side(h), ow = cs.out_side(w);
    const int patch = cs.patch();
    const T* in = dcol.ptr();
    T* out = dx.ptr();
    std::int64_t p = 0;
    for (int zo = 0; zo < od; ++zo)
        for (int yo = 0; yo < oh; ++yo)
            for (int xo = 0; xo < ow; ++xo, ++p) {
                const T* row = in + p * patch;
                int zi0 = zo * cs.stride - cs.pad;
                int yi0 = yo * cs.stride - cs.pad;
                int xi0 = xo * cs.stride - cs.pad;
                std::int64_t q = 0;
                for (int c = 0; c < cs.in_c; ++c) {
                    T* chan = out + static_cast<std::int64_t>(c) * d * h * w;
                    for (int a = 0; a < cs.k; ++a) {
                        int zi = zi0 + a;
                        for (int b = 0; b < cs.k; ++b) {
                            int yi = yi0 + b;
                            for (int e = 0; e < cs.k; ++e, ++q) {
                                int xi = xi0 + e;
                                if (zi >= 0 && zi < d && yi >= 0 && yi < h && xi >= 0 && xi < w)
                                    chan[(static_cast<std::int64_t>(zi) * h + yi) * w + xi] +=
                                        row[q];
                            }
                        }
                    }
                }
            }
}

}  // namespace detail

// weights [out_c, in_c, k, k, k], bias [out_c]; col is a scratch buffer reused
// across calls and consumed again by the backward pass.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvSpec& cs, Tensor<T>& col) {
    if (x.shape.size() != 4 || x.shape[0] != cs.in_c)
        throw ConfigError("conv3d input shape " + x.shape_str() + " does not match spec");
    detail::im2col(x, cs, col);
    const int d = x.shape[1], h = x.shape[2], w = x.shape[3];
    const int od = cs.out_side(d), oh = cs.out_side(h), ow = cs.out_side(w);
    const int positions = od * oh * ow;

    Tensor<T> y({cs.out_c, od, oh, ow});
    auto y_m = as_matrix(y, cs.out_c, positions);
    auto w_m = as_matrix(weight, cs.out_c, cs.patch());
    auto col_m = as_matrix(col, positions, cs.patch());
    y_m.noalias() = w_m * col_m.transpose();
    y_m.colwise() += ConstVecMap<T>(bias.ptr(), cs.out_c);
    return y;
}

template <typename T>
Tensor<T> conv3d_backward(const Tensor<T>& dy, const std::vector<int>& x_shape,
                          const Tensor<T>& weight, const ConvSpec& cs, const Tensor<T>& col,
                          Tensor<T>& dweight, Tensor<T>& dbias) {
    const int d = x_shape[1], h = x_shape[2], w = x_shape[3];
    const int positions = cs.out_side(d) * cs.out_side(h) * cs.out_side(w);
    auto dy_m = as_matrix(dy, cs.out_c, positions);
    auto col_m = as_matrix(col, positions, cs.patch());

    as_matrix(dweight, cs.out_c, cs.patch()).noalias() += dy_m * col_m;
    // reductions stay scalar source-order loops: Eigen's vectorized sums peel
    // to a buffer-alignment-dependent lane split, which breaks bit-exact reruns
    const T* dyp = dy.ptr();
    for (int oc = 0; oc < cs.out_c; ++oc) {
        T acc = T(0);
        const T* row = dyp + static_cast<std::int64_t>(oc) * positions;
        for (int i = 0; i < positions; ++i) acc += row[i];
        dbias.data[static_cast<std::size_t>(oc)] += acc;
    }

    Tensor<T> dcol({positions, cs.patch()});
    auto w_m = as_matrix(weight, cs.out_c, cs.patch());
    as_matrix(dcol, positions, cs.patch()).noalias() = dy_m.transpose() * w_m;

    Tensor<T> dx(x_shape);
    detail::col2im_add(dcol, cs, dx);
    return dx;
}

// x [N, in], weight [out, in], bias [out] -> y [N, out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    const int in = weight.shape[1], out = weight.shape[0];
    const int n = static_cast<int>(x.numel() / in);
    Tensor<T> y({n, out});
    auto y_m = as_matrix(y, n, out);
    y_m.noalias() = as_matrix(x, n, in) * as_matrix(weight, out, in).transpose();
    y_m.rowwise() += ConstVecMap<T>(bias.ptr(), out).transpose();
    return y;
}

template <typename T>
Tensor<T> linear_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& weight,
                          Tensor<T>& dweight, Tensor<T>& dbias) {
    const int in = weight.shape[1], out = weight.shape[0];
    const int n = static_cast<int>(x.numel() / in);
    auto dy_m = as_matrix(dy, n, out);
    as_matrix(dweight, out, in).noalias() += dy_m.transpose() * as_matrix(x, n, in);
    for (int j = 0; j < out; ++j) {
        T acc = T(0);
        for (int i = 0; i < n; ++i)
            acc += dy.data[static_cast<std::size_t>(i) * static_cast<std::size_t>(out) +
                           static_cast<std::size_t>(j)];
        dbias.data[static_cast<std::size_t>(j)] += acc;
    }
    Tensor<T> dx;
    dx.shape = x.shape;
    dx.data.resize(x.data.size());
    as_matrix(dx, n, in).noalias() = dy_m * as_matrix(weight, out, in);
    return dx;
}

// transcendentals stay std:: scalar calls: Eigen's packet exp differs from the
// scalar tail by an ulp, and which elements land in the tail depends on buffer
// alignment
template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.data) v = v / (T(1) + std::exp(-v));
    return y;
}

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& dy, const Tensor<T>& x) {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i) {
        T s = T(1) / (T(1) + std::exp(-x.data[i]));
        dx.data[i] *= s * (T(1) + x.data[i] * (T(1) - s));
    }
    return dx;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.data) v = T(1) / (T(1) + std::exp(-v));
    return y;
}

// derivative expressed in terms of the forward output
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& dy, const Tensor<T>& y) {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
        dx.data[i] *= y.data[i] * (T(1) - y.data[i]);
    return dx;
}

// h [C, P] channel-major; per-channel y = h*(1+scale) + shift
template <typename T>
Tensor<T> film_channels(const Tensor<T>& h, const Tensor<T>& scale, const Tensor<T>& shift) {
    const int c = h.shape[0];
    const int p = static_cast<int>(h.numel() / c);
    Tensor<T> y = h;
    auto y_m = as_matrix(y, c, p);
    y_m.array().colwise() *= (ConstVecMap<T>(scale.ptr(), c).array() + T(1));
    y_m.colwise() += ConstVecMap<T>(shift.ptr(), c);
    return y;
}

template <typename T>
Tensor<T> film_channels_backward(const Tensor<T>& dy, const Tensor<T>& h, const Tensor<T>& scale,
                                 Tensor<T>& dscale, Tensor<T>& dshift) {
    const int c = h.shape[0];
    const int p = static_cast<int>(h.numel() / c);
    for (int ci = 0; ci < c; ++ci) {
        const T* dyr = dy.ptr() + static_cast<std::int64_t>(ci) * p;
        const T* hr = h.ptr() + static_cast<std::int64_t>(ci) * p;
        T dsc = T(0), dsh = T(0);
        for (int i = 0; i < p; ++i) {
            dsc += dyr[i] * hr[i];
            dsh += dyr[i];
        }
        dscale.data[static_cast<std::size_t>(ci)] += dsc;
        dshift.data[static_cast<std::size_t>(ci)] += dsh;
    }
    Tensor<T> dh = dy;
    as_matrix(dh, c, p).array().colwise() *= (ConstVecMap<T>(scale.ptr(), c).array() + T(1));
    return dh;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& s) {
    const int n = s.shape[0];
    const int m = static_cast<int>(s.numel() / n);
    Tensor<T> a = s;
    for (int i = 0; i < n; ++i) {
        T* row = a.data.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(m);
        T mx = row[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (int j = 0; j < m; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int j = 0; j < m; ++j) row[j] /= sum;
    }
    return a;
}

template <typename T>
Tensor<T> softmax_rows_backward(const Tensor<T>& da, const Tensor<T>& a) {
    const int n = a.shape[0];
    const int m = static_cast<int>(a.numel() / n);
    Tensor<T> ds = da;
    for (int i = 0; i < n; ++i) {
        T* dsr = ds.data.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(m);
        const T* ar = a.ptr() + static_cast<std::int64_t>(i) * m;
        T dot = T(0);
        for (int j = 0; j < m; ++j) dot += dsr[j] * ar[j];
        for (int j = 0; j < m; ++j) dsr[j] = ar[j] * (dsr[j] - dot);
    }
    return ds;
}

// Non-overlapping pooling: window divides each spatial dim; ties break to the
// lowest linear index. argmax stores flat input indices for gradient routing.
template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& x, int window, std::vector<std::int64_t>& argmax) {
    const int c = x.shape[0], d = x.shape[1], h = x.shape[2], w = x.shape[3];
    if (d % window || h % window || w % window)
        throw ConfigError("maxpool3d window must divide spatial dims");
    const int od = d / window, oh = h / window, ow = w / window;
    Tensor<T> y({c, od, oh, ow});
    argmax.assign(static_cast<std::size_t>(y.numel()), 0);
    const T* in = x.ptr();
    std::int64_t o = 0;
    for (int ci = 0; ci < c; ++ci)
        for (int zo = 0; zo < od; ++zo)
            for (int yo = 0; yo < oh; ++yo)
                for (int xo = 0; xo < ow; ++xo, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int64_t best_idx = -1;
                    for (int a = 0; a < window; ++a)
                        for (int b = 0; b < window; ++b)
                            for (int e = 0; e < window; ++e) {
                                std::int64_t idx =
                                    ((static_cast<std::int64_t>(ci) * d + zo * window + a) * h +
                                     yo * window + b) *
                                        w +
                                    xo * window + e;
                                if (in[idx] > best) {
                                    best = in[idx];
                                    best_idx = idx;
                                }
                            }
                    y.data[o] = best;
                    argmax[o] = best_idx;
                }
    return y;
}

template <typename T>
Tensor<T> maxpool3d_backward(const Tensor<T>& dy, const std::vector<std::int64_t>& argmax,
                             const std::vector<int>& x_shape) {
    Tensor<T> dx(x_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) dx.data[argmax[i]] += dy.data[i];
    return dx;
}

// Stride-1 max filter with implicit -inf padding; output matches input shape.
template <typename T>
Tensor<T> sliding_max3d(const Tensor<T>& x, int window) {
    const int c = x.shape[0], d = x.shape[1], h = x.shape[2], w = x.shape[3];
    const int r = window / 2;
    Tensor<T> y = x;
    const T* in = x.ptr();
    std::int64_t o = 0;
    for (int ci = 0; ci < c; ++ci)
        for (int z = 0; z < d; ++z)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    for (int a = std::max(0, z - r); a <= std::min(d - 1, z + r); ++a)
                        for (int b = std::max(0, yy - r); b <= std::min(h - 1, yy + r); ++b)
                            for (int e = std::max(0, xx - r); e <= std::min(w - 1, xx + r); ++e) {
                                T v = in[((static_cast<std::int64_t>(ci) * d + a) * h + b) * w + e];
                                if (v > best) best = v;
                            }
                    y.data[o] = best;
                }
    return y;
}

template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
    const int c = x.shape[0], d = x.shape[1], h = x.shape[2], w = x.shape[3];
    Tensor<T> y({c, 2 * d, 2 * h, 2 * w});
    for (int ci = 0; ci < c; ++ci)
        for (int z = 0; z < 2 * d; ++z)
            for (int yy = 0; yy < 2 * h; ++yy)
                for (int xx = 0; xx < 2 * w; ++xx)
                    y.data[((static_cast<std::int64_t>(ci) * 2 * d + z) * 2 * h + yy) * 2 * w + xx] =
                        x.data[((static_cast<std::int64_t>(ci) * d + z / 2) * h + yy / 2) * w +
                               xx / 2];
    return y;
}

template <typename T>
Tensor<T> upsample_nearest2_backward(const Tensor<T>& dy, const std::vector<int>& x_shape) {
    const int c = x_shape[0], d = x_shape[1], h = x_shape[2], w = x_shape[3];
    Tensor<T> dx(x_shape);
    for (int ci = 0; ci < c; ++ci)
        for (int z = 0; z < 2 * d; ++z)
            for (int yy = 0; yy < 2 * h; ++yy)
                for (int xx = 0; xx < 2 * w; ++xx)
                    dx.data[((static_cast<std::int64_t>(ci) * d + z / 2) * h + yy / 2) * w + xx / 2] +=
                        dy.data[((static_cast<std::int64_t>(ci) * 2 * d + z) * 2 * h + yy) * 2 * w +
                                xx];
    return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> y({a.shape[0] + b.shape[0], a.shape[1], a.shape[2], a.shape[3]});
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + a.numel());
    return y;
}

// da and db must be pre-shaped to the two concatenated parts.
template <typename T>
void split_channels_backward(const Tensor<T>& dy, std::int64_t a_numel, Tensor<T>& da,
                             Tensor<T>& db) {
    if (da.numel() != a_numel || db.numel() != dy.numel() - a_numel)
        throw ConfigError("split_channels_backward: outputs not shaped for the split");
    std::copy(dy.data.begin(), dy.data.begin() + a_numel, da.data.begin());
    std::copy(dy.data.begin() + a_numel, dy.data.end(), db.data.begin());
}

}  // namespace fieldgen::ops
