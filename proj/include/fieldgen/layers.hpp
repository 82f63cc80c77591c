#pragma once

#include <cmath>
#include <string>

#include "fieldgen/ops.hpp"
#include "fieldgen/optim.hpp"
#include "fieldgen/rng.hpp"

// Stateful layer wrappers: parameters live in a ParamStore, activations needed
// by the backward pass are cached in the layer. One forward must be followed
// by its backward before the next forward of the same layer instance.

namespace fieldgen {

template <typename T>
struct LinearLayer {
    Param<T>* w = nullptr;
    Param<T>* b = nullptr;  // null for bias-free projections
    Tensor<T> x_cache;
    Tensor<T> zero_bias, scratch_db;

    LinearLayer() = default;
    LinearLayer(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng,
                double weight_scale = -1.0, bool with_bias = true) {
        double std = weight_scale >= 0 ? weight_scale : 1.0 / std::sqrt(static_cast<double>(in));
        w = &ps.create_gaussian(name + ".w", {out, in}, rng, static_cast<T>(std));
        if (with_bias) {
            b = &ps.create(name + ".b", {out});
        } else {
            zero_bias = Tensor<T>({out});
            scratch_db = Tensor<T>({out});
        }
    }

    Tensor<T> forward(const Tensor<T>& x) {
        x_cache = x;
        return ops::linear(x, w->value, b ? b->value : zero_bias);
    }
    Tensor<T> backward(const Tensor<T>& dy) {
        if (!b) scratch_db.zero();
        return ops::linear_backward(dy, x_cache, w->value, w->grad, b ? b->grad : scratch_db);
    }
};

template <typename T>
struct Conv3dLayer {
    Param<T>* w = nullptr;
    Param<T>* b = nullptr;
    ops::ConvSpec cs;
    Tensor<T> col_cache;
    std::vector<int> x_shape;

    Conv3dLayer() = default;
    Conv3dLayer(ParamStore<T>& ps, const std::string& name, ops::ConvSpec spec, Rng& rng,
                bool zero_init = false)
        : cs(spec) {
        double std = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(cs.patch()));
        w = &ps.create_gaussian(name + ".w", {cs.out_c, cs.in_c, cs.k, cs.k, cs.k}, rng,
                                static_cast<T>(std));
        b = &ps.create(name + ".b", {cs.out_c});
    }

    Tensor<T> forward(const Tensor<T>& x) {
        x_shape = x.shape;
        return ops::conv3d(x, w->value, b->value, cs, col_cache);
    }
    Tensor<T> backward(const Tensor<T>& dy) {
        return ops::conv3d_backward(dy, x_shape, w->value, cs, col_cache, w->grad, b->grad);
    }
};

// Pre-activation residual block: out = skip(x) + conv2(silu(conv1(silu(x)))).
template <typename T>
struct ResBlock {
    Conv3dLayer<T> conv1, conv2, skip;
    bool has_skip = false;
    Tensor<T> x_cache, a1_cache, h1_cache, a2_cache;

    ResBlock() = default;
    ResBlock(ParamStore<T>& ps, const std::string& name, int in_c, int out_c, Rng& rng) {
        conv1 = Conv3dLayer<T>(ps, name + ".conv1", {in_c, out_c, 3, 1, 1}, rng);
        conv2 = Conv3dLayer<T>(ps, name + ".conv2", {out_c, out_c, 3, 1, 1}, rng);
        has_skip = in_c != out_c;
        if (has_skip) skip = Conv3dLayer<T>(ps, name + ".skip", {in_c, out_c, 1, 1, 0}, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        x_cache = x;
        a1_cache = ops::silu(x);
        h1_cache = conv1.forward(a1_cache);
        a2_cache = ops::silu(h1_cache);
        Tensor<T> h = conv2.forward(a2_cache);
        Tensor<T> s = has_skip ? skip.forward(x) : x;
        as_vector(h) += as_vector(s);
        return h;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> da2 = conv2.backward(dy);
        Tensor<T> dh1 = ops::silu_backward(da2, h1_cache);
        Tensor<T> da1 = conv1.backward(dh1);
        Tensor<T> dx = ops::silu_backward(da1, x_cache);
        if (has_skip) {
            Tensor<T> ds = skip.backward(dy);
            as_vector(dx) += as_vector(ds);
        } else {
            as_vector(dx) += as_vector(dy);
        }
        return dx;
    }
};

// Residual block modulated by an embedding vector: the embedding is projected
// to a per-channel (scale, shift) applied between the convolutions.
template <typename T>
struct ResBlockFiLM {
    Conv3dLayer<T> conv1, conv2, skip;
    LinearLayer<T> proj;
    bool has_skip = false;
    int out_c = 0;
    Tensor<T> x_cache, a1_cache, h1_cache, scale_cache, shift_cache, f_cache, a2_cache;

    ResBlockFiLM() = default;
    ResBlockFiLM(ParamStore<T>& ps, const std::string& name, int in_c, int out_c_, int emb_dim,
                 Rng& rng)
        : out_c(out_c_) {
        conv1 = Conv3dLayer<T>(ps, name + ".conv1", {in_c, out_c, 3, 1, 1}, rng);
        conv2 = Conv3dLayer<T>(ps, name + ".conv2", {out_c, out_c, 3, 1, 1}, rng);
        proj = LinearLayer<T>(ps, name + ".proj", emb_dim, 2 * out_c, rng);
        has_skip = in_c != out_c;
        if (has_skip) skip = Conv3dLayer<T>(ps, name + ".skip", {in_c, out_c, 1, 1, 0}, rng);
    }

    // emb is [1, emb_dim]; returns output, accumulates demb into demb_out.
    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& emb) {
        x_cache = x;
        a1_cache = ops::silu(x);
        h1_cache = conv1.forward(a1_cache);

        Tensor<T> st = proj.forward(emb);  // [1, 2*out_c]
        scale_cache = Tensor<T>({out_c});
        shift_cache = Tensor<T>({out_c});
        std::copy(st.data.begin(), st.data.begin() + out_c, scale_cache.data.begin());
        std::copy(st.data.begin() + out_c, st.data.end(), shift_cache.data.begin());

        f_cache = ops::film_channels(h1_cache, scale_cache, shift_cache);
        a2_cache = ops::silu(f_cache);
        Tensor<T> h = conv2.forward(a2_cache);
        Tensor<T> s = has_skip ? skip.forward(x) : x;
        as_vector(h) += as_vector(s);
        return h;
    }

    Tensor<T> backward(const Tensor<T>& dy, Tensor<T>& demb) {
        Tensor<T> da2 = conv2.backward(dy);
        Tensor<T> df = ops::silu_backward(da2, f_cache);
        Tensor<T> dscale({out_c}), dshift({out_c});
        Tensor<T> dh1 = ops::film_channels_backward(df, h1_cache, scale_cache, dscale, dshift);

        Tensor<T> dst({1, 2 * out_c});
        std::copy(dscale.data.begin(), dscale.data.end(), dst.data.begin());
        std::copy(dshift.data.begin(), dshift.data.end(), dst.data.begin() + out_c);
        Tensor<T> de = proj.backward(dst);
        as_vector(demb) += as_vector(de);

        Tensor<T> da1 = conv1.backward(dh1);
        Tensor<T> dx = ops::silu_backward(da1, x_cache);
        if (has_skip) {
            Tensor<T> ds = skip.backward(dy);
            as_vector(dx) += as_vector(ds);
        } else {
            as_vector(dx) += as_vector(dy);
        }
        return dx;
    }
};

// Single-head self-attention over the voxels of a [C, D, H, W] feature map,
// with a residual connection. The output projection starts at zero so the
// block is the identity at initialization.
template <typename T>
struct Attention {
    LinearLayer<T> wq, wk, wv, wo;
    int channels = 0;
    Tensor<T> tokens_cache, q_cache, k_cache, v_cache, a_cache, h_cache;

    Attention() = default;
    Attention(ParamStore<T>& ps, const std::string& name, int channels_, Rng& rng)
        : channels(channels_) {
        wq = LinearLayer<T>(ps, name + ".wq", channels, channels, rng, -1.0, false);
        wk = LinearLayer<T>(ps, name + ".wk", channels, channels, rng, -1.0, false);
        wv = LinearLayer<T>(ps, name + ".wv", channels, channels, rng, -1.0, false);
        wo = LinearLayer<T>(ps, name + ".wo", channels, channels, rng, 0.0);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        const int c = x.shape[0];
        const int p = static_cast<int>(x.numel() / c);
        tokens_cache = Tensor<T>({p, c});
        as_matrix(tokens_cache, p, c) = as_matrix(x, c, p).transpose();

        q_cache = wq.forward(tokens_cache);
        k_cache = wk.forward(tokens_cache);
        v_cache = wv.forward(tokens_cache);

        Tensor<T> scores({p, p});
        const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(c));
        as_matrix(scores, p, p).noalias() =
            as_matrix(q_cache, p, c) * as_matrix(k_cache, p, c).transpose() * inv_sqrt;
        a_cache = ops::softmax_rows(scores);

        h_cache = Tensor<T>({p, c});
        as_matrix(h_cache, p, c).noalias() = as_matrix(a_cache, p, p) * as_matrix(v_cache, p, c);
        Tensor<T> out_tokens = wo.forward(h_cache);
        as_vector(out_tokens) += as_vector(tokens_cache);

        Tensor<T> y = x;
        as_matrix(y, c, p) = as_matrix(out_tokens, p, c).transpose();
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const int c = dy.shape[0];
        const int p = static_cast<int>(dy.numel() / c);
        Tensor<T> dtok({p, c});
        as_matrix(dtok, p, c) = as_matrix(dy, c, p).transpose();

        Tensor<T> dh = wo.backward(dtok);
        Tensor<T> da({p, p});
        as_matrix(da, p, p).noalias() =
            as_matrix(dh, p, c) * as_matrix(v_cache, p, c).transpose();
        Tensor<T> dv({p, c});
        as_matrix(dv, p, c).noalias() =
            as_matrix(a_cache, p, p).transpose() * as_matrix(dh, p, c);

        Tensor<T> dscores = ops::softmax_rows_backward(da, a_cache);
        const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(c));
        Tensor<T> dq({p, c}), dk({p, c});
        as_matrix(dq, p, c).noalias() =
            as_matrix(dscores, p, p) * as_matrix(k_cache, p, c) * inv_sqrt;
        as_matrix(dk, p, c).noalias() =
            as_matrix(dscores, p, p).transpose() * as_matrix(q_cache, p, c) * inv_sqrt;

        Tensor<T> dtok_total = wq.backward(dq);
        as_vector(dtok_total) += as_vector(wk.backward(dk));
        as_vector(dtok_total) += as_vector(wv.backward(dv));
        as_vector(dtok_total) += as_vector(dtok);  // residual path

        Tensor<T> dx = dy;
        as_matrix(dx, c, p) = as_matrix(dtok_total, p, c).transpose();
        return dx;
    }
};

// Lookup table with gradient accumulation into the selected row.
template <typename T>
struct EmbeddingTable {
    Param<T>* table = nullptr;
    int rows = 0, dim = 0;
    int row_cache = -1;

    EmbeddingTable() = default;
    EmbeddingTable(ParamStore<T>& ps, const std::string& name, int rows_, int dim_, Rng& rng)
        : rows(rows_), dim(dim_) {
        table = &ps.create_gaussian(name + ".table", {rows, dim}, rng, T(1) / std::sqrt(T(dim_)));
    }

    Tensor<T> forward(int row) {
        if (row < 0 || row >= rows) throw ConfigError("embedding row out of range");
        row_cache = row;
        Tensor<T> out({1, dim});
        std::copy(table->value.data.begin() + static_cast<std::size_t>(row) * dim,
                  table->value.data.begin() + static_cast<std::size_t>(row + 1) * dim,
                  out.data.begin());
        return out;
    }
    void backward(const Tensor<T>& dy) {
        for (int i = 0; i < dim; ++i)
            table->grad.data[static_cast<std::size_t>(row_cache) * dim + i] += dy.data[i];
    }
};

}  // namespace fieldgen
