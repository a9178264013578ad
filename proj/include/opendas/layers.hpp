#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "tensor.hpp"

namespace opendas {

// Forward passes keep whatever the backward pass needs in a cache struct.
// Backward passes return the gradient with respect to the layer input only:
// backbone weights are frozen and never receive gradients.

template <typename T>
struct LayerNormCache {
    Matrix<T> xhat;
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
};

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const RowVector<T>& gamma, const RowVector<T>& beta,
                     LayerNormCache<T>* cache, T eps = T(1e-5)) {
    const auto n = x.rows();
    const auto d = x.cols();
    Matrix<T> xhat(n, d);
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        T mean = x.row(r).mean();
        auto centered = (x.row(r).array() - mean).matrix();
        T var = centered.squaredNorm() / static_cast<T>(d);
        T is = T(1) / std::sqrt(var + eps);
        inv_std(r) = is;
        xhat.row(r) = centered * is;
    }
    Matrix<T> y = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const RowVector<T>& gamma, const LayerNormCache<T>& c) {
    const auto d = static_cast<T>(dy.cols());
    Matrix<T> dxhat = dy.array().rowwise() * gamma.array();
    Matrix<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        T mean_d = dxhat.row(r).sum() / d;
        T mean_dx = dxhat.row(r).dot(c.xhat.row(r)) / d;
        dx.row(r) = c.inv_std(r) * (dxhat.row(r).array() - mean_d - c.xhat.row(r).array() * mean_dx).matrix();
    }
    return dx;
}

// x * sigmoid(1.702 x)
template <typename T>
T quick_gelu(T x) {
    return x / (T(1) + std::exp(T(-1.702) * x));
}

template <typename T>
T quick_gelu_grad(T x) {
    T s = T(1) / (T(1) + std::exp(T(-1.702) * x));
    return s + T(1.702) * x * s * (T(1) - s);
}

template <typename T>
struct BlockWeights {
    RowVector<T> ln1_gamma, ln1_beta;
    Matrix<T> wq, wk, wv, wo;
    RowVector<T> bq, bk, bv, bo;
    RowVector<T> ln2_gamma, ln2_beta;
    Matrix<T> w1, w2;
    RowVector<T> b1, b2;

    static BlockWeights random(int width, std::mt19937_64& rng) {
        BlockWeights b;
        const double s = 1.0 / std::sqrt(static_cast<double>(width));
        const int hidden = 4 * width;
        b.ln1_gamma = RowVector<T>::Ones(width);
        b.ln1_beta = RowVector<T>::Zero(width);
        b.ln2_gamma = RowVector<T>::Ones(width);
        b.ln2_beta = RowVector<T>::Zero(width);
        for (Matrix<T>* m : {&b.wq, &b.wk, &b.wv, &b.wo}) {
            m->resize(width, width);
            fill_normal(*m, rng, s);
        }
        for (RowVector<T>* v : {&b.bq, &b.bk, &b.bv, &b.bo}) *v = RowVector<T>::Zero(width);
        b.w1.resize(width, hidden);
        fill_normal(b.w1, rng, s);
        b.w2.resize(hidden, width);
        fill_normal(b.w2, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
        b.b1 = RowVector<T>::Zero(hidden);
        b.b2 = RowVector<T>::Zero(width);
        return b;
    }

    // Visits every tensor with a stable name, for checkpoints and checksums.
    template <typename F>
    void visit(F&& f) {
        f("ln1.gamma", ln1_gamma), f("ln1.beta", ln1_beta);
        f("attn.wq", wq), f("attn.wk", wk), f("attn.wv", wv), f("attn.wo", wo);
        f("attn.bq", bq), f("attn.bk", bk), f("attn.bv", bv), f("attn.bo", bo);
        f("ln2.gamma", ln2_gamma), f("ln2.beta", ln2_beta);
        f("mlp.w1", w1), f("mlp.b1", b1), f("mlp.w2", w2), f("mlp.b2", b2);
    }
    template <typename F>
    void visit(F&& f) const {
        const_cast<BlockWeights*>(this)->visit([&](const char* n, const auto& t) { f(n, t); });
    }
};

template <typename T>
struct BlockCache {
    LayerNormCache<T> ln1, ln2;
    Matrix<T> xn1, q, k, v;
    std::vector<Matrix<T>> attn; // per head, S x S softmax weights
    Matrix<T> heads_out;         // concatenated head outputs before wo
    Matrix<T> xn2, hidden_pre;
};

/// Pre-norm transformer block with bidirectional multi-head attention:
/// x + attn(ln1(x)), then + mlp(ln2(.)).
template <typename T>
Matrix<T> block_forward(const Matrix<T>& x, const BlockWeights<T>& w, int heads, BlockCache<T>* cache) {
    const auto seq = x.rows();
    const auto width = x.cols();
    const auto dh = width / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    BlockCache<T> local;
    BlockCache<T>& c = cache ? *cache : local;

    c.xn1 = layer_norm(x, w.ln1_gamma, w.ln1_beta, &c.ln1);
    c.q = (c.xn1 * w.wq).rowwise() + w.bq;
    c.k = (c.xn1 * w.wk).rowwise() + w.bk;
    c.v = (c.xn1 * w.wv).rowwise() + w.bv;
    c.heads_out.resize(seq, width);
    c.attn.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        auto qh = c.q.middleCols(h * dh, dh);
        auto kh = c.k.middleCols(h * dh, dh);
        auto vh = c.v.middleCols(h * dh, dh);
        Matrix<T> s = (qh * kh.transpose()) * scale;
        for (Eigen::Index r = 0; r < seq; ++r) {
            T mx = s.row(r).maxCoeff();
            s.row(r) = (s.row(r).array() - mx).exp().matrix();
            s.row(r) /= s.row(r).sum();
        }
        c.heads_out.middleCols(h * dh, dh) = s * vh;
        c.attn[static_cast<std::size_t>(h)] = std::move(s);
    }
    Matrix<T> x_mid = x + ((c.heads_out * w.wo).rowwise() + w.bo);

    c.xn2 = layer_norm(x_mid, w.ln2_gamma, w.ln2_beta, &c.ln2);
    c.hidden_pre = (c.xn2 * w.w1).rowwise() + w.b1;
    Matrix<T> act = c.hidden_pre.unaryExpr([](T a) { return quick_gelu(a); });
    return x_mid + ((act * w.w2).rowwise() + w.b2);
}

template <typename T>
Matrix<T> block_backward(const Matrix<T>& dy, const BlockWeights<T>& w, int heads, const BlockCache<T>& c) {
    const auto seq = dy.rows();
    const auto width = dy.cols();
    const auto dh = width / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    // MLP branch
    Matrix<T> dact = dy * w.w2.transpose();
    Matrix<T> dpre = dact.array() * c.hidden_pre.unaryExpr([](T a) { return quick_gelu_grad(a); }).array();
    Matrix<T> dx_mid = dy + layer_norm_backward<T>(dpre * w.w1.transpose(), w.ln2_gamma, c.ln2);

    // attention branch
    Matrix<T> dheads = dx_mid * w.wo.transpose();
    Matrix<T> dq(seq, width), dk(seq, width), dv(seq, width);
    for (int h = 0; h < heads; ++h) {
        const Matrix<T>& a = c.attn[static_cast<std::size_t>(h)];
        auto qh = c.q.middleCols(h * dh, dh);
        auto kh = c.k.middleCols(h * dh, dh);
        auto vh = c.v.middleCols(h * dh, dh);
        auto doh = dheads.middleCols(h * dh, dh);
        Matrix<T> da = doh * vh.transpose();
        dv.middleCols(h * dh, dh) = a.transpose() * doh;
        Matrix<T> ds(seq, seq);
        for (Eigen::Index r = 0; r < seq; ++r) {
            T dot = da.row(r).dot(a.row(r));
            ds.row(r) = (a.row(r).array() * (da.row(r).array() - dot)).matrix();
        }
        ds *= scale;
        dq.middleCols(h * dh, dh) = ds * kh;
        dk.middleCols(h * dh, dh) = ds.transpose() * qh;
    }
    Matrix<T> dxn1 = dq * w.wq.transpose() + dk * w.wk.transpose() + dv * w.wv.transpose();
    return dx_mid + layer_norm_backward<T>(dxn1, w.ln1_gamma, c.ln1);
}

} // namespace opendas
