// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "flextraj/tensor.hpp"

namespace flextraj {

/// Multi-head attention softmax(Q K^T / sqrt(d_head) + M) V, computed per head on
/// column slices. `mask` may be null (all zeros). Row-wise probabilities are
/// written to `probs` (one matrix per head) when requested for backprop.
template <typename T>
Mat<T> masked_attention(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, const Mat<T>* mask, int heads,
                        std::vector<Mat<T>>* probs = nullptr) {
    const auto n_q = q.rows();
    const auto n_k = k.rows();
    const auto width = q.cols();
    if (heads < 1 || width % heads != 0 || k.cols() != width || v.cols() != width || v.rows() != n_k) {
        throw Error(ErrorKind::shape, "masked_attention: inconsistent shapes");
    }
    if (mask && (mask->rows() != n_q || mask->cols() != n_k)) throw Error(ErrorKind::shape, "mask shape mismatch");
    const auto dh = width / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Mat<T> out(n_q, width);
    if (probs) probs->assign(static_cast<std::size_t>(heads), Mat<T>());
    Mat<T> s;
    for (int h = 0; h < heads; ++h) {
        s.noalias() = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
        if (mask) s += *mask;
        for (Eigen::Index i = 0; i < n_q; ++i) {
            auto row = s.row(i);
            const T mx = row.maxCoeff();
            if (!std::isfinite(mx)) {
                row.setZero();
                continue;
            }
            row = (row.array() - mx).exp();
            row /= row.sum();
        }
        out.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
        if (probs) (*probs)[static_cast<std::size_t>(h)] = s;
    }
    return out;
}

/// Gradients of masked_attention given upstream d_out and the saved probabilities.
template <typename T>
void masked_attention_backward(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, const std::vector<Mat<T>>& probs,
                               const Mat<T>& d_out, int heads, Mat<T>& dq, Mat<T>& dk, Mat<T>& dv) {
    const auto width = q.cols();
    const auto dh = width / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    dq.setZero(q.rows(), width);
    dk.setZero(k.rows(), width);
    dv.setZero(v.rows(), width);
    Mat<T> dp, ds;
    for (int h = 0; h < heads; ++h) {
        const auto& p = probs[static_cast<std::size_t>(h)];
        auto d_o = d_out.middleCols(h * dh, dh);
        dv.middleCols(h * dh, dh).noalias() = p.transpose() * d_o;
        dp.noalias() = d_o * v.middleCols(h * dh, dh).transpose();
        const Eigen::Array<T, Eigen::Dynamic, 1> rowdot = (dp.array() * p.array()).rowwise().sum();
        ds = (p.array() * (dp.array().colwise() - rowdot)).matrix() * scale;
        dq.middleCols(h * dh, dh).noalias() = ds * k.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh).noalias() = ds.transpose() * q.middleCols(h * dh, dh);
    }
}

}  // namespace flextraj
