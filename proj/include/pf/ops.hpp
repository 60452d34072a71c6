#pragma once

#include <vector>

#include "pf/tensor.hpp"

// Differentiable primitives. All ops validate shapes, build the autograd
// graph when any input requires grad, and reject non-finite outputs.

namespace pf {

// c[m x n] = a[m x k] . b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// c[m x n] = a[m x k] . b[n x k]^T  (weights stored row-major [out x in])
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// y[n x out] = x[n x in] . W[out x in]^T + b[out]; pass undefined b to skip.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Cross-correlation (no kernel flip). x[C x H x W], w[Co x C x kh x kw],
// odd kernel dims, optional bias[Co]. Output [Co x H' x W'] with
// H' = (H + 2 pad - kh)/stride + 1, which must be integral.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding);

// softmax(q k^T / sqrt(d)) v with q[n x d], k[m x d], v[m x h].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

Tensor softmax(const Tensor& x, int axis);
Tensor silu(const Tensor& x);

// Normalizes each of `groups` channel groups of x[C x H x W] to mean 0 /
// var 1, then applies per-channel gamma/beta.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta);

// rows of `table` gathered by id; gradient scatter-adds into the table.
Tensor embed(const std::vector<int>& ids, const Tensor& table);

Tensor mse(const Tensor& a, const Tensor& b);
Tensor cosine_sim(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// x[C x H x W] + bias[C] broadcast over the spatial plane.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor upsample_nearest2(const Tensor& x);
Tensor avgpool2(const Tensor& x);

// [C x H x W] <-> [HW x C] (row r = spatial position, column = channel).
Tensor chw_to_rows(const Tensor& x);
Tensor rows_to_chw(const Tensor& x, int h, int w);

Tensor reshape(const Tensor& x, std::vector<int> new_shape);

Tensor transpose2d(const Tensor& x);

// Each row scaled to unit L2 norm; zero-norm rows are a numeric error.
Tensor row_normalize(const Tensor& x);

// mean over rows of (logsumexp(row) - row[i][i]) for square logits: the
// cross-entropy against diagonal targets used by the contrastive loss.
Tensor diagonal_nll(const Tensor& logits);

// Stacks N tensors of shape [1 x d] into [N x d].
Tensor stack_rows(const std::vector<Tensor>& rows);

// x scaled by a single-element tensor; gradients reach both operands.
Tensor scale_scalar(const Tensor& x, const Tensor& s);

}  // namespace pf
