#include "pf/ops.hpp"

#include <cmath>
#include <cstring>
#include <memory>
#include <utility>

#include "pf/error.hpp"
#include "pf/kernels.hpp"

namespace pf {

namespace {

// Builds the result node. backward_fn is only attached when some input
// requires grad, so inference graphs carry no closures.
Tensor make_op(std::vector<int> shape, std::vector<float> values,
               std::vector<NodePtr> parents, std::function<void(TensorData&)> backward_fn,
               const char* op_name) {
    bool rg = false;
    if (NoGradGuard::grad_enabled()) {
        for (const auto& p : parents) rg = rg || p->requires_grad;
    }
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->data = std::move(values);
    d->requires_grad = rg;
    if (rg) {
        d->parents = std::move(parents);
        d->backward_fn = std::move(backward_fn);
    }
    Tensor t = Tensor::wrap(std::move(d));
    check_finite(t, op_name);
    return t;
}

void require_2d(const Tensor& t, const char* op, const char* role) {
    if (t.ndim() != 2)
        throw DimensionError(std::string(op) + ": " + role + " must be 2-D, got " +
                             shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul", "lhs");
    require_2d(b, "matmul", "rhs");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                             " . " + shape_str(b.shape()));
    std::vector<float> out(static_cast<std::size_t>(m) * n);
    kern::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data(), false);

    NodePtr pa = a.handle(), pb = b.handle();
    return make_op(
        {m, n}, std::move(out), {pa, pb},
        [pa, pb, m, n, k](TensorData& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                kern::gemm_nt(m, k, n, self.grad.data(), pb->data.data(), pa->grad.data(), true);
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                kern::gemm_tn(k, n, m, pa->data.data(), self.grad.data(), pb->grad.data(), true);
            }
        },
        "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_nt", "lhs");
    require_2d(b, "matmul_nt", "rhs");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                             " . " + shape_str(b.shape()) + "^T");
    std::vector<float> out(static_cast<std::size_t>(m) * n);
    kern::gemm_nt(m, n, k, a.data().data(), b.data().data(), out.data(), false);

    NodePtr pa = a.handle(), pb = b.handle();
    return make_op(
        {m, n}, std::move(out), {pa, pb},
        [pa, pb, m, n, k](TensorData& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                kern::gemm_nn(m, k, n, self.grad.data(), pb->data.data(), pa->grad.data(), true);
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                kern::gemm_tn(n, k, m, self.grad.data(), pa->data.data(), pb->grad.data(), true);
            }
        },
        "matmul_nt");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_2d(x, "linear", "input");
    require_2d(w, "linear", "weight");
    const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    if (w.dim(1) != in)
        throw DimensionError("linear: weight " + shape_str(w.shape()) + " does not accept input " +
                             shape_str(x.shape()));
    const bool has_bias = b.defined();
    if (has_bias && b.size() != static_cast<std::size_t>(out_dim))
        throw DimensionError("linear: bias size " + std::to_string(b.size()) + " != " +
                             std::to_string(out_dim));

    std::vector<float> out(static_cast<std::size_t>(n) * out_dim);
    kern::gemm_nt(n, out_dim, in, x.data().data(), w.data().data(), out.data(), false);
    if (has_bias) {
        for (int r = 0; r < n; ++r)
            kern::add(out_dim, out.data() + static_cast<std::size_t>(r) * out_dim,
                      b.data().data(), out.data() + static_cast<std::size_t>(r) * out_dim);
    }

    std::vector<NodePtr> parents = {x.handle(), w.handle()};
    if (has_bias) parents.push_back(b.handle());
    NodePtr px = x.handle(), pw = w.handle();
    NodePtr pb = has_bias ? b.handle() : nullptr;
    return make_op(
        {n, out_dim}, std::move(out), std::move(parents),
        [px, pw, pb, n, in, out_dim](TensorData& self) {
            if (px->requires_grad) {
                px->ensure_grad();
                kern::gemm_nn(n, in, out_dim, self.grad.data(), pw->data.data(), px->grad.data(),
                              true);
            }
            if (pw->requires_grad) {
                pw->ensure_grad();
                kern::gemm_tn(out_dim, in, n, self.grad.data(), px->data.data(), pw->grad.data(),
                              true);
            }
            if (pb && pb->requires_grad) {
                pb->ensure_grad();
                for (int r = 0; r < n; ++r)
                    kern::add(out_dim, pb->grad.data(),
                              self.grad.data() + static_cast<std::size_t>(r) * out_dim,
                              pb->grad.data());
            }
        },
        "linear");
}

namespace {

struct ConvDims {
    int c, h, w, co, kh, kw, stride, pad, ho, wo;
    std::size_t ckk() const { return static_cast<std::size_t>(c) * kh * kw; }
    std::size_t spatial_out() const { return static_cast<std::size_t>(ho) * wo; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int padding) {
    if (x.ndim() != 3) throw DimensionError("conv2d: input must be CxHxW, got " + shape_str(x.shape()));
    if (w.ndim() != 4)
        throw DimensionError("conv2d: weight must be CoxCxKhxKw, got " + shape_str(w.shape()));
    ConvDims d{};
    d.c = x.dim(0);
    d.h = x.dim(1);
    d.w = x.dim(2);
    d.co = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = stride;
    d.pad = padding;
    if (w.dim(1) != d.c)
        throw DimensionError("conv2d: weight expects " + std::to_string(w.dim(1)) +
                             " input channels, input has " + std::to_string(d.c));
    if (d.kh % 2 == 0 || d.kw % 2 == 0) throw DimensionError("conv2d: kernel dims must be odd");
    if (stride < 1 || padding < 0) throw ConfigError("conv2d: bad stride/padding");
    const int hn = d.h + 2 * padding - d.kh;
    const int wn = d.w + 2 * padding - d.kw;
    if (hn < 0 || wn < 0 || hn % stride != 0 || wn % stride != 0)
        throw DimensionError("conv2d: non-integral output size for input " + shape_str(x.shape()) +
                             ", kernel " + shape_str(w.shape()) + ", stride " +
                             std::to_string(stride) + ", pad " + std::to_string(padding));
    d.ho = hn / stride + 1;
    d.wo = wn / stride + 1;
    return d;
}

void im2col(const ConvDims& d, const float* x, float* col) {
    // col[(c*kh+ki)*kw+kj][oy*wo+ox]
    const std::size_t so = d.spatial_out();
    for (int c = 0; c < d.c; ++c) {
        const float* xc = x + static_cast<std::size_t>(c) * d.h * d.w;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                float* row = col + ((static_cast<std::size_t>(c) * d.kh + ki) * d.kw + kj) * so;
                std::size_t q = 0;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.stride - d.pad + ki;
                    for (int ox = 0; ox < d.wo; ++ox, ++q) {
                        const int ix = ox * d.stride - d.pad + kj;
                        row[q] = (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                                     ? xc[static_cast<std::size_t>(iy) * d.w + ix]
                                     : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im_add(const ConvDims& d, const float* col, float* dx) {
    const std::size_t so = d.spatial_out();
    for (int c = 0; c < d.c; ++c) {
        float* xc = dx + static_cast<std::size_t>(c) * d.h * d.w;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                const float* row = col + ((static_cast<std::size_t>(c) * d.kh + ki) * d.kw + kj) * so;
                std::size_t q = 0;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.stride - d.pad + ki;
                    for (int ox = 0; ox < d.wo; ++ox, ++q) {
                        const int ix = ox * d.stride - d.pad + kj;
                        if (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                            xc[static_cast<std::size_t>(iy) * d.w + ix] += row[q];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
    const ConvDims d = conv_dims(x, w, stride, padding);
    if (bias.defined() && bias.size() != static_cast<std::size_t>(d.co))
        throw DimensionError("conv2d: bias size " + std::to_string(bias.size()) + " != " +
                             std::to_string(d.co));

    const std::size_t so = d.spatial_out();
    auto col = std::make_shared<std::vector<float>>(d.ckk() * so);
    im2col(d, x.data().data(), col->data());

    std::vector<float> out(static_cast<std::size_t>(d.co) * so);
    kern::gemm_nn(d.co, static_cast<int>(so), static_cast<int>(d.ckk()), w.data().data(),
                  col->data(), out.data(), false);
    if (bias.defined()) {
        for (int c = 0; c < d.co; ++c) {
            float* oc = out.data() + static_cast<std::size_t>(c) * so;
            const float bc = bias.data()[static_cast<std::size_t>(c)];
            for (std::size_t i = 0; i < so; ++i) oc[i] += bc;
        }
    }

    std::vector<NodePtr> parents = {x.handle(), w.handle()};
    if (bias.defined()) parents.push_back(bias.handle());
    NodePtr px = x.handle(), pw = w.handle();
    NodePtr pb = bias.defined() ? bias.handle() : nullptr;
    return make_op(
        {d.co, d.ho, d.wo}, std::move(out), std::move(parents),
        [px, pw, pb, d, col](TensorData& self) {
            const std::size_t so = d.spatial_out();
            if (pw->requires_grad) {
                pw->ensure_grad();
                kern::gemm_nt(d.co, static_cast<int>(d.ckk()), static_cast<int>(so),
                              self.grad.data(), col->data(), pw->grad.data(), true);
            }
            if (px->requires_grad) {
                px->ensure_grad();
                std::vector<float> dcol(d.ckk() * so);
                kern::gemm_tn(static_cast<int>(d.ckk()), static_cast<int>(so), d.co,
                              pw->data.data(), self.grad.data(), dcol.data(), false);
                col2im_add(d, dcol.data(), px->grad.data());
            }
            if (pb && pb->requires_grad) {
                pb->ensure_grad();
                for (int c = 0; c < d.co; ++c)
                    pb->grad[static_cast<std::size_t>(c)] +=
                        kern::sum(so, self.grad.data() + static_cast<std::size_t>(c) * so);
            }
        },
        "conv2d");
}

Tensor softmax(const Tensor& x, int axis) {
    const int nd = x.ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd)
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(x.shape()));
    std::size_t outer = 1, inner = 1;
    const int len = x.dim(axis);
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.dim(i));
    for (int i = axis + 1; i < nd; ++i) inner *= static_cast<std::size_t>(x.dim(i));

    std::vector<float> out(x.size());
    const float* in = x.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * static_cast<std::size_t>(len) * inner + i;
            float mx = in[base];
            for (int j = 1; j < len; ++j)
                mx = std::max(mx, in[base + static_cast<std::size_t>(j) * inner]);
            double denom = 0.0;
            for (int j = 0; j < len; ++j) {
                const float e = std::exp(in[base + static_cast<std::size_t>(j) * inner] - mx);
                out[base + static_cast<std::size_t>(j) * inner] = e;
                denom += e;
            }
            const float inv = static_cast<float>(1.0 / denom);
            for (int j = 0; j < len; ++j) out[base + static_cast<std::size_t>(j) * inner] *= inv;
        }
    }

    NodePtr px = x.handle();
    return make_op(
        x.shape(), std::move(out), {px},
        [px, outer, inner, len](TensorData& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            const float* y = self.data.data();
            const float* dy = self.grad.data();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t base = o * static_cast<std::size_t>(len) * inner + i;
                    double dot = 0.0;
                    for (int j = 0; j < len; ++j) {
                        const std::size_t idx = base + static_cast<std::size_t>(j) * inner;
                        dot += static_cast<double>(dy[idx]) * y[idx];
                    }
                    for (int j = 0; j < len; ++j) {
                        const std::size_t idx = base + static_cast<std::size_t>(j) * inner;
                        px->grad[idx] += (dy[idx] - static_cast<float>(dot)) * y[idx];
                    }
                }
            }
        },
        "softmax");
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    require_2d(q, "attention", "q");
    require_2d(k, "attention", "k");
    require_2d(v, "attention", "v");
    const int n = q.dim(0), d = q.dim(1), m = k.dim(0);
    if (n < 1 || m < 1) throw DimensionError("attention: zero-length sequence");
    if (d < 1 || k.dim(1) != d)
        throw DimensionError("attention: q/k width mismatch " + shape_str(q.shape()) + " vs " +
                             shape_str(k.shape()));
    if (v.dim(0) != m)
        throw DimensionError("attention: k/v row mismatch " + shape_str(k.shape()) + " vs " +
                             shape_str(v.shape()));
    Tensor scores = scale(matmul_nt(q, k), 1.0f / std::sqrt(static_cast<float>(d)));
    Tensor weights = softmax(scores, 1);
    return matmul(weights, v);
}

Tensor silu(const Tensor& x) {
    std::vector<float> out(x.size());
    kern::silu(x.size(), x.data().data(), out.data());
    NodePtr px = x.handle();
    return make_op(
        x.shape(), std::move(out), {px},
        [px](TensorData& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            kern::silu_backward(self.data.size(), px->data.data(), self.grad.data(),
                                px->grad.data());
        },
        "silu");
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta) {
    if (x.ndim() != 3)
        throw DimensionError("group_norm: input must be CxHxW, got " + shape_str(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (groups < 1 || c % groups != 0)
        throw ConfigError("group_norm: groups " + std::to_string(groups) +
                          " must divide channels " + std::to_string(c));
    if (gamma.size() != static_cast<std::size_t>(c) || beta.size() != static_cast<std::size_t>(c))
        throw DimensionError("group_norm: gamma/beta must have one entry per channel");

    constexpr double kEps = 1e-5;
    const int cs = c / groups;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t gsize = static_cast<std::size_t>(cs) * plane;

    auto xhat = std::make_shared<std::vector<float>>(x.size());
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<std::size_t>(groups));
    std::vector<float> out(x.size());
    const float* in = x.data().data();
    for (int g = 0; g < groups; ++g) {
        const std::size_t base = static_cast<std::size_t>(g) * gsize;
        double s = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < gsize; ++i) s += in[base + i];
        const double mu = s / static_cast<double>(gsize);
        for (std::size_t i = 0; i < gsize; ++i) {
            const double dv = in[base + i] - mu;
            s2 += dv * dv;
        }
        const double var = s2 / static_cast<double>(gsize);
        const float istd = static_cast<float>(1.0 / std::sqrt(var + kEps));
        (*inv_std)[static_cast<std::size_t>(g)] = istd;
        for (std::size_t i = 0; i < gsize; ++i)
            (*xhat)[base + i] = static_cast<float>((in[base + i] - mu)) * istd;
    }
    for (int ch = 0; ch < c; ++ch) {
        const float gc = gamma.data()[static_cast<std::size_t>(ch)];
        const float bc = beta.data()[static_cast<std::size_t>(ch)];
        const std::size_t base = static_cast<std::size_t>(ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) out[base + i] = gc * (*xhat)[base + i] + bc;
    }

    NodePtr px = x.handle(), pg = gamma.handle(), pb = beta.handle();
    return make_op(
        x.shape(), std::move(out), {px, pg, pb},
        [px, pg, pb, xhat, inv_std, groups, c, cs, plane, gsize](TensorData& self) {
            const float* dy = self.grad.data();
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t base = static_cast<std::size_t>(ch) * plane;
                if (pg->requires_grad) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < plane; ++i)
                        s += static_cast<double>(dy[base + i]) * (*xhat)[base + i];
                    pg->grad[static_cast<std::size_t>(ch)] += static_cast<float>(s);
                }
                if (pb->requires_grad) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) s += dy[base + i];
                    pb->grad[static_cast<std::size_t>(ch)] += static_cast<float>(s);
                }
            }
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (int g = 0; g < groups; ++g) {
                const std::size_t base = static_cast<std::size_t>(g) * gsize;
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t i = 0; i < gsize; ++i) {
                    const int ch = g * cs + static_cast<int>(i / plane);
                    const double dxh = static_cast<double>(dy[base + i]) *
                                       pg->data[static_cast<std::size_t>(ch)];
                    m1 += dxh;
                    m2 += dxh * (*xhat)[base + i];
                }
                m1 /= static_cast<double>(gsize);
                m2 /= static_cast<double>(gsize);
                const float istd = (*inv_std)[static_cast<std::size_t>(g)];
                for (std::size_t i = 0; i < gsize; ++i) {
                    const int ch = g * cs + static_cast<int>(i / plane);
                    const double dxh = static_cast<double>(dy[base + i]) *
                                       pg->data[static_cast<std::size_t>(ch)];
                    px->grad[base + i] += static_cast<float>(
                        istd * (dxh - m1 - (*xhat)[base + i] * m2));
                }
            }
        },
        "group_norm");
}

Tensor embed(const std::vector<int>& ids, const Tensor& table) {
    require_2d(table, "embed", "table");
    const int v = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw DimensionError("embed: empty id list");
    for (int id : ids) {
        if (id < 0 || id >= v)
            throw IndexError("embed: id " + std::to_string(id) + " outside table of " +
                             std::to_string(v));
    }
    const int l = static_cast<int>(ids.size());
    std::vector<float> out(static_cast<std::size_t>(l) * d);
    for (int i = 0; i < l; ++i)
        std::memcpy(out.data() + static_cast<std::size_t>(i) * d,
                    table.data().data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d,
                    sizeof(float) * static_cast<std::size_t>(d));

    NodePtr pt = table.handle();
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    return make_op(
        {l, d}, std::move(out), {pt},
        [pt, ids_copy, d](TensorData& self) {
            if (!pt->requires_grad) return;
            pt->ensure_grad();
            for (std::size_t i = 0; i < ids_copy->size(); ++i) {
                float* dst = pt->grad.data() +
                             static_cast<std::size_t>((*ids_copy)[i]) * static_cast<std::size_t>(d);
                kern::add(static_cast<std::size_t>(d), dst,
                          self.grad.data() + i * static_cast<std::size_t>(d), dst);
            }
        },
        "embed");
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    const std::size_t n = a.size();
    double acc = 0.0;
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        const double dv = static_cast<double>(pa[i]) - pb[i];
        acc += dv * dv;
    }
    const float val = static_cast<float>(acc / static_cast<double>(n));

    NodePtr ha = a.handle(), hb = b.handle();
    return make_op(
        {1}, {val}, {ha, hb},
        [ha, hb, n](TensorData& self) {
            const float f = self.grad[0] * 2.0f / static_cast<float>(n);
            if (ha->requires_grad) {
                ha->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    ha->grad[i] += f * (ha->data[i] - hb->data[i]);
            }
            if (hb->requires_grad) {
                hb->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    hb->grad[i] -= f * (ha->data[i] - hb->data[i]);
            }
        },
        "mse");
}

Tensor cosine_sim(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size())
        throw DimensionError("cosine_sim: size mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const std::size_t n = a.size();
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    double dp = 0.0, na2 = 0.0, nb2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dp += static_cast<double>(pa[i]) * pb[i];
        na2 += static_cast<double>(pa[i]) * pa[i];
        nb2 += static_cast<double>(pb[i]) * pb[i];
    }
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    if (na < 1e-12 || nb < 1e-12) throw NumericError("cosine_sim: zero-norm input");
    const double c = dp / (na * nb);

    NodePtr ha = a.handle(), hb = b.handle();
    return make_op(
        {1}, {static_cast<float>(c)}, {ha, hb},
        [ha, hb, n, na, nb, c](TensorData& self) {
            const double g = self.grad[0];
            if (ha->requires_grad) {
                ha->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    ha->grad[i] += static_cast<float>(
                        g * (hb->data[i] / (na * nb) - c * ha->data[i] / (na * na)));
            }
            if (hb->requires_grad) {
                hb->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    hb->grad[i] += static_cast<float>(
                        g * (ha->data[i] / (na * nb) - c * hb->data[i] / (nb * nb)));
            }
        },
        "cosine_sim");
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<float> out(a.size());
    kern::add(a.size(), a.data().data(), b.data().data(), out.data());
    NodePtr ha = a.handle(), hb = b.handle();
    return make_op(
        a.shape(), std::move(out), {ha, hb},
        [ha, hb](TensorData& self) {
            if (ha->requires_grad) {
                ha->ensure_grad();
                kern::add(self.grad.size(), ha->grad.data(), self.grad.data(), ha->grad.data());
            }
            if (hb->requires_grad) {
                hb->ensure_grad();
                kern::add(self.grad.size(), hb->grad.data(), self.grad.data(), hb->grad.data());
            }
        },
        "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<float> out(a.size());
    kern::sub(a.size(), a.data().data(), b.data().data(), out.data());
    NodePtr ha = a.handle(), hb = b.handle();
    return make_op(
        a.shape(), std::move(out), {ha, hb},
        [ha, hb](TensorData& self) {
            if (ha->requires_grad) {
                ha->ensure_grad();
                kern::add(self.grad.size(), ha->grad.data(), self.grad.data(), ha->grad.data());
            }
            if (hb->requires_grad) {
                hb->ensure_grad();
                kern::axpy(self.grad.size(), -1.0f, self.grad.data(), hb->grad.data());
            }
        },
        "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<float> out(a.size());
    kern::mul(a.size(), a.data().data(), b.data().data(), out.data());
    NodePtr ha = a.handle(), hb = b.handle();
    return make_op(
        a.shape(), std::move(out), {ha, hb},
        [ha, hb](TensorData& self) {
            const std::size_t n = self.grad.size();
            if (ha->requires_grad) {
                ha->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) ha->grad[i] += self.grad[i] * hb->data[i];
            }
            if (hb->requires_grad) {
                hb->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) hb->grad[i] += self.grad[i] * ha->data[i];
            }
        },
        "mul");
}

Tensor scale(const Tensor& a, float c) {
    std::vector<float> out(a.size());
    kern::scale(a.size(), c, a.data().data(), out.data());
    NodePtr ha = a.handle();
    return make_op(
        a.shape(), std::move(out), {ha},
        [ha, c](TensorData& self) {
            if (!ha->requires_grad) return;
            ha->ensure_grad();
            kern::axpy(self.grad.size(), c, self.grad.data(), ha->grad.data());
        },
        "scale");
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    NodePtr ha = a.handle();
    return make_op(
        {1}, {static_cast<float>(acc)}, {ha},
        [ha](TensorData& self) {
            if (!ha->requires_grad) return;
            ha->ensure_grad();
            const float g = self.grad[0];
            for (std::size_t i = 0; i < ha->grad.size(); ++i) ha->grad[i] += g;
        },
        "sum");
}

Tensor mean(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    const std::size_t n = a.size();
    NodePtr ha = a.handle();
    return make_op(
        {1}, {static_cast<float>(acc / static_cast<double>(n))}, {ha},
        [ha, n](TensorData& self) {
            if (!ha->requires_grad) return;
            ha->ensure_grad();
            const float g = self.grad[0] / static_cast<float>(n);
            for (std::size_t i = 0; i < ha->grad.size(); ++i) ha->grad[i] += g;
        },
        "mean");
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    if (x.ndim() != 3)
        throw DimensionError("add_channel_bias: input must be CxHxW, got " + shape_str(x.shape()));
    const int c = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    if (bias.size() != static_cast<std::size_t>(c))
        throw DimensionError("add_channel_bias: bias size " + std::to_string(bias.size()) +
                             " != channels " + std::to_string(c));
    std::vector<float> out(x.size());
    for (int ch = 0; ch < c; ++ch) {
        const std::size_t base = static_cast<std::size_t>(ch) * plane;
        const float bc = bias.data()[static_cast<std::size_t>(ch)];
        for (std::size_t i = 0; i < plane; ++i) out[base + i] = x.data()[base + i] + bc;
    }
    NodePtr hx = x.handle(), hb = bias.handle();
    return make_op(
        x.shape(), std::move(out), {hx, hb},
        [hx, hb, c, plane](TensorData& self) {
            if (hx->requires_grad) {
                hx->ensure_grad();
                kern::add(self.grad.size(), hx->grad.data(), self.grad.data(), hx->grad.data());
            }
            if (hb->requires_grad) {
                hb->ensure_grad();
                for (int ch = 0; ch < c; ++ch)
                    hb->grad[static_cast<std::size_t>(ch)] +=
                        kern::sum(plane, self.grad.data() + static_cast<std::size_t>(ch) * plane);
            }
        },
        "add_channel_bias");
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
        throw DimensionError("concat_channels: incompatible shapes " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    const std::size_t na = a.size(), nb = b.size();
    std::vector<float> out(na + nb);
    std::memcpy(out.data(), a.data().data(), na * sizeof(float));
    std::memcpy(out.data() + na, b.data().data(), nb * sizeof(float));
    NodePtr ha = a.handle(), hb = b.handle();
    return make_op(
        {a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(out), {ha, hb},
        [ha, hb, na, nb](TensorData& self) {
            if (ha->requires_grad) {
                ha->ensure_grad();
                kern::add(na, ha->grad.data(), self.grad.data(), ha->grad.data());
            }
            if (hb->requires_grad) {
                hb->ensure_grad();
                kern::add(nb, hb->grad.data(), self.grad.data() + na, hb->grad.data());
            }
        },
        "concat_channels");
}

Tensor upsample_nearest2(const Tensor& x) {
    if (x.ndim() != 3)
        throw DimensionError("upsample_nearest2: input must be CxHxW, got " + shape_str(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<float> out(static_cast<std::size_t>(c) * (2 * h) * (2 * w));
    const float* in = x.data().data();
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                const float v = in[(static_cast<std::size_t>(ch) * h + y) * w + xx];
                const std::size_t b =
                    (static_cast<std::size_t>(ch) * 2 * h + 2 * y) * (2 * w) + 2 * xx;
                out[b] = v;
                out[b + 1] = v;
                out[b + 2 * static_cast<std::size_t>(w)] = v;
                out[b + 2 * static_cast<std::size_t>(w) + 1] = v;
            }
        }
    }
    NodePtr hx = x.handle();
    return make_op(
        {c, 2 * h, 2 * w}, std::move(out), {hx},
        [hx, c, h, w](TensorData& self) {
            if (!hx->requires_grad) return;
            hx->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                for (int y = 0; y < h; ++y) {
                    for (int xx = 0; xx < w; ++xx) {
                        const std::size_t b =
                            (static_cast<std::size_t>(ch) * 2 * h + 2 * y) * (2 * w) + 2 * xx;
                        hx->grad[(static_cast<std::size_t>(ch) * h + y) * w + xx] +=
                            self.grad[b] + self.grad[b + 1] +
                            self.grad[b + 2 * static_cast<std::size_t>(w)] +
                            self.grad[b + 2 * static_cast<std::size_t>(w) + 1];
                    }
                }
            }
        },
        "upsample_nearest2");
}

Tensor avgpool2(const Tensor& x) {
    if (x.ndim() != 3)
        throw DimensionError("avgpool2: input must be CxHxW, got " + shape_str(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0)
        throw DimensionError("avgpool2: spatial dims must be even, got " + shape_str(x.shape()));
    const int ho = h / 2, wo = w / 2;
    std::vector<float> out(static_cast<std::size_t>(c) * ho * wo);
    const float* in = x.data().data();
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < ho; ++y) {
            for (int xx = 0; xx < wo; ++xx) {
                const std::size_t b = (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * xx;
                out[(static_cast<std::size_t>(ch) * ho + y) * wo + xx] =
                    0.25f * (in[b] + in[b + 1] + in[b + static_cast<std::size_t>(w)] +
                             in[b + static_cast<std::size_t>(w) + 1]);
            }
        }
    }
    NodePtr hx = x.handle();
    return make_op(
        {c, ho, wo}, std::move(out), {hx},
        [hx, c, h, w, ho, wo](TensorData& self) {
            if (!hx->requires_grad) return;
            hx->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                for (int y = 0; y < ho; ++y) {
                    for (int xx = 0; xx < wo; ++xx) {
                        const float g =
                            0.25f * self.grad[(static_cast<std::size_t>(ch) * ho + y) * wo + xx];
                        const std::size_t b =
                            (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * xx;
                        hx->grad[b] += g;
                        hx->grad[b + 1] += g;
                        hx->grad[b + static_cast<std::size_t>(w)] += g;
                        hx->grad[b + static_cast<std::size_t>(w) + 1] += g;
                    }
                }
            }
        },
        "avgpool2");
}

Tensor chw_to_rows(const Tensor& x) {
    if (x.ndim() != 3)
        throw DimensionError("chw_to_rows: input must be CxHxW, got " + shape_str(x.shape()));
    const int c = x.dim(0);
    const int hw = x.dim(1) * x.dim(2);
    std::vector<float> out(x.size());
    const float* in = x.data().data();
    for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < hw; ++p)
            out[static_cast<std::size_t>(p) * c + ch] = in[static_cast<std::size_t>(ch) * hw + p];
    NodePtr hx = x.handle();
    return make_op(
        {hw, c}, std::move(out), {hx},
        [hx, c, hw](TensorData& self) {
            if (!hx->requires_grad) return;
            hx->ensure_grad();
            for (int ch = 0; ch < c; ++ch)
                for (int p = 0; p < hw; ++p)
                    hx->grad[static_cast<std::size_t>(ch) * hw + p] +=
                        self.grad[static_cast<std::size_t>(p) * c + ch];
        },
        "chw_to_rows");
}

Tensor rows_to_chw(const Tensor& x, int h, int w) {
    require_2d(x, "rows_to_chw", "input");
    const int hw = x.dim(0), c = x.dim(1);
    if (hw != h * w)
        throw DimensionError("rows_to_chw: row count " + std::to_string(hw) + " != " +
                             std::to_string(h) + "*" + std::to_string(w));
    std::vector<float> out(x.size());
    const float* in = x.data().data();
    for (int p = 0; p < hw; ++p)
        for (int ch = 0; ch < c; ++ch)
            out[static_cast<std::size_t>(ch) * hw + p] = in[static_cast<std::size_t>(p) * c + ch];
    NodePtr hx = x.handle();
    return make_op(
        {c, h, w}, std::move(out), {hx},
        [hx, c, hw](TensorData& self) {
            if (!hx->requires_grad) return;
            hx->ensure_grad();
            for (int p = 0; p < hw; ++p)
                for (int ch = 0; ch < c; ++ch)
                    hx->grad[static_cast<std::size_t>(p) * c + ch] +=
                        self.grad[static_cast<std::size_t>(ch) * hw + p];
        },
        "rows_to_chw");
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
    if (numel(new_shape) != x.size())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(new_shape));
    std::vector<float> out(x.data().begin(), x.data().end());
    NodePtr hx = x.handle();
    return make_op(
        std::move(new_shape), std::move(out), {hx},
        [hx](TensorData& self) {
            if (!hx->requires_grad) return;
            hx->ensure_grad();
            kern::add(self.grad.size(), hx->grad.data(), self.grad.data(), hx->grad.data());
        },
        "reshape");
}

Tensor transpose2d(const Tensor& x) {
    require_2d(x, "transpose2d", "input");
    const int r = x.dim(0), c = x.dim(1);
    std::vector<float> out(x.size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(j) * r + i] = x.data()[static_cast<std::size_t>(i) * c + j];
    NodePtr hx = x.handle();
    return make_op(
        {c, r}, std::move(out), {hx},
        [hx, r, c](TensorData& self) {
            if (!hx->requires_grad) return;
            hx->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    hx->grad[static_cast<std::size_t>(i) * c + j] +=
                        self.grad[static_cast<std::size_t>(j) * r + i];
        },
        "transpose2d");
}

Tensor row_normalize(const Tensor& x) {
    require_2d(x, "row_normalize", "input");
    const int r = x.dim(0), c = x.dim(1);
    auto inv_norm = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r));
    std::vector<float> out(x.size());
    for (int i = 0; i < r; ++i) {
        double s2 = 0.0;
        for (int j = 0; j < c; ++j) {
            const double v = x.data()[static_cast<std::size_t>(i) * c + j];
            s2 += v * v;
        }
        const double norm = std::sqrt(s2);
        if (norm < 1e-12)
            throw NumericError("row_normalize: zero-norm row " + std::to_string(i));
        (*inv_norm)[static_cast<std::size_t>(i)] = 1.0 / norm;
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(i) * c + j] = static_cast<float>(
                x.data()[static_cast<std::size_t>(i) * c + j] / norm);
    }
    NodePtr hx = x.handle();
    return make_op(
        x.shape(), std::move(out), {hx},
        [hx, inv_norm, r, c](TensorData& self) {
            if (!hx->requires_grad) return;
            hx->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const std::size_t base = static_cast<std::size_t>(i) * c;
                double dot = 0.0;
                for (int j = 0; j < c; ++j)
                    dot += static_cast<double>(self.grad[base + j]) * self.data[base + j];
                const double inv = (*inv_norm)[static_cast<std::size_t>(i)];
                for (int j = 0; j < c; ++j)
                    hx->grad[base + j] += static_cast<float>(
                        inv * (self.grad[base + j] - self.data[base + j] * dot));
            }
        },
        "row_normalize");
}

Tensor diagonal_nll(const Tensor& logits) {
    require_2d(logits, "diagonal_nll", "logits");
    const int n = logits.dim(0);
    if (logits.dim(1) != n)
        throw DimensionError("diagonal_nll: logits must be square, got " +
                             shape_str(logits.shape()));
    if (n < 2) throw DimensionError("diagonal_nll: need at least 2 rows");

    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * n;
        double mx = logits.data()[base];
        for (int j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(logits.data()[base + j]));
        double se = 0.0;
        for (int j = 0; j < n; ++j) se += std::exp(static_cast<double>(logits.data()[base + j]) - mx);
        total += mx + std::log(se) - logits.data()[base + static_cast<std::size_t>(i)];
    }
    const float value = static_cast<float>(total / n);

    NodePtr hl = logits.handle();
    return make_op(
        {1}, {value}, {hl},
        [hl, n](TensorData& self) {
            if (!hl->requires_grad) return;
            hl->ensure_grad();
            const float g = self.grad[0] / static_cast<float>(n);
            for (int i = 0; i < n; ++i) {
                const std::size_t base = static_cast<std::size_t>(i) * n;
                double mx = hl->data[base];
                for (int j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(hl->data[base + j]));
                double se = 0.0;
                for (int j = 0; j < n; ++j) se += std::exp(static_cast<double>(hl->data[base + j]) - mx);
                for (int j = 0; j < n; ++j) {
                    const double p = std::exp(static_cast<double>(hl->data[base + j]) - mx) / se;
                    hl->grad[base + j] += g * static_cast<float>(p - (i == j ? 1.0 : 0.0));
                }
            }
        },
        "diagonal_nll");
}

Tensor scale_scalar(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) throw DimensionError("scale_scalar: scale must be a single element");
    const float sv = s.data()[0];
    std::vector<float> out(x.size());
    kern::scale(x.size(), sv, x.data().data(), out.data());
    NodePtr hx = x.handle(), hs = s.handle();
    return make_op(
        x.shape(), std::move(out), {hx, hs},
        [hx, hs, sv](TensorData& self) {
            if (hx->requires_grad) {
                hx->ensure_grad();
                kern::axpy(self.grad.size(), sv, self.grad.data(), hx->grad.data());
            }
            if (hs->requires_grad) {
                hs->ensure_grad();
                hs->grad[0] += kern::dot(self.grad.size(), self.grad.data(), hx->data.data());
            }
        },
        "scale_scalar");
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw DimensionError("stack_rows: no rows");
    const int d = rows.front().ndim() == 2 ? rows.front().dim(1)
                                           : static_cast<int>(rows.front().size());
    std::vector<float> out;
    out.reserve(rows.size() * static_cast<std::size_t>(d));
    std::vector<NodePtr> parents;
    for (const Tensor& r : rows) {
        if (r.size() != static_cast<std::size_t>(d))
            throw DimensionError("stack_rows: inconsistent row widths");
        out.insert(out.end(), r.data().begin(), r.data().end());
        parents.push_back(r.handle());
    }
    const int n = static_cast<int>(rows.size());
    auto keep = std::make_shared<std::vector<NodePtr>>(parents);
    return make_op(
        {n, d}, std::move(out), std::move(parents),
        [keep, d](TensorData& self) {
            for (std::size_t i = 0; i < keep->size(); ++i) {
                const NodePtr& p = (*keep)[i];
                if (!p->requires_grad) continue;
                p->ensure_grad();
                kern::add(static_cast<std::size_t>(d), p->grad.data(),
                          self.grad.data() + i * static_cast<std::size_t>(d), p->grad.data());
            }
        },
        "stack_rows");
}

}  // namespace pf
