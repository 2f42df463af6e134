#include "latemu/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>

extern "C" void openblas_set_num_threads(int);

namespace latemu {

uint64_t derive_seed(uint64_t root, std::string_view purpose, uint64_t a, uint64_t b) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : purpose) h = (h ^ static_cast<uint8_t>(c)) * 0x100000001b3ull;
    return mix64(mix64(mix64(root ^ h) ^ a) ^ b);
}

namespace ops {

namespace {

// BLAS runs single-threaded; parallelism lives at the batch/member level
// where reduction order is controlled.
struct BlasInit {
    BlasInit() { openblas_set_num_threads(1); }
};
const BlasInit g_blas_init;

using detail::BackwardFn;
using detail::make_op;

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void axpy(std::vector<float>& dst, const std::vector<float>& src, float s = 1.0f) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    std::vector<float> out(a.data());
    axpy(out, b.data());
    auto an = a.node();
    auto bn = b.node();
    return make_op("add", a.shape(), std::move(out), {a, b},
                   [an, bn](const std::vector<float>& g, Gradients& gs) {
                       if (an->requires_grad) axpy(gs.buffer(an, an->shape), g);
                       if (bn->requires_grad) axpy(gs.buffer(bn, bn->shape), g);
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    std::vector<float> out(a.data());
    axpy(out, b.data(), -1.0f);
    auto an = a.node();
    auto bn = b.node();
    return make_op("sub", a.shape(), std::move(out), {a, b},
                   [an, bn](const std::vector<float>& g, Gradients& gs) {
                       if (an->requires_grad) axpy(gs.buffer(an, an->shape), g);
                       if (bn->requires_grad) axpy(gs.buffer(bn, bn->shape), g, -1.0f);
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    std::vector<float> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op("mul", a.shape(), std::move(out), {a, b},
                   [an, bn](const std::vector<float>& g, Gradients& gs) {
                       if (an->requires_grad) {
                           auto& ga = gs.buffer(an, an->shape);
                           for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
                       }
                       if (bn->requires_grad) {
                           auto& gb = gs.buffer(bn, bn->shape);
                           for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
                       }
                   });
}

Tensor scale(const Tensor& a, float s) {
    std::vector<float> out(a.data());
    for (auto& v : out) v *= s;
    auto an = a.node();
    return make_op("scale", a.shape(), std::move(out), {a},
                   [an, s](const std::vector<float>& g, Gradients& gs) {
                       if (an->requires_grad) axpy(gs.buffer(an, an->shape), g, s);
                   });
}

Tensor add_scalar(const Tensor& a, float c) {
    std::vector<float> out(a.data());
    for (auto& v : out) v += c;
    auto an = a.node();
    return make_op("add_scalar", a.shape(), std::move(out), {a},
                   [an](const std::vector<float>& g, Gradients& gs) {
                       if (an->requires_grad) axpy(gs.buffer(an, an->shape), g);
                   });
}

Tensor silu(const Tensor& x) {
    std::vector<float> out(x.numel());
    for (size_t i = 0; i < out.size(); ++i) {
        float v = x.data()[i];
        out[i] = v / (1.0f + std::exp(-v));
    }
    auto xn = x.node();
    return make_op("silu", x.shape(), std::move(out), {x},
                   [xn](const std::vector<float>& g, Gradients& gs) {
                       if (!xn->requires_grad) return;
                       auto& gx = gs.buffer(xn, xn->shape);
                       for (size_t i = 0; i < g.size(); ++i) {
                           float v = xn->value[i];
                           float s = 1.0f / (1.0f + std::exp(-v));
                           gx[i] += g[i] * s * (1.0f + v * (1.0f - s));
                       }
                   });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<float> out(x.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0f / (1.0f + std::exp(-x.data()[i]));
    auto xn = x.node();
    auto y = std::make_shared<std::vector<float>>(out);
    return make_op("sigmoid", x.shape(), std::move(out), {x},
                   [xn, y](const std::vector<float>& g, Gradients& gs) {
                       if (!xn->requires_grad) return;
                       auto& gx = gs.buffer(xn, xn->shape);
                       for (size_t i = 0; i < g.size(); ++i) {
                           float s = (*y)[i];
                           gx[i] += g[i] * s * (1.0f - s);
                       }
                   });
}

Tensor saturate(const Tensor& x, float bound) {
    if (bound <= 0.0f) throw ShapeError("saturate: bound must be positive");
    const float b2 = bound * bound;
    // rounding may land exactly on the bound for huge inputs; the contract
    // is the open interval (-bound, bound)
    const float hi = std::nextafterf(bound, 0.0f);
    std::vector<float> out(x.numel());
    for (size_t i = 0; i < out.size(); ++i) {
        float v = x.data()[i];
        float y = v / std::sqrt(1.0f + v * v / b2);
        out[i] = std::min(hi, std::max(-hi, y));
    }
    auto xn = x.node();
    return make_op("saturate", x.shape(), std::move(out), {x},
                   [xn, b2](const std::vector<float>& g, Gradients& gs) {
                       if (!xn->requires_grad) return;
                       auto& gx = gs.buffer(xn, xn->shape);
                       for (size_t i = 0; i < g.size(); ++i) {
                           float v = xn->value[i];
                           float u = 1.0f + v * v / b2;
                           gx[i] += g[i] / (u * std::sqrt(u));
                       }
                   });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (latemu::numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    auto xn = x.node();
    return make_op("reshape", std::move(shape), std::vector<float>(x.data()), {x},
                   [xn](const std::vector<float>& g, Gradients& gs) {
                       if (xn->requires_grad) axpy(gs.buffer(xn, xn->shape), g);
                   });
}

namespace {

std::vector<int64_t> strides_of(const Shape& shape) {
    std::vector<int64_t> st(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * shape[i + 1];
    return st;
}

void permute_copy(const std::vector<float>& src, const Shape& src_shape,
                  const std::vector<int>& dims, std::vector<float>& dst) {
    const size_t nd = src_shape.size();
    Shape dst_shape(nd);
    for (size_t i = 0; i < nd; ++i) dst_shape[i] = src_shape[static_cast<size_t>(dims[i])];
    auto sst = strides_of(src_shape);
    auto dstr = strides_of(dst_shape);
    std::vector<int64_t> idx(nd, 0);
    const int64_t n = static_cast<int64_t>(src.size());
    for (int64_t out_i = 0; out_i < n; ++out_i) {
        int64_t rem = out_i;
        int64_t src_i = 0;
        for (size_t d = 0; d < nd; ++d) {
            int64_t coord = rem / dstr[d];
            rem -= coord * dstr[d];
            src_i += coord * sst[static_cast<size_t>(dims[d])];
        }
        dst[static_cast<size_t>(out_i)] = src[static_cast<size_t>(src_i)];
    }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
    const size_t nd = x.shape().size();
    if (dims.size() != nd) throw ShapeError("permute: dims rank mismatch");
    std::vector<bool> seen(nd, false);
    for (int d : dims) {
        if (d < 0 || static_cast<size_t>(d) >= nd || seen[static_cast<size_t>(d)]) {
            throw ShapeError("permute: invalid dims");
        }
        seen[static_cast<size_t>(d)] = true;
    }
    Shape out_shape(nd);
    for (size_t i = 0; i < nd; ++i) out_shape[i] = x.shape()[static_cast<size_t>(dims[i])];
    std::vector<float> out(x.numel());
    permute_copy(x.data(), x.shape(), dims, out);

    std::vector<int> inv(nd);
    for (size_t i = 0; i < nd; ++i) inv[static_cast<size_t>(dims[i])] = static_cast<int>(i);
    auto xn = x.node();
    Shape fwd_out_shape = out_shape;
    return make_op("permute", std::move(out_shape), std::move(out), {x},
                   [xn, inv, fwd_out_shape](const std::vector<float>& g, Gradients& gs) {
                       if (!xn->requires_grad) return;
                       std::vector<float> gx(g.size());
                       permute_copy(g, fwd_out_shape, inv, gx);
                       axpy(gs.buffer(xn, xn->shape), gx);
                   });
}

Tensor transpose_last(const Tensor& x) {
    const size_t nd = x.shape().size();
    if (nd < 2) throw ShapeError("transpose_last: needs rank >= 2");
    std::vector<int> dims(nd);
    for (size_t i = 0; i < nd; ++i) dims[i] = static_cast<int>(i);
    std::swap(dims[nd - 1], dims[nd - 2]);
    return permute(x, dims);
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: empty input list");
    const size_t nd = xs[0].shape().size();
    if (axis < 0 || static_cast<size_t>(axis) >= nd) throw ShapeError("concat: bad axis");
    Shape out_shape = xs[0].shape();
    int64_t axis_total = 0;
    for (const auto& t : xs) {
        if (t.shape().size() != nd) throw ShapeError("concat: rank mismatch");
        for (size_t d = 0; d < nd; ++d) {
            if (d != static_cast<size_t>(axis) && t.shape()[d] != out_shape[d]) {
                throw ShapeError("concat: incompatible shapes");
            }
        }
        axis_total += t.shape()[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = axis_total;

    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
    for (size_t d = static_cast<size_t>(axis) + 1; d < nd; ++d) inner *= out_shape[d];

    std::vector<float> out(static_cast<size_t>(latemu::numel(out_shape)));
    std::vector<int64_t> blocks;
    int64_t offset = 0;
    for (const auto& t : xs) {
        const int64_t blk = t.shape()[static_cast<size_t>(axis)] * inner;
        blocks.push_back(blk);
        for (int64_t o = 0; o < outer; ++o) {
            std::memcpy(out.data() + o * axis_total * inner + offset,
                        t.data().data() + o * blk, static_cast<size_t>(blk) * sizeof(float));
        }
        offset += blk;
    }

    std::vector<const detail::Node*> nodes;
    for (const auto& t : xs) nodes.push_back(t.node());
    const int64_t row = axis_total * inner;
    return make_op("concat", std::move(out_shape), std::move(out), xs,
                   [nodes, blocks, outer, row](const std::vector<float>& g, Gradients& gs) {
                       int64_t off = 0;
                       for (size_t i = 0; i < nodes.size(); ++i) {
                           if (nodes[i]->requires_grad) {
                               auto& gx = gs.buffer(nodes[i], nodes[i]->shape);
                               for (int64_t o = 0; o < outer; ++o) {
                                   const float* src = g.data() + o * row + off;
                                   float* dst = gx.data() + o * blocks[i];
                                   for (int64_t j = 0; j < blocks[i]; ++j) dst[j] += src[j];
                               }
                           }
                           off += blocks[i];
                       }
                   });
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length) {
    const size_t nd = x.shape().size();
    if (axis < 0 || static_cast<size_t>(axis) >= nd) throw ShapeError("slice: bad axis");
    const int64_t extent = x.shape()[static_cast<size_t>(axis)];
    if (start < 0 || length <= 0 || start + length > extent) {
        throw ShapeError("slice: out of range");
    }
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= x.shape()[static_cast<size_t>(d)];
    for (size_t d = static_cast<size_t>(axis) + 1; d < nd; ++d) inner *= x.shape()[d];

    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = length;
    std::vector<float> out(static_cast<size_t>(outer * length * inner));
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * length * inner,
                    x.data().data() + (o * extent + start) * inner,
                    static_cast<size_t>(length * inner) * sizeof(float));
    }
    auto xn = x.node();
    return make_op("slice", std::move(out_shape), std::move(out), {x},
                   [xn, outer, inner, extent, start, length](const std::vector<float>& g,
                                                             Gradients& gs) {
                       if (!xn->requires_grad) return;
                       auto& gx = gs.buffer(xn, xn->shape);
                       for (int64_t o = 0; o < outer; ++o) {
                           const float* src = g.data() + o * length * inner;
                           float* dst = gx.data() + (o * extent + start) * inner;
                           for (int64_t j = 0; j < length * inner; ++j) dst[j] += src[j];
                       }
                   });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const int m = static_cast<int>(a.dim(0));
    const int k = static_cast<int>(a.dim(1));
    const int n = static_cast<int>(b.dim(1));
    std::vector<float> out(static_cast<size_t>(m) * n);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0f, a.data().data(), k,
                b.data().data(), n, 0.0f, out.data(), n);
    auto an = a.node();
    auto bn = b.node();
    return make_op("matmul", {m, n}, std::move(out), {a, b},
                   [an, bn, m, n, k](const std::vector<float>& g, Gradients& gs) {
                       if (an->requires_grad) {
                           auto& ga = gs.buffer(an, an->shape);
                           cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, k, n, 1.0f,
                                       g.data(), n, bn->value.data(), n, 1.0f, ga.data(), k);
                       }
                       if (bn->requires_grad) {
                           auto& gb = gs.buffer(bn, bn->shape);
                           cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k, n, m, 1.0f,
                                       an->value.data(), k, g.data(), n, 1.0f, gb.data(), n);
                       }
                   });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
        throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const int bs = static_cast<int>(a.dim(0));
    const int m = static_cast<int>(a.dim(1));
    const int k = static_cast<int>(a.dim(2));
    const int n = static_cast<int>(b.dim(2));
    std::vector<float> out(static_cast<size_t>(bs) * m * n);
    for (int i = 0; i < bs; ++i) {
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0f,
                    a.data().data() + static_cast<size_t>(i) * m * k, k,
                    b.data().data() + static_cast<size_t>(i) * k * n, n, 0.0f,
                    out.data() + static_cast<size_t>(i) * m * n, n);
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op("bmm", {bs, m, n}, std::move(out), {a, b},
                   [an, bn, bs, m, n, k](const std::vector<float>& g, Gradients& gs) {
                       for (int i = 0; i < bs; ++i) {
                           const float* gi = g.data() + static_cast<size_t>(i) * m * n;
                           if (an->requires_grad) {
                               auto& ga = gs.buffer(an, an->shape);
                               cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, k, n, 1.0f,
                                           gi, n, bn->value.data() + static_cast<size_t>(i) * k * n,
                                           n, 1.0f, ga.data() + static_cast<size_t>(i) * m * k, k);
                           }
                           if (bn->requires_grad) {
                               auto& gb = gs.buffer(bn, bn->shape);
                               cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k, n, m, 1.0f,
                                           an->value.data() + static_cast<size_t>(i) * m * k, k, gi,
                                           n, 1.0f, gb.data() + static_cast<size_t>(i) * k * n, n);
                           }
                       }
                   });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    const int64_t c = x.shape().back();
    if (bias.ndim() != 1 || bias.dim(0) != c) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " vs channels " +
                         std::to_string(c));
    }
    std::vector<float> out(x.data());
    const int64_t rows = x.numel() / c;
    for (int64_t r = 0; r < rows; ++r) {
        float* row = out.data() + r * c;
        for (int64_t j = 0; j < c; ++j) row[j] += bias.data()[static_cast<size_t>(j)];
    }
    auto xn = x.node();
    auto bn = bias.node();
    return make_op("add_bias", x.shape(), std::move(out), {x, bias},
                   [xn, bn, rows, c](const std::vector<float>& g, Gradients& gs) {
                       if (xn->requires_grad) axpy(gs.buffer(xn, xn->shape), g);
                       if (bn->requires_grad) {
                           auto& gb = gs.buffer(bn, bn->shape);
                           for (int64_t j = 0; j < c; ++j) {
                               double acc = 0.0;
                               for (int64_t r = 0; r < rows; ++r) acc += g[static_cast<size_t>(r * c + j)];
                               gb[static_cast<size_t>(j)] += static_cast<float>(acc);
                           }
                       }
                   });
}

Tensor bias_nchw(const Tensor& x, const Tensor& bias) {
    if (x.ndim() != 4) throw ShapeError("bias_nchw: expects NCHW input");
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (bias.ndim() != 1 || bias.dim(0) != c) throw ShapeError("bias_nchw: bad bias shape");
    std::vector<float> out(x.data());
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < c; ++j) {
            float b = bias.data()[static_cast<size_t>(j)];
            float* p = out.data() + (i * c + j) * hw;
            for (int64_t q = 0; q < hw; ++q) p[q] += b;
        }
    }
    auto xn = x.node();
    auto bn = bias.node();
    return make_op("bias_nchw", x.shape(), std::move(out), {x, bias},
                   [xn, bn, n, c, hw](const std::vector<float>& g, Gradients& gs) {
                       if (xn->requires_grad) axpy(gs.buffer(xn, xn->shape), g);
                       if (bn->requires_grad) {
                           auto& gb = gs.buffer(bn, bn->shape);
                           for (int64_t j = 0; j < c; ++j) {
                               double acc = 0.0;
                               for (int64_t i = 0; i < n; ++i) {
                                   const float* p = g.data() + (i * c + j) * hw;
                                   for (int64_t q = 0; q < hw; ++q) acc += p[q];
                               }
                               gb[static_cast<size_t>(j)] += static_cast<float>(acc);
                           }
                       }
                   });
}

Tensor add_tokens(const Tensor& x, const Tensor& table) {
    if (x.ndim() != 3 || table.ndim() != 2 || table.dim(0) != x.dim(1) ||
        table.dim(1) != x.dim(2)) {
        throw ShapeError("add_tokens: expects x[B,T,C], table[T,C]");
    }
    const int64_t b = x.dim(0), tc = x.dim(1) * x.dim(2);
    std::vector<float> out(x.data());
    for (int64_t i = 0; i < b; ++i) {
        float* row = out.data() + i * tc;
        for (int64_t j = 0; j < tc; ++j) row[j] += table.data()[static_cast<size_t>(j)];
    }
    auto xn = x.node();
    auto tn = table.node();
    return make_op("add_tokens", x.shape(), std::move(out), {x, table},
                   [xn, tn, b, tc](const std::vector<float>& g, Gradients& gs) {
                       if (xn->requires_grad) axpy(gs.buffer(xn, xn->shape), g);
                       if (tn->requires_grad) {
                           auto& gt = gs.buffer(tn, tn->shape);
                           for (int64_t i = 0; i < b; ++i) {
                               const float* row = g.data() + i * tc;
                               for (int64_t j = 0; j < tc; ++j) gt[static_cast<size_t>(j)] += row[j];
                           }
                       }
                   });
}

namespace {

// Shared layer-norm core over `rows` independent groups of `c` elements,
// where element (r, j) lives at data[row_base(r) + j*stride].
struct NormLayout {
    int64_t rows, c, stride;
    std::function<int64_t(int64_t)> base;
};

Tensor layer_norm_impl(const char* name, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       float eps, const NormLayout& L) {
    const bool affine = gamma.defined();
    if (affine && (gamma.ndim() != 1 || gamma.dim(0) != L.c || !beta.defined() ||
                   beta.shape() != gamma.shape())) {
        throw ShapeError(std::string(name) + ": bad affine parameter shapes");
    }
    std::vector<float> out(x.numel());
    auto xhat = std::make_shared<std::vector<float>>(x.numel());
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(L.rows));
    for (int64_t r = 0; r < L.rows; ++r) {
        const int64_t base = L.base(r);
        double mu = 0.0;
        for (int64_t j = 0; j < L.c; ++j) mu += x.data()[static_cast<size_t>(base + j * L.stride)];
        mu /= static_cast<double>(L.c);
        double var = 0.0;
        for (int64_t j = 0; j < L.c; ++j) {
            double d = x.data()[static_cast<size_t>(base + j * L.stride)] - mu;
            var += d * d;
        }
        var /= static_cast<double>(L.c);
        const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*inv_std)[static_cast<size_t>(r)] = is;
        for (int64_t j = 0; j < L.c; ++j) {
            const size_t idx = static_cast<size_t>(base + j * L.stride);
            float xh = (x.data()[idx] - static_cast<float>(mu)) * is;
            (*xhat)[idx] = xh;
            out[idx] = affine ? xh * gamma.data()[static_cast<size_t>(j)] +
                                    beta.data()[static_cast<size_t>(j)]
                              : xh;
        }
    }
    std::vector<Tensor> parents{x};
    if (affine) {
        parents.push_back(gamma);
        parents.push_back(beta);
    }
    auto xn = x.node();
    const detail::Node* gn = affine ? gamma.node() : nullptr;
    const detail::Node* bn = affine ? beta.node() : nullptr;
    NormLayout lay = L;
    return make_op(name, x.shape(), std::move(out), parents,
                   [xn, gn, bn, xhat, inv_std, lay](const std::vector<float>& g, Gradients& gs) {
                       const int64_t c = lay.c;
                       std::vector<float>* gx =
                           xn->requires_grad ? &gs.buffer(xn, xn->shape) : nullptr;
                       std::vector<float>* gg =
                           (gn && gn->requires_grad) ? &gs.buffer(gn, gn->shape) : nullptr;
                       std::vector<float>* gb =
                           (bn && bn->requires_grad) ? &gs.buffer(bn, bn->shape) : nullptr;
                       for (int64_t r = 0; r < lay.rows; ++r) {
                           const int64_t base = lay.base(r);
                           const float is = (*inv_std)[static_cast<size_t>(r)];
                           double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                           for (int64_t j = 0; j < c; ++j) {
                               const size_t idx = static_cast<size_t>(base + j * lay.stride);
                               float dxh = gn ? g[idx] * gn->value[static_cast<size_t>(j)] : g[idx];
                               sum_dxh += dxh;
                               sum_dxh_xh += static_cast<double>(dxh) * (*xhat)[idx];
                               if (gg) (*gg)[static_cast<size_t>(j)] += g[idx] * (*xhat)[idx];
                               if (gb) (*gb)[static_cast<size_t>(j)] += g[idx];
                           }
                           if (!gx) continue;
                           const float m1 = static_cast<float>(sum_dxh / static_cast<double>(c));
                           const float m2 = static_cast<float>(sum_dxh_xh / static_cast<double>(c));
                           for (int64_t j = 0; j < c; ++j) {
                               const size_t idx = static_cast<size_t>(base + j * lay.stride);
                               float dxh = gn ? g[idx] * gn->value[static_cast<size_t>(j)] : g[idx];
                               (*gx)[idx] += is * (dxh - m1 - (*xhat)[idx] * m2);
                           }
                       }
                   });
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    const int64_t c = x.shape().back();
    const int64_t rows = x.numel() / c;
    NormLayout L{rows, c, 1, [c](int64_t r) { return r * c; }};
    return layer_norm_impl("layer_norm", x, gamma, beta, eps, L);
}

Tensor layer_norm_chan(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    if (x.ndim() != 4) throw ShapeError("layer_norm_chan: expects NCHW input");
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    NormLayout L{n * hw, c, hw,
                 [c, hw](int64_t r) { return (r / hw) * c * hw + (r % hw); }};
    return layer_norm_impl("layer_norm_chan", x, gamma, beta, eps, L);
}

Tensor rms_norm(const Tensor& x, float eps) {
    const int64_t c = x.shape().back();
    const int64_t rows = x.numel() / c;
    std::vector<float> out(x.numel());
    auto inv_rms = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = x.data().data() + r * c;
        double ms = 0.0;
        for (int64_t j = 0; j < c; ++j) ms += static_cast<double>(xr[j]) * xr[j];
        ms /= static_cast<double>(c);
        const float ir = static_cast<float>(1.0 / std::sqrt(ms + eps));
        (*inv_rms)[static_cast<size_t>(r)] = ir;
        float* yr = out.data() + r * c;
        for (int64_t j = 0; j < c; ++j) yr[j] = xr[j] * ir;
    }
    auto xn = x.node();
    return make_op("rms_norm", x.shape(), std::move(out), {x},
                   [xn, inv_rms, rows, c](const std::vector<float>& g, Gradients& gs) {
                       if (!xn->requires_grad) return;
                       auto& gx = gs.buffer(xn, xn->shape);
                       for (int64_t r = 0; r < rows; ++r) {
                           const float* xr = xn->value.data() + r * c;
                           const float* gr = g.data() + r * c;
                           const float ir = (*inv_rms)[static_cast<size_t>(r)];
                           double dot = 0.0;
                           for (int64_t j = 0; j < c; ++j) dot += static_cast<double>(gr[j]) * xr[j];
                           const float k = static_cast<float>(dot) * ir * ir * ir /
                                           static_cast<float>(c);
                           float* gxr = gx.data() + r * c;
                           for (int64_t j = 0; j < c; ++j) gxr[j] += gr[j] * ir - k * xr[j];
                       }
                   });
}

Tensor softmax(const Tensor& x) {
    const int64_t c = x.shape().back();
    const int64_t rows = x.numel() / c;
    std::vector<float> out(x.numel());
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = x.data().data() + r * c;
        float* yr = out.data() + r * c;
        float mx = xr[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (int64_t j = 0; j < c; ++j) yr[j] *= inv;
    }
    auto xn = x.node();
    auto y = std::make_shared<std::vector<float>>(out);
    return make_op("softmax", x.shape(), std::move(out), {x},
                   [xn, y, rows, c](const std::vector<float>& g, Gradients& gs) {
                       if (!xn->requires_grad) return;
                       auto& gx = gs.buffer(xn, xn->shape);
                       for (int64_t r = 0; r < rows; ++r) {
                           const float* yr = y->data() + r * c;
                           const float* gr = g.data() + r * c;
                           double dot = 0.0;
                           for (int64_t j = 0; j < c; ++j) dot += static_cast<double>(gr[j]) * yr[j];
                           float* gxr = gx.data() + r * c;
                           for (int64_t j = 0; j < c; ++j) {
                               gxr[j] += yr[j] * (gr[j] - static_cast<float>(dot));
                           }
                       }
                   });
}

namespace {

inline int64_t wrap(int64_t i, int64_t n) {
    i %= n;
    return i < 0 ? i + n : i;
}

// Gather the im2col matrix [Cin*kh*kw, H*W] for one sample.
void im2col(const float* x, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw, Pad pad,
            float* col) {
    const int64_t ph = kh / 2, pw = kw / 2, hw = h * w;
    int64_t row = 0;
    for (int64_t ci = 0; ci < cin; ++ci) {
        const float* xc = x + ci * hw;
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx, ++row) {
                float* cr = col + row * hw;
                for (int64_t oy = 0; oy < h; ++oy) {
                    const int64_t iy = oy + ky - ph;
                    const bool oob_y = (iy < 0 || iy >= h);
                    const int64_t wy = wrap(iy, h);
                    for (int64_t ox = 0; ox < w; ++ox) {
                        const int64_t ix = ox + kx - pw;
                        if (pad == Pad::Zero && (oob_y || ix < 0 || ix >= w)) {
                            cr[oy * w + ox] = 0.0f;
                        } else {
                            cr[oy * w + ox] = xc[wy * w + wrap(ix, w)];
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const float* col, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                Pad pad, float* gx) {
    const int64_t ph = kh / 2, pw = kw / 2, hw = h * w;
    int64_t row = 0;
    for (int64_t ci = 0; ci < cin; ++ci) {
        float* gc = gx + ci * hw;
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx, ++row) {
                const float* cr = col + row * hw;
                for (int64_t oy = 0; oy < h; ++oy) {
                    const int64_t iy = oy + ky - ph;
                    const bool oob_y = (iy < 0 || iy >= h);
                    const int64_t wy = wrap(iy, h);
                    for (int64_t ox = 0; ox < w; ++ox) {
                        const int64_t ix = ox + kx - pw;
                        if (pad == Pad::Zero && (oob_y || ix < 0 || ix >= w)) continue;
                        gc[wy * w + wrap(ix, w)] += cr[oy * w + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Pad padding) {
    if (x.ndim() != 4 || w.ndim() != 4) throw ShapeError("conv2d: expects NCHW input, OIHW weight");
    const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin) throw ShapeError("conv2d: channel mismatch");
    if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
    const bool with_bias = bias.defined();
    if (with_bias && (bias.ndim() != 1 || bias.dim(0) != cout)) {
        throw ShapeError("conv2d: bad bias shape");
    }
    const int64_t hw = h * ww;
    const int64_t krows = cin * kh * kw;

    std::vector<float> out(static_cast<size_t>(n * cout * hw));
    std::vector<float> col(static_cast<size_t>(krows * hw));
    for (int64_t i = 0; i < n; ++i) {
        im2col(x.data().data() + i * cin * hw, cin, h, ww, kh, kw, padding, col.data());
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(cout),
                    static_cast<int>(hw), static_cast<int>(krows), 1.0f, w.data().data(),
                    static_cast<int>(krows), col.data(), static_cast<int>(hw), 0.0f,
                    out.data() + i * cout * hw, static_cast<int>(hw));
        if (with_bias) {
            for (int64_t co = 0; co < cout; ++co) {
                float b = bias.data()[static_cast<size_t>(co)];
                float* p = out.data() + (i * cout + co) * hw;
                for (int64_t q = 0; q < hw; ++q) p[q] += b;
            }
        }
    }

    std::vector<Tensor> parents{x, w};
    if (with_bias) parents.push_back(bias);
    auto xn = x.node();
    auto wn = w.node();
    const detail::Node* bn = with_bias ? bias.node() : nullptr;
    return make_op(
        "conv2d", {n, cout, h, ww}, std::move(out), parents,
        [xn, wn, bn, n, cin, cout, h, ww, kh, kw, padding](const std::vector<float>& g,
                                                           Gradients& gs) {
            const int64_t hw = h * ww;
            const int64_t krows = cin * kh * kw;
            std::vector<float> col(static_cast<size_t>(krows * hw));
            std::vector<float>* gx = xn->requires_grad ? &gs.buffer(xn, xn->shape) : nullptr;
            std::vector<float>* gw = wn->requires_grad ? &gs.buffer(wn, wn->shape) : nullptr;
            std::vector<float>* gb =
                (bn && bn->requires_grad) ? &gs.buffer(bn, bn->shape) : nullptr;
            for (int64_t i = 0; i < n; ++i) {
                const float* gy = g.data() + i * cout * hw;
                if (gw) {
                    im2col(xn->value.data() + i * cin * hw, cin, h, ww, kh, kw, padding,
                           col.data());
                    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(cout),
                                static_cast<int>(krows), static_cast<int>(hw), 1.0f, gy,
                                static_cast<int>(hw), col.data(), static_cast<int>(hw), 1.0f,
                                gw->data(), static_cast<int>(krows));
                }
                if (gx) {
                    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(krows),
                                static_cast<int>(hw), static_cast<int>(cout), 1.0f,
                                wn->value.data(), static_cast<int>(krows), gy,
                                static_cast<int>(hw), 0.0f, col.data(), static_cast<int>(hw));
                    col2im_add(col.data(), cin, h, ww, kh, kw, padding, gx->data() + i * cin * hw);
                }
                if (gb) {
                    for (int64_t co = 0; co < cout; ++co) {
                        double acc = 0.0;
                        const float* p = gy + co * hw;
                        for (int64_t q = 0; q < hw; ++q) acc += p[q];
                        (*gb)[static_cast<size_t>(co)] += static_cast<float>(acc);
                    }
                }
            }
        });
}

namespace {

// out[n, c*f*f + dy*f + dx, y, x] = in[n, c, y*f+dy, x*f+dx]
void s2d_copy(const float* in, int64_t n, int64_t c, int64_t h, int64_t w, int f, float* out,
              bool inverse) {
    const int64_t ho = h / f, wo = w / f;
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t ci = 0; ci < c; ++ci) {
            for (int dy = 0; dy < f; ++dy) {
                for (int dx = 0; dx < f; ++dx) {
                    const int64_t co = ci * f * f + dy * f + dx;
                    for (int64_t y = 0; y < ho; ++y) {
                        for (int64_t x = 0; x < wo; ++x) {
                            const int64_t src = ((i * c + ci) * h + (y * f + dy)) * w + x * f + dx;
                            const int64_t dst = ((i * c * f * f + co) * ho + y) * wo + x;
                            if (inverse) {
                                out[src] = in[dst];
                            } else {
                                out[dst] = in[src];
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor space_to_depth(const Tensor& x, int factor) {
    if (x.ndim() != 4) throw ShapeError("space_to_depth: expects NCHW input");
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % factor != 0 || w % factor != 0) {
        throw ShapeError("space_to_depth: spatial dims not divisible by factor");
    }
    std::vector<float> out(x.numel());
    s2d_copy(x.data().data(), n, c, h, w, factor, out.data(), false);
    auto xn = x.node();
    return make_op("space_to_depth", {n, c * factor * factor, h / factor, w / factor},
                   std::move(out), {x},
                   [xn, n, c, h, w, factor](const std::vector<float>& g, Gradients& gs) {
                       if (!xn->requires_grad) return;
                       auto& gx = gs.buffer(xn, xn->shape);
                       std::vector<float> tmp(g.size());
                       s2d_copy(g.data(), n, c, h, w, factor, tmp.data(), true);
                       axpy(gx, tmp);
                   });
}

Tensor depth_to_space(const Tensor& x, int factor) {
    if (x.ndim() != 4) throw ShapeError("depth_to_space: expects NCHW input");
    const int64_t n = x.dim(0), cf = x.dim(1), ho = x.dim(2), wo = x.dim(3);
    if (cf % (factor * factor) != 0) {
        throw ShapeError("depth_to_space: channels not divisible by factor^2");
    }
    const int64_t c = cf / (factor * factor);
    const int64_t h = ho * factor, w = wo * factor;
    std::vector<float> out(x.numel());
    s2d_copy(x.data().data(), n, c, h, w, factor, out.data(), true);
    auto xn = x.node();
    return make_op("depth_to_space", {n, c, h, w}, std::move(out), {x},
                   [xn, n, c, h, w, factor](const std::vector<float>& g, Gradients& gs) {
                       if (!xn->requires_grad) return;
                       auto& gx = gs.buffer(xn, xn->shape);
                       std::vector<float> tmp(g.size());
                       s2d_copy(g.data(), n, c, h, w, factor, tmp.data(), false);
                       axpy(gx, tmp);
                   });
}

Tensor modulate(const Tensor& x, const Tensor& scale_bc, const Tensor& shift_bc) {
    if (x.ndim() != 3 || scale_bc.ndim() != 2 || shift_bc.ndim() != 2 ||
        scale_bc.dim(0) != x.dim(0) || scale_bc.dim(1) != x.dim(2) ||
        shift_bc.shape() != scale_bc.shape()) {
        throw ShapeError("modulate: expects x[B,T,C], scale/shift [B,C]");
    }
    const int64_t b = x.dim(0), t = x.dim(1), c = x.dim(2);
    std::vector<float> out(x.numel());
    for (int64_t i = 0; i < b; ++i) {
        const float* s = scale_bc.data().data() + i * c;
        const float* sh = shift_bc.data().data() + i * c;
        for (int64_t j = 0; j < t; ++j) {
            const float* xr = x.data().data() + (i * t + j) * c;
            float* yr = out.data() + (i * t + j) * c;
            for (int64_t k = 0; k < c; ++k) yr[k] = xr[k] * (1.0f + s[k]) + sh[k];
        }
    }
    auto xn = x.node();
    auto sn = scale_bc.node();
    auto shn = shift_bc.node();
    return make_op("modulate", x.shape(), std::move(out), {x, scale_bc, shift_bc},
                   [xn, sn, shn, b, t, c](const std::vector<float>& g, Gradients& gs) {
                       std::vector<float>* gx = xn->requires_grad ? &gs.buffer(xn, xn->shape) : nullptr;
                       std::vector<float>* gsc = sn->requires_grad ? &gs.buffer(sn, sn->shape) : nullptr;
                       std::vector<float>* gsh = shn->requires_grad ? &gs.buffer(shn, shn->shape) : nullptr;
                       for (int64_t i = 0; i < b; ++i) {
                           const float* s = sn->value.data() + i * c;
                           for (int64_t j = 0; j < t; ++j) {
                               const float* gr = g.data() + (i * t + j) * c;
                               const float* xr = xn->value.data() + (i * t + j) * c;
                               for (int64_t k = 0; k < c; ++k) {
                                   if (gx) (*gx)[static_cast<size_t>((i * t + j) * c + k)] += gr[k] * (1.0f + s[k]);
                                   if (gsc) (*gsc)[static_cast<size_t>(i * c + k)] += gr[k] * xr[k];
                                   if (gsh) (*gsh)[static_cast<size_t>(i * c + k)] += gr[k];
                               }
                           }
                       }
                   });
}

Tensor gate(const Tensor& x, const Tensor& gate_bc) {
    if (x.ndim() != 3 || gate_bc.ndim() != 2 || gate_bc.dim(0) != x.dim(0) ||
        gate_bc.dim(1) != x.dim(2)) {
        throw ShapeError("gate: expects x[B,T,C], gate [B,C]");
    }
    const int64_t b = x.dim(0), t = x.dim(1), c = x.dim(2);
    std::vector<float> out(x.numel());
    for (int64_t i = 0; i < b; ++i) {
        const float* gv = gate_bc.data().data() + i * c;
        for (int64_t j = 0; j < t; ++j) {
            const float* xr = x.data().data() + (i * t + j) * c;
            float* yr = out.data() + (i * t + j) * c;
            for (int64_t k = 0; k < c; ++k) yr[k] = xr[k] * gv[k];
        }
    }
    auto xn = x.node();
    auto gn = gate_bc.node();
    return make_op("gate", x.shape(), std::move(out), {x, gate_bc},
                   [xn, gn, b, t, c](const std::vector<float>& g, Gradients& gs) {
                       std::vector<float>* gx = xn->requires_grad ? &gs.buffer(xn, xn->shape) : nullptr;
                       std::vector<float>* gg = gn->requires_grad ? &gs.buffer(gn, gn->shape) : nullptr;
                       for (int64_t i = 0; i < b; ++i) {
                           const float* gv = gn->value.data() + i * c;
                           for (int64_t j = 0; j < t; ++j) {
                               const float* gr = g.data() + (i * t + j) * c;
                               const float* xr = xn->value.data() + (i * t + j) * c;
                               for (int64_t k = 0; k < c; ++k) {
                                   if (gx) (*gx)[static_cast<size_t>((i * t + j) * c + k)] += gr[k] * gv[k];
                                   if (gg) (*gg)[static_cast<size_t>(i * c + k)] += gr[k] * xr[k];
                               }
                           }
                       }
                   });
}

Tensor scale_heads(const Tensor& x, const Tensor& s) {
    if (x.ndim() != 4 || s.ndim() != 1 || s.dim(0) != x.dim(1)) {
        throw ShapeError("scale_heads: expects x[B,H,T,D], s[H]");
    }
    const int64_t b = x.dim(0), heads = x.dim(1), td = x.dim(2) * x.dim(3);
    std::vector<float> out(x.numel());
    for (int64_t i = 0; i < b; ++i) {
        for (int64_t hh = 0; hh < heads; ++hh) {
            const float sv = s.data()[static_cast<size_t>(hh)];
            const float* xr = x.data().data() + (i * heads + hh) * td;
            float* yr = out.data() + (i * heads + hh) * td;
            for (int64_t q = 0; q < td; ++q) yr[q] = xr[q] * sv;
        }
    }
    auto xn = x.node();
    auto sn = s.node();
    return make_op("scale_heads", x.shape(), std::move(out), {x, s},
                   [xn, sn, b, heads, td](const std::vector<float>& g, Gradients& gs) {
                       std::vector<float>* gx = xn->requires_grad ? &gs.buffer(xn, xn->shape) : nullptr;
                       std::vector<float>* gsv = sn->requires_grad ? &gs.buffer(sn, sn->shape) : nullptr;
                       for (int64_t i = 0; i < b; ++i) {
                           for (int64_t hh = 0; hh < heads; ++hh) {
                               const float sv = sn->value[static_cast<size_t>(hh)];
                               const float* gr = g.data() + (i * heads + hh) * td;
                               const float* xr = xn->value.data() + (i * heads + hh) * td;
                               double acc = 0.0;
                               for (int64_t q = 0; q < td; ++q) {
                                   if (gx) (*gx)[static_cast<size_t>((i * heads + hh) * td + q)] += gr[q] * sv;
                                   acc += static_cast<double>(gr[q]) * xr[q];
                               }
                               if (gsv) (*gsv)[static_cast<size_t>(hh)] += static_cast<float>(acc);
                           }
                       }
                   });
}

Tensor rope(const Tensor& x, const RopeTable& table) {
    if (x.ndim() != 4) throw ShapeError("rope: expects x[B,H,T,D]");
    const int64_t b = x.dim(0), heads = x.dim(1), t = x.dim(2), d = x.dim(3);
    if (t != table.positions || d != table.half * 2) {
        throw ShapeError("rope: table does not match input");
    }
    const int64_t half = table.half;
    std::vector<float> out(x.numel());
    for (int64_t i = 0; i < b * heads; ++i) {
        for (int64_t j = 0; j < t; ++j) {
            const float* xr = x.data().data() + (i * t + j) * d;
            float* yr = out.data() + (i * t + j) * d;
            const float* cs = table.cos_v.data() + j * half;
            const float* sn = table.sin_v.data() + j * half;
            for (int64_t p = 0; p < half; ++p) {
                const float x0 = xr[2 * p], x1 = xr[2 * p + 1];
                yr[2 * p] = x0 * cs[p] - x1 * sn[p];
                yr[2 * p + 1] = x0 * sn[p] + x1 * cs[p];
            }
        }
    }
    auto xn = x.node();
    auto cos_v = std::make_shared<std::vector<float>>(table.cos_v);
    auto sin_v = std::make_shared<std::vector<float>>(table.sin_v);
    return make_op("rope", x.shape(), std::move(out), {x},
                   [xn, cos_v, sin_v, b, heads, t, d, half](const std::vector<float>& g,
                                                            Gradients& gs) {
                       if (!xn->requires_grad) return;
                       auto& gx = gs.buffer(xn, xn->shape);
                       for (int64_t i = 0; i < b * heads; ++i) {
                           for (int64_t j = 0; j < t; ++j) {
                               const float* gr = g.data() + (i * t + j) * d;
                               float* gxr = gx.data() + (i * t + j) * d;
                               const float* cs = cos_v->data() + j * half;
                               const float* sn = sin_v->data() + j * half;
                               for (int64_t p = 0; p < half; ++p) {
                                   const float g0 = gr[2 * p], g1 = gr[2 * p + 1];
                                   gxr[2 * p] += g0 * cs[p] + g1 * sn[p];
                                   gxr[2 * p + 1] += -g0 * sn[p] + g1 * cs[p];
                               }
                           }
                       }
                   });
}

Tensor value_residual_mix(const Tensor& v, const Tensor& v_first, const Tensor& alpha) {
    check_same_shape("value_residual_mix", v, v_first);
    if (alpha.numel() != 1) throw ShapeError("value_residual_mix: alpha must be scalar");
    const float lam = 1.0f / (1.0f + std::exp(-alpha.data()[0]));
    std::vector<float> out(v.numel());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = lam * v.data()[i] + (1.0f - lam) * v_first.data()[i];
    }
    auto vn = v.node();
    auto fn = v_first.node();
    auto an = alpha.node();
    return make_op("value_residual_mix", v.shape(), std::move(out), {v, v_first, alpha},
                   [vn, fn, an, lam](const std::vector<float>& g, Gradients& gs) {
                       if (vn->requires_grad) axpy(gs.buffer(vn, vn->shape), g, lam);
                       if (fn->requires_grad) axpy(gs.buffer(fn, fn->shape), g, 1.0f - lam);
                       if (an->requires_grad) {
                           double acc = 0.0;
                           for (size_t i = 0; i < g.size(); ++i) {
                               acc += static_cast<double>(g[i]) * (vn->value[i] - fn->value[i]);
                           }
                           gs.buffer(an, an->shape)[0] +=
                               static_cast<float>(acc) * lam * (1.0f - lam);
                       }
                   });
}

Tensor dropout(const Tensor& x, float p, Rng& rng, bool training) {
    if (!training || p <= 0.0f) return x;
    if (p >= 1.0f) throw ShapeError("dropout: p must be < 1");
    const float keep = 1.0f - p;
    const float inv_keep = 1.0f / keep;
    auto mask = std::make_shared<std::vector<float>>(x.numel());
    std::vector<float> out(x.numel());
    for (size_t i = 0; i < out.size(); ++i) {
        const float m = (rng.uniform() < keep) ? inv_keep : 0.0f;
        (*mask)[i] = m;
        out[i] = x.data()[i] * m;
    }
    auto xn = x.node();
    return make_op("dropout", x.shape(), std::move(out), {x},
                   [xn, mask](const std::vector<float>& g, Gradients& gs) {
                       if (!xn->requires_grad) return;
                       auto& gx = gs.buffer(xn, xn->shape);
                       for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
                   });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    auto xn = x.node();
    return make_op("sum", {1}, {static_cast<float>(acc)}, {x},
                   [xn](const std::vector<float>& g, Gradients& gs) {
                       if (!xn->requires_grad) return;
                       auto& gx = gs.buffer(xn, xn->shape);
                       for (auto& v : gx) v += g[0];
                   });
}

Tensor mean(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    const float inv = 1.0f / static_cast<float>(x.numel());
    auto xn = x.node();
    return make_op("mean", {1}, {static_cast<float>(acc / static_cast<double>(x.numel()))}, {x},
                   [xn, inv](const std::vector<float>& g, Gradients& gs) {
                       if (!xn->requires_grad) return;
                       auto& gx = gs.buffer(xn, xn->shape);
                       for (auto& v : gx) v += g[0] * inv;
                   });
}

Tensor mse(const Tensor& a, const Tensor& b) {
    check_same_shape("mse", a, b);
    double acc = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        acc += d * d;
    }
    const float inv = 1.0f / static_cast<float>(a.numel());
    auto an = a.node();
    auto bn = b.node();
    return make_op("mse", {1}, {static_cast<float>(acc / static_cast<double>(a.numel()))}, {a, b},
                   [an, bn, inv](const std::vector<float>& g, Gradients& gs) {
                       const float c = 2.0f * g[0] * inv;
                       if (an->requires_grad) {
                           auto& ga = gs.buffer(an, an->shape);
                           for (size_t i = 0; i < ga.size(); ++i) {
                               ga[i] += c * (an->value[i] - bn->value[i]);
                           }
                       }
                       if (bn->requires_grad) {
                           auto& gb = gs.buffer(bn, bn->shape);
                           for (size_t i = 0; i < gb.size(); ++i) {
                               gb[i] -= c * (an->value[i] - bn->value[i]);
                           }
                       }
                   });
}

Tensor l1(const Tensor& a, const Tensor& b) {
    check_same_shape("l1", a, b);
    double acc = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i) {
        acc += std::abs(static_cast<double>(a.data()[i]) - b.data()[i]);
    }
    const float inv = 1.0f / static_cast<float>(a.numel());
    auto an = a.node();
    auto bn = b.node();
    return make_op("l1", {1}, {static_cast<float>(acc / static_cast<double>(a.numel()))}, {a, b},
                   [an, bn, inv](const std::vector<float>& g, Gradients& gs) {
                       const float c = g[0] * inv;
                       auto sgn = [](float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); };
                       if (an->requires_grad) {
                           auto& ga = gs.buffer(an, an->shape);
                           for (size_t i = 0; i < ga.size(); ++i) {
                               ga[i] += c * sgn(an->value[i] - bn->value[i]);
                           }
                       }
                       if (bn->requires_grad) {
                           auto& gb = gs.buffer(bn, bn->shape);
                           for (size_t i = 0; i < gb.size(); ++i) {
                               gb[i] -= c * sgn(an->value[i] - bn->value[i]);
                           }
                       }
                   });
}

Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& weight) {
    check_same_shape("masked_mse", pred, target);
    check_same_shape("masked_mse", pred, weight);
    double acc = 0.0, wsum = 0.0;
    for (size_t i = 0; i < pred.data().size(); ++i) {
        const double d = static_cast<double>(pred.data()[i]) - target.data()[i];
        acc += weight.data()[i] * d * d;
        wsum += weight.data()[i];
    }
    if (wsum <= 0.0) throw ShapeError("masked_mse: weight mass is zero");
    const float inv = static_cast<float>(1.0 / wsum);
    auto pn = pred.node();
    auto tn = target.node();
    auto wn = weight.node();
    return make_op("masked_mse", {1}, {static_cast<float>(acc / wsum)}, {pred, target, weight},
                   [pn, tn, wn, inv](const std::vector<float>& g, Gradients& gs) {
                       const float c = 2.0f * g[0] * inv;
                       if (pn->requires_grad) {
                           auto& gp = gs.buffer(pn, pn->shape);
                           for (size_t i = 0; i < gp.size(); ++i) {
                               gp[i] += c * wn->value[i] * (pn->value[i] - tn->value[i]);
                           }
                       }
                       if (tn->requires_grad) {
                           auto& gt = gs.buffer(tn, tn->shape);
                           for (size_t i = 0; i < gt.size(); ++i) {
                               gt[i] -= c * wn->value[i] * (pn->value[i] - tn->value[i]);
                           }
                       }
                   });
}

}  // namespace ops

}  // namespace latemu
