// Copyright 2026 The Splitformer C++ Authors
// Forward kernels and adjoints for the primitive set. Matrix products go
// through Eigen; everything else is straightforward loops.
//
// Licensed under the Apache License, Version 2.0

#include "splitformer/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace splitformer {

namespace {

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<EMat<S>>;
template <typename S>
using MapConstMat = Eigen::Map<const EMat<S>>;

std::vector<int64_t> row_major_strides(const Shape& shape) {
    std::vector<int64_t> strides(shape.size(), 1);
    for (int64_t i = static_cast<int64_t>(shape.size()) - 2; i >= 0; --i) {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    return strides;
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (size_t i = 0; i < rank; ++i) {
        int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(strformat("%s: shapes %s and %s do not broadcast at axis -%zu",
                                       op, shape_str(a).c_str(), shape_str(b).c_str(), i + 1));
        }
        out[rank - 1 - i] = std::max(da, db);
    }
    return out;
}

// Strides of `shape` right-aligned into `full`, 0 on broadcast axes.
std::vector<int64_t> broadcast_strides(const Shape& shape, const Shape& full) {
    auto strides = row_major_strides(shape);
    std::vector<int64_t> out(full.size(), 0);
    size_t off = full.size() - shape.size();
    for (size_t i = 0; i < shape.size(); ++i) {
        out[off + i] = shape[i] == 1 ? 0 : strides[i];
    }
    return out;
}

template <typename S, typename F>
std::vector<S> broadcast_apply(const Shape& full, const Tensor<S>& a, const Tensor<S>& b, F f) {
    int64_t n = shape_numel(full);
    std::vector<S> out(static_cast<size_t>(n));
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    if (a.shape() == b.shape()) {
        for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = f(pa[i], pb[i]);
        return out;
    }
    auto sa = broadcast_strides(a.shape(), full);
    auto sb = broadcast_strides(b.shape(), full);
    std::vector<int64_t> idx(full.size(), 0);
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0; i < n; ++i) {
        out[static_cast<size_t>(i)] = f(pa[oa], pb[ob]);
        for (int64_t ax = static_cast<int64_t>(full.size()) - 1; ax >= 0; --ax) {
            oa += sa[ax];
            ob += sb[ax];
            if (++idx[ax] < full[ax]) break;
            oa -= sa[ax] * full[ax];
            ob -= sb[ax] * full[ax];
            idx[ax] = 0;
        }
    }
    return out;
}

// Accumulates a full-shape gradient into a (possibly broadcast) operand grad.
template <typename S>
void reduce_accumulate(const std::vector<S>& gfull, const Shape& full, TensorImpl<S>& dst) {
    dst.ensure_grad();
    if (dst.shape == full) {
        for (size_t i = 0; i < gfull.size(); ++i) dst.grad[i] += gfull[i];
        return;
    }
    auto sd = broadcast_strides(dst.shape, full);
    std::vector<int64_t> idx(full.size(), 0);
    int64_t od = 0;
    int64_t n = shape_numel(full);
    for (int64_t i = 0; i < n; ++i) {
        dst.grad[static_cast<size_t>(od)] += gfull[static_cast<size_t>(i)];
        for (int64_t ax = static_cast<int64_t>(full.size()) - 1; ax >= 0; --ax) {
            od += sd[ax];
            if (++idx[ax] < full[ax]) break;
            od -= sd[ax] * full[ax];
            idx[ax] = 0;
        }
    }
}

// outer x extent(axis) x inner decomposition of a row-major tensor.
struct AxisSplit {
    int64_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, int64_t axis) {
    AxisSplit s;
    for (int64_t i = 0; i < static_cast<int64_t>(shape.size()); ++i) {
        if (i < axis) s.outer *= shape[i];
        else if (i == axis) s.axis = shape[i];
        else s.inner *= shape[i];
    }
    return s;
}

template <typename S>
void check_axis(const char* op, const Tensor<S>& x, int64_t axis) {
    if (axis < 0 || axis >= x.rank()) {
        throw ShapeError(strformat("%s: axis %lld out of range for shape %s", op,
                                   static_cast<long long>(axis),
                                   shape_str(x.shape()).c_str()));
    }
}

template <typename S>
S stable_sigmoid(S v) {
    if (v >= S(0)) {
        return S(1) / (S(1) + std::exp(-v));
    }
    S e = std::exp(v);
    return e / (S(1) + e);
}

}  // namespace

template <typename S>
Tensor<S> make_op_node(Shape shape, std::vector<S> data,
                       const std::vector<Tensor<S>>& parents,
                       std::function<void(const TensorImpl<S>&)> backward_fn) {
    auto out = Tensor<S>::from_data(std::move(shape), std::move(data), false);
    bool needs_grad = false;
    for (const auto& p : parents) {
        if (p.defined() && p.requires_grad()) needs_grad = true;
    }
    if (grad_mode_enabled() && needs_grad) {
        auto impl = out.impl();
        impl->requires_grad = true;
        impl->parents.reserve(parents.size());
        for (const auto& p : parents) impl->parents.push_back(p.impl());
        impl->backward_fn = std::move(backward_fn);
    }
    return out;
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() == 2 && b.rank() == 2) {
        if (a.dim(1) != b.dim(0)) {
            throw ShapeError(strformat("matmul: inner dimensions disagree, %s (axis 1) vs %s (axis 0)",
                                       shape_str(a.shape()).c_str(),
                                       shape_str(b.shape()).c_str()));
        }
        int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        std::vector<S> out(static_cast<size_t>(m * n));
        MapConstMat<S> A(a.data().data(), m, k);
        MapConstMat<S> B(b.data().data(), k, n);
        MapMat<S>(out.data(), m, n).noalias() = A * B;
        auto ai = a.impl();
        auto bi = b.impl();
        return make_op_node<S>({m, n}, std::move(out), {a, b},
                               [ai, bi, m, k, n](const TensorImpl<S>& o) {
            MapConstMat<S> G(o.grad.data(), m, n);
            if (ai->requires_grad) {
                ai->ensure_grad();
                MapConstMat<S> B(bi->data.data(), k, n);
                MapMat<S>(ai->grad.data(), m, k).noalias() += G * B.transpose();
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                MapConstMat<S> A(ai->data.data(), m, k);
                MapMat<S>(bi->grad.data(), k, n).noalias() += A.transpose() * G;
            }
        });
    }
    if (a.rank() == 3 && b.rank() == 3) {
        if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
            throw ShapeError(strformat("matmul: batched shapes disagree, %s vs %s",
                                       shape_str(a.shape()).c_str(),
                                       shape_str(b.shape()).c_str()));
        }
        int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
        std::vector<S> out(static_cast<size_t>(bs * m * n));
        for (int64_t i = 0; i < bs; ++i) {
            MapConstMat<S> A(a.data().data() + i * m * k, m, k);
            MapConstMat<S> B(b.data().data() + i * k * n, k, n);
            MapMat<S>(out.data() + i * m * n, m, n).noalias() = A * B;
        }
        auto ai = a.impl();
        auto bi = b.impl();
        return make_op_node<S>({bs, m, n}, std::move(out), {a, b},
                               [ai, bi, bs, m, k, n](const TensorImpl<S>& o) {
            for (int64_t i = 0; i < bs; ++i) {
                MapConstMat<S> G(o.grad.data() + i * m * n, m, n);
                if (ai->requires_grad) {
                    ai->ensure_grad();
                    MapConstMat<S> B(bi->data.data() + i * k * n, k, n);
                    MapMat<S>(ai->grad.data() + i * m * k, m, k).noalias() += G * B.transpose();
                }
                if (bi->requires_grad) {
                    bi->ensure_grad();
                    MapConstMat<S> A(ai->data.data() + i * m * k, m, k);
                    MapMat<S>(bi->grad.data() + i * k * n, k, n).noalias() += A.transpose() * G;
                }
            }
        });
    }
    throw ShapeError(strformat("matmul: unsupported ranks %lld and %lld",
                               static_cast<long long>(a.rank()),
                               static_cast<long long>(b.rank())));
}

namespace {

template <typename S, typename FwdF>
Tensor<S> binary_broadcast(const char* op, const Tensor<S>& a, const Tensor<S>& b, FwdF f,
                           bool is_subtract, bool is_multiply) {
    Shape full = broadcast_shape(op, a.shape(), b.shape());
    auto out = broadcast_apply(full, a, b, f);
    auto ai = a.impl();
    auto bi = b.impl();
    Tensor<S> av = a, bv = b;
    return make_op_node<S>(full, std::move(out), {a, b},
                           [ai, bi, av, bv, full, is_subtract, is_multiply](const TensorImpl<S>& o) {
        int64_t n = shape_numel(full);
        if (ai->requires_grad) {
            if (is_multiply) {
                Tensor<S> g = Tensor<S>::from_data(full,
                        std::vector<S>(o.grad.begin(), o.grad.end()));
                auto ga = broadcast_apply(full, g, bv, [](S u, S v) { return u * v; });
                reduce_accumulate(ga, full, *ai);
            } else {
                std::vector<S> g(o.grad.begin(), o.grad.end());
                reduce_accumulate(g, full, *ai);
            }
        }
        if (bi->requires_grad) {
            std::vector<S> g(static_cast<size_t>(n));
            if (is_multiply) {
                Tensor<S> gt = Tensor<S>::from_data(full,
                        std::vector<S>(o.grad.begin(), o.grad.end()));
                g = broadcast_apply(full, gt, av, [](S u, S v) { return u * v; });
            } else {
                S sign = is_subtract ? S(-1) : S(1);
                for (int64_t i = 0; i < n; ++i) g[static_cast<size_t>(i)] = sign * o.grad[static_cast<size_t>(i)];
            }
            reduce_accumulate(g, full, *bi);
        }
    });
}

}  // namespace

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_broadcast<S>("add", a, b, [](S u, S v) { return u + v; }, false, false);
}

template <typename S>
Tensor<S> subtract(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_broadcast<S>("subtract", a, b, [](S u, S v) { return u - v; }, true, false);
}

template <typename S>
Tensor<S> multiply(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_broadcast<S>("multiply", a, b, [](S u, S v) { return u * v; }, false, true);
}

template <typename S>
Tensor<S> scalar_mul(const Tensor<S>& x, S c) {
    std::vector<S> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= c;
    auto xi = x.impl();
    return make_op_node<S>(x.shape(), std::move(out), {x}, [xi, c](const TensorImpl<S>& o) {
        xi->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) xi->grad[i] += c * o.grad[i];
    });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x, std::vector<int64_t> perm) {
    int64_t r = x.rank();
    if (perm.empty()) {
        if (r < 2) throw ShapeError("transpose: rank must be >= 2 without an explicit perm");
        perm.resize(static_cast<size_t>(r));
        std::iota(perm.begin(), perm.end(), 0);
        std::swap(perm[static_cast<size_t>(r - 2)], perm[static_cast<size_t>(r - 1)]);
    }
    if (static_cast<int64_t>(perm.size()) != r) {
        throw ShapeError(strformat("transpose: perm has %zu entries for rank-%lld input",
                                   perm.size(), static_cast<long long>(r)));
    }
    Shape oshape(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) oshape[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
    auto src_strides = row_major_strides(x.shape());
    std::vector<int64_t> step(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) step[static_cast<size_t>(i)] = src_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];

    int64_t n = x.numel();
    std::vector<S> out(static_cast<size_t>(n));
    const S* px = x.data().data();
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t off = 0;
    for (int64_t i = 0; i < n; ++i) {
        out[static_cast<size_t>(i)] = px[off];
        for (int64_t ax = r - 1; ax >= 0; --ax) {
            off += step[static_cast<size_t>(ax)];
            if (++idx[static_cast<size_t>(ax)] < oshape[static_cast<size_t>(ax)]) break;
            off -= step[static_cast<size_t>(ax)] * oshape[static_cast<size_t>(ax)];
            idx[static_cast<size_t>(ax)] = 0;
        }
    }
    auto xi = x.impl();
    return make_op_node<S>(oshape, std::move(out), {x},
                           [xi, oshape, step, r](const TensorImpl<S>& o) {
        xi->ensure_grad();
        std::vector<int64_t> idx(static_cast<size_t>(r), 0);
        int64_t off = 0;
        int64_t n = static_cast<int64_t>(o.grad.size());
        for (int64_t i = 0; i < n; ++i) {
            xi->grad[static_cast<size_t>(off)] += o.grad[static_cast<size_t>(i)];
            for (int64_t ax = r - 1; ax >= 0; --ax) {
                off += step[static_cast<size_t>(ax)];
                if (++idx[static_cast<size_t>(ax)] < oshape[static_cast<size_t>(ax)]) break;
                off -= step[static_cast<size_t>(ax)] * oshape[static_cast<size_t>(ax)];
                idx[static_cast<size_t>(ax)] = 0;
            }
        }
    });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError(strformat("reshape: %s has %lld elements, target %s has %lld",
                                   shape_str(x.shape()).c_str(),
                                   static_cast<long long>(x.numel()),
                                   shape_str(shape).c_str(),
                                   static_cast<long long>(shape_numel(shape))));
    }
    std::vector<S> out(x.data().begin(), x.data().end());
    auto xi = x.impl();
    return make_op_node<S>(std::move(shape), std::move(out), {x}, [xi](const TensorImpl<S>& o) {
        xi->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) xi->grad[i] += o.grad[i];
    });
}

template <typename S>
Tensor<S> concatenate(const std::vector<Tensor<S>>& xs, int64_t axis) {
    if (xs.empty()) throw ShapeError("concatenate: empty input list");
    check_axis("concatenate", xs[0], axis);
    Shape oshape = xs[0].shape();
    int64_t total_axis = 0;
    for (const auto& x : xs) {
        if (x.rank() != xs[0].rank()) {
            throw ShapeError("concatenate: rank mismatch across inputs");
        }
        for (int64_t i = 0; i < x.rank(); ++i) {
            if (i != axis && x.dim(i) != xs[0].dim(i)) {
                throw ShapeError(strformat("concatenate: shape %s differs from %s off axis %lld",
                                           shape_str(x.shape()).c_str(),
                                           shape_str(xs[0].shape()).c_str(),
                                           static_cast<long long>(axis)));
            }
        }
        total_axis += x.dim(axis);
    }
    oshape[static_cast<size_t>(axis)] = total_axis;
    auto os = split_at(oshape, axis);
    std::vector<S> out(static_cast<size_t>(shape_numel(oshape)));
    int64_t offset_axis = 0;
    for (const auto& x : xs) {
        auto s = split_at(x.shape(), axis);
        const S* px = x.data().data();
        for (int64_t o = 0; o < s.outer; ++o) {
            S* dst = out.data() + (o * os.axis + offset_axis) * os.inner;
            const S* src = px + o * s.axis * s.inner;
            std::copy(src, src + s.axis * s.inner, dst);
        }
        offset_axis += s.axis;
    }
    std::vector<std::shared_ptr<TensorImpl<S>>> impls;
    for (const auto& x : xs) impls.push_back(x.impl());
    return make_op_node<S>(oshape, std::move(out), xs, [impls, os, axis](const TensorImpl<S>& o) {
        int64_t offset_axis = 0;
        for (const auto& xi : impls) {
            auto s = split_at(xi->shape, axis);
            if (xi->requires_grad) {
                xi->ensure_grad();
                for (int64_t ou = 0; ou < s.outer; ++ou) {
                    const S* src = o.grad.data() + (ou * os.axis + offset_axis) * os.inner;
                    S* dst = xi->grad.data() + ou * s.axis * s.inner;
                    for (int64_t i = 0; i < s.axis * s.inner; ++i) dst[i] += src[i];
                }
            }
            offset_axis += s.axis;
        }
    });
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, int64_t axis, int64_t start, int64_t end) {
    check_axis("slice", x, axis);
    if (start < 0 || end > x.dim(axis) || start >= end) {
        throw ShapeError(strformat("slice: range [%lld,%lld) invalid for axis %lld of %s",
                                   static_cast<long long>(start), static_cast<long long>(end),
                                   static_cast<long long>(axis),
                                   shape_str(x.shape()).c_str()));
    }
    Shape oshape = x.shape();
    oshape[static_cast<size_t>(axis)] = end - start;
    auto s = split_at(x.shape(), axis);
    int64_t len = end - start;
    std::vector<S> out(static_cast<size_t>(shape_numel(oshape)));
    const S* px = x.data().data();
    for (int64_t o = 0; o < s.outer; ++o) {
        const S* src = px + (o * s.axis + start) * s.inner;
        std::copy(src, src + len * s.inner, out.data() + o * len * s.inner);
    }
    auto xi = x.impl();
    return make_op_node<S>(oshape, std::move(out), {x}, [xi, s, start, len](const TensorImpl<S>& o) {
        xi->ensure_grad();
        for (int64_t ou = 0; ou < s.outer; ++ou) {
            const S* src = o.grad.data() + ou * len * s.inner;
            S* dst = xi->grad.data() + (ou * s.axis + start) * s.inner;
            for (int64_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
        }
    });
}

template <typename S>
Tensor<S> pad(const Tensor<S>& x, int64_t axis, int64_t before, int64_t after) {
    check_axis("pad", x, axis);
    if (before < 0 || after < 0) {
        throw ShapeError("pad: negative pad amounts");
    }
    Shape oshape = x.shape();
    oshape[static_cast<size_t>(axis)] += before + after;
    auto s = split_at(x.shape(), axis);
    int64_t oaxis = s.axis + before + after;
    std::vector<S> out(static_cast<size_t>(shape_numel(oshape)), S(0));
    const S* px = x.data().data();
    for (int64_t o = 0; o < s.outer; ++o) {
        const S* src = px + o * s.axis * s.inner;
        S* dst = out.data() + (o * oaxis + before) * s.inner;
        std::copy(src, src + s.axis * s.inner, dst);
    }
    auto xi = x.impl();
    return make_op_node<S>(oshape, std::move(out), {x}, [xi, s, before, oaxis](const TensorImpl<S>& o) {
        xi->ensure_grad();
        for (int64_t ou = 0; ou < s.outer; ++ou) {
            const S* src = o.grad.data() + (ou * oaxis + before) * s.inner;
            S* dst = xi->grad.data() + ou * s.axis * s.inner;
            for (int64_t i = 0; i < s.axis * s.inner; ++i) dst[i] += src[i];
        }
    });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
    if (x.rank() < 1) throw ShapeError("softmax: rank must be >= 1");
    int64_t d = x.dim(x.rank() - 1);
    int64_t rows = x.numel() / d;
    std::vector<S> out(static_cast<size_t>(x.numel()));
    const S* px = x.data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const S* in = px + r * d;
        S* y = out.data() + r * d;
        S mx = in[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
        S sum = S(0);
        for (int64_t j = 0; j < d; ++j) {
            y[j] = std::exp(in[j] - mx);
            sum += y[j];
        }
        S inv = S(1) / sum;
        for (int64_t j = 0; j < d; ++j) y[j] *= inv;
    }
    auto xi = x.impl();
    return make_op_node<S>(x.shape(), std::move(out), {x}, [xi, rows, d](const TensorImpl<S>& o) {
        xi->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const S* y = o.data.data() + r * d;
            const S* g = o.grad.data() + r * d;
            S dot = S(0);
            for (int64_t j = 0; j < d; ++j) dot += y[j] * g[j];
            S* dx = xi->grad.data() + r * d;
            for (int64_t j = 0; j < d; ++j) dx[j] += y[j] * (g[j] - dot);
        }
    });
}

template <typename S>
Tensor<S> log_softmax(const Tensor<S>& x) {
    if (x.rank() < 1) throw ShapeError("log_softmax: rank must be >= 1");
    int64_t d = x.dim(x.rank() - 1);
    int64_t rows = x.numel() / d;
    std::vector<S> out(static_cast<size_t>(x.numel()));
    const S* px = x.data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const S* in = px + r * d;
        S* y = out.data() + r * d;
        S mx = in[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
        S sum = S(0);
        for (int64_t j = 0; j < d; ++j) sum += std::exp(in[j] - mx);
        S lse = mx + std::log(sum);
        for (int64_t j = 0; j < d; ++j) y[j] = in[j] - lse;
    }
    auto xi = x.impl();
    return make_op_node<S>(x.shape(), std::move(out), {x}, [xi, rows, d](const TensorImpl<S>& o) {
        xi->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const S* y = o.data.data() + r * d;
            const S* g = o.grad.data() + r * d;
            S gsum = S(0);
            for (int64_t j = 0; j < d; ++j) gsum += g[j];
            S* dx = xi->grad.data() + r * d;
            for (int64_t j = 0; j < d; ++j) dx[j] += g[j] - std::exp(y[j]) * gsum;
        }
    });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, S eps) {
    if (x.rank() < 1) throw ShapeError("layer_norm: rank must be >= 1");
    int64_t d = x.dim(x.rank() - 1);
    if (gain.numel() != d || bias.numel() != d) {
        throw ShapeError(strformat("layer_norm: gain/bias must have %lld elements (last axis of %s)",
                                   static_cast<long long>(d), shape_str(x.shape()).c_str()));
    }
    int64_t rows = x.numel() / d;
    std::vector<S> out(static_cast<size_t>(x.numel()));
    std::vector<S> xhat(static_cast<size_t>(x.numel()));
    std::vector<S> invstd(static_cast<size_t>(rows));
    const S* px = x.data().data();
    const S* pg = gain.data().data();
    const S* pb = bias.data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const S* in = px + r * d;
        S mean = S(0);
        for (int64_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<S>(d);
        S var = S(0);
        for (int64_t j = 0; j < d; ++j) {
            S c = in[j] - mean;
            var += c * c;
        }
        var /= static_cast<S>(d);
        S inv = S(1) / std::sqrt(var + eps);
        invstd[static_cast<size_t>(r)] = inv;
        for (int64_t j = 0; j < d; ++j) {
            S xh = (in[j] - mean) * inv;
            xhat[static_cast<size_t>(r * d + j)] = xh;
            out[static_cast<size_t>(r * d + j)] = xh * pg[j] + pb[j];
        }
    }
    auto xi = x.impl();
    auto gi = gain.impl();
    auto bi = bias.impl();
    return make_op_node<S>(x.shape(), std::move(out), {x, gain, bias},
                           [xi, gi, bi, rows, d, xhat = std::move(xhat),
                            invstd = std::move(invstd)](const TensorImpl<S>& o) {
        const S* pg = gi->data.data();
        for (int64_t r = 0; r < rows; ++r) {
            const S* g = o.grad.data() + r * d;
            const S* xh = xhat.data() + r * d;
            if (xi->requires_grad) {
                xi->ensure_grad();
                S mean_h = S(0), mean_hx = S(0);
                for (int64_t j = 0; j < d; ++j) {
                    S h = g[j] * pg[j];
                    mean_h += h;
                    mean_hx += h * xh[j];
                }
                mean_h /= static_cast<S>(d);
                mean_hx /= static_cast<S>(d);
                S inv = invstd[static_cast<size_t>(r)];
                S* dx = xi->grad.data() + r * d;
                for (int64_t j = 0; j < d; ++j) {
                    dx[j] += (g[j] * pg[j] - mean_h - xh[j] * mean_hx) * inv;
                }
            }
            if (gi->requires_grad) {
                gi->ensure_grad();
                for (int64_t j = 0; j < d; ++j) gi->grad[static_cast<size_t>(j)] += g[j] * xh[j];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (int64_t j = 0; j < d; ++j) bi->grad[static_cast<size_t>(j)] += g[j];
            }
        }
    });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    std::vector<S> out(x.data().begin(), x.data().end());
    for (auto& v : out) v = v > S(0) ? v : S(0);
    auto xi = x.impl();
    return make_op_node<S>(x.shape(), std::move(out), {x}, [xi](const TensorImpl<S>& o) {
        xi->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            if (xi->data[i] > S(0)) xi->grad[i] += o.grad[i];
        }
    });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    std::vector<S> out(x.data().begin(), x.data().end());
    for (auto& v : out) v = stable_sigmoid(v);
    auto xi = x.impl();
    return make_op_node<S>(x.shape(), std::move(out), {x}, [xi](const TensorImpl<S>& o) {
        xi->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            S y = o.data[i];
            xi->grad[i] += o.grad[i] * y * (S(1) - y);
        }
    });
}

template <typename S>
Tensor<S> swish(const Tensor<S>& x) {
    std::vector<S> out(static_cast<size_t>(x.numel()));
    const S* px = x.data().data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = px[i] * stable_sigmoid(px[i]);
    auto xi = x.impl();
    return make_op_node<S>(x.shape(), std::move(out), {x}, [xi](const TensorImpl<S>& o) {
        xi->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            S s = stable_sigmoid(xi->data[i]);
            xi->grad[i] += o.grad[i] * s * (S(1) + xi->data[i] * (S(1) - s));
        }
    });
}

template <typename S>
Tensor<S> glu(const Tensor<S>& x) {
    int64_t d = x.dim(x.rank() - 1);
    if (d % 2 != 0) {
        throw ShapeError(strformat("glu: last axis of %s must be even",
                                   shape_str(x.shape()).c_str()));
    }
    int64_t half = d / 2;
    int64_t rows = x.numel() / d;
    Shape oshape = x.shape();
    oshape.back() = half;
    std::vector<S> out(static_cast<size_t>(rows * half));
    const S* px = x.data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const S* a = px + r * d;
        const S* g = a + half;
        S* y = out.data() + r * half;
        for (int64_t j = 0; j < half; ++j) y[j] = a[j] * stable_sigmoid(g[j]);
    }
    auto xi = x.impl();
    return make_op_node<S>(oshape, std::move(out), {x}, [xi, rows, d, half](const TensorImpl<S>& o) {
        xi->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const S* a = xi->data.data() + r * d;
            const S* gate = a + half;
            const S* g = o.grad.data() + r * half;
            S* da = xi->grad.data() + r * d;
            S* dgate = da + half;
            for (int64_t j = 0; j < half; ++j) {
                S s = stable_sigmoid(gate[j]);
                da[j] += g[j] * s;
                dgate[j] += g[j] * a[j] * s * (S(1) - s);
            }
        }
    });
}

template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 int64_t stride, int64_t padding) {
    if (x.rank() != 2 || w.rank() != 3 || b.rank() != 1) {
        throw ShapeError("conv1d: expects x [TxC_in], w [C_outxC_inxK], b [C_out]");
    }
    int64_t T = x.dim(0), cin = x.dim(1);
    int64_t cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin) {
        throw ShapeError(strformat("conv1d: weight expects %lld input channels, x has %lld (axis 1)",
                                   static_cast<long long>(w.dim(1)),
                                   static_cast<long long>(cin)));
    }
    if (b.dim(0) != cout) {
        throw ShapeError("conv1d: bias length must equal output channels");
    }
    if (stride < 1 || padding < 0) throw ShapeError("conv1d: stride must be >=1, padding >=0");
    int64_t t_out = (T + 2 * padding - k) / stride + 1;
    if (t_out < 1) {
        throw ShapeError(strformat("conv1d: no output frames for T=%lld, K=%lld, stride=%lld, pad=%lld",
                                   static_cast<long long>(T), static_cast<long long>(k),
                                   static_cast<long long>(stride),
                                   static_cast<long long>(padding)));
    }

    // im2col: [t_out x cin*k] rows of the receptive fields, then one gemm.
    std::vector<S> cols(static_cast<size_t>(t_out * cin * k), S(0));
    const S* px = x.data().data();
    for (int64_t to = 0; to < t_out; ++to) {
        S* row = cols.data() + to * cin * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            int64_t ti = to * stride + kk - padding;
            if (ti < 0 || ti >= T) continue;
            const S* src = px + ti * cin;
            for (int64_t ci = 0; ci < cin; ++ci) row[ci * k + kk] = src[ci];
        }
    }
    std::vector<S> out(static_cast<size_t>(t_out * cout));
    {
        MapConstMat<S> C(cols.data(), t_out, cin * k);
        MapConstMat<S> W(w.data().data(), cout, cin * k);
        MapMat<S> O(out.data(), t_out, cout);
        O.noalias() = C * W.transpose();
        const S* pb = b.data().data();
        for (int64_t to = 0; to < t_out; ++to) {
            S* y = out.data() + to * cout;
            for (int64_t co = 0; co < cout; ++co) y[co] += pb[co];
        }
    }
    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = b.impl();
    return make_op_node<S>({t_out, cout}, std::move(out), {x, w, b},
                           [xi, wi, bi, cols = std::move(cols), T, cin, cout, k, stride, padding,
                            t_out](const TensorImpl<S>& o) {
        MapConstMat<S> G(o.grad.data(), t_out, cout);
        if (wi->requires_grad) {
            wi->ensure_grad();
            MapConstMat<S> C(cols.data(), t_out, cin * k);
            MapMat<S>(wi->grad.data(), cout, cin * k).noalias() += G.transpose() * C;
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (int64_t to = 0; to < t_out; ++to) {
                const S* g = o.grad.data() + to * cout;
                for (int64_t co = 0; co < cout; ++co) bi->grad[static_cast<size_t>(co)] += g[co];
            }
        }
        if (xi->requires_grad) {
            xi->ensure_grad();
            EMat<S> dcols(t_out, cin * k);
            MapConstMat<S> W(wi->data.data(), cout, cin * k);
            dcols.noalias() = G * W;
            for (int64_t to = 0; to < t_out; ++to) {
                const S* row = dcols.data() + to * cin * k;
                for (int64_t kk = 0; kk < k; ++kk) {
                    int64_t ti = to * stride + kk - padding;
                    if (ti < 0 || ti >= T) continue;
                    S* dst = xi->grad.data() + ti * cin;
                    for (int64_t ci = 0; ci < cin; ++ci) dst[ci] += row[ci * k + kk];
                }
            }
        }
    });
}

template <typename S>
Tensor<S> depthwise_conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                           int64_t padding) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1) {
        throw ShapeError("depthwise_conv1d: expects x [TxC], w [CxK], b [C]");
    }
    int64_t T = x.dim(0), c = x.dim(1), k = w.dim(1);
    if (w.dim(0) != c || b.dim(0) != c) {
        throw ShapeError(strformat("depthwise_conv1d: channel mismatch, x %s vs w %s",
                                   shape_str(x.shape()).c_str(), shape_str(w.shape()).c_str()));
    }
    int64_t t_out = T + 2 * padding - k + 1;
    if (t_out < 1) throw ShapeError("depthwise_conv1d: no output frames");
    std::vector<S> out(static_cast<size_t>(t_out * c));
    const S* px = x.data().data();
    const S* pw = w.data().data();
    const S* pb = b.data().data();
    for (int64_t to = 0; to < t_out; ++to) {
        S* y = out.data() + to * c;
        for (int64_t ci = 0; ci < c; ++ci) y[ci] = pb[ci];
        for (int64_t kk = 0; kk < k; ++kk) {
            int64_t ti = to + kk - padding;
            if (ti < 0 || ti >= T) continue;
            const S* src = px + ti * c;
            for (int64_t ci = 0; ci < c; ++ci) y[ci] += src[ci] * pw[ci * k + kk];
        }
    }
    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = b.impl();
    return make_op_node<S>({t_out, c}, std::move(out), {x, w, b},
                           [xi, wi, bi, T, c, k, padding, t_out](const TensorImpl<S>& o) {
        const S* pw = wi->data.data();
        const S* px = xi->data.data();
        for (int64_t to = 0; to < t_out; ++to) {
            const S* g = o.grad.data() + to * c;
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (int64_t ci = 0; ci < c; ++ci) bi->grad[static_cast<size_t>(ci)] += g[ci];
            }
            for (int64_t kk = 0; kk < k; ++kk) {
                int64_t ti = to + kk - padding;
                if (ti < 0 || ti >= T) continue;
                if (xi->requires_grad) {
                    xi->ensure_grad();
                    S* dx = xi->grad.data() + ti * c;
                    for (int64_t ci = 0; ci < c; ++ci) dx[ci] += g[ci] * pw[ci * k + kk];
                }
                if (wi->requires_grad) {
                    wi->ensure_grad();
                    const S* src = px + ti * c;
                    for (int64_t ci = 0; ci < c; ++ci) wi->grad[static_cast<size_t>(ci * k + kk)] += g[ci] * src[ci];
                }
            }
        }
    });
}

template <typename S>
Tensor<S> batch_norm_1d(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                        const Tensor<S>& running_mean, const Tensor<S>& running_var, S eps) {
    if (x.rank() != 2) throw ShapeError("batch_norm_1d: expects x [TxC]");
    int64_t T = x.dim(0), c = x.dim(1);
    if (gain.numel() != c || bias.numel() != c || running_mean.numel() != c ||
        running_var.numel() != c) {
        throw ShapeError("batch_norm_1d: per-channel parameter size mismatch");
    }
    std::vector<S> inv(static_cast<size_t>(c));
    const S* pv = running_var.data().data();
    for (int64_t j = 0; j < c; ++j) inv[static_cast<size_t>(j)] = S(1) / std::sqrt(pv[j] + eps);
    std::vector<S> out(static_cast<size_t>(T * c));
    const S* px = x.data().data();
    const S* pm = running_mean.data().data();
    const S* pg = gain.data().data();
    const S* pb = bias.data().data();
    for (int64_t t = 0; t < T; ++t) {
        const S* in = px + t * c;
        S* y = out.data() + t * c;
        for (int64_t j = 0; j < c; ++j) {
            y[j] = (in[j] - pm[j]) * inv[static_cast<size_t>(j)] * pg[j] + pb[j];
        }
    }
    auto xi = x.impl();
    auto gi = gain.impl();
    auto bi = bias.impl();
    auto mi = running_mean.impl();
    return make_op_node<S>(x.shape(), std::move(out), {x, gain, bias},
                           [xi, gi, bi, mi, inv = std::move(inv), T, c](const TensorImpl<S>& o) {
        const S* pg = gi->data.data();
        const S* pm = mi->data.data();
        const S* px = xi->data.data();
        for (int64_t t = 0; t < T; ++t) {
            const S* g = o.grad.data() + t * c;
            if (xi->requires_grad) {
                xi->ensure_grad();
                S* dx = xi->grad.data() + t * c;
                for (int64_t j = 0; j < c; ++j) dx[j] += g[j] * pg[j] * inv[static_cast<size_t>(j)];
            }
            if (gi->requires_grad) {
                gi->ensure_grad();
                const S* in = px + t * c;
                for (int64_t j = 0; j < c; ++j) {
                    gi->grad[static_cast<size_t>(j)] += g[j] * (in[j] - pm[j]) * inv[static_cast<size_t>(j)];
                }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (int64_t j = 0; j < c; ++j) bi->grad[static_cast<size_t>(j)] += g[j];
            }
        }
    });
}

template <typename S>
Tensor<S> sinusoidal_table(int64_t T, int64_t d) {
    if (d % 2 != 0) throw ShapeError("sinusoidal_table: width must be even");
    if (T < 1) throw ShapeError("sinusoidal_table: length must be >= 1");
    std::vector<S> out(static_cast<size_t>(T * d));
    for (int64_t t = 0; t < T; ++t) {
        S* row = out.data() + t * d;
        for (int64_t i = 0; i < d / 2; ++i) {
            double omega = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
            double phase = static_cast<double>(t) * omega;
            row[2 * i] = static_cast<S>(std::sin(phase));
            row[2 * i + 1] = static_cast<S>(std::cos(phase));
        }
    }
    return Tensor<S>::from_data({T, d}, std::move(out));
}

template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, std::mt19937_64& rng, bool train) {
    if (p < 0.0 || p >= 1.0) {
        throw ShapeError(strformat("dropout: probability %g outside [0,1)", p));
    }
    if (!train || p == 0.0) return x;
    S scale = static_cast<S>(1.0 / (1.0 - p));
    std::vector<S> mask(static_cast<size_t>(x.numel()));
    for (auto& m : mask) m = uniform01(rng) >= p ? scale : S(0);
    std::vector<S> out(static_cast<size_t>(x.numel()));
    const S* px = x.data().data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = px[i] * mask[i];
    auto xi = x.impl();
    return make_op_node<S>(x.shape(), std::move(out), {x},
                           [xi, mask = std::move(mask)](const TensorImpl<S>& o) {
        xi->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) xi->grad[i] += o.grad[i] * mask[i];
    });
}

template <typename S>
Tensor<S> reduce_sum(const Tensor<S>& x) {
    S sum = S(0);
    for (S v : x.data()) sum += v;
    auto xi = x.impl();
    return make_op_node<S>(Shape{}, std::vector<S>{sum}, {x}, [xi](const TensorImpl<S>& o) {
        xi->ensure_grad();
        S g = o.grad[0];
        for (auto& v : xi->grad) v += g;
    });
}

template <typename S>
Tensor<S> reduce_mean(const Tensor<S>& x) {
    S sum = S(0);
    for (S v : x.data()) sum += v;
    S scale = S(1) / static_cast<S>(x.numel());
    auto xi = x.impl();
    return make_op_node<S>(Shape{}, std::vector<S>{sum * scale}, {x},
                           [xi, scale](const TensorImpl<S>& o) {
        xi->ensure_grad();
        S g = o.grad[0] * scale;
        for (auto& v : xi->grad) v += g;
    });
}

template <typename S>
Tensor<S> downsample_mean(const Tensor<S>& x, int64_t k) {
    if (x.rank() != 2) throw ShapeError("downsample_mean: expects [Txd]");
    if (k < 1) throw ShapeError("downsample_mean: factor must be >= 1");
    if (k == 1) return x;
    int64_t T = x.dim(0), d = x.dim(1);
    int64_t t_out = (T + k - 1) / k;
    std::vector<S> out(static_cast<size_t>(t_out * d), S(0));
    const S* px = x.data().data();
    S invk = S(1) / static_cast<S>(k);
    for (int64_t to = 0; to < t_out; ++to) {
        S* y = out.data() + to * d;
        for (int64_t j = 0; j < k; ++j) {
            int64_t ti = std::min(to * k + j, T - 1);  // repeat-pad the final frame
            const S* src = px + ti * d;
            for (int64_t c = 0; c < d; ++c) y[c] += src[c];
        }
        for (int64_t c = 0; c < d; ++c) y[c] *= invk;
    }
    auto xi = x.impl();
    return make_op_node<S>({t_out, d}, std::move(out), {x},
                           [xi, T, d, k, t_out](const TensorImpl<S>& o) {
        xi->ensure_grad();
        S invk = S(1) / static_cast<S>(k);
        for (int64_t to = 0; to < t_out; ++to) {
            const S* g = o.grad.data() + to * d;
            for (int64_t j = 0; j < k; ++j) {
                int64_t ti = std::min(to * k + j, T - 1);
                S* dst = xi->grad.data() + ti * d;
                for (int64_t c = 0; c < d; ++c) dst[c] += g[c] * invk;
            }
        }
    });
}

template <typename S>
Tensor<S> upsample_repeat(const Tensor<S>& x, int64_t k, int64_t target_T) {
    if (x.rank() != 2) throw ShapeError("upsample_repeat: expects [T'xd]");
    if (k < 1 || target_T < 1) throw ShapeError("upsample_repeat: factor and target length must be >= 1");
    int64_t tp = x.dim(0), d = x.dim(1);
    if ((target_T + k - 1) / k != tp) {
        throw ShapeError(strformat("upsample_repeat: ceil(%lld/%lld) != %lld input frames",
                                   static_cast<long long>(target_T), static_cast<long long>(k),
                                   static_cast<long long>(tp)));
    }
    if (k == 1) return x;
    std::vector<S> out(static_cast<size_t>(target_T * d));
    const S* px = x.data().data();
    for (int64_t t = 0; t < target_T; ++t) {
        const S* src = px + (t / k) * d;
        std::copy(src, src + d, out.data() + t * d);
    }
    auto xi = x.impl();
    return make_op_node<S>({target_T, d}, std::move(out), {x},
                           [xi, k, d, target_T](const TensorImpl<S>& o) {
        xi->ensure_grad();
        for (int64_t t = 0; t < target_T; ++t) {
            const S* g = o.grad.data() + t * d;
            S* dst = xi->grad.data() + (t / k) * d;
            for (int64_t c = 0; c < d; ++c) dst[c] += g[c];
        }
    });
}

#define SPLITFORMER_INSTANTIATE_OPS(S)                                                        \
    template Tensor<S> make_op_node<S>(Shape, std::vector<S>, const std::vector<Tensor<S>>&, \
                                       std::function<void(const TensorImpl<S>&)>);           \
    template Tensor<S> matmul<S>(const Tensor<S>&, const Tensor<S>&);                        \
    template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                           \
    template Tensor<S> subtract<S>(const Tensor<S>&, const Tensor<S>&);                      \
    template Tensor<S> multiply<S>(const Tensor<S>&, const Tensor<S>&);                      \
    template Tensor<S> scalar_mul<S>(const Tensor<S>&, S);                                   \
    template Tensor<S> transpose<S>(const Tensor<S>&, std::vector<int64_t>);                 \
    template Tensor<S> reshape<S>(const Tensor<S>&, Shape);                                  \
    template Tensor<S> concatenate<S>(const std::vector<Tensor<S>>&, int64_t);               \
    template Tensor<S> slice<S>(const Tensor<S>&, int64_t, int64_t, int64_t);                \
    template Tensor<S> pad<S>(const Tensor<S>&, int64_t, int64_t, int64_t);                  \
    template Tensor<S> softmax<S>(const Tensor<S>&);                                         \
    template Tensor<S> log_softmax<S>(const Tensor<S>&);                                     \
    template Tensor<S> layer_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S); \
    template Tensor<S> relu<S>(const Tensor<S>&);                                            \
    template Tensor<S> sigmoid<S>(const Tensor<S>&);                                         \
    template Tensor<S> swish<S>(const Tensor<S>&);                                           \
    template Tensor<S> glu<S>(const Tensor<S>&);                                             \
    template Tensor<S> conv1d<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,       \
                                 int64_t, int64_t);                                          \
    template Tensor<S> depthwise_conv1d<S>(const Tensor<S>&, const Tensor<S>&,               \
                                           const Tensor<S>&, int64_t);                       \
    template Tensor<S> batch_norm_1d<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, \
                                        const Tensor<S>&, const Tensor<S>&, S);              \
    template Tensor<S> sinusoidal_table<S>(int64_t, int64_t);                                \
    template Tensor<S> dropout<S>(const Tensor<S>&, double, std::mt19937_64&, bool);         \
    template Tensor<S> reduce_sum<S>(const Tensor<S>&);                                      \
    template Tensor<S> reduce_mean<S>(const Tensor<S>&);                                     \
    template Tensor<S> downsample_mean<S>(const Tensor<S>&, int64_t);                        \
    template Tensor<S> upsample_repeat<S>(const Tensor<S>&, int64_t, int64_t);

SPLITFORMER_INSTANTIATE_OPS(float)
SPLITFORMER_INSTANTIATE_OPS(double)

#undef SPLITFORMER_INSTANTIATE_OPS

}  // namespace splitformer
