#include "uamf/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "uamf/error.hpp"

namespace uamf {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

std::size_t normalize_axis(int axis, std::size_t rank, const Shape& shape) {
    const int r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(shape));
    }
    return static_cast<std::size_t>(a);
}

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

// (outer, n, inner) decomposition around one axis.
struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.n = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

struct BroadcastPlan {
    Shape out;
    // Iteration space with size-1 axes dropped and mergeable neighbours fused.
    Shape dims;
    std::vector<std::size_t> sa, sb;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    BroadcastPlan p;
    p.out.resize(r);
    const auto stra = contiguous_strides(a);
    const auto strb = contiguous_strides(b);
    for (std::size_t i = 0; i < r; ++i) {
        const long ia = static_cast<long>(i) - static_cast<long>(r - a.size());
        const long ib = static_cast<long>(i) - static_cast<long>(r - b.size());
        const std::size_t da = ia >= 0 ? a[static_cast<std::size_t>(ia)] : 1;
        const std::size_t db = ib >= 0 ? b[static_cast<std::size_t>(ib)] : 1;
        if (da != db && da != 1 && db != 1) {
            throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                                 " with " + shape_str(b));
        }
        p.out[i] = da == 1 ? db : da;
        if (p.out[i] == 1) continue;
        const std::size_t sa = (ia >= 0 && da != 1) ? stra[static_cast<std::size_t>(ia)] : 0;
        const std::size_t sb = (ib >= 0 && db != 1) ? strb[static_cast<std::size_t>(ib)] : 0;
        if (!p.dims.empty() && p.sa.back() == sa * p.out[i] && p.sb.back() == sb * p.out[i]) {
            p.dims.back() *= p.out[i];
            p.sa.back() = sa;
            p.sb.back() = sb;
        } else {
            p.dims.push_back(p.out[i]);
            p.sa.push_back(sa);
            p.sb.push_back(sb);
        }
    }
    return p;
}

// Calls f(out_index, a_offset, b_offset) for every output element in order.
// The common unit/zero stride patterns get their own inner loops so that
// they vectorize once `f` is inlined.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
    const std::size_t total = shape_numel(p.out);
    if (total == 0) return;
    const std::size_t r = p.dims.size();
    if (r == 0) {
        f(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    const std::size_t inner = p.dims[r - 1];
    const std::size_t sa_in = p.sa[r - 1], sb_in = p.sb[r - 1];
    std::vector<std::size_t> idx(r - 1, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t o = 0; o < total; o += inner) {
        if (sa_in == 1 && sb_in == 1) {
            for (std::size_t j = 0; j < inner; ++j) f(o + j, oa + j, ob + j);
        } else if (sa_in == 1 && sb_in == 0) {
            for (std::size_t j = 0; j < inner; ++j) f(o + j, oa + j, ob);
        } else if (sa_in == 0 && sb_in == 1) {
            for (std::size_t j = 0; j < inner; ++j) f(o + j, oa, ob + j);
        } else {
            for (std::size_t j = 0; j < inner; ++j) f(o + j, oa + j * sa_in, ob + j * sb_in);
        }
        for (std::size_t d = r - 1; d-- > 0;) {
            ++idx[d];
            oa += p.sa[d];
            ob += p.sb[d];
            if (idx[d] < p.dims[d]) break;
            oa -= p.sa[d] * p.dims[d];
            ob -= p.sb[d] * p.dims[d];
            idx[d] = 0;
        }
    }
}

// fwd(a, b) -> value; dfa/dfb(a, b) -> partial derivatives.
template <typename T, class Fwd, class Da, class Db>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, Da dfa,
                    Db dfb) {
    const auto& A = a.data();
    const auto& B = b.data();
    if (a.shape() == b.shape()) {
        Buffer<T> out(A.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(A[i], B[i]);
        return Tensor<T>::make_result(a.shape(), std::move(out), {a, b},
                                      [dfa, dfb](detail::Node<T>& o) {
                                          auto& na = *o.parents[0];
                                          auto& nb = *o.parents[1];
                                          const T* g = o.grad.data();
                                          const std::size_t n = o.grad.size();
                                          if (na.requires_grad) {
                                              T* ga = na.grad_buffer();
                                              for (std::size_t i = 0; i < n; ++i)
                                                  ga[i] += g[i] * dfa(na.data[i], nb.data[i]);
                                          }
                                          if (nb.requires_grad) {
                                              T* gb = nb.grad_buffer();
                                              for (std::size_t i = 0; i < n; ++i)
                                                  gb[i] += g[i] * dfb(na.data[i], nb.data[i]);
                                          }
                                      });
    }
    BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), name);
    Buffer<T> out(shape_numel(plan.out));
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        out[o] = fwd(A[ia], B[ib]);
    });
    Shape out_shape = plan.out;
    return Tensor<T>::make_result(
        std::move(out_shape), std::move(out), {a, b},
        [plan = std::move(plan), dfa, dfb](detail::Node<T>& o) {
            auto& na = *o.parents[0];
            auto& nb = *o.parents[1];
            const T* g = o.grad.data();
            if (na.requires_grad) {
                T* ga = na.grad_buffer();
                for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    ga[ia] += g[i] * dfa(na.data[ia], nb.data[ib]);
                });
            }
            if (nb.requires_grad) {
                T* gb = nb.grad_buffer();
                for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    gb[ib] += g[i] * dfb(na.data[ia], nb.data[ib]);
                });
            }
        });
}

// df(x, y) -> dy/dx given input x and output y.
template <typename T, class Fwd, class Df>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Df df) {
    const auto X = x.data();
    Buffer<T> out(X.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(X[i]);
    return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [df](detail::Node<T>& o) {
        auto& nx = *o.parents[0];
        T* gx = nx.grad_buffer();
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            gx[i] += o.grad[i] * df(nx.data[i], o.data[i]);
    });
}

} // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        a, b, "maximum", [](T x, T y) { return x >= y ? x : y; },
        [](T x, T y) { return x >= y ? T(1) : T(0); },
        [](T x, T y) { return x >= y ? T(0) : T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    return unary_op<T>(
        x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
    return unary_op<T>(
        x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary_op<T>(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T k = T(0.7978845608028654);  // sqrt(2 / pi)
    constexpr T c = T(0.044715);
    return unary_op<T>(
        x,
        [](T v) { return T(0.5) * v * (T(1) + std::tanh(k * (v + c * v * v * v))); },
        [](T v, T) {
            const T t = std::tanh(k * (v + c * v * v * v));
            return T(0.5) * (T(1) + t) +
                   T(0.5) * v * (T(1) - t * t) * k * (T(1) + T(3) * c * v * v);
        });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
    return unary_op<T>(
        x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
    return unary_op<T>(
        x, [](T v) { return std::log1p(std::exp(-std::abs(v))) + std::max(v, T(0)); },
        [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    const auto X = x.data();
    T total = T(0);
    for (T v : X) total += v;
    return Tensor<T>::make_result(Shape{}, {total}, {x}, [](detail::Node<T>& o) {
        auto& nx = *o.parents[0];
        T* gx = nx.grad_buffer();
        const T g = o.grad[0];
        for (std::size_t i = 0; i < nx.data.size(); ++i) gx[i] += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim) {
    const std::size_t ax = normalize_axis(axis, x.rank(), x.shape());
    const AxisSplit s = split_at(x.shape(), ax);
    const auto X = x.data();
    Buffer<T> out(s.outer * s.inner, T(0));
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.n; ++k) {
            const T* src = X.data() + (o * s.n + k) * s.inner;
            T* dst = out.data() + o * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
        }
    Shape shape = x.shape();
    if (keepdim) {
        shape[ax] = 1;
    } else {
        shape.erase(shape.begin() + static_cast<long>(ax));
    }
    return Tensor<T>::make_result(std::move(shape), std::move(out), {x}, [s](detail::Node<T>& o) {
        auto& nx = *o.parents[0];
        T* gx = nx.grad_buffer();
        for (std::size_t a = 0; a < s.outer; ++a)
            for (std::size_t k = 0; k < s.n; ++k) {
                T* dst = gx + (a * s.n + k) * s.inner;
                const T* g = o.grad.data() + a * s.inner;
                for (std::size_t i = 0; i < s.inner; ++i) dst[i] += g[i];
            }
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdim) {
    const std::size_t n = x.dim(axis);
    if (n == 0) throw DimensionError("mean over an empty axis of " + shape_str(x.shape()));
    return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(n));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    Buffer<T> out(x.data().begin(), x.data().end());
    return Tensor<T>::make_result(std::move(shape), std::move(out), {x}, [](detail::Node<T>& o) {
        auto& nx = *o.parents[0];
        T* gx = nx.grad_buffer();
        for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
    });
}

namespace {

// Visits output elements in order, yielding the matching input offset.
template <class F>
void for_each_permuted(const Shape& out_shape, const std::vector<std::size_t>& in_strides, F&& f) {
    const std::size_t r = out_shape.size();
    const std::size_t total = shape_numel(out_shape);
    if (r == 0) {
        f(std::size_t{0}, std::size_t{0});
        return;
    }
    if (total == 0) return;
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    const std::size_t inner = out_shape[r - 1];
    const std::size_t s_in = in_strides[r - 1];
    for (std::size_t o = 0; o < total; o += inner) {
        for (std::size_t j = 0; j < inner; ++j) f(o + j, off + j * s_in);
        for (std::size_t d = r - 1; d-- > 0;) {
            ++idx[d];
            off += in_strides[d];
            if (idx[d] < out_shape[d]) break;
            off -= in_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

} // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
    const Shape& in = x.shape();
    if (perm.size() != in.size()) {
        throw DimensionError("permute: permutation of length " + std::to_string(perm.size()) +
                             " for shape " + shape_str(in));
    }
    std::vector<bool> seen(perm.size(), false);
    for (auto p : perm) {
        if (p >= perm.size() || seen[p]) throw DimensionError("permute: invalid permutation");
        seen[p] = true;
    }
    const auto in_strides = contiguous_strides(in);
    Shape out_shape(in.size());
    std::vector<std::size_t> strides(in.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        out_shape[i] = in[perm[i]];
        strides[i] = in_strides[perm[i]];
    }
    const auto X = x.data();
    Buffer<T> out(X.size());
    for_each_permuted(out_shape, strides, [&](std::size_t o, std::size_t i) { out[o] = X[i]; });
    Shape s = out_shape;
    return Tensor<T>::make_result(std::move(s), std::move(out), {x},
                                  [out_shape, strides](detail::Node<T>& o) {
                                      auto& nx = *o.parents[0];
                                      T* gx = nx.grad_buffer();
                                      for_each_permuted(out_shape, strides,
                                                        [&](std::size_t oi, std::size_t ii) {
                                                            gx[ii] += o.grad[oi];
                                                        });
                                  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis0, int axis1) {
    const std::size_t a = normalize_axis(axis0, x.rank(), x.shape());
    const std::size_t b = normalize_axis(axis1, x.rank(), x.shape());
    std::vector<std::size_t> perm(x.rank());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::swap(perm[a], perm[b]);
    return permute(x, perm);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
    if (xs.empty()) throw DimensionError("concat of an empty list");
    const Shape& first = xs.front().shape();
    const std::size_t ax = normalize_axis(axis, first.size(), first);
    Shape out_shape = first;
    out_shape[ax] = 0;
    std::vector<std::size_t> widths;
    for (const auto& t : xs) {
        const Shape& s = t.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i)
            if (i != ax && s[i] != first[i]) ok = false;
        if (!ok) {
            throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " +
                                 shape_str(first) + " along axis " + std::to_string(axis));
        }
        out_shape[ax] += s[ax];
        widths.push_back(s[ax]);
    }
    const AxisSplit split = split_at(out_shape, ax);
    Buffer<T> out(shape_numel(out_shape));
    std::size_t offset = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const auto X = xs[k].data();
        const std::size_t chunk = widths[k] * split.inner;
        for (std::size_t o = 0; o < split.outer; ++o)
            std::copy_n(X.data() + o * chunk, chunk,
                        out.data() + o * split.n * split.inner + offset * split.inner);
        offset += widths[k];
    }
    return Tensor<T>::make_result(
        std::move(out_shape), std::move(out), xs, [split, widths](detail::Node<T>& o) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < widths.size(); ++k) {
                auto& nk = *o.parents[k];
                const std::size_t chunk = widths[k] * split.inner;
                if (nk.requires_grad) {
                    T* g = nk.grad_buffer();
                    for (std::size_t a = 0; a < split.outer; ++a) {
                        const T* src = o.grad.data() + a * split.n * split.inner + off * split.inner;
                        for (std::size_t i = 0; i < chunk; ++i) g[a * chunk + i] += src[i];
                    }
                }
                off += widths[k];
            }
        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length) {
    const std::size_t ax = normalize_axis(axis, x.rank(), x.shape());
    if (start + length > x.shape()[ax]) {
        throw DimensionError("slice [" + std::to_string(start) + ", " +
                             std::to_string(start + length) + ") out of range for shape " +
                             shape_str(x.shape()));
    }
    const AxisSplit s = split_at(x.shape(), ax);
    Shape out_shape = x.shape();
    out_shape[ax] = length;
    const auto X = x.data();
    Buffer<T> out(s.outer * length * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(X.data() + (o * s.n + start) * s.inner, length * s.inner,
                    out.data() + o * length * s.inner);
    return Tensor<T>::make_result(std::move(out_shape), std::move(out), {x},
                                  [s, start, length](detail::Node<T>& o) {
                                      auto& nx = *o.parents[0];
                                      T* g = nx.grad_buffer();
                                      const std::size_t chunk = length * s.inner;
                                      for (std::size_t a = 0; a < s.outer; ++a) {
                                          T* dst = g + (a * s.n + start) * s.inner;
                                          const T* src = o.grad.data() + a * chunk;
                                          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                                      }
                                  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2 || sa[sa.size() - 1] != sb[sb.size() - 2]) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " +
                             shape_str(sb));
    }
    const std::size_t n = sa[sa.size() - 2], k = sa.back(), m = sb.back();
    const Shape batch_a(sa.begin(), sa.end() - 2);
    const Shape batch_b(sb.begin(), sb.end() - 2);
    BroadcastPlan plan = plan_broadcast(batch_a, batch_b, "matmul");
    std::vector<std::array<std::size_t, 3>> pairs;  // (out, a, b) batch indices
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        pairs.push_back({o, ia, ib});
    });
    Shape out_shape = plan.out;
    out_shape.push_back(n);
    out_shape.push_back(m);
    Buffer<T> out(shape_numel(out_shape), T(0));
    const T* A = a.data().data();
    const T* B = b.data().data();
    for (const auto& [o, ia, ib] : pairs) {
        MapMat<T>(out.data() + o * n * m, n, m).noalias() =
            CMapMat<T>(A + ia * n * k, n, k) * CMapMat<T>(B + ib * k * m, k, m);
    }
    return Tensor<T>::make_result(
        std::move(out_shape), std::move(out), {a, b}, [pairs, n, k, m](detail::Node<T>& o) {
            auto& na = *o.parents[0];
            auto& nb = *o.parents[1];
            for (const auto& [oi, ia, ib] : pairs) {
                CMapMat<T> g(o.grad.data() + oi * n * m, n, m);
                if (na.requires_grad) {
                    MapMat<T>(na.grad_buffer() + ia * n * k, n, k).noalias() +=
                        g * CMapMat<T>(nb.data.data() + ib * k * m, k, m).transpose();
                }
                if (nb.requires_grad) {
                    MapMat<T>(nb.grad_buffer() + ib * k * m, k, m).noalias() +=
                        CMapMat<T>(na.data.data() + ia * n * k, n, k).transpose() * g;
                }
            }
        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    const Shape& sx = x.shape();
    const Shape& sw = weight.shape();
    if (sx.empty() || sw.size() != 2 || sx.back() != sw[0] ||
        (bias.defined() && bias.shape() != Shape{sw[1]})) {
        throw DimensionError("linear: input " + shape_str(sx) + " with weight " + shape_str(sw) +
                             (bias.defined() ? " and bias " + shape_str(bias.shape()) : ""));
    }
    const std::size_t in = sw[0], out_dim = sw[1];
    const std::size_t rows = x.numel() / std::max<std::size_t>(in, 1);
    Shape out_shape = sx;
    out_shape.back() = out_dim;
    Buffer<T> out(rows * out_dim);
    MapMat<T> Y(out.data(), rows, out_dim);
    Y.noalias() = CMapMat<T>(x.data().data(), rows, in) * CMapMat<T>(weight.data().data(), in, out_dim);
    if (bias.defined()) {
        Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(),
                                                                            out_dim);
    }
    std::vector<Tensor<T>> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return Tensor<T>::make_result(
        std::move(out_shape), std::move(out), parents, [rows, in, out_dim](detail::Node<T>& o) {
            auto& nx = *o.parents[0];
            auto& nw = *o.parents[1];
            CMapMat<T> G(o.grad.data(), rows, out_dim);
            if (nx.requires_grad) {
                MapMat<T>(nx.grad_buffer(), rows, in).noalias() +=
                    G * CMapMat<T>(nw.data.data(), in, out_dim).transpose();
            }
            if (nw.requires_grad) {
                MapMat<T>(nw.grad_buffer(), in, out_dim).noalias() +=
                    CMapMat<T>(nx.data.data(), rows, in).transpose() * G;
            }
            if (o.parents.size() > 2 && o.parents[2]->requires_grad) {
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(o.parents[2]->grad_buffer(),
                                                                out_dim) += G.colwise().sum();
            }
        });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift, T eps) {
    const Shape& sx = x.shape();
    if (sx.empty() || gain.shape() != Shape{sx.back()} || shift.shape() != Shape{sx.back()}) {
        throw DimensionError("layer_norm: input " + shape_str(sx) + " with gain " +
                             shape_str(gain.shape()) + " and shift " + shape_str(shift.shape()));
    }
    const std::size_t d = sx.back();
    const std::size_t rows = x.numel() / d;
    const auto X = x.data();
    const auto G = gain.data();
    const auto B = shift.data();
    Buffer<T> out(X.size()), xhat(X.size()), rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = X.data() + r * d;
        T mu = T(0);
        for (std::size_t i = 0; i < d; ++i) mu += row[i];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= static_cast<T>(d);
        rstd[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t i = 0; i < d; ++i) {
            xhat[r * d + i] = (row[i] - mu) * rstd[r];
            out[r * d + i] = xhat[r * d + i] * G[i] + B[i];
        }
    }
    return Tensor<T>::make_result(
        sx, std::move(out), {x, gain, shift},
        [xhat = std::move(xhat), rstd = std::move(rstd), rows, d](detail::Node<T>& o) {
            auto& nx = *o.parents[0];
            auto& ng = *o.parents[1];
            auto& nb = *o.parents[2];
            const T* g = o.grad.data();
            if (ng.requires_grad || nb.requires_grad) {
                T* gg = ng.requires_grad ? ng.grad_buffer() : nullptr;
                T* gb = nb.requires_grad ? nb.grad_buffer() : nullptr;
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < d; ++i) {
                        if (gg) gg[i] += g[r * d + i] * xhat[r * d + i];
                        if (gb) gb[i] += g[r * d + i];
                    }
            }
            if (nx.requires_grad) {
                T* gx = nx.grad_buffer();
                const T* gain_v = ng.data.data();
                for (std::size_t r = 0; r < rows; ++r) {
                    T m1 = T(0), m2 = T(0);
                    for (std::size_t i = 0; i < d; ++i) {
                        const T dxh = g[r * d + i] * gain_v[i];
                        m1 += dxh;
                        m2 += dxh * xhat[r * d + i];
                    }
                    m1 /= static_cast<T>(d);
                    m2 /= static_cast<T>(d);
                    for (std::size_t i = 0; i < d; ++i) {
                        const T dxh = g[r * d + i] * gain_v[i];
                        gx[r * d + i] += rstd[r] * (dxh - m1 - xhat[r * d + i] * m2);
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    const std::size_t ax = normalize_axis(axis, x.rank(), x.shape());
    const AxisSplit s = split_at(x.shape(), ax);
    if (s.n == 0) throw DimensionError("softmax over an empty axis of " + shape_str(x.shape()));
    const auto X = x.data();
    Buffer<T> out(X.size());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.n * s.inner + i;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t k = 0; k < s.n; ++k) mx = std::max(mx, X[base + k * s.inner]);
            // Double accumulation keeps float rows summing to one within a
            // few ulps whatever the row length.
            double total = 0.0;
            for (std::size_t k = 0; k < s.n; ++k) {
                const T e = std::exp(X[base + k * s.inner] - mx);
                out[base + k * s.inner] = e;
                total += static_cast<double>(e);
            }
            for (std::size_t k = 0; k < s.n; ++k) {
                T& v = out[base + k * s.inner];
                v = static_cast<T>(static_cast<double>(v) / total);
            }
        }
    return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [s](detail::Node<T>& o) {
        auto& nx = *o.parents[0];
        T* gx = nx.grad_buffer();
        for (std::size_t a = 0; a < s.outer; ++a)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t base = a * s.n * s.inner + i;
                T dot = T(0);
                for (std::size_t k = 0; k < s.n; ++k)
                    dot += o.grad[base + k * s.inner] * o.data[base + k * s.inner];
                for (std::size_t k = 0; k < s.n; ++k) {
                    const std::size_t j = base + k * s.inner;
                    gx[j] += o.data[j] * (o.grad[j] - dot);
                }
            }
    });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
    const std::size_t ax = normalize_axis(axis, x.rank(), x.shape());
    const AxisSplit s = split_at(x.shape(), ax);
    if (s.n == 0) throw DimensionError("log_softmax over an empty axis of " + shape_str(x.shape()));
    const auto X = x.data();
    Buffer<T> out(X.size());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.n * s.inner + i;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t k = 0; k < s.n; ++k) mx = std::max(mx, X[base + k * s.inner]);
            T total = T(0);
            for (std::size_t k = 0; k < s.n; ++k) total += std::exp(X[base + k * s.inner] - mx);
            const T lse = mx + std::log(total);
            for (std::size_t k = 0; k < s.n; ++k)
                out[base + k * s.inner] = X[base + k * s.inner] - lse;
        }
    return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [s](detail::Node<T>& o) {
        auto& nx = *o.parents[0];
        T* gx = nx.grad_buffer();
        for (std::size_t a = 0; a < s.outer; ++a)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t base = a * s.n * s.inner + i;
                T gsum = T(0);
                for (std::size_t k = 0; k < s.n; ++k) gsum += o.grad[base + k * s.inner];
                for (std::size_t k = 0; k < s.n; ++k) {
                    const std::size_t j = base + k * s.inner;
                    gx[j] += o.grad[j] - std::exp(o.data[j]) * gsum;
                }
            }
    });
}

namespace {

struct ConvGeometry {
    std::size_t batch, cin, cout, groups, cin_g, cout_g;
    std::array<std::size_t, 3> in, out, kernel, stride, pad;

    std::size_t in_volume() const { return in[0] * in[1] * in[2]; }
    std::size_t out_volume() const { return out[0] * out[1] * out[2]; }
    bool pointwise() const {
        return groups == 1 && kernel == std::array<std::size_t, 3>{1, 1, 1} &&
               stride == std::array<std::size_t, 3>{1, 1, 1};
    }
};

// Strided, padded convolution as long contiguous loops. Each input channel is
// split into stride phases: phase (a, b) holds padded rows a, a+sh, ... and
// columns b, b+sw, ..., so tap (kh, kw) reads phase (kh % sh, kw % sw) at a
// fixed offset with unit stride. Outputs use "wide" rows of the phase width;
// the extra columns are scratch and never read back.
struct PhaseLayout {
    std::size_t sh, sw, tp, ph, pw;  // phases per axis, padded frames, phase rows and columns

    explicit PhaseLayout(const ConvGeometry& g)
        : sh(g.stride[1]), sw(g.stride[2]), tp(g.in[0] + 2 * g.pad[0]),
          ph(g.out[1] + (g.kernel[1] - 1) / g.stride[1]),
          pw(g.out[2] + (g.kernel[2] - 1) / g.stride[2]) {}

    std::size_t plane() const { return ph * pw; }
    std::size_t size() const { return sh * sw * tp * plane(); }
    std::size_t offset(std::size_t phase, std::size_t t) const { return (phase * tp + t) * plane(); }
};

template <typename T>
void to_phases(const ConvGeometry& g, const PhaseLayout& L, const T* x, T* out) {
    std::fill(out, out + L.size(), T(0));
    const long IT = static_cast<long>(g.in[0]), IH = static_cast<long>(g.in[1]),
               IW = static_cast<long>(g.in[2]);
    for (std::size_t a = 0; a < L.sh; ++a)
        for (std::size_t b = 0; b < L.sw; ++b)
            for (std::size_t t = 0; t < L.tp; ++t) {
                const long it = static_cast<long>(t) - static_cast<long>(g.pad[0]);
                if (it < 0 || it >= IT) continue;
                T* dst = out + L.offset(a * L.sw + b, t);
                for (std::size_t i = 0; i < L.ph; ++i) {
                    const long ih = static_cast<long>(i * L.sh + a) - static_cast<long>(g.pad[1]);
                    if (ih < 0 || ih >= IH) continue;
                    const T* src = x + (it * IH + ih) * IW;
                    for (std::size_t j = 0; j < L.pw; ++j) {
                        const long iw = static_cast<long>(j * L.sw + b) - static_cast<long>(g.pad[2]);
                        if (iw >= 0 && iw < IW) dst[i * L.pw + j] = src[iw];
                    }
                }
            }
}

// Adds phase-layout gradients back onto the unpadded input.
template <typename T>
void from_phases(const ConvGeometry& g, const PhaseLayout& L, const T* in, T* gx) {
    const long IT = static_cast<long>(g.in[0]), IH = static_cast<long>(g.in[1]),
               IW = static_cast<long>(g.in[2]);
    for (std::size_t a = 0; a < L.sh; ++a)
        for (std::size_t b = 0; b < L.sw; ++b)
            for (std::size_t t = 0; t < L.tp; ++t) {
                const long it = static_cast<long>(t) - static_cast<long>(g.pad[0]);
                if (it < 0 || it >= IT) continue;
                const T* src = in + L.offset(a * L.sw + b, t);
                for (std::size_t i = 0; i < L.ph; ++i) {
                    const long ih = static_cast<long>(i * L.sh + a) - static_cast<long>(g.pad[1]);
                    if (ih < 0 || ih >= IH) continue;
                    T* dst = gx + (it * IH + ih) * IW;
                    for (std::size_t j = 0; j < L.pw; ++j) {
                        const long iw = static_cast<long>(j * L.sw + b) - static_cast<long>(g.pad[2]);
                        if (iw >= 0 && iw < IW) dst[iw] += src[i * L.pw + j];
                    }
                }
            }
}

// Calls fn(w_idx, phase_offset, wide_offset, length) for every tap and output frame.
template <typename F>
void for_each_tap(const ConvGeometry& g, const PhaseLayout& L, std::size_t oc, std::size_t icg, F&& fn) {
    const std::size_t span = (g.out[1] - 1) * L.pw + g.out[2];
    const std::size_t wide_frame = g.out[1] * L.pw;
    for (std::size_t kt = 0; kt < g.kernel[0]; ++kt)
        for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
            for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
                const std::size_t w_idx =
                    (((oc * g.cin_g + icg) * g.kernel[0] + kt) * g.kernel[1] + kh) * g.kernel[2] + kw;
                const std::size_t phase = (kh % L.sh) * L.sw + kw % L.sw;
                const std::size_t shift = (kh / L.sh) * L.pw + kw / L.sw;
                for (std::size_t ot = 0; ot < g.out[0]; ++ot) {
                    const std::size_t t = ot * g.stride[0] + kt;
                    fn(w_idx, L.offset(phase, t) + shift, ot * wide_frame, span);
                }
            }
}

template <typename T>
void wide_to_dense(const ConvGeometry& g, const PhaseLayout& L, const T* wide, T* dense) {
    for (std::size_t ot = 0; ot < g.out[0]; ++ot)
        for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
            const T* src = wide + (ot * g.out[1] + oh) * L.pw;
            std::copy(src, src + g.out[2], dense + (ot * g.out[1] + oh) * g.out[2]);
        }
}

template <typename T>
void dense_to_wide(const ConvGeometry& g, const PhaseLayout& L, const T* dense, T* wide) {
    std::fill(wide, wide + g.out[0] * g.out[1] * L.pw, T(0));
    for (std::size_t ot = 0; ot < g.out[0]; ++ot)
        for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
            const T* src = dense + (ot * g.out[1] + oh) * g.out[2];
            std::copy(src, src + g.out[2], wide + (ot * g.out[1] + oh) * L.pw);
        }
}

// Fixed-lane dot product: vectorizes under strict floating point and sums in
// the same order whatever the pointers' alignment.
template <typename T>
T lane_dot(const T* a, const T* b, std::size_t n) {
    constexpr std::size_t kLanes = 16;
    T acc[kLanes] = {};
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (std::size_t k = 0; k < kLanes; ++k) acc[k] += a[i + k] * b[i + k];
    T total = T(0);
    for (; i < n; ++i) total += a[i] * b[i];
    for (std::size_t k = 0; k < kLanes; ++k) total += acc[k];
    return total;
}

template <typename T>
void conv_forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
    const PhaseLayout L(g);
    const std::size_t wide_size = g.out[0] * g.out[1] * L.pw;
    Buffer<T> phases(L.size()), wide(g.cout_g * wide_size);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t grp = 0; grp < g.groups; ++grp) {
            std::fill(wide.begin(), wide.end(), T(0));
            for (std::size_t icg = 0; icg < g.cin_g; ++icg) {
                const std::size_t ic = grp * g.cin_g + icg;
                to_phases(g, L, x + (n * g.cin + ic) * g.in_volume(), phases.data());
                for (std::size_t ocg = 0; ocg < g.cout_g; ++ocg) {
                    T* yw = wide.data() + ocg * wide_size;
                    for_each_tap(g, L, grp * g.cout_g + ocg, icg,
                                 [&](std::size_t wi, std::size_t po, std::size_t yo, std::size_t len) {
                                     const T wv = w[wi];
                                     const T* src = phases.data() + po;
                                     T* dst = yw + yo;
                                     for (std::size_t k = 0; k < len; ++k) dst[k] += wv * src[k];
                                 });
                }
            }
            for (std::size_t ocg = 0; ocg < g.cout_g; ++ocg) {
                const std::size_t oc = grp * g.cout_g + ocg;
                wide_to_dense(g, L, wide.data() + ocg * wide_size, y + (n * g.cout + oc) * g.out_volume());
            }
        }
}

template <typename T>
void conv_backward(const ConvGeometry& g, const T* x, const T* w, const T* gy, T* gx, T* gw) {
    const PhaseLayout L(g);
    const std::size_t wide_size = g.out[0] * g.out[1] * L.pw;
    Buffer<T> phases(L.size()), gphases(gx != nullptr ? L.size() : 0), wide(g.cout_g * wide_size);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t grp = 0; grp < g.groups; ++grp) {
            for (std::size_t ocg = 0; ocg < g.cout_g; ++ocg) {
                const std::size_t oc = grp * g.cout_g + ocg;
                dense_to_wide(g, L, gy + (n * g.cout + oc) * g.out_volume(), wide.data() + ocg * wide_size);
            }
            for (std::size_t icg = 0; icg < g.cin_g; ++icg) {
                const std::size_t ic = grp * g.cin_g + icg;
                if (gw != nullptr) to_phases(g, L, x + (n * g.cin + ic) * g.in_volume(), phases.data());
                if (gx != nullptr) std::fill(gphases.begin(), gphases.end(), T(0));
                for (std::size_t ocg = 0; ocg < g.cout_g; ++ocg) {
                    const T* gyw = wide.data() + ocg * wide_size;
                    for_each_tap(g, L, grp * g.cout_g + ocg, icg,
                                 [&](std::size_t wi, std::size_t po, std::size_t yo, std::size_t len) {
                                     const T* gsrc = gyw + yo;
                                     if (gw != nullptr) {
                                         const T* src = phases.data() + po;
                                         gw[wi] += lane_dot(gsrc, src, len);
                                     }
                                     if (gx != nullptr) {
                                         const T wv = w[wi];
                                         T* dst = gphases.data() + po;
                                         for (std::size_t k = 0; k < len; ++k) dst[k] += wv * gsrc[k];
                                     }
                                 });
                }
                if (gx != nullptr) from_phases(g, L, gphases.data(), gx + (n * g.cin + ic) * g.in_volume());
            }
        }
}

} // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv3dOptions& options) {
    const Shape& sx = x.shape();
    const Shape& sw = weight.shape();
    if (sx.size() != 5 || sw.size() != 5) {
        throw DimensionError("conv3d: expected 5-d input and weight, got " + shape_str(sx) +
                             " and " + shape_str(sw));
    }
    ConvGeometry g{};
    g.batch = sx[0];
    g.cin = sx[1];
    g.cout = sw[0];
    g.groups = options.groups;
    if (g.groups == 0 || g.cin % g.groups != 0 || g.cout % g.groups != 0) {
        throw ConfigError("conv3d: " + std::to_string(g.cin) + " input and " +
                          std::to_string(g.cout) + " output channels not divisible into " +
                          std::to_string(g.groups) + " groups");
    }
    g.cin_g = g.cin / g.groups;
    g.cout_g = g.cout / g.groups;
    if (sw[1] != g.cin_g) {
        throw ConfigError("conv3d: weight " + shape_str(sw) + " expects " + std::to_string(sw[1]) +
                          " channels per group, input " + shape_str(sx) + " provides " +
                          std::to_string(g.cin_g));
    }
    if (bias.defined() && bias.shape() != Shape{g.cout}) {
        throw DimensionError("conv3d: bias " + shape_str(bias.shape()) + " for " +
                             std::to_string(g.cout) + " output channels");
    }
    for (std::size_t i = 0; i < 3; ++i) {
        g.in[i] = sx[2 + i];
        g.kernel[i] = sw[2 + i];
        g.stride[i] = options.stride[i];
        g.pad[i] = g.kernel[i] / 2;
        if (g.stride[i] == 0) throw ConfigError("conv3d: zero stride");
        if (g.in[i] + 2 * g.pad[i] < g.kernel[i]) {
            throw DimensionError("conv3d: input " + shape_str(sx) + " smaller than kernel " +
                                 shape_str(sw));
        }
        g.out[i] = (g.in[i] + 2 * g.pad[i] - g.kernel[i]) / g.stride[i] + 1;
    }
    Shape out_shape{g.batch, g.cout, g.out[0], g.out[1], g.out[2]};
    Buffer<T> out(shape_numel(out_shape), T(0));
    const T* X = x.data().data();
    const T* W = weight.data().data();
    if (g.pointwise()) {
        const std::size_t P = g.in_volume();
        for (std::size_t n = 0; n < g.batch; ++n) {
            MapMat<T>(out.data() + n * g.cout * P, g.cout, P).noalias() =
                CMapMat<T>(W, g.cout, g.cin) * CMapMat<T>(X + n * g.cin * P, g.cin, P);
        }
    } else {
        conv_forward<T>(g, X, W, out.data());
    }
    if (bias.defined()) {
        const auto B = bias.data();
        const std::size_t vol = g.out_volume();
        for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t c = 0; c < g.cout; ++c) {
                T* dst = out.data() + (n * g.cout + c) * vol;
                for (std::size_t i = 0; i < vol; ++i) dst[i] += B[c];
            }
    }
    std::vector<Tensor<T>> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return Tensor<T>::make_result(
        std::move(out_shape), std::move(out), parents, [g](detail::Node<T>& o) {
            auto& nx = *o.parents[0];
            auto& nw = *o.parents[1];
            const T* G = o.grad.data();
            if (g.pointwise()) {
                const std::size_t P = g.in_volume();
                for (std::size_t n = 0; n < g.batch; ++n) {
                    CMapMat<T> gy(G + n * g.cout * P, g.cout, P);
                    if (nx.requires_grad) {
                        MapMat<T>(nx.grad_buffer() + n * g.cin * P, g.cin, P).noalias() +=
                            CMapMat<T>(nw.data.data(), g.cout, g.cin).transpose() * gy;
                    }
                    if (nw.requires_grad) {
                        MapMat<T>(nw.grad_buffer(), g.cout, g.cin).noalias() +=
                            gy * CMapMat<T>(nx.data.data() + n * g.cin * P, g.cin, P).transpose();
                    }
                }
            } else {
                conv_backward<T>(g, nx.data.data(), nw.data.data(), G,
                                 nx.requires_grad ? nx.grad_buffer() : nullptr,
                                 nw.requires_grad ? nw.grad_buffer() : nullptr);
            }
            if (o.parents.size() > 2 && o.parents[2]->requires_grad) {
                T* gb = o.parents[2]->grad_buffer();
                const std::size_t vol = g.out_volume();
                for (std::size_t n = 0; n < g.batch; ++n)
                    for (std::size_t c = 0; c < g.cout; ++c) {
                        const T* src = G + (n * g.cout + c) * vol;
                        T acc = T(0);
                        for (std::size_t i = 0; i < vol; ++i) acc += src[i];
                        gb[c] += acc;
                    }
            }
        });
}

template <typename T>
Tensor<T> gaussian_sample(const Shape& shape, Rng& rng) {
    Buffer<T> v(shape_numel(shape));
    for (auto& e : v) e = static_cast<T>(rng.normal());
    return Tensor<T>(shape, std::move(v));
}

#define UAMF_INSTANTIATE_OPS(T)                                                                \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> maximum(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> scale(const Tensor<T>&, T);                                             \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                        \
    template Tensor<T> relu(const Tensor<T>&);                                                 \
    template Tensor<T> gelu(const Tensor<T>&);                                                 \
    template Tensor<T> tanh(const Tensor<T>&);                                                 \
    template Tensor<T> softplus(const Tensor<T>&);                                             \
    template Tensor<T> sum(const Tensor<T>&);                                                  \
    template Tensor<T> mean(const Tensor<T>&);                                                 \
    template Tensor<T> sum(const Tensor<T>&, int, bool);                                       \
    template Tensor<T> mean(const Tensor<T>&, int, bool);                                      \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
    template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);             \
    template Tensor<T> transpose(const Tensor<T>&, int, int);                                  \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                             \
    template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);                 \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
    template Tensor<T> softmax(const Tensor<T>&, int);                                         \
    template Tensor<T> log_softmax(const Tensor<T>&, int);                                     \
    template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                              const Conv3dOptions&);                                           \
    template Tensor<T> gaussian_sample(const Shape&, Rng&);

UAMF_INSTANTIATE_OPS(float)
UAMF_INSTANTIATE_OPS(double)

#undef UAMF_INSTANTIATE_OPS

} // namespace uamf
