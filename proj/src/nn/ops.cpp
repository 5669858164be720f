#include "mvps/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "mvps/errors.hpp"

namespace mvps::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXf>;
using CMapVec = Eigen::Map<const Eigen::VectorXf>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw SchemaError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}

std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
        st[d] = acc;
        acc *= s[d];
    }
    return st;
}

// Strides for addressing tensor `small` while iterating `full`
// (each small dim equals the full dim or is 1).
std::vector<int64_t> effective_strides(const Shape& full, const Shape& small) {
    if (full.size() != small.size())
        throw SchemaError("broadcast rank mismatch: " + shape_str(full) + " vs " + shape_str(small));
    auto st = row_major_strides(small);
    for (size_t d = 0; d < full.size(); ++d) {
        if (small[d] == full[d]) continue;
        if (small[d] == 1) st[d] = 0;
        else throw SchemaError("broadcast dim mismatch: " + shape_str(full) + " vs " + shape_str(small));
    }
    return st;
}

template <class F>
void for_each_mapped(const Shape& full, const std::vector<int64_t>& sstr, F&& fn) {
    const int rank = static_cast<int>(full.size());
    const int64_t n = shape_numel(full);
    std::vector<int> idx(rank, 0);
    int64_t soff = 0;
    for (int64_t flat = 0; flat < n; ++flat) {
        fn(flat, soff);
        for (int d = rank - 1; d >= 0; --d) {
            if (++idx[d] < full[d]) {
                soff += sstr[d];
                break;
            }
            idx[d] = 0;
            soff -= sstr[d] * (full[d] - 1);
        }
    }
}

Shape reduced_shape(const Shape& in, const std::vector<int>& axes) {
    Shape small = in;
    for (int a : axes) {
        if (a < 0 || a >= static_cast<int>(in.size()))
            throw SchemaError("reduction axis out of range");
        small[a] = 1;
    }
    return small;
}

void im2col(const float* x, int ci, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, float* col) {
    for (int c = 0; c < ci; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                float* dst = col + (static_cast<size_t>(c) * kh * kw + i * kw + j) *
                                       (static_cast<size_t>(ho) * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    const int y = oy * stride + i - pad;
                    float* row = dst + static_cast<size_t>(oy) * wo;
                    if (y < 0 || y >= h) {
                        std::fill(row, row + wo, 0.0f);
                        continue;
                    }
                    const float* src = x + (static_cast<size_t>(c) * h + y) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int xx = ox * stride + j - pad;
                        row[ox] = (xx >= 0 && xx < w) ? src[xx] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im_acc(const float* col, int ci, int h, int w, int kh, int kw, int stride, int pad,
                int ho, int wo, float* x_grad) {
    for (int c = 0; c < ci; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                const float* src = col + (static_cast<size_t>(c) * kh * kw + i * kw + j) *
                                             (static_cast<size_t>(ho) * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    const int y = oy * stride + i - pad;
                    if (y < 0 || y >= h) continue;
                    float* dst = x_grad + (static_cast<size_t>(c) * h + y) * w;
                    const float* row = src + static_cast<size_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int xx = ox * stride + j - pad;
                        if (xx >= 0 && xx < w) dst[xx] += row[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

// ---------------- elementwise ----------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<float> out(a.values());
    const float* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
    return make_node(a.shape(), std::move(out), {a, b}, [](Node& self) {
        auto& ga = self.parents[0]->grad;
        auto& gb = self.parents[1]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            ga[i] += self.grad[i];
            gb[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<float> out(a.values());
    const float* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
    return make_node(a.shape(), std::move(out), {a, b}, [](Node& self) {
        auto& ga = self.parents[0]->grad;
        auto& gb = self.parents[1]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            ga[i] += self.grad[i];
            gb[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<float> out(a.values());
    const float* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
    return make_node(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const auto& va = self.parents[0]->val;
        const auto& vb = self.parents[1]->val;
        auto& ga = self.parents[0]->grad;
        auto& gb = self.parents[1]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            ga[i] += self.grad[i] * vb[i];
            gb[i] += self.grad[i] * va[i];
        }
    });
}

Tensor add_scalar(const Tensor& a, float s) {
    std::vector<float> out(a.values());
    for (float& v : out) v += s;
    return make_node(a.shape(), std::move(out), {a}, [](Node& self) {
        auto& ga = self.parents[0]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

Tensor mul_scalar(const Tensor& a, float s) {
    std::vector<float> out(a.values());
    for (float& v : out) v *= s;
    return make_node(a.shape(), std::move(out), {a}, [s](Node& self) {
        auto& ga = self.parents[0]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * s;
    });
}

Tensor relu(const Tensor& a) {
    std::vector<float> out(a.values());
    for (float& v : out) v = v > 0.0f ? v : 0.0f;
    return make_node(a.shape(), std::move(out), {a}, [](Node& self) {
        const auto& va = self.parents[0]->val;
        auto& ga = self.parents[0]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (va[i] > 0.0f) ga[i] += self.grad[i];
    });
}

Tensor silu(const Tensor& a) {
    std::vector<float> out(a.values());
    for (float& v : out) v = v / (1.0f + std::exp(-v));
    return make_node(a.shape(), std::move(out), {a}, [](Node& self) {
        const auto& va = self.parents[0]->val;
        auto& ga = self.parents[0]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const float s = 1.0f / (1.0f + std::exp(-va[i]));
            ga[i] += self.grad[i] * s * (1.0f + va[i] * (1.0f - s));
        }
    });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<float> out(a.values());
    for (float& v : out) v = 1.0f / (1.0f + std::exp(-v));
    return make_node(a.shape(), std::move(out), {a}, [](Node& self) {
        auto& ga = self.parents[0]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const float y = self.val[i];
            ga[i] += self.grad[i] * y * (1.0f - y);
        }
    });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
    if (a.shape() == shape) return a;
    const auto sstr = effective_strides(shape, a.shape());
    std::vector<float> out(static_cast<size_t>(shape_numel(shape)));
    const float* pa = a.data();
    for_each_mapped(shape, sstr, [&](int64_t flat, int64_t soff) { out[flat] = pa[soff]; });
    return make_node(shape, std::move(out), {a}, [shape](Node& self) {
        const auto sstr2 = effective_strides(shape, self.parents[0]->shape);
        auto& ga = self.parents[0]->grad;
        const auto& g = self.grad;
        for_each_mapped(shape, sstr2, [&](int64_t flat, int64_t soff) { ga[soff] += g[flat]; });
    });
}

// ---------------- reductions ----------------

Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.values()) acc += v;
    return make_node({1}, {static_cast<float>(acc)}, {a}, [](Node& self) {
        auto& ga = self.parents[0]->grad;
        const float g = self.grad[0];
        for (float& v : ga) v += g;
    });
}

Tensor mean_all(const Tensor& a) {
    return mul_scalar(sum_all(a), 1.0f / static_cast<float>(a.numel()));
}

Tensor sum_axes(const Tensor& a, const std::vector<int>& axes, bool keepdim) {
    const Shape small = reduced_shape(a.shape(), axes);
    const auto sstr = effective_strides(a.shape(), small);
    std::vector<float> out(static_cast<size_t>(shape_numel(small)), 0.0f);
    const float* pa = a.data();
    for_each_mapped(a.shape(), sstr, [&](int64_t flat, int64_t soff) { out[soff] += pa[flat]; });

    Shape out_shape = small;
    if (!keepdim) {
        out_shape.clear();
        for (size_t d = 0; d < small.size(); ++d) {
            bool reduced = std::find(axes.begin(), axes.end(), static_cast<int>(d)) != axes.end();
            if (!reduced) out_shape.push_back(small[d]);
        }
        if (out_shape.empty()) out_shape.push_back(1);
    }
    std::vector<int> ax = axes;
    return make_node(out_shape, std::move(out), {a}, [ax](Node& self) {
        const Shape& in_shape = self.parents[0]->shape;
        const Shape small2 = reduced_shape(in_shape, ax);
        const auto sstr2 = effective_strides(in_shape, small2);
        auto& ga = self.parents[0]->grad;
        const auto& g = self.grad;
        for_each_mapped(in_shape, sstr2, [&](int64_t flat, int64_t soff) { ga[flat] += g[soff]; });
    });
}

Tensor mean_axes(const Tensor& a, const std::vector<int>& axes, bool keepdim) {
    int64_t cnt = 1;
    for (int ax : axes) cnt *= a.dim(ax);
    return mul_scalar(sum_axes(a, axes, keepdim), 1.0f / static_cast<float>(cnt));
}

Tensor max_axis(const Tensor& a, int axis, bool keepdim) {
    const Shape& s = a.shape();
    if (axis < 0 || axis >= a.ndim()) throw SchemaError("max_axis: axis out of range");
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= s[d];
    for (int d = axis + 1; d < a.ndim(); ++d) inner *= s[d];
    const int n = s[axis];

    std::vector<float> out(static_cast<size_t>(outer * inner));
    std::vector<int64_t> arg(out.size());
    const float* pa = a.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            int64_t best = (o * n) * inner + i;
            float bv = pa[best];
            for (int k = 1; k < n; ++k) {
                const int64_t idx = (o * n + k) * inner + i;
                if (pa[idx] > bv) {
                    bv = pa[idx];
                    best = idx;
                }
            }
            out[o * inner + i] = bv;
            arg[o * inner + i] = best;
        }
    }
    Shape out_shape = s;
    if (keepdim) out_shape[axis] = 1;
    else out_shape.erase(out_shape.begin() + axis);
    if (out_shape.empty()) out_shape.push_back(1);
    return make_node(out_shape, std::move(out), {a}, [arg](Node& self) {
        auto& ga = self.parents[0]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) ga[arg[i]] += self.grad[i];
    });
}

// ---------------- shape ----------------

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel())
        throw SchemaError("reshape: numel mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
    std::vector<float> out(a.values());
    return make_node(shape, std::move(out), {a}, [](Node& self) {
        auto& ga = self.parents[0]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw SchemaError("concat: empty list");
    const Shape& first = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(first.size()))
        throw SchemaError("concat: axis out of range");
    Shape out_shape = first;
    int total = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) throw SchemaError("concat: rank mismatch");
        for (size_t d = 0; d < s.size(); ++d)
            if (static_cast<int>(d) != axis && s[d] != first[d])
                throw SchemaError("concat: dim mismatch at axis " + std::to_string(d));
        total += s[axis];
    }
    out_shape[axis] = total;

    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= first[d];
    for (size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

    std::vector<float> out(static_cast<size_t>(shape_numel(out_shape)));
    const int64_t out_chunk = static_cast<int64_t>(total) * inner;
    int64_t off = 0;
    for (const Tensor& p : parts) {
        const int64_t chunk = static_cast<int64_t>(p.dim(axis)) * inner;
        const float* src = p.data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(src + o * chunk, src + (o + 1) * chunk, out.data() + o * out_chunk + off);
        off += chunk;
    }
    return make_node(out_shape, std::move(out), parts, [axis, outer, inner](Node& self) {
        int64_t total_ax = 0;
        for (auto& p : self.parents) total_ax += p->shape[axis];
        const int64_t out_chunk = total_ax * inner;
        int64_t off2 = 0;
        for (auto& p : self.parents) {
            const int64_t chunk = static_cast<int64_t>(p->shape[axis]) * inner;
            for (int64_t o = 0; o < outer; ++o) {
                const float* g = self.grad.data() + o * out_chunk + off2;
                float* dst = p->grad.data() + o * chunk;
                for (int64_t i = 0; i < chunk; ++i) dst[i] += g[i];
            }
            off2 += chunk;
        }
    });
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
    const Shape& s = a.shape();
    if (axis < 0 || axis >= a.ndim()) throw SchemaError("slice: axis out of range");
    if (start < 0 || len <= 0 || start + len > s[axis]) throw SchemaError("slice: range out of bounds");
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= s[d];
    for (int d = axis + 1; d < a.ndim(); ++d) inner *= s[d];

    Shape out_shape = s;
    out_shape[axis] = len;
    std::vector<float> out(static_cast<size_t>(shape_numel(out_shape)));
    const int64_t in_chunk = static_cast<int64_t>(s[axis]) * inner;
    const int64_t out_chunk = static_cast<int64_t>(len) * inner;
    const float* src = a.data();
    for (int64_t o = 0; o < outer; ++o)
        std::copy(src + o * in_chunk + start * inner,
                  src + o * in_chunk + (start + len) * inner,
                  out.data() + o * out_chunk);
    return make_node(out_shape, std::move(out), {a},
                     [outer, inner, in_chunk, out_chunk, start](Node& self) {
                         auto& ga = self.parents[0]->grad;
                         for (int64_t o = 0; o < outer; ++o) {
                             const float* g = self.grad.data() + o * out_chunk;
                             float* dst = ga.data() + o * in_chunk + start * inner;
                             for (int64_t i = 0; i < out_chunk; ++i) dst[i] += g[i];
                         }
                     });
}

Tensor softmax(const Tensor& a, int axis) {
    const Shape& s = a.shape();
    if (axis < 0 || axis >= a.ndim()) throw SchemaError("softmax: axis out of range");
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= s[d];
    for (int d = axis + 1; d < a.ndim(); ++d) inner *= s[d];
    const int n = s[axis];

    std::vector<float> out(a.values().size());
    const float* pa = a.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            float mx = -std::numeric_limits<float>::infinity();
            for (int k = 0; k < n; ++k) mx = std::max(mx, pa[(o * n + k) * inner + i]);
            double denom = 0.0;
            for (int k = 0; k < n; ++k) {
                const int64_t idx = (o * n + k) * inner + i;
                const float e = std::exp(pa[idx] - mx);
                out[idx] = e;
                denom += e;
            }
            const float inv = static_cast<float>(1.0 / denom);
            for (int k = 0; k < n; ++k) out[(o * n + k) * inner + i] *= inv;
        }
    }
    return make_node(s, std::move(out), {a}, [outer, inner, n](Node& self) {
        auto& ga = self.parents[0]->grad;
        const auto& y = self.val;
        const auto& g = self.grad;
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t i = 0; i < inner; ++i) {
                double dot = 0.0;
                for (int k = 0; k < n; ++k) {
                    const int64_t idx = (o * n + k) * inner + i;
                    dot += static_cast<double>(y[idx]) * g[idx];
                }
                for (int k = 0; k < n; ++k) {
                    const int64_t idx = (o * n + k) * inner + i;
                    ga[idx] += y[idx] * (g[idx] - static_cast<float>(dot));
                }
            }
        }
    });
}

// ---------------- linear algebra ----------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw SchemaError("matmul: bad shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<float> out(static_cast<size_t>(m) * n);
    CMapRM A(a.data(), m, k), B(b.data(), k, n);
    MapRM(out.data(), m, n).noalias() = A * B;
    return make_node({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        CMapRM G(self.grad.data(), m, n);
        CMapRM A2(self.parents[0]->val.data(), m, k);
        CMapRM B2(self.parents[1]->val.data(), k, n);
        MapRM(self.parents[0]->grad.data(), m, k).noalias() += G * B2.transpose();
        MapRM(self.parents[1]->grad.data(), k, n).noalias() += A2.transpose() * G;
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(0) || b.ndim() != 1 || b.dim(0) != w.dim(1))
        throw SchemaError("linear: bad shapes");
    const int n = x.dim(0), k = x.dim(1), m = w.dim(1);
    std::vector<float> out(static_cast<size_t>(n) * m);
    CMapRM X(x.data(), n, k), W(w.data(), k, m);
    MapRM O(out.data(), n, m);
    O.noalias() = X * W;
    O.rowwise() += CMapVec(b.data(), m).transpose();
    return make_node({n, m}, std::move(out), {x, w, b}, [n, k, m](Node& self) {
        CMapRM G(self.grad.data(), n, m);
        CMapRM X2(self.parents[0]->val.data(), n, k);
        CMapRM W2(self.parents[1]->val.data(), k, m);
        MapRM(self.parents[0]->grad.data(), n, k).noalias() += G * W2.transpose();
        MapRM(self.parents[1]->grad.data(), k, m).noalias() += X2.transpose() * G;
        MapVec(self.parents[2]->grad.data(), m) += G.colwise().sum().transpose();
    });
}

// ---------------- convolution ----------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.ndim() != 4 || w.ndim() != 4) throw SchemaError("conv2d: inputs must be 4-D");
    const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Ci) throw SchemaError("conv2d: channel mismatch");
    if (b.ndim() != 1 || b.dim(0) != Co) throw SchemaError("conv2d: bias shape");
    if (stride < 1) throw SchemaError("conv2d: stride must be >= 1");
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw SchemaError("conv2d: output would be empty");

    const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && pad == 0);
    const int64_t kk = static_cast<int64_t>(Ci) * kh * kw;
    const int64_t sp = static_cast<int64_t>(Ho) * Wo;

    std::vector<float> out(static_cast<size_t>(B) * Co * sp);
    std::vector<float> col;
    if (!pointwise) col.resize(static_cast<size_t>(kk) * sp);
    // the forward product accumulates in double: single-precision GEMM noise
    // compounds across deep stacks and spoils reproducibility checks
    const Eigen::MatrixXd Wd = CMapRM(w.data(), Co, kk).cast<double>();
    Eigen::MatrixXd colD, Od;
    for (int bi = 0; bi < B; ++bi) {
        const float* xb = x.data() + static_cast<size_t>(bi) * Ci * H * W;
        const float* cb = xb;
        if (!pointwise) {
            im2col(xb, Ci, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
            cb = col.data();
        }
        colD = CMapRM(cb, kk, sp).cast<double>();
        Od.noalias() = Wd * colD;
        MapRM Om(out.data() + static_cast<size_t>(bi) * Co * sp, Co, sp);
        Om = Od.cast<float>();
        Om.colwise() += CMapVec(b.data(), Co);
    }

    return make_node({B, Co, Ho, Wo}, std::move(out), {x, w, b},
                     [stride, pad, pointwise](Node& self) {
                         Node& xn = *self.parents[0];
                         Node& wn = *self.parents[1];
                         Node& bn = *self.parents[2];
                         const int B2 = xn.shape[0], Ci2 = xn.shape[1], H2 = xn.shape[2], W2 = xn.shape[3];
                         const int Co2 = wn.shape[0], kh2 = wn.shape[2], kw2 = wn.shape[3];
                         const int Ho2 = self.shape[2], Wo2 = self.shape[3];
                         const int64_t kk2 = static_cast<int64_t>(Ci2) * kh2 * kw2;
                         const int64_t sp2 = static_cast<int64_t>(Ho2) * Wo2;

                         CMapRM Wm2(wn.val.data(), Co2, kk2);
                         MapRM dW(wn.grad.data(), Co2, kk2);
                         MapVec dB(bn.grad.data(), Co2);
                         std::vector<float> col2, dcol;
                         if (!pointwise) {
                             col2.resize(static_cast<size_t>(kk2) * sp2);
                             dcol.resize(col2.size());
                         }
                         for (int bi = 0; bi < B2; ++bi) {
                             const float* xb = xn.val.data() + static_cast<size_t>(bi) * Ci2 * H2 * W2;
                             CMapRM G(self.grad.data() + static_cast<size_t>(bi) * Co2 * sp2, Co2, sp2);
                             dB += G.rowwise().sum();
                             if (pointwise) {
                                 dW.noalias() += G * CMapRM(xb, kk2, sp2).transpose();
                                 MapRM dX(xn.grad.data() + static_cast<size_t>(bi) * Ci2 * H2 * W2, kk2, sp2);
                                 dX.noalias() += Wm2.transpose() * G;
                             } else {
                                 im2col(xb, Ci2, H2, W2, kh2, kw2, stride, pad, Ho2, Wo2, col2.data());
                                 dW.noalias() += G * CMapRM(col2.data(), kk2, sp2).transpose();
                                 MapRM(dcol.data(), kk2, sp2).noalias() = Wm2.transpose() * G;
                                 col2im_acc(dcol.data(), Ci2, H2, W2, kh2, kw2, stride, pad, Ho2, Wo2,
                                            xn.grad.data() + static_cast<size_t>(bi) * Ci2 * H2 * W2);
                             }
                         }
                     });
}

Tensor nearest_upsample2x(const Tensor& x) {
    if (x.ndim() != 4) throw SchemaError("nearest_upsample2x: 4-D input required");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::vector<float> out(static_cast<size_t>(B) * C * 4 * H * W);
    const float* px = x.data();
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const float* src = px + bc * H * W;
        float* dst = out.data() + bc * 4 * H * W;
        for (int y = 0; y < 2 * H; ++y) {
            const float* srow = src + (y / 2) * W;
            float* drow = dst + static_cast<int64_t>(y) * 2 * W;
            for (int xx = 0; xx < 2 * W; ++xx) drow[xx] = srow[xx / 2];
        }
    }
    return make_node({B, C, 2 * H, 2 * W}, std::move(out), {x}, [](Node& self) {
        Node& xn = *self.parents[0];
        const int H2 = xn.shape[2], W2 = xn.shape[3];
        const int64_t planes = static_cast<int64_t>(xn.shape[0]) * xn.shape[1];
        for (int64_t bc = 0; bc < planes; ++bc) {
            float* dst = xn.grad.data() + bc * H2 * W2;
            const float* g = self.grad.data() + bc * 4 * H2 * W2;
            for (int y = 0; y < 2 * H2; ++y)
                for (int xx = 0; xx < 2 * W2; ++xx)
                    dst[(y / 2) * W2 + xx / 2] += g[static_cast<int64_t>(y) * 2 * W2 + xx];
        }
    });
}

Tensor avg_pool2x2(const Tensor& x) {
    if (x.ndim() != 4) throw SchemaError("avg_pool2x2: 4-D input required");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 || W % 2) throw SchemaError("avg_pool2x2: odd spatial size");
    const int Ho = H / 2, Wo = W / 2;
    std::vector<float> out(static_cast<size_t>(B) * C * Ho * Wo);
    const float* px = x.data();
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const float* src = px + bc * H * W;
        float* dst = out.data() + bc * Ho * Wo;
        for (int y = 0; y < Ho; ++y)
            for (int xx = 0; xx < Wo; ++xx)
                dst[y * Wo + xx] = 0.25f * (src[(2 * y) * W + 2 * xx] + src[(2 * y) * W + 2 * xx + 1] +
                                            src[(2 * y + 1) * W + 2 * xx] + src[(2 * y + 1) * W + 2 * xx + 1]);
    }
    return make_node({B, C, Ho, Wo}, std::move(out), {x}, [](Node& self) {
        Node& xn = *self.parents[0];
        const int H2 = xn.shape[2], W2 = xn.shape[3];
        const int Ho2 = H2 / 2, Wo2 = W2 / 2;
        const int64_t planes = static_cast<int64_t>(xn.shape[0]) * xn.shape[1];
        for (int64_t bc = 0; bc < planes; ++bc) {
            float* dst = xn.grad.data() + bc * H2 * W2;
            const float* g = self.grad.data() + bc * Ho2 * Wo2;
            for (int y = 0; y < Ho2; ++y)
                for (int xx = 0; xx < Wo2; ++xx) {
                    const float q = 0.25f * g[y * Wo2 + xx];
                    dst[(2 * y) * W2 + 2 * xx] += q;
                    dst[(2 * y) * W2 + 2 * xx + 1] += q;
                    dst[(2 * y + 1) * W2 + 2 * xx] += q;
                    dst[(2 * y + 1) * W2 + 2 * xx + 1] += q;
                }
        }
    });
}

namespace {
struct Tap {
    int lo, hi;
    float f;  // weight of hi
};
std::vector<Tap> resize_taps(int in, int out) {
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        const double src = (i + 0.5) * scale - 0.5;
        int lo = static_cast<int>(std::floor(src));
        double f = src - lo;
        if (lo < 0) { lo = 0; f = 0.0; }
        int hi = std::min(lo + 1, in - 1);
        if (lo > in - 1) lo = in - 1;
        taps[i] = {lo, hi, static_cast<float>(std::clamp(f, 0.0, 1.0))};
    }
    return taps;
}
}  // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
    if (x.ndim() != 4) throw SchemaError("bilinear_resize: 4-D input required");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (out_h < 1 || out_w < 1) throw SchemaError("bilinear_resize: bad output size");
    const auto ty = resize_taps(H, out_h);
    const auto tx = resize_taps(W, out_w);
    std::vector<float> out(static_cast<size_t>(B) * C * out_h * out_w);
    const float* px = x.data();
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const float* src = px + bc * H * W;
        float* dst = out.data() + bc * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            const Tap& a = ty[y];
            for (int xx = 0; xx < out_w; ++xx) {
                const Tap& b = tx[xx];
                const float top = src[a.lo * W + b.lo] * (1 - b.f) + src[a.lo * W + b.hi] * b.f;
                const float bot = src[a.hi * W + b.lo] * (1 - b.f) + src[a.hi * W + b.hi] * b.f;
                dst[y * out_w + xx] = top * (1 - a.f) + bot * a.f;
            }
        }
    }
    return make_node({B, C, out_h, out_w}, std::move(out), {x}, [out_h, out_w](Node& self) {
        Node& xn = *self.parents[0];
        const int H2 = xn.shape[2], W2 = xn.shape[3];
        const auto ty2 = resize_taps(H2, out_h);
        const auto tx2 = resize_taps(W2, out_w);
        const int64_t planes = static_cast<int64_t>(xn.shape[0]) * xn.shape[1];
        for (int64_t bc = 0; bc < planes; ++bc) {
            float* dst = xn.grad.data() + bc * H2 * W2;
            const float* g = self.grad.data() + bc * out_h * out_w;
            for (int y = 0; y < out_h; ++y) {
                const Tap& a = ty2[y];
                for (int xx = 0; xx < out_w; ++xx) {
                    const Tap& b = tx2[xx];
                    const float gv = g[y * out_w + xx];
                    dst[a.lo * W2 + b.lo] += gv * (1 - a.f) * (1 - b.f);
                    dst[a.lo * W2 + b.hi] += gv * (1 - a.f) * b.f;
                    dst[a.hi * W2 + b.lo] += gv * a.f * (1 - b.f);
                    dst[a.hi * W2 + b.hi] += gv * a.f * b.f;
                }
            }
        }
    });
}

Tensor space_to_depth2(const Tensor& x) {
    if (x.ndim() != 4) throw SchemaError("space_to_depth2: 4-D input required");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 || W % 2) throw SchemaError("space_to_depth2: odd spatial size");
    const int Ho = H / 2, Wo = W / 2;
    std::vector<float> out(x.values().size());
    const float* px = x.data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const int oc = c * 4 + dy * 2 + dx;
                    float* dst = out.data() + ((static_cast<int64_t>(b) * C * 4 + oc) * Ho) * Wo;
                    const float* src = px + ((static_cast<int64_t>(b) * C + c) * H) * W;
                    for (int y = 0; y < Ho; ++y)
                        for (int xx = 0; xx < Wo; ++xx)
                            dst[y * Wo + xx] = src[(2 * y + dy) * W + 2 * xx + dx];
                }
    return make_node({B, C * 4, Ho, Wo}, std::move(out), {x}, [](Node& self) {
        Node& xn = *self.parents[0];
        const int B2 = xn.shape[0], C2 = xn.shape[1], H2 = xn.shape[2], W2 = xn.shape[3];
        const int Ho2 = H2 / 2, Wo2 = W2 / 2;
        for (int b = 0; b < B2; ++b)
            for (int c = 0; c < C2; ++c)
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int oc = c * 4 + dy * 2 + dx;
                        const float* g = self.grad.data() + ((static_cast<int64_t>(b) * C2 * 4 + oc) * Ho2) * Wo2;
                        float* dst = xn.grad.data() + ((static_cast<int64_t>(b) * C2 + c) * H2) * W2;
                        for (int y = 0; y < Ho2; ++y)
                            for (int xx = 0; xx < Wo2; ++xx)
                                dst[(2 * y + dy) * W2 + 2 * xx + dx] += g[y * Wo2 + xx];
                    }
    });
}

Tensor depth_to_space2(const Tensor& x) {
    if (x.ndim() != 4) throw SchemaError("depth_to_space2: 4-D input required");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C % 4) throw SchemaError("depth_to_space2: channels not divisible by 4");
    const int Co = C / 4;
    std::vector<float> out(x.values().size());
    const float* px = x.data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < Co; ++c)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const int ic = c * 4 + dy * 2 + dx;
                    const float* src = px + ((static_cast<int64_t>(b) * C + ic) * H) * W;
                    float* dst = out.data() + ((static_cast<int64_t>(b) * Co + c) * 2 * H) * 2 * W;
                    for (int y = 0; y < H; ++y)
                        for (int xx = 0; xx < W; ++xx)
                            dst[(2 * y + dy) * 2 * W + 2 * xx + dx] = src[y * W + xx];
                }
    return make_node({B, Co, 2 * H, 2 * W}, std::move(out), {x}, [](Node& self) {
        Node& xn = *self.parents[0];
        const int B2 = xn.shape[0], C2 = xn.shape[1], H2 = xn.shape[2], W2 = xn.shape[3];
        const int Co2 = C2 / 4;
        for (int b = 0; b < B2; ++b)
            for (int c = 0; c < Co2; ++c)
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int ic = c * 4 + dy * 2 + dx;
                        float* dst = xn.grad.data() + ((static_cast<int64_t>(b) * C2 + ic) * H2) * W2;
                        const float* g = self.grad.data() + ((static_cast<int64_t>(b) * Co2 + c) * 2 * H2) * 2 * W2;
                        for (int y = 0; y < H2; ++y)
                            for (int xx = 0; xx < W2; ++xx)
                                dst[y * W2 + xx] += g[(2 * y + dy) * 2 * W2 + 2 * xx + dx];
                    }
    });
}

// ---------------- normalization ----------------

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps) {
    if (x.ndim() != 4) throw SchemaError("group_norm: 4-D input required");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (groups < 1 || C % groups) throw SchemaError("group_norm: channels not divisible by groups");
    if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C)
        throw SchemaError("group_norm: affine shape");
    const int cs = C / groups;
    const int64_t gsize = static_cast<int64_t>(cs) * H * W;

    std::vector<float> out(x.values().size());
    std::vector<float> mus(static_cast<size_t>(B) * groups), rstds(mus.size());
    const float* px = x.data();
    const float* pg = gamma.data();
    const float* pb = beta.data();
    for (int b = 0; b < B; ++b) {
        for (int g = 0; g < groups; ++g) {
            const float* src = px + (static_cast<int64_t>(b) * C + g * cs) * H * W;
            double mean = 0.0;
            for (int64_t i = 0; i < gsize; ++i) mean += src[i];
            mean /= gsize;
            double var = 0.0;
            for (int64_t i = 0; i < gsize; ++i) {
                const double d = src[i] - mean;
                var += d * d;
            }
            var /= gsize;
            const float mu = static_cast<float>(mean);
            const float rstd = static_cast<float>(1.0 / std::sqrt(var + eps));
            mus[b * groups + g] = mu;
            rstds[b * groups + g] = rstd;
            float* dst = out.data() + (static_cast<int64_t>(b) * C + g * cs) * H * W;
            for (int c = 0; c < cs; ++c) {
                const float ga = pg[g * cs + c], be = pb[g * cs + c];
                const float* s = src + static_cast<int64_t>(c) * H * W;
                float* d = dst + static_cast<int64_t>(c) * H * W;
                for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
                    d[i] = (s[i] - mu) * rstd * ga + be;
            }
        }
    }
    return make_node(x.shape(), std::move(out), {x, gamma, beta},
                     [groups, eps, mus, rstds](Node& self) {
                         Node& xn = *self.parents[0];
                         Node& gn = *self.parents[1];
                         Node& bn = *self.parents[2];
                         const int B2 = xn.shape[0], C2 = xn.shape[1], H2 = xn.shape[2], W2 = xn.shape[3];
                         const int cs2 = C2 / groups;
                         const int64_t hw = static_cast<int64_t>(H2) * W2;
                         const int64_t gsize2 = cs2 * hw;
                         for (int b = 0; b < B2; ++b) {
                             for (int g = 0; g < groups; ++g) {
                                 const float mu = mus[b * groups + g];
                                 const float rstd = rstds[b * groups + g];
                                 const float* xv = xn.val.data() + (static_cast<int64_t>(b) * C2 + g * cs2) * hw;
                                 const float* gr = self.grad.data() + (static_cast<int64_t>(b) * C2 + g * cs2) * hw;
                                 double s1 = 0.0, s2 = 0.0;
                                 for (int c = 0; c < cs2; ++c) {
                                     const float ga = gn.val[g * cs2 + c];
                                     for (int64_t i = 0; i < hw; ++i) {
                                         const float xh = (xv[c * hw + i] - mu) * rstd;
                                         const float dy = gr[c * hw + i] * ga;
                                         s1 += dy;
                                         s2 += static_cast<double>(dy) * xh;
                                     }
                                 }
                                 const float m1 = static_cast<float>(s1 / gsize2);
                                 const float m2 = static_cast<float>(s2 / gsize2);
                                 float* dx = xn.grad.data() + (static_cast<int64_t>(b) * C2 + g * cs2) * hw;
                                 for (int c = 0; c < cs2; ++c) {
                                     const float ga = gn.val[g * cs2 + c];
                                     double dgam = 0.0, dbet = 0.0;
                                     for (int64_t i = 0; i < hw; ++i) {
                                         const float xh = (xv[c * hw + i] - mu) * rstd;
                                         const float go = gr[c * hw + i];
                                         const float dy = go * ga;
                                         dx[c * hw + i] += rstd * (dy - m1 - xh * m2);
                                         dgam += static_cast<double>(go) * xh;
                                         dbet += go;
                                     }
                                     gn.grad[g * cs2 + c] += static_cast<float>(dgam);
                                     bn.grad[g * cs2 + c] += static_cast<float>(dbet);
                                 }
                             }
                         }
                     });
}

Tensor spatial_norm(const Tensor& x, float eps) {
    if (x.ndim() != 4) throw SchemaError("spatial_norm: 4-D input required");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t hw = static_cast<int64_t>(H) * W;

    std::vector<float> out(x.values().size());
    std::vector<float> mus(static_cast<size_t>(B) * C), rstds(mus.size());
    const float* px = x.data();
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const float* src = px + bc * hw;
        double mean = 0.0;
        for (int64_t i = 0; i < hw; ++i) mean += src[i];
        mean /= hw;
        double var = 0.0;
        for (int64_t i = 0; i < hw; ++i) {
            const double d = src[i] - mean;
            var += d * d;
        }
        var /= hw;
        const float mu = static_cast<float>(mean);
        const float rstd = static_cast<float>(1.0 / std::sqrt(var + eps));
        mus[bc] = mu;
        rstds[bc] = rstd;
        float* dst = out.data() + bc * hw;
        for (int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mu) * rstd;
    }
    return make_node(x.shape(), std::move(out), {x}, [mus, rstds](Node& self) {
        Node& xn = *self.parents[0];
        const int64_t hw2 = static_cast<int64_t>(xn.shape[2]) * xn.shape[3];
        const int64_t planes = static_cast<int64_t>(xn.shape[0]) * xn.shape[1];
        for (int64_t bc = 0; bc < planes; ++bc) {
            const float mu = mus[bc];
            const float rstd = rstds[bc];
            const float* xv = xn.val.data() + bc * hw2;
            const float* g = self.grad.data() + bc * hw2;
            double s1 = 0.0, s2 = 0.0;
            for (int64_t i = 0; i < hw2; ++i) {
                const float xh = (xv[i] - mu) * rstd;
                s1 += g[i];
                s2 += static_cast<double>(g[i]) * xh;
            }
            const float m1 = static_cast<float>(s1 / hw2);
            const float m2 = static_cast<float>(s2 / hw2);
            float* dx = xn.grad.data() + bc * hw2;
            for (int64_t i = 0; i < hw2; ++i) {
                const float xh = (xv[i] - mu) * rstd;
                dx[i] += rstd * (g[i] - m1 - xh * m2);
            }
        }
    });
}

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        float eps, std::vector<float>* out_mean, std::vector<float>* out_var) {
    if (x.ndim() != 4) throw SchemaError("batch_norm: 4-D input required");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.dim(0) != C || beta.dim(0) != C) throw SchemaError("batch_norm: affine shape");
    const int64_t hw = static_cast<int64_t>(H) * W;
    const int64_t n = static_cast<int64_t>(B) * hw;

    std::vector<float> mus(C), rstds(C), vars(C);
    const float* px = x.data();
    for (int c = 0; c < C; ++c) {
        double mean = 0.0;
        for (int b = 0; b < B; ++b) {
            const float* src = px + (static_cast<int64_t>(b) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) mean += src[i];
        }
        mean /= n;
        double var = 0.0;
        for (int b = 0; b < B; ++b) {
            const float* src = px + (static_cast<int64_t>(b) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) {
                const double d = src[i] - mean;
                var += d * d;
            }
        }
        var /= n;
        mus[c] = static_cast<float>(mean);
        vars[c] = static_cast<float>(var);
        rstds[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
    }
    if (out_mean) *out_mean = mus;
    if (out_var) *out_var = vars;

    std::vector<float> out(x.values().size());
    const float* pg = gamma.data();
    const float* pb = beta.data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* src = px + (static_cast<int64_t>(b) * C + c) * hw;
            float* dst = out.data() + (static_cast<int64_t>(b) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mus[c]) * rstds[c] * pg[c] + pb[c];
        }
    return make_node(x.shape(), std::move(out), {x, gamma, beta}, [mus, rstds](Node& self) {
        Node& xn = *self.parents[0];
        Node& gn = *self.parents[1];
        Node& bn = *self.parents[2];
        const int B2 = xn.shape[0], C2 = xn.shape[1];
        const int64_t hw2 = static_cast<int64_t>(xn.shape[2]) * xn.shape[3];
        const int64_t n2 = static_cast<int64_t>(B2) * hw2;
        for (int c = 0; c < C2; ++c) {
            const float mu = mus[c], rstd = rstds[c], ga = gn.val[c];
            double s1 = 0.0, s2 = 0.0, dgam = 0.0, dbet = 0.0;
            for (int b = 0; b < B2; ++b) {
                const float* xv = xn.val.data() + (static_cast<int64_t>(b) * C2 + c) * hw2;
                const float* g = self.grad.data() + (static_cast<int64_t>(b) * C2 + c) * hw2;
                for (int64_t i = 0; i < hw2; ++i) {
                    const float xh = (xv[i] - mu) * rstd;
                    const float dy = g[i] * ga;
                    s1 += dy;
                    s2 += static_cast<double>(dy) * xh;
                    dgam += static_cast<double>(g[i]) * xh;
                    dbet += g[i];
                }
            }
            const float m1 = static_cast<float>(s1 / n2);
            const float m2 = static_cast<float>(s2 / n2);
            for (int b = 0; b < B2; ++b) {
                const float* xv = xn.val.data() + (static_cast<int64_t>(b) * C2 + c) * hw2;
                const float* g = self.grad.data() + (static_cast<int64_t>(b) * C2 + c) * hw2;
                float* dx = xn.grad.data() + (static_cast<int64_t>(b) * C2 + c) * hw2;
                for (int64_t i = 0; i < hw2; ++i) {
                    const float xh = (xv[i] - mu) * rstd;
                    dx[i] += rstd * (g[i] * ga - m1 - xh * m2);
                }
            }
            gn.grad[c] += static_cast<float>(dgam);
            bn.grad[c] += static_cast<float>(dbet);
        }
    });
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& run_mean, const Tensor& run_var, float eps) {
    if (x.ndim() != 4) throw SchemaError("batch_norm: 4-D input required");
    const int B = x.dim(0), C = x.dim(1);
    const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    std::vector<float> rstds(C);
    for (int c = 0; c < C; ++c) rstds[c] = 1.0f / std::sqrt(run_var.data()[c] + eps);

    std::vector<float> out(x.values().size());
    const float* px = x.data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float mu = run_mean.data()[c];
            const float k = rstds[c] * gamma.data()[c];
            const float be = beta.data()[c];
            const float* src = px + (static_cast<int64_t>(b) * C + c) * hw;
            float* dst = out.data() + (static_cast<int64_t>(b) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mu) * k + be;
        }
    return make_node(x.shape(), std::move(out), {x, gamma, beta}, [rstds, run_mean, run_var](Node& self) {
        Node& xn = *self.parents[0];
        Node& gn = *self.parents[1];
        Node& bn = *self.parents[2];
        const int B2 = xn.shape[0], C2 = xn.shape[1];
        const int64_t hw2 = static_cast<int64_t>(xn.shape[2]) * xn.shape[3];
        for (int c = 0; c < C2; ++c) {
            const float mu = run_mean.data()[c];
            const float rstd = rstds[c];
            const float ga = gn.val[c];
            double dgam = 0.0, dbet = 0.0;
            for (int b = 0; b < B2; ++b) {
                const float* xv = xn.val.data() + (static_cast<int64_t>(b) * C2 + c) * hw2;
                const float* g = self.grad.data() + (static_cast<int64_t>(b) * C2 + c) * hw2;
                float* dx = xn.grad.data() + (static_cast<int64_t>(b) * C2 + c) * hw2;
                for (int64_t i = 0; i < hw2; ++i) {
                    dx[i] += g[i] * ga * rstd;
                    dgam += static_cast<double>(g[i]) * (xv[i] - mu) * rstd;
                    dbet += g[i];
                }
            }
            gn.grad[c] += static_cast<float>(dgam);
            bn.grad[c] += static_cast<float>(dbet);
        }
    });
}

// ---------------- misc ----------------

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw SchemaError("embedding: table must be 2-D");
    const int V = table.dim(0), D = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= V) throw SchemaError("embedding: id out of range");
    std::vector<float> out(ids.size() * static_cast<size_t>(D));
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy(table.data() + static_cast<size_t>(ids[i]) * D,
                  table.data() + static_cast<size_t>(ids[i] + 1) * D,
                  out.data() + i * D);
    return make_node({static_cast<int>(ids.size()), D}, std::move(out), {table}, [ids, D](Node& self) {
        auto& gt = self.parents[0]->grad;
        for (size_t i = 0; i < ids.size(); ++i) {
            const float* g = self.grad.data() + i * D;
            float* dst = gt.data() + static_cast<size_t>(ids[i]) * D;
            for (int d = 0; d < D; ++d) dst[d] += g[d];
        }
    });
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mse_loss");
    const float* pa = a.data();
    const float* pb = b.data();
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(pa[i]) - pb[i];
        acc += d * d;
    }
    const float n = static_cast<float>(a.numel());
    return make_node({1}, {static_cast<float>(acc / n)}, {a, b}, [n](Node& self) {
        const auto& va = self.parents[0]->val;
        const auto& vb = self.parents[1]->val;
        auto& ga = self.parents[0]->grad;
        auto& gb = self.parents[1]->grad;
        const float coef = 2.0f * self.grad[0] / n;
        for (size_t i = 0; i < va.size(); ++i) {
            const float d = coef * (va[i] - vb[i]);
            ga[i] += d;
            gb[i] -= d;
        }
    });
}

Tensor randn(const Shape& shape, Rng& rng, float stddev) {
    std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
    for (float& v : data) v = static_cast<float>(rng.normal()) * stddev;
    return Tensor::from_data(shape, std::move(data));
}

}  // namespace mvps::nn
