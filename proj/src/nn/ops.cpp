#include "murestitch/nn/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace murestitch::nn {

namespace {

template <typename T>
void require(bool cond, const char* op, const std::string& what) {
    if (!cond) throw std::invalid_argument(std::string(op) + ": " + what);
}

template <typename T>
void im2col(const T* x, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
            T* col) {
    const int out_hw = out_h * out_w;
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * out_hw;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    T* dst = row + oy * out_w;
                    if (iy < 0 || iy >= height) {
                        for (int ox = 0; ox < out_w; ++ox) dst[ox] = T(0);
                        continue;
                    }
                    const T* src = x + (static_cast<std::size_t>(c) * height + iy) * width;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        dst[ox] = (ix >= 0 && ix < width) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
            T* x) {
    const int out_hw = out_h * out_w;
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * out_hw;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= height) continue;
                    T* dst = x + (static_cast<std::size_t>(c) * height + iy) * width;
                    const T* src = row + oy * out_w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < width) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require<T>(a->value.shape == b->value.shape, "add",
               shape_string(a->value.shape) + " vs " + shape_string(b->value.shape));
    Tensor<T> out(a->value.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
        for (auto& p : n.parents) {
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require<T>(a->value.shape == b->value.shape, "sub", "shape mismatch");
    Tensor<T> out(a->value.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
        const T sign[2] = {T(1), T(-1)};
        for (int k = 0; k < 2; ++k) {
            auto& p = n.parents[static_cast<std::size_t>(k)];
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * n.grad[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
    Tensor<T> out(x->value.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x->value[i];
    return make_result<T>(std::move(out), {x}, [factor](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * n.grad[i];
    });
}

template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& v) {
    require<T>(x->value.rank() == 3, "add_channel_bias", "expected [C, H, W]");
    const int channels = x->value.dim(0);
    const std::size_t plane = x->value.size() / static_cast<std::size_t>(channels);
    require<T>(v->value.size() == static_cast<std::size_t>(channels), "add_channel_bias", "bias size mismatch");
    Tensor<T> out = x->value;
    for (int c = 0; c < channels; ++c) {
        T* dst = out.ptr() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += v->value[static_cast<std::size_t>(c)];
    }
    return make_result<T>(std::move(out), {x, v}, [channels, plane](Node<T>& n) {
        if (n.parents[0]->requires_grad) {
            auto& g = n.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (n.parents[1]->requires_grad) {
            auto& g = n.parents[1]->grad_buffer();
            for (int c = 0; c < channels; ++c) {
                const T* src = n.grad.ptr() + c * plane;
                T acc = T(0);
                for (std::size_t i = 0; i < plane; ++i) acc += src[i];
                g[static_cast<std::size_t>(c)] += acc;
            }
        }
    });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
    Tensor<T> out(x->value.shape);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x->value[i];
        out[i] = v / (T(1) + std::exp(-v));
    }
    return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
        const auto& in = n.parents[0]->value;
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T s = T(1) / (T(1) + std::exp(-in[i]));
            g[i] += n.grad[i] * s * (T(1) + in[i] * (T(1) - s));
        }
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    require<T>(x->value.rank() == 2 && weight->value.rank() == 2, "linear", "expected 2-d operands");
    const int rows = x->value.dim(0);
    const int in = x->value.dim(1);
    const int out_dim = weight->value.dim(0);
    require<T>(weight->value.dim(1) == in, "linear",
               "input width " + std::to_string(in) + " vs weight " + shape_string(weight->value.shape));
    Tensor<T> out({rows, out_dim});
    auto y = as_matrix(out, rows, out_dim);
    y.noalias() = as_matrix(x->value, rows, in) * as_matrix(weight->value, out_dim, in).transpose();
    if (bias) {
        require<T>(bias->value.size() == static_cast<std::size_t>(out_dim), "linear", "bias size mismatch");
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < out_dim; ++c) y(r, c) += bias->value[static_cast<std::size_t>(c)];
    }
    std::vector<Var<T>> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_result<T>(std::move(out), std::move(parents), [rows, in, out_dim](Node<T>& n) {
        auto dy = as_matrix(static_cast<const Tensor<T>&>(n.grad), rows, out_dim);
        auto& xv = n.parents[0];
        auto& wv = n.parents[1];
        if (xv->requires_grad) {
            as_matrix(xv->grad_buffer(), rows, in).noalias() += dy * as_matrix(wv->value, out_dim, in);
        }
        if (wv->requires_grad) {
            as_matrix(wv->grad_buffer(), out_dim, in).noalias() += dy.transpose() * as_matrix(xv->value, rows, in);
        }
        if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
            auto& g = n.parents[2]->grad_buffer();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < out_dim; ++c) g[static_cast<std::size_t>(c)] += dy(r, c);
        }
    });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    require<T>(a->value.rank() == 2 && b->value.rank() == 2 && a->value.dim(1) == b->value.dim(0), "matmul",
               shape_string(a->value.shape) + " x " + shape_string(b->value.shape));
    const int m = a->value.dim(0), k = a->value.dim(1), cols = b->value.dim(1);
    Tensor<T> out({m, cols});
    as_matrix(out, m, cols).noalias() = as_matrix(a->value, m, k) * as_matrix(b->value, k, cols);
    return make_result<T>(std::move(out), {a, b}, [m, k, cols](Node<T>& n) {
        auto dy = as_matrix(static_cast<const Tensor<T>&>(n.grad), m, cols);
        auto& av = n.parents[0];
        auto& bv = n.parents[1];
        if (av->requires_grad)
            as_matrix(av->grad_buffer(), m, k).noalias() += dy * as_matrix(bv->value, k, cols).transpose();
        if (bv->requires_grad)
            as_matrix(bv->grad_buffer(), k, cols).noalias() += as_matrix(av->value, m, k).transpose() * dy;
    });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
    require<T>(a->value.rank() == 2 && b->value.rank() == 2 && a->value.dim(1) == b->value.dim(1), "matmul_nt",
               shape_string(a->value.shape) + " x " + shape_string(b->value.shape) + "^T");
    const int m = a->value.dim(0), k = a->value.dim(1), cols = b->value.dim(0);
    Tensor<T> out({m, cols});
    as_matrix(out, m, cols).noalias() = as_matrix(a->value, m, k) * as_matrix(b->value, cols, k).transpose();
    return make_result<T>(std::move(out), {a, b}, [m, k, cols](Node<T>& n) {
        auto dy = as_matrix(static_cast<const Tensor<T>&>(n.grad), m, cols);
        auto& av = n.parents[0];
        auto& bv = n.parents[1];
        if (av->requires_grad) as_matrix(av->grad_buffer(), m, k).noalias() += dy * as_matrix(bv->value, cols, k);
        if (bv->requires_grad)
            as_matrix(bv->grad_buffer(), cols, k).noalias() += dy.transpose() * as_matrix(av->value, m, k);
    });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x, T factor) {
    require<T>(x->value.rank() == 2, "softmax_rows", "expected [N, M]");
    const int rows = x->value.dim(0), cols = x->value.dim(1);
    Tensor<T> out(x->value.shape);
    for (int r = 0; r < rows; ++r) {
        const T* src = x->value.ptr() + static_cast<std::size_t>(r) * cols;
        T* dst = out.ptr() + static_cast<std::size_t>(r) * cols;
        T peak = factor * src[0];
        for (int c = 1; c < cols; ++c) peak = std::max(peak, factor * src[c]);
        T total = T(0);
        for (int c = 0; c < cols; ++c) {
            dst[c] = std::exp(factor * src[c] - peak);
            total += dst[c];
        }
        for (int c = 0; c < cols; ++c) dst[c] /= total;
    }
    return make_result<T>(std::move(out), {x}, [rows, cols, factor](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (int r = 0; r < rows; ++r) {
            const std::size_t off = static_cast<std::size_t>(r) * cols;
            T dot = T(0);
            for (int c = 0; c < cols; ++c) dot += n.grad[off + c] * n.value[off + c];
            for (int c = 0; c < cols; ++c) g[off + c] += factor * n.value[off + c] * (n.grad[off + c] - dot);
        }
    });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
    require<T>(x->value.rank() == 2, "transpose", "expected 2-d tensor");
    const int rows = x->value.dim(0), cols = x->value.dim(1);
    Tensor<T> out({cols, rows});
    as_matrix(out, cols, rows) = as_matrix(x->value, rows, cols).transpose();
    return make_result<T>(std::move(out), {x}, [rows, cols](Node<T>& n) {
        as_matrix(n.parents[0]->grad_buffer(), rows, cols) +=
            as_matrix(static_cast<const Tensor<T>&>(n.grad), cols, rows).transpose();
    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    require<T>(shape_numel(shape) == x->value.size(), "reshape",
               shape_string(x->value.shape) + " -> " + shape_string(shape));
    Tensor<T> out(std::move(shape), x->value.data);
    return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
    require<T>(!parts.empty(), "concat", "no inputs");
    Shape shape = parts.front()->value.shape;
    require<T>(!shape.empty(), "concat", "scalar inputs");
    int lead = 0;
    for (const auto& p : parts) {
        const auto& s = p->value.shape;
        require<T>(s.size() == shape.size() && std::equal(s.begin() + 1, s.end(), shape.begin() + 1), "concat",
                   "trailing dims differ: " + shape_string(s) + " vs " + shape_string(shape));
        lead += s[0];
    }
    shape[0] = lead;
    Tensor<T> out(shape);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
        offset += p->value.size();
    }
    return make_result<T>(std::move(out), parts, [](Node<T>& n) {
        std::size_t off = 0;
        for (auto& p : n.parents) {
            const std::size_t len = p->value.size();
            if (p->requires_grad) {
                auto& g = p->grad_buffer();
                for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[off + i];
            }
            off += len;
        }
    });
}

template <typename T>
Var<T> mean_rows(const Var<T>& x) {
    require<T>(x->value.rank() == 2 && x->value.dim(0) > 0, "mean_rows", "expected non-empty [N, D]");
    const int rows = x->value.dim(0), cols = x->value.dim(1);
    Tensor<T> out({1, cols});
    as_matrix(out, 1, cols) = as_matrix(x->value, rows, cols).colwise().mean();
    return make_result<T>(std::move(out), {x}, [rows, cols](Node<T>& n) {
        auto g = as_matrix(n.parents[0]->grad_buffer(), rows, cols);
        auto dy = as_matrix(static_cast<const Tensor<T>&>(n.grad), 1, cols);
        g.rowwise() += dy.row(0) / static_cast<T>(rows);
    });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride) {
    require<T>(x->value.rank() == 3 && weight->value.rank() == 4, "conv2d", "expected [C,H,W] and [O,C,k,k]");
    const int channels = x->value.dim(0), height = x->value.dim(1), width = x->value.dim(2);
    const int out_c = weight->value.dim(0), k = weight->value.dim(2);
    require<T>(weight->value.dim(1) == channels && weight->value.dim(3) == k, "conv2d",
               "weight " + shape_string(weight->value.shape) + " vs input " + shape_string(x->value.shape));
    require<T>(stride >= 1, "conv2d", "stride must be positive");
    const int pad = k / 2;
    const int out_h = (height + 2 * pad - k) / stride + 1;
    const int out_w = (width + 2 * pad - k) / stride + 1;
    const int patch = channels * k * k;
    const int out_hw = out_h * out_w;
    const bool direct = (k == 1 && stride == 1);

    Tensor<T> col;
    if (!direct) {
        col = Tensor<T>({patch, out_hw});
        im2col(x->value.ptr(), channels, height, width, k, stride, pad, out_h, out_w, col.ptr());
    }
    const Tensor<T>& cols = direct ? x->value : col;

    Tensor<T> out({out_c, out_h, out_w});
    auto y = as_matrix(out, out_c, out_hw);
    y.noalias() = as_matrix(weight->value, out_c, patch) * as_matrix(cols, patch, out_hw);
    if (bias) {
        for (int o = 0; o < out_c; ++o) y.row(o).array() += bias->value[static_cast<std::size_t>(o)];
    }
    std::vector<Var<T>> parents{x, weight};
    if (bias) parents.push_back(bias);
    const bool keep_col = grad_enabled() && !direct && weight->requires_grad;
    return make_result<T>(
        std::move(out), std::move(parents),
        [col = keep_col ? std::move(col) : Tensor<T>(), channels, height, width, k, stride, pad, out_h, out_w, out_c,
         patch, out_hw, direct](Node<T>& n) {
            auto dy = as_matrix(static_cast<const Tensor<T>&>(n.grad), out_c, out_hw);
            auto& xv = n.parents[0];
            auto& wv = n.parents[1];
            if (wv->requires_grad) {
                const Tensor<T>& cols = direct ? xv->value : col;
                as_matrix(wv->grad_buffer(), out_c, patch).noalias() +=
                    dy * as_matrix(cols, patch, out_hw).transpose();
            }
            if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
                auto& g = n.parents[2]->grad_buffer();
                for (int o = 0; o < out_c; ++o) g[static_cast<std::size_t>(o)] += dy.row(o).sum();
            }
            if (xv->requires_grad) {
                if (direct) {
                    as_matrix(xv->grad_buffer(), patch, out_hw).noalias() +=
                        as_matrix(wv->value, out_c, patch).transpose() * dy;
                } else {
                    Tensor<T> dcol({patch, out_hw});
                    as_matrix(dcol, patch, out_hw).noalias() = as_matrix(wv->value, out_c, patch).transpose() * dy;
                    col2im(dcol.ptr(), channels, height, width, k, stride, pad, out_h, out_w,
                           xv->grad_buffer().ptr());
                }
            }
        });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
    require<T>(x->value.rank() == 3, "upsample_nearest2x", "expected [C, H, W]");
    const int channels = x->value.dim(0), height = x->value.dim(1), width = x->value.dim(2);
    Tensor<T> out({channels, 2 * height, 2 * width});
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < 2 * height; ++y)
            for (int xx = 0; xx < 2 * width; ++xx)
                out[(static_cast<std::size_t>(c) * 2 * height + y) * 2 * width + xx] =
                    x->value[(static_cast<std::size_t>(c) * height + y / 2) * width + xx / 2];
    return make_result<T>(std::move(out), {x}, [channels, height, width](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (int c = 0; c < channels; ++c)
            for (int y = 0; y < 2 * height; ++y)
                for (int xx = 0; xx < 2 * width; ++xx)
                    g[(static_cast<std::size_t>(c) * height + y / 2) * width + xx / 2] +=
                        n.grad[(static_cast<std::size_t>(c) * 2 * height + y) * 2 * width + xx];
    });
}

namespace {

// Shared normalization kernel: `segments` contiguous runs of `len` values,
// each normalized independently; `channel_of(segment, i)` selects the affine
// parameter index.
template <typename T, typename ChannelOf>
Var<T> normalize_segments(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int segments, std::size_t len,
                          T eps, ChannelOf channel_of) {
    Tensor<T> xhat(x->value.shape);
    std::vector<T> inv_std(static_cast<std::size_t>(segments));
    Tensor<T> out(x->value.shape);
    for (int s = 0; s < segments; ++s) {
        const T* src = x->value.ptr() + s * len;
        T mean = T(0);
        for (std::size_t i = 0; i < len; ++i) mean += src[i];
        mean /= static_cast<T>(len);
        T var = T(0);
        for (std::size_t i = 0; i < len; ++i) var += (src[i] - mean) * (src[i] - mean);
        var /= static_cast<T>(len);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(s)] = inv;
        for (std::size_t i = 0; i < len; ++i) {
            const std::size_t idx = s * len + i;
            const auto c = channel_of(s, i);
            xhat[idx] = (src[i] - mean) * inv;
            out[idx] = gamma->value[c] * xhat[idx] + beta->value[c];
        }
    }
    return make_result<T>(
        std::move(out), {x, gamma, beta},
        [xhat = std::move(xhat), inv_std = std::move(inv_std), segments, len, channel_of](Node<T>& n) {
            auto& xv = n.parents[0];
            auto& gv = n.parents[1];
            auto& bv = n.parents[2];
            if (gv->requires_grad) {
                auto& gg = gv->grad_buffer();
                for (int s = 0; s < segments; ++s)
                    for (std::size_t i = 0; i < len; ++i) {
                        const std::size_t idx = s * len + i;
                        gg[channel_of(s, i)] += n.grad[idx] * xhat[idx];
                    }
            }
            if (bv->requires_grad) {
                auto& gb = bv->grad_buffer();
                for (int s = 0; s < segments; ++s)
                    for (std::size_t i = 0; i < len; ++i) gb[channel_of(s, i)] += n.grad[s * len + i];
            }
            if (!xv->requires_grad) return;
            auto& gx = xv->grad_buffer();
            for (int s = 0; s < segments; ++s) {
                T m1 = T(0), m2 = T(0);
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t idx = s * len + i;
                    const T d = n.grad[idx] * gv->value[channel_of(s, i)];
                    m1 += d;
                    m2 += d * xhat[idx];
                }
                m1 /= static_cast<T>(len);
                m2 /= static_cast<T>(len);
                const T inv = inv_std[static_cast<std::size_t>(s)];
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t idx = s * len + i;
                    const T d = n.grad[idx] * gv->value[channel_of(s, i)];
                    gx[idx] += inv * (d - m1 - xhat[idx] * m2);
                }
            }
        });
}

}  // namespace

template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups, T eps) {
    require<T>(x->value.rank() == 3, "group_norm", "expected [C, H, W]");
    const int channels = x->value.dim(0);
    require<T>(groups >= 1 && channels % groups == 0, "group_norm",
               std::to_string(channels) + " channels not divisible into " + std::to_string(groups) + " groups");
    require<T>(gamma->value.size() == static_cast<std::size_t>(channels) && beta->value.size() == gamma->value.size(),
               "group_norm", "affine size mismatch");
    const std::size_t plane = x->value.size() / static_cast<std::size_t>(channels);
    const int per_group = channels / groups;
    const std::size_t len = plane * static_cast<std::size_t>(per_group);
    return normalize_segments<T>(x, gamma, beta, groups, len, eps, [plane, per_group](int s, std::size_t i) {
        return static_cast<std::size_t>(s * per_group) + i / plane;
    });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    require<T>(x->value.rank() == 2, "layer_norm", "expected [N, D]");
    const int rows = x->value.dim(0);
    const auto width = static_cast<std::size_t>(x->value.dim(1));
    require<T>(gamma->value.size() == width && beta->value.size() == width, "layer_norm", "affine size mismatch");
    return normalize_segments<T>(x, gamma, beta, rows, width, eps, [](int, std::size_t i) { return i; });
}

template <typename T>
Var<T> patchify(const Var<T>& img, int patch) {
    require<T>(img->value.rank() == 3, "patchify", "expected [C, R, R]");
    const int channels = img->value.dim(0), height = img->value.dim(1), width = img->value.dim(2);
    require<T>(patch >= 1 && height % patch == 0 && width % patch == 0, "patchify",
               "resolution " + std::to_string(height) + "x" + std::to_string(width) + " not divisible by patch " +
                   std::to_string(patch));
    const int gh = height / patch, gw = width / patch;
    const int feat = channels * patch * patch;
    std::vector<std::size_t> index(static_cast<std::size_t>(gh * gw * feat));
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx)
            for (int c = 0; c < channels; ++c)
                for (int py = 0; py < patch; ++py)
                    for (int px = 0; px < patch; ++px) {
                        const std::size_t dst =
                            static_cast<std::size_t>((gy * gw + gx) * feat + (c * patch + py) * patch + px);
                        index[dst] =
                            (static_cast<std::size_t>(c) * height + gy * patch + py) * width + gx * patch + px;
                    }
    Tensor<T> out({gh * gw, feat});
    for (std::size_t i = 0; i < index.size(); ++i) out[i] = img->value[index[i]];
    return make_result<T>(std::move(out), {img}, [index = std::move(index)](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += n.grad[i];
    });
}

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Tensor<T>& target) {
    require<T>(pred->value.shape == target.shape, "mse_loss",
               shape_string(pred->value.shape) + " vs " + shape_string(target.shape));
    T acc = T(0);
    for (std::size_t i = 0; i < target.size(); ++i) {
        const T d = pred->value[i] - target[i];
        acc += d * d;
    }
    const T count = static_cast<T>(target.size());
    Tensor<T> out({1}, std::vector<T>{acc / count});
    return make_result<T>(std::move(out), {pred}, [target, count](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        const T factor = T(2) * n.grad[0] / count;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * (n.parents[0]->value[i] - target[i]);
    });
}

#define MURESTITCH_INSTANTIATE_OPS(T)                                                               \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                           \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                           \
    template Var<T> scale<T>(const Var<T>&, T);                                                     \
    template Var<T> add_channel_bias<T>(const Var<T>&, const Var<T>&);                              \
    template Var<T> silu<T>(const Var<T>&);                                                         \
    template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                         \
    template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                        \
    template Var<T> matmul_nt<T>(const Var<T>&, const Var<T>&);                                     \
    template Var<T> softmax_rows<T>(const Var<T>&, T);                                              \
    template Var<T> transpose<T>(const Var<T>&);                                                    \
    template Var<T> reshape<T>(const Var<T>&, Shape);                                               \
    template Var<T> concat<T>(const std::vector<Var<T>>&);                                          \
    template Var<T> mean_rows<T>(const Var<T>&);                                                    \
    template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int);                    \
    template Var<T> upsample_nearest2x<T>(const Var<T>&);                                           \
    template Var<T> group_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, T);             \
    template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                  \
    template Var<T> patchify<T>(const Var<T>&, int);                                                \
    template Var<T> mse_loss<T>(const Var<T>&, const Tensor<T>&);

MURESTITCH_INSTANTIATE_OPS(float)
MURESTITCH_INSTANTIATE_OPS(double)

#undef MURESTITCH_INSTANTIATE_OPS

}  // namespace murestitch::nn
