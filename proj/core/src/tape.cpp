#include "smoe/tape.hpp"

#include <cmath>

#include "smoe/errors.hpp"
#include "smoe/kernels.hpp"
#include "smoe/rng.hpp"

namespace smoe {

namespace {

template <typename T>
void check_2d(const TensorData<T>& t, const char* op) {
    if (t.shape().size() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + t.shape_str());
}

constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

}  // namespace

template <typename T>
typename Tape<T>::Id Tape<T>::push(TensorData<T> value, bool needs_grad, std::function<void()> back) {
    Node n;
    n.owned = std::move(value);
    n.vptr = &n.owned;
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    // vptr must point at the node's own storage after the move into the vector.
    nodes_.back().vptr = &nodes_.back().owned;
    return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
typename Tape<T>::Id Tape<T>::input(TensorData<T> v) {
    return push(std::move(v), false);
}

template <typename T>
typename Tape<T>::Id Tape<T>::param(Param<T>& p) {
    Node n;
    n.vptr = &p.value;
    n.bound = &p;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
TensorData<T>& Tape<T>::grad(Id id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.resize(n.vptr->shape());
    return n.grad;
}

// ---------------------------------------------------------------------------
// elementwise / reductions
// ---------------------------------------------------------------------------

template <typename T>
typename Tape<T>::Id Tape<T>::add(Id a, Id b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    if (!va.same_shape(vb)) throw ShapeError("add: " + va.shape_str() + " vs " + vb.shape_str());
    TensorData<T> out(va.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = va[i] + vb[i];
    const bool ng = wants_grad(a) || wants_grad(b);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, a, b, y] {
        const auto& g = grad(y);
        if (wants_grad(a)) {
            auto& ga = grad(a);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (wants_grad(b)) {
            auto& gb = grad(b);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
        }
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::sub(Id a, Id b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    if (!va.same_shape(vb)) throw ShapeError("sub: " + va.shape_str() + " vs " + vb.shape_str());
    TensorData<T> out(va.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = va[i] - vb[i];
    const bool ng = wants_grad(a) || wants_grad(b);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, a, b, y] {
        const auto& g = grad(y);
        if (wants_grad(a)) {
            auto& ga = grad(a);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (wants_grad(b)) {
            auto& gb = grad(b);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        }
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::mul(Id a, Id b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    if (!va.same_shape(vb)) throw ShapeError("mul: " + va.shape_str() + " vs " + vb.shape_str());
    TensorData<T> out(va.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i];
    const bool ng = wants_grad(a) || wants_grad(b);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, a, b, y] {
        const auto& g = grad(y);
        const auto& va2 = val(a);
        const auto& vb2 = val(b);
        if (wants_grad(a)) {
            auto& ga = grad(a);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb2[i];
        }
        if (wants_grad(b)) {
            auto& gb = grad(b);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va2[i];
        }
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::scale(Id a, double c) {
    const auto& va = val(a);
    TensorData<T> out(va.shape());
    const T tc = static_cast<T>(c);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = va[i] * tc;
    const bool ng = wants_grad(a);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, a, y, tc] {
        const auto& g = grad(y);
        auto& ga = grad(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * tc;
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::add_bias(Id x, Id bias) {
    const auto& vx = val(x);
    const auto& vb = val(bias);
    check_2d(vx, "add_bias");
    if (vb.numel() != static_cast<std::size_t>(vx.cols()))
        throw ShapeError("add_bias: bias " + vb.shape_str() + " vs x " + vx.shape_str());
    TensorData<T> out(vx.shape());
    const int rows = vx.rows(), cols = vx.cols();
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out.at(i, j) = vx.at(i, j) + vb[static_cast<std::size_t>(j)];
    const bool ng = wants_grad(x) || wants_grad(bias);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, x, bias, y, rows, cols] {
        const auto& g = grad(y);
        if (wants_grad(x)) {
            auto& gx = grad(x);
            for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
        }
        if (wants_grad(bias)) {
            auto& gb = grad(bias);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) gb[static_cast<std::size_t>(j)] += g.at(i, j);
        }
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::colvec_scale(Id x, Id s) {
    const auto& vx = val(x);
    const auto& vs = val(s);
    check_2d(vx, "colvec_scale");
    if (vs.numel() != static_cast<std::size_t>(vx.rows()))
        throw ShapeError("colvec_scale: s " + vs.shape_str() + " vs x " + vx.shape_str());
    TensorData<T> out(vx.shape());
    const int rows = vx.rows(), cols = vx.cols();
    for (int i = 0; i < rows; ++i) {
        const T si = vs[static_cast<std::size_t>(i)];
        for (int j = 0; j < cols; ++j) out.at(i, j) = vx.at(i, j) * si;
    }
    const bool ng = wants_grad(x) || wants_grad(s);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, x, s, y, rows, cols] {
        const auto& g = grad(y);
        const auto& vx2 = val(x);
        const auto& vs2 = val(s);
        if (wants_grad(x)) {
            auto& gx = grad(x);
            for (int i = 0; i < rows; ++i) {
                const T si = vs2[static_cast<std::size_t>(i)];
                for (int j = 0; j < cols; ++j) gx.at(i, j) += g.at(i, j) * si;
            }
        }
        if (wants_grad(s)) {
            auto& gs = grad(s);
            for (int i = 0; i < rows; ++i) {
                T acc{0};
                for (int j = 0; j < cols; ++j) acc += g.at(i, j) * vx2.at(i, j);
                gs[static_cast<std::size_t>(i)] += acc;
            }
        }
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::sum(Id a) {
    const auto& va = val(a);
    T acc{0};
    for (std::size_t i = 0; i < va.numel(); ++i) acc += va[i];
    const bool ng = wants_grad(a);
    Id y = push(tensor_scalar<T>(acc), ng);
    if (ng) nodes_.back().back = [this, a, y] {
        const T g = grad(y)[0];
        auto& ga = grad(a);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::mean(Id a) {
    const auto& va = val(a);
    if (va.numel() == 0) throw ShapeError("mean: empty tensor");
    T acc{0};
    for (std::size_t i = 0; i < va.numel(); ++i) acc += va[i];
    const T inv = static_cast<T>(1.0 / static_cast<double>(va.numel()));
    const bool ng = wants_grad(a);
    Id y = push(tensor_scalar<T>(acc * inv), ng);
    if (ng) nodes_.back().back = [this, a, y, inv] {
        const T g = grad(y)[0] * inv;
        auto& ga = grad(a);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::mean_rows(Id x) {
    const auto& vx = val(x);
    check_2d(vx, "mean_rows");
    const int rows = vx.rows(), cols = vx.cols();
    if (rows == 0) throw ShapeError("mean_rows: zero rows");
    TensorData<T> out({1, cols});
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out[static_cast<std::size_t>(j)] += vx.at(i, j);
    const T inv = static_cast<T>(1.0 / rows);
    for (int j = 0; j < cols; ++j) out[static_cast<std::size_t>(j)] *= inv;
    const bool ng = wants_grad(x);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, x, y, rows, cols, inv] {
        const auto& g = grad(y);
        auto& gx = grad(x);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) gx.at(i, j) += g[static_cast<std::size_t>(j)] * inv;
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::relu(Id x) {
    const auto& vx = val(x);
    TensorData<T> out(vx.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = vx[i] > T{0} ? vx[i] : T{0};
    const bool ng = wants_grad(x);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, x, y] {
        const auto& g = grad(y);
        const auto& vx2 = val(x);
        auto& gx = grad(x);
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (vx2[i] > T{0}) gx[i] += g[i];
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::gelu(Id x) {
    const auto& vx = val(x);
    TensorData<T> out(vx.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double v = static_cast<double>(vx[i]);
        const double u = kGeluC0 * (v + kGeluC1 * v * v * v);
        out[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(u)));
    }
    const bool ng = wants_grad(x);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, x, y] {
        const auto& g = grad(y);
        const auto& vx2 = val(x);
        auto& gx = grad(x);
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double v = static_cast<double>(vx2[i]);
            const double u = kGeluC0 * (v + kGeluC1 * v * v * v);
            const double t = std::tanh(u);
            const double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * v * v);
            const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
            gx[i] += static_cast<T>(static_cast<double>(g[i]) * d);
        }
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::softmax_rows(Id x) {
    const auto& vx = val(x);
    check_2d(vx, "softmax_rows");
    const int rows = vx.rows(), cols = vx.cols();
    TensorData<T> out(vx.shape());
    for (int i = 0; i < rows; ++i) {
        T mx = vx.at(i, 0);
        for (int j = 1; j < cols; ++j) mx = std::max(mx, vx.at(i, j));
        T denom{0};
        for (int j = 0; j < cols; ++j) {
            const T e = std::exp(vx.at(i, j) - mx);
            out.at(i, j) = e;
            denom += e;
        }
        for (int j = 0; j < cols; ++j) out.at(i, j) /= denom;
    }
    const bool ng = wants_grad(x);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, x, y, rows, cols] {
        const auto& g = grad(y);
        const auto& p = val(y);
        auto& gx = grad(x);
        for (int i = 0; i < rows; ++i) {
            T dotgp{0};
            for (int j = 0; j < cols; ++j) dotgp += g.at(i, j) * p.at(i, j);
            for (int j = 0; j < cols; ++j) gx.at(i, j) += p.at(i, j) * (g.at(i, j) - dotgp);
        }
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::layer_norm_rows(Id x, Id gamma, Id beta, double eps) {
    const auto& vx = val(x);
    check_2d(vx, "layer_norm_rows");
    const int rows = vx.rows(), cols = vx.cols();
    const auto& vg = val(gamma);
    const auto& vb = val(beta);
    if (vg.numel() != static_cast<std::size_t>(cols) || vb.numel() != static_cast<std::size_t>(cols))
        throw ShapeError("layer_norm_rows: gamma/beta size mismatch");
    TensorData<T> out(vx.shape());
    TensorData<T> xhat(vx.shape());
    TensorData<T> inv_sigma({rows});
    for (int i = 0; i < rows; ++i) {
        double mu = 0;
        for (int j = 0; j < cols; ++j) mu += static_cast<double>(vx.at(i, j));
        mu /= cols;
        double var = 0;
        for (int j = 0; j < cols; ++j) {
            const double d = static_cast<double>(vx.at(i, j)) - mu;
            var += d * d;
        }
        var /= cols;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[static_cast<std::size_t>(i)] = static_cast<T>(is);
        for (int j = 0; j < cols; ++j) {
            const T xh = static_cast<T>((static_cast<double>(vx.at(i, j)) - mu) * is);
            xhat.at(i, j) = xh;
            out.at(i, j) = xh * vg[static_cast<std::size_t>(j)] + vb[static_cast<std::size_t>(j)];
        }
    }
    const bool ng = wants_grad(x) || wants_grad(gamma) || wants_grad(beta);
    Id y = push(std::move(out), ng);
    if (ng) {
        auto xh = std::make_shared<TensorData<T>>(std::move(xhat));
        auto is = std::make_shared<TensorData<T>>(std::move(inv_sigma));
        nodes_.back().back = [this, x, gamma, beta, y, rows, cols, xh, is] {
            const auto& g = grad(y);
            const auto& vg2 = val(gamma);
            if (wants_grad(beta)) {
                auto& gb = grad(beta);
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j) gb[static_cast<std::size_t>(j)] += g.at(i, j);
            }
            if (wants_grad(gamma)) {
                auto& gg = grad(gamma);
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j)
                        gg[static_cast<std::size_t>(j)] += g.at(i, j) * xh->at(i, j);
            }
            if (wants_grad(x)) {
                auto& gx = grad(x);
                for (int i = 0; i < rows; ++i) {
                    double m1 = 0, m2 = 0;
                    for (int j = 0; j < cols; ++j) {
                        const double dxh = static_cast<double>(g.at(i, j)) * vg2[static_cast<std::size_t>(j)];
                        m1 += dxh;
                        m2 += dxh * xh->at(i, j);
                    }
                    m1 /= cols;
                    m2 /= cols;
                    const double isr = is->operator[](static_cast<std::size_t>(i));
                    for (int j = 0; j < cols; ++j) {
                        const double dxh = static_cast<double>(g.at(i, j)) * vg2[static_cast<std::size_t>(j)];
                        gx.at(i, j) += static_cast<T>(isr * (dxh - m1 - xh->at(i, j) * m2));
                    }
                }
            }
        };
    }
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::dropout(Id x, double p, bool train, std::uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0,1)");
    if (!train || p == 0.0) return x;  // eval mode is identity
    const auto& vx = val(x);
    TensorData<T> out(vx.shape());
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    Rng rng(seed);
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = rng.uniform() >= p ? vx[i] * scale : T{0};
    const bool ng = wants_grad(x);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, x, y, p, seed, scale] {
        const auto& g = grad(y);
        auto& gx = grad(x);
        Rng rng2(seed);  // replay the identical mask
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (rng2.uniform() >= p) gx[i] += g[i] * scale;
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::mse(Id a, Id b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    if (!va.same_shape(vb)) throw ShapeError("mse: " + va.shape_str() + " vs " + vb.shape_str());
    double acc = 0;
    for (std::size_t i = 0; i < va.numel(); ++i) {
        const double d = static_cast<double>(va[i]) - static_cast<double>(vb[i]);
        acc += d * d;
    }
    const bool ng = wants_grad(a) || wants_grad(b);
    Id y = push(tensor_scalar<T>(static_cast<T>(acc)), ng);
    if (ng) nodes_.back().back = [this, a, b, y] {
        const T g = grad(y)[0];
        const auto& va2 = val(a);
        const auto& vb2 = val(b);
        if (wants_grad(a)) {
            auto& ga = grad(a);
            for (std::size_t i = 0; i < va2.numel(); ++i) ga[i] += T{2} * (va2[i] - vb2[i]) * g;
        }
        if (wants_grad(b)) {
            auto& gb = grad(b);
            for (std::size_t i = 0; i < va2.numel(); ++i) gb[i] -= T{2} * (va2[i] - vb2[i]) * g;
        }
    };
    return y;
}

// ---------------------------------------------------------------------------
// shape / indexing
// ---------------------------------------------------------------------------

template <typename T>
typename Tape<T>::Id Tape<T>::concat_rows(const std::vector<Id>& xs) {
    if (xs.empty()) throw ShapeError("concat_rows: no inputs");
    const int cols = val(xs[0]).cols();
    int rows = 0;
    bool ng = false;
    for (Id x : xs) {
        check_2d(val(x), "concat_rows");
        if (val(x).cols() != cols) throw ShapeError("concat_rows: column mismatch");
        rows += val(x).rows();
        ng = ng || wants_grad(x);
    }
    TensorData<T> out({rows, cols});
    int r = 0;
    for (Id x : xs) {
        const auto& vx = val(x);
        std::copy(vx.data(), vx.data() + vx.numel(), out.data() + static_cast<std::size_t>(r) * cols);
        r += vx.rows();
    }
    Id y = push(std::move(out), ng);
    if (ng) {
        std::vector<Id> xs_copy = xs;
        nodes_.back().back = [this, xs_copy, y, cols] {
            const auto& g = grad(y);
            int r2 = 0;
            for (Id x : xs_copy) {
                const int xr = val(x).rows();
                if (wants_grad(x)) {
                    auto& gx = grad(x);
                    const T* src = g.data() + static_cast<std::size_t>(r2) * cols;
                    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += src[i];
                }
                r2 += xr;
            }
        };
    }
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::concat_cols(const std::vector<Id>& xs) {
    if (xs.empty()) throw ShapeError("concat_cols: no inputs");
    const int rows = val(xs[0]).rows();
    int cols = 0;
    bool ng = false;
    for (Id x : xs) {
        check_2d(val(x), "concat_cols");
        if (val(x).rows() != rows) throw ShapeError("concat_cols: row mismatch");
        cols += val(x).cols();
        ng = ng || wants_grad(x);
    }
    TensorData<T> out({rows, cols});
    int c = 0;
    for (Id x : xs) {
        const auto& vx = val(x);
        for (int i = 0; i < rows; ++i)
            std::copy(vx.data() + static_cast<std::size_t>(i) * vx.cols(),
                      vx.data() + static_cast<std::size_t>(i + 1) * vx.cols(),
                      out.data() + static_cast<std::size_t>(i) * cols + c);
        c += vx.cols();
    }
    Id y = push(std::move(out), ng);
    if (ng) {
        std::vector<Id> xs_copy = xs;
        nodes_.back().back = [this, xs_copy, y, rows, cols] {
            const auto& g = grad(y);
            int c2 = 0;
            for (Id x : xs_copy) {
                const int xc = val(x).cols();
                if (wants_grad(x)) {
                    auto& gx = grad(x);
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < xc; ++j) gx.at(i, j) += g.at(i, c2 + j);
                }
                c2 += xc;
            }
        };
    }
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::slice_rows(Id x, int r0, int r1) {
    const auto& vx = val(x);
    check_2d(vx, "slice_rows");
    if (r0 < 0 || r1 > vx.rows() || r0 >= r1) throw RangeError("slice_rows: bad range");
    const int cols = vx.cols();
    TensorData<T> out({r1 - r0, cols});
    std::copy(vx.data() + static_cast<std::size_t>(r0) * cols,
              vx.data() + static_cast<std::size_t>(r1) * cols, out.data());
    const bool ng = wants_grad(x);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, x, y, r0, cols] {
        const auto& g = grad(y);
        auto& gx = grad(x);
        T* dst = gx.data() + static_cast<std::size_t>(r0) * cols;
        for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::slice_cols(Id x, int c0, int c1) {
    const auto& vx = val(x);
    check_2d(vx, "slice_cols");
    if (c0 < 0 || c1 > vx.cols() || c0 >= c1) throw RangeError("slice_cols: bad range");
    const int rows = vx.rows();
    TensorData<T> out({rows, c1 - c0});
    for (int i = 0; i < rows; ++i)
        for (int j = c0; j < c1; ++j) out.at(i, j - c0) = vx.at(i, j);
    const bool ng = wants_grad(x);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, x, y, c0, c1, rows] {
        const auto& g = grad(y);
        auto& gx = grad(x);
        for (int i = 0; i < rows; ++i)
            for (int j = c0; j < c1; ++j) gx.at(i, j) += g.at(i, j - c0);
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::gather_rows(Id x, std::vector<std::int32_t> idx) {
    const auto& vx = val(x);
    check_2d(vx, "gather_rows");
    const int cols = vx.cols();
    for (std::int32_t i : idx)
        if (i < 0 || i >= vx.rows()) throw RangeError("gather_rows: index out of range");
    TensorData<T> out({static_cast<int>(idx.size()), cols});
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(vx.data() + static_cast<std::size_t>(idx[r]) * cols,
                  vx.data() + static_cast<std::size_t>(idx[r] + 1) * cols,
                  out.data() + r * cols);
    const bool ng = wants_grad(x);
    Id y = push(std::move(out), ng);
    if (ng) {
        auto ix = std::make_shared<std::vector<std::int32_t>>(std::move(idx));
        nodes_.back().back = [this, x, y, ix, cols] {
            const auto& g = grad(y);
            auto& gx = grad(x);
            for (std::size_t r = 0; r < ix->size(); ++r) {
                T* dst = gx.data() + static_cast<std::size_t>((*ix)[r]) * cols;
                const T* src = g.data() + r * cols;
                for (int j = 0; j < cols; ++j) dst[j] += src[j];
            }
        };
    }
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::scatter_add_rows(Id x, std::vector<std::int32_t> idx, int out_rows) {
    const auto& vx = val(x);
    check_2d(vx, "scatter_add_rows");
    if (static_cast<std::size_t>(vx.rows()) != idx.size())
        throw ShapeError("scatter_add_rows: index count mismatch");
    for (std::int32_t i : idx)
        if (i < 0 || i >= out_rows) throw RangeError("scatter_add_rows: index out of range");
    const int cols = vx.cols();
    TensorData<T> out({out_rows, cols});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        T* dst = out.data() + static_cast<std::size_t>(idx[r]) * cols;
        const T* src = vx.data() + r * cols;
        for (int j = 0; j < cols; ++j) dst[j] += src[j];
    }
    const bool ng = wants_grad(x);
    Id y = push(std::move(out), ng);
    if (ng) {
        auto ix = std::make_shared<std::vector<std::int32_t>>(std::move(idx));
        nodes_.back().back = [this, x, y, ix, cols] {
            const auto& g = grad(y);
            auto& gx = grad(x);
            for (std::size_t r = 0; r < ix->size(); ++r) {
                const T* src = g.data() + static_cast<std::size_t>((*ix)[r]) * cols;
                T* dst = gx.data() + r * cols;
                for (int j = 0; j < cols; ++j) dst[j] += src[j];
            }
        };
    }
    return y;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <typename T>
typename Tape<T>::Id Tape<T>::matmul(Id a, Id b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    check_2d(va, "matmul");
    check_2d(vb, "matmul");
    if (va.cols() != vb.rows())
        throw ShapeError("matmul: " + va.shape_str() + " x " + vb.shape_str());
    const int m = va.rows(), k = va.cols(), n = vb.cols();
    TensorData<T> out({m, n});
    kern::matmul(va.data(), vb.data(), out.data(), m, k, n, false);
    const bool ng = wants_grad(a) || wants_grad(b);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, a, b, y, m, k, n] {
        const auto& g = grad(y);
        if (wants_grad(a))
            kern::matmul_nt(g.data(), val(b).data(), grad(a).data(), m, n, k, true);
        if (wants_grad(b))
            kern::matmul_tn(val(a).data(), g.data(), grad(b).data(), k, m, n, true);
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::matmul_nt(Id a, Id b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    check_2d(va, "matmul_nt");
    check_2d(vb, "matmul_nt");
    if (va.cols() != vb.cols())
        throw ShapeError("matmul_nt: " + va.shape_str() + " x " + vb.shape_str() + "^T");
    const int m = va.rows(), k = va.cols(), n = vb.rows();
    TensorData<T> out({m, n});
    kern::matmul_nt(va.data(), vb.data(), out.data(), m, k, n, false);
    const bool ng = wants_grad(a) || wants_grad(b);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, a, b, y, m, k, n] {
        const auto& g = grad(y);
        if (wants_grad(a))
            kern::matmul(g.data(), val(b).data(), grad(a).data(), m, n, k, true);
        if (wants_grad(b))
            kern::matmul_tn(g.data(), val(a).data(), grad(b).data(), n, m, k, true);
    };
    return y;
}

template <typename T>
typename Tape<T>::Id Tape<T>::sph_conv(Id x, const GatherPlan* plan, Id kernel, Id bias, int batch) {
    const auto& vx = val(x);
    const auto& vk = val(kernel);
    const auto& vb = val(bias);
    check_2d(vx, "sph_conv");
    const int in_ch = vx.cols();
    const int out_ch = vk.cols();
    const int slots = plan->slots;
    if (vk.rows() != slots * in_ch)
        throw ShapeError("sph_conv: kernel " + vk.shape_str() + " vs slots*in_ch " +
                         std::to_string(slots * in_ch));
    if (vb.numel() != static_cast<std::size_t>(out_ch)) throw ShapeError("sph_conv: bias size");
    if (vx.rows() != plan->in_rows * batch)
        throw ShapeError("sph_conv: x rows " + std::to_string(vx.rows()) + " != plan in_rows*batch");
    const int rows_out = plan->out_rows();
    const int total_out = rows_out * batch;

    TensorData<T> out({total_out, out_ch});
    for (int i = 0; i < total_out; ++i)
        for (int j = 0; j < out_ch; ++j) out.at(i, j) = vb[static_cast<std::size_t>(j)];
    TensorData<T> scratch({total_out, in_ch});
    for (int s = 0; s < slots; ++s) {
        // gather slot s rows for every batch block (zero rows for -1)
        for (int bblk = 0; bblk < batch; ++bblk) {
            const std::size_t in_off = static_cast<std::size_t>(bblk) * plan->in_rows;
            for (int r = 0; r < rows_out; ++r) {
                const std::int32_t src = plan->idx[static_cast<std::size_t>(r) * slots + s];
                T* dst = scratch.data() + (static_cast<std::size_t>(bblk) * rows_out + r) * in_ch;
                if (src < 0) {
                    for (int j = 0; j < in_ch; ++j) dst[j] = T{0};
                } else {
                    const T* sp = vx.data() + (in_off + static_cast<std::size_t>(src)) * in_ch;
                    for (int j = 0; j < in_ch; ++j) dst[j] = sp[j];
                }
            }
        }
        kern::matmul(scratch.data(), vk.data() + static_cast<std::size_t>(s) * in_ch * out_ch,
                     out.data(), total_out, in_ch, out_ch, true);
    }

    const bool ng = wants_grad(x) || wants_grad(kernel) || wants_grad(bias);
    Id y = push(std::move(out), ng);
    if (ng) nodes_.back().back = [this, x, kernel, bias, y, plan, batch, in_ch, out_ch, slots,
                                  rows_out] {
        const auto& g = grad(y);
        const auto& vx2 = val(x);
        const auto& vk2 = val(kernel);
        const int total_out = rows_out * batch;
        if (wants_grad(bias)) {
            auto& gb = grad(bias);
            for (int i = 0; i < total_out; ++i)
                for (int j = 0; j < out_ch; ++j) gb[static_cast<std::size_t>(j)] += g.at(i, j);
        }
        TensorData<T> scratch({total_out, in_ch});
        for (int s = 0; s < slots; ++s) {
            if (wants_grad(kernel)) {
                for (int bblk = 0; bblk < batch; ++bblk) {
                    const std::size_t in_off = static_cast<std::size_t>(bblk) * plan->in_rows;
                    for (int r = 0; r < rows_out; ++r) {
                        const std::int32_t src = plan->idx[static_cast<std::size_t>(r) * slots + s];
                        T* dst = scratch.data() + (static_cast<std::size_t>(bblk) * rows_out + r) * in_ch;
                        if (src < 0) {
                            for (int j = 0; j < in_ch; ++j) dst[j] = T{0};
                        } else {
                            const T* sp = vx2.data() + (in_off + static_cast<std::size_t>(src)) * in_ch;
                            for (int j = 0; j < in_ch; ++j) dst[j] = sp[j];
                        }
                    }
                }
                kern::matmul_tn(scratch.data(), g.data(),
                                grad(kernel).data() + static_cast<std::size_t>(s) * in_ch * out_ch,
                                in_ch, total_out, out_ch, true);
            }
            if (wants_grad(x)) {
                // dX[src] += dY * K_s^T
                kern::matmul_nt(g.data(), vk2.data() + static_cast<std::size_t>(s) * in_ch * out_ch,
                                scratch.data(), total_out, out_ch, in_ch, false);
                auto& gx = grad(x);
                for (int bblk = 0; bblk < batch; ++bblk) {
                    const std::size_t in_off = static_cast<std::size_t>(bblk) * plan->in_rows;
                    for (int r = 0; r < rows_out; ++r) {
                        const std::int32_t src = plan->idx[static_cast<std::size_t>(r) * slots + s];
                        if (src < 0) continue;
                        T* dst = gx.data() + (in_off + static_cast<std::size_t>(src)) * in_ch;
                        const T* sp =
                            scratch.data() + (static_cast<std::size_t>(bblk) * rows_out + r) * in_ch;
                        for (int j = 0; j < in_ch; ++j) dst[j] += sp[j];
                    }
                }
            }
        }
    };
    return y;
}

namespace {

// matmul_nt kernel expects column-count parity; scratch views below are plain
// pointers into per-head slices, so strides are handled by copying.
template <typename T>
void copy_head(const TensorData<T>& src, int rows, int d, int h0, int dh, int row0, T* dst) {
    for (int i = 0; i < rows; ++i) {
        const T* s = src.data() + static_cast<std::size_t>(row0 + i) * d + h0;
        T* o = dst + static_cast<std::size_t>(i) * dh;
        for (int j = 0; j < dh; ++j) o[j] = s[j];
    }
}

template <typename T>
void add_head(T* dst_mat, int d, int h0, int dh, int row0, int rows, const T* src) {
    for (int i = 0; i < rows; ++i) {
        T* o = dst_mat + static_cast<std::size_t>(row0 + i) * d + h0;
        const T* s = src + static_cast<std::size_t>(i) * dh;
        for (int j = 0; j < dh; ++j) o[j] += s[j];
    }
}

}  // namespace

template <typename T>
typename Tape<T>::Id Tape<T>::block_mhsa(Id x, int n_blocks, int block_rows, int heads, Id wq,
                                         Id bq, Id wk, Id bk, Id wv, Id bv, Id wo, Id bo,
                                         double drop_p, bool train, std::uint64_t seed) {
    const auto& vx = val(x);
    check_2d(vx, "block_mhsa");
    const int d = vx.cols();
    const int rows = vx.rows();
    if (rows != n_blocks * block_rows) throw ShapeError("block_mhsa: rows != n_blocks*block_rows");
    if (d % heads != 0) throw ConfigError("block_mhsa: dim not divisible by heads");
    const int dh = d / heads;
    const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool do_drop = train && drop_p > 0.0;
    if (drop_p < 0.0 || drop_p >= 1.0) throw ConfigError("block_mhsa: drop_p must be in [0,1)");

    // Projections over all rows at once.
    auto project = [&](Id w, Id b) {
        TensorData<T> r({rows, d});
        kern::matmul(vx.data(), val(w).data(), r.data(), rows, d, d, false);
        const auto& vb2 = val(b);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < d; ++j) r.at(i, j) += vb2[static_cast<std::size_t>(j)];
        return r;
    };
    auto Q = std::make_shared<TensorData<T>>(project(wq, bq));
    auto K = std::make_shared<TensorData<T>>(project(wk, bk));
    auto V = std::make_shared<TensorData<T>>(project(wv, bv));
    auto P = std::make_shared<TensorData<T>>(
        TensorData<T>({n_blocks * heads * block_rows, block_rows}));
    auto Pd = do_drop ? std::make_shared<TensorData<T>>(
                            TensorData<T>({n_blocks * heads * block_rows, block_rows}))
                      : P;
    auto O = std::make_shared<TensorData<T>>(TensorData<T>({rows, d}));

    TensorData<T> qh({block_rows, dh}), kh({block_rows, dh}), vh({block_rows, dh});
    TensorData<T> oh({block_rows, dh});
    Rng drop_rng(seed);
    for (int b = 0; b < n_blocks; ++b) {
        const int row0 = b * block_rows;
        for (int h = 0; h < heads; ++h) {
            copy_head(*Q, block_rows, d, h * dh, dh, row0, qh.data());
            copy_head(*K, block_rows, d, h * dh, dh, row0, kh.data());
            copy_head(*V, block_rows, d, h * dh, dh, row0, vh.data());
            T* prow = P->data() +
                      (static_cast<std::size_t>(b) * heads + h) * block_rows * block_rows;
            kern::matmul_nt(qh.data(), kh.data(), prow, block_rows, dh, block_rows, false);
            for (int i = 0; i < block_rows; ++i) {
                T* row = prow + static_cast<std::size_t>(i) * block_rows;
                T mx = row[0] * static_cast<T>(alpha);
                for (int j = 0; j < block_rows; ++j) {
                    row[j] *= static_cast<T>(alpha);
                    mx = std::max(mx, row[j]);
                }
                T denom{0};
                for (int j = 0; j < block_rows; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    denom += row[j];
                }
                for (int j = 0; j < block_rows; ++j) row[j] /= denom;
            }
            const T* attn = prow;
            if (do_drop) {
                T* drow = Pd->data() +
                          (static_cast<std::size_t>(b) * heads + h) * block_rows * block_rows;
                const T dscale = static_cast<T>(1.0 / (1.0 - drop_p));
                for (int i = 0; i < block_rows * block_rows; ++i)
                    drow[i] = drop_rng.uniform() >= drop_p ? prow[i] * dscale : T{0};
                attn = drow;
            }
            kern::matmul(attn, vh.data(), oh.data(), block_rows, block_rows, dh, false);
            add_head(O->data(), d, h * dh, dh, row0, block_rows, oh.data());
        }
    }
    TensorData<T> out({rows, d});
    kern::matmul(O->data(), val(wo).data(), out.data(), rows, d, d, false);
    {
        const auto& vbo = val(bo);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < d; ++j) out.at(i, j) += vbo[static_cast<std::size_t>(j)];
    }

    const bool ng = wants_grad(x) || wants_grad(wq) || wants_grad(wk) || wants_grad(wv) ||
                    wants_grad(wo) || wants_grad(bq) || wants_grad(bk) || wants_grad(bv) ||
                    wants_grad(bo);
    Id y = push(std::move(out), ng);
    if (!ng) return y;

    nodes_.back().back = [this, x, wq, bq, wk, bk, wv, bv, wo, bo, y, n_blocks, block_rows, heads,
                          d, dh, alpha, drop_p, do_drop, Q, K, V, P, Pd, O] {
        const auto& g = grad(y);
        const int rows = n_blocks * block_rows;

        // Output projection.
        if (wants_grad(wo)) kern::matmul_tn(O->data(), g.data(), grad(wo).data(), d, rows, d, true);
        if (wants_grad(bo)) {
            auto& gbo = grad(bo);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < d; ++j) gbo[static_cast<std::size_t>(j)] += g.at(i, j);
        }
        TensorData<T> dO({rows, d});
        kern::matmul_nt(g.data(), val(wo).data(), dO.data(), rows, d, d, false);

        TensorData<T> dQ({rows, d}), dK({rows, d}), dV({rows, d});
        TensorData<T> qh({block_rows, dh}), kh({block_rows, dh}), vh({block_rows, dh});
        TensorData<T> doh({block_rows, dh}), dqh({block_rows, dh}), dkh({block_rows, dh}),
            dvh({block_rows, dh});
        TensorData<T> dP({block_rows, block_rows}), dS({block_rows, block_rows});
        const T dscale = static_cast<T>(do_drop ? 1.0 / (1.0 - drop_p) : 1.0);
        for (int b = 0; b < n_blocks; ++b) {
            const int row0 = b * block_rows;
            for (int h = 0; h < heads; ++h) {
                copy_head(*Q, block_rows, d, h * dh, dh, row0, qh.data());
                copy_head(*K, block_rows, d, h * dh, dh, row0, kh.data());
                copy_head(*V, block_rows, d, h * dh, dh, row0, vh.data());
                copy_head(dO, block_rows, d, h * dh, dh, row0, doh.data());
                const T* prow = P->data() +
                                (static_cast<std::size_t>(b) * heads + h) * block_rows * block_rows;
                const T* pdrow = Pd->data() +
                                 (static_cast<std::size_t>(b) * heads + h) * block_rows * block_rows;
                // dPd = dOh Vh^T ; dVh = Pd^T dOh
                kern::matmul_nt(doh.data(), vh.data(), dP.data(), block_rows, dh, block_rows, false);
                kern::matmul_tn(pdrow, doh.data(), dvh.data(), block_rows, block_rows, dh, false);
                // through dropout: softmax outputs are strictly positive, so
                // pdrow == 0 identifies dropped entries exactly
                if (do_drop) {
                    for (int i = 0; i < block_rows * block_rows; ++i)
                        dP[static_cast<std::size_t>(i)] =
                            pdrow[i] != T{0} ? dP[static_cast<std::size_t>(i)] * dscale : T{0};
                }
                // softmax backward, then scale by alpha
                for (int i = 0; i < block_rows; ++i) {
                    const T* p = prow + static_cast<std::size_t>(i) * block_rows;
                    const T* dp = dP.data() + static_cast<std::size_t>(i) * block_rows;
                    T dot{0};
                    for (int j = 0; j < block_rows; ++j) dot += dp[j] * p[j];
                    T* ds = dS.data() + static_cast<std::size_t>(i) * block_rows;
                    for (int j = 0; j < block_rows; ++j)
                        ds[j] = p[j] * (dp[j] - dot) * static_cast<T>(alpha);
                }
                kern::matmul(dS.data(), kh.data(), dqh.data(), block_rows, block_rows, dh, false);
                kern::matmul_tn(dS.data(), qh.data(), dkh.data(), block_rows, block_rows, dh, false);
                add_head(dQ.data(), d, h * dh, dh, row0, block_rows, dqh.data());
                add_head(dK.data(), d, h * dh, dh, row0, block_rows, dkh.data());
                add_head(dV.data(), d, h * dh, dh, row0, block_rows, dvh.data());
            }
        }

        const auto& vx2 = val(x);
        auto back_proj = [&](Id w, Id b, const TensorData<T>& dproj) {
            if (wants_grad(w))
                kern::matmul_tn(vx2.data(), dproj.data(), grad(w).data(), d, rows, d, true);
            if (wants_grad(b)) {
                auto& gb = grad(b);
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += dproj.at(i, j);
            }
            if (wants_grad(x))
                kern::matmul_nt(dproj.data(), val(w).data(), grad(x).data(), rows, d, d, true);
        };
        back_proj(wq, bq, dQ);
        back_proj(wk, bk, dK);
        back_proj(wv, bv, dV);
    };
    return y;
}

template <typename T>
void Tape<T>::backward(Id loss) {
    if (val(loss).numel() != 1) throw ContractError("backward: loss must be scalar");
    grad(loss)[0] = T{1};
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.empty()) continue;
        if (n.back) n.back();
    }
    for (Node& n : nodes_) {
        if (n.bound && !n.grad.empty()) {
            auto& dst = n.bound->grad;
            if (dst.empty()) dst.resize(n.bound->value.shape());
            for (std::size_t i = 0; i < n.grad.numel(); ++i) dst[i] += n.grad[i];
        }
    }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace smoe
