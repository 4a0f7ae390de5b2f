#include "bseg/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace bseg {
namespace ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void check_same_shape(const Var& a, const Var& b, const char* op) {
    check(a->value.same_shape(b->value), std::string(op) + ": shape mismatch " +
                                             shape_str(a->value.shape()) + " vs " +
                                             shape_str(b->value.shape()));
}

Var unary_elementwise(const Var& a, double (*f)(double), double (*df)(double)) {
    Tensor out(a->value.shape());
    const int64_t n = a->value.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = f(a->value[i]);
    return make_op(std::move(out), {a}, [f, df](Node& self) {
        const Var& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor g(p->value.shape());
        for (int64_t i = 0; i < p->value.numel(); ++i) g[i] = self.grad[i] * df(p->value[i]);
        accumulate_grad(p, g);
    });
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a->value;
    out.add_(b->value);
    return make_op(std::move(out), {a, b}, [](Node& self) {
        accumulate_grad(self.parents[0], self.grad);
        accumulate_grad(self.parents[1], self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        accumulate_grad(self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) {
            Tensor g = self.grad;
            g.scale_(-1.0);
            accumulate_grad(self.parents[1], g);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const Var& a = self.parents[0];
        const Var& b = self.parents[1];
        if (a->requires_grad) {
            Tensor g(a->value.shape());
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * b->value[i];
            accumulate_grad(a, g);
        }
        if (b->requires_grad) {
            Tensor g(b->value.shape());
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * a->value[i];
            accumulate_grad(b, g);
        }
    });
}

Var div(const Var& a, const Var& b) {
    check_same_shape(a, b, "div");
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] / b->value[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const Var& a = self.parents[0];
        const Var& b = self.parents[1];
        if (a->requires_grad) {
            Tensor g(a->value.shape());
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] / b->value[i];
            accumulate_grad(a, g);
        }
        if (b->requires_grad) {
            Tensor g(b->value.shape());
            for (int64_t i = 0; i < g.numel(); ++i) {
                const double bv = b->value[i];
                g[i] = -self.grad[i] * a->value[i] / (bv * bv);
            }
            accumulate_grad(b, g);
        }
    });
}

Var add_scalar(const Var& a, double c) {
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + c;
    return make_op(std::move(out), {a},
                   [](Node& self) { accumulate_grad(self.parents[0], self.grad); });
}

Var mul_scalar(const Var& a, double c) {
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * c;
    return make_op(std::move(out), {a}, [c](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor g = self.grad;
        g.scale_(c);
        accumulate_grad(self.parents[0], g);
    });
}

Var rsub_scalar(double c, const Var& a) {
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = c - a->value[i];
    return make_op(std::move(out), {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor g = self.grad;
        g.scale_(-1.0);
        accumulate_grad(self.parents[0], g);
    });
}

Var relu(const Var& a) {
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
    return make_op(std::move(out), {a}, [](Node& self) {
        const Var& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor g(p->value.shape());
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = p->value[i] > 0.0 ? self.grad[i] : 0.0;
        accumulate_grad(p, g);
    });
}

Var sigmoid(const Var& a) {
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a->value[i]));
    Tensor saved = out;
    return make_op(std::move(out), {a}, [saved = std::move(saved)](Node& self) {
        const Var& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor g(p->value.shape());
        for (int64_t i = 0; i < g.numel(); ++i) {
            const double s = saved[i];
            g[i] = self.grad[i] * s * (1.0 - s);
        }
        accumulate_grad(p, g);
    });
}

Var log(const Var& a) {
    return unary_elementwise(
        a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var clamp(const Var& a, double lo, double hi) {
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(std::max(a->value[i], lo), hi);
    return make_op(std::move(out), {a}, [lo, hi](Node& self) {
        const Var& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor g(p->value.shape());
        for (int64_t i = 0; i < g.numel(); ++i) {
            const double x = p->value[i];
            g[i] = (x > lo && x < hi) ? self.grad[i] : 0.0;
        }
        accumulate_grad(p, g);
    });
}

// ---- reductions --------------------------------------------------------------

Var sum_all(const Var& a) {
    Tensor out = Tensor::scalar(a->value.sum());
    return make_op(std::move(out), {a}, [](Node& self) {
        const Var& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor g(p->value.shape(), self.grad[0]);
        accumulate_grad(p, g);
    });
}

Var mean_all(const Var& a) {
    const double inv_n = 1.0 / static_cast<double>(a->value.numel());
    Tensor out = Tensor::scalar(a->value.sum() * inv_n);
    return make_op(std::move(out), {a}, [inv_n](Node& self) {
        const Var& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor g(p->value.shape(), self.grad[0] * inv_n);
        accumulate_grad(p, g);
    });
}

// ---- broadcasting --------------------------------------------------------------

Var broadcast_add0(const Var& x, const Var& p) {
    check(x->value.ndim() == p->value.ndim() && p->value.dim(0) == 1,
          "broadcast_add0: p must have leading dim 1");
    for (int i = 1; i < x->value.ndim(); ++i)
        check(x->value.dim(i) == p->value.dim(i), "broadcast_add0: trailing dims must match");
    const int64_t reps = x->value.dim(0);
    const int64_t inner = p->value.numel();
    Tensor out(x->value.shape());
    for (int64_t r = 0; r < reps; ++r)
        for (int64_t i = 0; i < inner; ++i) out[r * inner + i] = x->value[r * inner + i] + p->value[i];
    return make_op(std::move(out), {x, p}, [reps, inner](Node& self) {
        accumulate_grad(self.parents[0], self.grad);
        const Var& p = self.parents[1];
        if (!p->requires_grad) return;
        Tensor g(p->value.shape());
        for (int64_t r = 0; r < reps; ++r)
            for (int64_t i = 0; i < inner; ++i) g[i] += self.grad[r * inner + i];
        accumulate_grad(p, g);
    });
}

Var mul_channel_gate(const Var& x, const Var& gate) {
    const Tensor& xv = x->value;
    const Tensor& gv = gate->value;
    check(xv.ndim() == 4 && gv.ndim() == 4 && gv.dim(1) == 1 && xv.dim(0) == gv.dim(0) &&
              xv.dim(2) == gv.dim(2) && xv.dim(3) == gv.dim(3),
          "mul_channel_gate: gate must be (B,1,H,W) matching x " + shape_str(xv.shape()));
    const int64_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Tensor out(xv.shape());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < HW; ++i)
                out[(b * C + c) * HW + i] = xv[(b * C + c) * HW + i] * gv[b * HW + i];
    return make_op(std::move(out), {x, gate}, [B, C, HW](Node& self) {
        const Var& x = self.parents[0];
        const Var& gate = self.parents[1];
        if (x->requires_grad) {
            Tensor g(x->value.shape());
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t i = 0; i < HW; ++i)
                        g[(b * C + c) * HW + i] = self.grad[(b * C + c) * HW + i] * gate->value[b * HW + i];
            accumulate_grad(x, g);
        }
        if (gate->requires_grad) {
            Tensor g(gate->value.shape());
            for (int64_t b = 0; b < B; ++b)
                for (int64_t i = 0; i < HW; ++i) {
                    double acc = 0.0;
                    for (int64_t c = 0; c < C; ++c)
                        acc += self.grad[(b * C + c) * HW + i] * x->value[(b * C + c) * HW + i];
                    g[b * HW + i] = acc;
                }
            accumulate_grad(gate, g);
        }
    });
}

// ---- shape --------------------------------------------------------------------

Var reshape(const Var& x, Shape new_shape) {
    Tensor out = x->value.reshaped(std::move(new_shape));
    return make_op(std::move(out), {x}, [](Node& self) {
        const Var& p = self.parents[0];
        if (!p->requires_grad) return;
        accumulate_grad(p, self.grad.reshaped(p->value.shape()));
    });
}

namespace {

Tensor permute_tensor(const Tensor& in, const std::vector<int>& perm) {
    const int nd = in.ndim();
    Shape out_shape(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = in.dim(perm[static_cast<size_t>(i)]);
    Tensor out(out_shape);
    std::vector<int64_t> in_strides(static_cast<size_t>(nd), 1);
    for (int i = nd - 2; i >= 0; --i)
        in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * in.dim(i + 1);
    std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
    const int64_t n = in.numel();
    for (int64_t o = 0; o < n; ++o) {
        int64_t src = 0;
        for (int i = 0; i < nd; ++i) src += idx[static_cast<size_t>(i)] * in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
        out[o] = in[src];
        for (int i = nd - 1; i >= 0; --i) {
            if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
            idx[static_cast<size_t>(i)] = 0;
        }
    }
    return out;
}

}  // namespace

Var permute(const Var& x, const std::vector<int>& perm) {
    check(static_cast<int>(perm.size()) == x->value.ndim(), "permute: rank mismatch");
    Tensor out = permute_tensor(x->value, perm);
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    return make_op(std::move(out), {x}, [inv](Node& self) {
        const Var& p = self.parents[0];
        if (!p->requires_grad) return;
        accumulate_grad(p, permute_tensor(self.grad, inv));
    });
}

Var transpose_last2(const Var& x) {
    const int nd = x->value.ndim();
    check(nd >= 2, "transpose_last2: need rank >= 2");
    std::vector<int> perm(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) perm[static_cast<size_t>(i)] = i;
    std::swap(perm[static_cast<size_t>(nd - 1)], perm[static_cast<size_t>(nd - 2)]);
    return permute(x, perm);
}

Var concat_channels(const std::vector<Var>& xs) {
    check(!xs.empty(), "concat_channels: empty input list");
    const Tensor& first = xs[0]->value;
    check(first.ndim() == 4, "concat_channels: expects (B,C,H,W) inputs");
    int64_t total_c = 0;
    for (const Var& v : xs) {
        const Tensor& t = v->value;
        check(t.ndim() == 4 && t.dim(0) == first.dim(0) && t.dim(2) == first.dim(2) &&
                  t.dim(3) == first.dim(3),
              "concat_channels: mismatched shapes " + shape_str(t.shape()) + " vs " +
                  shape_str(first.shape()));
        total_c += t.dim(1);
    }
    const int64_t B = first.dim(0), HW = first.dim(2) * first.dim(3);
    Tensor out({B, total_c, first.dim(2), first.dim(3)});
    std::vector<int64_t> ch_offsets;
    int64_t off = 0;
    for (const Var& v : xs) {
        ch_offsets.push_back(off);
        const int64_t c = v->value.dim(1);
        for (int64_t b = 0; b < B; ++b)
            std::memcpy(out.data() + (b * total_c + off) * HW, v->value.data() + b * c * HW,
                        static_cast<size_t>(c * HW) * sizeof(double));
        off += c;
    }
    return make_op(std::move(out), {xs.begin(), xs.end()},
                   [B, HW, total_c, ch_offsets](Node& self) {
                       for (size_t i = 0; i < self.parents.size(); ++i) {
                           const Var& p = self.parents[i];
                           if (!p->requires_grad) continue;
                           const int64_t c = p->value.dim(1);
                           Tensor g(p->value.shape());
                           for (int64_t b = 0; b < B; ++b)
                               std::memcpy(g.data() + b * c * HW,
                                           self.grad.data() + (b * total_c + ch_offsets[i]) * HW,
                                           static_cast<size_t>(c * HW) * sizeof(double));
                           accumulate_grad(p, g);
                       }
                   });
}

Var slice_channels(const Var& x, int64_t from, int64_t count) {
    const Tensor& xv = x->value;
    check(xv.ndim() == 4, "slice_channels: expects (B,C,H,W)");
    check(from >= 0 && count >= 1 && from + count <= xv.dim(1), "slice_channels: range out of bounds");
    const int64_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Tensor out({B, count, xv.dim(2), xv.dim(3)});
    for (int64_t b = 0; b < B; ++b)
        std::memcpy(out.data() + b * count * HW, xv.data() + (b * C + from) * HW,
                    static_cast<size_t>(count * HW) * sizeof(double));
    return make_op(std::move(out), {x}, [B, C, HW, from, count](Node& self) {
        const Var& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor g = Tensor::zeros(p->value.shape());
        for (int64_t b = 0; b < B; ++b)
            std::memcpy(g.data() + (b * C + from) * HW, self.grad.data() + b * count * HW,
                        static_cast<size_t>(count * HW) * sizeof(double));
        accumulate_grad(p, g);
    });
}

// ---- linear algebra -------------------------------------------------------------

Var linear(const Var& x, const Var& w, const Var& b) {
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    check(wv.ndim() == 2, "linear: weight must be (out,in)");
    const int64_t in = wv.dim(1), out_f = wv.dim(0);
    check(xv.dim(xv.ndim() - 1) == in, "linear: input last dim " +
                                           std::to_string(xv.dim(xv.ndim() - 1)) +
                                           " != weight in dim " + std::to_string(in));
    if (b) check(b->value.ndim() == 1 && b->value.dim(0) == out_f, "linear: bad bias shape");
    const int64_t m = xv.numel() / in;
    Shape out_shape = xv.shape();
    out_shape.back() = out_f;
    Tensor out(out_shape);
    {
        ConstMatMap X(xv.data(), m, in);
        ConstMatMap W(wv.data(), out_f, in);
        MatMap Y(out.data(), m, out_f);
        Y.noalias() = X * W.transpose();
        if (b)
            for (int64_t r = 0; r < m; ++r)
                for (int64_t c = 0; c < out_f; ++c) out[r * out_f + c] += b->value[c];
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_op(std::move(out), std::move(parents), [m, in, out_f](Node& self) {
        const Var& x = self.parents[0];
        const Var& w = self.parents[1];
        ConstMatMap G(self.grad.data(), m, out_f);
        if (x->requires_grad) {
            Tensor gx(x->value.shape());
            MatMap GX(gx.data(), m, in);
            ConstMatMap W(w->value.data(), out_f, in);
            GX.noalias() = G * W;
            accumulate_grad(x, gx);
        }
        if (w->requires_grad) {
            Tensor gw(w->value.shape());
            MatMap GW(gw.data(), out_f, in);
            ConstMatMap X(x->value.data(), m, in);
            GW.noalias() = G.transpose() * X;
            accumulate_grad(w, gw);
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            Tensor gb(self.parents[2]->value.shape());
            for (int64_t r = 0; r < m; ++r)
                for (int64_t c = 0; c < out_f; ++c) gb[c] += self.grad[r * out_f + c];
            accumulate_grad(self.parents[2], gb);
        }
    });
}

Var bmm(const Var& a, const Var& b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    check(av.ndim() == bv.ndim() && av.ndim() >= 2, "bmm: rank mismatch");
    const int nd = av.ndim();
    int64_t batch = 1;
    for (int i = 0; i < nd - 2; ++i) {
        check(av.dim(i) == bv.dim(i), "bmm: leading dims mismatch");
        batch *= av.dim(i);
    }
    const int64_t m = av.dim(nd - 2), k = av.dim(nd - 1);
    check(bv.dim(nd - 2) == k, "bmm: inner dims mismatch");
    const int64_t n = bv.dim(nd - 1);
    Shape out_shape = av.shape();
    out_shape[static_cast<size_t>(nd - 1)] = n;
    Tensor out(out_shape);
    for (int64_t l = 0; l < batch; ++l) {
        ConstMatMap A(av.data() + l * m * k, m, k);
        ConstMatMap B(bv.data() + l * k * n, k, n);
        MatMap Y(out.data() + l * m * n, m, n);
        Y.noalias() = A * B;
    }
    return make_op(std::move(out), {a, b}, [batch, m, k, n](Node& self) {
        const Var& a = self.parents[0];
        const Var& b = self.parents[1];
        if (a->requires_grad) {
            Tensor ga(a->value.shape());
            for (int64_t l = 0; l < batch; ++l) {
                ConstMatMap G(self.grad.data() + l * m * n, m, n);
                ConstMatMap B(b->value.data() + l * k * n, k, n);
                MatMap GA(ga.data() + l * m * k, m, k);
                GA.noalias() = G * B.transpose();
            }
            accumulate_grad(a, ga);
        }
        if (b->requires_grad) {
            Tensor gb(b->value.shape());
            for (int64_t l = 0; l < batch; ++l) {
                ConstMatMap G(self.grad.data() + l * m * n, m, n);
                ConstMatMap A(a->value.data() + l * m * k, m, k);
                MatMap GB(gb.data() + l * k * n, k, n);
                GB.noalias() = A.transpose() * G;
            }
            accumulate_grad(b, gb);
        }
    });
}

Var softmax_lastdim(const Var& x) {
    const Tensor& xv = x->value;
    const int64_t d = xv.dim(xv.ndim() - 1);
    const int64_t rows = xv.numel() / d;
    Tensor out(xv.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const double* src = xv.data() + r * d;
        double* dst = out.data() + r * d;
        double mx = src[0];
        for (int64_t i = 1; i < d; ++i) mx = std::max(mx, src[i]);
        double s = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            dst[i] = std::exp(src[i] - mx);
            s += dst[i];
        }
        const double inv = 1.0 / s;
        for (int64_t i = 0; i < d; ++i) dst[i] *= inv;
    }
    Tensor saved = out;
    return make_op(std::move(out), {x}, [rows, d, saved = std::move(saved)](Node& self) {
        const Var& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor g(p->value.shape());
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = saved.data() + r * d;
            const double* go = self.grad.data() + r * d;
            double dot = 0.0;
            for (int64_t i = 0; i < d; ++i) dot += go[i] * y[i];
            double* dst = g.data() + r * d;
            for (int64_t i = 0; i < d; ++i) dst[i] = y[i] * (go[i] - dot);
        }
        accumulate_grad(p, g);
    });
}

Var layernorm_lastdim(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Tensor& xv = x->value;
    const int64_t d = xv.dim(xv.ndim() - 1);
    check(gamma->value.numel() == d && beta->value.numel() == d, "layernorm: gamma/beta must have size d");
    const int64_t rows = xv.numel() / d;
    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    Tensor invstd({rows});
    for (int64_t r = 0; r < rows; ++r) {
        const double* src = xv.data() + r * d;
        double mean = 0.0;
        for (int64_t i = 0; i < d; ++i) mean += src[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            const double c = src[i] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        invstd[r] = is;
        for (int64_t i = 0; i < d; ++i) {
            const double xh = (src[i] - mean) * is;
            xhat[r * d + i] = xh;
            out[r * d + i] = xh * gamma->value[i] + beta->value[i];
        }
    }
    return make_op(std::move(out), {x, gamma, beta},
                   [rows, d, xhat = std::move(xhat), invstd = std::move(invstd)](Node& self) {
                       const Var& x = self.parents[0];
                       const Var& gamma = self.parents[1];
                       const Var& beta = self.parents[2];
                       if (x->requires_grad) {
                           Tensor g(x->value.shape());
                           for (int64_t r = 0; r < rows; ++r) {
                               double s1 = 0.0, s2 = 0.0;
                               for (int64_t i = 0; i < d; ++i) {
                                   const double dxh = self.grad[r * d + i] * gamma->value[i];
                                   s1 += dxh;
                                   s2 += dxh * xhat[r * d + i];
                               }
                               const double scale = invstd[r] / static_cast<double>(d);
                               for (int64_t i = 0; i < d; ++i) {
                                   const double dxh = self.grad[r * d + i] * gamma->value[i];
                                   g[r * d + i] = scale * (static_cast<double>(d) * dxh - s1 -
                                                           xhat[r * d + i] * s2);
                               }
                           }
                           accumulate_grad(x, g);
                       }
                       if (gamma->requires_grad) {
                           Tensor g(gamma->value.shape());
                           for (int64_t r = 0; r < rows; ++r)
                               for (int64_t i = 0; i < d; ++i)
                                   g[i] += self.grad[r * d + i] * xhat[r * d + i];
                           accumulate_grad(gamma, g);
                       }
                       if (beta->requires_grad) {
                           Tensor g(beta->value.shape());
                           for (int64_t r = 0; r < rows; ++r)
                               for (int64_t i = 0; i < d; ++i) g[i] += self.grad[r * d + i];
                           accumulate_grad(beta, g);
                       }
                   });
}

// ---- convolution & friends -------------------------------------------------------

namespace {

struct ConvDims {
    int64_t B, Cin, H, W, Cout, kh, kw, Ho, Wo;
    int stride, pad, groups;
    int64_t cin_g, cout_g, patch;  // patch = cin_g*kh*kw
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad, int groups) {
    check(x.ndim() == 4, "conv2d: input must be (B,C,H,W), got " + shape_str(x.shape()));
    check(w.ndim() == 4, "conv2d: weight must be (Cout,Cin/g,kh,kw)");
    ConvDims d;
    d.B = x.dim(0);
    d.Cin = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.Cout = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = stride;
    d.pad = pad;
    d.groups = groups;
    check(groups >= 1 && d.Cin % groups == 0 && d.Cout % groups == 0,
          "conv2d: groups must divide channel counts");
    d.cin_g = d.Cin / groups;
    d.cout_g = d.Cout / groups;
    check(w.dim(1) == d.cin_g, "conv2d: weight in-channels " + std::to_string(w.dim(1)) +
                                   " != input channels/groups " + std::to_string(d.cin_g));
    d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
    check(d.Ho >= 1 && d.Wo >= 1, "conv2d: kernel larger than padded input");
    d.patch = d.cin_g * d.kh * d.kw;
    return d;
}

// col: (patch, Ho*Wo), reading channels [c0, c0+cin_g) of batch b.
void im2col(const Tensor& x, const ConvDims& d, int64_t b, int64_t c0, Tensor& col) {
    const int64_t HW = d.H * d.W;
    const double* base = x.data() + (b * d.Cin + c0) * HW;
    double* dst = col.data();
    for (int64_t ci = 0; ci < d.cin_g; ++ci) {
        const double* plane = base + ci * HW;
        for (int64_t ky = 0; ky < d.kh; ++ky) {
            for (int64_t kx = 0; kx < d.kw; ++kx) {
                for (int64_t oy = 0; oy < d.Ho; ++oy) {
                    const int64_t iy = oy * d.stride - d.pad + ky;
                    const bool valid_row = iy >= 0 && iy < d.H;
                    for (int64_t ox = 0; ox < d.Wo; ++ox) {
                        const int64_t ix = ox * d.stride - d.pad + kx;
                        *dst++ = (valid_row && ix >= 0 && ix < d.W) ? plane[iy * d.W + ix] : 0.0;
                    }
                }
            }
        }
    }
}

// Scatter-add of col-layout gradients back onto the input plane.
void col2im_add(Tensor& gx, const ConvDims& d, int64_t b, int64_t c0, const Tensor& col) {
    const int64_t HW = d.H * d.W;
    double* base = gx.data() + (b * d.Cin + c0) * HW;
    const double* src = col.data();
    for (int64_t ci = 0; ci < d.cin_g; ++ci) {
        double* plane = base + ci * HW;
        for (int64_t ky = 0; ky < d.kh; ++ky) {
            for (int64_t kx = 0; kx < d.kw; ++kx) {
                for (int64_t oy = 0; oy < d.Ho; ++oy) {
                    const int64_t iy = oy * d.stride - d.pad + ky;
                    const bool valid_row = iy >= 0 && iy < d.H;
                    for (int64_t ox = 0; ox < d.Wo; ++ox) {
                        const int64_t ix = ox * d.stride - d.pad + kx;
                        if (valid_row && ix >= 0 && ix < d.W) plane[iy * d.W + ix] += *src;
                        ++src;
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups) {
    const ConvDims d = conv_dims(x->value, w->value, stride, pad, groups);
    if (b) check(b->value.numel() == d.Cout, "conv2d: bias must have Cout entries");
    Tensor out({d.B, d.Cout, d.Ho, d.Wo});
    const int64_t owo = d.Ho * d.Wo;
    Tensor col({d.patch, owo});
    for (int64_t bi = 0; bi < d.B; ++bi) {
        for (int g = 0; g < d.groups; ++g) {
            im2col(x->value, d, bi, g * d.cin_g, col);
            ConstMatMap W(w->value.data() + g * d.cout_g * d.patch, d.cout_g, d.patch);
            ConstMatMap C(col.data(), d.patch, owo);
            MatMap Y(out.data() + (bi * d.Cout + g * d.cout_g) * owo, d.cout_g, owo);
            Y.noalias() = W * C;
        }
    }
    if (b) {
        for (int64_t bi = 0; bi < d.B; ++bi)
            for (int64_t c = 0; c < d.Cout; ++c) {
                double* plane = out.data() + (bi * d.Cout + c) * owo;
                const double bias = b->value[c];
                for (int64_t i = 0; i < owo; ++i) plane[i] += bias;
            }
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_op(std::move(out), std::move(parents), [d, owo](Node& self) {
        const Var& x = self.parents[0];
        const Var& w = self.parents[1];
        const bool need_dx = x->requires_grad;
        const bool need_dw = w->requires_grad;
        Tensor col({d.patch, owo});
        Tensor gx, gw;
        if (need_dx) gx = Tensor::zeros(x->value.shape());
        if (need_dw) gw = Tensor::zeros(w->value.shape());
        Tensor gcol({d.patch, owo});
        for (int64_t bi = 0; bi < d.B; ++bi) {
            for (int g = 0; g < d.groups; ++g) {
                ConstMatMap G(self.grad.data() + (bi * d.Cout + g * d.cout_g) * owo, d.cout_g, owo);
                if (need_dw) {
                    im2col(x->value, d, bi, g * d.cin_g, col);
                    ConstMatMap C(col.data(), d.patch, owo);
                    MatMap GW(gw.data() + g * d.cout_g * d.patch, d.cout_g, d.patch);
                    GW.noalias() += G * C.transpose();
                }
                if (need_dx) {
                    ConstMatMap W(w->value.data() + g * d.cout_g * d.patch, d.cout_g, d.patch);
                    MatMap GC(gcol.data(), d.patch, owo);
                    GC.noalias() = W.transpose() * G;
                    col2im_add(gx, d, bi, g * d.cin_g, gcol);
                }
            }
        }
        if (need_dx) accumulate_grad(x, gx);
        if (need_dw) accumulate_grad(w, gw);
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            Tensor gb(self.parents[2]->value.shape());
            for (int64_t bi = 0; bi < d.B; ++bi)
                for (int64_t c = 0; c < d.Cout; ++c) {
                    const double* plane = self.grad.data() + (bi * d.Cout + c) * owo;
                    double acc = 0.0;
                    for (int64_t i = 0; i < owo; ++i) acc += plane[i];
                    gb[c] += acc;
                }
            accumulate_grad(self.parents[2], gb);
        }
    });
}

Var replicate_pad2d(const Var& x, int pad) {
    const Tensor& xv = x->value;
    check(xv.ndim() == 4, "replicate_pad2d: input must be (B,C,H,W)");
    check(pad >= 0, "replicate_pad2d: pad must be >= 0");
    const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int64_t Ho = H + 2 * pad, Wo = W + 2 * pad;
    Tensor out({B, C, Ho, Wo});
    auto clamp_idx = [](int64_t v, int64_t hi) { return std::min(std::max<int64_t>(v, 0), hi - 1); };
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* plane = xv.data() + (b * C + c) * H * W;
            double* oplane = out.data() + (b * C + c) * Ho * Wo;
            for (int64_t oy = 0; oy < Ho; ++oy) {
                const int64_t iy = clamp_idx(oy - pad, H);
                for (int64_t ox = 0; ox < Wo; ++ox)
                    oplane[oy * Wo + ox] = plane[iy * W + clamp_idx(ox - pad, W)];
            }
        }
    return make_op(std::move(out), {x}, [pad, B, C, H, W, Ho, Wo](Node& self) {
        const Var& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor g = Tensor::zeros(p->value.shape());
        auto clamp_idx = [](int64_t v, int64_t hi) { return std::min(std::max<int64_t>(v, 0), hi - 1); };
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                double* plane = g.data() + (b * C + c) * H * W;
                const double* gplane = self.grad.data() + (b * C + c) * Ho * Wo;
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    const int64_t iy = clamp_idx(oy - pad, H);
                    for (int64_t ox = 0; ox < Wo; ++ox)
                        plane[iy * W + clamp_idx(ox - pad, W)] += gplane[oy * Wo + ox];
                }
            }
        accumulate_grad(p, g);
    });
}

Var maxpool2d(const Var& x, int kernel, int stride, int pad) {
    const Tensor& xv = x->value;
    check(xv.ndim() == 4, "maxpool2d: input must be (B,C,H,W)");
    const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int64_t Ho = (H + 2 * pad - kernel) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kernel) / stride + 1;
    check(Ho >= 1 && Wo >= 1, "maxpool2d: kernel larger than padded input");
    Tensor out({B, C, Ho, Wo});
    std::vector<int64_t> argmax(static_cast<size_t>(out.numel()));
    int64_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* plane = xv.data() + (b * C + c) * H * W;
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    double best = -std::numeric_limits<double>::infinity();
                    int64_t best_idx = -1;
                    for (int64_t ky = 0; ky < kernel; ++ky) {
                        const int64_t iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int64_t kx = 0; kx < kernel; ++kx) {
                            const int64_t ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= W) continue;
                            const double v = plane[iy * W + ix];
                            if (v > best) {
                                best = v;
                                best_idx = (b * C + c) * H * W + iy * W + ix;
                            }
                        }
                    }
                    out[o] = best;
                    argmax[static_cast<size_t>(o)] = best_idx;
                    ++o;
                }
        }
    return make_op(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
        const Var& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor g = Tensor::zeros(p->value.shape());
        for (size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[static_cast<int64_t>(i)];
        accumulate_grad(p, g);
    });
}

Var avgpool2d(const Var& x, int kernel) {
    const Tensor& xv = x->value;
    check(xv.ndim() == 4, "avgpool2d: input must be (B,C,H,W)");
    const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    check(H % kernel == 0 && W % kernel == 0, "avgpool2d: kernel must divide spatial dims");
    const int64_t Ho = H / kernel, Wo = W / kernel;
    const double inv = 1.0 / (static_cast<double>(kernel) * kernel);
    Tensor out({B, C, Ho, Wo});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* plane = xv.data() + (b * C + c) * H * W;
            double* oplane = out.data() + (b * C + c) * Ho * Wo;
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    double acc = 0.0;
                    for (int64_t ky = 0; ky < kernel; ++ky)
                        for (int64_t kx = 0; kx < kernel; ++kx)
                            acc += plane[(oy * kernel + ky) * W + ox * kernel + kx];
                    oplane[oy * Wo + ox] = acc * inv;
                }
        }
    return make_op(std::move(out), {x}, [kernel, inv](Node& self) {
        const Var& p = self.parents[0];
        if (!p->requires_grad) return;
        const Tensor& xv = p->value;
        const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        const int64_t Ho = H / kernel, Wo = W / kernel;
        Tensor g(xv.shape());
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                double* plane = g.data() + (b * C + c) * H * W;
                const double* gplane = self.grad.data() + (b * C + c) * Ho * Wo;
                for (int64_t oy = 0; oy < Ho; ++oy)
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        const double v = gplane[oy * Wo + ox] * inv;
                        for (int64_t ky = 0; ky < kernel; ++ky)
                            for (int64_t kx = 0; kx < kernel; ++kx)
                                plane[(oy * kernel + ky) * W + ox * kernel + kx] = v;
                    }
            }
        accumulate_grad(p, g);
    });
}

namespace {

struct LerpIdx {
    int64_t i0, i1;
    double f;  // weight of i1
};

std::vector<LerpIdx> bilinear_axis(int64_t in, int64_t out) {
    std::vector<LerpIdx> v(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
        s = std::max(0.0, std::min(s, static_cast<double>(in - 1)));
        const int64_t i0 = static_cast<int64_t>(std::floor(s));
        v[static_cast<size_t>(o)] = {i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
    }
    return v;
}

}  // namespace

Var resize_bilinear(const Var& x, int64_t out_h, int64_t out_w) {
    const Tensor& xv = x->value;
    check(xv.ndim() == 4, "resize_bilinear: input must be (B,C,H,W)");
    check(out_h >= 1 && out_w >= 1, "resize_bilinear: output dims must be >= 1");
    const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const auto ys = bilinear_axis(H, out_h);
    const auto xs = bilinear_axis(W, out_w);
    Tensor out({B, C, out_h, out_w});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* plane = xv.data() + (b * C + c) * H * W;
            double* oplane = out.data() + (b * C + c) * out_h * out_w;
            for (int64_t oy = 0; oy < out_h; ++oy) {
                const auto& ly = ys[static_cast<size_t>(oy)];
                for (int64_t ox = 0; ox < out_w; ++ox) {
                    const auto& lx = xs[static_cast<size_t>(ox)];
                    const double top = plane[ly.i0 * W + lx.i0] * (1.0 - lx.f) + plane[ly.i0 * W + lx.i1] * lx.f;
                    const double bot = plane[ly.i1 * W + lx.i0] * (1.0 - lx.f) + plane[ly.i1 * W + lx.i1] * lx.f;
                    oplane[oy * out_w + ox] = top * (1.0 - ly.f) + bot * ly.f;
                }
            }
        }
    return make_op(std::move(out), {x}, [ys, xs, out_h, out_w](Node& self) {
        const Var& p = self.parents[0];
        if (!p->requires_grad) return;
        const Tensor& xv = p->value;
        const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        Tensor g = Tensor::zeros(xv.shape());
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                double* plane = g.data() + (b * C + c) * H * W;
                const double* gplane = self.grad.data() + (b * C + c) * out_h * out_w;
                for (int64_t oy = 0; oy < out_h; ++oy) {
                    const auto& ly = ys[static_cast<size_t>(oy)];
                    for (int64_t ox = 0; ox < out_w; ++ox) {
                        const auto& lx = xs[static_cast<size_t>(ox)];
                        const double go = gplane[oy * out_w + ox];
                        plane[ly.i0 * W + lx.i0] += go * (1.0 - ly.f) * (1.0 - lx.f);
                        plane[ly.i0 * W + lx.i1] += go * (1.0 - ly.f) * lx.f;
                        plane[ly.i1 * W + lx.i0] += go * ly.f * (1.0 - lx.f);
                        plane[ly.i1 * W + lx.i1] += go * ly.f * lx.f;
                    }
                }
            }
        accumulate_grad(p, g);
    });
}

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                Tensor& running_var, bool training, double momentum, double eps) {
    const Tensor& xv = x->value;
    check(xv.ndim() == 4, "batchnorm2d: input must be (B,C,H,W)");
    const int64_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    check(gamma->value.numel() == C && beta->value.numel() == C &&
              running_mean.numel() == C && running_var.numel() == C,
          "batchnorm2d: per-channel params must have C entries");
    const int64_t m = B * HW;
    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    Tensor invstd({C});
    if (training) {
        for (int64_t c = 0; c < C; ++c) {
            double mean = 0.0;
            for (int64_t b = 0; b < B; ++b) {
                const double* plane = xv.data() + (b * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) mean += plane[i];
            }
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (int64_t b = 0; b < B; ++b) {
                const double* plane = xv.data() + (b * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) {
                    const double d = plane[i] - mean;
                    var += d * d;
                }
            }
            var /= static_cast<double>(m);
            const double is = 1.0 / std::sqrt(var + eps);
            invstd[c] = is;
            const double g = gamma->value[c], be = beta->value[c];
            for (int64_t b = 0; b < B; ++b) {
                const double* plane = xv.data() + (b * C + c) * HW;
                double* xh = xhat.data() + (b * C + c) * HW;
                double* op = out.data() + (b * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) {
                    xh[i] = (plane[i] - mean) * is;
                    op[i] = xh[i] * g + be;
                }
            }
            const double var_unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
            running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean;
            running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var_unbiased;
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            const double is = 1.0 / std::sqrt(running_var[c] + eps);
            invstd[c] = is;
            const double mean = running_mean[c];
            const double g = gamma->value[c], be = beta->value[c];
            for (int64_t b = 0; b < B; ++b) {
                const double* plane = xv.data() + (b * C + c) * HW;
                double* xh = xhat.data() + (b * C + c) * HW;
                double* op = out.data() + (b * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) {
                    xh[i] = (plane[i] - mean) * is;
                    op[i] = xh[i] * g + be;
                }
            }
        }
    }
    return make_op(
        std::move(out), {x, gamma, beta},
        [B, C, HW, m, training, xhat = std::move(xhat), invstd = std::move(invstd)](Node& self) {
            const Var& x = self.parents[0];
            const Var& gamma = self.parents[1];
            const Var& beta = self.parents[2];
            for (int64_t c = 0; c < C; ++c) {
                double sum_g = 0.0, sum_g_xhat = 0.0;
                for (int64_t b = 0; b < B; ++b) {
                    const double* go = self.grad.data() + (b * C + c) * HW;
                    const double* xh = xhat.data() + (b * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) {
                        sum_g += go[i];
                        sum_g_xhat += go[i] * xh[i];
                    }
                }
                if (gamma->requires_grad) gamma->ensure_grad()[c] += sum_g_xhat;
                if (beta->requires_grad) beta->ensure_grad()[c] += sum_g;
                if (x->requires_grad) {
                    const double gm = gamma->value[c];
                    const double is = invstd[c];
                    Tensor* gx = &x->ensure_grad();
                    if (training) {
                        const double inv_m = 1.0 / static_cast<double>(m);
                        for (int64_t b = 0; b < B; ++b) {
                            const double* go = self.grad.data() + (b * C + c) * HW;
                            const double* xh = xhat.data() + (b * C + c) * HW;
                            double* dst = gx->data() + (b * C + c) * HW;
                            for (int64_t i = 0; i < HW; ++i) {
                                const double dxh = go[i] * gm;
                                dst[i] += is * (dxh - inv_m * (sum_g * gm + xh[i] * sum_g_xhat * gm));
                            }
                        }
                    } else {
                        for (int64_t b = 0; b < B; ++b) {
                            const double* go = self.grad.data() + (b * C + c) * HW;
                            double* dst = gx->data() + (b * C + c) * HW;
                            for (int64_t i = 0; i < HW; ++i) dst[i] += go[i] * gm * is;
                        }
                    }
                }
            }
        });
}

}  // namespace ops
}  // namespace bseg
