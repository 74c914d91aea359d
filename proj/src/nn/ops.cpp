#include "fpsr/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fpsr::nn::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

double sequential_sum(const double* p, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p[i];
    return s;
}

void require_same(const Var& a, const Var& b, const char* op) {
    if (!(a.shape() == b.shape())) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() +
                                    " vs " + b.shape().str());
    }
}

bool wants(const std::shared_ptr<Node>& n) { return n && n->requires_grad; }

// Elementwise unary op whose derivative depends on the input and output values.
template <typename F, typename D>
Var unary(const Var& x, F f, D dfdx) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = f(xv[i]);
    }
    return Var::make(std::move(out), {x}, [dfdx](Node& self) {
        auto& in = self.inputs[0];
        if (!wants(in)) return;
        Tensor& g = in->ensure_grad();
        const Tensor& xv = in->value;
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
        }
    });
}

struct ConvGeometry {
    int cin, h, w, k, stride, pad, oh, ow;
    int rows() const { return cin * k * k; }
    int cols() const { return oh * ow; }
    bool is_pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Valid output range [lo, hi) for which ix = o*stride - pad + k stays inside [0, n).
inline void valid_range(int n, int out, int stride, int pad, int k, int& lo, int& hi) {
    lo = 0;
    while (lo < out && lo * stride - pad + k < 0) ++lo;
    hi = out;
    while (hi > lo && (hi - 1) * stride - pad + k >= n) --hi;
}

void im2col(const double* x, const ConvGeometry& g, double* cols) {
    const int ohw = g.cols();
    for (int c = 0; c < g.cin; ++c) {
        const double* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ki = 0; ki < g.k; ++ki) {
            int ylo, yhi;
            valid_range(g.h, g.oh, g.stride, g.pad, ki, ylo, yhi);
            for (int kj = 0; kj < g.k; ++kj) {
                int xlo, xhi;
                valid_range(g.w, g.ow, g.stride, g.pad, kj, xlo, xhi);
                double* row = cols + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * ohw;
                std::fill(row, row + static_cast<std::size_t>(ylo) * g.ow, 0.0);
                std::fill(row + static_cast<std::size_t>(yhi) * g.ow, row + ohw, 0.0);
                for (int oy = ylo; oy < yhi; ++oy) {
                    const int iy = oy * g.stride - g.pad + ki;
                    double* dst = row + static_cast<std::size_t>(oy) * g.ow;
                    const double* src = plane + static_cast<std::size_t>(iy) * g.w - g.pad + kj;
                    std::fill(dst, dst + xlo, 0.0);
                    std::fill(dst + xhi, dst + g.ow, 0.0);
                    if (g.stride == 1) {
                        std::copy(src + xlo, src + xhi, dst + xlo);
                    } else {
                        for (int ox = xlo; ox < xhi; ++ox) dst[ox] = src[ox * g.stride];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* x) {
    const int ohw = g.cols();
    for (int c = 0; c < g.cin; ++c) {
        double* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ki = 0; ki < g.k; ++ki) {
            int ylo, yhi;
            valid_range(g.h, g.oh, g.stride, g.pad, ki, ylo, yhi);
            for (int kj = 0; kj < g.k; ++kj) {
                int xlo, xhi;
                valid_range(g.w, g.ow, g.stride, g.pad, kj, xlo, xhi);
                const double* row =
                    cols + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * ohw;
                for (int oy = ylo; oy < yhi; ++oy) {
                    const int iy = oy * g.stride - g.pad + ki;
                    const double* src = row + static_cast<std::size_t>(oy) * g.ow;
                    double* dst = plane + static_cast<std::size_t>(iy) * g.w - g.pad + kj;
                    if (g.stride == 1) {
                        for (int ox = xlo; ox < xhi; ++ox) dst[ox] += src[ox];
                    } else {
                        for (int ox = xlo; ox < xhi; ++ox) dst[ox * g.stride] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (ws.c != xs.c || ws.h != ws.w) {
        throw std::invalid_argument("conv2d: weight " + ws.str() + " incompatible with input " +
                                    xs.str());
    }
    ConvGeometry g{xs.c, xs.h, xs.w, ws.h, stride, pad, 0, 0};
    g.oh = (xs.h + 2 * pad - g.k) / stride + 1;
    g.ow = (xs.w + 2 * pad - g.k) / stride + 1;
    if (g.oh <= 0 || g.ow <= 0) {
        throw std::invalid_argument("conv2d: input " + xs.str() + " too small for kernel");
    }
    const int cout = ws.n;
    const bool has_bias = bias.defined();
    Tensor out({xs.n, cout, g.oh, g.ow});
    ConstMapMat wm(weight.value().data(), cout, g.rows());
    std::vector<double> cols(g.is_pointwise() ? 0 : static_cast<std::size_t>(g.rows()) * g.cols());
    for (int n = 0; n < xs.n; ++n) {
        const double* xn = x.value().plane(n, 0);
        if (!g.is_pointwise()) im2col(xn, g, cols.data());
        ConstMapMat cm(g.is_pointwise() ? xn : cols.data(), g.rows(), g.cols());
        MapMat om(out.plane(n, 0), cout, g.cols());
        om.noalias() = wm * cm;
        if (has_bias) {
            for (int c = 0; c < cout; ++c) om.row(c).array() += bias.value()[c];
        }
    }
    std::vector<Var> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return Var::make(std::move(out), std::move(inputs), [g, cout, has_bias](Node& self) {
        auto& xin = self.inputs[0];
        auto& win = self.inputs[1];
        const int batch = xin->value.shape().n;
        ConstMapMat wm(win->value.data(), cout, g.rows());
        std::vector<double> cols(g.is_pointwise() ? 0
                                                  : static_cast<std::size_t>(g.rows()) * g.cols());
        for (int n = 0; n < batch; ++n) {
            ConstMapMat gout(self.grad.plane(n, 0), cout, g.cols());
            if (has_bias && wants(self.inputs[2])) {
                Tensor& gb = self.inputs[2]->ensure_grad();
                // Plain left-to-right sums: Eigen's vectorised reduction peels by address
                // alignment, which makes the rounding depend on where the heap put the buffer.
                for (int c = 0; c < cout; ++c) gb[c] += sequential_sum(self.grad.plane(n, c), g.cols());
            }
            if (wants(win)) {
                const double* xn = xin->value.plane(n, 0);
                if (!g.is_pointwise()) im2col(xn, g, cols.data());
                ConstMapMat cm(g.is_pointwise() ? xn : cols.data(), g.rows(), g.cols());
                MapMat gw(win->ensure_grad().data(), cout, g.rows());
                gw.noalias() += gout * cm.transpose();
            }
            if (wants(xin)) {
                double* gx = xin->ensure_grad().plane(n, 0);
                if (g.is_pointwise()) {
                    MapMat gxm(gx, g.rows(), g.cols());
                    gxm.noalias() += wm.transpose() * gout;
                } else {
                    MapMat gcols(cols.data(), g.rows(), g.cols());
                    gcols.noalias() = wm.transpose() * gout;
                    col2im_add(cols.data(), g, gx);
                }
            }
        }
    });
}

Var pixel_shuffle(const Var& x, int r) {
    const Shape s = x.shape();
    if (r < 1 || s.c % (r * r) != 0) {
        throw std::invalid_argument("pixel_shuffle: channels " + std::to_string(s.c) +
                                    " not divisible by factor^2");
    }
    const int oc = s.c / (r * r);
    const Shape os{s.n, oc, s.h * r, s.w * r};
    // out[n][c][y*r+i][x*r+j] = in[n][c*r*r + i*r + j][y][x]
    Tensor out(os);
    const Tensor& xv = x.value();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < oc; ++c)
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < r; ++j) {
                    const double* src = xv.plane(n, c * r * r + i * r + j);
                    double* dst = out.plane(n, c);
                    for (int y = 0; y < s.h; ++y) {
                        double* drow = dst + static_cast<std::size_t>(y * r + i) * os.w + j;
                        const double* srow = src + static_cast<std::size_t>(y) * s.w;
                        for (int xx = 0; xx < s.w; ++xx) drow[xx * r] = srow[xx];
                    }
                }
    return Var::make(std::move(out), {x}, [r, s, oc, os](Node& self) {
        if (!wants(self.inputs[0])) return;
        Tensor& g = self.inputs[0]->ensure_grad();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < oc; ++c)
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < r; ++j) {
                        double* dst = g.plane(n, c * r * r + i * r + j);
                        const double* src = self.grad.plane(n, c);
                        for (int y = 0; y < s.h; ++y) {
                            const double* srow =
                                src + static_cast<std::size_t>(y * r + i) * os.w + j;
                            double* drow = dst + static_cast<std::size_t>(y) * s.w;
                            for (int xx = 0; xx < s.w; ++xx) drow[xx] += srow[xx * r];
                        }
                    }
    });
}

Var upsample_nearest(const Var& x, int r) {
    const Shape s = x.shape();
    Shape os{s.n, s.c, s.h * r, s.w * r};
    Tensor out(os);
    const Tensor& xv = x.value();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < os.h; ++y)
                for (int xx = 0; xx < os.w; ++xx) out.at(n, c, y, xx) = xv.at(n, c, y / r, xx / r);
    return Var::make(std::move(out), {x}, [r](Node& self) {
        if (!wants(self.inputs[0])) return;
        Tensor& g = self.inputs[0]->ensure_grad();
        const Shape os = self.grad.shape();
        for (int n = 0; n < os.n; ++n)
            for (int c = 0; c < os.c; ++c)
                for (int y = 0; y < os.h; ++y)
                    for (int xx = 0; xx < os.w; ++xx)
                        g.at(n, c, y / r, xx / r) += self.grad.at(n, c, y, xx);
    });
}

Var avg_pool2(const Var& x) {
    const Shape s = x.shape();
    Shape os{s.n, s.c, s.h / 2, s.w / 2};
    if (os.h == 0 || os.w == 0) {
        throw std::invalid_argument("avg_pool2: input " + s.str() + " too small");
    }
    Tensor out(os);
    const Tensor& xv = x.value();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < os.h; ++y)
                for (int xx = 0; xx < os.w; ++xx)
                    out.at(n, c, y, xx) =
                        0.25 * (xv.at(n, c, 2 * y, 2 * xx) + xv.at(n, c, 2 * y, 2 * xx + 1) +
                                xv.at(n, c, 2 * y + 1, 2 * xx) + xv.at(n, c, 2 * y + 1, 2 * xx + 1));
    return Var::make(std::move(out), {x}, [](Node& self) {
        if (!wants(self.inputs[0])) return;
        Tensor& g = self.inputs[0]->ensure_grad();
        const Shape os = self.grad.shape();
        for (int n = 0; n < os.n; ++n)
            for (int c = 0; c < os.c; ++c)
                for (int y = 0; y < os.h; ++y)
                    for (int xx = 0; xx < os.w; ++xx) {
                        const double v = 0.25 * self.grad.at(n, c, y, xx);
                        g.at(n, c, 2 * y, 2 * xx) += v;
                        g.at(n, c, 2 * y, 2 * xx + 1) += v;
                        g.at(n, c, 2 * y + 1, 2 * xx) += v;
                        g.at(n, c, 2 * y + 1, 2 * xx + 1) += v;
                    }
    });
}

Var global_avg_pool(const Var& x) {
    const Shape s = x.shape();
    Tensor out({s.n, s.c, 1, 1});
    const double inv = 1.0 / static_cast<double>(s.plane());
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const double* p = x.value().plane(n, c);
            double acc = 0.0;
            for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
            out.at(n, c, 0, 0) = acc * inv;
        }
    return Var::make(std::move(out), {x}, [inv](Node& self) {
        if (!wants(self.inputs[0])) return;
        Tensor& g = self.inputs[0]->ensure_grad();
        const Shape s = g.shape();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                double* p = g.plane(n, c);
                const double v = self.grad.at(n, c, 0, 0) * inv;
                for (std::size_t i = 0; i < s.plane(); ++i) p[i] += v;
            }
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        throw std::invalid_argument("concat_channels: " + sa.str() + " vs " + sb.str());
    }
    Tensor out({sa.n, sa.c + sb.c, sa.h, sa.w});
    const std::size_t na = static_cast<std::size_t>(sa.c) * sa.plane();
    const std::size_t nb = static_cast<std::size_t>(sb.c) * sb.plane();
    for (int n = 0; n < sa.n; ++n) {
        std::copy_n(a.value().plane(n, 0), na, out.plane(n, 0));
        std::copy_n(b.value().plane(n, 0), nb, out.plane(n, 0) + na);
    }
    return Var::make(std::move(out), {a, b}, [na, nb](Node& self) {
        const int batch = self.value.shape().n;
        for (int k = 0; k < 2; ++k) {
            auto& in = self.inputs[k];
            if (!wants(in)) continue;
            Tensor& g = in->ensure_grad();
            const std::size_t len = k == 0 ? na : nb;
            const std::size_t off = k == 0 ? 0 : na;
            for (int n = 0; n < batch; ++n) {
                const double* src = self.grad.plane(n, 0) + off;
                double* dst = g.plane(n, 0);
                for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
            }
        }
    });
}

Var pad_channels(const Var& x, int channels) {
    const Shape s = x.shape();
    if (channels < s.c) {
        throw std::invalid_argument("pad_channels: cannot shrink channels");
    }
    if (channels == s.c) return x;
    Tensor out({s.n, channels, s.h, s.w});
    const std::size_t len = static_cast<std::size_t>(s.c) * s.plane();
    for (int n = 0; n < s.n; ++n) std::copy_n(x.value().plane(n, 0), len, out.plane(n, 0));
    return Var::make(std::move(out), {x}, [len](Node& self) {
        if (!wants(self.inputs[0])) return;
        Tensor& g = self.inputs[0]->ensure_grad();
        for (int n = 0; n < g.shape().n; ++n) {
            const double* src = self.grad.plane(n, 0);
            double* dst = g.plane(n, 0);
            for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const Shape s = x.shape();
    const int in = s.c * s.h * s.w;
    const int out_dim = weight.shape().n;
    if (weight.shape().c != in) {
        throw std::invalid_argument("linear: weight expects " + std::to_string(weight.shape().c) +
                                    " inputs, got " + std::to_string(in));
    }
    Tensor out({s.n, out_dim, 1, 1});
    ConstMapMat xm(x.value().data(), s.n, in);
    ConstMapMat wm(weight.value().data(), out_dim, in);
    MapMat om(out.data(), s.n, out_dim);
    om.noalias() = xm * wm.transpose();
    const bool has_bias = bias.defined();
    if (has_bias) {
        for (int n = 0; n < s.n; ++n)
            for (int o = 0; o < out_dim; ++o) om(n, o) += bias.value()[o];
    }
    std::vector<Var> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return Var::make(std::move(out), std::move(inputs), [in, out_dim, has_bias](Node& self) {
        auto& xin = self.inputs[0];
        auto& win = self.inputs[1];
        const int batch = xin->value.shape().n;
        ConstMapMat gout(self.grad.data(), batch, out_dim);
        if (wants(xin)) {
            MapMat gx(xin->ensure_grad().data(), batch, in);
            gx.noalias() += gout * ConstMapMat(win->value.data(), out_dim, in);
        }
        if (wants(win)) {
            MapMat gw(win->ensure_grad().data(), out_dim, in);
            gw.noalias() += gout.transpose() * ConstMapMat(xin->value.data(), batch, in);
        }
        if (has_bias && wants(self.inputs[2])) {
            Tensor& gb = self.inputs[2]->ensure_grad();
            for (int o = 0; o < out_dim; ++o) {
                double s = 0.0;
                for (int n = 0; n < batch; ++n) s += gout(n, o);
                gb[o] += s;
            }
        }
    });
}

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                     Tensor* batch_mean, Tensor* batch_var) {
    const Shape s = x.shape();
    const double count = static_cast<double>(s.n) * static_cast<double>(s.plane());
    Tensor xhat(s);
    Tensor out(s);
    std::vector<double> inv_std(s.c);
    if (batch_mean) *batch_mean = Tensor({1, s.c, 1, 1});
    if (batch_var) *batch_var = Tensor({1, s.c, 1, 1});
    for (int c = 0; c < s.c; ++c) {
        double mu = 0.0;
        for (int n = 0; n < s.n; ++n) {
            const double* p = x.value().plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) mu += p[i];
        }
        mu /= count;
        double var = 0.0;
        for (int n = 0; n < s.n; ++n) {
            const double* p = x.value().plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) var += (p[i] - mu) * (p[i] - mu);
        }
        var /= count;
        if (batch_mean) (*batch_mean)[c] = mu;
        if (batch_var) (*batch_var)[c] = var;
        inv_std[c] = 1.0 / std::sqrt(var + eps);
        const double gm = gamma.value()[c];
        const double bt = beta.value()[c];
        for (int n = 0; n < s.n; ++n) {
            const double* p = x.value().plane(n, c);
            double* xh = xhat.plane(n, c);
            double* o = out.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                xh[i] = (p[i] - mu) * inv_std[c];
                o[i] = gm * xh[i] + bt;
            }
        }
    }
    return Var::make(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std, count](Node& self) {
                         const Shape s = self.value.shape();
                         auto& xin = self.inputs[0];
                         auto& gin = self.inputs[1];
                         auto& bin = self.inputs[2];
                         for (int c = 0; c < s.c; ++c) {
                             double sum_g = 0.0;
                             double sum_gx = 0.0;
                             for (int n = 0; n < s.n; ++n) {
                                 const double* g = self.grad.plane(n, c);
                                 const double* xh = xhat.plane(n, c);
                                 for (std::size_t i = 0; i < s.plane(); ++i) {
                                     sum_g += g[i];
                                     sum_gx += g[i] * xh[i];
                                 }
                             }
                             if (wants(gin)) gin->ensure_grad()[c] += sum_gx;
                             if (wants(bin)) bin->ensure_grad()[c] += sum_g;
                             if (!wants(xin)) continue;
                             const double gm = gin->value[c];
                             const double k = gm * inv_std[c] / count;
                             Tensor& gx = xin->ensure_grad();
                             for (int n = 0; n < s.n; ++n) {
                                 const double* g = self.grad.plane(n, c);
                                 const double* xh = xhat.plane(n, c);
                                 double* dst = gx.plane(n, c);
                                 for (std::size_t i = 0; i < s.plane(); ++i) {
                                     dst[i] += k * (count * g[i] - sum_g - xh[i] * sum_gx);
                                 }
                             }
                         }
                     });
}

Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean,
                    const Tensor& var, double eps) {
    const Shape s = x.shape();
    Tensor out(s);
    std::vector<double> inv_std(s.c);
    for (int c = 0; c < s.c; ++c) {
        inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
        for (int n = 0; n < s.n; ++n) {
            const double* p = x.value().plane(n, c);
            double* o = out.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                o[i] = gamma.value()[c] * (p[i] - mean[c]) * inv_std[c] + beta.value()[c];
            }
        }
    }
    return Var::make(std::move(out), {x, gamma, beta}, [inv_std, mean](Node& self) {
        const Shape s = self.value.shape();
        auto& xin = self.inputs[0];
        auto& gin = self.inputs[1];
        auto& bin = self.inputs[2];
        for (int c = 0; c < s.c; ++c) {
            double sum_g = 0.0;
            double sum_gx = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const double* g = self.grad.plane(n, c);
                const double* p = xin->value.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) {
                    sum_g += g[i];
                    sum_gx += g[i] * (p[i] - mean[c]) * inv_std[c];
                }
            }
            if (wants(gin)) gin->ensure_grad()[c] += sum_gx;
            if (wants(bin)) bin->ensure_grad()[c] += sum_g;
            if (!wants(xin)) continue;
            Tensor& gx = xin->ensure_grad();
            const double k = gin->value[c] * inv_std[c];
            for (int n = 0; n < s.n; ++n) {
                const double* g = self.grad.plane(n, c);
                double* dst = gx.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) dst[i] += k * g[i];
            }
        }
    });
}

Var relu(const Var& x) {
    return unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
    return unary(
        x, [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var prelu(const Var& x, const Var& alpha) {
    const Shape s = x.shape();
    if (alpha.value().size() != static_cast<std::size_t>(s.c)) {
        throw std::invalid_argument("prelu: alpha must have one entry per channel");
    }
    Tensor out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const double a = alpha.value()[c];
            const double* p = x.value().plane(n, c);
            double* o = out.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) o[i] = p[i] > 0.0 ? p[i] : a * p[i];
        }
    return Var::make(std::move(out), {x, alpha}, [](Node& self) {
        const Shape s = self.value.shape();
        auto& xin = self.inputs[0];
        auto& ain = self.inputs[1];
        for (int c = 0; c < s.c; ++c) {
            const double a = ain->value[c];
            double ga = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const double* p = xin->value.plane(n, c);
                const double* g = self.grad.plane(n, c);
                double* gx = wants(xin) ? xin->ensure_grad().plane(n, c) : nullptr;
                for (std::size_t i = 0; i < s.plane(); ++i) {
                    if (p[i] > 0.0) {
                        if (gx) gx[i] += g[i];
                    } else {
                        if (gx) gx[i] += a * g[i];
                        ga += p[i] * g[i];
                    }
                }
            }
            if (wants(ain)) ain->ensure_grad()[c] += ga;
        }
    });
}

Var sigmoid(const Var& x) {
    return unary(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return Var::make(std::move(out), {a, b}, [](Node& self) {
        for (auto& in : self.inputs) {
            if (!wants(in)) continue;
            Tensor& g = in->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return Var::make(std::move(out), {a, b}, [](Node& self) {
        for (int k = 0; k < 2; ++k) {
            auto& in = self.inputs[k];
            if (!wants(in)) continue;
            const double sign = k == 0 ? 1.0 : -1.0;
            Tensor& g = in->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return Var::make(std::move(out), {a, b}, [](Node& self) {
        for (int k = 0; k < 2; ++k) {
            auto& in = self.inputs[k];
            if (!wants(in)) continue;
            const Tensor& other = self.inputs[1 - k]->value;
            Tensor& g = in->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
        }
    });
}

Var scale(const Var& x, double s) {
    return unary(
        x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& x, double s) {
    return unary(
        x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var square(const Var& x) {
    return unary(
        x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var abs(const Var& x) {
    return unary(
        x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var sqrt(const Var& x) {
    return unary(
        x, [](double v) { return std::sqrt(v); },
        [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var log(const Var& x) {
    return unary(
        x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var clamp(const Var& x, double lo, double hi) {
    return unary(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Var mul_const(const Var& x, const Tensor& mask) {
    if (!(x.shape() == mask.shape())) {
        throw std::invalid_argument("mul_const: shape mismatch");
    }
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return Var::make(std::move(out), {x}, [mask](Node& self) {
        if (!wants(self.inputs[0])) return;
        Tensor& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

Var sum(const Var& x) {
    double acc = 0.0;
    for (double v : x.value().values()) acc += v;
    return Var::make(Tensor::scalar(acc), {x}, [](Node& self) {
        if (!wants(self.inputs[0])) return;
        Tensor& g = self.inputs[0]->ensure_grad();
        const double v = self.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += v;
    });
}

Var mean(const Var& x) {
    const double count = static_cast<double>(x.value().size());
    return scale(sum(x), 1.0 / count);
}

Var sum_per_sample(const Var& x) {
    const Shape s = x.shape();
    const std::size_t len = static_cast<std::size_t>(s.c) * s.plane();
    Tensor out({s.n, 1, 1, 1});
    for (int n = 0; n < s.n; ++n) {
        const double* p = x.value().plane(n, 0);
        double acc = 0.0;
        for (std::size_t i = 0; i < len; ++i) acc += p[i];
        out[n] = acc;
    }
    return Var::make(std::move(out), {x}, [len](Node& self) {
        if (!wants(self.inputs[0])) return;
        Tensor& g = self.inputs[0]->ensure_grad();
        for (int n = 0; n < g.shape().n; ++n) {
            double* p = g.plane(n, 0);
            for (std::size_t i = 0; i < len; ++i) p[i] += self.grad[n];
        }
    });
}

Var mean_over_batch(const Var& x) {
    const Shape s = x.shape();
    const std::size_t len = static_cast<std::size_t>(s.c) * s.plane();
    Tensor out({1, s.c, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
        const double* p = x.value().plane(n, 0);
        for (std::size_t i = 0; i < len; ++i) out[i] += p[i];
    }
    const double inv = 1.0 / s.n;
    for (std::size_t i = 0; i < len; ++i) out[i] *= inv;
    return Var::make(std::move(out), {x}, [len, inv](Node& self) {
        if (!wants(self.inputs[0])) return;
        Tensor& g = self.inputs[0]->ensure_grad();
        for (int n = 0; n < g.shape().n; ++n) {
            double* p = g.plane(n, 0);
            for (std::size_t i = 0; i < len; ++i) p[i] += inv * self.grad[i];
        }
    });
}

Var gram(const Var& features) {
    const Shape s = features.shape();
    const int hw = static_cast<int>(s.plane());
    const double norm = 1.0 / (static_cast<double>(s.c) * hw);
    Tensor out({s.n, 1, s.c, s.c});
    for (int n = 0; n < s.n; ++n) {
        ConstMapMat f(features.value().plane(n, 0), s.c, hw);
        MapMat g(out.plane(n, 0), s.c, s.c);
        g.noalias() = f * f.transpose();
        g *= norm;
        // Enforce exact symmetry: the product is symmetric mathematically but the
        // blocked kernel may round the two triangles differently.
        for (int i = 0; i < s.c; ++i)
            for (int j = i + 1; j < s.c; ++j) g(j, i) = g(i, j);
    }
    return Var::make(std::move(out), {features}, [norm, hw](Node& self) {
        auto& in = self.inputs[0];
        if (!wants(in)) return;
        const Shape s = in->value.shape();
        Tensor& gx = in->ensure_grad();
        for (int n = 0; n < s.n; ++n) {
            ConstMapMat f(in->value.plane(n, 0), s.c, hw);
            ConstMapMat gg(self.grad.plane(n, 0), s.c, s.c);
            MapMat gf(gx.plane(n, 0), s.c, hw);
            gf.noalias() += norm * (gg + gg.transpose()) * f;
        }
    });
}

}  // namespace fpsr::nn::ops
