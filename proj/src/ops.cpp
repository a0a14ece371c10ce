#include "salfom/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>

#include "salfom/error.hpp"

namespace salfom::ops {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using Vec = Eigen::VectorXd;

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void require_rank(const Tensor& x, int rank, const char* what) {
    if (x.rank() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(x.shape()));
    }
}

// Accumulates `g` into t's gradient when t participates in the graph.
inline bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Buffer out(a.data().begin(), a.data().end());
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](Node& self) mutable {
        for (const Tensor* t : {&a, &b}) {
            if (!wants_grad(*t)) continue;
            auto& g = t->node().ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Buffer out(a.data().begin(), a.data().end());
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
        if (wants_grad(a)) {
            auto& g = a.node().ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants_grad(b)) {
            auto& g = b.node().ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto ad = a.data();
    auto bd = b.data();
    Buffer out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
        auto ad = a.data();
        auto bd = b.data();
        if (wants_grad(a)) {
            auto& g = a.node().ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bd[i];
        }
        if (wants_grad(b)) {
            auto& g = b.node().ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ad[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    Buffer out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= factor;
    return make_result(a.shape(), std::move(out), {a}, [a, factor](Node& self) {
        auto& g = a.node().ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel_of(shape) != a.numel()) {
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    Buffer out(a.data().begin(), a.data().end());
    return make_result(std::move(shape), std::move(out), {a}, [a](Node& self) {
        auto& g = a.node().ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result({}, {s}, {a}, [a](Node& self) {
        auto& g = a.node().ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor weighted_sum(const Tensor& a, std::span<const double> weights) {
    if (static_cast<std::int64_t>(weights.size()) != a.numel()) {
        throw ShapeError("weighted_sum: weight count does not match " + shape_str(a.shape()));
    }
    Buffer w(weights.begin(), weights.end());
    double s = 0.0;
    auto ad = a.data();
    for (std::size_t i = 0; i < w.size(); ++i) s += ad[i] * w[i];
    return make_result({}, {s}, {a}, [a, w = std::move(w)](Node& self) {
        auto& g = a.node().ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * w[i];
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(weight, 2, "linear weight");
    const auto in = weight.dim(0);
    const auto out_ch = weight.dim(1);
    if (x.rank() < 1 || x.dim(-1) != in) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(weight.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_ch)) {
        throw ShapeError("linear: bias " + shape_str(bias.shape()));
    }
    const auto rows = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out_ch;
    Buffer out(static_cast<std::size_t>(rows * out_ch));
    {
        CMapR X(x.data().data(), rows, in);
        CMapR W(weight.data().data(), in, out_ch);
        MapR Y(out.data(), rows, out_ch);
        Y.noalias() = X * W;
        if (bias.defined()) {
            Eigen::Map<const Eigen::RowVectorXd> b(bias.data().data(), out_ch);
            Y.rowwise() += b;
        }
    }
    return make_result(std::move(out_shape), std::move(out), {x, weight, bias},
                       [x, weight, bias, rows, in, out_ch](Node& self) {
                           CMapR dY(self.grad.data(), rows, out_ch);
                           if (wants_grad(x)) {
                               MapR dX(x.node().ensure_grad().data(), rows, in);
                               CMapR W(weight.data().data(), in, out_ch);
                               dX.noalias() += dY * W.transpose();
                           }
                           if (wants_grad(weight)) {
                               MapR dW(weight.node().ensure_grad().data(), in, out_ch);
                               CMapR X(x.data().data(), rows, in);
                               dW.noalias() += X.transpose() * dY;
                           }
                           if (wants_grad(bias)) {
                               Eigen::Map<Eigen::RowVectorXd> db(
                                   bias.node().ensure_grad().data(), out_ch);
                               db += dY.colwise().sum();
                           }
                       });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const auto c = x.dim(-1);
    if (gamma.numel() != c || beta.numel() != c) throw ShapeError("layer_norm: affine size");
    const auto rows = x.numel() / c;
    Buffer out(x.data().size());
    Buffer xhat(out.size());
    Buffer inv_std(static_cast<std::size_t>(rows));
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* row = xd.data() + r * c;
        double mu = 0.0;
        for (std::int64_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = is;
        for (std::int64_t j = 0; j < c; ++j) {
            const auto k = static_cast<std::size_t>(r * c + j);
            xhat[k] = (row[j] - mu) * is;
            out[k] = xhat[k] * gd[j] + bd[j];
        }
    }
    return make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [x, gamma, beta, rows, c, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](Node& self) {
            auto gd = gamma.data();
            Buffer* dgamma = wants_grad(gamma) ? &gamma.node().ensure_grad() : nullptr;
            Buffer* dbeta = wants_grad(beta) ? &beta.node().ensure_grad() : nullptr;
            Buffer* dx = wants_grad(x) ? &x.node().ensure_grad() : nullptr;
            Buffer dxhat(static_cast<std::size_t>(c));
            for (std::int64_t r = 0; r < rows; ++r) {
                double mean_d = 0.0;
                double mean_dx = 0.0;
                for (std::int64_t j = 0; j < c; ++j) {
                    const auto k = static_cast<std::size_t>(r * c + j);
                    const double g = self.grad[k];
                    if (dgamma) (*dgamma)[j] += g * xhat[k];
                    if (dbeta) (*dbeta)[j] += g;
                    dxhat[j] = g * gd[j];
                    mean_d += dxhat[j];
                    mean_dx += dxhat[j] * xhat[k];
                }
                if (!dx) continue;
                mean_d /= static_cast<double>(c);
                mean_dx /= static_cast<double>(c);
                const double is = inv_std[static_cast<std::size_t>(r)];
                for (std::int64_t j = 0; j < c; ++j) {
                    const auto k = static_cast<std::size_t>(r * c + j);
                    (*dx)[k] += is * (dxhat[j] - mean_d - xhat[k] * mean_dx);
                }
            }
        });
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps) {
    const auto c = x.dim(-1);
    if (groups < 1 || c % groups != 0) {
        throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                         std::to_string(groups) + " groups");
    }
    if (gamma.numel() != c || beta.numel() != c) throw ShapeError("group_norm: affine size");
    const auto positions = x.numel() / c;
    const auto per_group = c / groups;
    const double count = static_cast<double>(positions * per_group);
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    Buffer mu(static_cast<std::size_t>(groups), 0.0);
    Buffer inv_std(static_cast<std::size_t>(groups), 0.0);
    for (std::int64_t p = 0; p < positions; ++p) {
        for (std::int64_t j = 0; j < c; ++j) mu[j / per_group] += xd[p * c + j];
    }
    for (auto& m : mu) m /= count;
    Buffer var(static_cast<std::size_t>(groups), 0.0);
    for (std::int64_t p = 0; p < positions; ++p) {
        for (std::int64_t j = 0; j < c; ++j) {
            const double d = xd[p * c + j] - mu[j / per_group];
            var[j / per_group] += d * d;
        }
    }
    for (int g = 0; g < groups; ++g) inv_std[g] = 1.0 / std::sqrt(var[g] / count + eps);

    Buffer xhat(xd.size());
    Buffer out(xd.size());
    for (std::int64_t p = 0; p < positions; ++p) {
        for (std::int64_t j = 0; j < c; ++j) {
            const auto k = static_cast<std::size_t>(p * c + j);
            const auto g = j / per_group;
            xhat[k] = (xd[k] - mu[g]) * inv_std[g];
            out[k] = xhat[k] * gd[j] + bd[j];
        }
    }
    return make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [x, gamma, beta, groups, positions, c, per_group, count, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](Node& self) {
            auto gd = gamma.data();
            Buffer mean_d(static_cast<std::size_t>(groups), 0.0);
            Buffer mean_dx(static_cast<std::size_t>(groups), 0.0);
            Buffer* dgamma = wants_grad(gamma) ? &gamma.node().ensure_grad() : nullptr;
            Buffer* dbeta = wants_grad(beta) ? &beta.node().ensure_grad() : nullptr;
            for (std::int64_t p = 0; p < positions; ++p) {
                for (std::int64_t j = 0; j < c; ++j) {
                    const auto k = static_cast<std::size_t>(p * c + j);
                    const double g = self.grad[k];
                    if (dgamma) (*dgamma)[j] += g * xhat[k];
                    if (dbeta) (*dbeta)[j] += g;
                    const double dxh = g * gd[j];
                    mean_d[j / per_group] += dxh;
                    mean_dx[j / per_group] += dxh * xhat[k];
                }
            }
            if (!wants_grad(x)) return;
            for (int g = 0; g < groups; ++g) {
                mean_d[g] /= count;
                mean_dx[g] /= count;
            }
            auto& dx = x.node().ensure_grad();
            for (std::int64_t p = 0; p < positions; ++p) {
                for (std::int64_t j = 0; j < c; ++j) {
                    const auto k = static_cast<std::size_t>(p * c + j);
                    const auto g = j / per_group;
                    const double dxh = self.grad[k] * gd[j];
                    dx[k] += inv_std[g] * (dxh - mean_d[g] - xhat[k] * mean_dx[g]);
                }
            }
        });
}

Tensor channel_affine(const Tensor& x, std::span<const double> scale, std::span<const double> shift) {
    const auto c = x.dim(-1);
    if (static_cast<std::int64_t>(scale.size()) != c || static_cast<std::int64_t>(shift.size()) != c) {
        throw ShapeError("channel_affine: factor count does not match " + shape_str(x.shape()));
    }
    Buffer sc(scale.begin(), scale.end());
    auto xd = x.data();
    Buffer out(xd.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto k = static_cast<std::size_t>(static_cast<std::int64_t>(i) % c);
        out[i] = xd[i] * sc[k] + shift[k];
    }
    return make_result(x.shape(), std::move(out), {x}, [x, c, sc = std::move(sc)](Node& self) {
        auto& g = x.node().ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * sc[static_cast<std::size_t>(static_cast<std::int64_t>(i) % c)];
        }
    });
}

Tensor gelu(const Tensor& x) {
    auto xd = x.data();
    Buffer out(xd.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = 0.5 * xd[i] * (1.0 + std::erf(xd[i] * kInvSqrt2));
    }
    return make_result(x.shape(), std::move(out), {x}, [x](Node& self) {
        auto xd = x.data();
        auto& g = x.node().ensure_grad();
        const double inv_sqrt_2pi = std::numbers::inv_sqrtpi * kInvSqrt2;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xd[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            g[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    auto xd = x.data();
    Buffer out(xd.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xd[i]));
    auto y = out;
    return make_result(x.shape(), std::move(out), {x}, [x, y = std::move(y)](Node& self) {
        auto& g = x.node().ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i] * (1.0 - y[i]);
    });
}

AttentionLayout full_attention_layout(std::int64_t tokens) {
    AttentionLayout layout;
    layout.windows.emplace_back(static_cast<std::size_t>(tokens));
    for (std::int64_t i = 0; i < tokens; ++i) layout.windows[0][i] = static_cast<std::int32_t>(i);
    return layout;
}

namespace {

// Softmax(Q K^T * scale) with optional label mask, row-wise.
MatR attention_probs(const Eigen::Ref<const MatR>& q, const Eigen::Ref<const MatR>& k,
                     double scale, const std::vector<std::int32_t>* window,
                     const std::vector<std::int32_t>& labels) {
    MatR s = (q * k.transpose()) * scale;
    const auto n = s.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!labels.empty()) {
            const auto li = labels[(*window)[i]];
            for (Eigen::Index j = 0; j < n; ++j) {
                if (labels[(*window)[j]] != li) s(i, j) = -std::numeric_limits<double>::infinity();
            }
        }
        const double m = s.row(i).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double e = std::exp(s(i, j) - m);
            s(i, j) = e;
            z += e;
        }
        s.row(i) /= z;
    }
    return s;
}

}  // namespace

Tensor attention(const Tensor& qkv, int heads, const AttentionLayout& layout) {
    require_rank(qkv, 2, "attention");
    const auto tokens = qkv.dim(0);
    if (qkv.dim(1) % 3 != 0) throw ShapeError("attention: packed width not divisible by 3");
    const auto c = qkv.dim(1) / 3;
    if (heads < 1 || c % heads != 0) {
        throw ShapeError("attention: " + std::to_string(c) + " channels, " +
                         std::to_string(heads) + " heads");
    }
    if (!layout.labels.empty() && static_cast<std::int64_t>(layout.labels.size()) != tokens) {
        throw ShapeError("attention: label count does not match token count");
    }
    const auto d = c / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Buffer out(static_cast<std::size_t>(tokens * c), 0.0);
    CMapR X(qkv.data().data(), tokens, 3 * c);
    for (const auto& window : layout.windows) {
        const auto n = static_cast<Eigen::Index>(window.size());
        MatR xw(n, 3 * c);
        for (Eigen::Index i = 0; i < n; ++i) xw.row(i) = X.row(window[i]);
        for (int h = 0; h < heads; ++h) {
            MatR p = attention_probs(xw.middleCols(h * d, d), xw.middleCols(c + h * d, d), scale,
                                     &window, layout.labels);
            MatR o = p * xw.middleCols(2 * c + h * d, d);
            for (Eigen::Index i = 0; i < n; ++i) {
                double* dst = out.data() + static_cast<std::int64_t>(window[i]) * c + h * d;
                for (std::int64_t j = 0; j < d; ++j) dst[j] = o(i, j);
            }
        }
    }
    return make_result(
        {tokens, c}, std::move(out), {qkv}, [qkv, heads, layout, tokens, c, d, scale](Node& self) {
            CMapR X(qkv.data().data(), tokens, 3 * c);
            CMapR dOut(self.grad.data(), tokens, c);
            MapR dX(qkv.node().ensure_grad().data(), tokens, 3 * c);
            for (const auto& window : layout.windows) {
                const auto n = static_cast<Eigen::Index>(window.size());
                MatR xw(n, 3 * c);
                MatR dow(n, c);
                for (Eigen::Index i = 0; i < n; ++i) {
                    xw.row(i) = X.row(window[i]);
                    dow.row(i) = dOut.row(window[i]);
                }
                MatR dxw = MatR::Zero(n, 3 * c);
                for (int h = 0; h < heads; ++h) {
                    auto q = xw.middleCols(h * d, d);
                    auto k = xw.middleCols(c + h * d, d);
                    auto v = xw.middleCols(2 * c + h * d, d);
                    auto dO = dow.middleCols(h * d, d);
                    MatR p = attention_probs(q, k, scale, &window, layout.labels);
                    dxw.middleCols(2 * c + h * d, d).noalias() += p.transpose() * dO;
                    MatR dp = dO * v.transpose();
                    Vec rowdot = (dp.array() * p.array()).rowwise().sum();
                    MatR ds = p.array() * (dp.colwise() - rowdot).array();
                    dxw.middleCols(h * d, d).noalias() += (ds * k) * scale;
                    dxw.middleCols(c + h * d, d).noalias() += (ds.transpose() * q) * scale;
                }
                for (Eigen::Index i = 0; i < n; ++i) dX.row(window[i]) += dxw.row(i);
            }
        });
}

namespace {

struct ConvGeometry {
    std::int64_t t, h, w, cin, cout;
    int kt, kh, kw;
    std::int64_t k() const { return static_cast<std::int64_t>(kt) * kh * kw * cin; }
};

// Column block for output frame `ft`: rows are (y, x), columns (dt, dy, dx, cin).
void im2col_frame(const double* x, const ConvGeometry& g, std::int64_t ft, MatR& col) {
    col.setZero();
    const int pt = g.kt / 2, ph = g.kh / 2, pw = g.kw / 2;
    for (std::int64_t y = 0; y < g.h; ++y) {
        for (std::int64_t xx = 0; xx < g.w; ++xx) {
            double* row = col.data() + (y * g.w + xx) * g.k();
            std::int64_t off = 0;
            for (int dt = 0; dt < g.kt; ++dt) {
                const auto st = ft + dt - pt;
                for (int dy = 0; dy < g.kh; ++dy) {
                    const auto sy = y + dy - ph;
                    for (int dx = 0; dx < g.kw; ++dx, off += g.cin) {
                        const auto sx = xx + dx - pw;
                        if (st < 0 || st >= g.t || sy < 0 || sy >= g.h || sx < 0 || sx >= g.w) {
                            continue;
                        }
                        const double* src = x + ((st * g.h + sy) * g.w + sx) * g.cin;
                        std::copy(src, src + g.cin, row + off);
                    }
                }
            }
        }
    }
}

void col2im_frame(const MatR& dcol, const ConvGeometry& g, std::int64_t ft, double* dx) {
    const int pt = g.kt / 2, ph = g.kh / 2, pw = g.kw / 2;
    for (std::int64_t y = 0; y < g.h; ++y) {
        for (std::int64_t xx = 0; xx < g.w; ++xx) {
            const double* row = dcol.data() + (y * g.w + xx) * g.k();
            std::int64_t off = 0;
            for (int dt = 0; dt < g.kt; ++dt) {
                const auto st = ft + dt - pt;
                for (int dy = 0; dy < g.kh; ++dy) {
                    const auto sy = y + dy - ph;
                    for (int dxk = 0; dxk < g.kw; ++dxk, off += g.cin) {
                        const auto sx = xx + dxk - pw;
                        if (st < 0 || st >= g.t || sy < 0 || sy >= g.h || sx < 0 || sx >= g.w) {
                            continue;
                        }
                        double* dst = dx + ((st * g.h + sy) * g.w + sx) * g.cin;
                        for (std::int64_t ci = 0; ci < g.cin; ++ci) dst[ci] += row[off + ci];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, int kt, int kh, int kw) {
    require_rank(x, 4, "conv3d input");
    require_rank(weight, 2, "conv3d weight");
    if (kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 || kt < 1 || kh < 1 || kw < 1) {
        throw ShapeError("conv3d: kernel dims must be odd and positive");
    }
    ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(1), kt, kh, kw};
    if (weight.dim(0) != g.k()) {
        throw ShapeError("conv3d: weight " + shape_str(weight.shape()) + " for input " +
                         shape_str(x.shape()));
    }
    if (bias.defined() && bias.numel() != g.cout) throw ShapeError("conv3d: bias size");
    const auto plane = g.h * g.w;
    Buffer out(static_cast<std::size_t>(g.t * plane * g.cout));
    MatR col(plane, g.k());
    CMapR W(weight.data().data(), g.k(), g.cout);
    for (std::int64_t ft = 0; ft < g.t; ++ft) {
        im2col_frame(x.data().data(), g, ft, col);
        MapR Y(out.data() + ft * plane * g.cout, plane, g.cout);
        Y.noalias() = col * W;
        if (bias.defined()) {
            Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), g.cout);
        }
    }
    return make_result({g.t, g.h, g.w, g.cout}, std::move(out), {x, weight, bias},
                       [x, weight, bias, g, plane](Node& self) {
                           MatR col(plane, g.k());
                           CMapR W(weight.data().data(), g.k(), g.cout);
                           for (std::int64_t ft = 0; ft < g.t; ++ft) {
                               CMapR dY(self.grad.data() + ft * plane * g.cout, plane, g.cout);
                               if (wants_grad(weight)) {
                                   im2col_frame(x.data().data(), g, ft, col);
                                   MapR dW(weight.node().ensure_grad().data(), g.k(), g.cout);
                                   dW.noalias() += col.transpose() * dY;
                               }
                               if (wants_grad(bias)) {
                                   Eigen::Map<Eigen::RowVectorXd> db(
                                       bias.node().ensure_grad().data(), g.cout);
                                   db += dY.colwise().sum();
                               }
                               if (wants_grad(x)) {
                                   MatR dcol = dY * W.transpose();
                                   col2im_frame(dcol, g, ft, x.node().ensure_grad().data());
                               }
                           }
                       });
}

namespace {

struct LerpTap {
    std::int64_t i0, i1;
    double w0, w1;
};

std::vector<LerpTap> lerp_taps(std::int64_t in, std::int64_t out) {
    std::vector<LerpTap> taps(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        if (src < 0.0) src = 0.0;
        auto i0 = static_cast<std::int64_t>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const auto i1 = i0 < in - 1 ? i0 + 1 : i0;
        const double l1 = src - static_cast<double>(i0);
        taps[o] = {i0, i1, 1.0 - l1, l1};
    }
    return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
    require_rank(x, 4, "resize_bilinear");
    if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: empty output");
    const auto t = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (h == out_h && w == out_w) return reshape(x, x.shape());
    auto ty = lerp_taps(h, out_h);
    auto tx = lerp_taps(w, out_w);
    Buffer out(static_cast<std::size_t>(t * out_h * out_w * c), 0.0);
    auto xd = x.data();
    for (std::int64_t f = 0; f < t; ++f) {
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
            const auto& a = ty[oy];
            for (std::int64_t ox = 0; ox < out_w; ++ox) {
                const auto& b = tx[ox];
                double* dst = out.data() + ((f * out_h + oy) * out_w + ox) * c;
                const double* p00 = xd.data() + ((f * h + a.i0) * w + b.i0) * c;
                const double* p01 = xd.data() + ((f * h + a.i0) * w + b.i1) * c;
                const double* p10 = xd.data() + ((f * h + a.i1) * w + b.i0) * c;
                const double* p11 = xd.data() + ((f * h + a.i1) * w + b.i1) * c;
                for (std::int64_t k = 0; k < c; ++k) {
                    dst[k] = a.w0 * (b.w0 * p00[k] + b.w1 * p01[k]) +
                             a.w1 * (b.w0 * p10[k] + b.w1 * p11[k]);
                }
            }
        }
    }
    return make_result({t, out_h, out_w, c}, std::move(out), {x},
                       [x, ty = std::move(ty), tx = std::move(tx), t, h, w, c, out_h,
                        out_w](Node& self) {
                           auto& dx = x.node().ensure_grad();
                           for (std::int64_t f = 0; f < t; ++f) {
                               for (std::int64_t oy = 0; oy < out_h; ++oy) {
                                   const auto& a = ty[oy];
                                   for (std::int64_t ox = 0; ox < out_w; ++ox) {
                                       const auto& b = tx[ox];
                                       const double* g =
                                           self.grad.data() + ((f * out_h + oy) * out_w + ox) * c;
                                       double* p00 = dx.data() + ((f * h + a.i0) * w + b.i0) * c;
                                       double* p01 = dx.data() + ((f * h + a.i0) * w + b.i1) * c;
                                       double* p10 = dx.data() + ((f * h + a.i1) * w + b.i0) * c;
                                       double* p11 = dx.data() + ((f * h + a.i1) * w + b.i1) * c;
                                       for (std::int64_t k = 0; k < c; ++k) {
                                           p00[k] += a.w0 * b.w0 * g[k];
                                           p01[k] += a.w0 * b.w1 * g[k];
                                           p10[k] += a.w1 * b.w0 * g[k];
                                           p11[k] += a.w1 * b.w1 * g[k];
                                       }
                                   }
                               }
                           }
                       });
}

Tensor select_frames(const Tensor& x, std::span<const std::int64_t> indices) {
    if (x.rank() < 1) throw ShapeError("select_frames on scalar");
    const auto t = x.dim(0);
    const auto slice = t == 0 ? 0 : x.numel() / t;
    std::vector<std::int64_t> idx(indices.begin(), indices.end());
    for (auto i : idx) {
        if (i < 0 || i >= t) throw ShapeError("select_frames: index out of range");
    }
    Shape shape = x.shape();
    shape[0] = static_cast<std::int64_t>(idx.size());
    Buffer out(static_cast<std::size_t>(shape[0] * slice));
    auto xd = x.data();
    for (std::size_t j = 0; j < idx.size(); ++j) {
        std::copy_n(xd.data() + idx[j] * slice, slice, out.data() + j * slice);
    }
    return make_result(std::move(shape), std::move(out), {x},
                       [x, idx = std::move(idx), slice](Node& self) {
                           auto& dx = x.node().ensure_grad();
                           for (std::size_t j = 0; j < idx.size(); ++j) {
                               const double* g = self.grad.data() + j * slice;
                               double* dst = dx.data() + idx[j] * slice;
                               for (std::int64_t k = 0; k < slice; ++k) dst[k] += g[k];
                           }
                       });
}

Tensor temporal_attention_pool(const Tensor& x, const Tensor& query) {
    require_rank(x, 4, "temporal_attention_pool");
    const auto t = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (query.numel() != c) throw ShapeError("temporal_attention_pool: query size");
    const auto locs = h * w;
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    auto xd = x.data();
    auto qd = query.data();
    Buffer weights(static_cast<std::size_t>(t * locs));
    Buffer out(static_cast<std::size_t>(locs * c), 0.0);
    Buffer s(static_cast<std::size_t>(t));
    for (std::int64_t l = 0; l < locs; ++l) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::int64_t f = 0; f < t; ++f) {
            const double* v = xd.data() + (f * locs + l) * c;
            double dot = 0.0;
            for (std::int64_t k = 0; k < c; ++k) dot += qd[k] * v[k];
            s[f] = dot * scale;
            m = std::max(m, s[f]);
        }
        double z = 0.0;
        for (std::int64_t f = 0; f < t; ++f) {
            s[f] = std::exp(s[f] - m);
            z += s[f];
        }
        for (std::int64_t f = 0; f < t; ++f) {
            const double a = s[f] / z;
            weights[f * locs + l] = a;
            const double* v = xd.data() + (f * locs + l) * c;
            double* dst = out.data() + l * c;
            for (std::int64_t k = 0; k < c; ++k) dst[k] += a * v[k];
        }
    }
    return make_result(
        {1, h, w, c}, std::move(out), {x, query},
        [x, query, weights = std::move(weights), t, locs, c, scale](Node& self) {
            auto xd = x.data();
            auto qd = query.data();
            Buffer* dx = wants_grad(x) ? &x.node().ensure_grad() : nullptr;
            Buffer* dq = wants_grad(query) ? &query.node().ensure_grad() : nullptr;
            Buffer da(static_cast<std::size_t>(t));
            for (std::int64_t l = 0; l < locs; ++l) {
                const double* g = self.grad.data() + l * c;
                double avg = 0.0;
                for (std::int64_t f = 0; f < t; ++f) {
                    const double* v = xd.data() + (f * locs + l) * c;
                    double dot = 0.0;
                    for (std::int64_t k = 0; k < c; ++k) dot += g[k] * v[k];
                    da[f] = dot;
                    avg += weights[f * locs + l] * dot;
                }
                for (std::int64_t f = 0; f < t; ++f) {
                    const double a = weights[f * locs + l];
                    const double ds = a * (da[f] - avg) * scale;
                    const auto base = (f * locs + l) * c;
                    const double* v = xd.data() + base;
                    if (dq) {
                        for (std::int64_t k = 0; k < c; ++k) (*dq)[k] += ds * v[k];
                    }
                    if (dx) {
                        for (std::int64_t k = 0; k < c; ++k) (*dx)[base + k] += a * g[k] + ds * qd[k];
                    }
                }
            }
        });
}

Tensor temporal_mean(const Tensor& x) {
    require_rank(x, 4, "temporal_mean");
    const auto t = x.dim(0);
    const auto slice = x.numel() / t;
    Buffer out(static_cast<std::size_t>(slice), 0.0);
    auto xd = x.data();
    for (std::int64_t f = 0; f < t; ++f) {
        for (std::int64_t k = 0; k < slice; ++k) out[k] += xd[f * slice + k];
    }
    const double inv = 1.0 / static_cast<double>(t);
    for (auto& v : out) v *= inv;
    return make_result({1, x.dim(1), x.dim(2), x.dim(3)}, std::move(out), {x},
                       [x, t, slice, inv](Node& self) {
                           auto& dx = x.node().ensure_grad();
                           for (std::int64_t f = 0; f < t; ++f) {
                               for (std::int64_t k = 0; k < slice; ++k) {
                                   dx[f * slice + k] += inv * self.grad[k];
                               }
                           }
                       });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_last: nothing to concatenate");
    Shape lead = parts[0].shape();
    lead.pop_back();
    std::int64_t total = 0;
    std::vector<std::int64_t> widths;
    for (const auto& p : parts) {
        Shape l = p.shape();
        widths.push_back(l.back());
        l.pop_back();
        if (l != lead) throw ShapeError("concat_last: leading dims disagree");
        total += widths.back();
    }
    const auto rows = numel_of(lead);
    Buffer out(static_cast<std::size_t>(rows * total));
    std::int64_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        auto pd = parts[i].data();
        for (std::int64_t r = 0; r < rows; ++r) {
            std::copy_n(pd.data() + r * widths[i], widths[i], out.data() + r * total + off);
        }
        off += widths[i];
    }
    Shape shape = lead;
    shape.push_back(total);
    return make_result(std::move(shape), std::move(out), parts,
                       [parts, widths, rows, total](Node& self) {
                           std::int64_t off = 0;
                           for (std::size_t i = 0; i < parts.size(); ++i) {
                               if (wants_grad(parts[i])) {
                                   auto& g = parts[i].node().ensure_grad();
                                   for (std::int64_t r = 0; r < rows; ++r) {
                                       for (std::int64_t k = 0; k < widths[i]; ++k) {
                                           g[r * widths[i] + k] += self.grad[r * total + off + k];
                                       }
                                   }
                               }
                               off += widths[i];
                           }
                       });
}

Tensor add_positional(const Tensor& x, const Tensor& spatial, const Tensor& temporal,
                      std::int64_t frames) {
    require_rank(x, 2, "add_positional");
    const auto c = x.dim(1);
    const auto s = spatial.dim(0);
    if (spatial.dim(1) != c || temporal.dim(1) != c) throw ShapeError("add_positional: width");
    if (frames * s != x.dim(0)) {
        throw ShapeError("add_positional: " + shape_str(x.shape()) + " is not " +
                         std::to_string(frames) + " frames of " + std::to_string(s) + " tokens");
    }
    if (frames > temporal.dim(0)) {
        throw ShapeError("add_positional: " + std::to_string(frames) +
                         " frames exceed temporal table of " + std::to_string(temporal.dim(0)));
    }
    Buffer out(x.data().begin(), x.data().end());
    auto sd = spatial.data();
    auto td = temporal.data();
    for (std::int64_t f = 0; f < frames; ++f) {
        for (std::int64_t j = 0; j < s; ++j) {
            double* row = out.data() + (f * s + j) * c;
            for (std::int64_t k = 0; k < c; ++k) row[k] += sd[j * c + k] + td[f * c + k];
        }
    }
    return make_result(x.shape(), std::move(out), {x, spatial, temporal},
                       [x, spatial, temporal, frames, s, c](Node& self) {
                           if (wants_grad(x)) {
                               auto& g = x.node().ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                           }
                           Buffer* ds =
                               wants_grad(spatial) ? &spatial.node().ensure_grad() : nullptr;
                           Buffer* dt =
                               wants_grad(temporal) ? &temporal.node().ensure_grad() : nullptr;
                           for (std::int64_t f = 0; f < frames; ++f) {
                               for (std::int64_t j = 0; j < s; ++j) {
                                   const double* g = self.grad.data() + (f * s + j) * c;
                                   for (std::int64_t k = 0; k < c; ++k) {
                                       if (ds) (*ds)[j * c + k] += g[k];
                                       if (dt) (*dt)[f * c + k] += g[k];
                                   }
                               }
                           }
                       });
}

Tensor patchify(const Tensor& clip, int patch) {
    require_rank(clip, 4, "patchify");
    const auto t = clip.dim(0), h = clip.dim(1), w = clip.dim(2), c = clip.dim(3);
    if (patch < 1 || h % patch != 0 || w % patch != 0) {
        throw ShapeError("patchify: frame " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by patch size " + std::to_string(patch));
    }
    const auto gh = h / patch, gw = w / patch;
    const auto width = static_cast<std::int64_t>(patch) * patch * c;
    // source offset for every output element
    std::vector<std::int64_t> src(static_cast<std::size_t>(clip.numel()));
    std::int64_t o = 0;
    for (std::int64_t f = 0; f < t; ++f) {
        for (std::int64_t py = 0; py < gh; ++py) {
            for (std::int64_t px = 0; px < gw; ++px) {
                for (std::int64_t y = 0; y < patch; ++y) {
                    for (std::int64_t xx = 0; xx < patch; ++xx) {
                        const auto base = ((f * h + py * patch + y) * w + px * patch + xx) * c;
                        for (std::int64_t k = 0; k < c; ++k) src[o++] = base + k;
                    }
                }
            }
        }
    }
    auto cd = clip.data();
    Buffer out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = cd[src[i]];
    return make_result({t * gh * gw, width}, std::move(out), {clip},
                       [clip, src = std::move(src)](Node& self) {
                           auto& g = clip.node().ensure_grad();
                           for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
                       });
}

std::vector<std::int64_t> last_aligned_indices(std::int64_t t_in, std::int64_t t_out) {
    if (t_in < 1 || t_out < 1) throw ShapeError("last_aligned_indices: empty axis");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(t_out));
    for (std::int64_t j = 0; j < t_out; ++j) {
        idx[j] = ((j + 1) * t_in + t_out - 1) / t_out - 1;
    }
    return idx;
}

}  // namespace salfom::ops
