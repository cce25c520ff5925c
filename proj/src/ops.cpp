#include "exprfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "exprfuse/errors.hpp"
#include "exprfuse/kernels.hpp"

namespace exprfuse {

namespace {

Tape& tape_of(std::initializer_list<Var> vars) {
    Tape* tape = nullptr;
    for (const Var& v : vars) {
        if (!v.valid()) continue;
        if (tape && &v.tape() != tape) throw ContractError("operands recorded on different tapes");
        tape = &v.tape();
    }
    if (!tape) throw ContractError("operation on an empty variable");
    return *tape;
}

std::size_t normalize_axis(int axis, std::size_t rank) {
    const int r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    }
    return static_cast<std::size_t>(a);
}

void require_same_shape(const char* op, Var a, Var b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                             " differ");
    }
}

void add_into(std::span<double> dst, std::span<const double> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& tape = tape_of({a, b});
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
        throw DimensionError("matmul: cannot multiply " + to_string(as) + " by " + to_string(bs));
    }
    const kernels::GemmDims d{as[0], bs[1], as[1]};
    std::vector<double> out(d.m * d.n, 0.0);
    kernels::gemm_nn(d, a.value(), b.value(), out);
    return tape.record("matmul", {d.m, d.n}, std::move(out), {a, b}, [a, b, d](Tape& t, std::span<const double> g, std::span<const double>) {
        if (t.needs_grad(a)) kernels::gemm_nt({d.m, d.k, d.n}, g, b.value(), t.grad_of(a));
        if (t.needs_grad(b)) kernels::gemm_tn({d.k, d.n, d.m}, a.value(), g, t.grad_of(b));
    });
}

Var linear(Var x, Var w, Var bias) {
    Tape& tape = tape_of({x, w, bias});
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.empty() || ws.size() != 2 || xs.back() != ws[0]) {
        throw DimensionError("linear: input " + to_string(xs) + " incompatible with weight " + to_string(ws));
    }
    const std::size_t in = ws[0];
    const std::size_t out_dim = ws[1];
    const std::size_t rows = x.size() / in;
    if (bias.valid() && bias.shape() != Shape{out_dim}) {
        throw DimensionError("linear: bias " + to_string(bias.shape()) + " does not match output width " +
                             std::to_string(out_dim));
    }
    std::vector<double> out(rows * out_dim, 0.0);
    if (bias.valid()) {
        auto bv = bias.value();
        for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(r * out_dim));
    }
    kernels::gemm_nn({rows, out_dim, in}, x.value(), w.value(), out);

    Shape shape = xs;
    shape.back() = out_dim;
    std::vector<Var> inputs{x, w};
    if (bias.valid()) inputs.push_back(bias);
    return tape.record("linear", std::move(shape), std::move(out), inputs,
                       [x, w, bias, rows, in, out_dim](Tape& t, std::span<const double> g, std::span<const double>) {
                           if (t.needs_grad(x)) kernels::gemm_nt({rows, in, out_dim}, g, w.value(), t.grad_of(x));
                           if (t.needs_grad(w)) kernels::gemm_tn({in, out_dim, rows}, x.value(), g, t.grad_of(w));
                           if (bias.valid() && t.needs_grad(bias)) {
                               auto gb = t.grad_of(bias);
                               for (std::size_t r = 0; r < rows; ++r) {
                                   for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
                               }
                           }
                       });
}

Var batched_matmul(Var a, Var b, bool transpose_b) {
    Tape& tape = tape_of({a, b});
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0]) {
        throw DimensionError("batched_matmul: cannot multiply " + to_string(as) + " by " + to_string(bs));
    }
    const std::size_t batch = as[0];
    const std::size_t m = as[1];
    const std::size_t k = as[2];
    const std::size_t n = transpose_b ? bs[1] : bs[2];
    if ((transpose_b ? bs[2] : bs[1]) != k) {
        throw DimensionError("batched_matmul: inner dimensions of " + to_string(as) + " and " + to_string(bs) +
                             (transpose_b ? " (transposed)" : "") + " differ");
    }
    std::vector<double> out(batch * m * n, 0.0);
    auto av = a.value();
    auto bv = b.value();
    const std::size_t a_step = m * k;
    const std::size_t b_step = k * n;
    const std::size_t c_step = m * n;
    for (std::size_t i = 0; i < batch; ++i) {
        auto ab = av.subspan(i * a_step, a_step);
        auto bb = bv.subspan(i * b_step, b_step);
        std::span<double> cb(out.data() + i * c_step, c_step);
        if (transpose_b) {
            kernels::gemm_nt({m, n, k}, ab, bb, cb);
        } else {
            kernels::gemm_nn({m, n, k}, ab, bb, cb);
        }
    }
    return tape.record(
        "batched_matmul", {batch, m, n}, std::move(out), {a, b},
        [a, b, batch, m, n, k, transpose_b, a_step, b_step, c_step](Tape& t, std::span<const double> g, std::span<const double>) {
            const bool ga = t.needs_grad(a);
            const bool gb = t.needs_grad(b);
            std::span<double> da = ga ? t.grad_of(a) : std::span<double>{};
            std::span<double> db = gb ? t.grad_of(b) : std::span<double>{};
            auto av = a.value();
            auto bv = b.value();
            for (std::size_t i = 0; i < batch; ++i) {
                auto gc = g.subspan(i * c_step, c_step);
                auto ab = av.subspan(i * a_step, a_step);
                auto bb = bv.subspan(i * b_step, b_step);
                if (transpose_b) {
                    // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                    if (ga) kernels::gemm_nn({m, k, n}, gc, bb, da.subspan(i * a_step, a_step));
                    if (gb) kernels::gemm_tn({n, k, m}, gc, ab, db.subspan(i * b_step, b_step));
                } else {
                    if (ga) kernels::gemm_nt({m, k, n}, gc, bb, da.subspan(i * a_step, a_step));
                    if (gb) kernels::gemm_tn({k, n, m}, ab, gc, db.subspan(i * b_step, b_step));
                }
            }
        });
}

Var add(Var a, Var b) {
    Tape& tape = tape_of({a, b});
    require_same_shape("add", a, b);
    auto av = a.value();
    auto bv = b.value();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return tape.record("add", a.shape(), std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g, std::span<const double>) {
        if (t.needs_grad(a)) add_into(t.grad_of(a), g);
        if (t.needs_grad(b)) add_into(t.grad_of(b), g);
    });
}

Var mul(Var a, Var b) {
    Tape& tape = tape_of({a, b});
    require_same_shape("mul", a, b);
    auto av = a.value();
    auto bv = b.value();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return tape.record("mul", a.shape(), std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g, std::span<const double>) {
        auto av = a.value();
        auto bv = b.value();
        if (t.needs_grad(a)) {
            auto da = t.grad_of(a);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
        }
        if (t.needs_grad(b)) {
            auto db = t.grad_of(b);
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
        }
    });
}

Var scale(Var x, double factor) {
    Tape& tape = tape_of({x});
    auto xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
    return tape.record("scale", x.shape(), std::move(out), {x}, [x, factor](Tape& t, std::span<const double> g, std::span<const double>) {
        auto dx = t.grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * factor;
    });
}

Var relu(Var x) {
    Tape& tape = tape_of({x});
    auto xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return tape.record("relu", x.shape(), std::move(out), {x}, [x](Tape& t, std::span<const double> g, std::span<const double>) {
        auto xv = x.value();
        auto dx = t.grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (xv[i] > 0.0) dx[i] += g[i];
        }
    });
}

Var sum(Var x) {
    Tape& tape = tape_of({x});
    double total = 0.0;
    for (double v : x.value()) total += v;
    return tape.record("sum", {1}, {total}, {x}, [x](Tape& t, std::span<const double> g, std::span<const double>) {
        auto dx = t.grad_of(x);
        for (double& d : dx) d += g[0];
    });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var softmax(Var x, int axis) {
    Tape& tape = tape_of({x});
    const Shape& xs = x.shape();
    const std::size_t ax = normalize_axis(axis, xs.size());
    const std::size_t len = xs[ax];
    std::size_t outer = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= xs[i];
    std::size_t inner = 1;
    for (std::size_t i = ax + 1; i < xs.size(); ++i) inner *= xs[i];

    auto xv = x.value();
    std::vector<double> out(xv.size());
    if (inner == 1) {
        kernels::softmax_rows(outer, len, xv, out);
    } else {
        std::vector<double> buf_in(len);
        std::vector<double> buf_out(len);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                for (std::size_t j = 0; j < len; ++j) buf_in[j] = xv[base + j * inner];
                kernels::serial::softmax_rows(1, len, buf_in, buf_out);
                for (std::size_t j = 0; j < len; ++j) out[base + j * inner] = buf_out[j];
            }
        }
    }
    return tape.record("softmax", xs, std::move(out), {x},
                       [x, outer, len, inner](Tape& t, std::span<const double> g, std::span<const double> yv) {
                           auto dx = t.grad_of(x);
                           for (std::size_t o = 0; o < outer; ++o) {
                               for (std::size_t in = 0; in < inner; ++in) {
                                   const std::size_t base = o * len * inner + in;
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * yv[base + j * inner];
                                   for (std::size_t j = 0; j < len; ++j) {
                                       const std::size_t idx = base + j * inner;
                                       dx[idx] += yv[idx] * (g[idx] - dot);
                                   }
                               }
                           }
                       });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Tape& tape = tape_of({x, gain, bias});
    if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
    const Shape& xs = x.shape();
    if (xs.empty()) throw DimensionError("layer_norm: scalar input");
    const std::size_t width = xs.back();
    if (gain.shape() != Shape{width} || bias.shape() != Shape{width}) {
        throw DimensionError("layer_norm: gain " + to_string(gain.shape()) + " / bias " + to_string(bias.shape()) +
                             " do not match width " + std::to_string(width));
    }
    const std::size_t rows = x.size() / width;
    auto xv = x.value();
    auto gv = gain.value();
    auto bv = bias.value();
    auto normalized = std::make_shared<std::vector<double>>(xv.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(xv.size());
    const double inv_width = 1.0 / static_cast<double>(width);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * width;
        double mu = 0.0;
        for (std::size_t j = 0; j < width; ++j) mu += row[j];
        mu *= inv_width;
        double var = 0.0;
        for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
        var *= inv_width;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < width; ++j) {
            const double nh = (row[j] - mu) * is;
            (*normalized)[r * width + j] = nh;
            out[r * width + j] = nh * gv[j] + bv[j];
        }
    }
    return tape.record(
        "layer_norm", xs, std::move(out), {x, gain, bias},
        [x, gain, bias, normalized, inv_std, rows, width, inv_width](Tape& t, std::span<const double> g, std::span<const double>) {
            const auto& nh = *normalized;
            if (t.needs_grad(gain)) {
                auto dg = t.grad_of(gain);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < width; ++j) dg[j] += g[r * width + j] * nh[r * width + j];
                }
            }
            if (t.needs_grad(bias)) {
                auto db = t.grad_of(bias);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < width; ++j) db[j] += g[r * width + j];
                }
            }
            if (t.needs_grad(x)) {
                auto gv = gain.value();
                auto dx = t.grad_of(x);
                std::vector<double> dn(width);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dn = 0.0;
                    double mean_dn_n = 0.0;
                    for (std::size_t j = 0; j < width; ++j) {
                        dn[j] = g[r * width + j] * gv[j];
                        mean_dn += dn[j];
                        mean_dn_n += dn[j] * nh[r * width + j];
                    }
                    mean_dn *= inv_width;
                    mean_dn_n *= inv_width;
                    for (std::size_t j = 0; j < width; ++j) {
                        dx[r * width + j] += (*inv_std)[r] * (dn[j] - mean_dn - nh[r * width + j] * mean_dn_n);
                    }
                }
            }
        });
}

Var concat_last(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_last: no inputs");
    Tape& tape = parts[0].tape();
    const Shape& first = parts[0].shape();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (&p.tape() != &tape) throw ContractError("concat_last: operands recorded on different tapes");
        const Shape& s = p.shape();
        if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
            throw DimensionError("concat_last: leading dimensions of " + to_string(s) + " and " + to_string(first) +
                                 " differ");
        }
        widths.push_back(s.back());
        total += s.back();
    }
    const std::size_t rows = parts[0].size() / first.back();
    std::vector<double> out(rows * total);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        auto v = parts[i].value();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(v.data() + r * widths[i], widths[i], out.data() + r * total + offset);
        }
        offset += widths[i];
    }
    Shape shape = first;
    shape.back() = total;
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape.record("concat_last", std::move(shape), std::move(out), inputs,
                       [inputs, widths, rows, total](Tape& t, std::span<const double> g, std::span<const double>) {
                           std::size_t offset = 0;
                           for (std::size_t i = 0; i < inputs.size(); ++i) {
                               if (t.needs_grad(inputs[i])) {
                                   auto d = t.grad_of(inputs[i]);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       for (std::size_t j = 0; j < widths[i]; ++j) {
                                           d[r * widths[i] + j] += g[r * total + offset + j];
                                       }
                                   }
                               }
                               offset += widths[i];
                           }
                       });
}

Var slice_last(Var x, std::size_t offset, std::size_t width) {
    Tape& tape = tape_of({x});
    const Shape& xs = x.shape();
    if (xs.empty() || width == 0 || offset + width > xs.back()) {
        throw DimensionError("slice_last: columns [" + std::to_string(offset) + ", " + std::to_string(offset + width) +
                             ") out of range for " + to_string(xs));
    }
    const std::size_t full = xs.back();
    const std::size_t rows = x.size() / full;
    auto xv = x.value();
    std::vector<double> out(rows * width);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * full + offset, width, out.data() + r * width);
    Shape shape = xs;
    shape.back() = width;
    return tape.record("slice_last", std::move(shape), std::move(out), {x},
                       [x, rows, full, offset, width](Tape& t, std::span<const double> g, std::span<const double>) {
                           auto dx = t.grad_of(x);
                           for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t j = 0; j < width; ++j) dx[r * full + offset + j] += g[r * width + j];
                           }
                       });
}

Var reshape(Var x, Shape shape) {
    Tape& tape = tape_of({x});
    if (numel(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    auto xv = x.value();
    return tape.record("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                       [x](Tape& t, std::span<const double> g, std::span<const double>) { add_into(t.grad_of(x), g); });
}

Var dropout(Var x, double rate, bool training, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) return x;
    Tape& tape = tape_of({x});
    const double keep_scale = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<std::vector<double>>(x.size());
    for (double& m : *mask) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
    auto xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * (*mask)[i];
    return tape.record("dropout", x.shape(), std::move(out), {x}, [x, mask](Tape& t, std::span<const double> g, std::span<const double>) {
        auto dx = t.grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (*mask)[i];
    });
}

Var conv2d_same(Var x, Var w, Var bias, std::size_t kernel) {
    Tape& tape = tape_of({x, w, bias});
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw DimensionError("conv2d_same: expected NHWC input, got " + to_string(xs));
    if (kernel == 0 || kernel % 2 == 0) throw ConfigError("conv2d_same: kernel size must be odd");
    const std::size_t n = xs[0];
    const std::size_t h = xs[1];
    const std::size_t wd = xs[2];
    const std::size_t c = xs[3];
    const std::size_t patch = kernel * kernel * c;
    if (w.shape().size() != 2 || w.shape()[0] != patch) {
        throw DimensionError("conv2d_same: weight " + to_string(w.shape()) + " does not match patch size " +
                             std::to_string(patch));
    }
    const std::size_t f = w.shape()[1];
    if (bias.shape() != Shape{f}) throw DimensionError("conv2d_same: bias " + to_string(bias.shape()));
    const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
    const std::size_t pixels = n * h * wd;

    auto cols = std::make_shared<std::vector<double>>(pixels * patch, 0.0);
    auto xv = x.value();
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t xx = 0; xx < wd; ++xx) {
                double* row = cols->data() + ((b * h + y) * wd + xx) * patch;
                for (std::size_t ky = 0; ky < kernel; ++ky) {
                    const auto sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        const auto sx = static_cast<std::ptrdiff_t>(xx + kx) - pad;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(wd)) continue;
                        const double* src = xv.data() + ((b * h + static_cast<std::size_t>(sy)) * wd + static_cast<std::size_t>(sx)) * c;
                        std::copy_n(src, c, row + (ky * kernel + kx) * c);
                    }
                }
            }
        }
    }
    std::vector<double> out(pixels * f);
    auto bv = bias.value();
    for (std::size_t p = 0; p < pixels; ++p) std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(p * f));
    kernels::gemm_nn({pixels, f, patch}, *cols, w.value(), out);

    return tape.record(
        "conv2d_same", {n, h, wd, f}, std::move(out), {x, w, bias},
        [x, w, bias, cols, n, h, wd, c, f, kernel, pad, patch, pixels](Tape& t, std::span<const double> g, std::span<const double>) {
            if (t.needs_grad(w)) kernels::gemm_tn({patch, f, pixels}, *cols, g, t.grad_of(w));
            if (t.needs_grad(bias)) {
                auto db = t.grad_of(bias);
                for (std::size_t p = 0; p < pixels; ++p) {
                    for (std::size_t j = 0; j < f; ++j) db[j] += g[p * f + j];
                }
            }
            if (t.needs_grad(x)) {
                std::vector<double> dcols(pixels * patch, 0.0);
                kernels::gemm_nt({pixels, patch, f}, g, w.value(), dcols);
                auto dx = t.grad_of(x);
                for (std::size_t b = 0; b < n; ++b) {
                    for (std::size_t y = 0; y < h; ++y) {
                        for (std::size_t xx = 0; xx < wd; ++xx) {
                            const double* row = dcols.data() + ((b * h + y) * wd + xx) * patch;
                            for (std::size_t ky = 0; ky < kernel; ++ky) {
                                const auto sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
                                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t kx = 0; kx < kernel; ++kx) {
                                    const auto sx = static_cast<std::ptrdiff_t>(xx + kx) - pad;
                                    if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(wd)) continue;
                                    double* dst = dx.data() + ((b * h + static_cast<std::size_t>(sy)) * wd + static_cast<std::size_t>(sx)) * c;
                                    const double* src = row + (ky * kernel + kx) * c;
                                    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                                }
                            }
                        }
                    }
                }
            }
        });
}

Var max_pool(Var x, std::size_t size) {
    Tape& tape = tape_of({x});
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw DimensionError("max_pool: expected NHWC input, got " + to_string(xs));
    if (size == 0 || xs[1] % size != 0 || xs[2] % size != 0) {
        throw DimensionError("max_pool: window " + std::to_string(size) + " does not tile " + to_string(xs));
    }
    const std::size_t n = xs[0];
    const std::size_t h = xs[1];
    const std::size_t wd = xs[2];
    const std::size_t c = xs[3];
    const std::size_t oh = h / size;
    const std::size_t ow = wd / size;
    auto xv = x.value();
    std::vector<double> out(n * oh * ow * c);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    std::size_t best = ((b * h + y * size) * wd + xx * size) * c + ch;
                    for (std::size_t dy = 0; dy < size; ++dy) {
                        for (std::size_t dx = 0; dx < size; ++dx) {
                            const std::size_t idx = ((b * h + y * size + dy) * wd + xx * size + dx) * c + ch;
                            if (xv[idx] > xv[best]) best = idx;
                        }
                    }
                    const std::size_t o = ((b * oh + y) * ow + xx) * c + ch;
                    out[o] = xv[best];
                    (*argmax)[o] = best;
                }
            }
        }
    }
    return tape.record("max_pool", {n, oh, ow, c}, std::move(out), {x}, [x, argmax](Tape& t, std::span<const double> g, std::span<const double>) {
        auto dx = t.grad_of(x);
        for (std::size_t o = 0; o < g.size(); ++o) dx[(*argmax)[o]] += g[o];
    });
}

}  // namespace exprfuse
