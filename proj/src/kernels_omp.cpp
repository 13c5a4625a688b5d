#include <omp.h>

#include <algorithm>
#include <limits>

#include "dunet/kernels.hpp"

namespace dunet::kernels {

int thread_count() { return omp_get_max_threads(); }

void set_thread_count(int n) { omp_set_num_threads(std::max(1, n)); }

namespace {

// Fixed 8-lane partial sums: vectorizes without reassociating beyond a
// deterministic order.
template <typename T>
inline T dot(const T* __restrict a, const T* __restrict b, int len) {
    T s[8] = {};
    int k = 0;
    for (; k + 8 <= len; k += 8) {
        for (int l = 0; l < 8; ++l) {
            s[l] += a[k + l] * b[k + l];
        }
    }
    T r = ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
    for (; k < len; ++k) {
        r += a[k] * b[k];
    }
    return r;
}

template <typename T>
inline T sum(const T* __restrict a, int len) {
    T s[8] = {};
    int k = 0;
    for (; k + 8 <= len; k += 8) {
        for (int l = 0; l < 8; ++l) {
            s[l] += a[k + l];
        }
    }
    T r = ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
    for (; k < len; ++k) {
        r += a[k];
    }
    return r;
}

template <typename T>
inline void axpy(T alpha, const T* __restrict x, T* __restrict y, int len) {
    for (int k = 0; k < len; ++k) {
        y[k] += alpha * x[k];
    }
}

struct ConvGeom {
    int N, C, H, W;     // input
    int O, OH, OW;      // output
    int KH, KW, ph, pw;
    int stride;
};

template <typename T>
ConvGeom geometry(const BasicTensor<T>& x, const BasicTensor<T>& w, Padding pad, int stride) {
    const Shape os = conv2d_output_shape(x.shape(), w.shape(), pad, stride);
    return {x.n(), x.c(), x.h(), x.w(), os.c, os.h, os.w, w.h(), w.w(),
            pad == Padding::same ? w.h() / 2 : 0, pad == Padding::same ? w.w() / 2 : 0, stride};
}

// Columns j of an output row for which input column j + off lies inside [0, W).
inline void column_range(const ConvGeom& g, int off, int& j0, int& j1) {
    j0 = std::max(0, -off);
    j1 = std::min(g.OW, g.W - off);
}

}  // namespace

template <typename T>
void conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const std::type_identity_t<BasicTensor<T>>* bias, Padding pad,
                    int stride, BasicTensor<T>& y) {
    const ConvGeom g = geometry(x, w, pad, stride);
    const Shape os{g.N, g.O, g.OH, g.OW};
    if (y.shape() != os) {
        y = BasicTensor<T>(os);
    }
    const long tasks = static_cast<long>(g.N) * g.O;
#pragma omp parallel for schedule(static)
    for (long t = 0; t < tasks; ++t) {
        const int n = static_cast<int>(t / g.O);
        const int o = static_cast<int>(t % g.O);
        const T b = bias ? (*bias)[static_cast<std::size_t>(o)] : T(0);
        T* yp = y.plane(n, o);
        for (int i = 0; i < g.OH; ++i) {
            T* yrow = yp + static_cast<std::size_t>(i) * g.OW;
            std::fill(yrow, yrow + g.OW, b);
            for (int c = 0; c < g.C; ++c) {
                const T* xp = x.plane(n, c);
                const T* wk = &w(o, c, 0, 0);
                for (int u = 0; u < g.KH; ++u) {
                    const int yy = i * g.stride + u - g.ph;
                    if (yy < 0 || yy >= g.H) {
                        continue;
                    }
                    const T* xrow = xp + static_cast<std::size_t>(yy) * g.W;
                    for (int v = 0; v < g.KW; ++v) {
                        const T wv = wk[u * g.KW + v];
                        if (g.stride == 1) {
                            const int off = v - g.pw;
                            int j0, j1;
                            column_range(g, off, j0, j1);
                            if (j1 > j0) {
                                axpy(wv, xrow + j0 + off, yrow + j0, j1 - j0);
                            }
                        } else {
                            for (int j = 0; j < g.OW; ++j) {
                                const int xx = j * g.stride + v - g.pw;
                                if (xx >= 0 && xx < g.W) {
                                    yrow[j] += wv * xrow[xx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy, Padding pad,
                     int stride, BasicTensor<T>* dx, BasicTensor<T>* dw, BasicTensor<T>* db) {
    const ConvGeom g = geometry(x, w, pad, stride);
    if (dy.shape() != Shape{g.N, g.O, g.OH, g.OW}) {
        throw ShapeError("conv2d backward: output gradient " + dy.shape().str() + " does not match forward output");
    }
    if (dx) {
        const long tasks = static_cast<long>(g.N) * g.C;
#pragma omp parallel for schedule(static)
        for (long t = 0; t < tasks; ++t) {
            const int n = static_cast<int>(t / g.C);
            const int c = static_cast<int>(t % g.C);
            T* dxp = dx->plane(n, c);
            for (int i = 0; i < g.OH; ++i) {
                for (int o = 0; o < g.O; ++o) {
                    const T* dyrow = dy.plane(n, o) + static_cast<std::size_t>(i) * g.OW;
                    const T* wk = &w(o, c, 0, 0);
                    for (int u = 0; u < g.KH; ++u) {
                        const int yy = i * g.stride + u - g.ph;
                        if (yy < 0 || yy >= g.H) {
                            continue;
                        }
                        T* dxrow = dxp + static_cast<std::size_t>(yy) * g.W;
                        for (int v = 0; v < g.KW; ++v) {
                            const T wv = wk[u * g.KW + v];
                            if (g.stride == 1) {
                                const int off = v - g.pw;
                                int j0, j1;
                                column_range(g, off, j0, j1);
                                if (j1 > j0) {
                                    axpy(wv, dyrow + j0, dxrow + j0 + off, j1 - j0);
                                }
                            } else {
                                for (int j = 0; j < g.OW; ++j) {
                                    const int xx = j * g.stride + v - g.pw;
                                    if (xx >= 0 && xx < g.W) {
                                        dxrow[xx] += wv * dyrow[j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if (dw || db) {
#pragma omp parallel for schedule(static)
        for (int o = 0; o < g.O; ++o) {
            for (int n = 0; n < g.N; ++n) {
                const T* dyp = dy.plane(n, o);
                for (int i = 0; i < g.OH; ++i) {
                    const T* dyrow = dyp + static_cast<std::size_t>(i) * g.OW;
                    if (db) {
                        (*db)[static_cast<std::size_t>(o)] += sum(dyrow, g.OW);
                    }
                    if (!dw) {
                        continue;
                    }
                    for (int c = 0; c < g.C; ++c) {
                        const T* xp = x.plane(n, c);
                        T* dwk = &(*dw)(o, c, 0, 0);
                        for (int u = 0; u < g.KH; ++u) {
                            const int yy = i * g.stride + u - g.ph;
                            if (yy < 0 || yy >= g.H) {
                                continue;
                            }
                            const T* xrow = xp + static_cast<std::size_t>(yy) * g.W;
                            for (int v = 0; v < g.KW; ++v) {
                                if (g.stride == 1) {
                                    const int off = v - g.pw;
                                    int j0, j1;
                                    column_range(g, off, j0, j1);
                                    if (j1 > j0) {
                                        dwk[u * g.KW + v] += dot(dyrow + j0, xrow + j0 + off, j1 - j0);
                                    }
                                } else {
                                    T acc = 0;
                                    for (int j = 0; j < g.OW; ++j) {
                                        const int xx = j * g.stride + v - g.pw;
                                        if (xx >= 0 && xx < g.W) {
                                            acc += dyrow[j] * xrow[xx];
                                        }
                                    }
                                    dwk[u * g.KW + v] += acc;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void max_pool2x2_forward(const BasicTensor<T>& x, BasicTensor<T>& y, std::vector<std::int32_t>& argmax) {
    const Shape os = pool2x2_output_shape(x.shape());
    if (y.shape() != os) {
        y = BasicTensor<T>(os);
    }
    argmax.resize(os.size());
    const long planes = static_cast<long>(os.n) * os.c;
    const int W = x.w();
#pragma omp parallel for schedule(static)
    for (long p = 0; p < planes; ++p) {
        const T* xp = x.raw() + static_cast<std::size_t>(p) * x.shape().plane();
        T* yp = y.raw() + static_cast<std::size_t>(p) * os.plane();
        std::int32_t* ap = argmax.data() + static_cast<std::size_t>(p) * os.plane();
        for (int i = 0; i < os.h; ++i) {
            for (int j = 0; j < os.w; ++j) {
                const std::int32_t base = (2 * i) * W + 2 * j;
                const std::int32_t cand[4] = {base, base + 1, base + W, base + W + 1};
                std::int32_t at = cand[0];
                for (int k = 1; k < 4; ++k) {
                    if (xp[cand[k]] > xp[at]) {
                        at = cand[k];
                    }
                }
                yp[i * os.w + j] = xp[at];
                ap[i * os.w + j] = at;
            }
        }
    }
}

template <typename T>
void max_pool2x2_backward(const BasicTensor<T>& dy, const std::vector<std::int32_t>& argmax, BasicTensor<T>& dx) {
    const Shape os = pool2x2_output_shape(dx.shape());
    if (dy.shape() != os || argmax.size() != os.size()) {
        throw ShapeError("max_pool backward: gradient " + dy.shape().str() + " does not match pooled " + os.str());
    }
    const long planes = static_cast<long>(os.n) * os.c;
#pragma omp parallel for schedule(static)
    for (long p = 0; p < planes; ++p) {
        const T* dyp = dy.raw() + static_cast<std::size_t>(p) * os.plane();
        const std::int32_t* ap = argmax.data() + static_cast<std::size_t>(p) * os.plane();
        T* dxp = dx.raw() + static_cast<std::size_t>(p) * dx.shape().plane();
        for (std::size_t k = 0; k < os.plane(); ++k) {
            dxp[ap[k]] += dyp[k];
        }
    }
}

template <typename T>
void avg_pool2x2_forward(const BasicTensor<T>& x, BasicTensor<T>& y) {
    const Shape os = pool2x2_output_shape(x.shape());
    if (y.shape() != os) {
        y = BasicTensor<T>(os);
    }
    const long planes = static_cast<long>(os.n) * os.c;
    const int W = x.w();
#pragma omp parallel for schedule(static)
    for (long p = 0; p < planes; ++p) {
        const T* xp = x.raw() + static_cast<std::size_t>(p) * x.shape().plane();
        T* yp = y.raw() + static_cast<std::size_t>(p) * os.plane();
        for (int i = 0; i < os.h; ++i) {
            const T* r0 = xp + (2 * i) * W;
            const T* r1 = r0 + W;
            for (int j = 0; j < os.w; ++j) {
                yp[i * os.w + j] = (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * T(0.25);
            }
        }
    }
}

template <typename T>
void avg_pool2x2_backward(const BasicTensor<T>& dy, BasicTensor<T>& dx) {
    const Shape os = pool2x2_output_shape(dx.shape());
    if (dy.shape() != os) {
        throw ShapeError("avg_pool backward: gradient " + dy.shape().str() + " does not match pooled " + os.str());
    }
    const long planes = static_cast<long>(os.n) * os.c;
    const int W = dx.w();
#pragma omp parallel for schedule(static)
    for (long p = 0; p < planes; ++p) {
        const T* dyp = dy.raw() + static_cast<std::size_t>(p) * os.plane();
        T* dxp = dx.raw() + static_cast<std::size_t>(p) * dx.shape().plane();
        for (int i = 0; i < os.h; ++i) {
            T* r0 = dxp + (2 * i) * W;
            T* r1 = r0 + W;
            for (int j = 0; j < os.w; ++j) {
                const T g = dyp[i * os.w + j] * T(0.25);
                r0[2 * j] += g;
                r0[2 * j + 1] += g;
                r1[2 * j] += g;
                r1[2 * j + 1] += g;
            }
        }
    }
}

template <typename T>
void upsample2x_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const std::type_identity_t<BasicTensor<T>>* bias,
                        BasicTensor<T>& y) {
    const Shape os = upsample2x_output_shape(x.shape(), w.shape());
    if (y.shape() != os) {
        y = BasicTensor<T>(os);
    }
    const int C = x.c(), H = x.h(), W = x.w();
    const long tasks = static_cast<long>(os.n) * os.c;
#pragma omp parallel for schedule(static)
    for (long t = 0; t < tasks; ++t) {
        const int n = static_cast<int>(t / os.c);
        const int o = static_cast<int>(t % os.c);
        T* yp = y.plane(n, o);
        std::fill(yp, yp + os.plane(), bias ? (*bias)[static_cast<std::size_t>(o)] : T(0));
        for (int c = 0; c < C; ++c) {
            const T* xp = x.plane(n, c);
            for (int i = 0; i < H; ++i) {
                const T* xrow = xp + static_cast<std::size_t>(i) * W;
                for (int a = 0; a < 2; ++a) {
                    T* yrow = yp + static_cast<std::size_t>(2 * i + a) * os.w;
                    const T w0 = w(c, o, a, 0);
                    const T w1 = w(c, o, a, 1);
                    for (int j = 0; j < W; ++j) {
                        yrow[2 * j] += w0 * xrow[j];
                        yrow[2 * j + 1] += w1 * xrow[j];
                    }
                }
            }
        }
    }
}

template <typename T>
void upsample2x_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                         BasicTensor<T>* dx, BasicTensor<T>* dw, BasicTensor<T>* db) {
    const Shape os = upsample2x_output_shape(x.shape(), w.shape());
    if (dy.shape() != os) {
        throw ShapeError("upsample2x backward: output gradient " + dy.shape().str() + " != " + os.str());
    }
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w(), O = os.c;
    if (dx) {
        const long tasks = static_cast<long>(N) * C;
#pragma omp parallel for schedule(static)
        for (long t = 0; t < tasks; ++t) {
            const int n = static_cast<int>(t / C);
            const int c = static_cast<int>(t % C);
            T* dxp = dx->plane(n, c);
            for (int o = 0; o < O; ++o) {
                const T* dyp = dy.plane(n, o);
                for (int i = 0; i < H; ++i) {
                    T* dxrow = dxp + static_cast<std::size_t>(i) * W;
                    for (int a = 0; a < 2; ++a) {
                        const T* dyrow = dyp + static_cast<std::size_t>(2 * i + a) * os.w;
                        const T w0 = w(c, o, a, 0);
                        const T w1 = w(c, o, a, 1);
                        for (int j = 0; j < W; ++j) {
                            dxrow[j] += w0 * dyrow[2 * j] + w1 * dyrow[2 * j + 1];
                        }
                    }
                }
            }
        }
    }
    if (dw) {
#pragma omp parallel for schedule(static)
        for (int c = 0; c < C; ++c) {
            for (int o = 0; o < O; ++o) {
                T acc[4] = {};
                for (int n = 0; n < N; ++n) {
                    const T* xp = x.plane(n, c);
                    const T* dyp = dy.plane(n, o);
                    for (int i = 0; i < H; ++i) {
                        const T* xrow = xp + static_cast<std::size_t>(i) * W;
                        for (int a = 0; a < 2; ++a) {
                            const T* dyrow = dyp + static_cast<std::size_t>(2 * i + a) * os.w;
                            T s0 = 0, s1 = 0;
                            for (int j = 0; j < W; ++j) {
                                s0 += xrow[j] * dyrow[2 * j];
                                s1 += xrow[j] * dyrow[2 * j + 1];
                            }
                            acc[2 * a] += s0;
                            acc[2 * a + 1] += s1;
                        }
                    }
                }
                for (int k = 0; k < 4; ++k) {
                    (*dw)(c, o, k / 2, k % 2) += acc[k];
                }
            }
        }
    }
    if (db) {
#pragma omp parallel for schedule(static)
        for (int o = 0; o < O; ++o) {
            T acc = 0;
            for (int n = 0; n < N; ++n) {
                acc += sum(dy.plane(n, o), static_cast<int>(os.plane()));
            }
            (*db)[static_cast<std::size_t>(o)] += acc;
        }
    }
}

#define DUNET_INSTANTIATE_OMP(T)                                                                                  \
    template void conv2d_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*, Padding, \
                                    int, BasicTensor<T>&);                                                        \
    template void conv2d_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,         \
                                     Padding, int, BasicTensor<T>*, BasicTensor<T>*, BasicTensor<T>*);            \
    template void max_pool2x2_forward<T>(const BasicTensor<T>&, BasicTensor<T>&, std::vector<std::int32_t>&);     \
    template void max_pool2x2_backward<T>(const BasicTensor<T>&, const std::vector<std::int32_t>&,                \
                                          BasicTensor<T>&);                                                       \
    template void avg_pool2x2_forward<T>(const BasicTensor<T>&, BasicTensor<T>&);                                 \
    template void avg_pool2x2_backward<T>(const BasicTensor<T>&, BasicTensor<T>&);                                \
    template void upsample2x_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*,      \
                                        BasicTensor<T>&);                                                         \
    template void upsample2x_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
                                         BasicTensor<T>*, BasicTensor<T>*, BasicTensor<T>*);

DUNET_INSTANTIATE_OMP(float)
DUNET_INSTANTIATE_OMP(double)

}  // namespace dunet::kernels
