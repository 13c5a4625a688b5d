#include <limits>

#include "dunet/kernels.hpp"

namespace dunet::kernels {

Shape conv2d_output_shape(const Shape& x, const Shape& w, Padding pad, int stride) {
    auto mismatch = [&](const std::string& why) {
        return ShapeError("conv2d: " + why + " (input " + x.str() + ", weight " + w.str() + ")");
    };
    if (stride < 1) {
        throw mismatch("stride must be >= 1");
    }
    if (x.c != w.c) {
        throw mismatch("input channels " + std::to_string(x.c) + " != weight in-channels " + std::to_string(w.c));
    }
    Shape out{x.n, w.n, 0, 0};
    if (pad == Padding::same) {
        if (w.h % 2 == 0 || w.w % 2 == 0) {
            throw mismatch("same padding needs odd kernel extents");
        }
        out.h = (x.h + stride - 1) / stride;
        out.w = (x.w + stride - 1) / stride;
    } else {
        if (w.h > x.h || w.w > x.w) {
            throw mismatch("kernel larger than input for valid padding");
        }
        out.h = (x.h - w.h) / stride + 1;
        out.w = (x.w - w.w) / stride + 1;
    }
    return out;
}

Shape pool2x2_output_shape(const Shape& x) {
    if (x.h % 2 != 0 || x.w % 2 != 0) {
        throw ShapeError("pool2d: 2x2/stride-2 pooling needs even height and width, got " + x.str());
    }
    return {x.n, x.c, x.h / 2, x.w / 2};
}

Shape upsample2x_output_shape(const Shape& x, const Shape& w) {
    if (w.n != x.c || w.h != 2 || w.w != 2) {
        throw ShapeError("upsample2x: weight must be " + std::to_string(x.c) + "xOx2x2 (input " + x.str() +
                         ", weight " + w.str() + ")");
    }
    return {x.n, w.c, x.h * 2, x.w * 2};
}

namespace ref {

namespace {
int same_pad(const Shape& w, Padding pad) { return pad == Padding::same ? w.h / 2 : 0; }
int same_pad_w(const Shape& w, Padding pad) { return pad == Padding::same ? w.w / 2 : 0; }
}  // namespace

template <typename T>
void conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const std::type_identity_t<BasicTensor<T>>* bias, Padding pad,
                    int stride, BasicTensor<T>& y) {
    const Shape os = conv2d_output_shape(x.shape(), w.shape(), pad, stride);
    if (y.shape() != os) {
        y = BasicTensor<T>(os);
    }
    const int ph = same_pad(w.shape(), pad);
    const int pw = same_pad_w(w.shape(), pad);
    for (int n = 0; n < os.n; ++n) {
        for (int o = 0; o < os.c; ++o) {
            for (int i = 0; i < os.h; ++i) {
                for (int j = 0; j < os.w; ++j) {
                    T acc = bias ? (*bias)[static_cast<std::size_t>(o)] : T(0);
                    for (int c = 0; c < x.c(); ++c) {
                        for (int u = 0; u < w.h(); ++u) {
                            for (int v = 0; v < w.w(); ++v) {
                                const int yy = i * stride + u - ph;
                                const int xx = j * stride + v - pw;
                                if (yy < 0 || yy >= x.h() || xx < 0 || xx >= x.w()) {
                                    continue;
                                }
                                acc += w(o, c, u, v) * x(n, c, yy, xx);
                            }
                        }
                    }
                    y(n, o, i, j) = acc;
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy, Padding pad,
                     int stride, BasicTensor<T>* dx, BasicTensor<T>* dw, BasicTensor<T>* db) {
    const Shape os = conv2d_output_shape(x.shape(), w.shape(), pad, stride);
    if (dy.shape() != os) {
        throw ShapeError("conv2d backward: output gradient " + dy.shape().str() + " != " + os.str());
    }
    const int ph = same_pad(w.shape(), pad);
    const int pw = same_pad_w(w.shape(), pad);
    for (int n = 0; n < os.n; ++n) {
        for (int o = 0; o < os.c; ++o) {
            for (int i = 0; i < os.h; ++i) {
                for (int j = 0; j < os.w; ++j) {
                    const T g = dy(n, o, i, j);
                    if (db) {
                        (*db)[static_cast<std::size_t>(o)] += g;
                    }
                    for (int c = 0; c < x.c(); ++c) {
                        for (int u = 0; u < w.h(); ++u) {
                            for (int v = 0; v < w.w(); ++v) {
                                const int yy = i * stride + u - ph;
                                const int xx = j * stride + v - pw;
                                if (yy < 0 || yy >= x.h() || xx < 0 || xx >= x.w()) {
                                    continue;
                                }
                                if (dw) {
                                    (*dw)(o, c, u, v) += g * x(n, c, yy, xx);
                                }
                                if (dx) {
                                    (*dx)(n, c, yy, xx) += g * w(o, c, u, v);
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
    argmax.assign(os.size(), 0);
    std::size_t k = 0;
    for (int n = 0; n < os.n; ++n) {
        for (int c = 0; c < os.c; ++c) {
            for (int i = 0; i < os.h; ++i) {
                for (int j = 0; j < os.w; ++j, ++k) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int32_t at = 0;
                    for (int u = 0; u < 2; ++u) {
                        for (int v = 0; v < 2; ++v) {
                            const T val = x(n, c, 2 * i + u, 2 * j + v);
                            if (val > best) {
                                best = val;
                                at = (2 * i + u) * x.w() + 2 * j + v;
                            }
                        }
                    }
                    y(n, c, i, j) = best;
                    argmax[k] = at;
                }
            }
        }
    }
}

template <typename T>
void avg_pool2x2_forward(const BasicTensor<T>& x, BasicTensor<T>& y) {
    const Shape os = pool2x2_output_shape(x.shape());
    if (y.shape() != os) {
        y = BasicTensor<T>(os);
    }
    for (int n = 0; n < os.n; ++n) {
        for (int c = 0; c < os.c; ++c) {
            for (int i = 0; i < os.h; ++i) {
                for (int j = 0; j < os.w; ++j) {
                    const T s = x(n, c, 2 * i, 2 * j) + x(n, c, 2 * i, 2 * j + 1) + x(n, c, 2 * i + 1, 2 * j) +
                                x(n, c, 2 * i + 1, 2 * j + 1);
                    y(n, c, i, j) = s * T(0.25);
                }
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
    for (int n = 0; n < os.n; ++n) {
        for (int o = 0; o < os.c; ++o) {
            for (int i = 0; i < os.h; ++i) {
                for (int j = 0; j < os.w; ++j) {
                    T acc = bias ? (*bias)[static_cast<std::size_t>(o)] : T(0);
                    for (int c = 0; c < x.c(); ++c) {
                        acc += x(n, c, i / 2, j / 2) * w(c, o, i % 2, j % 2);
                    }
                    y(n, o, i, j) = acc;
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
    for (int n = 0; n < os.n; ++n) {
        for (int o = 0; o < os.c; ++o) {
            for (int i = 0; i < os.h; ++i) {
                for (int j = 0; j < os.w; ++j) {
                    const T g = dy(n, o, i, j);
                    if (db) {
                        (*db)[static_cast<std::size_t>(o)] += g;
                    }
                    for (int c = 0; c < x.c(); ++c) {
                        if (dx) {
                            (*dx)(n, c, i / 2, j / 2) += g * w(c, o, i % 2, j % 2);
                        }
                        if (dw) {
                            (*dw)(c, o, i % 2, j % 2) += g * x(n, c, i / 2, j / 2);
                        }
                    }
                }
            }
        }
    }
}

#define DUNET_INSTANTIATE_REF(T)                                                                                  \
    template void conv2d_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*, Padding, \
                                    int, BasicTensor<T>&);                                                        \
    template void conv2d_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,         \
                                     Padding, int, BasicTensor<T>*, BasicTensor<T>*, BasicTensor<T>*);            \
    template void max_pool2x2_forward<T>(const BasicTensor<T>&, BasicTensor<T>&, std::vector<std::int32_t>&);     \
    template void avg_pool2x2_forward<T>(const BasicTensor<T>&, BasicTensor<T>&);                                 \
    template void upsample2x_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*,      \
                                        BasicTensor<T>&);                                                         \
    template void upsample2x_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
                                         BasicTensor<T>*, BasicTensor<T>*, BasicTensor<T>*);

DUNET_INSTANTIATE_REF(float)
DUNET_INSTANTIATE_REF(double)

}  // namespace ref
}  // namespace dunet::kernels
