# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Direct-loop C kernels for convolution and bilinear resampling.

Mirrors the numpy lane in minet.backend bit-for-bit up to float summation
order; selected at import when built. Handles float32 and float64.
"""
import numpy as np
cimport numpy as cnp
cimport cython
from libc.math cimport floor

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _out_size(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride,
                                 Py_ssize_t padding, Py_ssize_t dilation) nogil:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


cdef inline Py_ssize_t _lo_ox(Py_ssize_t off, Py_ssize_t stride) nogil:
    # smallest ox with ox*stride + off >= 0
    if off >= 0:
        return 0
    return (-off + stride - 1) // stride


cdef inline Py_ssize_t _hi_ox(Py_ssize_t off, Py_ssize_t stride,
                              Py_ssize_t size, Py_ssize_t out_max) nogil:
    # one past the largest ox with ox*stride + off < size
    cdef Py_ssize_t hi = (size - 1 - off) // stride + 1
    if hi < 0:
        hi = 0
    return hi if hi < out_max else out_max


cdef void _conv_fwd(real[:, :, :, ::1] x, real[:, :, :, ::1] w, real[:, :, :, ::1] y,
                    Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t dilation,
                    Py_ssize_t groups) nogil:
    # accumulated kernel-tap by kernel-tap so the innermost loop runs
    # contiguously along the output row (vectorizable for stride 1)
    cdef Py_ssize_t n = x.shape[0], h = x.shape[2], wi = x.shape[3]
    cdef Py_ssize_t c_out = w.shape[0], cig = w.shape[1], k = w.shape[2]
    cdef Py_ssize_t oh = y.shape[2], ow = y.shape[3]
    cdef Py_ssize_t cog = c_out // groups
    cdef Py_ssize_t b, co, g, ci, cc, oy, ox, ky, kx, iy, xoff, lo, hi
    cdef real wv
    cdef real *yrow
    cdef real *xrow
    for b in range(n):
        for co in range(c_out):
            g = co // cog
            for ci in range(cig):
                cc = g * cig + ci
                for ky in range(k):
                    for kx in range(k):
                        wv = w[co, ci, ky, kx]
                        xoff = kx * dilation - padding
                        lo = _lo_ox(xoff, stride)
                        hi = _hi_ox(xoff, stride, wi, ow)
                        for oy in range(oh):
                            iy = oy * stride - padding + ky * dilation
                            if iy < 0 or iy >= h:
                                continue
                            yrow = &y[b, co, oy, 0]
                            xrow = &x[b, cc, iy, 0]
                            for ox in range(lo, hi):
                                yrow[ox] += wv * xrow[ox * stride + xoff]


cdef void _conv_bwd_in(real[:, :, :, ::1] dy, real[:, :, :, ::1] w, real[:, :, :, ::1] dx,
                       Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t dilation,
                       Py_ssize_t groups) nogil:
    cdef Py_ssize_t n = dx.shape[0], h = dx.shape[2], wi = dx.shape[3]
    cdef Py_ssize_t c_out = w.shape[0], cig = w.shape[1], k = w.shape[2]
    cdef Py_ssize_t oh = dy.shape[2], ow = dy.shape[3]
    cdef Py_ssize_t cog = c_out // groups
    cdef Py_ssize_t b, co, g, ci, cc, oy, ox, ky, kx, iy, xoff, lo, hi
    cdef real wv
    cdef real *dyrow
    cdef real *dxrow
    for b in range(n):
        for co in range(c_out):
            g = co // cog
            for ci in range(cig):
                cc = g * cig + ci
                for ky in range(k):
                    for kx in range(k):
                        wv = w[co, ci, ky, kx]
                        xoff = kx * dilation - padding
                        lo = _lo_ox(xoff, stride)
                        hi = _hi_ox(xoff, stride, wi, ow)
                        for oy in range(oh):
                            iy = oy * stride - padding + ky * dilation
                            if iy < 0 or iy >= h:
                                continue
                            dyrow = &dy[b, co, oy, 0]
                            dxrow = &dx[b, cc, iy, 0]
                            for ox in range(lo, hi):
                                dxrow[ox * stride + xoff] += wv * dyrow[ox]


cdef void _conv_bwd_w(real[:, :, :, ::1] x, real[:, :, :, ::1] dy, real[:, :, :, ::1] dw,
                      Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t dilation,
                      Py_ssize_t groups) nogil:
    cdef Py_ssize_t n = x.shape[0], h = x.shape[2], wi = x.shape[3]
    cdef Py_ssize_t c_out = dw.shape[0], cig = dw.shape[1], k = dw.shape[2]
    cdef Py_ssize_t oh = dy.shape[2], ow = dy.shape[3]
    cdef Py_ssize_t cog = c_out // groups
    cdef Py_ssize_t b, co, g, ci, cc, oy, ox, ky, kx, iy, xoff, lo, hi
    cdef real acc
    cdef real *dyrow
    cdef real *xrow
    for b in range(n):
        for co in range(c_out):
            g = co // cog
            for ci in range(cig):
                cc = g * cig + ci
                for ky in range(k):
                    for kx in range(k):
                        xoff = kx * dilation - padding
                        lo = _lo_ox(xoff, stride)
                        hi = _hi_ox(xoff, stride, wi, ow)
                        acc = 0
                        for oy in range(oh):
                            iy = oy * stride - padding + ky * dilation
                            if iy < 0 or iy >= h:
                                continue
                            dyrow = &dy[b, co, oy, 0]
                            xrow = &x[b, cc, iy, 0]
                            for ox in range(lo, hi):
                                acc += dyrow[ox] * xrow[ox * stride + xoff]
                        dw[co, ci, ky, kx] += acc


def conv2d_forward(x, w, bias, int stride, int padding, int dilation, int groups):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    cdef Py_ssize_t k = w.shape[2]
    cdef Py_ssize_t oh = _out_size(x.shape[2], k, stride, padding, dilation)
    cdef Py_ssize_t ow = _out_size(x.shape[3], k, stride, padding, dilation)
    y = np.zeros((x.shape[0], w.shape[0], oh, ow), dtype=x.dtype)
    if x.dtype == np.float32:
        _conv_fwd[cython.float](x, w, y, stride, padding, dilation, groups)
    else:
        _conv_fwd[cython.double](x, w, y, stride, padding, dilation, groups)
    if bias is not None:
        y += np.asarray(bias)[None, :, None, None]
    return y


def conv2d_backward_input(dy, w, Py_ssize_t n, Py_ssize_t h, Py_ssize_t wi,
                          int stride, int padding, int dilation, int groups):
    dy = np.ascontiguousarray(dy)
    w = np.ascontiguousarray(w)
    dx = np.zeros((n, w.shape[1] * groups, h, wi), dtype=dy.dtype)
    if dy.dtype == np.float32:
        _conv_bwd_in[cython.float](dy, w, dx, stride, padding, dilation, groups)
    else:
        _conv_bwd_in[cython.double](dy, w, dx, stride, padding, dilation, groups)
    return dx


def conv2d_backward_weight(x, dy, Py_ssize_t c_out, Py_ssize_t cig, Py_ssize_t k,
                           int stride, int padding, int dilation, int groups):
    x = np.ascontiguousarray(x)
    dy = np.ascontiguousarray(dy)
    dw = np.zeros((c_out, cig, k, k), dtype=x.dtype)
    if x.dtype == np.float32:
        _conv_bwd_w[cython.float](x, dy, dw, stride, padding, dilation, groups)
    else:
        _conv_bwd_w[cython.double](x, dy, dw, stride, padding, dilation, groups)
    return dw


cdef void _coords(Py_ssize_t in_size, Py_ssize_t out_size,
                  Py_ssize_t[::1] lo, Py_ssize_t[::1] hi, double[::1] frac) nogil:
    cdef double scale = <double>in_size / <double>out_size
    cdef double src
    cdef Py_ssize_t i
    for i in range(out_size):
        src = (i + 0.5) * scale - 0.5
        if src < 0:
            src = 0
        if src > in_size - 1:
            src = in_size - 1
        lo[i] = <Py_ssize_t>floor(src)
        hi[i] = lo[i] + 1 if lo[i] + 1 < in_size else in_size - 1
        frac[i] = src - lo[i]


cdef void _resize_fwd(real[:, :, :, ::1] x, real[:, :, :, ::1] y,
                      Py_ssize_t[::1] ylo, Py_ssize_t[::1] yhi, double[::1] fy,
                      Py_ssize_t[::1] xlo, Py_ssize_t[::1] xhi, double[::1] fx) nogil:
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t oh = y.shape[2], ow = y.shape[3]
    cdef Py_ssize_t b, ch, oy, ox
    cdef real top, bot, row_lo, row_hi
    for b in range(n):
        for ch in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    top = x[b, ch, ylo[oy], xlo[ox]]
                    bot = x[b, ch, yhi[oy], xlo[ox]]
                    row_lo = top + <real>fy[oy] * (bot - top)
                    top = x[b, ch, ylo[oy], xhi[ox]]
                    bot = x[b, ch, yhi[oy], xhi[ox]]
                    row_hi = top + <real>fy[oy] * (bot - top)
                    y[b, ch, oy, ox] = row_lo + <real>fx[ox] * (row_hi - row_lo)


cdef void _resize_bwd(real[:, :, :, ::1] dy, real[:, :, :, ::1] dx,
                      Py_ssize_t[::1] ylo, Py_ssize_t[::1] yhi, double[::1] fy,
                      Py_ssize_t[::1] xlo, Py_ssize_t[::1] xhi, double[::1] fx) nogil:
    cdef Py_ssize_t n = dy.shape[0], c = dy.shape[1]
    cdef Py_ssize_t oh = dy.shape[2], ow = dy.shape[3]
    cdef Py_ssize_t b, ch, oy, ox
    cdef real g, wy, wx
    for b in range(n):
        for ch in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    g = dy[b, ch, oy, ox]
                    wy = <real>fy[oy]
                    wx = <real>fx[ox]
                    dx[b, ch, ylo[oy], xlo[ox]] += g * (1 - wy) * (1 - wx)
                    dx[b, ch, yhi[oy], xlo[ox]] += g * wy * (1 - wx)
                    dx[b, ch, ylo[oy], xhi[ox]] += g * (1 - wy) * wx
                    dx[b, ch, yhi[oy], xhi[ox]] += g * wy * wx


def _grids(Py_ssize_t in_h, Py_ssize_t in_w, Py_ssize_t out_h, Py_ssize_t out_w):
    ylo = np.empty(out_h, dtype=np.intp)
    yhi = np.empty(out_h, dtype=np.intp)
    fy = np.empty(out_h, dtype=np.float64)
    xlo = np.empty(out_w, dtype=np.intp)
    xhi = np.empty(out_w, dtype=np.intp)
    fx = np.empty(out_w, dtype=np.float64)
    _coords(in_h, out_h, ylo, yhi, fy)
    _coords(in_w, out_w, xlo, xhi, fx)
    return ylo, yhi, fy, xlo, xhi, fx


def resize_bilinear_forward(x, Py_ssize_t out_h, Py_ssize_t out_w):
    x = np.ascontiguousarray(x)
    ylo, yhi, fy, xlo, xhi, fx = _grids(x.shape[2], x.shape[3], out_h, out_w)
    y = np.empty((x.shape[0], x.shape[1], out_h, out_w), dtype=x.dtype)
    if x.dtype == np.float32:
        _resize_fwd[cython.float](x, y, ylo, yhi, fy, xlo, xhi, fx)
    else:
        _resize_fwd[cython.double](x, y, ylo, yhi, fy, xlo, xhi, fx)
    return y


def resize_bilinear_backward(dy, Py_ssize_t in_h, Py_ssize_t in_w):
    dy = np.ascontiguousarray(dy)
    ylo, yhi, fy, xlo, xhi, fx = _grids(in_h, in_w, dy.shape[2], dy.shape[3])
    dx = np.zeros((dy.shape[0], dy.shape[1], in_h, in_w), dtype=dy.dtype)
    if dy.dtype == np.float32:
        _resize_bwd[cython.float](dy, dx, ylo, yhi, fy, xlo, xhi, fx)
    else:
        _resize_bwd[cython.double](dy, dx, ylo, yhi, fy, xlo, xhi, fx)
    return dx
