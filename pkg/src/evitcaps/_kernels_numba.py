"""Numba-compiled 3D convolution kernels.

Same contracts as _kernels_numpy.  Loop nests are ordered so the innermost
index walks the contiguous W axis; with stride 1 LLVM vectorizes them.
Kernels are single-threaded on purpose: results must be bit-reproducible.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _forward(xp, w, stride, dilation, groups, out):
    c_out, do, ho, wo = out.shape
    cing = w.shape[1]
    k = w.shape[2]
    coutg = c_out // groups
    for go in range(groups):
        for oc in range(coutg):
            o = go * coutg + oc
            for ic in range(cing):
                c = go * cing + ic
                for kz in range(k):
                    for ky in range(k):
                        for kx in range(k):
                            wv = w[o, ic, kz, ky, kx]
                            kxd = kx * dilation
                            for od in range(do):
                                iz = od * stride + kz * dilation
                                for oh in range(ho):
                                    iy = oh * stride + ky * dilation
                                    for ow in range(wo):
                                        out[o, od, oh, ow] += wv * xp[c, iz, iy, ow * stride + kxd]


@njit(cache=True)
def _grad_input(gout, w, stride, dilation, groups, gxp):
    c_out, do, ho, wo = gout.shape
    cing = w.shape[1]
    k = w.shape[2]
    coutg = c_out // groups
    for go in range(groups):
        for oc in range(coutg):
            o = go * coutg + oc
            for ic in range(cing):
                c = go * cing + ic
                for kz in range(k):
                    for ky in range(k):
                        for kx in range(k):
                            wv = w[o, ic, kz, ky, kx]
                            kxd = kx * dilation
                            for od in range(do):
                                iz = od * stride + kz * dilation
                                for oh in range(ho):
                                    iy = oh * stride + ky * dilation
                                    for ow in range(wo):
                                        gxp[c, iz, iy, ow * stride + kxd] += wv * gout[o, od, oh, ow]


@njit(cache=True)
def _grad_weight(xp, gout, stride, dilation, groups, gw):
    c_out, do, ho, wo = gout.shape
    cing = gw.shape[1]
    k = gw.shape[2]
    coutg = c_out // groups
    for go in range(groups):
        for oc in range(coutg):
            o = go * coutg + oc
            for ic in range(cing):
                c = go * cing + ic
                for kz in range(k):
                    for ky in range(k):
                        for kx in range(k):
                            kxd = kx * dilation
                            acc = 0.0
                            for od in range(do):
                                iz = od * stride + kz * dilation
                                for oh in range(ho):
                                    iy = oh * stride + ky * dilation
                                    for ow in range(wo):
                                        acc += gout[o, od, oh, ow] * xp[c, iz, iy, ow * stride + kxd]
                            gw[o, ic, kz, ky, kx] = acc


def _pad(x, padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    p = padding
    return np.pad(x, ((0, 0), (p, p), (p, p), (p, p)))


def conv3d_forward(x, w, stride, dilation, padding, groups):
    xp = _pad(x, padding)
    k = w.shape[2]
    do = (xp.shape[1] - dilation * (k - 1) - 1) // stride + 1
    ho = (xp.shape[2] - dilation * (k - 1) - 1) // stride + 1
    wo = (xp.shape[3] - dilation * (k - 1) - 1) // stride + 1
    out = np.zeros((w.shape[0], do, ho, wo), dtype=x.dtype)
    _forward(xp, np.ascontiguousarray(w), stride, dilation, groups, out)
    return out


def conv3d_grad_input(gout, w, stride, dilation, padding, groups, in_shape):
    c_in, d, h, wdim = in_shape
    p = padding
    gxp = np.zeros((c_in, d + 2 * p, h + 2 * p, wdim + 2 * p), dtype=gout.dtype)
    _grad_input(np.ascontiguousarray(gout), np.ascontiguousarray(w),
                stride, dilation, groups, gxp)
    if p:
        gxp = np.ascontiguousarray(gxp[:, p:-p, p:-p, p:-p])
    return gxp


def conv3d_grad_weight(x, gout, stride, dilation, padding, groups, k):
    xp = _pad(x, padding)
    cing = x.shape[0] // groups
    gw = np.zeros((gout.shape[0], cing, k, k, k), dtype=x.dtype)
    _grad_weight(xp, np.ascontiguousarray(gout), stride, dilation, groups, gw)
    return gw
