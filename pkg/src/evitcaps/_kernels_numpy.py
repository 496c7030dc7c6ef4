"""Pure-numpy 3D convolution kernels.

Each conv is decomposed into k^3 batched GEMMs (one per kernel tap), which
keeps memory flat and delegates the arithmetic to BLAS.  All functions take
and return plain ndarrays; padding is applied here, not by the caller.
"""

import numpy as np


def _pad(x, padding):
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (p, p), (p, p), (p, p)))


def conv3d_forward(x, w, stride, dilation, padding, groups):
    """Cross-correlation of x (C_in, D, H, W) with w (C_out, C_in/g, k, k, k)."""
    c_in = x.shape[0]
    c_out, cing, k = w.shape[0], w.shape[1], w.shape[2]
    xp = _pad(x, padding)
    dp, hp, wp = xp.shape[1:]
    do = (dp - dilation * (k - 1) - 1) // stride + 1
    ho = (hp - dilation * (k - 1) - 1) // stride + 1
    wo = (wp - dilation * (k - 1) - 1) // stride + 1
    g = groups
    coutg = c_out // g
    xg = xp.reshape(g, cing, dp, hp, wp)
    wg = w.reshape(g, coutg, cing, k, k, k)
    out = np.zeros((g, coutg, do * ho * wo), dtype=x.dtype)
    for kz in range(k):
        for ky in range(k):
            for kx in range(k):
                xs = xg[:, :,
                        kz * dilation: kz * dilation + stride * do: stride,
                        ky * dilation: ky * dilation + stride * ho: stride,
                        kx * dilation: kx * dilation + stride * wo: stride]
                out += np.matmul(wg[:, :, :, kz, ky, kx],
                                 xs.reshape(g, cing, -1))
    return out.reshape(c_out, do, ho, wo)


def conv3d_grad_input(gout, w, stride, dilation, padding, groups, in_shape):
    """Gradient w.r.t. the conv3d input; also the deconvolution forward."""
    c_in, d, h, wdim = in_shape
    c_out, cing, k = w.shape[0], w.shape[1], w.shape[2]
    g = groups
    coutg = c_out // g
    do, ho, wo = gout.shape[1:]
    p = padding
    dp, hp, wp = d + 2 * p, h + 2 * p, wdim + 2 * p
    gxp = np.zeros((g, cing, dp, hp, wp), dtype=gout.dtype)
    gg = gout.reshape(g, coutg, -1)
    wg = w.reshape(g, coutg, cing, k, k, k)
    for kz in range(k):
        for ky in range(k):
            for kx in range(k):
                contrib = np.matmul(wg[:, :, :, kz, ky, kx].swapaxes(1, 2), gg)
                gxp[:, :,
                    kz * dilation: kz * dilation + stride * do: stride,
                    ky * dilation: ky * dilation + stride * ho: stride,
                    kx * dilation: kx * dilation + stride * wo: stride] += \
                    contrib.reshape(g, cing, do, ho, wo)
    gxp = gxp.reshape(c_in, dp, hp, wp)
    if p:
        gxp = gxp[:, p:dp - p, p:hp - p, p:wp - p]
    return np.ascontiguousarray(gxp)


def conv3d_grad_weight(x, gout, stride, dilation, padding, groups, k):
    """Gradient w.r.t. the conv3d weights."""
    c_in = x.shape[0]
    c_out = gout.shape[0]
    g = groups
    cing = c_in // g
    coutg = c_out // g
    xp = _pad(x, padding)
    dp, hp, wp = xp.shape[1:]
    do, ho, wo = gout.shape[1:]
    xg = xp.reshape(g, cing, dp, hp, wp)
    gg = gout.reshape(g, coutg, -1)
    gw = np.zeros((g, coutg, cing, k, k, k), dtype=x.dtype)
    for kz in range(k):
        for ky in range(k):
            for kx in range(k):
                xs = xg[:, :,
                        kz * dilation: kz * dilation + stride * do: stride,
                        ky * dilation: ky * dilation + stride * ho: stride,
                        kx * dilation: kx * dilation + stride * wo: stride]
                gw[:, :, :, kz, ky, kx] = np.matmul(
                    gg, xs.reshape(g, cing, -1).swapaxes(1, 2))
    return gw.reshape(c_out, cing, k, k, k)
