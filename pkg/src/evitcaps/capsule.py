"""Capsule layers: squash nonlinearity, dynamic routing, 3D conv-capsules.

A capsule grid is a Tensor of shape (T, A, D, H, W): T capsule types with A
atoms each over a spatial grid.  Routing couplings are iterated outside the
autodiff graph and enter the final combine as constants, so gradients flow
only through the last squash(sum(r * votes)) expression.
"""

from dataclasses import dataclass

import numpy as np

import evitcaps.tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

SQUASH_EPS = 1e-12


def squash(s: Tensor, axis: int) -> Tensor:
    """Norm-bounding nonlinearity: s * |s|^2 / ((1 + |s|^2) * |s|).

    The norm uses sqrt(|s|^2 + 1e-12) so the gradient stays finite at zero.
    """
    sq = T.tsum(T.mul(s, s), axis=axis, keepdims=True)
    norm = T.tsqrt(T.add(sq, SQUASH_EPS))
    scale = T.div(T.div(sq, T.add(sq, 1.0)), norm)
    return T.mul(s, scale)


def _squash_np(s: np.ndarray, axis: int) -> np.ndarray:
    sq = (s * s).sum(axis=axis, keepdims=True)
    return s * (sq / (1.0 + sq) / np.sqrt(sq + SQUASH_EPS))


def _softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def route_couplings(votes: np.ndarray, iterations: int) -> np.ndarray:
    """Iterate the agreement loop on raw vote values (..., I, J, A).

    Returns couplings r of shape (..., I, J), summing to 1 over J.
    """
    b = np.zeros(votes.shape[:-1], dtype=votes.dtype)
    r = _softmax_np(b, axis=-1)
    for it in range(1, iterations):
        s = np.einsum("...ija,...ij->...ja", votes, r)
        c = _squash_np(s, axis=-1)
        b = b + np.einsum("...ija,...ja->...ij", votes, c)
        r = _softmax_np(b, axis=-1)
    return r


def dynamic_routing(votes: Tensor, iterations: int) -> tuple[Tensor, Tensor]:
    """Route votes (..., I, J, A) to J parent capsules (..., J, A).

    Returns (parents, couplings); couplings are constants (detached), and
    gradients flow through the final squash(sum_i r_ij * v_ij) only.
    """
    if iterations < 1:
        raise ConfigurationError(f"routing needs at least 1 iteration, got {iterations}")
    if votes.ndim < 3:
        raise DimensionError(f"votes must have shape (..., I, J, A), got {votes.shape}")
    r = route_couplings(votes.data, iterations)
    r_t = Tensor(r[..., None], dtype=votes.dtype)
    s = T.tsum(T.mul(votes, r_t), axis=-3)
    return squash(s, axis=-1), Tensor(r, dtype=votes.dtype)


@dataclass
class ConvCapsuleParams:
    """Stride-s locally constrained capsule convolution parameters.

    weight shape: (T_in, k, k, k, A_in, T_out * A_out); votes for each parent
    are produced by per-input-type convolution over the k^3 window.
    """
    weight: Tensor
    t_out: int
    a_out: int
    stride: int = 1
    padding: int = 1
    iterations: int = 3
    route_per_offset: bool = False

    @property
    def t_in(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel(self) -> int:
        return self.weight.shape[1]

    @property
    def a_in(self) -> int:
        return self.weight.shape[4]


def conv_capsule3d(x: Tensor, p: ConvCapsuleParams) -> Tensor:
    """Capsule grid (T_in, A_in, D, H, W) -> (T_out, A_out, D/s, H/s, W/s).

    Votes are summed over the kernel window per (child type, parent), then
    routed over the child-type axis.  With route_per_offset=True the window
    sum is skipped and routing sees I = T_in * k^3 children instead.
    """
    if x.ndim != 5:
        raise DimensionError(f"capsule grid must be rank 5 (T, A, D, H, W), got {x.shape}")
    t_in, a_in, d, h, w = x.shape
    if t_in != p.t_in or a_in != p.a_in:
        raise DimensionError(
            f"capsule grid ({t_in}, {a_in}) does not match weights "
            f"({p.t_in}, {p.a_in})")
    if any(s % p.stride for s in (d, h, w)):
        raise ConfigurationError(
            f"spatial dims {(d, h, w)} not divisible by stride {p.stride}; pad the input")
    if p.iterations < 1:
        raise ConfigurationError("routing iterations must be >= 1")
    k = p.kernel
    m = p.t_out * p.a_out

    if p.route_per_offset:
        votes = _per_offset_votes(x, p)  # (D', H', W', T_in * k^3, T_out, A_out)
    else:
        # grouped conv: each input type convolves its A_in channels into
        # T_out * A_out vote channels; window contributions are pre-summed.
        w_conv = T.reshape(
            T.transpose(p.weight, (0, 5, 4, 1, 2, 3)),  # (T_in, M, A_in, k, k, k)
            (t_in * m, a_in, k, k, k))
        flat = T.reshape(x, (t_in * a_in, d, h, w))
        raw = T.conv3d(flat, w_conv, stride=p.stride, padding=p.padding, groups=t_in)
        do, ho, wo = raw.shape[1:]
        votes = T.transpose(
            T.reshape(raw, (t_in, p.t_out, p.a_out, do, ho, wo)),
            (3, 4, 5, 0, 1, 2))

    parents, _ = dynamic_routing(votes, p.iterations)
    return T.transpose(parents, (3, 4, 0, 1, 2))


def _per_offset_votes(x: Tensor, p: ConvCapsuleParams) -> Tensor:
    t_in, a_in, d, h, w = x.shape
    k, s = p.kernel, p.stride
    do = (d + 2 * p.padding - (k - 1) - 1) // s + 1
    ho = (h + 2 * p.padding - (k - 1) - 1) // s + 1
    wo = (w + 2 * p.padding - (k - 1) - 1) // s + 1
    xp = T.pad_spatial(x, p.padding, axes=[2, 3, 4]) if p.padding else x
    pieces = []
    for kz in range(k):
        for ky in range(k):
            for kx in range(k):
                win = T.slice_nd(xp, (slice(None), slice(None),
                                      slice(kz, kz + s * do, s),
                                      slice(ky, ky + s * ho, s),
                                      slice(kx, kx + s * wo, s)))
                # (T_in, P, A_in) @ (T_in, A_in, M) -> (T_in, P, M)
                win2 = T.transpose(T.reshape(win, (t_in, a_in, -1)), (0, 2, 1))
                w_off = T.reshape(
                    T.slice_nd(p.weight, (slice(None), slice(kz, kz + 1),
                                          slice(ky, ky + 1), slice(kx, kx + 1))),
                    (t_in, a_in, p.t_out * p.a_out))
                pieces.append(T.matmul(win2, w_off))
    stacked = concat_new_axis(pieces)  # (k^3, T_in, P, M)
    kk = k * k * k
    votes = T.reshape(T.transpose(stacked, (2, 1, 0, 3)),
                      (do, ho, wo, t_in * kk, p.t_out, p.a_out))
    return votes


def concat_new_axis(pieces):
    return T.concat([T.reshape(p, (1,) + p.shape) for p in pieces], axis=0)


def init_conv_capsule(rng: np.random.Generator, t_in: int, a_in: int,
                      t_out: int, a_out: int, kernel: int = 3, stride: int = 1,
                      padding: int = 1, iterations: int = 3,
                      route_per_offset: bool = False, std: float = 0.01,
                      dtype=np.float32) -> ConvCapsuleParams:
    w = rng.normal(0.0, std, size=(t_in, kernel, kernel, kernel,
                                   a_in, t_out * a_out)).astype(dtype)
    return ConvCapsuleParams(Tensor(w, requires_grad=True, dtype=dtype),
                             t_out=t_out, a_out=a_out, stride=stride,
                             padding=padding, iterations=iterations,
                             route_per_offset=route_per_offset)
