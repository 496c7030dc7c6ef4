"""Numba and numpy kernel builds must agree on every conv configuration."""

import numpy as np
import pytest

from evitcaps import _kernels_numba as knb
from evitcaps import _kernels_numpy as knp
from evitcaps.backend import active_backend

CASES = [
    # (c_in, c_out, spatial, k, stride, dilation, padding, groups)
    (2, 3, 6, 3, 1, 1, 1, 1),
    (4, 4, 5, 3, 2, 1, 1, 1),
    (2, 2, 8, 5, 1, 3, 6, 1),
    (4, 8, 4, 3, 1, 1, 1, 4),
    (6, 6, 4, 3, 1, 1, 1, 6),
    (3, 2, 4, 2, 2, 1, 0, 1),
]


@pytest.mark.parametrize("case", CASES)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_forward_agreement(case, dtype):
    c_in, c_out, s, k, stride, dil, pad, g = case
    rng = np.random.default_rng(hash(case) % 2**32)
    x = rng.standard_normal((c_in, s, s, s)).astype(dtype)
    w = rng.standard_normal((c_out, c_in // g, k, k, k)).astype(dtype)
    a = knp.conv3d_forward(x, w, stride, dil, pad, g)
    b = knb.conv3d_forward(x, w, stride, dil, pad, g)
    assert a.shape == b.shape
    tol = 1e-5 if dtype == np.float32 else 1e-12
    assert np.allclose(a, b, atol=tol, rtol=tol)


@pytest.mark.parametrize("case", CASES)
def test_gradient_agreement(case):
    c_in, c_out, s, k, stride, dil, pad, g = case
    rng = np.random.default_rng(hash(case) % 2**31)
    x = rng.standard_normal((c_in, s, s, s))
    w = rng.standard_normal((c_out, c_in // g, k, k, k))
    out = knp.conv3d_forward(x, w, stride, dil, pad, g)
    gout = rng.standard_normal(out.shape)
    gx_np = knp.conv3d_grad_input(gout, w, stride, dil, pad, g, x.shape)
    gx_nb = knb.conv3d_grad_input(gout, w, stride, dil, pad, g, x.shape)
    assert np.allclose(gx_np, gx_nb, atol=1e-12)
    gw_np = knp.conv3d_grad_weight(x, gout, stride, dil, pad, g, k)
    gw_nb = knb.conv3d_grad_weight(x, gout, stride, dil, pad, g, k)
    assert np.allclose(gw_np, gw_nb, atol=1e-12)


def test_env_flag_selected_backend():
    import os
    want = os.environ.get("EVITCAPS_BACKEND", "numba")
    assert active_backend() == want
