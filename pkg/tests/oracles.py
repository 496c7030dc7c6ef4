"""Independent brute-force oracles used by the test suite.

Everything here is deliberately naive (plain Python loops over ndarrays) and
shares no code with the library paths it checks.
"""

import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    k2, p = b.shape
    assert k == k2
    out = np.zeros((m, p), dtype=np.float64)
    for i in range(m):
        for j in range(p):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def conv3d_loops(x, w, stride=1, dilation=1, padding=0, groups=1):
    """Seven nested loops, cross-correlation semantics."""
    c_in, d, h, wd = x.shape
    c_out, cing, k = w.shape[0], w.shape[1], w.shape[2]
    xp = np.zeros((c_in, d + 2 * padding, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    xp[:, padding:padding + d, padding:padding + h, padding:padding + wd] = x
    do = (d + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    ho = (h + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    coutg = c_out // groups
    out = np.zeros((c_out, do, ho, wo), dtype=np.float64)
    for o in range(c_out):
        g = o // coutg
        for od in range(do):
            for oh in range(ho):
                for ow in range(wo):
                    acc = 0.0
                    for ic in range(cing):
                        c = g * cing + ic
                        for kz in range(k):
                            for ky in range(k):
                                for kx in range(k):
                                    acc += float(w[o, ic, kz, ky, kx]) * float(
                                        xp[c,
                                           od * stride + kz * dilation,
                                           oh * stride + ky * dilation,
                                           ow * stride + kx * dilation])
                    out[o, od, oh, ow] = acc
    return out


def squash_scalar(s, eps=1e-12):
    n2 = float(np.sum(np.asarray(s, dtype=np.float64) ** 2))
    n = np.sqrt(n2 + eps)
    return np.asarray(s, dtype=np.float64) * (n2 / (1.0 + n2) / n)


def routing_transcription(votes, iterations):
    """Literal transcription of the agreement loop for votes (I, J, A)."""
    votes = np.asarray(votes, dtype=np.float64)
    i_n, j_n, _ = votes.shape
    b = np.zeros((i_n, j_n))
    r = None
    c = None
    for _ in range(iterations):
        e = np.exp(b - b.max(axis=1, keepdims=True))
        r = e / e.sum(axis=1, keepdims=True)
        s = np.zeros((j_n, votes.shape[2]))
        for i in range(i_n):
            for j in range(j_n):
                s[j] += r[i, j] * votes[i, j]
        c = np.stack([squash_scalar(s[j]) for j in range(j_n)])
        for i in range(i_n):
            for j in range(j_n):
                b[i, j] += float(votes[i, j] @ c[j])
    return c, r


def adam_scalar_reference(grad_fn, w0, lr, steps, beta1=0.9, beta2=0.999,
                          eps=1e-8, weight_decay=0.0):
    w = float(w0)
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(w) + weight_decay * w
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        w -= lr * mhat / (np.sqrt(vhat) + eps)
    return w
