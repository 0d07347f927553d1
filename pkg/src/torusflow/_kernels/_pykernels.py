"""Pure-numpy versions of the hot kernels.

Shapes follow the compiled module exactly:

* positions ``(P, N, 2)``: P independent paths, N labels each
* wave vectors ``(M, 2)`` float
* noise ``(P, M, 2)``: the ``(dx_k, dy_k)`` increments of each path
"""
import numpy as np

TWO_PI = 2.0 * np.pi


def noise_displacement(pos, kvecs, amp, noise):
    """Sum of ``amp_k (cos(k.x) dx_k + sin(k.x) dy_k) k_perp`` at every position."""
    P, N, _ = pos.shape
    out = np.zeros((P, N, 2))
    x = pos[..., 0]
    y = pos[..., 1]
    for m in range(kvecs.shape[0]):
        k1, k2 = kvecs[m]
        ph = k1 * x + k2 * y
        w = amp[m] * (np.cos(ph) * noise[:, m, 0, None] + np.sin(ph) * noise[:, m, 1, None])
        out[..., 0] += w * k2
        out[..., 1] += -w * k1
    return out


def mode_integrals(g, gt, kvecs):
    """Label-averages needed by the distance coefficients, per path and mode.

    With ``d`` the intrinsic representative of ``g - gt`` and ``c = gt + d/2``:

    * ``S[p, m] = mean((d . k_perp) sin(k.d/2) sin(k.c))``
    * ``C[p, m] = mean((d . k_perp) sin(k.d/2) cos(k.c))``
    * ``Q[p, m] = mean(sin^2(k.d/2))``
    * ``Qperp[p, m] = mean((d/|d| . k_perp/|k|)^2 sin^2(k.d/2))``, zero where d = 0
    """
    P, N, _ = g.shape
    M = kvecs.shape[0]
    d = g - gt
    d = np.pi - np.mod(np.pi - d, TWO_PI)
    c = gt + 0.5 * d
    dd = d[..., 0] ** 2 + d[..., 1] ** 2
    safe = np.where(dd > 0.0, dd, 1.0)
    S = np.empty((P, M))
    C = np.empty((P, M))
    Q = np.empty((P, M))
    Qp = np.empty((P, M))
    for m in range(M):
        k1, k2 = kvecs[m]
        s = np.sin(0.5 * (k1 * d[..., 0] + k2 * d[..., 1]))
        ph = k1 * c[..., 0] + k2 * c[..., 1]
        proj = k2 * d[..., 0] - k1 * d[..., 1]
        sp = proj * s
        s2 = s * s
        S[:, m] = np.mean(sp * np.sin(ph), axis=1)
        C[:, m] = np.mean(sp * np.cos(ph), axis=1)
        Q[:, m] = np.mean(s2, axis=1)
        frac = np.where(dd > 0.0, proj * proj / (safe * (k1 * k1 + k2 * k2)), 0.0)
        Qp[:, m] = np.mean(frac * s2, axis=1)
    return S, C, Q, Qp
