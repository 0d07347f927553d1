"""Scenario builders and Monte-Carlo oracles for the analytic coefficients.

The estimators here only look at raw increments of simulated paths; they
never call the formulas they are used to check.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import metrics
from .flow import DiffeoState, TWO_PI, label_grid, path_rng, wrap_positions
from .spectrum import CustomDrift, DriftField, SingleModeDrift, Spectrum, ZeroDrift, eval_A, eval_B


class InsufficientSamples(ValueError):
    pass


@dataclass
class RegressionEstimate:
    drift_hat: float
    diffusion_sq_hat: float
    se_drift: float
    se_diff: float
    n_samples: int

    def to_dict(self):
        return asdict(self)


def estimate_drift_diffusion(increments, dt: float, min_samples: int = 100) -> RegressionEstimate:
    """Conditional drift and variance rate from increments sharing one start state."""
    x = np.asarray(increments, dtype=float).ravel()
    n = x.size
    if n < min_samples:
        raise InsufficientSamples(f"need at least {min_samples} increments, got {n}")
    mean = x.mean()
    centred = x - mean
    var = float(np.mean(centred**2)) * n / (n - 1)
    sq = centred**2
    return RegressionEstimate(
        drift_hat=float(mean / dt),
        diffusion_sq_hat=var / dt,
        se_drift=float(np.sqrt(var / n) / dt),
        se_diff=float(np.std(sq, ddof=1) / math.sqrt(n) / dt),
        n_samples=n,
    )


# restart ensembles -----------------------------------------------------------

def _flat(x):
    return x.flat if isinstance(x, DiffeoState) else np.asarray(x, dtype=float).reshape(-1, 2)


def noise_basis(pos, s: Spectrum):
    """``(2M, N)`` amplitudes of the ``dx`` rows then the ``dy`` rows at ``pos``."""
    ph = pos @ s.kvecs.T  # (N, M)
    amp = s.amplitudes
    return np.concatenate([(np.cos(ph) * amp).T, (np.sin(ph) * amp).T], axis=0)


def restart_increments(g, gt, s: Spectrum, functional: Callable, dt: float, n: int, seed: int,
                       u: DriftField | None = None, t: float = 0.0, batch: int = 64) -> np.ndarray:
    """``functional(g', gt') - functional(g, gt)`` for ``n`` independent one-step restarts.

    All samples start from the same frozen pair, so the empirical law is the
    exact one-step conditional law of the scheme.
    """
    g0, gt0 = _flat(g), _flat(gt)
    u = u or ZeroDrift()
    rng = path_rng(seed, 0)
    M = s.n_modes
    k1, k2 = s.kvecs[:, 0], s.kvecs[:, 1]
    kp = np.concatenate([np.stack([k2, -k1], 1)] * 2)  # (2M, 2) perp per basis row
    bases = [noise_basis(x, s) for x in (g0, gt0)]
    drifts = [np.zeros_like(g0) if isinstance(u, ZeroDrift) else u(t, x) * dt for x in (g0, gt0)]
    base_val = functional(g0[None], gt0[None])[0]
    out = np.empty(n)
    done = 0
    while done < n:
        m = min(batch, n - done)
        w = rng.standard_normal((m, 2 * M)) * math.sqrt(dt)
        new = []
        for x, B, dr in zip((g0, gt0), bases, drifts):
            d0 = (w * kp[:, 0]) @ B
            d1 = (w * kp[:, 1]) @ B
            new.append(wrap_positions(np.stack([x[:, 0] + d0 + dr[:, 0], x[:, 1] + d1 + dr[:, 1]], axis=-1)))
        out[done:done + m] = functional(new[0], new[1]) - base_val
        done += m
    return out


# annulus example ------------------------------------------------------------------

def smootherstep(x):
    """Quintic ramp: 0 below 0, 1 above 1, C^2 in between."""
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (x * (6.0 * x - 15.0) + 10.0)


@dataclass(frozen=True)
class AnnulusDiffeo:
    """Band ``E1`` of normalized measure ``alpha`` rotated by pi, with a collar of measure ``eps``.

    The map is ``(t1, t2) -> (t1 + pi * ramp(t2), t2)``; a shear in the first
    coordinate, hence bijective and area preserving for any ramp.
    """

    alpha: float
    eps: float
    center: float = math.pi
    profile: Callable = smootherstep

    @property
    def half_width(self) -> float:
        return math.pi * self.alpha  # band {|t2 - c| <= pi alpha} has measure alpha

    @property
    def collar(self) -> float:
        return math.pi * self.eps / 2.0  # one collar per side, total measure eps

    def ramp(self, t2):
        r = np.abs(((np.asarray(t2) - self.center + math.pi) % TWO_PI) - math.pi)
        return self.profile((self.half_width + self.collar - r) / self.collar)

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = theta.copy()
        out[..., 0] = out[..., 0] + math.pi * self.ramp(theta[..., 1])
        return out

    def in_E1(self, theta):
        r = np.abs(((np.asarray(theta)[..., 1] - self.center + math.pi) % TWO_PI) - math.pi)
        return r <= self.half_width

    def outside_E2(self, theta):
        r = np.abs(((np.asarray(theta)[..., 1] - self.center + math.pi) % TWO_PI) - math.pi)
        return r >= self.half_width + self.collar


def build_annulus(alpha: float, eps: float, center: float = math.pi) -> AnnulusDiffeo:
    if not (alpha > 0 and eps > 0):
        raise ValueError("alpha and eps must be positive")
    if eps > alpha / 10:
        raise ValueError("eps must satisfy eps <= alpha/10")
    if alpha + eps >= 1.0:
        raise ValueError("alpha + eps must stay below the total (normalized) measure 1")
    return AnnulusDiffeo(alpha, eps, center)


def example_prediction(s: Spectrum, alpha: float) -> dict:
    """Closed forms for the initial drift of the extrinsic distance from ``(id, psi)``.

    ``closed_form_*``: ``-(rho0/2) sum_{k1 odd} lambda^2 k2^2`` without / with ``nu``.
    ``full_ito``: keeps the ``k1^2 cos(dg_2)`` term of the Ito expansion, giving
    ``(rho0/2) nu sum_{k1 odd} lambda^2 (k1^2 - k2^2)``. All use ``rho0 = sqrt(4 alpha)``.
    """
    odd = (s.kvecs[:, 0].astype(int) % 2) == 1
    rho0 = math.sqrt(4 * alpha)
    lam2 = s.lams[odd] ** 2
    k1sq, k2sq = s.kvecs[odd, 0] ** 2, s.kvecs[odd, 1] ** 2
    printed = -0.5 * rho0 * float(np.sum(lam2 * k2sq))
    return {
        "rho0": rho0,
        "closed_form_without_nu": printed,
        "closed_form_with_nu": printed * s.nu,
        "full_ito": 0.5 * rho0 * s.nu * float(np.sum(lam2 * (k1sq - k2sq))),
        "odd_modes": int(np.sum(odd)),
    }


def band_labels(n1: int, n2: int) -> np.ndarray:
    """Uniform ``n1 x n2`` labels, flattened to ``(n1 n2, 2)``.

    The annulus map varies only in the second coordinate, so the example uses
    a fine grid there and a coarse one along the band.
    """
    a = TWO_PI * np.arange(n1) / n1
    b = TWO_PI * np.arange(n2) / n2
    t1, t2 = np.meshgrid(a, b, indexing="ij")
    return np.stack([t1.ravel(), t2.ravel()], axis=-1)


def run_example_negative_drift(s: Spectrum, alpha: float, eps: float, dt: float, n_paths: int,
                               labels: tuple[int, int] = (16, 4096), seed: int = 0) -> dict:
    """Monte-Carlo initial drift of the extrinsic distance from ``(id, psi)``.

    Reports the estimate next to three closed forms (see :func:`example_prediction`)
    and the drift given by the extrinsic Ito coefficients at the actual state.
    """
    odd = (s.kvecs[:, 0].astype(int) % 2) == 1
    if not np.any(odd & (s.kvecs[:, 1] != 0) & (s.lams > 0)):
        raise ValueError("spectrum has no excited mode with odd k1 and nonzero k2")
    psi = build_annulus(alpha, eps)
    g = band_labels(*labels)
    gt = wrap_positions(psi(g))
    inc = restart_increments(g, gt, s, metrics.extrinsic_distance, dt, n_paths, seed)
    est = estimate_drift_diffusion(inc, dt)
    pred = example_prediction(s, alpha)
    exact = metrics.extrinsic_coefficients(g, gt, s)
    dev = {key: abs(est.drift_hat - pred[key]) for key in ("closed_form_without_nu", "closed_form_with_nu", "full_ito")}
    rel = {key: dev[key] / abs(pred[key]) if pred[key] else None for key in dev}
    return {
        "alpha": alpha, "eps": eps, "dt": dt, "labels": list(labels), "seed": seed, "n_paths": n_paths,
        "rho0_measured": exact.rho,
        "estimate": est.to_dict(),
        "prediction": pred,
        "state_formula_drift": exact.drift,
        "abs_deviation": dev,
        "relative_deviation": rel,
        "drift_negative": est.drift_hat < 0,
    }


# Navier-Stokes residual and Ito-Stratonovich correction ----------------------------

def _spectral_derivatives(f, grid_n):
    """Gradient and Laplacian of a periodic scalar sampled on ``label_grid``."""
    freq = np.fft.fftfreq(grid_n, d=1.0 / grid_n)
    k1, k2 = np.meshgrid(freq, freq, indexing="ij")
    F = np.fft.fft2(f)
    d1 = np.real(np.fft.ifft2(1j * k1 * F))
    d2 = np.real(np.fft.ifft2(1j * k2 * F))
    lap = np.real(np.fft.ifft2(-(k1**2 + k2**2) * F))
    return d1, d2, lap


def _time_derivative(u: DriftField, t, theta):
    if isinstance(u, SingleModeDrift):
        return -u.nu * u.k.norm_sq * u(t, theta)
    h = 1e-4 * max(1.0, t)
    if t >= h:
        return (u(t + h, theta) - u(t - h, theta)) / (2 * h)
    # one-sided, second order
    return (-3 * u(t, theta) + 4 * u(t + h, theta) - u(t + 2 * h, theta)) / (2 * h)


def ns_residual(u: DriftField, t: float, grid_n: int = 64, nu: float | None = None) -> float:
    """``max |du/dt + (u.grad)u - nu Lap u|`` on the label grid (constant pressure)."""
    if isinstance(u, ZeroDrift):
        return 0.0
    if nu is None:
        nu = getattr(u, "nu", None)
        if nu is None:
            raise ValueError("nu is required for a custom drift")
    theta = label_grid(grid_n)
    field = u(t, theta)
    dt_u = _time_derivative(u, t, theta)
    res = np.zeros_like(field)
    for i in range(2):
        d1, d2, lap = _spectral_derivatives(field[..., i], grid_n)
        res[..., i] = dt_u[..., i] + field[..., 0] * d1 + field[..., 1] * d2 - nu * lap
    return float(np.max(np.abs(res)))


def ito_stratonovich_correction(s: Spectrum, grid_n: int = 64) -> float:
    """``max`` over the grid and modes of ``|(X.grad)X|`` for X in {A_k, B_k} (spectral derivatives)."""
    theta = label_grid(grid_n)
    worst = 0.0
    for k, lam in s.modes:
        for X in (eval_A(k, theta), eval_B(k, theta)):
            adv = np.zeros_like(X)
            for i in range(2):
                d1, d2, _ = _spectral_derivatives(X[..., i], grid_n)
                adv[..., i] = X[..., 0] * d1 + X[..., 1] * d2
            worst = max(worst, float(np.max(np.abs(adv))))
    return worst


def advection_between(X, Y, grid_n):
    """``(X.grad) Y`` for fields sampled on the label grid."""
    out = np.zeros_like(Y)
    for i in range(2):
        d1, d2, _ = _spectral_derivatives(Y[..., i], grid_n)
        out[..., i] = X[..., 0] * d1 + X[..., 1] * d2
    return out


# single-particle calibration ----------------------------------------------------------

def variance_rates_analytic(s: Spectrum) -> np.ndarray:
    """``nu sum lambda^2 perp(k)_i^2`` per component."""
    kp = np.stack([s.kvecs[:, 1], -s.kvecs[:, 0]], axis=1)
    return s.nu * np.sum(s.lams[:, None] ** 2 * kp**2, axis=0)


def variance_calibration(s: Spectrum, n_paths: int, t: float, dt: float = 1e-3, seed: int = 0,
                         start=(0.0, 0.0)) -> dict:
    """Per-component variance rate of one particle of the noise-only flow."""
    from .flow import noise_velocity

    n_steps = int(round(t / dt))
    if n_steps < 1:
        raise ValueError("t must cover at least one step")
    rngs = [path_rng(seed, p) for p in range(n_paths)]
    pos = np.broadcast_to(np.asarray(start, float), (n_paths, 1, 2)).copy()
    total = np.zeros((n_paths, 2))
    sq = math.sqrt(dt)
    for _ in range(n_steps):
        noise = np.stack([r.standard_normal((s.n_modes, 2)) for r in rngs]) * sq
        disp = noise_velocity(s, pos, noise)
        total += disp[:, 0]
        pos = wrap_positions(pos + disp)
    t_eff = n_steps * dt
    var = total.var(axis=0, ddof=1)
    rate = var / t_eff
    se = rate * math.sqrt(2.0 / (n_paths - 1))
    analytic = variance_rates_analytic(s)
    # a component without noise has rate == analytic == 0 and no spread
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (rate - analytic) / se, np.where(rate == analytic, 0.0, np.inf))
    pooled = math.sqrt(se[0] ** 2 + se[1] ** 2)
    iso = abs(rate[0] - rate[1]) / pooled if pooled > 0 else 0.0
    return {
        "t": t_eff, "dt": dt, "n_paths": n_paths, "seed": seed,
        "rate": rate.tolist(), "analytic": analytic.tolist(), "se": se.tolist(),
        "z_scores": z.tolist(),
        "isotropy_z": float(iso),
        "isotropic": bool(iso <= 3.0),
        "closed_spectrum": s.is_closed(),
        "invariant_violated": bool(iso > 3.0 or not s.is_closed()),
    }
