"""Distances between coupled flows and the closed-form coefficients of their Ito equation.

For two label-indexed states ``g``, ``gt`` with pointwise intrinsic difference
``d = g - gt`` and ``L^2`` distance ``rho``, the distance solves (away from the
cut locus)

    d rho = rho (sigma dz + b dt + <n_g, du> dt)

with, summing over the stored modes,

    sigma^2 = 4 nu sum lambda^2 |k|^4 [ I_sin(k)^2 + I_cos(k)^2 ]
    b + sigma^2/2 = 2 nu sum lambda^2 |k|^4 || sin(k.d/2) / (|k| rho) ||^2

where ``I_sin(k)`` is the label average of
``(n_kperp . n_g) sin(k.(g+gt)/2) sin(k.d/2) / (|k| rho)``. The kernels return
the un-normalized averages; this module divides by ``rho`` once per state.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kernels
from .flow import DiffeoState
from .spectrum import DriftField, SingleModeDrift, Spectrum, ZeroDrift, grad_bound_constants

TWO_PI = 2.0 * math.pi
CUTLOCUS_MARGIN = 0.1
TOL_QUADRATURE = 1e-6


class ZeroDistanceError(ValueError):
    """The two states coincide, so normalized quantities are undefined."""


def _positions(x) -> np.ndarray:
    """States become ``(N, 2)``; raw arrays must be ``(N, 2)``, ``(P, N, 2)`` or ``(P, n, n, 2)``."""
    if isinstance(x, DiffeoState):
        return x.flat
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 4:
        return arr.reshape(arr.shape[0], -1, 2)
    return arr


def _pair(g, gt):
    a, b = _positions(g), _positions(gt)
    if a.shape != b.shape:
        raise ValueError("states must share the same label grid")
    return a, b


def pointwise_delta(p, q) -> np.ndarray:
    """Componentwise representative of ``p - q`` in ``(-pi, pi]``."""
    d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    return np.pi - np.mod(np.pi - d, TWO_PI)


def l2_distance(g, gt) -> float | np.ndarray:
    """Intrinsic ``L^2`` distance under the normalized measure."""
    a, b = _pair(g, gt)
    d = pointwise_delta(a, b)
    return np.sqrt(np.mean(np.sum(d * d, axis=-1), axis=-1))


def extrinsic_distance(g, gt) -> float | np.ndarray:
    """``L^2`` distance built from the chordal metric ``2|sin(x/2)|`` on each circle."""
    a, b = _pair(g, gt)
    d = a - b
    return np.sqrt(np.mean(4.0 * np.sum(np.sin(0.5 * d) ** 2, axis=-1), axis=-1))


def ell(x):
    """``sin(x)/x`` with the removable singularity filled in."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    x2 = x * x
    out = np.where(small, 1.0 - x2 / 6.0 + x2 * x2 / 120.0, np.sin(safe) / safe)
    return out if out.ndim else float(out)


# coefficient evaluation ------------------------------------------------------

@dataclass
class Coefficients:
    """All per-state quantities of one or many pairs (arrays over the path axis)."""

    rho: np.ndarray
    sigma_sq: np.ndarray
    b: np.ndarray
    bound_sigma: np.ndarray
    bound_b: np.ndarray
    sup_pointwise: np.ndarray
    cutlocus: np.ndarray
    S: np.ndarray
    C: np.ndarray


def coefficients(g, gt, s: Spectrum, backend=None) -> Coefficients:
    """Evaluate ``rho, sigma^2, b`` and both coefficient bounds.

    Inputs of shape ``(N, 2)`` or ``(P, N, 2)``; outputs always carry the path axis.
    """
    a, c = _pair(g, gt)
    if a.ndim == 2:
        a, c = a[None], c[None]
    d = pointwise_delta(a, c)
    dd = np.sum(d * d, axis=-1)
    rho_sq = np.mean(dd, axis=-1)
    if np.any(rho_sq == 0):
        raise ZeroDistanceError("rho = 0: the two flows coincide")
    S, C, Q, Qp = _kernels.mode_integrals(a, c, s.kvecs, backend=backend)
    lam2 = s.lams**2
    ksq = s.norms_sq
    nu = s.nu
    sigma_sq = 4.0 * nu * np.sum(lam2 * (S * S + C * C), axis=-1) / rho_sq**2
    b_plus = 2.0 * nu * np.sum(lam2 * ksq * Q, axis=-1) / rho_sq
    bound_sigma = 4.0 * nu * np.sum(lam2 * ksq * Qp, axis=-1) / rho_sq
    # label averages of (d . k)^2 from the second moments of d
    m11 = np.mean(d[..., 0] ** 2, axis=-1)[:, None]
    m12 = np.mean(d[..., 0] * d[..., 1], axis=-1)[:, None]
    m22 = np.mean(d[..., 1] ** 2, axis=-1)[:, None]
    k1, k2 = s.kvecs[:, 0], s.kvecs[:, 1]
    dk2 = k1 * k1 * m11 + 2 * k1 * k2 * m12 + k2 * k2 * m22
    bound_b = 2.0 * nu * np.sum(lam2 * dk2 * Q, axis=-1) / rho_sq**2
    sup = np.sqrt(np.max(dd, axis=-1))
    cut = np.any(np.abs(d) > np.pi - CUTLOCUS_MARGIN, axis=(-1, -2))
    return Coefficients(
        rho=np.sqrt(rho_sq), sigma_sq=sigma_sq, b=b_plus - 0.5 * sigma_sq,
        bound_sigma=bound_sigma, bound_b=bound_b, sup_pointwise=sup, cutlocus=cut, S=S, C=C,
    )


def _scalar(x):
    x = np.asarray(x)
    return float(x[0]) if x.shape == (1,) else x


def sigma_sq(g, gt, s: Spectrum) -> float:
    return _scalar(coefficients(g, gt, s).sigma_sq)


def drift_b(g, gt, s: Spectrum) -> float:
    return _scalar(coefficients(g, gt, s).b)


def martingale_increment(coef: Coefficients, s: Spectrum, noise) -> np.ndarray:
    """``sigma dz`` over one step, rebuilt from the raw noise ``(P, M, 2)``."""
    amp = s.amplitudes
    num = np.sum(amp * (-coef.S * noise[..., 0] + coef.C * noise[..., 1]), axis=-1)
    return 2.0 * num / coef.rho**2


def drift_terms(g, gt, u: DriftField, t: float):
    """``(<n_g, du>, ||du||)`` with ``du = (u(g) - u(gt)) / rho``."""
    a, c = _pair(g, gt)
    if a.ndim == 2:
        a, c = a[None], c[None]
    d = pointwise_delta(a, c)
    rho_sq = np.mean(np.sum(d * d, axis=-1), axis=-1)
    if isinstance(u, ZeroDrift):
        z = np.zeros_like(rho_sq)
        return z, z
    du = u(t, a) - u(t, c)
    ng_du = np.mean(np.sum(d * du, axis=-1), axis=-1) / rho_sq
    du_norm = np.sqrt(np.mean(np.sum(du * du, axis=-1), axis=-1) / rho_sq)
    return ng_du, du_norm


# diagnostics -------------------------------------------------------------------

@dataclass
class DistanceDiagnostics:
    rho: float
    rho_ext: float
    sigma_sq: float
    b: float
    delta_u_norm: float
    ng_delta_u: float
    sup_pointwise: float
    cutlocus_flag: bool
    event_R: bool | None
    event_2R: bool | None
    event_sqrt2R: bool | None


def event_thresholds(R: float) -> dict:
    return {"pi/R": math.pi / R, "pi/(2R)": math.pi / (2 * R), "pi*sqrt2/R": math.pi * math.sqrt(2) / R}


def diagnostics(g, gt, s: Spectrum, u: DriftField | None = None, t: float = 0.0,
                R: float | None = None) -> DistanceDiagnostics:
    u = u or ZeroDrift()
    R = s.radius if R is None else R
    co = coefficients(g, gt, s)
    ng_du, du_norm = drift_terms(g, gt, u, t)
    sup = float(co.sup_pointwise[0])
    ev = (None, None, None) if R is None else (
        sup <= math.pi / R, sup <= math.pi / (2 * R), sup <= math.pi * math.sqrt(2) / R)
    return DistanceDiagnostics(
        rho=float(co.rho[0]), rho_ext=float(extrinsic_distance(g, gt)),
        sigma_sq=float(co.sigma_sq[0]), b=float(co.b[0]),
        delta_u_norm=float(du_norm[0]), ng_delta_u=float(ng_du[0]),
        sup_pointwise=sup, cutlocus_flag=bool(co.cutlocus[0]),
        event_R=ev[0], event_2R=ev[1], event_sqrt2R=ev[2],
    )


# coefficient bounds audit ---------------------------------------------------------

@dataclass
class CoefficientBoundsReport:
    sigma_sq: float
    b: float
    bound_sigma_residual: float  # bound - sigma^2, must be >= -tol
    bound_b_residual: float  # b - lower bound, must be >= -tol
    b_minus_half_sigma_sq: float | None  # None when not applicable
    applicable: bool
    delta_identity_error: float
    sup_pointwise: float
    R: float | None

    def passed(self, tol=1e-9) -> bool:
        ok = self.bound_sigma_residual >= -tol and self.bound_b_residual >= -tol
        if self.applicable:
            ok = ok and self.b_minus_half_sigma_sq >= -tol
        return ok and self.delta_identity_error <= 1e-12


def delta_identity_error(g, gt, s: Spectrum) -> float:
    """``max |delta_k^2 + delta_kperp^2 - 1|`` over labels with nonzero difference."""
    a, c = _pair(g, gt)
    d = pointwise_delta(a, c).reshape(-1, 2)
    r = np.hypot(d[:, 0], d[:, 1])
    keep = r > 0
    if not np.any(keep) or s.n_modes == 0:
        return 0.0
    e = d[keep] / r[keep, None]
    nk = s.kvecs / np.sqrt(s.norms_sq)[:, None]
    nkp = np.stack([nk[:, 1], -nk[:, 0]], axis=1)
    dk = e @ nk.T
    dkp = e @ nkp.T
    return float(np.max(np.abs(dk**2 + dkp**2 - 1.0)))


def audit_coefficient_bounds(g, gt, s: Spectrum, R: float | None = None) -> CoefficientBoundsReport:
    R = s.radius if R is None else R
    co = coefficients(g, gt, s)
    sup = float(co.sup_pointwise[0])
    band_ok = R is not None and not np.any(s.lams[~s.band(R)] > 0)
    applicable = bool(band_ok and sup <= math.pi / R)
    sig, b = float(co.sigma_sq[0]), float(co.b[0])
    return CoefficientBoundsReport(
        sigma_sq=sig, b=b,
        bound_sigma_residual=float(co.bound_sigma[0]) - sig,
        bound_b_residual=b - float(co.bound_b[0]),
        b_minus_half_sigma_sq=(b - 0.5 * sig) if applicable else None,
        applicable=applicable,
        delta_identity_error=delta_identity_error(g, gt, s),
        sup_pointwise=sup, R=R,
    )


# stability constants -----------------------------------------------------------

def compute_c_R(s: Spectrum, R: float) -> float:
    """``(nu/8) ell(pi/sqrt2)^2 sum_{|k|<=R} lambda^2 |k|^4``."""
    if R < 1:
        raise ValueError("R must be >= 1")
    mask = s.band(R)
    return float(s.nu / 8.0 * ell(math.pi / math.sqrt(2)) ** 2 * np.sum(s.lams[mask] ** 2 * s.norms_sq[mask] ** 2))


def _c_R_prime_objective(s: Spectrum, R: float):
    mask = s.band(R)
    w = s.lams[mask] ** 2 * s.norms_sq[mask] ** 2
    ang = np.arctan2(s.kvecs[mask, 1], s.kvecs[mask, 0])

    def f(phi):
        phi = np.asarray(phi, dtype=float)
        return np.sum(w * np.cos(2.0 * (phi[..., None] - ang)) ** 2, axis=-1)
    f.weights = w
    return f


def compute_c_R_prime(s: Spectrum, R: float, n_grid: int = 4096) -> float:
    """``(nu/8) inf_{|v|=1} sum_{|k|<=R} lambda^2 |k|^4 ((n_k.v)^2 - (n_kperp.v)^2)^2``.

    The summand equals ``cos^2(2(phi - phi_k))``; the infimum is found by a
    dense grid over ``[0, pi/2)`` (the period) and bounded local refinement.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    f = _c_R_prime_objective(s, R)
    if not np.any(s.band(R)):
        return 0.0
    period = 0.5 * math.pi
    h = period / n_grid
    grid = np.arange(n_grid) * h
    vals = f(grid)
    best = float(np.min(vals))
    for i in np.argsort(vals)[:8]:
        res = minimize_scalar(lambda x: float(f(x)), bounds=(grid[i] - h, grid[i] + h),
                              method="bounded", options={"xatol": 1e-10})
        best = min(best, float(res.fun))
    if best <= 1e-14 * float(np.sum(f.weights)):
        best = 0.0  # round-off of an exact zero
    return float(s.nu / 8.0 * best)


@dataclass
class StabilityConstants:
    c_R: float
    c_R_prime: float
    R: float


def stability_constants(s: Spectrum, R: float | None = None) -> StabilityConstants:
    R = s.radius if R is None else R
    if R is None:
        raise ValueError("a band limit R is needed")
    return StabilityConstants(compute_c_R(s, R), compute_c_R_prime(s, R), R)


# stability audit ----------------------------------------------------------------

@dataclass
class DistanceSeries:
    """Per-step distance quantities of an ensemble, arrays of shape ``(P, T+1)``."""

    times: np.ndarray
    rho: np.ndarray
    sigma_sq: np.ndarray
    b: np.ndarray
    ng_delta_u: np.ndarray
    delta_u_norm: np.ndarray
    sup_pointwise: np.ndarray
    cutlocus: np.ndarray
    noise_martingale: np.ndarray | None = None  # sigma dz from raw noise, (P, T)


class SeriesRecorder:
    """Observer for :func:`torusflow.flow.evolve_ensemble` that fills a :class:`DistanceSeries`."""

    def __init__(self, s: Spectrum, u: DriftField, n_steps: int, n_paths: int):
        self.s, self.u = s, u
        shape = (n_paths, n_steps + 1)
        self.times = np.zeros(n_steps + 1)
        self.arrays = {k: np.zeros(shape) for k in
                       ("rho", "sigma_sq", "b", "ng_delta_u", "delta_u_norm", "sup_pointwise")}
        self.cut = np.zeros(shape, dtype=bool)
        self.mart = np.zeros((n_paths, n_steps))
        self._prev = None

    def __call__(self, i, t, g, gt, noise):
        if noise is not None and self._prev is not None:
            self.mart[:, i - 1] = martingale_increment(self._prev, self.s, noise)
        co = coefficients(g, gt, self.s)
        ng, dn = drift_terms(g, gt, self.u, t)
        self.times[i] = t
        for name, val in (("rho", co.rho), ("sigma_sq", co.sigma_sq), ("b", co.b),
                          ("ng_delta_u", ng), ("delta_u_norm", dn), ("sup_pointwise", co.sup_pointwise)):
            self.arrays[name][:, i] = val
        self.cut[:, i] = co.cutlocus
        self._prev = co

    def series(self) -> DistanceSeries:
        return DistanceSeries(times=self.times, cutlocus=self.cut, noise_martingale=self.mart, **self.arrays)


@dataclass
class StabilityReport:
    c_R: float
    c_R_prime: float
    c1: float
    c2: float
    R: float
    dt: float
    tol_scheme: float
    sharp_bound_steps: int
    sharp_bound_min_residual: float | None
    sharp_bound_violations: int
    drift_bound_steps: int
    drift_bound_min_residual: float | None
    drift_bound_violations: int
    excluded_steps: int
    integrated_paths: int
    integrated_min_residual: float | None
    integrated_violations: int
    noise_reconstruction_gap: float | None
    integrated_noise_min_residual: float | None
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def audit_stability(series: DistanceSeries, s: Spectrum, u: DriftField, dt: float,
                     R: float | None = None, tol: float = 1e-9) -> StabilityReport:
    """Check the drift bounds step by step and the integrated lower bound path by path.

    * drift bound with ``c_R'`` on steps with ``sup |d| <= pi/(2R)``
    * drift bound with ``c_R`` on steps with ``sup |d| <= pi sqrt2 / R``
    * integrated form ``log rho_t - log rho_0 >= M_t + c_R' t - (c1/c2)(1 - exp(-c2 t))``
      on paths whose every step satisfies ``sup |d| <= pi/(2R)``. ``M`` is the
      martingale obtained by removing the analytic drift from the log-increments.
      Left-point evaluation of ``c1 exp(-c2 t)`` overshoots its integral by at
      most ``c1 dt``, which is the scheme tolerance.
    * the same inequality with ``M`` rebuilt from the raw noise increments; its
      distance to the reconstructed martingale is the discretization error of
      the Ito expansion and is reported as ``noise_reconstruction_gap``.
    """
    if not isinstance(u, (ZeroDrift, SingleModeDrift)):
        raise TypeError("stability audit needs a Navier-Stokes drift (zero or single mode)")
    R = s.radius if R is None else R
    if R is None or np.any(s.lams[~s.band(R)] > 0):
        raise ValueError("stability audit needs a spectrum band-limited by R")
    consts = stability_constants(s, R)
    c1, c2 = grad_bound_constants(u)
    sup = series.sup_pointwise
    ev2 = sup <= math.pi / (2 * R)
    evs2 = sup <= math.pi * math.sqrt(2) / R
    sharp = (series.b - 0.5 * series.sigma_sq - consts.c_R_prime)[ev2]
    loose = (series.b - consts.c_R)[evs2]

    t = series.times
    drift = series.b - 0.5 * series.sigma_sq + series.ng_delta_u
    dlog = np.diff(np.log(series.rho), axis=1)
    mart = np.concatenate([np.zeros((sup.shape[0], 1)), np.cumsum(dlog - drift[:, :-1] * dt, axis=1)], axis=1)
    envelope = 0.0 if c1 == 0 else (c1 / c2) * (1.0 - np.exp(-c2 * t))
    lhs = np.log(series.rho) - np.log(series.rho[:, :1])
    rhs = mart + consts.c_R_prime * t - envelope
    tol_scheme = c1 * dt + tol
    good_paths = np.all(ev2, axis=1)
    resid = (lhs - rhs)[good_paths]
    gap = noise_resid = None
    if series.noise_martingale is not None and series.noise_martingale.size and np.any(good_paths):
        noise_m = np.concatenate([np.zeros((sup.shape[0], 1)), np.cumsum(series.noise_martingale, axis=1)], axis=1)
        gap = float(np.max(np.abs(noise_m - mart)[good_paths]))
        noise_resid = float(np.min((lhs - (noise_m + consts.c_R_prime * t - envelope))[good_paths]))
    return StabilityReport(
        c_R=consts.c_R, c_R_prime=consts.c_R_prime, c1=c1, c2=c2, R=R, dt=dt, tol_scheme=tol_scheme,
        sharp_bound_steps=int(sharp.size), sharp_bound_min_residual=float(sharp.min()) if sharp.size else None,
        sharp_bound_violations=int(np.sum(sharp < -tol)),
        drift_bound_steps=int(loose.size), drift_bound_min_residual=float(loose.min()) if loose.size else None,
        drift_bound_violations=int(np.sum(loose < -tol)),
        excluded_steps=int(np.sum(~ev2)),
        integrated_paths=int(np.sum(good_paths)),
        integrated_min_residual=float(resid.min()) if resid.size else None,
        integrated_violations=int(np.sum(np.min(resid, axis=1) < -tol_scheme)) if resid.size else 0,
        noise_reconstruction_gap=gap,
        integrated_noise_min_residual=noise_resid,
    )


# extrinsic distance SDE -------------------------------------------------------------

@dataclass
class ExtrinsicCoefficients:
    rho: float
    sigma_sq: float
    b: float
    u_term: float

    @property
    def drift(self) -> float:
        """Ito drift of the extrinsic distance itself."""
        return self.rho * (self.b + self.u_term)


def extrinsic_coefficients(g, gt, s: Spectrum, u: DriftField | None = None, t: float = 0.0) -> ExtrinsicCoefficients:
    """Ito coefficients of the chordal ``L^2`` distance; ``nu`` multiplies every noise term."""
    a, c = _pair(g, gt)
    d = a - c
    rho_sq = float(np.mean(4.0 * np.sum(np.sin(0.5 * d) ** 2, axis=-1)))
    if rho_sq == 0:
        raise ZeroDistanceError("rho = 0: the two flows coincide")
    sd1, sd2 = np.sin(d[:, 0]), np.sin(d[:, 1])
    cd1, cd2 = np.cos(d[:, 0]), np.cos(d[:, 1])
    nu = s.nu
    ito = 0.0
    mart = 0.0
    for (k1, k2), lam in zip(s.kvecs, s.lams):
        pa = k1 * a[:, 0] + k2 * a[:, 1]
        pc = k1 * c[:, 0] + k2 * c[:, 1]
        dcos = np.cos(pa) - np.cos(pc)
        dsin = np.sin(pa) - np.sin(pc)
        ito += lam**2 * np.mean((k2 * k2 * cd1 + k1 * k1 * cd2) * (dcos**2 + dsin**2))
        proj = k2 * sd1 - k1 * sd2
        mart += lam**2 * (np.mean(proj * dcos) ** 2 + np.mean(proj * dsin) ** 2)
    sig = nu * mart / rho_sq**2
    b = 0.5 * nu * ito / rho_sq - 0.5 * sig
    u_term = 0.0
    if u is not None and not isinstance(u, ZeroDrift):
        du = u(t, a) - u(t, c)
        u_term = float(np.mean(sd1 * du[:, 0] + sd2 * du[:, 1]) / rho_sq)
    return ExtrinsicCoefficients(math.sqrt(rho_sq), float(sig), float(b), u_term)


# export ----------------------------------------------------------------------------

SERIES_COLUMNS = ("t", "rho", "rho_ext", "sigma_sq", "b", "sup_pointwise",
                  "cutlocus", "event_R", "event_2R", "event_sqrt2R")


def write_series_csv(dest, rows):
    """``rows``: iterable of dicts keyed by :data:`SERIES_COLUMNS`."""
    with open(dest, "w", newline="") as fh:
        fh.write(",".join(SERIES_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in SERIES_COLUMNS) + "\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if v is None:
        return ""
    return repr(float(v))


def dump_json(obj, dest):
    with open(dest, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")
