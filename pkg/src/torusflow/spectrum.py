"""Wave vectors, divergence-free eigenfields and noise spectra on the flat 2-torus.

The torus is ``[0, 2*pi)^2``. For a wave vector ``k`` the two eigenfields are

    A_k(theta) = k_perp cos(k . theta),   B_k(theta) = k_perp sin(k . theta)

with ``k_perp = (k2, -k1)``. They are divergence free and advect themselves
trivially (``(A_k . grad) A_k = 0``) because ``k . k_perp = 0``.

Since ``A_{-k} = A_k`` and ``B_{-k} = -B_k``, a :class:`Spectrum` stores one
representative of each pair ``{k, -k}`` (the canonical half-lattice), and every
mode sum in the package runs over exactly the stored set.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np


class SpectrumError(ValueError):
    """Invalid wave vector or spectrum."""


@dataclass(frozen=True, order=True)
class WaveVector:
    k1: int
    k2: int

    def __post_init__(self):
        if int(self.k1) != self.k1 or int(self.k2) != self.k2:
            raise SpectrumError("wave vector components must be integers")
        object.__setattr__(self, "k1", int(self.k1))
        object.__setattr__(self, "k2", int(self.k2))
        if self.k1 == 0 and self.k2 == 0:
            raise SpectrumError("wave vector must be nonzero")

    @property
    def norm_sq(self) -> int:
        return self.k1 * self.k1 + self.k2 * self.k2

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm_sq)

    def perp(self) -> "WaveVector":
        return WaveVector(self.k2, -self.k1)

    def is_canonical(self) -> bool:
        return self.k2 > 0 or (self.k2 == 0 and self.k1 > 0)

    def canonical(self) -> "WaveVector":
        """Representative of ``{k, -k}`` on the half-lattice."""
        return self if self.is_canonical() else WaveVector(-self.k1, -self.k2)

    def as_array(self) -> np.ndarray:
        return np.array([self.k1, self.k2], dtype=float)


def _as_wave(k) -> WaveVector:
    return k if isinstance(k, WaveVector) else WaveVector(*k)


def perp(k) -> WaveVector:
    """Quarter turn ``(k1, k2) -> (k2, -k1)``."""
    return _as_wave(k).perp()


def eval_A(k, theta) -> np.ndarray:
    """``A_k`` at ``theta`` (shape ``(..., 2)``)."""
    k = _as_wave(k)
    theta = np.asarray(theta, dtype=float)
    c = np.cos(k.k1 * theta[..., 0] + k.k2 * theta[..., 1])
    return np.stack([k.k2 * c, -k.k1 * c], axis=-1)


def eval_B(k, theta) -> np.ndarray:
    """``B_k`` at ``theta`` (shape ``(..., 2)``)."""
    k = _as_wave(k)
    theta = np.asarray(theta, dtype=float)
    s = np.sin(k.k1 * theta[..., 0] + k.k2 * theta[..., 1])
    return np.stack([k.k2 * s, -k.k1 * s], axis=-1)


@dataclass(frozen=True)
class Spectrum:
    """Excited modes with amplitudes ``lambda_k``, noise speed ``nu`` and optional band limit.

    Parameters
    ----------
    modes
        Pairs ``(k, lambda)``. Non-canonical ``k`` are replaced by ``-k``;
        giving both ``k`` and ``-k`` is an error.
    nu
        Viscosity, which is also the speed of the Brownian flow.
    radius
        Band limit ``R``; every stored ``lambda`` must vanish beyond it.
    require_closure
        Enforce that ``perp(k)`` is stored with the same amplitude as ``k``.
        Only switched off to build deliberately anisotropic negative controls.
    """

    modes: tuple
    nu: float = 1.0
    radius: float | None = None
    require_closure: bool = True
    kvecs: np.ndarray = field(init=False, repr=False, compare=False)
    lams: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.nu > 0):
            raise SpectrumError("nu must be positive")
        if self.radius is not None and not (self.radius > 0):
            raise SpectrumError("radius must be positive")
        canon = {}
        for k, lam in self.modes:
            k = _as_wave(k).canonical()
            lam = float(lam)
            if lam < 0 or not math.isfinite(lam):
                raise SpectrumError(f"amplitude for {k} must be finite and nonnegative")
            if k in canon:
                raise SpectrumError(f"mode {k} given twice (k and -k are the same mode)")
            canon[k] = lam
        by_norm = {}
        for k, lam in canon.items():
            prev = by_norm.setdefault(k.norm_sq, lam)
            if prev != lam:
                raise SpectrumError(
                    f"amplitudes must depend on |k| only; |k|^2={k.norm_sq} has {prev} and {lam}"
                )
            if self.radius is not None and lam > 0 and k.norm > self.radius + 1e-12:
                raise SpectrumError(f"mode {k} lies outside the band limit R={self.radius}")
        if self.require_closure:
            for k, lam in canon.items():
                if lam > 0 and canon.get(k.perp().canonical()) != lam:
                    raise SpectrumError(
                        f"spectrum is not closed under quarter turns: {k} stored "
                        f"but {k.perp().canonical()} is missing"
                    )
        ordered = tuple(sorted(canon.items(), key=lambda kv: (kv[0].norm_sq, kv[0].k2, kv[0].k1)))
        object.__setattr__(self, "modes", ordered)
        kv = np.array([k.as_array() for k, _ in ordered]).reshape(-1, 2)
        object.__setattr__(self, "kvecs", kv)
        object.__setattr__(self, "lams", np.array([lam for _, lam in ordered], dtype=float))

    # construction -----------------------------------------------------
    @classmethod
    def from_shells(cls, shells: Mapping[int, float], nu=1.0, radius=None, **kw) -> "Spectrum":
        """All lattice vectors with ``|k|^2 = n`` get amplitude ``shells[n]``."""
        modes = []
        for n, lam in shells.items():
            n = int(n)
            if n <= 0:
                raise SpectrumError("shell |k|^2 must be positive")
            kmax = math.isqrt(n)
            for k1 in range(-kmax, kmax + 1):
                r = n - k1 * k1
                k2 = math.isqrt(r)
                if k2 * k2 != r:
                    continue
                for kk2 in {k2, -k2}:
                    w = WaveVector(k1, kk2)
                    if w.is_canonical():
                        modes.append((w, lam))
        return cls(tuple(modes), nu=nu, radius=radius, **kw)

    @classmethod
    def from_power_law(cls, radius, amplitude=1.0, exponent=0.0, nu=1.0) -> "Spectrum":
        """``lambda(|k|) = amplitude * |k|**exponent`` for every ``0 < |k| <= radius``."""
        top = int(math.floor(radius * radius + 1e-9))
        shells = {n: amplitude * math.sqrt(n) ** exponent for n in range(1, top + 1)}
        spec = cls.from_shells(shells, nu=nu, radius=radius)
        return spec

    # derived quantities ----------------------------------------------
    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def degenerate(self) -> bool:
        return self.n_modes == 0 or not np.any(self.lams > 0)

    @property
    def amplitudes(self) -> np.ndarray:
        """Noise amplitude ``lambda_k sqrt(nu)`` per stored mode."""
        return self.lams * math.sqrt(self.nu)

    @property
    def norms_sq(self) -> np.ndarray:
        return np.sum(self.kvecs**2, axis=1)

    def band(self, radius) -> np.ndarray:
        """Mask of stored modes with ``|k| <= radius``."""
        return self.norms_sq <= radius * radius + 1e-9

    def is_closed(self) -> bool:
        canon = {k: lam for k, lam in self.modes}
        return all(lam == 0 or canon.get(k.perp().canonical()) == lam for k, lam in canon.items())

    def scaled(self, factor=1.0, nu=None) -> "Spectrum":
        return Spectrum(
            tuple((k, lam * factor) for k, lam in self.modes),
            nu=self.nu if nu is None else nu,
            radius=self.radius,
            require_closure=self.require_closure,
        )

    def normalized(self) -> "Spectrum":
        """Rescale every amplitude so that the generator constant equals one."""
        c = generator_constant(self)
        if c == 0:
            raise SpectrumError("cannot normalize a degenerate spectrum")
        return self.scaled(1.0 / math.sqrt(c))

    # serialization ----------------------------------------------------
    def to_config(self) -> dict:
        return {
            "modes": [[k.k1, k.k2, lam] for k, lam in self.modes],
            "nu": self.nu,
            "radius": self.radius,
            "require_closure": self.require_closure,
        }

    @classmethod
    def from_config(cls, block: Mapping) -> "Spectrum":
        """Build from a config block.

        Accepted keys: ``modes`` (list of ``[k1, k2, lambda]``) or ``shells``
        (mapping ``|k|^2 -> lambda``) or ``power_law`` (``amplitude``,
        ``exponent``; needs ``radius``); plus ``nu``, ``radius``, ``normalize``
        and ``require_closure``.
        """
        nu = float(block.get("nu", 1.0))
        closure = bool(block.get("require_closure", True))
        radius = block.get("radius")
        radius = None if radius is None else float(radius)
        sources = [key for key in ("modes", "shells", "power_law") if key in block]
        if len(sources) != 1:
            raise SpectrumError("spectrum block needs exactly one of: modes, shells, power_law")
        if "modes" in block:
            modes = []
            for entry in block["modes"]:
                if len(entry) != 3:
                    raise SpectrumError("each mode must be [k1, k2, lambda]")
                modes.append((WaveVector(entry[0], entry[1]), float(entry[2])))
            spec = cls(tuple(modes), nu=nu, radius=radius, require_closure=closure)
        elif "shells" in block:
            spec = cls.from_shells({int(n): float(v) for n, v in block["shells"].items()}, nu=nu, radius=radius,
                                   require_closure=closure)
        else:
            if radius is None:
                raise SpectrumError("power_law spectrum needs a radius")
            law = block["power_law"]
            spec = cls.from_power_law(
                radius, amplitude=float(law.get("amplitude", 1.0)),
                exponent=float(law.get("exponent", 0.0)), nu=nu,
            )
        if block.get("normalize", False):
            spec = spec.normalized()
        return spec


def generator_constant(s: Spectrum) -> float:
    """``C`` with ``2C = sum_k lambda_k^2`` over the stored modes."""
    if s.degenerate:
        warnings.warn("degenerate spectrum: no excited modes", RuntimeWarning, stacklevel=2)
        return 0.0
    return 0.5 * float(np.sum(s.lams**2))


# drift fields ---------------------------------------------------------

class DriftField:
    """Base class; ``ns_exact`` marks fields known to solve Navier-Stokes exactly."""

    ns_exact = False

    def __call__(self, t, theta) -> np.ndarray:
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ZeroDrift(DriftField):
    ns_exact = True

    def __call__(self, t, theta):
        return np.zeros(np.shape(theta), dtype=float)

    def to_config(self):
        return {"type": "zero"}


@dataclass(frozen=True)
class SingleModeDrift(DriftField):
    """``u(t, theta) = exp(-nu |k|^2 t) (a A_k(theta) + b B_k(theta))``."""

    k: WaveVector
    a: float = 1.0
    b: float = 0.0
    nu: float = 1.0
    ns_exact = True

    def __post_init__(self):
        object.__setattr__(self, "k", _as_wave(self.k))
        if not (self.nu > 0):
            raise SpectrumError("nu must be positive")

    def decay(self, t):
        return np.exp(-self.nu * self.k.norm_sq * np.asarray(t, dtype=float))

    def __call__(self, t, theta):
        theta = np.asarray(theta, dtype=float)
        ph = self.k.k1 * theta[..., 0] + self.k.k2 * theta[..., 1]
        amp = self.decay(t) * (self.a * np.cos(ph) + self.b * np.sin(ph))
        return np.stack([self.k.k2 * amp, -self.k.k1 * amp], axis=-1)

    def jacobian(self, t, theta):
        """Analytic ``du_i/dtheta_j``, shape ``(..., 2, 2)``."""
        theta = np.asarray(theta, dtype=float)
        ph = self.k.k1 * theta[..., 0] + self.k.k2 * theta[..., 1]
        dphase = self.decay(t) * (-self.a * np.sin(ph) + self.b * np.cos(ph))
        kp = self.k.perp().as_array()
        return dphase[..., None, None] * np.outer(kp, self.k.as_array())

    def l2_norm(self, t) -> float:
        """``||u(t)||`` under the normalized measure."""
        return float(self.decay(t) * self.k.norm * math.sqrt(0.5 * (self.a**2 + self.b**2)))

    def to_config(self):
        return {"type": "single_mode", "k": [self.k.k1, self.k.k2], "a": self.a, "b": self.b}


@dataclass(frozen=True)
class CustomDrift(DriftField):
    """User-supplied ``(t, theta) -> vector``; carries no Navier-Stokes guarantee."""

    fn: Callable = None
    label: str = "custom"
    ns_exact = False

    def __call__(self, t, theta):
        return np.asarray(self.fn(t, np.asarray(theta, dtype=float)), dtype=float)

    def to_config(self):
        return {"type": "custom", "label": self.label}


def eval_drift(u: DriftField, t, theta) -> np.ndarray:
    if t < 0:
        raise ValueError("time must be nonnegative")
    return u(t, theta)


def sum_of_modes(fields: Iterable[SingleModeDrift], label="mode-sum") -> CustomDrift:
    """Superpose single-mode fields; generally not a Navier-Stokes solution."""
    fields = tuple(fields)
    return CustomDrift(lambda t, th: sum(f(t, th) for f in fields), label=label)


def grad_bound_constants(u: DriftField) -> tuple[float, float]:
    """``(c1, c2)`` with ``|grad u(t, .)| <= c1 exp(-c2 t)`` in operator norm."""
    if isinstance(u, ZeroDrift):
        return 0.0, 0.0
    if isinstance(u, SingleModeDrift):
        return float(u.k.norm_sq * math.hypot(u.a, u.b)), float(u.nu * u.k.norm_sq)
    raise TypeError("gradient bound is only available for zero and single-mode drifts")


def drift_from_config(block: Mapping | None, nu: float) -> DriftField:
    if not block or block.get("type", "zero") == "zero":
        return ZeroDrift()
    kind = block["type"]
    if kind == "single_mode":
        k1, k2 = block["k"]
        return SingleModeDrift(WaveVector(k1, k2), float(block.get("a", 1.0)), float(block.get("b", 0.0)), nu=nu)
    raise SpectrumError(f"unknown drift type {kind!r} (config supports zero, single_mode)")
