"""Euler-Maruyama evolution of one or two coupled Brownian flows on the torus.

Both flows of a pair see the same noise increments, so their difference
isolates the sensitivity to the initial diffeomorphism. The Stratonovich
correction of the spectral noise is identically zero (every eigenfield
advects itself trivially), so the plain Ito step is the Stratonovich step.
"""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .spectrum import DriftField, Spectrum, ZeroDrift

TWO_PI = 2.0 * math.pi


def wrap_positions(x):
    """Reduce coordinates to ``[0, 2 pi)``."""
    y = np.mod(x, TWO_PI)
    # mod of a tiny negative number rounds up to exactly 2 pi
    y[y >= TWO_PI] = 0.0
    return y


def label_grid(grid_n: int) -> np.ndarray:
    """Uniform labels ``2 pi (i, j) / n``, shape ``(n, n, 2)``, indexed ``[i, j]``."""
    a = TWO_PI * np.arange(grid_n) / grid_n
    t1, t2 = np.meshgrid(a, a, indexing="ij")
    return np.stack([t1, t2], axis=-1)


@dataclass
class DiffeoState:
    positions: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 3 or pos.shape[0] != pos.shape[1] or pos.shape[2] != 2:
            raise ValueError("positions must have shape (n, n, 2)")
        self.positions = wrap_positions(pos.copy())

    @property
    def grid_n(self) -> int:
        return self.positions.shape[0]

    @property
    def flat(self) -> np.ndarray:
        return self.positions.reshape(-1, 2)

    @classmethod
    def from_map(cls, phi: Callable, grid_n: int, time=0.0) -> "DiffeoState":
        return cls(phi(label_grid(grid_n)), time)

    @classmethod
    def identity(cls, grid_n: int) -> "DiffeoState":
        return cls(label_grid(grid_n))

    def copy(self) -> "DiffeoState":
        return DiffeoState(self.positions.copy(), self.time)


# initial diffeomorphisms -----------------------------------------------------

def translation(c1, c2):
    def phi(theta):
        return theta + np.array([c1, c2], dtype=float)
    return phi


def shear(amplitude, axis=0, wavenumber=1, phase=0.0):
    """``theta_axis += amplitude * sin(wavenumber * theta_other + phase)``; area preserving."""
    if axis not in (0, 1):
        raise ValueError("axis must be 0 or 1")
    other = 1 - axis

    def phi(theta):
        out = np.array(theta, dtype=float, copy=True)
        out[..., axis] += amplitude * np.sin(wavenumber * theta[..., other] + phase)
        return out
    return phi


def compose(*maps):
    """``compose(f, g)(x) = f(g(x))``."""
    def phi(theta):
        for m in reversed(maps):
            theta = m(theta)
        return theta
    return phi


def oblique_shear(v, amplitude, phase=0.0):
    """``theta += amplitude * (v_perp/|v|) sin(v . theta + phase)`` for an integer vector ``v``.

    Points move along the level lines of ``v . theta``, so the map is an
    area-preserving diffeomorphism for every amplitude.
    """
    v = np.asarray(v, dtype=float)
    if not np.all(v == np.round(v)) or not np.any(v):
        raise ValueError("v must be a nonzero integer vector")
    direction = np.array([v[1], -v[0]]) / np.hypot(v[0], v[1])

    def phi(theta):
        theta = np.asarray(theta, dtype=float)
        w = amplitude * np.sin(theta @ v + phase)
        return theta + w[..., None] * direction
    return phi


SHEAR_DIRECTIONS = ((1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2))


def random_shear_map(rng, max_amplitude=0.5, n_shears=3):
    """Composition of ``n_shears`` oblique shears with random directions, amplitudes and phases."""
    maps = []
    for _ in range(n_shears):
        v = SHEAR_DIRECTIONS[int(rng.integers(len(SHEAR_DIRECTIONS)))]
        maps.append(oblique_shear(v, rng.uniform(-max_amplitude, max_amplitude), rng.uniform(0, TWO_PI)))
    return compose(*maps)


# noise -----------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseIncrement:
    """Per-mode increments ``(dx_k, dy_k)``, each ``N(0, dt)``; shape ``(M, 2)``."""

    values: np.ndarray

    @property
    def dx(self):
        return self.values[:, 0]

    @property
    def dy(self):
        return self.values[:, 1]


def path_rng(seed: int, path_index: int = 0) -> np.random.Generator:
    """Counter-based (Philox) stream owned by one path of an ensemble."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(path_index)])))


def sample_noise(rng: np.random.Generator, s: Spectrum, dt: float) -> NoiseIncrement:
    if not dt > 0:
        raise ValueError("dt must be positive")
    return NoiseIncrement(rng.standard_normal((s.n_modes, 2)) * math.sqrt(dt))


def noise_velocity(s: Spectrum, pos, noise) -> np.ndarray:
    """Displacement ``sum_k lambda_k sqrt(nu) (A_k dx_k + B_k dy_k)`` at ``pos`` (``(P, N, 2)``)."""
    return _kernels.noise_displacement(pos, s.kvecs, s.amplitudes, noise)


def step(state: DiffeoState, s: Spectrum, u: DriftField, w: NoiseIncrement, dt: float) -> DiffeoState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    pos = state.flat[None]
    disp = noise_velocity(s, pos, w.values[None])[0]
    if not isinstance(u, ZeroDrift):
        disp = disp + u(state.time, state.flat) * dt
    new = wrap_positions(state.flat + disp).reshape(state.positions.shape)
    return DiffeoState(new, state.time + dt)


# coupled paths -------------------------------------------------------------------

@dataclass
class CoupledPath:
    """Synchronized snapshots of two flows driven by the same noise."""

    times: np.ndarray
    g: np.ndarray
    gt: np.ndarray
    dt: float
    seed: int
    record_every: int = 1
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid_n(self) -> int:
        return self.g.shape[1]

    def state(self, i: int, which: str = "g") -> DiffeoState:
        arr = self.g if which == "g" else self.gt
        return DiffeoState(arr[i], float(self.times[i]))


def evolve_coupled(phi: DiffeoState, psi: DiffeoState, s: Spectrum, u: DriftField, dt: float,
                   n_steps: int, seed: int, record_every: int = 1, path_index: int = 0) -> CoupledPath:
    """Run ``n_steps`` synchronized steps; one shared noise increment per step."""
    if phi.grid_n != psi.grid_n:
        raise ValueError("phi and psi must live on the same label grid")
    if n_steps < 0 or record_every < 1:
        raise ValueError("n_steps must be >= 0 and record_every >= 1")
    rng = path_rng(seed, path_index)
    n = phi.grid_n
    pos = np.stack([phi.flat, psi.flat])  # both flows advanced as one batch
    t = phi.time
    times, gs, gts = [t], [phi.positions.copy()], [psi.positions.copy()]
    for i in range(1, n_steps + 1):
        w = sample_noise(rng, s, dt).values
        disp = noise_velocity(s, pos, np.broadcast_to(w, (2,) + w.shape))
        if not isinstance(u, ZeroDrift):
            disp += u(t, pos) * dt
        pos = wrap_positions(pos + disp)
        t = phi.time + i * dt
        if i % record_every == 0 or i == n_steps:
            times.append(t)
            gs.append(pos[0].reshape(n, n, 2).copy())
            gts.append(pos[1].reshape(n, n, 2).copy())
    return CoupledPath(np.array(times), np.array(gs), np.array(gts), dt, seed, record_every)


def evolve_ensemble(g0, gt0, s: Spectrum, u: DriftField, dt: float, n_steps: int, seed: int,
                    n_paths: int, observer: Callable | None = None, t0: float = 0.0,
                    first_path: int = 0):
    """Advance ``n_paths`` independent coupled pairs in lock step.

    ``g0``/``gt0`` are label arrays of shape ``(N, 2)`` (shared start) or
    ``(P, N, 2)``. Path ``p`` draws its noise from ``path_rng(seed, first_path + p)``,
    so results do not depend on how an ensemble is batched. ``observer(i, t, g, gt, noise)``
    is called before the first step (``i=0``, ``noise=None``) and after every step.
    Returns the final ``(g, gt)`` arrays.
    """
    g = np.array(np.broadcast_to(g0, (n_paths,) + np.shape(g0)[-2:]), dtype=float)
    gt = np.array(np.broadcast_to(gt0, (n_paths,) + np.shape(gt0)[-2:]), dtype=float)
    N = g.shape[1]
    rngs = [path_rng(seed, first_path + p) for p in range(n_paths)]
    sq = math.sqrt(dt)
    M = s.n_modes
    if observer is not None:
        observer(0, t0, g, gt, None)
    pos = np.concatenate([g, gt], axis=0)
    for i in range(1, n_steps + 1):
        t = t0 + (i - 1) * dt
        noise = np.stack([r.standard_normal((M, 2)) for r in rngs]) * sq
        disp = noise_velocity(s, pos, np.concatenate([noise, noise], axis=0))
        if not isinstance(u, ZeroDrift):
            disp += u(t, pos) * dt
        pos = wrap_positions(pos + disp)
        if observer is not None:
            observer(i, t0 + i * dt, pos[:n_paths], pos[n_paths:], noise)
    return pos[:n_paths].reshape(n_paths, N, 2), pos[n_paths:].reshape(n_paths, N, 2)


# monitors --------------------------------------------------------------------

def _wrapped_diff(a):
    return np.pi - np.mod(np.pi - a, TWO_PI)


def volume_distortion(state: DiffeoState) -> float:
    """``max |det D(label -> position) - 1|`` with periodic centered differences."""
    n = state.grid_n
    if n < 4:
        raise ValueError("volume_distortion needs grid_n >= 4")
    pos = state.positions
    h = TWO_PI / n
    d_i = _wrapped_diff(np.roll(pos, -1, axis=0) - np.roll(pos, 1, axis=0)) / (2 * h)
    d_j = _wrapped_diff(np.roll(pos, -1, axis=1) - np.roll(pos, 1, axis=1)) / (2 * h)
    det = d_i[..., 0] * d_j[..., 1] - d_i[..., 1] * d_j[..., 0]
    return float(np.max(np.abs(det - 1.0)))


def min_neighbour_separation(state: DiffeoState) -> float:
    """Smallest intrinsic distance between images of adjacent labels."""
    pos = state.positions
    out = np.inf
    for axis in (0, 1):
        d = _wrapped_diff(np.roll(pos, -1, axis=axis) - pos)
        out = min(out, float(np.min(np.hypot(d[..., 0], d[..., 1]))))
    return out


def check_no_collision(state: DiffeoState, dt: float, tol: float = 1e-12) -> bool:
    """Warn (and return False) when two neighbouring labels have merged."""
    sep = min_neighbour_separation(state)
    if sep <= tol:
        warnings.warn(
            f"labels collided at t={state.time:g} (separation {sep:.3g}); "
            f"halve dt (currently {dt:g}) and rerun", RuntimeWarning, stacklevel=2,
        )
        return False
    return True


# export ------------------------------------------------------------------------

def write_path_csv(path: CoupledPath, dest, which: str = "both", float_fmt: str = "%.17g"):
    """Rows ``t, flow, label_i, label_j, pos_1, pos_2`` for every recorded snapshot."""
    dest = Path(dest)
    n = path.grid_n
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    flows = [("g", path.g), ("gt", path.gt)] if which == "both" else [(which, getattr(path, which))]
    with open(dest, "w", newline="") as fh:
        fh.write("t,flow,label_i,label_j,pos_1,pos_2\n")
        for k, t in enumerate(path.times):
            for name, arr in flows:
                block = arr[k]
                for i, j, p1, p2 in zip(ii.ravel(), jj.ravel(), block[..., 0].ravel(), block[..., 1].ravel()):
                    fh.write(f"{float_fmt % t},{name},{i},{j},{float_fmt % p1},{float_fmt % p2}\n")
    return dest


_MAGIC = b"TFLW1\0\0\0"
_HEADER = struct.Struct("<8sIIIdq")  # magic, grid_n, n_snapshots, n_paths, dt, seed


def save_ensemble(dest, snapshots, dt: float, seed: int):
    """Binary ensemble file.

    Layout (little endian): 8-byte magic ``TFLW1``, ``uint32 grid_n``,
    ``uint32 n_snapshots``, ``uint32 n_paths``, ``float64 dt``, ``int64 seed``,
    then float64 positions with shape ``(n_paths, n_snapshots, 2 flows, grid_n, grid_n, 2)``.
    """
    arr = np.ascontiguousarray(snapshots, dtype="<f8")
    if arr.ndim != 6 or arr.shape[2] != 2 or arr.shape[-1] != 2:
        raise ValueError("snapshots must have shape (paths, snapshots, 2, n, n, 2)")
    n_paths, n_snap, _, n, _, _ = arr.shape
    with open(dest, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, n, n_snap, n_paths, float(dt), int(seed)))
        fh.write(arr.tobytes())


def load_ensemble(src):
    with open(src, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, n, n_snap, n_paths, dt, seed = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise ValueError("not a torusflow ensemble file")
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(n_paths, n_snap, 2, n, n, 2)
    return {"grid_n": n, "n_snapshots": n_snap, "n_paths": n_paths, "dt": dt, "seed": seed,
            "positions": data.copy()}
