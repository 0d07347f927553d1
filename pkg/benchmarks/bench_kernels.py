"""Compare the compiled and numpy kernels on ensemble-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from torusflow import _kernels
from torusflow.spectrum import Spectrum

CASES = [
    # (label, radius of the power-law spectrum, paths, labels per path)
    ("small", 1.5, 64, 256),
    ("medium", 3, 32, 1024),
    ("large", 4, 8, 4096),
]


def inputs(radius, P, N, seed=0):
    rng = np.random.default_rng(seed)
    s = Spectrum.from_power_law(radius, exponent=-1.0)
    g = rng.uniform(0, 2 * np.pi, (P, N, 2))
    gt = g + rng.normal(0, 0.3, g.shape)
    noise = rng.normal(size=(P, s.n_modes, 2))
    return s, g, gt, noise


def bench(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = _kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy fallback is available")
    print(f"{'kernel':<20}{'case':<8}{'modes':>6}{'points':>9}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for label, radius, P, N in CASES:
        s, g, gt, noise = inputs(radius, P, N)
        kernels = {
            "noise_displacement": lambda b: _kernels.noise_displacement(g, s.kvecs, s.amplitudes, noise, backend=b),
            "mode_integrals": lambda b: _kernels.mode_integrals(g, gt, s.kvecs, backend=b),
        }
        for name, call in kernels.items():
            times = {b: bench(lambda b=b: call(b), args.repeat) for b in backends}
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            row = "".join(f"{1e3 * times[b]:>10.2f}ms" for b in backends)
            print(f"{name:<20}{label:<8}{s.n_modes:>6}{P * N:>9}{row}{speed:>9.1f}x")


if __name__ == "__main__":
    main()
