"""Compare the compiled and pure-Python kernel backends.

Run with ``python3 benchmarks/bench_kernels.py``.  Prints per-call timings
for the Coulomb terms and the Jacobi eigensolver at a few chain sizes, plus
one end-to-end normal-mode solve per backend.
"""

from __future__ import annotations

import argparse
import timeit
import warnings

import numpy as np

from ionchain import kernels
from ionchain.chain import solve_modes
from ionchain.constants import COULOMB_K, ELEMENTARY_CHARGE
from ionchain.trap import BE9, MG24, ClampWarning, fit_trap_from_reference


def _chain(n, rng):
    pos = np.zeros((n, 3))
    pos[:, 2] = np.linspace(-1, 1, n) * 5e-6 * n
    pos += rng.normal(scale=1e-8, size=pos.shape)
    return pos


def bench(name, fn, number):
    t = min(timeit.repeat(fn, number=number, repeat=3)) / number
    print(f"  {name:<34s}{t * 1e6:12.1f} us")
    return t


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[2, 4, 8])
    ap.add_argument("--number", type=int, default=200)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not available; timing the Python fallback only")
    warnings.simplefilter("ignore", ClampWarning)
    trap = fit_trap_from_reference(BE9, [12.26e6, 11.19e6, 2.69e6], MG24, [4.82e6, 3.72e6, 1.65e6])
    results = {}
    for name in backends:
        mod = kernels.get_module(name)
        print(f"[{name}]")
        for n in args.sizes:
            pos = _chain(n, rng)
            q = np.full(n, ELEMENTARY_CHARGE)
            h = rng.normal(size=(3 * n, 3 * n))
            h = h + h.T
            results[(name, "coulomb", n)] = bench(
                f"coulomb_terms N={n}", lambda: mod.coulomb_terms(pos, q, COULOMB_K), args.number
            )
            results[(name, "jacobi", n)] = bench(f"jacobi_eigh {3 * n}x{3 * n}", lambda: mod.jacobi_eigh(h), args.number)
        prev = kernels.set_backend(name)
        results[(name, "modes", 2)] = bench("solve_modes Be-Mg", lambda: solve_modes(trap, (BE9, MG24)), 20)
        kernels.set_backend(prev)
    if "cython" in backends:
        print("speed-up (python / cython)")
        for key in sorted({k[1:] for k in results}):
            print(f"  {key[0]:<10s} N={key[1]:<3d}{results[('python',) + key] / results[('cython',) + key]:8.1f}x")


if __name__ == "__main__":
    main()
