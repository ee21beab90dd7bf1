"""Time the compiled propagation kernels against the numpy fallback.

Workloads are the ones a lab-frame Rabi trace at 450 G produces: the
midpoint step unitaries of one RF period, their ordered product, and the
stroboscopic evolution sampled at 40 trace points over two Rabi periods.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json results.json]
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from nvhyperfine import _kernels_py
from nvhyperfine.dynamics import PropagationSettings, dressed_pair, on_resonance
from nvhyperfine.mixing import rabi_frequency
from nvhyperfine.model import SpinSystemConfig, build_static, drive_operator

try:
    from nvhyperfine import _kernels as _compiled
except ImportError:
    _compiled = None


def workload(manifold: int = 0):
    base = SpinSystemConfig(b_z=450.0, b1=6.0)
    c = on_resonance(base, manifold)
    dt_limit = PropagationSettings().resolve_dt(c)
    nsteps = int(np.ceil(1.0 / (c.omega_rf * dt_limit)))
    dt = 1.0 / (c.omega_rf * nsteps)
    h0 = np.ascontiguousarray(build_static(c).matrix, dtype=complex)
    v = np.ascontiguousarray(2 * c.b1 * drive_operator(c).matrix, dtype=complex)
    up, _ = dressed_pair(c, manifold)
    trace_len = 2.0 / rabi_frequency(base, manifold)
    samples = np.rint(np.linspace(0.0, trace_len, 40) / dt).astype(np.int64)
    return h0, v, c.omega_rf, dt, nsteps, np.ascontiguousarray(up), samples


def best_of(fn, repeat: int) -> float:
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def run(repeat: int) -> list[dict]:
    h0, v, freq, dt, nsteps, psi0, samples = workload()
    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    steps = _kernels_py.step_unitaries(h0, v, freq, 0.0, dt, nsteps)
    cases = {
        "step_unitaries": lambda k: (lambda: k.step_unitaries(h0, v, freq, 0.0, dt, nsteps)),
        "chain_product": lambda k: (lambda: k.chain_product(steps)),
        "evolve_periodic": lambda k: (lambda: k.evolve_periodic(steps, psi0, samples)),
    }
    rows = []
    for name, make in cases.items():
        timings = {b: best_of(make(k), repeat) for b, k in backends.items()}
        row = {"kernel": name, "steps": nsteps, "total_steps": int(samples[-1]), **timings}
        if "cython" in timings:
            row["speedup"] = timings["python"] / timings["cython"]
        rows.append(row)
    return rows


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write the timings here")
    args = parser.parse_args(argv)
    rows = run(args.repeat)
    if _compiled is None:
        print("compiled extension not built: timing the numpy fallback only")
    print(f"{'kernel':<16} {'python [ms]':>12} {'cython [ms]':>12} {'speedup':>8}")
    for r in rows:
        cy = f"{1e3 * r['cython']:12.3f}" if "cython" in r else f"{'-':>12}"
        sp = f"{r['speedup']:8.2f}" if "speedup" in r else f"{'-':>8}"
        print(f"{r['kernel']:<16} {1e3 * r['python']:12.3f} {cy} {sp}")
    print(f"({rows[0]['steps']} steps per RF period, {rows[-1]['total_steps']} steps to the last sample)")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
