"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json]

Kernel timings call each backend directly on the same inputs. The end-to-end
row runs a 10^5-trial leakage game in a subprocess per backend, selected with
POQM_PURE_PYTHON.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from poqm import kernels
from poqm.qsim import haar_unitary

END_TO_END = (
    "import time; from poqm.adversary import breidbart_strategy; "
    "from poqm.games import LoccGame, estimate_acceptance; "
    "t=time.perf_counter(); estimate_acceptance(LoccGame(breidbart_strategy(), 16), 100000, 0); "
    "print(time.perf_counter()-t)"
)


def cases(rng):
    T, n = 20_000, 16
    phi = rng.integers(0, 4, size=(T, n)) * (np.pi / 4)
    angle = np.full((T, n), np.pi / 8)
    u = rng.random((T, n))
    probs = rng.random((T, 8))
    probs /= probs.sum(axis=1, keepdims=True)
    a = rng.integers(0, 2, size=(T, n), dtype=np.uint8)
    b = a.copy()
    b[::3, 0] ^= 1
    q = 14
    amps = rng.standard_normal(1 << q) + 1j * rng.standard_normal(1 << q)
    amps /= np.linalg.norm(amps)
    gate = haar_unitary(2, rng)
    return {
        "measure_product 20000x16": lambda k: k.measure_product(phi, angle, u),
        "sample_categorical 20000x8": lambda k: k.sample_categorical(probs, u[:, 0].copy()),
        "rows_equal 20000x16": lambda k: k.rows_equal(a, b),
        "apply_1q 14 qubits": lambda k: k.apply_1q(amps.copy(), q, 7, gate),
        "prob_zero 14 qubits": lambda k: k.prob_zero(amps, q, 7),
        "collapse_drop 14 qubits": lambda k: k.collapse_drop(amps, q, 7, 0),
    }


def end_to_end(pure: bool) -> float:
    env = dict(os.environ)
    env.pop("POQM_PURE_PYTHON", None)
    if pure:
        env["POQM_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    backends = kernels.backends()
    rows = []
    for name, fn in cases(np.random.default_rng(0)).items():
        row = {"case": name}
        for bname, impl in backends.items():
            row[bname] = min(timeit.repeat(lambda: fn(impl), number=3, repeat=args.repeat)) / 3
        rows.append(row)
    e2e = {"case": "locc game n=16, 1e5 trials", "python": end_to_end(True)}
    if "cython" in backends:
        e2e["cython"] = end_to_end(False)
    rows.append(e2e)
    if args.json:
        print(json.dumps({"backend_default": kernels.BACKEND, "rows": rows}, indent=2))
        return
    print(f"{'case':32} {'python (ms)':>12} {'cython (ms)':>12} {'speedup':>8}")
    for r in rows:
        py = r["python"] * 1e3
        cy = r.get("cython")
        cy_s = f"{cy * 1e3:12.3f}" if cy is not None else f"{'n/a':>12}"
        sp = f"{r['python'] / cy:8.1f}" if cy else f"{'':>8}"
        print(f"{r['case']:32} {py:12.3f} {cy_s} {sp}")


if __name__ == "__main__":
    main()
