"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best wall time per kernel and backend, the speedup, and the largest
absolute difference between the two backends' outputs.
"""
import argparse
import time

import numpy as np

from updateleak import _pycore
from updateleak.learn import init_mlp

try:
    from updateleak import _core
except ImportError:
    _core = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(rng):
    n, d = 7000, 30
    X = rng.normal(size=(n, d))
    y = rng.integers(0, 2, n).astype(np.int64)
    w = rng.normal(size=d) * 0.1
    yield "logistic_loss_grad (7000x30)", lambda k: (
        lambda: k.logistic_loss_grad(X, y.astype(float), w, 0.1, 1e-3))

    Ws, bs = init_mlp([d, 128, 128, 2], np.random.default_rng(0))
    yield "mlp_loss_grad (7000x30, 128-128)", lambda k: (
        lambda: k.mlp_loss_grad(Ws, bs, X, y, 1e-3))

    order = np.random.default_rng(1).permutation(n).astype(np.int64)

    def epoch(k):
        def run():
            W2 = [W.copy() for W in Ws]
            b2 = [b.copy() for b in bs]
            vW = [np.zeros_like(W) for W in Ws]
            vb = [np.zeros_like(b) for b in bs]
            loss = k.mlp_epoch(W2, b2, vW, vb, X, y, order, 0.05, 0.5, 1e-3, 64)
            return loss, W2, b2
        return run
    yield "mlp_epoch (7000 rows, batch 64)", epoch


def flatten(out):
    if isinstance(out, (list, tuple)):
        return np.concatenate([flatten(o) for o in out]) if out else np.zeros(0)
    return np.atleast_1d(np.asarray(out, dtype=np.float64)).ravel()


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    rng = np.random.default_rng(42)
    backends = [_pycore] + ([_core] if _core is not None else [])
    if _core is None:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':36s} " + " ".join(f"{b.NAME:>10s}" for b in backends)
          + ("   speedup  max|diff|" if _core else ""))
    for name, make in cases(rng):
        res = [best_of(make(b), args.repeat) for b in backends]
        line = f"{name:36s} " + " ".join(f"{t * 1e3:8.2f}ms" for t, _ in res)
        if _core is not None:
            diff = float(np.max(np.abs(flatten(res[0][1]) - flatten(res[1][1]))))
            line += f"   {res[0][0] / res[1][0]:6.2f}x  {diff:.1e}"
        print(line)


if __name__ == "__main__":
    main()
