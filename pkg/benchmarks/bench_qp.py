"""Benchmark the compiled QP kernel against the pure-NumPy fallback.

Runs identical problem batches through both backends, verifies that statuses,
active sets, and solutions agree (solutions to 1e-10; the kernels schedule
floating-point operations differently, so the last ulp can differ), and
reports wall-clock timings.

Usage: python benchmarks/bench_qp.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from adampc import qp, sim


def random_batch(rng, count, n, m):
    probs = []
    for _ in range(count):
        L = rng.normal(size=(n, n))
        H = L @ L.T + 0.5 * np.eye(n)
        f = rng.normal(size=n)
        A = rng.normal(size=(m, n))
        b = rng.uniform(0.5, 3.0, size=m)
        probs.append((H, f, A, b))
    return probs


def time_backend(probs, backend, repeats):
    best = np.inf
    sols = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        sols = [
            qp.solve(qp.QuadraticProgram(H, f, A, b), backend=backend)
            for H, f, A, b in probs
        ]
        best = min(best, time.perf_counter() - t0)
    return best, sols


def bench_synthetic(repeats):
    rng = np.random.default_rng(99)
    print(f"{'problem set':<28}{'pure':>10}{'compiled':>10}{'speedup':>9}")
    for label, count, n, m in (
        ("small  (n=2,  m=6,  x200)", 200, 2, 6),
        ("medium (n=10, m=40, x50)", 50, 10, 40),
        ("large  (n=20, m=80, x20)", 20, 20, 80),
    ):
        probs = random_batch(rng, count, n, m)
        t_pure, sols_pure = time_backend(probs, "pure", repeats)
        t_comp, sols_comp = time_backend(probs, "compiled", repeats)
        for a, b in zip(sols_pure, sols_comp):
            assert a.status == b.status
            assert a.active_set == b.active_set
            if a.solution is not None:
                assert np.allclose(a.solution, b.solution, atol=1e-10, rtol=0)
        print(f"{label:<28}{t_pure:>9.3f}s{t_comp:>9.3f}s{t_pure / t_comp:>8.2f}x")


def bench_closed_loop(repeats):
    scenario = sim.canonical_scenario(T=40)
    prepared = sim.prepare(scenario)
    x0 = np.array([-1.5, 0.5])
    print(f"\n{'closed-loop run (T=40)':<28}{'time':>10}")
    for backend in ("pure", "compiled"):
        prepared.context.qp_backend = backend
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            log = sim.run(scenario, x0, scenario.theta_hat0, prepared=prepared)
            best = min(best, time.perf_counter() - t0)
            assert log.status == "completed"
        print(f"{backend:<28}{best:>9.3f}s")
    prepared.context.qp_backend = None


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    if not qp.HAVE_COMPILED:
        raise SystemExit("compiled kernel not built; nothing to compare")
    print(f"default backend: {qp.BACKEND_NAME}\n")
    bench_synthetic(args.repeats)
    bench_closed_loop(args.repeats)


if __name__ == "__main__":
    main()
