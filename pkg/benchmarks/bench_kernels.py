"""Timing comparison: compiled recursion kernels vs the pure-Python mirror.

Run from the repo root:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from tailrisk._core import _pyref

try:
    from tailrisk._core import _recursions as compiled
except ImportError:
    compiled = None

from tailrisk.model import ModelParams
from tailrisk.simulate import simulate_risk_system, table_params


def time_call(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    T = 3000
    params = table_params(0.05)
    sim = simulate_risk_system(params, T, seed=42)
    r = np.ascontiguousarray(sim.returns)
    f = np.ascontiguousarray(sim.factors)
    logx = np.ascontiguousarray(np.log(sim.x))
    p = np.ascontiguousarray(params.pack())
    args_filter = (r, f, logx, p, sim.q0, sim.gap0)
    args_nll = (r, f, logx, p, sim.q0, sim.gap0, 0.05, params.meas_noise_sd)

    eps = np.ascontiguousarray(np.random.default_rng(0).standard_normal(T))
    gp = np.ascontiguousarray(np.array([0.05, 0.08, 0.90]))
    args_garch = (eps, gp, 0, 1.0, 0, 0.0)

    rows = []
    for name, args, pyfn, cfn in [
            ("risk_filter(T=3000)", args_filter, _pyref.risk_filter,
             compiled.risk_filter if compiled else None),
            ("risk_joint_nll(T=3000)", args_nll, _pyref.risk_joint_nll,
             compiled.risk_joint_nll if compiled else None),
            ("garch_nll(T=3000)", args_garch, _pyref.garch_nll,
             compiled.garch_nll if compiled else None)]:
        t_py = time_call(pyfn, *args)
        t_c = time_call(cfn, *args) if cfn else float("nan")
        rows.append((name, t_py, t_c))

    print(f"{'kernel':<26}{'python':>12}{'compiled':>12}{'speedup':>10}")
    for name, t_py, t_c in rows:
        speed = t_py / t_c if t_c == t_c and t_c > 0 else float("nan")
        print(f"{name:<26}{t_py * 1e3:>10.2f}ms{t_c * 1e3:>10.3f}ms{speed:>9.0f}x")
    if compiled is None:
        print("\ncompiled extension not available; build it with `pip install -e .`")


if __name__ == "__main__":
    main()
