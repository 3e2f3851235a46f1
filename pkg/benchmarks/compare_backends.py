"""Time the compiled extension against the pure-python integration route.

Runs each bundled scenario on both backends, reports best-of-N wall time,
the speedup, and the worst elementwise deviation between the two logged
state trajectories (they implement the same arithmetic, so the deviation
should sit at roundoff).
"""

import argparse
import time

import numpy as np

import dualadapt as da
from dualadapt import scenarios
from dualadapt.simulate import run_scenario


def best_time(cfg, backend, repeat):
    best = float("inf")
    log = None
    for _ in range(repeat):
        start = time.perf_counter()
        log = run_scenario(cfg, backend=backend)
        best = min(best, time.perf_counter() - start)
    return best, log


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--scenarios",
        default="g1,g2,g3,g4",
        help="comma-separated bundled scenario names (default: all)",
    )
    parser.add_argument(
        "--repeat", type=int, default=1, help="take the best of N runs per backend"
    )
    parser.add_argument(
        "--horizon", type=float, default=None, help="optional horizon override"
    )
    args = parser.parse_args()

    names = [s.strip() for s in args.scenarios.split(",") if s.strip()]
    print(f"{'scenario':<12} {'python':>9} {'compiled':>9} {'speedup':>8} {'max dev':>10}")
    for name in names:
        cfg = da.load_config(scenarios.path(name))
        if args.horizon is not None:
            import json

            with open(scenarios.path(name), "r", encoding="utf-8") as fh:
                data = json.load(fh)
            data = da.apply_overrides(
                data, [f"integrator.horizon={args.horizon!r}"]
            )
            cfg = da.from_dict(data)
        t_py, log_py = best_time(cfg, "python", args.repeat)
        t_c, log_c = best_time(cfg, "compiled", args.repeat)
        dev = float(np.max(np.abs(log_py.states - log_c.states)))
        print(
            f"{name:<12} {t_py:>8.2f}s {t_c:>8.3f}s {t_py / t_c:>7.0f}x {dev:>10.1e}"
        )


if __name__ == "__main__":
    main()
