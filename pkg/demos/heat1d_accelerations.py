"""Partitioned 1D heat conduction against the monolithic solve.

Runs the Dirichlet and Neumann participants in two threads over loopback
sockets for several coupling setups, then prints the total number of
coupling iterations and the largest deviation from the unsplit solution.

    python3 demos/heat1d_accelerations.py
"""

import tempfile
import threading

import numpy as np

from cplkit.harness import Heat1dProblem, heat1d_config, run_participant, solve_monolithic

SETUPS = [
    ("serial-implicit", "constant"),
    ("serial-implicit", "aitken"),
    ("serial-implicit", "iqn-ils"),
    ("serial-implicit", "iqn-imvj"),
    ("parallel-implicit", "iqn-ils"),
]


def run_pair(config):
    results = {}

    def side(name):
        results[name] = run_participant(config, name, Heat1dProblem(points=50), timeout=30)

    threads = [threading.Thread(target=side, args=(s,)) for s in ("dirichlet", "neumann")]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return results


def main():
    _, ref = solve_monolithic(Heat1dProblem(points=50, dt=1e-3, windows=20))
    print(f"{'scheme':<18} {'acceleration':<12} {'iterations':>10} {'max |du|':>10}")
    for scheme, acc in SETUPS:
        with tempfile.TemporaryDirectory() as tmp:
            cfg = heat1d_config(scheme, acc, tol=1e-10, windows=20, exchange_directory=tmp, watchpoint=False)
            res = run_pair(cfg)
        u = np.concatenate([res["dirichlet"].u, res["neumann"].u[1:]])
        print(f"{scheme:<18} {acc:<12} {res['dirichlet'].iterations:>10} {np.abs(u - ref).max():>10.1e}")


if __name__ == "__main__":
    main()
