"""Mapping accuracy on refined unit-square meshes.

Samples the smooth wave field on a triangulated unit square with spacing h,
maps it onto a fixed 23x23-cell vertex grid and prints the error per method,
followed by the fitted convergence order.

    python3 demos/mapping_convergence.py
"""

import numpy as np

from cplkit.mapping import build_mapping, mapping_error, wave_function
from cplkit.mesh import Mesh


def unit_square(n, name):
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
    tris = np.vstack([np.column_stack([a, b, d]), np.column_stack([a, d, c])])
    return Mesh(name, np.column_stack([X.ravel(), Y.ravel()]), triangles=tris)


def main():
    g = np.linspace(0.0, 1.0, 24)
    X, Y = np.meshgrid(g, g, indexing="ij")
    out = Mesh("out", np.column_stack([X.ravel(), Y.ravel()]))

    hs = []
    errs = {"nn": [], "np": [], "rbf-ctps (r=5h)": []}
    print(f"{'h':>8} {'nn':>12} {'np':>12} {'rbf-ctps':>12}")
    for n in (8, 16, 32, 64):
        h = 1.0 / n
        src = unit_square(n, "in")
        row = [
            mapping_error(src, out, build_mapping("nearest-neighbor", src, out), wave_function),
            mapping_error(src, out, build_mapping("nearest-projection", src, out), wave_function),
            mapping_error(src, out, build_mapping("rbf-compact-tps-c2", src, out, "consistent", 5 * h),
                          wave_function),
        ]
        hs.append(h)
        for key, e in zip(errs, row):
            errs[key].append(e)
        print(f"{h:8.4f} " + " ".join(f"{e:12.3e}" for e in row))

    for key, e in errs.items():
        order = np.polyfit(np.log(hs), np.log(e), 1)[0]
        print(f"fitted order {key}: {order:.2f}")


if __name__ == "__main__":
    main()
