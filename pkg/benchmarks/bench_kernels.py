"""Time the compiled and numpy P2 element kernels on growing meshes.

Usage: ``python benchmarks/bench_kernels.py [--repeat N] [--levels 1 2 3 4]``
"""

import argparse
import timeit

import numpy as np

from vemstab import _kernels_py
from vemstab.exactbasis import fem_mesh
from vemstab.geometry import element_sequence

try:
    from vemstab import _kernels
except ImportError:  # extension not built
    _kernels = None


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--levels", type=int, nargs="+", default=[1, 2, 3, 4])
    args = ap.parse_args(argv)

    poly = element_sequence("hanging_node", 1)
    print(f"{'level':>5} {'triangles':>9} {'python [ms]':>12} {'cython [ms]':>12} {'speedup':>8} {'max diff':>9}")
    for lev in args.levels:
        m = fem_mesh(poly, lev)
        pts = np.ascontiguousarray(m.points, dtype=float)
        tri = np.ascontiguousarray(m.triangles, dtype=np.int64)
        t_py = min(timeit.repeat(lambda: _kernels_py.element_matrices(pts, tri), number=1, repeat=args.repeat))
        if _kernels is None:
            print(f"{lev:5d} {len(tri):9d} {1e3 * t_py:12.2f} {'n/a':>12} {'n/a':>8} {'n/a':>9}")
            continue
        t_cy = min(timeit.repeat(lambda: _kernels.element_matrices(pts, tri), number=1, repeat=args.repeat))
        ref, got = _kernels_py.element_matrices(pts, tri), _kernels.element_matrices(pts, tri)
        diff = max(float(np.abs(np.asarray(a) - np.asarray(b)).max()) for a, b in zip(ref, got))
        print(f"{lev:5d} {len(tri):9d} {1e3 * t_py:12.2f} {1e3 * t_cy:12.2f} {t_py / t_cy:8.1f} {diff:9.1e}")


if __name__ == "__main__":
    main()
