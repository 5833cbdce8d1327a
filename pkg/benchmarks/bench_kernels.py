"""Compare the compiled geometry kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--points N] [--walls W] [--repeat R]
"""

import argparse
import timeit

import numpy as np

from mapaware import _pykernels

try:
    from mapaware import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=5000)
    ap.add_argument("--anchors", type=int, default=5)
    ap.add_argument("--walls", type=int, default=12)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 30, (args.points, 2))
    anchors = rng.uniform(0, 30, (args.anchors, 2))
    walls = rng.uniform(0, 30, (args.walls, 4))
    ring = np.array([[0, 0], [30, 0], [30, 20], [15, 25], [0, 20]], dtype=float)
    hole = np.array([[10, 5], [12, 5], [12, 7], [10, 7]], dtype=float)

    cases = {
        "count_crossings": lambda m: m.count_crossings(pts, anchors, walls),
        "points_in_region": lambda m: m.points_in_region(pts, (ring, hole)),
    }
    backends = {"numpy": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not available; timing numpy fallback only")

    print(f"{args.points} points, {args.anchors} anchors, {args.walls} walls, best of {args.repeat}")
    for name, fn in cases.items():
        ref = fn(_pykernels)
        times = {}
        for label, mod in backends.items():
            assert np.array_equal(fn(mod), ref), f"{label} disagrees with numpy on {name}"
            times[label] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        line = "  ".join(f"{k} {v * 1e3:8.2f} ms" for k, v in times.items())
        speed = f"  speed-up x{times['numpy'] / times['cython']:.1f}" if "cython" in times else ""
        print(f"{name:18s} {line}{speed}")


if __name__ == "__main__":
    main()
