"""Compare the compiled ray-marching kernels against the numpy fallback.

    python benchmarks/bench_render.py [--sizes 16 32 64] [--grid 16] [--samples 32] [--repeat 5]

Times one forward render and one render + gradient per configuration and
checks that both backends agree.
"""

import argparse
import timeit

import numpy as np

from distill import renderer
from distill.renderer import CameraView, VoxelGrid, _fallback, render, render_grad


def bench(fn, repeat):
    fn()  # warm-up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--grid", type=int, default=16)
    ap.add_argument("--samples", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if renderer.BACKEND != "cython":
        print("compiled extension not available; only the numpy fallback can be timed")
    backends = {"numpy": _fallback}
    if renderer.BACKEND == "cython":
        backends["cython"] = renderer.kernels

    rng = np.random.default_rng(0)
    D = args.grid
    grid = VoxelGrid(rng.normal(-1, 1, size=(D, D, D)), rng.normal(size=(3, D, D, D)))
    view = CameraView(33.0, 10.0)
    print(f"grid {D}^3, {args.samples} samples/ray, best of {args.repeat}")
    print(f"{'size':>5} {'backend':>8} {'render ms':>10} {'grad ms':>10} {'speedup':>8} {'max diff':>9}")
    for size in args.sizes:
        up = rng.normal(size=(3, size, size))
        times = {}
        outputs = {}
        for name, k in backends.items():
            t_fwd = bench(lambda: render(grid, view, size, args.samples, backend=k), args.repeat)
            t_bwd = bench(lambda: render_grad(grid, view, size, args.samples, up, backend=k), args.repeat)
            times[name] = (t_fwd, t_bwd)
            outputs[name] = np.concatenate([render(grid, view, size, args.samples, backend=k).ravel(),
                                            render_grad(grid, view, size, args.samples, up, backend=k).params()])
        ref = times["numpy"]
        for name, (t_fwd, t_bwd) in times.items():
            diff = np.abs(outputs[name] - outputs["numpy"]).max()
            speed = (ref[0] + ref[1]) / (t_fwd + t_bwd)
            print(f"{size:>5} {name:>8} {1e3 * t_fwd:>10.2f} {1e3 * t_bwd:>10.2f} {speed:>7.1f}x {diff:>9.1e}")


if __name__ == "__main__":
    main()
