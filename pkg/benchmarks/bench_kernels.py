"""Compare the compiled and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times each hot kernel at the shapes the default toy model uses, then one
full MVPR training step (forward, backward, Adam) under each backend, and
checks the two backends agree bit for bit.
"""

import argparse
import timeit

import numpy as np

from mvrank.autodiff import AdamState, kernels
from mvrank.config import ExperimentConfig
from mvrank.model import ModelConfig, init_model
from mvrank.scene import (GridSpec, RenderConfig, RigConfig, SceneConfig, generate_scene,
                          make_rig, make_sample)
from mvrank.trainer import train_step


def kernel_cases(rng, dtype):
    x = rng.standard_normal((16, 24, 32)).astype(dtype)
    cols = kernels.python_backend.im2col(x, 3, 3)
    feat = rng.standard_normal((32, 24, 32)).astype(dtype)
    grid = np.stack([rng.uniform(-2, 25, (32, 32)), rng.uniform(-2, 33, (32, 32))], -1)
    gout = rng.standard_normal((32, 32, 32)).astype(dtype)
    return {
        "im2col 16x24x32 k3": lambda b: b.im2col(x, 3, 3),
        "col2im 16x24x32 k3": lambda b: b.col2im(cols, 16, 24, 32, 3, 3),
        "grid_sample 32ch 32x32": lambda b: b.grid_sample(feat, grid),
        "grid_sample_backward": lambda b: b.grid_sample_backward(gout, grid, 24, 32),
    }


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26s}{'dtype':>8s}{'python ms':>12s}{'cython ms':>12s}{'speedup':>9s}  same")
    for dtype in (np.float32, np.float64):
        for name, fn in kernel_cases(rng, dtype).items():
            tp = _best(lambda: fn(kernels.python_backend), repeat, 20)
            if kernels.compiled_backend is None:
                print(f"{name:<26s}{np.dtype(dtype).name:>8s}{tp * 1e3:12.3f}{'n/a':>12s}")
                continue
            tc = _best(lambda: fn(kernels.compiled_backend), repeat, 20)
            same = np.array_equal(fn(kernels.python_backend), fn(kernels.compiled_backend))
            print(f"{name:<26s}{np.dtype(dtype).name:>8s}{tp * 1e3:12.3f}{tc * 1e3:12.3f}"
                  f"{tp / tc:9.2f}  {same}")


def _step_setup(dtype):
    cfg = ExperimentConfig(model=ModelConfig(dtype=dtype))
    grid = GridSpec()
    cams = make_rig(RigConfig(), grid, [0, 1, 0])
    scene = generate_scene(SceneConfig(), grid, [0, 2, 0, 0])
    lab = make_sample(scene, cams, grid, RenderConfig(), True)
    unl = make_sample(scene, cams, grid, RenderConfig(), False)
    return cfg, lab, unl


def bench_step(repeat):
    print(f"\n{'train step (mvpr)':<26s}{'dtype':>8s}{'python ms':>12s}{'cython ms':>12s}{'speedup':>9s}")
    active = kernels.BACKEND
    for dtype in ("float32", "float64"):
        cfg, lab, unl = _step_setup(dtype)
        tc_ = cfg.train
        times = {}
        for name in ("python", "cython"):
            if name == "cython" and kernels.compiled_backend is None:
                continue
            kernels.use(name)
            params = init_model(cfg.model, 0)
            opt = AdamState(lr=tc_.lr)
            perms = (np.array([0, 1, 2]), np.array([2, 0, 1]))

            def step():
                train_step(params, opt, [lab, unl], tc_, perms)
            step()
            times[name] = _best(step, repeat, 3)
        kernels.use(active)
        tp = times["python"]
        tc = times.get("cython")
        if tc is None:
            print(f"{'labeled+unlabeled':<26s}{dtype:>8s}{tp * 1e3:12.1f}{'n/a':>12s}")
        else:
            print(f"{'labeled+unlabeled':<26s}{dtype:>8s}{tp * 1e3:12.1f}{tc * 1e3:12.1f}{tp / tc:9.2f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}\n")
    bench_kernels(args.repeat)
    bench_step(args.repeat)


if __name__ == "__main__":
    main()
