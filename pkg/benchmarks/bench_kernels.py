"""Time the numba and pure-numpy backends on the convolution kernels.

Usage: python benchmarks/bench_kernels.py [--repeat 5]

Reports the best-of-N wall time per kernel and backend, plus one denoiser
training step, and checks that both backends return identical bytes.
"""

import argparse
import time

import numpy as np

from acdmsr import _accel
from acdmsr import numerics as nx
from acdmsr.denoiser import CondUNet, UNetConfig
from acdmsr.numerics import kernels
from acdmsr.schedule import make_linear_schedule
from acdmsr.trainer import TrainConfig, TrainingPool, train


def best_of(fn, repeat):
    fn()  # warm-up (numba compiles here)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 32, 34, 34)).astype(np.float32)
    cols = kernels._im2col_np(x, 3, 1, 32, 32)
    w = nx.Tensor(rng.standard_normal((32, 32, 3, 3)).astype(np.float32))
    xt = nx.Tensor(x[:, :, :32, :32])
    pool = TrainingPool(rng.uniform(-1, 1, (64, 3, 32, 32)).astype(np.float32),
                        rng.uniform(-1, 1, (64, 3, 32, 32)).astype(np.float32))
    sched = make_linear_schedule()

    def step():
        model = CondUNet(UNetConfig(base_width=32), sched)
        return train(model, pool, TrainConfig(steps=1, batch=16))[1][0]

    return {
        "im2col 16x32x34x34 k3": lambda: kernels.im2col(x, 3, 1, 32, 32),
        "col2im 16x32x34x34 k3": lambda: kernels.col2im(cols, 16, 32, 34, 34, 3, 1, 32, 32),
        "conv2d forward 32->32": lambda: nx.conv2d(xt, w).data,
        "train step width 32 batch 16": step,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if _accel.NUMBA_AVAILABLE else [])
    results = {}
    for name in backends:
        _accel.set_backend(name)
        for case, fn in cases().items():
            results[case, name] = best_of(fn, args.repeat)
    print(f"{'kernel':<32}" + "".join(f"{b:>12}" for b in backends) + ("   speedup  identical" if len(backends) == 2 else ""))
    for case in cases():
        row = f"{case:<32}" + "".join(f"{results[case, b][0] * 1e3:10.2f}ms" for b in backends)
        if len(backends) == 2:
            a, b = results[case, "numpy"], results[case, "numba"]
            same = np.asarray(a[1]).tobytes() == np.asarray(b[1]).tobytes()
            row += f"   {a[0] / b[0]:6.2f}x  {same}"
        print(row)


if __name__ == "__main__":
    main()
