"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Besides the two kernels in isolation, one loss-and-gradient evaluation on
the d=20, n=1000 problem is timed under each backend. The backend is fixed
at import, so that case runs in a fresh interpreter.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from miracle import kernels

EPOCH_SNIPPET = """
import time
from miracle import kernels
from miracle.baselines import impute_mean
from miracle.losses import TrainingData, total_loss_and_grad
from miracle.network import init_params
from miracle.synth import AmputeSpec, ampute, generate_scm, sample_scm

full = sample_scm(generate_scm(20, 0), 1000, 0)
ds = ampute(full, AmputeSpec("mar", 0.3), 0)
data = TrainingData.build(ds, impute_mean(ds).values)
params = init_params(ds.d, ds.missing_features)
times = []
for _ in range({repeat}):
    t0 = time.perf_counter()
    total_loss_and_grad(params, data)
    times.append(time.perf_counter() - t0)
print(kernels.BACKEND, min(times))
"""


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def epoch_time(backend, repeat):
    env = dict(os.environ)
    env.pop("MIRACLE_PURE_PYTHON", None)
    if backend == "python":
        env["MIRACLE_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET.format(repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True).stdout.split()
    assert out[0] == backend
    return float(out[1])


def report(name, times):
    row = f"{name:32s} " + " ".join(f"{t * 1e3:8.2f}ms" for t in times.values())
    if "compiled" in times:
        row += f"   {times['python'] / times['compiled']:6.2f}x"
    print(row)


def main():
    ap = argparse.ArgumentParser(description="compiled vs NumPy kernel timings")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.BACKEND != "compiled":
        print("compiled extension not built; only the NumPy fallback is timed")
    backends = ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else [])

    rng = np.random.default_rng(0)
    xq = rng.standard_normal((300, 20))
    mq = (rng.random((300, 20)) > 0.3).astype(np.int8)
    xr = rng.standard_normal((1000, 20))
    mr = (rng.random((1000, 20)) > 0.3).astype(np.int8)
    z = rng.standard_normal((46, 1000, 20))

    print(f"{'case':32s} " + " ".join(f"{b:>10s}" for b in backends) + "   speedup")
    report("masked_distances 300x1000x20",
           {b: best_of(lambda: kernels.masked_distances(xq, mq, xr, mr, backend=b), args.repeat) for b in backends})
    report("elu_fused 46x1000x20", {b: best_of(lambda: kernels.elu_fused(z, backend=b), args.repeat) for b in backends})
    report("loss+grad d=20 n=1000", {b: epoch_time(b, args.repeat) for b in backends})


if __name__ == "__main__":
    main()
