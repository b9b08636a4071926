"""Benchmark the compiled loss/gradient kernels against the numpy reference.

Times each kernel on both backends at a couple of batch sizes, reports
microseconds per call and the speedup, and cross-checks that the two
backends agree to roundoff on identical inputs.  Finishes with one
end-to-end timing of a long local pass so the realized (Amdahl) speedup of
the full engine path is visible next to the kernel-only numbers.

    python3 benchmarks/bench_kernels.py [--repeats 5] [--calls 400]
"""

import argparse
import time

import numpy as np

from fedsim import kernels
from fedsim.data import ClientShard, Dataset
from fedsim.local_engine import (
    ModifierKind,
    ObjectiveModifier,
    Schedule,
    StepKind,
    StepRule,
    run_local,
)
from fedsim.models import Activation, Family, Model, init_params
from fedsim.numkit import RngStream

D_IN = 32
HIDDEN = 64
CLASSES = 10


def make_inputs(batch: int, rng: np.random.Generator):
    X = np.ascontiguousarray(rng.standard_normal((batch, D_IN)))
    y_cls = np.ascontiguousarray(rng.integers(0, CLASSES, size=batch))
    y_reg = np.ascontiguousarray(rng.standard_normal(batch))
    return X, y_cls, y_reg


def param_vector(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(n) * 0.1


def bench(fn, args, calls: int, repeats: int) -> float:
    """Best-of-`repeats` wall time per call, in microseconds."""
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(calls):
            fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best / calls * 1e6


def kernel_cases(batch: int, rng: np.random.Generator):
    X, y_cls, y_reg = make_inputs(batch, rng)
    return [
        ("linreg", "linreg_loss_grad",
         (param_vector(D_IN + 1, rng), X, y_reg)),
        ("logistic", "logistic_loss_grad",
         (param_vector(CLASSES * D_IN + CLASSES, rng), X, y_cls, CLASSES)),
        ("mlp_ce/tanh", "mlp_ce_loss_grad",
         (param_vector(HIDDEN * D_IN + HIDDEN + CLASSES * HIDDEN + CLASSES, rng),
          X, y_cls, HIDDEN, CLASSES, kernels.ACT_TANH)),
        ("mlp_ce/relu", "mlp_ce_loss_grad",
         (param_vector(HIDDEN * D_IN + HIDDEN + CLASSES * HIDDEN + CLASSES, rng),
          X, y_cls, HIDDEN, CLASSES, kernels.ACT_RELU)),
        ("mlp_mse", "mlp_mse_loss_grad",
         (param_vector(HIDDEN * D_IN + HIDDEN + HIDDEN + 1, rng),
          X, y_reg, HIDDEN, kernels.ACT_TANH)),
    ]


def bench_local_pass(backend: str, steps: int) -> float:
    kernels.use_backend(backend)
    root = RngStream(0)
    gen = root.child(99).generator()
    X = np.ascontiguousarray(gen.standard_normal((512, D_IN)))
    y = np.ascontiguousarray(gen.integers(0, CLASSES, size=512))
    train = Dataset(X, y, n_classes=CLASSES)
    shard = ClientShard(client_id=0, indices=np.arange(512),
                        p=np.full(CLASSES, 1.0 / CLASSES))
    model = Model(Family.MLP_ONE_HIDDEN, d_in=D_IN, n_classes=CLASSES,
                  hidden=HIDDEN, activation=Activation.TANH)
    x0 = init_params(model, root)
    t0 = time.perf_counter()
    run_local(
        model, train, shard, x0, 0, steps,
        StepRule(StepKind.FEDNAR, 10.0), Schedule(0.01, 0.998, 0.01, 0.998),
        ObjectiveModifier(ModifierKind.NONE), 32, root.child(0),
    )
    return time.perf_counter() - t0


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--calls", type=int, default=400,
                    help="inner calls per timing repeat")
    args = ap.parse_args()

    names = kernels.available_backends()
    print(f"backends available: {', '.join(names)} "
          f"(active: {kernels.backend_name()})")
    if "compiled" not in names:
        print("compiled backend missing -- build it with "
              "`pip install -e . --no-build-isolation`; timing python only")

    rng = np.random.default_rng(0)
    header = f"{'kernel':<14}{'batch':>6}" + "".join(
        f"{n + ' us':>14}" for n in names
    )
    if len(names) == 2:
        header += f"{'speedup':>10}{'max |diff|':>12}"
    print(header)
    print("-" * len(header))
    for batch in (32, 256):
        for label, fn_name, fn_args in kernel_cases(batch, rng):
            times = {}
            grads = {}
            for n in names:
                fn = getattr(kernels.get_backend(n), fn_name)
                times[n] = bench(fn, fn_args, args.calls, args.repeats)
                grads[n] = fn(*fn_args)[1]
            row = f"{label:<14}{batch:>6}" + "".join(
                f"{times[n]:>14.1f}" for n in names
            )
            if len(names) == 2:
                diff = float(np.max(np.abs(grads["compiled"] - grads["python"])))
                row += f"{times['python'] / times['compiled']:>9.2f}x{diff:>12.2e}"
            print(row)

    steps = 2000
    print()
    for n in names:
        dt = bench_local_pass(n, steps)
        print(f"local pass ({steps} co-clipped steps, batch 32) on "
              f"{n:<8}: {dt * 1e3:8.1f} ms")


if __name__ == "__main__":
    main()
