"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--batch 128] [--repeat 5]

Shapes match the default CNN on 28x28 inputs. Each line reports the best of
``--repeat`` timings per path and the speedup; numba compile time is excluded
by a warm-up call.
"""

import argparse
import timeit

import numpy as np

from smoothfat import _kernels as K


def cases(batch, rng):
    x1 = rng.uniform(size=(batch, 1, 28, 28)).astype(np.float32)
    x2 = rng.normal(size=(batch, 8, 14, 14)).astype(np.float32)
    w1 = rng.normal(size=(8, 1, 3, 3)).astype(np.float32)
    w2 = rng.normal(size=(16, 8, 3, 3)).astype(np.float32)
    b1, b2 = np.zeros(8, np.float32), np.zeros(16, np.float32)
    g1 = rng.normal(size=(batch, 8, 28, 28)).astype(np.float32)
    g2 = rng.normal(size=(batch, 16, 14, 14)).astype(np.float32)
    d = rng.normal(scale=0.3, size=x1.shape).astype(np.float32)
    xi = np.float32(64 / 255)
    return [
        ("conv fwd 1->8 @28", K._conv3x3_forward_nb, K.conv3x3_forward_np, (x1, w1, b1)),
        ("conv fwd 8->16 @14", K._conv3x3_forward_nb, K.conv3x3_forward_np, (x2, w2, b2)),
        ("conv dX 16->8 @14", K._conv3x3_backward_input_nb, K.conv3x3_backward_input_np, (g2, w2)),
        ("conv dW 1->8 @28", K._conv3x3_backward_weight_nb, K.conv3x3_backward_weight_np, (g1, x1)),
        ("conv dW 8->16 @14", K._conv3x3_backward_weight_nb, K.conv3x3_backward_weight_np, (g2, x2)),
        ("meanpool fwd @28", K._meanpool2_forward_nb, K.meanpool2_forward_np, (g1,)),
        ("meanpool bwd @14", K._meanpool2_backward_nb, K.meanpool2_backward_np, (g2,)),
        ("project @28", K._project_nb, K.project_np, (x1, d, xi)),
    ]


def best(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"batch={args.batch} numba threads={K.numba.get_num_threads()}")
    print(f"{'kernel':<22}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, nb, npf, a in cases(args.batch, rng):
        nb(*a)  # compile
        t_nb, t_np = best(nb, a, args.repeat), best(npf, a, args.repeat)
        print(f"{name:<22}{t_nb * 1e3:>10.2f}{t_np * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
