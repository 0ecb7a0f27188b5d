"""Time the compiled kernels against the numpy fallback on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from iamrec import _kernels_py as py

try:
    from iamrec import _ckernels as cy
except ImportError:
    cy = None


def cases(rng):
    B, H, L, N, d, hidden = 64, 4, 40, 1100, 64, 256
    seg = np.concatenate([[-1] * 14, np.repeat(np.arange(12), 2), [-1], [-2] * 1]).astype(np.int64)
    mask = np.stack([py.build_mask(seg, py.INTER)] * B)
    scores = rng.normal(size=(B, H, L, L))
    probs = py.masked_softmax(scores, mask)
    dprobs = rng.normal(size=probs.shape)
    u = rng.normal(size=(N, hidden))
    _, sig = py.silu_forward(u)
    du = rng.normal(size=u.shape)
    x = rng.normal(size=(N, d))
    gain = rng.uniform(0.5, 1.5, size=d)
    _, xhat, inv = py.rmsnorm_forward(x, gain, 1e-6)
    dx = rng.normal(size=x.shape)
    return {
        "build_mask": lambda m: m.build_mask(seg, m.INTER),
        "masked_softmax": lambda m: m.masked_softmax(scores, mask),
        "masked_softmax_backward": lambda m: m.masked_softmax_backward(probs, dprobs),
        "silu_forward": lambda m: m.silu_forward(u),
        "silu_backward": lambda m: m.silu_backward(du, u, sig),
        "rmsnorm_forward": lambda m: m.rmsnorm_forward(x, gain, 1e-6),
        "rmsnorm_backward": lambda m: m.rmsnorm_backward(dx, gain, xhat, inv),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'python ms':>11}{'cython ms':>11}{'speedup':>9}")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        if cy is None:
            print(f"{name:<26}{t_py:>11.3f}{'n/a':>11}{'':>9}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<26}{t_py:>11.3f}{t_cy:>11.3f}{t_py / t_cy:>8.2f}x")


if __name__ == "__main__":
    main()
