#!/usr/bin/env python3
"""Time the forward and backward pass of one training step.

Useful when touching the tensor engine: prints per-iteration wall time for
the configuration used by the overfit acceptance run (C=16, batch 4, 128x128).
"""

import argparse
import time

import numpy as np

from dlen.model import DlenConfig, dlen_forward, init_params, mae_loss
from dlen.tensor import Tensor


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--width", type=int, default=16)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--res", type=int, default=128)
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()

    model = init_params(DlenConfig(width=args.width, train_res=args.res), 0)
    print(f"model: {model.param_count()} parameters")
    rng = np.random.default_rng(0)
    shape = (args.batch, 3, args.res, args.res)
    x = Tensor(rng.random(shape, dtype=np.float32))
    t = Tensor(rng.random(shape, dtype=np.float32))
    for rep in range(args.reps):
        t0 = time.time()
        out = dlen_forward(x, model)
        t1 = time.time()
        mae_loss(out.i_en, t).backward()
        t2 = time.time()
        model.zero_grad()
        print(f"rep {rep}: forward {t1 - t0:.2f}s  backward {t2 - t1:.2f}s "
              f" total {t2 - t0:.2f}s")


if __name__ == "__main__":
    main()
