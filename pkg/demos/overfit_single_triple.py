"""Overfit one noisy frame triple; the fastest end-to-end sanity check.

A denoiser that cannot memorise a single example will not learn a dataset.
This trains a narrow model on one fixed noisy (prev, cur, next) triple for a
few hundred steps and reports how far the denoised frame climbs above the
noisy baseline.  Expect several dB within a minute or two; the full-size
version of this experiment lives in the acceptance tests.
"""

import argparse
import time

import numpy as np

from dsct.data import add_awgn
from dsct.evaluate import psnr
from dsct.model import ModelConfig, build_model
from dsct.rng import EVAL_NOISE, INIT, sample_stream, sigma_lane
from dsct.synthetic import make_sequence
from dsct.tensor import Tensor, no_grad
from dsct.training import Adam, l2_loss


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--size", type=int, default=48)
    ap.add_argument("--sigma", type=float, default=25.0)
    args = ap.parse_args()

    clean = make_sequence(args.size, args.size, 3, seed=5).frames
    noisy = [add_awgn(f, args.sigma,
                      sample_stream(0, EVAL_NOISE, sigma_lane(args.sigma), 0, k))
             for k, f in enumerate(clean)]
    baseline = psnr(clean[1], noisy[1])
    print(f"noisy baseline: {baseline:.2f} dB at sigma {args.sigma:g}")

    model = build_model(ModelConfig(base_channels=8, scale_channels=(16, 32)),
                        sample_stream(0, INIT))
    adam = Adam(list(model.named_parameters()))
    prev, cur, nxt = (Tensor(f[None]) for f in noisy)
    target = Tensor(clean[1][None])

    t0 = time.time()
    for step in range(1, args.steps + 1):
        _, pred = model(prev, cur, nxt, training=True)
        loss = l2_loss(pred, target)
        model.zero_grad()
        loss.backward()
        adam.step(1e-3)
        if step % 50 == 0 or step == 1:
            print(f"step {step:4d}  loss {float(loss.data):.4f}")

    with no_grad():
        _, est = model(prev, cur, nxt, training=False)
    final = psnr(clean[1], np.clip(est.data[0], 0.0, 1.0))
    print(f"denoised: {final:.2f} dB  (gain {final - baseline:+.2f} dB, "
          f"{time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
