"""The whole loop in miniature: synthesise data, train, evaluate, denoise.

This is the library-call equivalent of

    dsct train --config ... --data ... --out ...
    dsct eval --ckpt ... --data ...
    dsct denoise --ckpt ... --in ... --out ...

scaled down until it runs in a couple of minutes.  The printed report uses
the same fixed-width format as the CLI, so two runs with the same arguments
diff clean.
"""

import argparse
import os
import tempfile

from dsct.checkpoint import load_checkpoint, restore_model
from dsct.data import write_ppm
from dsct.evaluate import (calibrate_stats, denoise_sequence,
                           evaluate_dataset, format_report)
from dsct.data import noisy_eval_sequence
from dsct.model import ModelConfig
from dsct.synthetic import make_sequence
from dsct.training import TrainConfig, train_loop


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--out", default=None, help="defaults to a temp dir")
    args = ap.parse_args()
    out_dir = args.out or tempfile.mkdtemp(prefix="dsct_demo_")

    train_seqs = [make_sequence(48, 48, 6, seed=s, name=f"train{s}")
                  for s in range(3)]
    holdout = [make_sequence(48, 48, 6, seed=90, name="holdout")]

    model_cfg = ModelConfig(base_channels=8, scale_channels=(16, 32))
    train_cfg = TrainConfig(epochs=10 ** 6, batch_size=2, lr=1e-3,
                            decay_epochs=(), seed=0, crop=32,
                            noise_mode="fixed", sigma=25.0,
                            max_steps=args.steps, log_every=100)
    trainer = train_loop(train_seqs, train_cfg, model_cfg,
                         out_dir=out_dir, log_fn=print)

    # score the held-out sequence straight from the saved checkpoint; the
    # stats were learned on 32-pixel crops, so re-estimate them on whole
    # frames before judging the model
    ckpt = load_checkpoint(os.path.join(out_dir, "ckpt_final.dsct"))
    model = restore_model(ckpt)
    calibrate_stats(model, train_seqs, 25.0, seed=0)
    report = evaluate_dataset(model, model_cfg, holdout, [25.0], seed=0)
    print()
    print(format_report(report), end="")

    # and write denoised frames next to the checkpoints
    noisy = noisy_eval_sequence(holdout[0], 25.0, seed=0, video=0)
    for i, frame in enumerate(denoise_sequence(model, noisy)):
        write_ppm(os.path.join(out_dir, f"denoised_{i:04d}.ppm"),
                  frame.clip(0.0, 1.0))
    print(f"\ncheckpoints, log, and frames in {out_dir}")


if __name__ == "__main__":
    main()
