"""Command-line front end.

Subcommands: ``train``, ``denoise``, ``eval``, ``gradcheck``, ``flops``.
Every run is reproducible from its arguments; randomness only enters
through the seeds recorded in configs and checkpoints.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import functional as F
from .attention import (ChannelSelfAttention, MultiHeadSelfAttention,
                        SpatialChannelEncoder, TemporalFusion)
from .checkpoint import load_checkpoint, restore_model, restore_trainer
from .config import load_config_file
from .data import (load_dataset, load_sequence, make_triple,
                   noisy_eval_sequence, write_ppm)
from .errors import CheckpointError, ConfigError, DataError, StateError
from .evaluate import evaluate_dataset, format_report
from .gradcheck import grad_check, module_grad_check
from .model import DsctModel, ModelConfig, build_model, flops_estimate
from .tensor import Tensor, no_grad, tensor_sum
from .training import TrainConfig, train_loop

OP_TOL = 1e-5
BLOCK_TOL = 1e-3


def _cmd_train(args) -> int:
    sequences = load_dataset(args.data)
    trainer = None
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        model_cfg, train_cfg = ckpt.model_config, ckpt.train_config
        trainer = restore_trainer(ckpt, sequences)
        print(f"resuming at epoch {trainer.epoch} step {trainer.step}")
    elif args.config:
        model_cfg, train_cfg = load_config_file(args.config)
    else:
        raise ConfigError("train needs --config or --resume")
    trainer = train_loop(sequences, train_cfg, model_cfg, out_dir=args.out,
                         log_fn=print, trainer=trainer)
    print(f"done: {trainer.step} steps, checkpoints in {args.out}")
    return 0


def _cmd_denoise(args) -> int:
    model = restore_model(load_checkpoint(args.ckpt))
    seq = load_sequence(args.input_dir)
    if args.sigma > 0:
        frames = noisy_eval_sequence(seq, args.sigma, args.seed, video=0)
    else:
        frames = seq.frames  # inputs are taken as already noisy
    os.makedirs(args.out, exist_ok=True)
    n = len(frames)
    for i in range(n):
        a, b, c = make_triple(n, i)
        with no_grad():
            coarse, final = model.forward(
                Tensor(frames[a][None]), Tensor(frames[b][None]),
                Tensor(frames[c][None]), training=False,
            )
        write_ppm(os.path.join(args.out, f"denoised_{i:04d}.ppm"), final.data[0])
        if args.emit_coarse and coarse is not None:
            write_ppm(os.path.join(args.out, f"coarse_{i:04d}.ppm"), coarse.data[0])
    print(f"wrote {n} frame(s) to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = restore_model(ckpt)
    sequences = load_dataset(args.data)
    sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    if not sigmas:
        raise ConfigError(f"no noise levels in {args.sigmas!r}")
    report = evaluate_dataset(model, ckpt.model_config, sequences, sigmas,
                              seed=args.seed, max_frames=args.max_frames)
    text = format_report(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def _loss_with_coeff(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Random fixed weighting so every output coordinate matters."""
    return tensor_sum(out * Tensor(rng.standard_normal(out.data.shape)))


def gradcheck_suite(full_model: bool = False):
    """Finite-difference checks over ops, blocks, and optionally the model.

    Yields ``(name, worst_relative_error, tolerance)`` as each completes.
    """
    rng = np.random.default_rng(20240817)

    def op(build, inputs):
        return max(grad_check(build, inputs).values())

    x = rng.standard_normal((3, 5))
    w = rng.standard_normal((5, 4))
    b = rng.standard_normal(4)
    cw = rng.standard_normal((3, 4))
    yield ("linear", op(
        lambda t: tensor_sum(F.linear(t["x"], t["w"], t["b"]) * Tensor(cw)),
        {"x": x, "w": w, "b": b}), OP_TOL)

    xc = rng.standard_normal((2, 3, 6, 6))
    wc = rng.standard_normal((4, 3, 3, 3))
    bc = rng.standard_normal(4)
    for name, stride, pad, mode in (
        ("conv2d stride1", 1, 1, "zero"),
        ("conv2d stride2", 2, 1, "zero"),
        ("conv2d reflect", 1, 1, "reflect"),
    ):
        co = rng.standard_normal((2, 4, 6 // stride, 6 // stride))
        yield (name, op(
            lambda t, s=stride, m=mode, c=co: tensor_sum(
                F.conv2d(t["x"], t["w"], t["b"], stride=s, padding=1,
                         pad_mode=m) * Tensor(c)),
            {"x": xc, "w": wc, "b": bc}), OP_TOL)

    xs = rng.standard_normal((4, 7))
    cs = rng.standard_normal((4, 7))
    yield ("softmax", op(
        lambda t: tensor_sum(F.softmax(t["x"]) * Tensor(cs)), {"x": xs}), OP_TOL)

    xl = rng.standard_normal((2, 5, 8))
    cl = rng.standard_normal((2, 5, 8))
    yield ("layer_norm", op(
        lambda t: tensor_sum(
            F.layer_norm(t["x"], t["g"], t["b"], axes=(-1,)) * Tensor(cl)),
        {"x": xl, "g": rng.standard_normal(8), "b": rng.standard_normal(8)}),
        OP_TOL)

    xb = rng.standard_normal((3, 4, 5, 5))
    cb = rng.standard_normal((3, 4, 5, 5))
    yield ("batch_norm", op(
        lambda t: tensor_sum(
            F.batch_norm(t["x"], t["g"], t["b"], None, None,
                         training=True)[0] * Tensor(cb)),
        {"x": xb, "g": rng.standard_normal(4), "b": rng.standard_normal(4)}),
        OP_TOL)

    def block(module, loss_fn, extra, coords=None):
        module.to_dtype(np.float64)
        errs = module_grad_check(module, loss_fn, extra, max_coords=coords)
        return max(errs.values())

    init = np.random.default_rng(7)
    tok = rng.standard_normal((3, 4, 6))
    ct = rng.standard_normal((3, 4, 6))
    yield ("channel attention", block(
        ChannelSelfAttention(p=2, d_k=4, rng=init),
        lambda m, t: tensor_sum(m(t["tok"]) * Tensor(ct)), {"tok": tok}),
        BLOCK_TOL)

    yield ("spatial attention", block(
        MultiHeadSelfAttention(dim=6, heads=2, rng=init),
        lambda m, t: tensor_sum(m(t["tok"]) * Tensor(ct)), {"tok": tok}),
        BLOCK_TOL)

    xi = rng.standard_normal((1, 6, 4, 4))
    ci = rng.standard_normal((1, 6, 4, 4))
    yield ("spatial-channel encoder", block(
        SpatialChannelEncoder(dim=6, p=2, heads=2, mlp_ratio=2, rng=init),
        lambda m, t: tensor_sum(m(t["x"]) * Tensor(ci)), {"x": xi}),
        BLOCK_TOL)

    yield ("temporal fusion", block(
        TemporalFusion(dim=6, p=2, heads=2, mlp_ratio=2, rng=init),
        lambda m, t: tensor_sum(m(t["p"], t["c"], t["n"]) * Tensor(ci)),
        {"p": xi, "c": rng.standard_normal(xi.shape),
         "n": rng.standard_normal(xi.shape)}),
        BLOCK_TOL)

    if full_model:
        cfg = ModelConfig(base_channels=4, scale_channels=(8, 8), patch=2,
                          heads=2, mlp_ratio=2)
        model = build_model(cfg, init, dtype=np.float64)
        xt = rng.standard_normal((1, 3, 16, 16))
        cm = rng.standard_normal((1, 3, 16, 16))

        def model_loss(m: DsctModel, t):
            _, out = m.forward(t["p"], t["c"], t["n"], training=True)
            return tensor_sum(out * Tensor(cm))

        yield ("full model", block(
            model, model_loss,
            {"p": xt, "c": rng.standard_normal(xt.shape),
             "n": rng.standard_normal(xt.shape)},
            coords=4), BLOCK_TOL)


def _cmd_gradcheck(args) -> int:
    failures = 0
    for name, err, tol in gradcheck_suite(full_model=args.full_model):
        ok = err < tol
        failures += 0 if ok else 1
        print(f"{name:<28} {err:10.3e}  (tol {tol:.0e})  "
              f"{'ok' if ok else 'FAIL'}")
    if failures:
        print(f"{failures} check(s) failed")
        return 1
    print("all gradient checks passed")
    return 0


def _cmd_flops(args) -> int:
    if args.config:
        cfg, _ = load_config_file(args.config)
    else:
        cfg = ModelConfig()
    try:
        h, w = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--size expects HxW, got {args.size!r}") from None
    print(flops_estimate(cfg, h, w).format())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsct", description="two-stage video denoiser toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--data", required=True, help="manifest of sequence dirs")
    p.add_argument("--out", required=True, help="checkpoint/log directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("denoise", help="denoise a directory of frames")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input_dir", required=True,
                   help="directory of PPM/PNG frames")
    p.add_argument("--sigma", type=float, required=True,
                   help="noise level to add (0 means frames are pre-noised)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emit-coarse", action="store_true",
                   help="also write the first-stage estimates")
    p.set_defaults(fn=_cmd_denoise)

    p = sub.add_parser("eval", help="PSNR over a dataset at several sigmas")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sigmas", default="10,20,30,40,50",
                   help="comma-separated noise levels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-frames", type=int, default=85)
    p.add_argument("--out", help="also write the report to this file")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--full-model", action="store_true",
                   help="include the (slow) end-to-end model check")
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("flops", help="per-layer flop estimate")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--size", default="96x96", help="input size as HxW")
    p.set_defaults(fn=_cmd_flops)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataError, CheckpointError, StateError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
