"""The two-stage denoising model.

Coarse stage: three weight-shared encoder branches (one per input frame)
feed a decoder whose skip connections aggregate the three frames at each
scale.  Fine stage: the same encoder/decoder layout applied to the coarse
output alone, with skips from the coarse decoder into the fine encoder and
plain encoder-to-decoder skips inside the stage.

Inputs of arbitrary size are reflect-padded up to the stride the two
downsampling steps and the patch size require, and outputs are cropped back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import SpatialChannelEncoder, build_fusion
from .errors import ConfigError, ShapeError
from .functional import crop2d, pad2d, pixel_shuffle
from .layers import BatchNorm2d, Conv2d, Module
from .tensor import Tensor, concat, relu, split

AGGREGATION_MODES = ("tfam", "mean", "conv")
STAGE_MODES = ("dual", "coarse", "fine")


@dataclass
class ModelConfig:
    base_channels: int = 32
    scale_channels: tuple[int, int] = (64, 128)
    patch: int = 4
    heads: int = 4
    mlp_ratio: int = 2
    aggregation_mode: str = "tfam"
    enable_fskip: bool = True
    enable_cfskip: bool = True
    enable_tfam_skip: bool = True
    share_branch_weights: bool = True
    stage_mode: str = "dual"

    def __post_init__(self):
        if self.aggregation_mode not in AGGREGATION_MODES:
            raise ConfigError(f"aggregation_mode must be one of {AGGREGATION_MODES}")
        if self.stage_mode not in STAGE_MODES:
            raise ConfigError(f"stage_mode must be one of {STAGE_MODES}")
        if len(self.scale_channels) != 2:
            raise ConfigError("scale_channels needs exactly two entries")
        if self.patch < 1 or self.heads < 1 or self.mlp_ratio < 1:
            raise ConfigError("patch, heads, mlp_ratio must be positive")
        for c in (self.base_channels, *self.scale_channels):
            if c % self.heads:
                raise ConfigError(f"channel width {c} not divisible by {self.heads} heads")

    @property
    def pad_multiple(self) -> int:
        # two stride-2 downsamples, then the patch grid at quarter scale
        return math.lcm(16, 4 * self.patch)


class Stem(Module):
    """Two 3x3 convolutions with batch norm and ReLU, image to features."""

    def __init__(self, cout: int, rng, dtype=np.float32):
        # batch norm cancels any constant added per channel, so a bias on
        # these convolutions would be a dead parameter
        self.conv1 = Conv2d(3, cout, 3, rng, padding=1, bias=False, dtype=dtype)
        self.bn1 = BatchNorm2d(cout, init_stats=True, dtype=dtype)
        self.conv2 = Conv2d(cout, cout, 3, rng, padding=1, bias=False, dtype=dtype)
        self.bn2 = BatchNorm2d(cout, init_stats=True, dtype=dtype)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        x = relu(self.bn1(self.conv1(x), training))
        return relu(self.bn2(self.conv2(x), training))


class EncoderStage(Module):
    """Stride-2 downsample, then attention and convolution branches summed."""

    def __init__(self, cin: int, cout: int, patch: int, heads: int,
                 mlp_ratio: int, rng, dtype=np.float32):
        self.down = Conv2d(cin, cout, 3, rng, stride=2, padding=1, dtype=dtype)
        self.scem = SpatialChannelEncoder(cout, patch, heads, mlp_ratio, rng, dtype=dtype)
        self.conv1 = Conv2d(cout, cout, 3, rng, padding=1, dtype=dtype)
        self.conv2 = Conv2d(cout, cout, 3, rng, padding=1, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = relu(self.down(x))
        return self.scem(h) + self.conv2(relu(self.conv1(h)))


class UpsampleBlock(Module):
    """Two 3x3 convolutions, then a 2x sub-pixel rearrangement."""

    def __init__(self, cin: int, cout: int, rng, dtype=np.float32):
        self.conv1 = Conv2d(cin, cin, 3, rng, padding=1, dtype=dtype)
        self.conv2 = Conv2d(cin, 4 * cout, 3, rng, padding=1, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return pixel_shuffle(self.conv2(relu(self.conv1(x))), 2)


class CoarseStage(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        b, (c1, c2) = cfg.base_channels, cfg.scale_channels
        mk_stem = lambda: Stem(b, rng, dtype=dtype)
        mk_s1 = lambda: EncoderStage(b, c1, cfg.patch, cfg.heads, cfg.mlp_ratio, rng, dtype=dtype)
        mk_s2 = lambda: EncoderStage(c1, c2, cfg.patch, cfg.heads, cfg.mlp_ratio, rng, dtype=dtype)
        if cfg.share_branch_weights:
            self.stems = [mk_stem()]
            self.stages1 = [mk_s1()]
            self.stages2 = [mk_s2()]
        else:
            self.stems = [mk_stem() for _ in range(3)]
            self.stages1 = [mk_s1() for _ in range(3)]
            self.stages2 = [mk_s2() for _ in range(3)]
        self.fuse = Conv2d(3 * c2, c2, 1, rng, dtype=dtype)
        if cfg.enable_tfam_skip:
            self.skip_mid = build_fusion(cfg.aggregation_mode, c1, cfg.patch,
                                         cfg.heads, cfg.mlp_ratio, rng, dtype=dtype)
            self.skip_top = build_fusion(cfg.aggregation_mode, b, cfg.patch,
                                         cfg.heads, cfg.mlp_ratio, rng, dtype=dtype)
        else:
            self.skip_mid = None
            self.skip_top = None
        self.up1 = UpsampleBlock(c2, c1, rng, dtype=dtype)
        self.up2 = UpsampleBlock(c1, b, rng, dtype=dtype)
        self.smooth1 = Conv2d(b, b, 3, rng, padding=1, dtype=dtype)
        self.smooth2 = Conv2d(b, 3, 3, rng, padding=1, dtype=dtype)
        self._share = cfg.share_branch_weights
        self._tfam_skip = cfg.enable_tfam_skip

    def _branch(self, idx: int):
        if self._share:
            return self.stems[0], self.stages1[0], self.stages2[0]
        return self.stems[idx], self.stages1[idx], self.stages2[idx]

    def __call__(self, prev: Tensor, cur: Tensor, nxt: Tensor, training: bool):
        """Returns the padded-scale output and decoder features for reuse.

        The skip features come back as ``(mid, deep)``: the fused deepest
        feature and the decoder state one upsample later, both still at
        padded scale.
        """
        if self._share:
            # One stacked pass through the shared branch: triples the GEMM
            # row counts instead of running three small passes.  Batch-norm
            # training statistics are taken over all three frames at once,
            # which is the natural reading of a shared stem.
            stack = concat([prev, cur, nxt], axis=0)
            f0 = self.stems[0](stack, training)
            e1 = self.stages1[0](f0)
            e2 = self.stages2[0](e1)
            tops = split(f0, 3, axis=0)
            mids = split(e1, 3, axis=0)
            deeps = split(e2, 3, axis=0)
        else:
            tops, mids, deeps = [], [], []
            for idx, frame in enumerate((prev, cur, nxt)):
                stem, s1, s2 = self._branch(idx)
                f0 = stem(frame, training)
                e1 = s1(f0)
                e2 = s2(e1)
                tops.append(f0)
                mids.append(e1)
                deeps.append(e2)
        deep = self.fuse(concat(deeps, axis=1))
        d = self.up1(deep)
        if self._tfam_skip:
            d = d + self.skip_mid(*mids)
        mid = d
        d = self.up2(d)
        if self._tfam_skip:
            d = d + self.skip_top(*tops)
        out = self.smooth2(relu(self.smooth1(d)))
        return out, (mid, deep)


class FineStage(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        b, (c1, c2) = cfg.base_channels, cfg.scale_channels
        self.stem = Stem(b, rng, dtype=dtype)
        self.stage1 = EncoderStage(b, c1, cfg.patch, cfg.heads, cfg.mlp_ratio, rng, dtype=dtype)
        self.stage2 = EncoderStage(c1, c2, cfg.patch, cfg.heads, cfg.mlp_ratio, rng, dtype=dtype)
        self.up1 = UpsampleBlock(c2, c1, rng, dtype=dtype)
        self.up2 = UpsampleBlock(c1, b, rng, dtype=dtype)
        self.smooth1 = Conv2d(b, b, 3, rng, padding=1, dtype=dtype)
        self.smooth2 = Conv2d(b, 3, 3, rng, padding=1, dtype=dtype)
        self._fskip = cfg.enable_fskip

    def __call__(self, x: Tensor, cf_skips, training: bool) -> Tensor:
        f0 = self.stem(x, training)
        e1 = self.stage1(f0)
        if cf_skips is not None:
            e1 = e1 + cf_skips[0]
        e2 = self.stage2(e1)
        if cf_skips is not None:
            e2 = e2 + cf_skips[1]
        d = self.up1(e2)
        if self._fskip:
            d = d + e1
        d = self.up2(d)
        if self._fskip:
            d = d + f0
        return self.smooth2(relu(self.smooth1(d)))


class DsctModel(Module):
    """Coarse and fine stages behind a pad-and-crop wrapper."""

    def __init__(self, config: ModelConfig, rng, dtype=np.float32):
        self.config = config
        if config.stage_mode in ("dual", "coarse"):
            self.coarse = CoarseStage(config, rng, dtype=dtype)
        else:
            self.coarse = None
        if config.stage_mode in ("dual", "fine"):
            self.fine = FineStage(config, rng, dtype=dtype)
        else:
            self.fine = None

    def _pad(self, x: Tensor) -> Tensor:
        mult = self.config.pad_multiple
        h, w = x.shape[-2:]
        ph = (-h) % mult
        pw = (-w) % mult
        if ph == 0 and pw == 0:
            return x
        return pad2d(x, (0, ph, 0, pw), mode="reflect")

    def coarse_forward(self, prev: Tensor, cur: Tensor, nxt: Tensor,
                       training: bool = False):
        """Denoise the middle frame from three noisy frames.

        Returns ``(output, skips)`` with the output cropped back to the
        input size and the decoder skip features left at padded scale.
        """
        if self.coarse is None:
            raise ConfigError("model was built without a coarse stage")
        if prev.shape != cur.shape or nxt.shape != cur.shape:
            raise ShapeError("coarse_forward: frames must share a shape")
        h, w = cur.shape[-2:]
        out, skips = self.coarse(self._pad(prev), self._pad(cur), self._pad(nxt),
                                 training)
        return crop2d(out, 0, 0, h, w), skips

    def fine_forward(self, x: Tensor, cf_skips=None, training: bool = False) -> Tensor:
        """Refine a single frame, optionally with coarse decoder skips."""
        if self.fine is None:
            raise ConfigError("model was built without a fine stage")
        if not self.config.enable_cfskip:
            cf_skips = None
        h, w = x.shape[-2:]
        out = self.fine(self._pad(x), cf_skips, training)
        return crop2d(out, 0, 0, h, w)

    def forward(self, prev: Tensor, cur: Tensor, nxt: Tensor,
                training: bool = False):
        """Full pass per the configured stage mode.

        Returns ``(coarse_out, final_out)``.  In coarse-only mode both entries
        are the coarse output; in fine-only mode the coarse entry is None and
        the fine stage reads the noisy middle frame directly.
        """
        mode = self.config.stage_mode
        if mode == "fine":
            return None, self.fine_forward(cur, None, training)
        i_coarse, skips = self.coarse_forward(prev, cur, nxt, training)
        if mode == "coarse":
            return i_coarse, i_coarse
        i_fine = self.fine_forward(i_coarse, skips, training)
        return i_coarse, i_fine

    __call__ = forward


def build_model(config: ModelConfig, rng: np.random.Generator,
                dtype=np.float32) -> DsctModel:
    return DsctModel(config, rng, dtype=dtype)


# -- analytic cost model -------------------------------------------------------


@dataclass
class FlopsReport:
    rows: list = field(default_factory=list)  # (name, category, flops)

    def add(self, name: str, category: str, flops: int):
        self.rows.append((name, category, int(flops)))

    def total(self) -> int:
        return sum(r[2] for r in self.rows)

    def by_category(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for _, cat, n in self.rows:
            out[cat] = out.get(cat, 0) + n
        return out

    def format(self) -> str:
        lines = [f"{'layer':<40} {'kind':<10} {'flops':>16}"]
        for name, cat, n in self.rows:
            lines.append(f"{name:<40} {cat:<10} {n:>16,}")
        lines.append("-" * 68)
        for cat, n in sorted(self.by_category().items()):
            lines.append(f"{'subtotal ' + cat:<51} {n:>16,}")
        lines.append(f"{'total':<51} {self.total():>16,}")
        return "\n".join(lines)


def _conv_flops(cin, cout, k, h, w) -> int:
    return 2 * cout * cin * k * k * h * w


def _scem_flops(rep: FlopsReport, name: str, c: int, h: int, w: int,
                p: int, ratio: int, mult: int = 1):
    n = (h // p) * (w // p) * mult  # patch count
    t = p * p
    rep.add(f"{name}.channel.qkv", "linear", 3 * 2 * n * c * t * t)
    rep.add(f"{name}.channel.attn", "attention", 2 * (n * c * c * t + n * c * c * t))
    rep.add(f"{name}.spatial.qkvo", "linear", 4 * 2 * n * t * c * c)
    rep.add(f"{name}.spatial.attn", "attention", 2 * (n * t * t * c + n * t * t * c))
    rep.add(f"{name}.mlp", "linear", 2 * 2 * n * t * c * (ratio * c))


def _msa_block_flops(rep: FlopsReport, name: str, c: int, h: int, w: int,
                     p: int, ratio: int):
    n = (h // p) * (w // p)
    t = p * p
    rep.add(f"{name}.qkvo", "linear", 4 * 2 * n * t * c * c)
    rep.add(f"{name}.attn", "attention", 2 * (n * t * t * c + n * t * t * c))
    rep.add(f"{name}.mlp", "linear", 2 * 2 * n * t * c * (ratio * c))


def _fusion_flops(rep: FlopsReport, name: str, mode: str, c: int, h: int, w: int,
                  p: int, ratio: int):
    if mode == "mean":
        return
    if mode == "conv":
        rep.add(f"{name}.conv", "conv", _conv_flops(3 * c, c, 3, h, w))
        return
    rep.add(f"{name}.conv_in", "conv", _conv_flops(3 * c, c, 3, h, w))
    _msa_block_flops(rep, name, c, h, w, p, ratio)
    rep.add(f"{name}.conv_out", "conv", _conv_flops(c, c, 3, h, w))


def _encoder_flops(rep: FlopsReport, name: str, cin, cout, h, w, p, ratio,
                   mult: int = 1):
    # h, w are the extents after this stage's downsample
    rep.add(f"{name}.down", "conv", mult * _conv_flops(cin, cout, 3, h, w))
    _scem_flops(rep, f"{name}.scem", cout, h, w, p, ratio, mult=mult)
    rep.add(f"{name}.conv1", "conv", mult * _conv_flops(cout, cout, 3, h, w))
    rep.add(f"{name}.conv2", "conv", mult * _conv_flops(cout, cout, 3, h, w))


def _decoder_flops(rep: FlopsReport, name: str, b, c1, c2, h, w):
    rep.add(f"{name}.up1.conv1", "conv", _conv_flops(c2, c2, 3, h // 4, w // 4))
    rep.add(f"{name}.up1.conv2", "conv", _conv_flops(c2, 4 * c1, 3, h // 4, w // 4))
    rep.add(f"{name}.up2.conv1", "conv", _conv_flops(c1, c1, 3, h // 2, w // 2))
    rep.add(f"{name}.up2.conv2", "conv", _conv_flops(c1, 4 * b, 3, h // 2, w // 2))
    rep.add(f"{name}.smooth1", "conv", _conv_flops(b, b, 3, h, w))
    rep.add(f"{name}.smooth2", "conv", _conv_flops(b, 3, 3, h, w))


def flops_estimate(config: ModelConfig, h: int, w: int) -> FlopsReport:
    """Multiply-add cost (counted as 2 flops each) of one forward pass.

    Only convolutions, linear projections, and attention matmuls are
    counted; normalisation, softmax, and elementwise work are excluded.
    Input extents are first rounded up to the model's padding multiple.
    """
    mult = config.pad_multiple
    h = h + ((-h) % mult)
    w = w + ((-w) % mult)
    b, (c1, c2) = config.base_channels, config.scale_channels
    p, ratio = config.patch, config.mlp_ratio
    rep = FlopsReport()

    if config.stage_mode in ("dual", "coarse"):
        rep.add("coarse.stem.conv1[x3]", "conv", 3 * _conv_flops(3, b, 3, h, w))
        rep.add("coarse.stem.conv2[x3]", "conv", 3 * _conv_flops(b, b, 3, h, w))
        _encoder_flops(rep, "coarse.stage1[x3]", b, c1, h // 2, w // 2, p, ratio, mult=3)
        _encoder_flops(rep, "coarse.stage2[x3]", c1, c2, h // 4, w // 4, p, ratio, mult=3)
        rep.add("coarse.fuse", "conv", _conv_flops(3 * c2, c2, 1, h // 4, w // 4))
        if config.enable_tfam_skip:
            _fusion_flops(rep, "coarse.skip_mid", config.aggregation_mode,
                          c1, h // 2, w // 2, p, ratio)
            _fusion_flops(rep, "coarse.skip_top", config.aggregation_mode,
                          b, h, w, p, ratio)
        _decoder_flops(rep, "coarse.decoder", b, c1, c2, h, w)

    if config.stage_mode in ("dual", "fine"):
        rep.add("fine.stem.conv1", "conv", _conv_flops(3, b, 3, h, w))
        rep.add("fine.stem.conv2", "conv", _conv_flops(b, b, 3, h, w))
        _encoder_flops(rep, "fine.stage1", b, c1, h // 2, w // 2, p, ratio)
        _encoder_flops(rep, "fine.stage2", c1, c2, h // 4, w // 4, p, ratio)
        _decoder_flops(rep, "fine.decoder", b, c1, c2, h, w)

    return rep
