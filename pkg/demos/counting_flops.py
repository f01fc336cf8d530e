"""Where the multiply-accumulates go, and how they scale with input size.

The estimate counts convolutions, attention matmuls, and MLPs analytically
from the configuration; nothing is executed.  Handy for judging whether a
width or patch-size change is affordable before spending a training run on
it.
"""

from dsct.model import ModelConfig, flops_estimate


def main():
    cfg = ModelConfig()
    report = flops_estimate(cfg, 96, 96)
    print("default model at 96x96")
    print(report.format())

    print("\nscaling with input size (dual stage, default widths):")
    print(f"{'input':>10} {'gflops':>8}")
    for hw in (64, 96, 128, 192):
        total = flops_estimate(cfg, hw, hw).total()
        print(f"{hw:>7}x{hw:<3} {total / 1e9:>8.2f}")

    slim = ModelConfig(base_channels=16, scale_channels=(32, 64))
    ratio = flops_estimate(cfg, 96, 96).total() / flops_estimate(slim, 96, 96).total()
    print(f"\nhalving every width cuts compute {ratio:.1f}x")


if __name__ == "__main__":
    main()
