"""Noise synthesis and scoring, checked against pencil-and-paper numbers.

Gaussian noise with standard deviation sigma (on the 0-255 scale) pushes the
PSNR of a frame to 20*log10(255/sigma) dB in expectation.  The table this
prints should match that column to within sampling error, which is the
sanity check to run whenever the data pipeline looks suspicious.
"""

import math
import os
import tempfile

from dsct.data import add_awgn, load_frame, write_ppm
from dsct.evaluate import psnr
from dsct.rng import NOISE, sample_stream, sigma_lane
from dsct.synthetic import make_sequence


def main():
    frame = make_sequence(128, 128, 1, seed=7).frames[0]

    print(f"{'sigma':>6} {'measured dB':>12} {'closed form':>12}")
    for sigma in (10.0, 25.0, 30.0, 50.0):
        noisy = add_awgn(frame, sigma,
                         sample_stream(0, NOISE, sigma_lane(sigma)))
        expected = 20.0 * math.log10(255.0 / sigma)
        print(f"{sigma:>6.1f} {psnr(frame, noisy):>12.3f} {expected:>12.3f}")

    # the same seed and key always reproduce the same noise
    a = add_awgn(frame, 25.0, sample_stream(0, NOISE, sigma_lane(25.0)))
    b = add_awgn(frame, 25.0, sample_stream(0, NOISE, sigma_lane(25.0)))
    print("same stream, same noise:", bool((a == b).all()))

    # round-tripping through 8-bit files costs about half a quantisation step
    out_dir = tempfile.mkdtemp(prefix="noise_demo_")
    path = os.path.join(out_dir, "noisy.ppm")
    write_ppm(path, a)
    back = load_frame(path)
    print(f"8-bit write/read PSNR vs in-memory frame: "
          f"{psnr(a.clip(0, 1), back):.1f} dB ({path})")


if __name__ == "__main__":
    main()
