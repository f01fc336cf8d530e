"""What the two attention paths and the temporal fuser actually compute.

Channel attention mixes feature maps with a C-by-C map built from patch
descriptors; spatial attention mixes the pixels of each patch.  Both sit
behind residual connections, so zeroing their output projections turns the
whole encoder block into an exact identity; that is demonstrated at the
bottom because it is the property that makes the blocks trainable from
scratch.
"""

import numpy as np

from dsct.attention import (SpatialChannelEncoder, TemporalFusion,
                            patch_partition)
from dsct.tensor import Tensor


def main():
    rng = np.random.default_rng(0)
    feat = rng.standard_normal((1, 8, 8, 8)).astype(np.float32)

    tokens = patch_partition(Tensor(feat), p=4)
    print("feature map (1, 8, 8, 8) -> patch tokens", tokens.shape,
          "(patches, channels, pixels-per-patch)")

    block = SpatialChannelEncoder(dim=8, p=4, heads=2, mlp_ratio=2,
                                  rng=np.random.default_rng(1))
    out = block(Tensor(feat))
    print("encoder block keeps the map shape:", out.shape)
    print("output std vs input std:",
          f"{out.data.std():.3f} vs {feat.std():.3f}")

    # the residual identity: silence both attention paths and the MLP
    for t in (block.channel.wv.w, block.channel.wv.b, block.spatial.wo.w,
              block.spatial.wo.b, block.mlp.fc2.w, block.mlp.fc2.b):
        t.data[...] = 0.0
    silenced = block(Tensor(feat))
    print("zeroed projections give the identity:",
          bool(np.array_equal(silenced.data, feat)))

    # temporal fusion starts as a pass-through of the current frame
    fusion = TemporalFusion(dim=8, p=4, heads=2, mlp_ratio=2,
                            rng=np.random.default_rng(2))
    fusion.conv_out.w.data[...] = 0.0
    fusion.conv_out.b.data[...] = 0.0
    prev, cur, nxt = (Tensor(rng.standard_normal((1, 8, 8, 8)).astype(np.float32))
                      for _ in range(3))
    fused = fusion(prev, cur, nxt)
    print("zeroed fusion passes the current frame through:",
          bool(np.array_equal(fused.data, cur.data)))


if __name__ == "__main__":
    main()
