"""Window attention with four complementary branches, and what it costs.

The attention module splits each window's features four ways and runs a
separate attention pattern on each slice:

 * spatial: tokens attend over positions (classic windowed attention),
 * channel: channels attend over channels,
 * cross H and cross W: mixed axes, one spatial direction at a time.

The four results are concatenated and fused with learned weights.  Because
three of the branches operate on reduced token counts, the arithmetic cost
drops well below shifted-window attention at the same width.
"""

import numpy as np

from tecnet import Tensor
from tecnet.attention import (ACAM, cost_acam, cost_msa, cost_swmsa,
                              pad_to_window, shift_mask, window_partition,
                              window_reverse, crop_to)


def main():
    rng = np.random.default_rng(5)

    # -- windowing is exactly invertible, padding included ----------------
    x = Tensor(rng.standard_normal((16, 14, 10)))
    xp, (h, w) = pad_to_window(x, 4)
    hp, wp = xp.shape[1], xp.shape[2]
    windows = window_partition(xp, 4)
    back = crop_to(window_reverse(windows, 4, hp, wp), h, w)
    print("14x10 -> pad 16x12 ->", windows.shape[0], "windows -> restored:",
          np.array_equal(back.data, x.data))

    # -- a layer is the identity at initialization ------------------------
    # The output projection is zero-initialized, so a fresh layer vanishes;
    # with the block's residual around it, the stage starts as the identity.
    layer = ACAM(16, window=4, heads=2, shifted=False, rng=rng)
    y = layer(x)
    print("max |output| of a fresh layer:", float(np.max(np.abs(y.data))))

    # -- the four attention maps ------------------------------------------
    collect = {}
    layer(x, collect=collect)
    for name in ("spatial", "channel", "cross_h", "cross_w"):
        a = collect[name]
        print(f"  {name:8s} {str(a.shape):22s} rows sum to "
              f"{float(a.sum(axis=-1).mean()):.6f}")

    # -- shifted windows mask the wrap-around seam -------------------------
    shifted = ACAM(16, window=4, heads=2, shifted=True, rng=rng)
    collect = {}
    shifted(x, collect=collect)
    mask = shift_mask(16, 12, 4, 2)
    leak = max(float(collect["spatial"][i][:, mask[i] < 0].sum())
               for i in range(mask.shape[0]))
    print("largest attention mass across the seam:", f"{leak:.2e}")

    # -- cost model, MACs per layer ----------------------------------------
    print("\n  h x w    C   M      MSA    SW-MSA      ACAM")
    for (h, w, c, m) in [(8, 8, 16, 4), (16, 16, 96, 4), (56, 56, 96, 7)]:
        print(f"  {h:3d}x{w:<3d} {c:4d} {m:3d} {cost_msa(h, w, c):>9,}"
              f" {cost_swmsa(h, w, c, m):>9,} {cost_acam(h, w, c, m):>9,}")


if __name__ == "__main__":
    main()
