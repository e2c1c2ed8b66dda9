"""The dual-branch segmentation model, stage by stage.

Two encoder-decoder branches run side by side over seven stages: a CNN
branch built from dynamic deformable convolutions and a transformer branch
built from shifted-window block pairs.  At every stage each branch hands
its features to the other, so local texture and global context mix
continuously rather than once at the end.  Three heads come out: one per
branch plus the fused prediction.
"""

import numpy as np

from tecnet.model import (TecNet, count_flops, count_params, nano_config,
                          tiny_config)


def main():
    cfg = nano_config()
    print(f"preset '{cfg.name}': input {cfg.input_size}, patch {cfg.patch}")
    print("stage widths:", [cfg.stage_width(i) for i in range(7)])
    print("stage grids: ", [cfg.stage_grid(i) for i in range(7)])
    print("stage heads: ", list(cfg.heads))

    model = TecNet(cfg, seed=0)
    rng = np.random.default_rng(0)
    image = rng.random((1, cfg.input_size, cfg.input_size))

    collect = {}
    out = model.forward(image, collect=collect)
    print("\nheads:", {k: v.shape for k, v in out.items()})

    print("\nstage | cnn features | transformer features")
    for i in range(7):
        c = collect[f"cnn_stage{i}"]
        t = collect[f"trans_stage{i}"]
        print(f"  {i}   | {str(c.shape):13s}| {t.shape}")

    # -- bookkeeping: exact parameter and MAC counts ------------------------
    params = count_params(cfg)
    macs = count_flops(cfg)
    print("\nparameters by part:")
    for key, val in params.items():
        print(f"  {key:12s} {val:>12,}")
    print(f"MACs at {cfg.input_size}x{cfg.input_size}: {macs['total']:,}")

    tiny = tiny_config()
    tp = count_params(tiny)["total"]
    tm = count_flops(tiny, input_size=224)["total"]
    print(f"\ntiny preset at 224x224: {tp / 1e6:.2f} M params, "
          f"{2 * tm / 1e9:.2f} GFLOPs")


if __name__ == "__main__":
    main()
