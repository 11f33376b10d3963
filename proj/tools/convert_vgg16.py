#!/usr/bin/env python3
"""Converts torchvision VGG16 weights into a crisisfuse checkpoint.

The classifier's last layer is dropped; the task head is always trained from
scratch. Dense weights are stored [in, out], the transpose of torch's layout.

    python tools/convert_vgg16.py --out vgg16_imagenet.cfck            # downloads ImageNet weights
    python tools/convert_vgg16.py --state-dict vgg16.pth --out vgg16.cfck
"""
import argparse
import struct
from pathlib import Path

import numpy as np

# features.<index> of each convolution, in block order.
CONV_INDICES = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28]
BLOCK_DEPTHS = [2, 2, 3, 3, 3]


def conv_names():
    return [f"conv{b + 1}_{l + 1}" for b, depth in enumerate(BLOCK_DEPTHS) for l in range(depth)]


def entries_from_state_dict(state):
    def arr(key):
        return np.ascontiguousarray(state[key].detach().cpu().numpy(), dtype="<f4")

    out = []
    for name, idx in zip(conv_names(), CONV_INDICES):
        out.append((f"image/{name}/kernel", arr(f"features.{idx}.weight")))
        out.append((f"image/{name}/bias", arr(f"features.{idx}.bias")))
    for name, idx in (("fc1", 0), ("fc2", 3)):
        out.append((f"image/{name}/weight", np.ascontiguousarray(arr(f"classifier.{idx}.weight").T)))
        out.append((f"image/{name}/bias", arr(f"classifier.{idx}.bias")))
    return out


def write_checkpoint(path, entries):
    with open(path, "wb") as f:
        f.write(b"CFCK")
        f.write(struct.pack("<HI", 1, len(entries)))
        for name, values in entries:
            encoded = name.encode("ascii")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", 0, values.ndim))
            f.write(struct.pack(f"<{values.ndim}I", *values.shape))
            f.write(values.astype("<f4").tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--state-dict", type=Path, help="torch state_dict of a torchvision vgg16")
    parser.add_argument("--out", type=Path, required=True)
    args = parser.parse_args()

    import torch
    import torchvision

    if args.state_dict:
        state = torch.load(args.state_dict, map_location="cpu")
    else:
        state = torchvision.models.vgg16(weights=torchvision.models.VGG16_Weights.IMAGENET1K_V1).state_dict()
    entries = entries_from_state_dict(state)
    write_checkpoint(args.out, entries)
    print(f"wrote {len(entries)} tensors to {args.out}")


if __name__ == "__main__":
    main()
