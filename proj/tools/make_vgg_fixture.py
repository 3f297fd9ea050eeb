#!/usr/bin/env python3
"""Write a reduced-width VGG-16 (conv1_1..relu4_1) weights container plus
reference tap activations computed with PyTorch.

Files written to OUT:
    vgg_small.eastnet          EASTNET/1 container
    fixture_input.f32          32x32x3 interleaved RGB input, float32 LE
    ref_<tap>.f32              C x H x W activation, float32 LE
    reference.json             tap shapes and the generator settings
"""

import argparse
import json
import os
import struct
import zlib

import numpy as np
import torch
import torch.nn.functional as F

MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)
TAPS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1")
BLOCKS = ((2, 64), (2, 128), (3, 256), (1, 512))


def layer_list(divisor):
    layers, cin = [], 3
    for b, (convs, width) in enumerate(BLOCKS):
        width //= divisor
        for k in range(1, convs + 1):
            layers.append(("conv", f"conv{b + 1}_{k}", cin, width))
            layers.append(("relu", f"relu{b + 1}_{k}"))
            cin = width
        if b < 3:
            layers.append(("maxpool", f"pool{b + 1}"))
    return layers


def fixture_image(size=32):
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.stack([x / (size - 1), y / (size - 1), (x + y) / (2 * (size - 1))], -1)
    return img.astype(np.float32)


def write_container(path, layers, params):
    data = bytearray()
    tensor_lines = []
    for name, arr in params:
        raw = arr.astype("<f4").tobytes()
        shape = ",".join(str(d) for d in arr.shape)
        tensor_lines.append(f"tensor {name} {shape} {len(data)} {zlib.crc32(raw) & 0xffffffff:08x}")
        data += raw
    head = ["EASTNET/1",
            "normalize_mean " + " ".join(repr(float(np.float32(v))) for v in MEAN),
            "normalize_std " + " ".join(repr(float(np.float32(v))) for v in STD),
            "taps " + " ".join(TAPS)]
    for layer in layers:
        head.append("layer " + " ".join(str(v) for v in layer))
    head += tensor_lines
    head.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode())
        fh.write(bytes(data))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--divisor", type=int, default=8)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    layers = layer_list(args.divisor)
    params = []
    for layer in layers:
        if layer[0] != "conv":
            continue
        _, name, cin, cout = layer
        w = rng.normal(0, np.sqrt(2.0 / (cin * 9)), (cout, cin, 3, 3)).astype(np.float32)
        b = rng.normal(0, 0.05, cout).astype(np.float32)
        params += [(name + ".weight", w), (name + ".bias", b)]
    write_container(os.path.join(args.out, "vgg_small.eastnet"), layers, params)

    img = fixture_image()
    img.astype("<f4").tofile(os.path.join(args.out, "fixture_input.f32"))

    pdict = {n: torch.from_numpy(a.astype(np.float64)) for n, a in params}
    x = torch.from_numpy(img.astype(np.float64)).permute(2, 0, 1)[None]
    mean = torch.tensor(np.float32(MEAN).astype(np.float64)).view(1, 3, 1, 1)
    std = torch.tensor(np.float32(STD).astype(np.float64)).view(1, 3, 1, 1)
    x = (x - mean) / std
    shapes = {}
    for layer in layers:
        kind, name = layer[0], layer[1]
        if kind == "conv":
            x = F.conv2d(x, pdict[name + ".weight"], pdict[name + ".bias"], padding=1)
        elif kind == "relu":
            x = F.relu(x)
        else:
            x = F.max_pool2d(x, 2, 2)
        if name in TAPS:
            arr = x[0].numpy().astype("<f4")
            arr.tofile(os.path.join(args.out, f"ref_{name}.f32"))
            shapes[name] = list(arr.shape)
        if name == TAPS[-1]:
            break
    with open(os.path.join(args.out, "reference.json"), "w") as fh:
        json.dump({"divisor": args.divisor, "seed": args.seed, "input": [32, 32, 3], "taps": shapes}, fh, indent=2)


if __name__ == "__main__":
    main()
