#!/usr/bin/env python3
"""Export torchvision's ImageNet VGG-16 (conv1_1..relu4_1) to an EASTNET/1 container.

    python3 tools/export_vgg16.py vgg16.eastnet

Needs torchvision and either network access or a cached vgg16 checkpoint.
Use --checkpoint to point at a local state_dict file instead.
"""

import argparse

import numpy as np
import torch

from make_vgg_fixture import layer_list, write_container

# Indices of the conv modules inside torchvision's vgg16().features.
TORCHVISION_CONV_INDEX = (0, 2, 5, 7, 10, 12, 14, 17)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--checkpoint", help="local torchvision vgg16 state_dict (.pth)")
    args = ap.parse_args()

    if args.checkpoint:
        state = torch.load(args.checkpoint, map_location="cpu")
    else:
        import torchvision
        state = torchvision.models.vgg16(weights=torchvision.models.VGG16_Weights.IMAGENET1K_V1).state_dict()

    layers = layer_list(1)
    convs = [layer for layer in layers if layer[0] == "conv"]
    params = []
    for layer, idx in zip(convs, TORCHVISION_CONV_INDEX):
        name = layer[1]
        w = state[f"features.{idx}.weight"].numpy().astype(np.float32)
        b = state[f"features.{idx}.bias"].numpy().astype(np.float32)
        assert w.shape == (layer[3], layer[2], 3, 3), (name, w.shape)
        params += [(name + ".weight", w), (name + ".bias", b)]
    write_container(args.out, layers, params)


if __name__ == "__main__":
    main()
