#!/usr/bin/env python3
"""Writes tests/fixtures/style/cel_swirl.png, a posterized swirl with dark outlines."""
import argparse
from pathlib import Path

import numpy as np
from PIL import Image

PALETTE = np.array([
    [0.10, 0.08, 0.30],
    [0.85, 0.20, 0.35],
    [0.98, 0.75, 0.20],
    [0.20, 0.70, 0.60],
    [0.95, 0.95, 0.85],
])


def cel_swirl(size=128):
    y, x = np.mgrid[0:size, 0:size] / 128.0
    f = np.sin(9 * x + 4 * np.sin(5 * y)) + np.cos(7 * y + 3 * np.cos(6 * x))
    levels = np.digitize(f, [-1.2, -0.4, 0.4, 1.2])
    img = PALETTE[levels]
    edge = np.zeros_like(f, bool)
    edge[:-1] |= levels[:-1] != levels[1:]
    edge[:, :-1] |= levels[:, :-1] != levels[:, 1:]
    img[edge] = 0.05
    return (img * 255 + 0.5).astype(np.uint8)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=Path(__file__).resolve().parent.parent / "tests/fixtures/style/cel_swirl.png", type=Path)
    args = ap.parse_args()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(cel_swirl()).save(args.out)


if __name__ == "__main__":
    main()
