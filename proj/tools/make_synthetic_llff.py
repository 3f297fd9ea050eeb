#!/usr/bin/env python3
"""Ray-cast a small forward-facing scene and write it as a COLMAP text model.

Layout written to OUT:
    images/view_XX.png
    sparse/0/cameras.txt, images.txt, points3D.txt

The scene is a textured back wall, a floor and two spheres, seen from a 3x3
grid of cameras that all look at the same point (LLFF-style capture).
"""

import argparse
import os

import numpy as np
from PIL import Image


def wall_color(p):
    x, y = p[..., 0], p[..., 1]
    r = 0.55 + 0.35 * np.sin(1.7 * x + 0.3) * np.cos(1.1 * y)
    g = 0.45 + 0.30 * np.cos(2.3 * x - 0.8 * y)
    b = 0.50 + 0.30 * np.sin(0.9 * y + 1.3 * x + 1.0)
    stripe = (np.sin(3.0 * x) > 0.6).astype(float) * 0.25
    return np.stack([r - stripe, g + stripe * 0.5, b], -1)


def floor_color(p):
    x, z = p[..., 0], p[..., 2]
    check = ((np.floor(x * 1.5) + np.floor(z * 1.5)) % 2).astype(float)
    base = np.stack([0.35 + 0.3 * check, 0.30 + 0.25 * check, 0.20 + 0.15 * check], -1)
    return base


SPHERES = [
    (np.array([-0.45, 0.15, 2.6]), 0.45, np.array([0.85, 0.35, 0.25])),
    (np.array([0.55, 0.30, 3.1]), 0.35, np.array([0.25, 0.55, 0.85])),
]
WALL_Z = 4.0
FLOOR_Y = 0.65
LIGHT = np.array([-0.4, -0.8, -0.45])
LIGHT = LIGHT / np.linalg.norm(LIGHT)


def sphere_color(k, p):
    c, _, base = SPHERES[k]
    n = (p - c) / np.linalg.norm(p - c, axis=-1, keepdims=True)
    band = 0.15 * np.sin(6.0 * n[..., 1])[..., None]
    shade = 0.45 + 0.55 * np.clip((n * LIGHT).sum(-1), 0, 1)[..., None]
    return np.clip(base[None] * shade + band, 0, 1)


def trace(origins, dirs):
    """Returns (t, surface_id) for the first hit; id 0 wall, 1 floor, 2+k sphere k."""
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    best_id = np.full(n, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (WALL_Z - origins[:, 2]) / dirs[:, 2]
        ok = (t > 1e-4) & (t < best_t)
        best_t[ok], best_id[ok] = t[ok], 0
        t = (FLOOR_Y - origins[:, 1]) / dirs[:, 1]
        ok = (t > 1e-4) & (t < best_t)
        best_t[ok], best_id[ok] = t[ok], 1
    for k, (c, r, _) in enumerate(SPHERES):
        oc = origins - c
        b = (oc * dirs).sum(-1)
        cc = (oc * oc).sum(-1) - r * r
        disc = b * b - cc
        hit = disc > 0
        t = np.where(hit, -b - np.sqrt(np.maximum(disc, 0)), np.inf)
        ok = (t > 1e-4) & (t < best_t)
        best_t[ok], best_id[ok] = t[ok], 2 + k
    return best_t, best_id


def shade(points, ids):
    out = np.zeros_like(points)
    m = ids == 0
    out[m] = wall_color(points[m])
    m = ids == 1
    out[m] = floor_color(points[m])
    for k in range(len(SPHERES)):
        m = ids == 2 + k
        out[m] = sphere_color(k, points[m])
    return np.clip(out, 0, 1)


def look_at(eye, target):
    forward = target - eye
    forward /= np.linalg.norm(forward)
    up = np.array([0.0, -1.0, 0.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])  # world -> camera
    return rot, -rot @ eye


def rot_to_quat(r):
    w = np.sqrt(max(0.0, 1 + r[0, 0] + r[1, 1] + r[2, 2])) / 2
    x = np.sqrt(max(0.0, 1 + r[0, 0] - r[1, 1] - r[2, 2])) / 2
    y = np.sqrt(max(0.0, 1 - r[0, 0] + r[1, 1] - r[2, 2])) / 2
    z = np.sqrt(max(0.0, 1 - r[0, 0] - r[1, 1] + r[2, 2])) / 2
    x = np.copysign(x, r[2, 1] - r[1, 2])
    y = np.copysign(y, r[0, 2] - r[2, 0])
    z = np.copysign(z, r[1, 0] - r[0, 1])
    return np.array([w, x, y, z])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--width", type=int, default=96)
    ap.add_argument("--height", type=int, default=72)
    ap.add_argument("--focal", type=float, default=84.0)
    ap.add_argument("--points", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    w, h, f = args.width, args.height, args.focal
    cx, cy = w / 2, h / 2

    os.makedirs(os.path.join(args.out, "images"), exist_ok=True)
    os.makedirs(os.path.join(args.out, "sparse", "0"), exist_ok=True)

    target = np.array([0.0, 0.1, 3.2])
    cams = []
    for gy in (-0.12, 0.0, 0.12):
        for gx in (-0.2, 0.0, 0.2):
            cams.append(look_at(np.array([gx, gy, 0.0]), target))

    ss = 3
    for i, (rot, trans) in enumerate(cams):
        eye = -rot.T @ trans
        px, py = np.meshgrid((np.arange(w * ss) + 0.5) / ss, (np.arange(h * ss) + 0.5) / ss)
        d_cam = np.stack([(px - cx) / f, (py - cy) / f, np.ones_like(px)], -1).reshape(-1, 3)
        d = d_cam @ rot  # camera -> world for row vectors
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        o = np.broadcast_to(eye, d.shape)
        t, ids = trace(o, d)
        col = shade(o + d * t[:, None], ids).reshape(h, ss, w, ss, 3).mean((1, 3))
        Image.fromarray((np.clip(col, 0, 1) * 255 + 0.5).astype(np.uint8)).save(
            os.path.join(args.out, "images", f"view_{i:02d}.png"))

    # SfM-like cloud: rays from random cameras through random pixels, first hit, jittered.
    pts, cols = [], []
    while len(pts) < args.points:
        k = rng.integers(len(cams))
        rot, trans = cams[k]
        eye = -rot.T @ trans
        u = rng.uniform(0, w, 256)
        v = rng.uniform(0, h, 256)
        d = np.stack([(u - cx) / f, (v - cy) / f, np.ones_like(u)], -1) @ rot
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        t, ids = trace(np.broadcast_to(eye, d.shape), d)
        ok = np.isfinite(t) & (t < 8.0)
        p = eye + d[ok] * t[ok, None]
        c = shade(p, ids[ok])
        p = p + rng.normal(0, 0.004, p.shape)
        pts.extend(p)
        cols.extend(c)
    pts = np.array(pts[: args.points])
    cols = np.array(cols[: args.points])

    sparse = os.path.join(args.out, "sparse", "0")
    with open(os.path.join(sparse, "cameras.txt"), "w") as fh:
        fh.write("# Camera list with one line of data per camera:\n")
        fh.write("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        fh.write(f"1 PINHOLE {w} {h} {f} {f} {cx} {cy}\n")
    with open(os.path.join(sparse, "images.txt"), "w") as fh:
        fh.write("# Image list with two lines of data per image:\n")
        fh.write("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n")
        fh.write("#   POINTS2D[] as (X, Y, POINT3D_ID)\n")
        for i, (rot, trans) in enumerate(cams):
            q = rot_to_quat(rot)
            fh.write(f"{i + 1} {q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f} "
                     f"{trans[0]:.9f} {trans[1]:.9f} {trans[2]:.9f} 1 view_{i:02d}.png\n\n")
    with open(os.path.join(sparse, "points3D.txt"), "w") as fh:
        fh.write("# 3D point list with one line of data per point:\n")
        fh.write("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n")
        for i, (p, c) in enumerate(zip(pts, cols)):
            rgb = np.clip(np.round(c * 255), 0, 255).astype(int)
            fh.write(f"{i + 1} {p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {rgb[0]} {rgb[1]} {rgb[2]} 0.5\n")


if __name__ == "__main__":
    main()
