"""Regenerate the package data files: fixed UV masks and geometry offsets.

Run from the repository root:  python3 scripts/build_data.py
"""
import json
from pathlib import Path

import numpy as np
from PIL import Image

RES = 256
DATA = Path(__file__).resolve().parents[1] / "src" / "faceforge" / "data"


def grid(res):
    v, u = np.meshgrid(np.linspace(0, 1, res), np.linspace(0, 1, res), indexing="ij")
    return u, v


def ellipse(u, v, cx, cy, rx, ry):
    return ((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2 <= 1.0


def save_mask(name, m):
    Image.fromarray((np.clip(m, 0, 1) * 255).astype(np.uint8), mode="L").save(DATA / name)
    print(name, "coverage", float(np.mean(m > 0.5)))


def build_masks():
    u, v = grid(RES)
    flat = ellipse(u, v, 0.5, 0.20, 0.20, 0.055)
    flat |= ellipse(u, v, 0.5 - 0.185, 0.56, 0.065, 0.065)
    flat |= ellipse(u, v, 0.5 + 0.185, 0.56, 0.065, 0.065)
    save_mask("flat_mask_256.png", flat.astype(np.float64))

    d = ((u - 0.5) / 0.34) ** 2 + ((v - 0.50) / 0.42) ** 2
    t = np.clip((1.0 - d) / 0.15 + 0.5, 0, 1)
    vis = t * t * (3 - 2 * t)
    save_mask("visibility_256.png", vis)

    face = ellipse(u, v, 0.5, 0.52, 0.40, 0.48)
    save_mask("face_mask_256.png", face.astype(np.float64))


def build_offsets():
    u, v = grid(RES)
    m = np.abs(u - 0.5)
    zeros = np.zeros((RES, RES))
    offsets = {}

    cleft = -0.06 * np.exp(-((m / 0.018) ** 2)) * np.exp(-(((v - 0.86) / 0.045) ** 2))
    offsets["chin_cleft"] = (np.stack([zeros, zeros, cleft], axis=-1), 1.0,
                             "vertical groove on the chin")

    shrink = np.exp(-((m / 0.14) ** 2)) * np.exp(-(((v - 0.70) / 0.07) ** 2))
    dx = -0.30 * (u - 0.5) * shrink
    dy = -0.22 * (v - 0.70) * shrink
    offsets["mouth_size"] = (np.stack([dx, dy, zeros], axis=-1), 1.0,
                             "pulls the mouth region toward its center")

    ridge = 0.05 * np.exp(-((m / 0.05) ** 2)) * np.exp(-(((v - 0.50) / 0.12) ** 2))
    offsets["nose_height"] = (np.stack([zeros, zeros, ridge], axis=-1), 0.8,
                              "raises the nose ridge")

    out = DATA / "offsets"
    out.mkdir(exist_ok=True)
    manifest = []
    for name, (delta, weight, desc) in offsets.items():
        np.savez_compressed(out / f"{name}.npz", delta=delta.astype(np.float32))
        manifest.append({"name": name, "file": f"{name}.npz",
                         "default_weight": weight, "description": desc})
        print("offset", name, "max |delta|", float(np.abs(delta).max()))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


if __name__ == "__main__":
    DATA.mkdir(parents=True, exist_ok=True)
    build_masks()
    build_offsets()
