"""Latent inversion and post-generation editing.

Inversion projects a target asset into (code, soft label) space by direct
optimization of the generator's reconstruction error, with an
accept-only-improving rule so the loss history is monotone.  Label edits
re-render with the recovered code untouched; skin-tone edits reuse the
normalization model as the recoloring operator; geometry edits apply
authored position-map offsets.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np
import torch
import torch.nn.functional as F

from .labels import (N_AGE, N_ETHNICITY, N_GENDER, SoftLabel, encode_label,
                     soft_from_vector)
from .netops import to_numpy, to_tensor
from .toydata import FaceAsset


@dataclass
class InversionResult:
    code: np.ndarray
    label: SoftLabel
    final_loss: float
    iterations: int
    history: list

    def __post_init__(self):
        if self.final_loss < 0:
            raise ValueError("inversion loss cannot be negative")


def _soft_groups(logits_e, logits_g, logits_a):
    return torch.cat([F.softmax(logits_e, dim=1), F.softmax(logits_g, dim=1),
                      F.softmax(logits_a, dim=1)], dim=1)


def invert_batch(targets: list, step2, classifier=None, budget: int = 500,
                 lr: float = 0.05) -> list:
    """Invert several targets jointly; returns one InversionResult each.

    Each target keeps its own step-size that shrinks on rejected steps, so
    every per-target loss history is non-increasing.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    n = len(targets)
    x = torch.stack([torch.cat([to_tensor(t.albedo), to_tensor(t.position)])
                     for t in targets])
    with torch.no_grad():
        code = step2.encoder(x).clone()

    if classifier is not None:
        pred = classifier.predict(x[:, :3])
        labels0 = [encode_label_from_indices(*pred[i]) for i in range(n)]
    else:
        labels0 = [SoftLabel(np.full(N_ETHNICITY, 1 / N_ETHNICITY),
                             np.full(N_GENDER, 1 / N_GENDER),
                             np.full(N_AGE, 1 / N_AGE)) for _ in range(n)]
    # parameterize each sub-label by logits so iterates stay on the simplex
    le = torch.log(torch.from_numpy(
        np.stack([l.ethnicity * 0.9 + 0.1 / N_ETHNICITY for l in labels0])).float())
    lg = torch.log(torch.from_numpy(
        np.stack([l.gender * 0.9 + 0.1 / N_GENDER for l in labels0])).float())
    la = torch.log(torch.from_numpy(
        np.stack([l.age * 0.9 + 0.1 / N_AGE for l in labels0])).float())

    params = [code, le, lg, la]
    for p in params:
        p.requires_grad_(True)

    def losses() -> torch.Tensor:
        out = step2.g2(code, _soft_groups(le, lg, la))
        return ((out - x) ** 2).mean(dim=(1, 2, 3))

    cur = losses()
    history = [[float(v)] for v in cur.detach()]
    step_size = torch.full((n,), lr)
    for _ in range(budget):
        total = cur.sum()
        grads = torch.autograd.grad(total, params)
        with torch.no_grad():
            old = [p.detach().clone() for p in params]
            for p, g_ in zip(params, grads):
                norm = g_.reshape(n, -1).norm(dim=1).clamp_min(1e-12)
                shape = (n,) + (1,) * (p.dim() - 1)
                p -= (step_size.view(shape) / norm.view(shape)) * g_
        new = losses()
        with torch.no_grad():
            better = new.detach() < cur.detach()
            for p, o in zip(params, old):
                keep = better.view((n,) + (1,) * (p.dim() - 1))
                p.copy_(torch.where(keep, p.detach(), o))
            step_size = torch.where(better, step_size * 1.1, step_size * 0.5)
            step_size.clamp_(1e-6, 1.0)
        cur = losses()
        for i in range(n):
            history[i].append(float(cur[i].detach()))

    soft = _soft_groups(le, lg, la).detach().numpy()
    results = []
    for i in range(n):
        results.append(InversionResult(
            code=to_numpy(code[i].detach()),
            label=soft_from_vector(soft[i].astype(np.float64)),
            final_loss=history[i][-1],
            iterations=budget,
            history=history[i]))
    return results


def invert(target: FaceAsset, step2, classifier=None,
           budget: int = 500) -> InversionResult:
    """Project one asset into (code, label) space; see invert_batch."""
    return invert_batch([target], step2, classifier, budget)[0]


def encode_label_from_indices(e: int, g: int, a: int) -> SoftLabel:
    from .labels import AttributeLabel
    return encode_label(AttributeLabel(int(e), int(g), int(a)))


def edit_label(result: InversionResult, new_label: SoftLabel, step2) -> FaceAsset:
    """Re-render with the recovered code and a new label; code untouched."""
    from .disgan import generate
    return generate(result.code, new_label, step2)


_AXES = {"ethnicity": N_ETHNICITY, "gender": N_GENDER, "age": N_AGE}


def _mix_axis(label: SoftLabel, axis: str, lo: int, hi: int, t: float) -> SoftLabel:
    sub = np.zeros(_AXES[axis])
    sub[lo] += 1.0 - t
    sub[hi] += t
    parts = {"ethnicity": label.ethnicity, "gender": label.gender, "age": label.age}
    parts[axis] = sub
    return SoftLabel(parts["ethnicity"], parts["gender"], parts["age"])


def interpolate_grid(code: np.ndarray, label: SoftLabel, axis1: tuple,
                     axis2: tuple, steps: int, step2) -> list:
    """steps x steps grid of assets, mixing two attribute axes convexly.

    Each axis is (attribute_name, from_index, to_index); all other
    sub-labels stay fixed.  Corner cells equal pure-label edits exactly.
    """
    from .disgan import generate
    a1, lo1, hi1 = axis1
    a2, lo2, hi2 = axis2
    if a1 == a2:
        raise ValueError("interpolation axes must be distinct attributes")
    ts = [0.0] if steps == 1 else [i / (steps - 1) for i in range(steps)]
    grid = []
    for t1 in ts:
        row = []
        for t2 in ts:
            mixed = _mix_axis(_mix_axis(label, a1, lo1, hi1, t1), a2, lo2, hi2, t2)
            row.append(generate(code, mixed, step2))
        grid.append(row)
    return grid


class SkinToneModel:
    """Per-ethnicity normal distribution over measured skin colors."""

    def __init__(self):
        self.means = {}
        self.covs = {}

    def fit(self, colors_by_ethnicity: dict) -> "SkinToneModel":
        for e, colors in colors_by_ethnicity.items():
            arr = np.asarray(colors, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 3:
                raise ValueError("colors must be (n, 3)")
            self.means[e] = arr.mean(axis=0)
            if len(arr) > 1:
                cov = np.cov(arr, rowvar=False)
            else:
                cov = np.zeros((3, 3))
            self.covs[e] = (cov + cov.T) / 2
        return self

    def sample(self, ethnicity: int, rng: np.random.Generator) -> np.ndarray:
        if ethnicity not in self.means:
            raise ValueError(f"skin-tone model not fitted for ethnicity {ethnicity}")
        cov = self.covs[ethnicity]
        vals, vecs = np.linalg.eigh(cov)
        root = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))
        draw = self.means[ethnicity] + root @ rng.standard_normal(3)
        return np.clip(draw, 0.0, 1.0)


def fit_skin_tone_model(records) -> SkinToneModel:
    """Fit from unnormalized (lit) textures, grouped by record ethnicity."""
    from .uvtex import flat_region_mask, skin_color
    groups: dict = {}
    for r in records:
        c = skin_color(r.lit_texture, flat_region_mask(r.lit_texture.shape[0]))
        groups.setdefault(r.label.ethnicity, []).append(c)
    return SkinToneModel().fit(groups)


def sample_skin_tone(ethnicity: int, rng: np.random.Generator,
                     model: SkinToneModel) -> np.ndarray:
    return model.sample(ethnicity, rng)


def edit_skin_tone(albedo: np.ndarray, target: np.ndarray, normalizer) -> np.ndarray:
    """Recolor an albedo to a target skin color via the normalization model."""
    from .normnet import normalize
    return normalize(albedo, target, normalizer)


@dataclass
class GeometryOffset:
    name: str
    delta: np.ndarray
    default_weight: float = 1.0

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.float32)
        if not np.isfinite(self.delta).all():
            raise ValueError("offset delta must be finite")
        if not 0.0 <= self.default_weight <= 1.0:
            raise ValueError("default weight must lie in [0, 1]")

    def at_resolution(self, res: int) -> "GeometryOffset":
        if self.delta.shape[0] == res:
            return self
        t = to_tensor(self.delta)[None]
        out = F.interpolate(t, size=(res, res), mode="bilinear", align_corners=False)
        return GeometryOffset(self.name, to_numpy(out[0]), self.default_weight)


def load_offsets() -> dict:
    """Authored offsets shipped as package data, keyed by name."""
    root = resources.files("faceforge") / "data" / "offsets"
    manifest = json.loads((root / "manifest.json").read_text())
    offsets = {}
    for entry in manifest:
        with (root / entry["file"]).open("rb") as f:
            delta = np.load(f)["delta"]
        offsets[entry["name"]] = GeometryOffset(entry["name"], delta,
                                                entry["default_weight"])
    return offsets


def apply_geometry_offset(asset: FaceAsset, offset: GeometryOffset,
                          weight: float) -> FaceAsset:
    """position += weight * delta, clamped; albedo is untouched."""
    if offset.delta.shape != asset.position.shape:
        raise ValueError(f"offset resolution {offset.delta.shape} does not "
                         f"match asset {asset.position.shape}")
    pos = np.clip(asset.position + np.float32(weight) * offset.delta, 0.0, 1.0)
    return FaceAsset(asset.albedo.copy(), pos.astype(np.float32))
