"""Evaluation: brightness-symmetry error, attribute classifier, reports."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import uvtex
from .labels import N_AGE, N_ETHNICITY, N_GENDER
from .netops import seed_all, to_tensor


def bs_error(texture: np.ndarray, mask: np.ndarray) -> float:
    """Mean absolute mirrored-luminance difference over the mask, x100.

    The mask is intersected with its own mirror so the metric is exactly
    flip-invariant for any input.
    """
    sel = np.asarray(mask) > 0.5
    sel = sel & sel[:, ::-1]
    if not sel.any():
        raise ValueError("face mask selects no pixels")
    lum = uvtex.luminance(texture)
    return float(np.mean(np.abs(lum - lum[:, ::-1])[sel]) * 100.0)


def bs_summary(textures: list, mask: np.ndarray) -> dict:
    vals = [bs_error(t, mask) for t in textures]
    return {"median": float(np.median(vals)), "mean": float(np.mean(vals)),
            "n": len(vals)}


class AttributeClassifier(nn.Module):
    """Three-headed convolutional classifier over albedo textures.

    A fixed rectified-Laplacian channel is appended to the RGB input so that
    fine texture energy is a first-order signal rather than something the
    trunk has to rediscover from近-linear activations.
    """

    def __init__(self, base: int = 24):
        super().__init__()
        c = base
        lap = torch.tensor([[0., -1., 0.], [-1., 4., -1.], [0., -1., 0.]])
        self.register_buffer("lap_kernel", lap.view(1, 1, 3, 3))
        self.register_buffer("luma", torch.tensor([0.299, 0.587, 0.114]).view(1, 3, 1, 1))
        self.trunk = nn.Sequential(
            nn.Conv2d(4, c, 3, 1, 1), nn.ELU(),
            nn.Conv2d(c, c * 2, 4, 2, 1), nn.ELU(),
            nn.Conv2d(c * 2, c * 2, 3, 1, 1), nn.ELU(),
            nn.Conv2d(c * 2, c * 4, 4, 2, 1), nn.ELU(),
            nn.Conv2d(c * 4, c * 4, 3, 1, 1), nn.ELU(),
            nn.Conv2d(c * 4, c * 8, 4, 2, 1), nn.ELU(),
        )
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.neck = nn.Sequential(nn.Linear(c * 8 * 16, 256), nn.ELU())
        self.head_e = nn.Linear(256, N_ETHNICITY)
        self.head_g = nn.Linear(256, N_GENDER)
        self.head_a = nn.Linear(256, N_AGE)

    def forward(self, x):
        lum = (x * self.luma).sum(1, keepdim=True)
        edge = F.conv2d(F.pad(lum, (1, 1, 1, 1), mode="reflect"), self.lap_kernel).abs()
        h = self.pool(self.trunk(torch.cat([x, edge * 4.0], dim=1))).flatten(1)
        h = self.neck(h)
        return self.head_e(h), self.head_g(h), self.head_a(h)

    @torch.no_grad()
    def predict(self, x: torch.Tensor) -> np.ndarray:
        """(N,3,H,W) batch -> (N,3) int array of (ethnicity, gender, age)."""
        self.eval()
        le, lg, la = self(x)
        return torch.stack([le.argmax(1), lg.argmax(1), la.argmax(1)], dim=1).numpy()

    def predict_texture(self, texture: np.ndarray) -> tuple[int, int, int]:
        """Top-1 attribute triple for a single HxWx3 map."""
        out = self.predict(to_tensor(np.asarray(texture, dtype=np.float32))[None])
        return int(out[0, 0]), int(out[0, 1]), int(out[0, 2])


def _label_array(records) -> np.ndarray:
    return np.array([[r.label.ethnicity, r.label.gender, r.label.age_group]
                     for r in records], dtype=np.int64)


def _albedo_batch(records) -> torch.Tensor:
    return torch.stack([to_tensor(r.asset.albedo) for r in records])


def train_classifier(train_records: list, seed: int = 0, epochs: int = 22,
                     batch_size: int = 32, lr: float = 2e-3,
                     log_every: int = 0) -> AttributeClassifier:
    """Fit the attribute classifier on clean albedo maps; deterministic."""
    if not train_records:
        raise ValueError("empty training set")
    labels = _label_array(train_records)
    for dim, n, name in ((0, N_ETHNICITY, "ethnicity"), (1, N_GENDER, "gender"),
                         (2, N_AGE, "age")):
        present = set(labels[:, dim].tolist())
        if len(present) < n:
            import warnings
            warnings.warn(f"{name}: {n - len(present)} classes absent from train set")

    g = seed_all(seed)
    clf = AttributeClassifier()
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    n = len(train_records)
    steps_per_epoch = (n + batch_size - 1) // batch_size
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=epochs * steps_per_epoch)
    x_all = _albedo_batch(train_records)
    y_all = torch.from_numpy(labels)
    step = 0
    for epoch in range(epochs):
        order = torch.randperm(n, generator=g)
        for i in range(0, n, batch_size):
            idx = order[i:i + batch_size]
            le, lg, la = clf(x_all[idx])
            y = y_all[idx]
            loss = (F.cross_entropy(le, y[:, 0]) + F.cross_entropy(lg, y[:, 1])
                    + F.cross_entropy(la, y[:, 2]))
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            step += 1
            if log_every and step % log_every == 0:
                print(f"classifier epoch {epoch} step {step} loss {loss.item():.4f}")
    clf.eval()
    return clf


def classifier_accuracy(clf: AttributeClassifier, records: list,
                        batch_size: int = 64) -> dict:
    """Per-attribute top-1 accuracy on a record list."""
    preds = predict_records(clf, records, batch_size)
    truth = _label_array(records)
    names = ("ethnicity", "gender", "age")
    return {names[k]: float((preds[:, k] == truth[:, k]).mean()) for k in range(3)}


def predict_records(clf: AttributeClassifier, records: list,
                    batch_size: int = 64) -> np.ndarray:
    outs = []
    for i in range(0, len(records), batch_size):
        outs.append(clf.predict(_albedo_batch(records[i:i + batch_size])))
    return np.concatenate(outs)


def confusion(true_idx: np.ndarray, pred_idx: np.ndarray, n: int) -> np.ndarray:
    """Counts matrix; row = true class, column = predicted class."""
    m = np.zeros((n, n), dtype=np.int64)
    np.add.at(m, (true_idx, pred_idx), 1)
    return m


def _row_normalized(m: np.ndarray) -> np.ndarray:
    sums = m.sum(axis=1, keepdims=True)
    return np.divide(m, sums, out=np.zeros(m.shape, dtype=np.float64),
                     where=sums > 0)


@dataclass
class EvalReport:
    """Accuracy/confusion comparison between held-out data and samples."""

    dataset_accuracy: dict
    generated_accuracy: dict
    confusion_dataset: dict
    confusion_generated: dict
    confusion_difference: dict = field(default_factory=dict)
    bs: dict = field(default_factory=dict)
    n_generated: int = 0
    seed: int = 0

    def to_json(self, path: Path) -> None:
        blob = {
            "dataset_accuracy": self.dataset_accuracy,
            "generated_accuracy": self.generated_accuracy,
            "confusion_dataset": {k: v.tolist() for k, v in self.confusion_dataset.items()},
            "confusion_generated": {k: v.tolist() for k, v in self.confusion_generated.items()},
            "confusion_difference": {k: v.tolist() for k, v in self.confusion_difference.items()},
            "bs": self.bs,
            "n_generated": self.n_generated,
            "seed": self.seed,
        }
        Path(path).write_text(json.dumps(blob, indent=1, sort_keys=True))

    def to_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["attribute", "dataset_accuracy", "generated_accuracy", "difference"])
            for k in self.dataset_accuracy:
                w.writerow([k, f"{self.dataset_accuracy[k]:.4f}",
                            f"{self.generated_accuracy[k]:.4f}",
                            f"{self.generated_accuracy[k] - self.dataset_accuracy[k]:+.4f}"])


def evaluate_generator(clf: AttributeClassifier, g2_model, n_samples: int,
                       seed: int, heldout_records: list,
                       batch_size: int = 64) -> EvalReport:
    """Classify generated samples against their conditioning labels.

    Labels are drawn with the dataset sampling marginals; the report also
    carries held-out dataset numbers so the two sides are comparable.
    """
    from .disgan import generate_batch
    from .labels import encode_label, sample_attributes

    rng = np.random.Generator(np.random.PCG64(seed))
    names = ("ethnicity", "gender", "age")
    sizes = (N_ETHNICITY, N_GENDER, N_AGE)

    truth, preds = [], []
    remaining = n_samples
    while remaining > 0:
        b = min(batch_size, remaining)
        labels = [sample_attributes(rng) for _ in range(b)]
        soft = [encode_label(l) for l in labels]
        z_seed = int(rng.integers(0, 2 ** 63 - 1))
        albedo = generate_batch(g2_model, soft, z_seed)[:, :3]
        preds.append(clf.predict(albedo))
        truth.append([[l.ethnicity, l.gender, l.age_group] for l in labels])
        remaining -= b
    preds = np.concatenate(preds)
    truth = np.concatenate([np.asarray(t, dtype=np.int64) for t in truth])

    gen_acc = {names[k]: float((preds[:, k] == truth[:, k]).mean()) for k in range(3)}
    gen_conf = {names[k]: confusion(truth[:, k], preds[:, k], sizes[k]) for k in range(3)}

    ds_acc = classifier_accuracy(clf, heldout_records, batch_size)
    ds_pred = predict_records(clf, heldout_records, batch_size)
    ds_truth = _label_array(heldout_records)
    ds_conf = {names[k]: confusion(ds_truth[:, k], ds_pred[:, k], sizes[k]) for k in range(3)}

    diff = {k: _row_normalized(gen_conf[k]) - _row_normalized(ds_conf[k]) for k in names}
    return EvalReport(ds_acc, gen_acc, ds_conf, gen_conf, diff,
                      n_generated=n_samples, seed=seed)
