"""Filesystem asset store: records under stable content-derived IDs.

Each record is a directory written atomically (staged then renamed) and
becomes visible only after its files are durably on disk, when its line is
appended to a JSON-lines index under a single writer lock.  Parent links
form a forest by construction: a child can only be inserted after its
parent is already indexed.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from .toydata import FaceAsset

LIGHT_DIR = np.array([0.35, -0.25, 0.9])
AMBIENT = 0.25


def derive_id(payload: dict) -> str:
    """Stable opaque id from a canonical JSON payload."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def render_preview(asset: FaceAsset) -> np.ndarray:
    """Deterministic shaded composite: Lambertian light over map normals.

    Normals come from finite differences of the position map; one fixed
    directional light plus an ambient floor. Returns uint8 HxWx3.
    """
    pos = asset.position.astype(np.float64)
    du = np.gradient(pos, axis=1)
    dv = np.gradient(pos, axis=0)
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=2, keepdims=True)
    n = n / np.clip(norm, 1e-9, None)
    light = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)
    lam = np.clip((n * light).sum(axis=2), 0.0, 1.0)
    shaded = asset.albedo * (AMBIENT + (1 - AMBIENT) * lam)[..., None]
    return (np.clip(shaded, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


@dataclass
class AssetRecord:
    id: str
    kind: str
    label: dict | None = None
    soft_label: list | None = None
    seed: int | None = None
    parent_id: str | None = None
    checkpoint: str = ""
    created_at: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class AssetStore:
    def __init__(self, root: Path, checkpoint_hash: str = ""):
        self.root = Path(root)
        self.records_dir = self.root / "records"
        self.index_path = self.root / "index.jsonl"
        self.checkpoint_hash = checkpoint_hash
        self.records_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._index: dict = {}
        if self.index_path.exists():
            for line in self.index_path.read_text().splitlines():
                if line.strip():
                    rec = AssetRecord(**json.loads(line))
                    self._index[rec.id] = rec

    def has(self, asset_id: str) -> bool:
        return asset_id in self._index

    def get(self, asset_id: str) -> AssetRecord:
        if asset_id not in self._index:
            raise KeyError(f"unknown asset id {asset_id}")
        return self._index[asset_id]

    def ids(self) -> list:
        return list(self._index)

    def record_dir(self, asset_id: str) -> Path:
        return self.records_dir / asset_id

    def load_asset(self, asset_id: str) -> FaceAsset:
        d = self.record_dir(self.get(asset_id).id)
        albedo = np.asarray(Image.open(d / "albedo.png").convert("RGB"),
                            dtype=np.float32) / 255.0
        position = np.load(d / "position.npy")
        return FaceAsset(albedo, position)

    def load_code(self, asset_id: str) -> np.ndarray | None:
        path = self.record_dir(self.get(asset_id).id) / "code.npy"
        return np.load(path) if path.exists() else None

    def file_bytes(self, asset_id: str, name: str) -> bytes:
        path = self.record_dir(self.get(asset_id).id) / name
        if not path.exists():
            raise KeyError(f"asset {asset_id} has no file {name}")
        return path.read_bytes()

    def put(self, record: AssetRecord, asset: FaceAsset,
            code: np.ndarray | None = None) -> AssetRecord:
        """Insert a record; idempotent on id, atomic on disk."""
        with self._lock:
            if record.id in self._index:
                return self._index[record.id]
            if record.parent_id is not None and record.parent_id not in self._index:
                raise KeyError(f"parent {record.parent_id} does not exist")
            record.checkpoint = record.checkpoint or self.checkpoint_hash
            record.created_at = record.created_at or \
                datetime.now(timezone.utc).isoformat()

            staging = self.records_dir / f".tmp-{record.id}"
            if staging.exists():
                for p in staging.iterdir():
                    p.unlink()
            staging.mkdir(parents=True, exist_ok=True)
            (staging / "albedo.png").write_bytes(
                png_bytes((asset.albedo * 255.0 + 0.5).astype(np.uint8)))
            np.save(staging / "position.npy", asset.position)
            (staging / "preview.png").write_bytes(png_bytes(render_preview(asset)))
            if code is not None:
                np.save(staging / "code.npy", code.astype(np.float32))
            (staging / "meta.json").write_text(record.to_json())

            final = self.record_dir(record.id)
            if final.exists():  # stale leftovers from a crashed write
                import shutil
                shutil.rmtree(final)
            os.rename(staging, final)
            with open(self.index_path, "a") as f:
                f.write(record.to_json() + "\n")
            self._index[record.id] = record
            return record

    def lineage(self, asset_id: str) -> list:
        """Chain of records from the given id back to its root."""
        chain = [self.get(asset_id)]
        seen = {asset_id}
        while chain[-1].parent_id is not None:
            pid = chain[-1].parent_id
            if pid in seen:
                raise RuntimeError(f"lineage cycle detected at {pid}")
            seen.add(pid)
            chain.append(self.get(pid))
        return chain
