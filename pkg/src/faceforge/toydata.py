"""Procedural toy face assets: labeled albedo/position pairs plus lit textures.

Stands in for a portrait-synthesis data source.  Every generator here is a
pure function of its seeds, so records are reproducible from metadata alone.
Attribute encodings are deliberate: ethnicity fixes the base skin tone,
age-group fixes the wrinkle amplitude (monotone in the group index), gender
fixes brow geometry and feature edge sharpness.  The clean albedo is
mirror-symmetric by construction; synthetic lighting is the only source of
left-right brightness asymmetry.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .labels import AGE_GROUPS, AttributeLabel, sample_attributes

DEFAULT_RESOLUTION = 256

# Base melanin level per ethnicity: 14 evenly spaced levels on the skin
# manifold, ordered so the masked mean color stays separable under identity
# jitter.  The assignment follows a fixed light-to-dark permutation.
_TONE_LEVELS = (
    0.858, 0.674, 0.536, 0.720, 0.904, 0.950, 0.812,
    0.766, 0.628, 0.582, 0.490, 0.398, 0.444, 0.352,
)

# Per-gender feature parameters: (brow half-thickness, brow strength,
# edge softness in squared-distance units).  Male features are the sharpest.
_GENDER_BROW_T = (0.020, 0.009, 0.014)
_GENDER_BROW_S = (0.50, 0.22, 0.36)
_GENDER_EDGE_W = (0.08, 0.45, 0.20)

# Wrinkle amplitude per age group, geometric so adjacent groups differ by a
# constant energy ratio.
_WRINKLE_BASE = 0.020
_WRINKLE_RATIO = 1.28


def skin_manifold(level) -> np.ndarray:
    """Map melanin level(s) to RGB on the curved toy-skin manifold.

    The curvature matters: a multiplicative lighting gain moves colors along
    a straight ray and therefore off this manifold, which is what makes
    lighting locally identifiable from clean skin.
    """
    level = np.asarray(level, dtype=np.float64)
    r = level
    g = level * (1.00 - 0.32 * level)
    b = level * (0.90 - 0.55 * level)
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def ethnicity_tone(ethnicity: int) -> np.ndarray:
    """Deterministic base skin tone for one ethnicity index."""
    return skin_manifold(_TONE_LEVELS[ethnicity])


def wrinkle_amplitude(age_group: int) -> float:
    """Monotone high-frequency wrinkle amplitude for one age-group index."""
    return _WRINKLE_BASE * _WRINKLE_RATIO ** age_group


@dataclass
class FaceAsset:
    """Paired albedo and position map in a shared UV parameterization."""

    albedo: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        self.albedo = np.asarray(self.albedo, dtype=np.float32)
        self.position = np.asarray(self.position, dtype=np.float32)
        if self.albedo.shape != self.position.shape or self.albedo.ndim != 3 \
                or self.albedo.shape[2] != 3:
            raise ValueError("albedo and position must share an HxWx3 shape")
        for name, m in (("albedo", self.albedo), ("position", self.position)):
            if m.min() < 0.0 or m.max() > 1.0:
                raise ValueError(f"{name} values must lie in [0, 1]")

    @property
    def resolution(self) -> int:
        return self.albedo.shape[0]

    def copy(self) -> "FaceAsset":
        return FaceAsset(self.albedo.copy(), self.position.copy())


@dataclass
class ToyRecord:
    """One dataset entry: clean asset, lit texture, label and provenance."""

    asset: FaceAsset
    lit_texture: np.ndarray
    label: AttributeLabel
    identity_seed: int
    light_seed: int
    skin_color: np.ndarray


def _uv_grid(res: int):
    v, u = np.meshgrid(np.linspace(0.0, 1.0, res), np.linspace(0.0, 1.0, res),
                       indexing="ij")
    return u, v


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _ellipse_mask(u, v, cx, cy, rx, ry, soft):
    """Smooth-edged ellipse; `soft` is the transition width in d^2 units."""
    d = ((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2
    return _smoothstep((1.0 - d) / soft + 0.5)


def _bump(x, width):
    return np.exp(-((x / width) ** 4))


def generate_toy_asset(label: AttributeLabel, identity_seed: int,
                       resolution: int = DEFAULT_RESOLUTION) -> FaceAsset:
    """Render one labeled clean asset, deterministic in (label, seed)."""
    rng = np.random.Generator(np.random.PCG64(identity_seed))
    u, v = _uv_grid(resolution)
    m = np.abs(u - 0.5)  # mirrored horizontal coordinate keeps albedo symmetric

    # identity jitters (symmetric features share one jitter per mirrored pair)
    tone_jit = rng.uniform(-0.015, 0.015)
    eye_dx = 0.16 + rng.uniform(-0.012, 0.012)
    eye_y = 0.40 + rng.uniform(-0.012, 0.012)
    eye_r = 0.046 * (1.0 + rng.uniform(-0.15, 0.15))
    lip_y = 0.70 + rng.uniform(-0.015, 0.015)
    lip_rx = 0.11 * (1.0 + rng.uniform(-0.15, 0.15))
    brow_y = eye_y - 0.075 + rng.uniform(-0.008, 0.008)
    face_rx = 0.38 + rng.uniform(-0.02, 0.02)
    face_ry = 0.46 + rng.uniform(-0.02, 0.02)

    soft = _GENDER_EDGE_W[label.gender]
    base_level = float(np.clip(_TONE_LEVELS[label.ethnicity] + tone_jit, 0.05, 0.98))

    # mirrored low-frequency blotch field (identity texture variation)
    blotch = np.zeros_like(u)
    for _ in range(3):
        cx = rng.uniform(0.1, 0.9)
        cy = rng.uniform(0.1, 0.9)
        sig = rng.uniform(0.10, 0.25)
        amp = rng.uniform(-0.02, 0.02)
        blotch += amp * np.exp(-(((u - cx) ** 2 + (v - cy) ** 2) / (2 * sig ** 2)))
        blotch += amp * np.exp(-(((u - (1 - cx)) ** 2 + (v - cy) ** 2) / (2 * sig ** 2)))

    # mirrored wrinkle carrier fields, amplitude set by the age group
    amp = wrinkle_amplitude(label.age_group)
    f0 = 13.0 * (1.0 + rng.uniform(-0.05, 0.05))  # above the <8-cycle lighting band
    ph = rng.uniform(0.0, 2 * np.pi, size=4)
    forehead = np.exp(-(((v - 0.22) / 0.09) ** 2)) * _ellipse_mask(u, v, 0.5, 0.5, face_rx, face_ry, 0.3)
    crows = np.exp(-(((m - 0.28) / 0.07) ** 2 + ((v - eye_y) / 0.08) ** 2))
    mouth = np.exp(-(((m - 0.17) / 0.08) ** 2 + ((v - 0.62) / 0.08) ** 2))
    chin = np.exp(-((m / 0.10) ** 2 + ((v - 0.85) / 0.06) ** 2))
    # creases darken: each ridge is a half-wave with a DC component so the
    # age signal is visible both as band energy and as regional darkening
    ridges = forehead * (0.5 + 0.5 * np.sin(2 * np.pi * f0 * (v + 0.12 * np.sin(2 * np.pi * 1.7 * m + ph[1])) + ph[0]))
    ridges += crows * (0.5 + 0.5 * np.sin(2 * np.pi * f0 * 0.9 * (0.707 * m + 0.707 * v) + ph[2]))
    ridges += mouth * (0.5 + 0.5 * np.sin(2 * np.pi * f0 * 1.1 * (0.707 * m - 0.707 * v) + ph[3]))
    ridges += chin * (0.5 + 0.5 * np.sin(2 * np.pi * f0 * (v + 0.3 * m) + ph[1]))
    ridges = np.clip(ridges, 0.0, 1.2)

    # every identity/attribute effect modulates the melanin level so the
    # clean albedo stays exactly on the skin manifold
    level = base_level * (1.0 + blotch) * (1.0 - amp * ridges)

    eye = _ellipse_mask(u, v, 0.5 - eye_dx, eye_y, eye_r * 1.5, eye_r, soft)
    eye = np.maximum(eye, _ellipse_mask(u, v, 0.5 + eye_dx, eye_y, eye_r * 1.5, eye_r, soft))
    brow_t = _GENDER_BROW_T[label.gender]
    brow = _bump(v - brow_y, brow_t) * _bump(m - eye_dx, 0.075)
    lips = _ellipse_mask(u, v, 0.5, lip_y, lip_rx, lip_rx * 0.42, soft)
    nose = 0.5 * np.exp(-((m / 0.035) ** 2)) * np.exp(-(((v - 0.52) / 0.11) ** 2))

    level *= 1.0 - _GENDER_BROW_S[label.gender] * brow
    level *= 1.0 - 0.12 * nose
    level = level * (1 - eye) + 0.20 * base_level * eye
    albedo = skin_manifold(np.clip(level, 0.0, 1.0))

    # lips sit slightly off-manifold in one fixed direction, like a feature
    lip_color = skin_manifold(base_level * 0.82) + np.array([0.08, -0.02, -0.01])
    albedo = albedo * (1 - lips[..., None] * 0.8) \
        + np.clip(lip_color, 0, 1)[None, None, :] * lips[..., None] * 0.8

    position = _toy_position(u, v, m, label, rng, face_rx, face_ry)
    return FaceAsset(np.clip(albedo, 0.0, 1.0).astype(np.float32), position)


def _toy_position(u, v, m, label, rng, face_rx, face_ry):
    """Smooth face-like object-space coordinates, affinely packed into [0,1]."""
    jaw_gain = (0.06, -0.04, 0.01)[label.gender] + rng.uniform(-0.02, 0.02)
    rx_eff = face_rx * (1.0 + jaw_gain * _smoothstep((v - 0.60) / 0.30))
    dome = 1.0 - ((u - 0.5) / rx_eff) ** 2 - ((v - 0.52) / face_ry) ** 2
    z = 0.72 * np.sqrt(np.clip(dome, 0.0, None))
    z += 0.16 * np.exp(-((m / 0.06) ** 2)) * np.exp(-(((v - 0.52) / 0.14) ** 2))  # nose
    z += 0.05 * np.exp(-((m / 0.16) ** 2)) * np.exp(-(((v - 0.86) / 0.08) ** 2))  # chin
    z -= (0.012 * label.age_group / 12.0) * np.exp(-(((v - 0.62) / 0.10) ** 2 + ((m - 0.22) / 0.10) ** 2))
    for _ in range(2):  # identity geometry variation
        cx, cy = rng.uniform(0.2, 0.8, size=2)
        z += rng.uniform(-0.02, 0.02) * np.exp(-(((u - cx) ** 2 + (v - cy) ** 2) / (2 * 0.18 ** 2)))
        z += rng.uniform(-0.02, 0.02) * np.exp(-(((u - (1 - cx)) ** 2 + (v - cy) ** 2) / (2 * 0.18 ** 2)))
    # fixed affine box so all identities share one coordinate normalization
    pos = np.stack([u, v, np.clip((z + 0.05) / 1.1, 0.0, 1.0)], axis=-1)
    return np.clip(pos, 0.0, 1.0).astype(np.float32)


def apply_synthetic_lighting(asset: FaceAsset, light_seed: int) -> np.ndarray:
    """Bake a smooth gain field and one localized highlight into the albedo.

    The gain field is band-limited below 8 cycles per image; output is
    clamped to [0, 1].
    """
    rng = np.random.Generator(np.random.PCG64(light_seed))
    res = asset.resolution
    u, v = _uv_grid(res)

    gain = np.full((res, res), float(rng.uniform(0.80, 1.25)))
    gain *= 1.0 + rng.uniform(-0.35, 0.35) * (u - 0.5) + rng.uniform(-0.35, 0.35) * (v - 0.5)
    for _ in range(3):
        fu, fv = rng.integers(1, 4, size=2)
        gain *= 1.0 + rng.uniform(-0.12, 0.12) * np.sin(
            2 * np.pi * (fu * u + fv * v) + rng.uniform(0, 2 * np.pi))
    cast = rng.uniform(0.92, 1.08, size=3)  # mild per-channel color cast

    cu, cv = rng.uniform(0.30, 0.70), rng.uniform(0.25, 0.70)
    sig = rng.uniform(0.04, 0.12)
    high = rng.uniform(0.08, 0.30) * np.exp(-(((u - cu) ** 2 + (v - cv) ** 2) / (2 * sig ** 2)))
    warm_white = np.array([1.0, 0.97, 0.92])

    lit = asset.albedo * (gain[..., None] * cast[None, None, :]) \
        + high[..., None] * warm_white[None, None, :]
    return np.clip(lit, 0.0, 1.0).astype(np.float32)


def make_record(label: AttributeLabel, identity_seed: int, light_seed: int,
                resolution: int = DEFAULT_RESOLUTION) -> ToyRecord:
    """Assemble one full record; skin color comes from the clean albedo."""
    from .uvtex import flat_region_mask, skin_color

    asset = generate_toy_asset(label, identity_seed, resolution)
    lit = apply_synthetic_lighting(asset, light_seed)
    c = skin_color(asset.albedo, flat_region_mask(resolution))
    return ToyRecord(asset, lit, label, identity_seed, light_seed, c)


def make_dataset(n: int, seed: int,
                 resolution: int = DEFAULT_RESOLUTION) -> list[ToyRecord]:
    """Generate n records with the sampling marginals of the attribute schema."""
    rng = np.random.Generator(np.random.PCG64(seed))
    records = []
    for _ in range(n):
        label = sample_attributes(rng)
        id_seed = int(rng.integers(0, 2 ** 63 - 1))
        light_seed = int(rng.integers(0, 2 ** 63 - 1))
        records.append(make_record(label, id_seed, light_seed, resolution))
    return records


def split_dataset(records: list, fraction: float = 0.85,
                  rng: np.random.Generator | None = None):
    """Deterministic disjoint/exhaustive split; returns (train, test) lists."""
    if not records:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    rng = rng or np.random.Generator(np.random.PCG64(0))
    order = rng.permutation(len(records))
    cut = int(round(len(records) * fraction))
    train = [records[i] for i in order[:cut]]
    test = [records[i] for i in order[cut:]]
    return train, test


# ---------------------------------------------------------------------------
# On-disk record format: one directory per record with albedo.png / lit.png
# (8-bit RGB), position.npy (float32), meta.json, plus a top-level manifest.

def save_map_png(path: Path, img: np.ndarray) -> None:
    arr = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_map_png(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_record(root: Path, name: str, record: ToyRecord) -> None:
    d = Path(root) / name
    d.mkdir(parents=True, exist_ok=True)
    save_map_png(d / "albedo.png", record.asset.albedo)
    save_map_png(d / "lit.png", record.lit_texture)
    np.save(d / "position.npy", record.asset.position)
    meta = {
        "label": {"ethnicity": record.label.ethnicity,
                  "gender": record.label.gender,
                  "age_group": record.label.age_group},
        "identity_seed": record.identity_seed,
        "light_seed": record.light_seed,
        "skin_color": [float(x) for x in record.skin_color],
    }
    (d / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))


def load_record(root: Path, name: str) -> ToyRecord:
    d = Path(root) / name
    meta = json.loads((d / "meta.json").read_text())
    asset = FaceAsset(load_map_png(d / "albedo.png"), np.load(d / "position.npy"))
    label = AttributeLabel(**meta["label"])
    return ToyRecord(asset, load_map_png(d / "lit.png"), label,
                     meta["identity_seed"], meta["light_seed"],
                     np.asarray(meta["skin_color"], dtype=np.float32))


def write_manifest(root: Path, names: list[str], train: list[str],
                   test: list[str]) -> Path:
    manifest = {"records": sorted(names), "train": sorted(train), "test": sorted(test)}
    path = Path(root) / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return path


def age_label(age_group: int) -> int:
    """Age in years for an age-group index (convenience for reports)."""
    return AGE_GROUPS[age_group]
