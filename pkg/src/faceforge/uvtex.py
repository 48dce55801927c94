"""UV texture-space utilities: skin color, PSNR search, pyramid blending.

All functions are pure and operate on float arrays in [0, 1] with shape
(H, W) or (H, W, C).  The masks used by the pipeline (flat skin regions,
frontal visibility, face region) are fixed per resolution and shipped as
package data; other resolutions are derived by resizing the shipped file.
"""
from __future__ import annotations

import importlib.resources
import math
from functools import lru_cache

import numpy as np
from PIL import Image

# binomial 5-tap kernel of the classic multiresolution blend
_PYR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

REC601 = np.array([0.299, 0.587, 0.114])


def luminance(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an (H, W, 3) map."""
    return np.asarray(img, dtype=np.float64) @ REC601


def mirror(img: np.ndarray) -> np.ndarray:
    """Horizontal flip about the UV symmetry axis."""
    return img[:, ::-1].copy()


def skin_color(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-channel mean color over a flat-region mask."""
    img = np.asarray(img, dtype=np.float64)
    sel = np.asarray(mask) > 0.5
    if not sel.any():
        raise ValueError("flat-region mask selects no pixels")
    return img[sel].mean(axis=0)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-peak maps.

    Identical inputs return math.inf (the "infinite similarity" sentinel).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def nearest_reference(query: np.ndarray, references: list) -> tuple[int, float]:
    """Index and PSNR of the most similar reference; ties keep the lowest index."""
    if not references:
        raise ValueError("reference list is empty")
    best_i, best_p = 0, -math.inf
    for i, ref in enumerate(references):
        p = psnr(query, ref)
        if p > best_p:
            best_i, best_p = i, p
    return best_i, best_p


def _blur_rows(img: np.ndarray) -> np.ndarray:
    pad = np.pad(img, [(2, 2)] + [(0, 0)] * (img.ndim - 1), mode="reflect")
    out = np.zeros_like(img)
    for k, w in enumerate(_PYR_KERNEL):
        out += w * pad[k:k + img.shape[0]]
    return out


def _blur(img: np.ndarray) -> np.ndarray:
    out = _blur_rows(img)
    out = np.swapaxes(_blur_rows(np.swapaxes(out, 0, 1)), 0, 1)
    return out


def pyr_down(img: np.ndarray) -> np.ndarray:
    """Blur with the binomial kernel and decimate by 2."""
    return _blur(img)[::2, ::2]


def pyr_up(img: np.ndarray) -> np.ndarray:
    """Zero-insert upsample by 2 and blur with the doubled kernel."""
    shape = (img.shape[0] * 2, img.shape[1] * 2) + img.shape[2:]
    up = np.zeros(shape, dtype=img.dtype)
    up[::2, ::2] = img
    return _blur(up) * 4.0


def gaussian_pyramid(img: np.ndarray, levels: int) -> list:
    pyr = [np.asarray(img, dtype=np.float64)]
    for _ in range(levels - 1):
        pyr.append(pyr_down(pyr[-1]))
    return pyr


def laplacian_pyramid(img: np.ndarray, levels: int) -> list:
    gauss = gaussian_pyramid(img, levels)
    pyr = [gauss[i] - pyr_up(gauss[i + 1]) for i in range(levels - 1)]
    pyr.append(gauss[-1])
    return pyr


def collapse_pyramid(pyr: list) -> np.ndarray:
    out = pyr[-1]
    for lap in reversed(pyr[:-1]):
        out = pyr_up(out) + lap
    return out


def pyramid_blend(a: np.ndarray, b: np.ndarray, mask: np.ndarray,
                  levels: int = 5) -> np.ndarray:
    """Multiresolution blend keeping `a` where mask=1 and `b` where mask=0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    side = 2 ** (levels - 1)
    if a.shape[0] % side or a.shape[1] % side:
        raise ValueError(f"resolution {a.shape[:2]} not divisible by 2^{levels - 1}")
    if mask.ndim == a.ndim - 1:
        mask = mask[..., None]
    lap_a = laplacian_pyramid(a, levels)
    lap_b = laplacian_pyramid(b, levels)
    gauss_m = gaussian_pyramid(mask, levels)
    blended = [m * la + (1.0 - m) * lb
               for la, lb, m in zip(lap_a, lap_b, gauss_m)]
    return np.clip(collapse_pyramid(blended), 0.0, 1.0)


def complete_texture(partial: np.ndarray, visibility: np.ndarray,
                     references: list, levels: int = 5) -> np.ndarray:
    """Fill the invisible region from the closest reference texture.

    Similarity is measured on the visible region only, then the reference is
    blended in with the visibility mask.
    """
    vis = np.asarray(visibility, dtype=np.float64)
    w = vis[..., None] if vis.ndim == 2 else vis
    masked_query = np.asarray(partial, dtype=np.float64) * w
    idx, _ = nearest_reference(masked_query, [np.asarray(r) * w for r in references])
    return pyramid_blend(partial, references[idx], vis, levels=levels)


def sanity_filter(completed: np.ndarray, label, classifier, references: list,
                  psnr_floor: float = 14.0) -> bool:
    """Accept a completed texture only if it is plausible and label-consistent.

    Plausibility = best-reference PSNR at or above the floor; consistency =
    the attribute classifier's top-1 matching the record label on all three
    attributes.
    """
    _, best = nearest_reference(completed, references)
    if best < psnr_floor:
        return False
    e, g, a = classifier.predict_texture(completed)
    return (e == label.ethnicity and g == label.gender and a == label.age_group)


def highpass_energy(img: np.ndarray) -> float:
    """Mean squared response of a fixed 3x3 Laplacian on the luma channel."""
    lum = luminance(img) if img.ndim == 3 else np.asarray(img, dtype=np.float64)
    p = np.pad(lum, 1, mode="reflect")
    hp = 4 * lum - p[:-2, 1:-1] - p[2:, 1:-1] - p[1:-1, :-2] - p[1:-1, 2:]
    return float(np.mean(hp ** 2))


# ---------------------------------------------------------------------------
# Fixed masks (shipped for the default resolution, resized otherwise).

def _load_data_png(name: str) -> np.ndarray:
    ref = importlib.resources.files("faceforge") / "data" / name
    with ref.open("rb") as f:
        return np.asarray(Image.open(f).convert("L"), dtype=np.float64) / 255.0


def _resize(mask: np.ndarray, res: int) -> np.ndarray:
    img = Image.fromarray((mask * 255).astype(np.uint8), mode="L")
    out = np.asarray(img.resize((res, res), Image.BILINEAR), dtype=np.float64)
    return out / 255.0


def _freeze(m: np.ndarray) -> np.ndarray:
    m.flags.writeable = False
    return m


@lru_cache(maxsize=8)
def flat_region_mask(res: int) -> np.ndarray:
    """Binary cheek/forehead mask used for skin-color estimation."""
    m = _load_data_png("flat_mask_256.png")
    if res != m.shape[0]:
        m = _resize(m, res)
    return _freeze(m > 0.5)


@lru_cache(maxsize=8)
def visibility_mask(res: int) -> np.ndarray:
    """Soft frontal-ellipse mask marking the directly visible UV region."""
    m = _load_data_png("visibility_256.png")
    if res != m.shape[0]:
        m = _resize(m, res)
    return _freeze(m)


@lru_cache(maxsize=8)
def face_mask(res: int) -> np.ndarray:
    """Binary face-region mask for symmetry metrics."""
    m = _load_data_png("face_mask_256.png")
    if res != m.shape[0]:
        m = _resize(m, res)
    return _freeze(m > 0.5)
