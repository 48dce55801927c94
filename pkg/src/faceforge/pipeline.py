"""End-to-end pipeline: dataset -> completion -> normalization -> GAN -> samples.

Every stage is seeded and the run directory is summarized by a checksum
manifest, so one config must reproduce bit-identical outputs across runs.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import disgan, normnet, toydata, uvtex
from .labels import encode_label
from .netops import save_checkpoint, seed_all


@dataclass
class PipelineConfig:
    n_records: int = 24
    resolution: int = 64
    seed: int = 0
    split_fraction: float = 0.85
    blend_levels: int = 4
    norm_steps: int = 30
    norm_warmup: int = 10
    step1_steps: int = 30
    step2_steps: int = 30
    gan_batch: int = 8
    n_samples: int = 4


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def run_pipeline(out_dir: Path, cfg: PipelineConfig) -> dict:
    """Run all stages into out_dir and return the checksum manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.use_deterministic_algorithms(True)
    seed_all(cfg.seed)

    # stage 1: dataset
    records = toydata.make_dataset(cfg.n_records, cfg.seed, cfg.resolution)
    train, test = toydata.split_dataset(
        records, cfg.split_fraction,
        np.random.Generator(np.random.PCG64(cfg.seed + 1)))
    rec_dir = out / "records"
    names = []
    split_names = {"train": [], "test": []}
    for part, recs in (("train", train), ("test", test)):
        for r in recs:
            name = f"{part}-{r.identity_seed:016x}"
            toydata.save_record(rec_dir, name, r)
            names.append(name)
            split_names[part].append(name)
    toydata.write_manifest(rec_dir, names, split_names["train"], split_names["test"])

    # stage 2: completion of the visible region against train references
    vis = uvtex.visibility_mask(cfg.resolution)
    refs = [r.lit_texture for r in train]
    comp_dir = out / "completed"
    comp_dir.mkdir(exist_ok=True)
    completed = []
    for name, r in zip(split_names["test"], test):
        partial = (r.lit_texture * vis[..., None]).astype(np.float32)
        full = uvtex.complete_texture(partial, vis, refs, levels=cfg.blend_levels)
        completed.append(full.astype(np.float32))
        toydata.save_map_png(comp_dir / f"{name}.png", full)

    # stage 3: normalization model and normalized textures
    scan_x = np.stack([r.asset.albedo for r in train])
    scan_c = np.stack([r.skin_color for r in train])
    syn_x = np.stack([r.lit_texture for r in train])
    flat = uvtex.flat_region_mask(cfg.resolution)
    norm_cfg = normnet.NormTrainConfig(
        steps=cfg.norm_steps, warmup_steps=cfg.norm_warmup, seed=cfg.seed,
        crop=None if cfg.resolution <= 64 else 64, batch_size=4)
    model, disc, _ = normnet.train_normalizer(scan_x, scan_c, syn_x,
                                              norm_cfg, flat)
    save_checkpoint(out / "normalizer.pt",
                    {"normalizer": model, "disc": disc},
                    {"resolution": cfg.resolution, "seed": cfg.seed})
    norm_dir = out / "normalized"
    norm_dir.mkdir(exist_ok=True)
    for name, r, full in zip(split_names["test"], test, completed):
        y = normnet.normalize(full, r.skin_color, model)
        toydata.save_map_png(norm_dir / f"{name}.png", y)

    # stage 4: two-step generator training
    gan_cfg = disgan.GanConfig(resolution=cfg.resolution)
    t1 = disgan.GanTrainConfig(steps=cfg.step1_steps, batch_size=cfg.gan_batch,
                               seed=cfg.seed)
    step1, _ = disgan.train_step1(train, gan_cfg, t1)
    t2 = disgan.GanTrainConfig(steps=cfg.step2_steps, batch_size=cfg.gan_batch,
                               seed=cfg.seed + 1)
    step2, _ = disgan.train_step2(train, step1, t2)
    save_checkpoint(out / "step2.pt",
                    {"g2": step2.g2, "d_g": step2.d_g,
                     "encoder": step2.encoder, "g1": step2.g1},
                    {"gan": asdict(gan_cfg), "seed": cfg.seed})

    # stage 5: conditioned samples
    gen_dir = out / "generated"
    gen_dir.mkdir(exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 2))
    for k in range(cfg.n_samples):
        label = train[k % len(train)].label
        z = disgan.sample_prior(rng, gan_cfg)
        asset = disgan.generate(z, encode_label(label), step2)
        toydata.save_map_png(gen_dir / f"sample-{k}-albedo.png", asset.albedo)
        np.save(gen_dir / f"sample-{k}-position.npy", asset.position)

    checksums = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.suffix in (".png", ".npy", ".json"):
            checksums[str(path.relative_to(out))] = sha256_file(path)
    (out / "checksums.json").write_text(json.dumps(checksums, indent=1,
                                                   sort_keys=True))
    return checksums
