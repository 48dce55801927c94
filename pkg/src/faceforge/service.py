"""HTTP front door: generation, editing, inversion, asset retrieval.

The service owns trained checkpoints and an asset store; every mutation
creates a store record so any visible state is reproducible from its
lineage.  A CLI mirror of each endpoint lives in faceforge.cli.
"""
from __future__ import annotations

import io
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import disgan, editctl, normnet
from .labels import AttributeLabel, encode_label, soft_from_vector
from .netops import load_checkpoint, params_fingerprint, seed_all
from .store import AssetRecord, AssetStore, derive_id
from .toydata import FaceAsset


@dataclass
class ServiceConfig:
    store_path: str = "assets"
    step2_checkpoint: str | None = None
    normalizer_checkpoint: str | None = None
    classifier_checkpoint: str | None = None
    port: int = 8571
    workers: int = 1
    demo_init_seed: int | None = None   # build untrained seeded models (dev/UI)
    invert_budget: int = 300

    @classmethod
    def from_file(cls, path: str | None, **overrides) -> "ServiceConfig":
        data = {}
        if path:
            data.update(json.loads(Path(path).read_text()))
        env_map = {
            "FACEFORGE_STORE": "store_path",
            "FACEFORGE_STEP2": "step2_checkpoint",
            "FACEFORGE_NORMALIZER": "normalizer_checkpoint",
            "FACEFORGE_CLASSIFIER": "classifier_checkpoint",
        }
        for env, key in env_map.items():
            if os.environ.get(env):
                data[key] = os.environ[env]
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


class ServiceState:
    """Loaded models plus the store; generation is serialized by a lock."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.step2 = None
        self.normalizer = None
        self.classifier = None
        modules = {}
        if config.demo_init_seed is not None:
            seed_all(config.demo_init_seed)
            cfg = disgan.GanConfig()
            self.step2 = disgan.Step2Model(
                disgan.ConditionalGenerator(cfg), disgan.ImageDiscriminator(cfg),
                disgan.Encoder(cfg), disgan.AssistGenerator(cfg), cfg)
            for m in (self.step2.g2, self.step2.encoder, self.step2.g1):
                m.eval()
            self.normalizer = normnet.Normalizer().eval()
            modules = {"g2": self.step2.g2, "normalizer": self.normalizer}
        else:
            if config.step2_checkpoint:
                self.step2 = load_step2(config.step2_checkpoint)
                modules["g2"] = self.step2.g2
            if config.normalizer_checkpoint:
                self.normalizer = load_normalizer(config.normalizer_checkpoint)
                modules["normalizer"] = self.normalizer
        if config.classifier_checkpoint:
            from .evalkit import AttributeClassifier
            state, _ = load_checkpoint(config.classifier_checkpoint)
            self.classifier = AttributeClassifier()
            self.classifier.load_state_dict(state["classifier"])
            self.classifier.eval()
        ckpt_hash = params_fingerprint(modules) if modules else "none"
        self.store = AssetStore(Path(config.store_path), ckpt_hash)
        self.offsets = editctl.load_offsets()
        self.gen_lock = threading.Semaphore(max(config.workers, 1))

    # -- operations shared by HTTP endpoints and the CLI ----------------------

    def generate(self, soft, seed: int | None, rng=None) -> AssetRecord:
        if self.step2 is None:
            raise ModelsUnavailable("no generator checkpoint loaded")
        if seed is None:
            rng = rng or np.random.default_rng()
            seed = int(rng.integers(0, 2 ** 63 - 1))
        payload = {"op": "generate", "soft": _round(soft.vector()),
                   "seed": seed, "ckpt": self.store.checkpoint_hash}
        asset_id = derive_id(payload)
        if self.store.has(asset_id):
            return self.store.get(asset_id)
        z = disgan.sample_prior(np.random.Generator(np.random.PCG64(seed)),
                                self.step2.config)
        with self.gen_lock:
            asset = disgan.generate(z, soft, self.step2)
        record = AssetRecord(id=asset_id, kind="generated",
                             label=_label_dict(soft), soft_label=_round(soft.vector()),
                             seed=seed)
        return self.store.put(record, asset, code=z)

    def edit(self, parent_id: str, new_label=None, offset_name: str | None = None,
             offset_weight: float = 1.0, skin_tone=None) -> AssetRecord:
        parent = self.store.get(parent_id)
        asset = self.store.load_asset(parent_id)
        chosen = [new_label is not None, offset_name is not None,
                  skin_tone is not None]
        if sum(chosen) != 1:
            raise ValueError("specify exactly one of new_label, "
                             "geometry_offset, skin_tone")
        code = None
        if new_label is not None:
            code = self.store.load_code(parent_id)
            if code is None:
                raise ValueError("parent has no latent code; label edits "
                                 "require a generated or inverted parent")
            if self.step2 is None:
                raise ModelsUnavailable("no generator checkpoint loaded")
            payload = {"op": "edit-label", "parent": parent_id,
                       "soft": _round(new_label.vector())}
            with self.gen_lock:
                child = disgan.generate(code, new_label, self.step2)
            extra = {"edit": "label"}
            label = _label_dict(new_label)
            soft_vec = _round(new_label.vector())
        elif offset_name is not None:
            if offset_name not in self.offsets:
                raise KeyError(f"unknown geometry offset {offset_name}")
            off = self.offsets[offset_name].at_resolution(asset.resolution)
            child = editctl.apply_geometry_offset(asset, off, offset_weight)
            payload = {"op": "edit-offset", "parent": parent_id,
                       "name": offset_name, "weight": round(offset_weight, 6)}
            extra = {"edit": "geometry_offset", "name": offset_name,
                     "weight": offset_weight}
            label, soft_vec = parent.label, parent.soft_label
            code = self.store.load_code(parent_id)
        else:
            if self.normalizer is None:
                raise ModelsUnavailable("no normalizer checkpoint loaded")
            target = np.asarray(skin_tone, dtype=np.float64)
            if target.shape != (3,) or target.min() < 0 or target.max() > 1:
                raise ValueError("skin_tone must be three values in [0, 1]")
            with self.gen_lock:
                albedo = editctl.edit_skin_tone(asset.albedo, target, self.normalizer)
            child = FaceAsset(albedo, asset.position.copy())
            payload = {"op": "edit-skin", "parent": parent_id,
                       "tone": _round(target)}
            extra = {"edit": "skin_tone", "target": _round(target)}
            label, soft_vec = parent.label, parent.soft_label
            code = self.store.load_code(parent_id)
        payload["ckpt"] = self.store.checkpoint_hash
        record = AssetRecord(id=derive_id(payload), kind="edit", label=label,
                             soft_label=soft_vec, seed=parent.seed,
                             parent_id=parent_id, extra=extra)
        return self.store.put(record, child, code=code)

    def invert(self, asset: FaceAsset, budget: int | None = None):
        if self.step2 is None:
            raise ModelsUnavailable("no generator checkpoint loaded")
        budget = self.config.invert_budget if budget is None else budget
        with self.gen_lock:
            result = editctl.invert(asset, self.step2, self.classifier, budget)
            recon = disgan.generate(result.code, result.label, self.step2)
        payload = {"op": "invert", "ckpt": self.store.checkpoint_hash,
                   "target_hash": derive_id({"albedo": _round(asset.albedo.mean(axis=(0, 1))),
                                             "n": float(asset.albedo.sum())}),
                   "budget": budget}
        record = AssetRecord(id=derive_id(payload), kind="inversion",
                             label=_label_dict(result.label),
                             soft_label=_round(result.label.vector()),
                             extra={"final_loss": result.final_loss,
                                    "iterations": result.iterations})
        return self.store.put(record, recon, code=result.code), result


class ModelsUnavailable(RuntimeError):
    pass


def _round(vec) -> list:
    return [round(float(x), 8) for x in np.asarray(vec).ravel()]


def _label_dict(soft) -> dict:
    hard = soft.argmax()
    return {"ethnicity": hard.ethnicity, "gender": hard.gender,
            "age_group": hard.age_group}


def parse_label_payload(body: dict):
    """Accept {"label": {...}} with indices or {"soft_label": [...30 floats]}."""
    if "soft_label" in body and body["soft_label"] is not None:
        return soft_from_vector(np.asarray(body["soft_label"], dtype=np.float64))
    if "label" in body and body["label"] is not None:
        lab = body["label"]
        return encode_label(AttributeLabel(int(lab["ethnicity"]),
                                           int(lab["gender"]),
                                           int(lab["age_group"])))
    raise ValueError("request must carry label or soft_label")


def load_step2(path: str) -> disgan.Step2Model:
    state, config = load_checkpoint(path)
    cfg = disgan.GanConfig(**config["gan"])
    model = disgan.Step2Model(disgan.ConditionalGenerator(cfg),
                              disgan.ImageDiscriminator(cfg),
                              disgan.Encoder(cfg), disgan.AssistGenerator(cfg), cfg)
    model.g2.load_state_dict(state["g2"])
    model.d_g.load_state_dict(state["d_g"])
    model.encoder.load_state_dict(state["encoder"])
    model.g1.load_state_dict(state["g1"])
    for m in (model.g2, model.d_g, model.encoder, model.g1):
        m.eval()
    return model


def load_normalizer(path: str) -> normnet.Normalizer:
    state, _ = load_checkpoint(path)
    model = normnet.Normalizer()
    model.load_state_dict(state["normalizer"])
    return model.eval()


def create_app(state: ServiceState):
    """FastAPI application over a loaded service state."""
    from fastapi import FastAPI, HTTPException, Request, Response, UploadFile
    from fastapi.responses import JSONResponse
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="faceforge")

    def _error(exc: Exception):
        if isinstance(exc, ModelsUnavailable):
            return HTTPException(503, str(exc))
        if isinstance(exc, KeyError):
            return HTTPException(404, str(exc))
        return HTTPException(400, str(exc))

    @app.get("/health")
    def health():
        return {"status": "ok", "checkpoint": state.store.checkpoint_hash}

    @app.post("/generate")
    async def generate(request: Request):
        body = await request.json()
        try:
            soft = parse_label_payload(body)
            seed = body.get("seed")
            record = state.generate(soft, None if seed is None else int(seed))
        except (ValueError, KeyError, TypeError, ModelsUnavailable) as exc:
            raise _error(exc)
        return {"asset_id": record.id, "seed": record.seed}

    @app.get("/asset/{asset_id}")
    def asset_meta(asset_id: str):
        try:
            record = state.store.get(asset_id)
        except KeyError as exc:
            raise HTTPException(404, str(exc))
        meta = json.loads(record.to_json())
        meta["files"] = {name: f"/asset/{asset_id}/{name}"
                         for name in ("albedo", "position", "preview")}
        meta["lineage"] = [r.id for r in state.store.lineage(asset_id)]
        return meta

    @app.get("/asset/{asset_id}/{file_name}")
    def asset_file(asset_id: str, file_name: str):
        names = {"albedo": ("albedo.png", "image/png"),
                 "position": ("position.npy", "application/octet-stream"),
                 "preview": ("preview.png", "image/png")}
        if file_name not in names:
            raise HTTPException(404, f"unknown file {file_name}")
        fname, mime = names[file_name]
        try:
            data = state.store.file_bytes(asset_id, fname)
        except KeyError as exc:
            raise HTTPException(404, str(exc))
        return Response(content=data, media_type=mime)

    @app.post("/edit")
    async def edit(request: Request):
        body = await request.json()
        try:
            new_label = None
            if body.get("label") is not None or body.get("soft_label") is not None:
                new_label = parse_label_payload(body)
            offset = body.get("geometry_offset") or {}
            record = state.edit(
                body["asset_id"], new_label=new_label,
                offset_name=offset.get("name"),
                offset_weight=float(offset.get("weight", 1.0)),
                skin_tone=body.get("skin_tone"))
        except (ValueError, KeyError, TypeError, ModelsUnavailable) as exc:
            raise _error(exc)
        return {"asset_id": record.id, "parent_id": record.parent_id}

    @app.post("/invert")
    async def invert(albedo: UploadFile, position: UploadFile,
                     budget: int | None = None):
        from PIL import Image
        try:
            img = np.asarray(Image.open(io.BytesIO(await albedo.read()))
                             .convert("RGB"), dtype=np.float32) / 255.0
            pos = np.load(io.BytesIO(await position.read()))
            asset = FaceAsset(img, pos)
            record, result = state.invert(asset, budget)
        except (ValueError, KeyError, TypeError, ModelsUnavailable) as exc:
            raise _error(exc)
        return {"asset_id": record.id, "final_loss": result.final_loss}

    @app.get("/offsets")
    def offsets():
        return [{"name": o.name, "default_weight": o.default_weight}
                for o in state.offsets.values()]

    @app.get("/labels")
    def labels():
        from .labels import AGE_GROUPS, ETHNICITIES, GENDERS
        return {"ethnicities": list(ETHNICITIES), "genders": list(GENDERS),
                "age_groups": list(AGE_GROUPS)}

    static_dir = Path(__file__).parent / "webui"
    if static_dir.exists():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def run_service(config: ServiceConfig):
    import uvicorn
    state = ServiceState(config)
    app = create_app(state)
    uvicorn.run(app, host="127.0.0.1", port=config.port, log_level="warning")
