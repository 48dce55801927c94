"""Command line front door mirroring the service endpoints plus training."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import disgan, normnet, toydata, uvtex
from .labels import AttributeLabel, encode_label
from .netops import save_checkpoint, seed_all


def _load_records(data_dir: Path, part: str | None = None) -> list:
    manifest = json.loads((Path(data_dir) / "manifest.json").read_text())
    names = manifest[part] if part else manifest["records"]
    return [toydata.load_record(data_dir, n) for n in names]


def cmd_make_dataset(args):
    records = toydata.make_dataset(args.n, args.seed, args.resolution)
    train, test = toydata.split_dataset(
        records, args.split, np.random.Generator(np.random.PCG64(args.seed + 1)))
    names, parts = [], {"train": [], "test": []}
    for part, recs in (("train", train), ("test", test)):
        for r in recs:
            name = f"{part}-{r.identity_seed:016x}"
            toydata.save_record(Path(args.out), name, r)
            names.append(name)
            parts[part].append(name)
    toydata.write_manifest(Path(args.out), names, parts["train"], parts["test"])
    print(f"wrote {len(names)} records to {args.out}")


def cmd_complete(args):
    refs, ref_names = [], []
    ref_dir = Path(args.references)
    manifest = json.loads((ref_dir / "manifest.json").read_text())
    for name in manifest.get("train", manifest["records"]):
        refs.append(toydata.load_record(ref_dir, name).lit_texture)
        ref_names.append(name)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    accepted = []
    for path in sorted(Path(args.input).glob("*.png")):
        partial = toydata.load_map_png(path)
        vis = uvtex.visibility_mask(partial.shape[0])
        full = uvtex.complete_texture(partial * vis[..., None], vis, refs,
                                      levels=args.levels)
        idx, best = uvtex.nearest_reference(full, refs)
        if best < args.psnr_floor:
            print(f"{path.name}: rejected (psnr {best:.2f} dB "
                  f"< floor {args.psnr_floor})")
            continue
        toydata.save_map_png(out_dir / path.name, full)
        accepted.append(path.name)
        print(f"{path.name}: completed from {ref_names[idx]} ({best:.2f} dB)")
    (out_dir / "completed.json").write_text(json.dumps(sorted(accepted), indent=1))


def cmd_train_norm(args):
    records = _load_records(args.data, "train")
    scan_x = np.stack([r.asset.albedo for r in records])
    scan_c = np.stack([r.skin_color for r in records])
    syn_x = np.stack([r.lit_texture for r in records])
    res = records[0].asset.resolution
    cfg = normnet.NormTrainConfig(steps=args.steps, seed=args.seed,
                                  warmup_steps=args.warmup,
                                  log_every=args.log_every)
    model, disc, history = normnet.train_normalizer(
        scan_x, scan_c, syn_x, cfg, uvtex.flat_region_mask(res))
    save_checkpoint(Path(args.out), {"normalizer": model, "disc": disc},
                    {"resolution": res, "seed": args.seed,
                     "steps": args.steps, "weights": asdict(cfg.weights)})
    print(f"saved normalizer checkpoint to {args.out} "
          f"(final rec {history[-1].get('rec', float('nan')):.5f})")


def cmd_normalize(args):
    from .service import load_normalizer
    model = load_normalizer(args.checkpoint)
    c = np.array([float(x) for x in args.skin_color.split(",")])
    if c.shape != (3,):
        sys.exit("--skin-color must be r,g,b")
    src = Path(getattr(args, "in"))
    paths = [src] if src.is_file() else sorted(src.glob("*.png"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for p in paths:
        y = normnet.normalize(toydata.load_map_png(p), c, model)
        toydata.save_map_png(out_dir / p.name, y)
        print(f"normalized {p.name}")


def cmd_train_step1(args):
    records = _load_records(args.data, "train")
    cfg = disgan.GanConfig(resolution=records[0].asset.resolution)
    tcfg = disgan.GanTrainConfig(steps=args.steps, seed=args.seed,
                                 batch_size=args.batch, log_every=args.log_every)
    model, _ = disgan.train_step1(records, cfg, tcfg)
    save_checkpoint(Path(args.out),
                    {"encoder": model.encoder, "g1": model.g1, "d_e": model.d_e},
                    {"gan": asdict(cfg), "seed": args.seed})
    print(f"saved step-1 checkpoint to {args.out}")


def cmd_train_step2(args):
    from .netops import load_checkpoint
    records = _load_records(args.data, "train")
    state, config = load_checkpoint(args.step1)
    cfg = disgan.GanConfig(**config["gan"])
    step1 = disgan.Step1Model(disgan.Encoder(cfg), disgan.AssistGenerator(cfg),
                              disgan.CodeDiscriminator(cfg), cfg)
    step1.encoder.load_state_dict(state["encoder"])
    step1.g1.load_state_dict(state["g1"])
    step1.d_e.load_state_dict(state["d_e"])
    tcfg = disgan.GanTrainConfig(steps=args.steps, seed=args.seed,
                                 batch_size=args.batch, log_every=args.log_every)
    model, _ = disgan.train_step2(records, step1, tcfg)
    save_checkpoint(Path(args.out),
                    {"g2": model.g2, "d_g": model.d_g,
                     "encoder": model.encoder, "g1": model.g1},
                    {"gan": asdict(cfg), "seed": args.seed})
    print(f"saved step-2 checkpoint to {args.out}")


def cmd_train_classifier(args):
    from .evalkit import classifier_accuracy, train_classifier
    train = _load_records(args.data, "train")
    test = _load_records(args.data, "test")
    clf = train_classifier(train, seed=args.seed, epochs=args.epochs)
    save_checkpoint(Path(args.out), {"classifier": clf},
                    {"seed": args.seed, "epochs": args.epochs})
    acc = classifier_accuracy(clf, test)
    print("held-out accuracy: " +
          " ".join(f"{k}={v:.3f}" for k, v in acc.items()))


def cmd_generate(args):
    from .service import ServiceConfig, ServiceState
    state = ServiceState(ServiceConfig(store_path=args.store,
                                       step2_checkpoint=args.checkpoint))
    e, g, a = (int(x) for x in args.label.split(","))
    soft = encode_label(AttributeLabel(e, g, a))
    record = state.generate(soft, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("albedo.png", "position.npy", "preview.png"):
        (out / name).write_bytes(state.store.file_bytes(record.id, name))
    print(f"asset {record.id} (seed {record.seed}) -> {out}")


def cmd_invert(args):
    from .service import ServiceConfig, ServiceState
    state = ServiceState(ServiceConfig(
        store_path=args.store, step2_checkpoint=args.checkpoint,
        classifier_checkpoint=args.classifier))
    target_dir = Path(args.target)
    asset = toydata.FaceAsset(
        toydata.load_map_png(target_dir / "albedo.png"),
        np.load(target_dir / "position.npy"))
    record, result = state.invert(asset, args.budget)
    blob = {"asset_id": record.id, "final_loss": result.final_loss,
            "iterations": result.iterations,
            "label": record.label}
    Path(args.out).write_text(json.dumps(blob, indent=1, sort_keys=True))
    print(json.dumps(blob, indent=1, sort_keys=True))


def cmd_edit(args):
    from .service import ServiceConfig, ServiceState
    state = ServiceState(ServiceConfig(
        store_path=args.store, step2_checkpoint=args.checkpoint,
        normalizer_checkpoint=args.normalizer))
    parent = state.store.get(args.asset_id)
    new_label = None
    if args.age is not None or args.gender is not None or args.ethnicity is not None:
        base = parent.label or {}
        lab = AttributeLabel(
            args.ethnicity if args.ethnicity is not None else base.get("ethnicity", 0),
            args.gender if args.gender is not None else base.get("gender", 0),
            _age_index(args.age) if args.age is not None else base.get("age_group", 0))
        new_label = encode_label(lab)
    skin = None
    if args.skin_tone:
        skin = [float(x) for x in args.skin_tone.split(",")]
    record = state.edit(args.asset_id, new_label=new_label,
                        offset_name=args.offset, offset_weight=args.weight,
                        skin_tone=skin)
    print(f"edit {record.id} (parent {record.parent_id})")


def _age_index(age_years: int) -> int:
    from .labels import AGE_GROUPS
    if age_years in AGE_GROUPS:
        return AGE_GROUPS.index(age_years)
    return int(np.argmin([abs(a - age_years) for a in AGE_GROUPS]))


def cmd_eval(args):
    from .evalkit import AttributeClassifier, evaluate_generator
    from .netops import load_checkpoint
    from .service import load_step2
    state, _ = load_checkpoint(args.classifier)
    clf = AttributeClassifier()
    clf.load_state_dict(state["classifier"])
    clf.eval()
    step2 = load_step2(args.checkpoint)
    heldout = _load_records(args.data, "test")
    report = evaluate_generator(clf, step2, args.n, args.seed, heldout)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    print(json.dumps({"dataset": report.dataset_accuracy,
                      "generated": report.generated_accuracy}, indent=1,
                     sort_keys=True))


def cmd_pipeline(args):
    from .pipeline import PipelineConfig, run_pipeline
    cfg = PipelineConfig(n_records=args.n, resolution=args.resolution,
                         seed=args.seed)
    checksums = run_pipeline(Path(args.out), cfg)
    print(f"pipeline wrote {len(checksums)} artifacts to {args.out}")


def cmd_serve(args):
    from .service import ServiceConfig, run_service
    config = ServiceConfig.from_file(
        args.config, store_path=args.store, port=args.port,
        step2_checkpoint=args.checkpoint, normalizer_checkpoint=args.normalizer,
        classifier_checkpoint=args.classifier,
        demo_init_seed=args.demo_init_seed)
    run_service(config)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="faceforge")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-dataset", help="generate a labeled toy dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--resolution", type=int, default=256)
    s.add_argument("--split", type=float, default=0.85)
    s.set_defaults(func=cmd_make_dataset)

    s = sub.add_parser("complete", help="complete partial textures")
    s.add_argument("--input", required=True)
    s.add_argument("--references", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--levels", type=int, default=5)
    s.add_argument("--psnr-floor", type=float, default=14.0)
    s.set_defaults(func=cmd_complete)

    s = sub.add_parser("train-norm", help="train the normalization model")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=1500)
    s.add_argument("--warmup", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--log-every", type=int, default=100)
    s.set_defaults(func=cmd_train_norm)

    s = sub.add_parser("normalize", help="normalize textures to clean albedo")
    s.add_argument("--in", dest="in", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--skin-color", required=True)
    s.add_argument("--checkpoint", required=True)
    s.set_defaults(func=cmd_normalize)

    s = sub.add_parser("train-step1", help="train encoder/assist generator")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=3000)
    s.add_argument("--batch", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--log-every", type=int, default=200)
    s.set_defaults(func=cmd_train_step1)

    s = sub.add_parser("train-step2", help="train the conditional generator")
    s.add_argument("--data", required=True)
    s.add_argument("--step1", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=3000)
    s.add_argument("--batch", type=int, default=16)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--log-every", type=int, default=200)
    s.set_defaults(func=cmd_train_step2)

    s = sub.add_parser("train-classifier", help="train the attribute classifier")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=22)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_classifier)

    s = sub.add_parser("generate", help="generate an asset from a label")
    s.add_argument("--label", required=True, help="e,g,a indices")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--store", default="assets")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("invert", help="project an asset into latent space")
    s.add_argument("--target", required=True, help="dir with albedo.png + position.npy")
    s.add_argument("--out", required=True, help="output json path")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--classifier", default=None)
    s.add_argument("--budget", type=int, default=300)
    s.add_argument("--store", default="assets")
    s.set_defaults(func=cmd_invert)

    s = sub.add_parser("edit", help="edit a stored asset")
    s.add_argument("--asset-id", required=True)
    s.add_argument("--age", type=int, default=None, help="age in years")
    s.add_argument("--gender", type=int, default=None)
    s.add_argument("--ethnicity", type=int, default=None)
    s.add_argument("--offset", default=None)
    s.add_argument("--weight", type=float, default=1.0)
    s.add_argument("--skin-tone", default=None, help="r,g,b")
    s.add_argument("--store", default="assets")
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--normalizer", default=None)
    s.set_defaults(func=cmd_edit)

    s = sub.add_parser("eval", help="classifier agreement report")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--classifier", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--n", type=int, default=5000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pipeline", help="deterministic end-to-end mini run")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=24)
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--config", default=None)
    s.add_argument("--port", type=int, default=None)
    s.add_argument("--store", default=None)
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--normalizer", default=None)
    s.add_argument("--classifier", default=None)
    s.add_argument("--demo-init-seed", type=int, default=None)
    s.set_defaults(func=cmd_serve)
    return p


def main(argv: list | None = None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
