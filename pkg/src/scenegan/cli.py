"""Command line entry point.

Subcommands: preprocess, make-toy, train, generate, explore, edit,
eval (fid | miou), serve, ablate. Every subcommand takes a YAML config file
(--config), dotted-path overrides (--set a.b=c, repeatable), and a --seed
override, and writes the fully resolved configuration beside its outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import explorer as expl
from . import grouping, toydata, training
from .discriminator import DiscriminatorConfig
from .evaluation import ProxyFeatureExtractor, feature_stats, frechet_distance, miou
from .generator import GeneratorConfig
from .imutil import colorize_indices, mask_to_indices, tensor_to_uint8
from .service import ModelBundle, create_app
from .training import TrainConfig


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def default_config() -> dict:
    return _sanitize({
        "seed": 0,
        "generator": asdict(GeneratorConfig()),
        "discriminator": asdict(DiscriminatorConfig()),
        "train": asdict(TrainConfig()),
        "toy": asdict(toydata.ToySceneSpec()),
        "explore": {"n": 10000, "k": 8, "layers": [5, 9], "space": "s"},
        "eval": {"count": 2000},
        "ablation": [],
    })


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _set_path(cfg: dict, dotted: str, raw_value: str):
    keys = dotted.split(".")
    node = cfg
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = yaml.safe_load(raw_value)


def resolve_config(args) -> dict:
    cfg = default_config()
    if getattr(args, "config", None):
        loaded = yaml.safe_load(Path(args.config).read_text()) or {}
        if not isinstance(loaded, dict):
            raise SystemExit(f"config file {args.config} must hold a mapping")
        cfg = _deep_merge(cfg, loaded)
    for assignment in getattr(args, "set", None) or []:
        if "=" not in assignment:
            raise SystemExit(f"--set expects key.path=value, got {assignment!r}")
        key, value = assignment.split("=", 1)
        _set_path(cfg, key, value)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
        cfg["train"]["seed"] = args.seed
    return cfg


def write_run_config(cfg: dict, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.yaml").write_text(yaml.safe_dump(_sanitize(cfg)))


def _tupled(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _train_cfg(cfg: dict) -> TrainConfig:
    return TrainConfig(**_tupled(cfg["train"]))


def _model_cfgs(cfg: dict, num_classes: int, resolution: int):
    gen_cfg = GeneratorConfig(**{**_tupled(cfg["generator"]),
                                 "num_classes": num_classes,
                                 "output_resolution": resolution})
    disc_cfg = DiscriminatorConfig(**{**_tupled(cfg["discriminator"]),
                                      "mask_channels": num_classes,
                                      "resolution": resolution,
                                      "spectral_norm": cfg["train"]["spectral_norm"]})
    return gen_cfg, disc_cfg


# -- subcommands ----------------------------------------------------------------


def cmd_preprocess(args) -> int:
    table = grouping.load_remap_table(args.table)
    written, unmapped = grouping.remap_directory(table, args.input, args.output)
    write_run_config(resolve_config(args), args.output)
    print(f"remapped {written} label maps to {table.num_super_classes} super-classes")
    if unmapped:
        print(f"unmapped class values encountered: {unmapped}", file=sys.stderr)
        return 1
    return 0


def cmd_make_toy(args) -> int:
    cfg = resolve_config(args)
    spec = toydata.ToySceneSpec(**_tupled(cfg["toy"]))
    corpus = toydata.make_toy_corpus(spec, args.count, cfg["seed"])
    toydata.save_corpus(corpus, args.output)
    write_run_config(cfg, args.output)
    print(f"wrote {len(corpus)} paired scenes to {args.output} "
          f"({spec.num_fine_classes} fine classes)")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    train_cfg = _train_cfg(cfg)
    corpus = toydata.load_corpus(args.data, toydata.ToySceneSpec(**_tupled(cfg["toy"])))
    labels = training.labels_for_class_count(corpus, train_cfg.num_super_classes)
    gen_cfg, disc_cfg = _model_cfgs(cfg, train_cfg.num_super_classes,
                                    corpus.spec.resolution)
    state = training.init_train_state(gen_cfg, disc_cfg, train_cfg)
    write_run_config(cfg, args.output)
    training.train_loop(state, corpus.images, labels, out_dir=args.output, quiet=False)
    print(f"finished at step {state.step}; checkpoints in {args.output}")
    return 0


def cmd_generate(args) -> int:
    cfg = resolve_config(args)
    generator, _ = training.load_generator_for_inference(args.ckpt)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_run_config(cfg, out_dir)
    import torch

    rng = torch.Generator().manual_seed(cfg["seed"])
    palette = np.array([grouping.default_color(i)
                        for i in range(generator.cfg.num_classes)], dtype=np.uint8)
    from PIL import Image

    with torch.no_grad():
        for i in range(args.count):
            z = generator.sample_z(1, rng)
            result = generator.generate(generator.map_latent(z))
            Image.fromarray(tensor_to_uint8(result.image[0])).save(
                out_dir / f"gen_{i:05d}.png")
            overlay = colorize_indices(mask_to_indices(result.final_mask[0]), palette)
            Image.fromarray(overlay).save(out_dir / f"mask_{i:05d}.png")
    print(f"wrote {args.count} images to {out_dir}")
    return 0


def cmd_explore(args) -> int:
    cfg = resolve_config(args)
    section = dict(cfg["explore"])
    if args.num_samples is not None:
        section["n"] = args.num_samples
    if args.components is not None:
        section["k"] = args.components
    if args.layers is not None:
        section["layers"] = [int(v) for v in args.layers.split(",")]
    generator, _ = training.load_generator_for_inference(args.ckpt)
    classes = ([int(v) for v in args.classes.split(",")]
               if args.classes else None)
    if section.get("space", "s") == "wplus":
        samples = expl.collect_mapped_latents(generator, section["n"], cfg["seed"])
        bank = expl.DirectionBank(style_dim=samples.shape[1], space="wplus")
        bank.entries[(0, 0)] = expl.pca(samples, section["k"])
    else:
        bank = expl.build_bank(generator, n=section["n"], k=section["k"],
                               seed=cfg["seed"], classes=classes,
                               layers=tuple(section["layers"]))
    expl.save_bank(bank, args.output)
    write_run_config(cfg, Path(args.output).parent)
    print(f"stored {len(bank.entries)} direction entries in {args.output}")
    return 0


def cmd_edit(args) -> int:
    cfg = resolve_config(args)
    generator, _ = training.load_generator_for_inference(args.ckpt)
    bank = expl.load_bank(args.bank)
    spec_doc = yaml.safe_load(Path(args.spec).read_text()) or []
    ops = []
    for item in spec_doc:
        entry = bank.entry(int(item["class"]), int(item["layer"]))
        if "coords" in item:
            coords = np.asarray(item["coords"], dtype=np.float64)
        else:
            coords = np.zeros(entry.k)
            coords[int(item["component"])] = float(item["magnitude"])
        ops.append(expl.EditOp(class_idx=int(item["class"]),
                               layer=int(item["layer"]), coords=coords))
    import torch
    from PIL import Image

    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_run_config(cfg, out_dir)
    palette = np.array([grouping.default_color(i)
                        for i in range(generator.cfg.num_classes)], dtype=np.uint8)
    with torch.no_grad():
        rng = torch.Generator().manual_seed(cfg["seed"])
        triple = generator.map_latent(generator.sample_z(1, rng))
        baseline = generator.generate(triple)
        edited = expl.apply_edit(generator, triple, ops, bank)
    for name, result in (("baseline", baseline), ("edited", edited)):
        Image.fromarray(tensor_to_uint8(result.image[0])).save(out_dir / f"{name}.png")
        overlay = colorize_indices(mask_to_indices(result.final_mask[0]), palette)
        Image.fromarray(overlay).save(out_dir / f"{name}_mask.png")
    print(f"wrote baseline and edited renders to {out_dir}")
    return 0


def _load_image_dir(path, count=None) -> np.ndarray:
    from PIL import Image

    files = sorted(p for p in Path(path).glob("*.png") if not p.name.startswith("lab_"))
    if count:
        files = files[:count]
    if not files:
        raise SystemExit(f"no PNG images under {path}")
    images = np.stack([np.asarray(Image.open(p).convert("RGB")) for p in files])
    return (images.astype(np.float32) / 127.5 - 1.0).transpose(0, 3, 1, 2)


def cmd_eval_fid(args) -> int:
    cfg = resolve_config(args)
    count = args.count or cfg["eval"]["count"]
    real = _load_image_dir(args.real, count)
    fake = _load_image_dir(args.fake, count)
    extractor = ProxyFeatureExtractor()
    value = frechet_distance(feature_stats(extractor.extract(real)),
                             feature_stats(extractor.extract(fake)))
    print(f"proxy-FID={value:.4f} (real n={real.shape[0]}, fake n={fake.shape[0]})")
    return 0


def cmd_eval_miou(args) -> int:
    pred_files = sorted(Path(args.pred).glob("*.png"))
    if not pred_files:
        raise SystemExit(f"no PNG label maps under {args.pred}")
    scores = []
    for pred_path in pred_files:
        gt_path = Path(args.gt) / pred_path.name
        pred = grouping.load_label_map(pred_path, num_classes=args.classes)
        gt = grouping.load_label_map(gt_path, num_classes=args.classes)
        scores.append(miou(pred, gt, args.classes))
    print(f"mIoU={float(np.mean(scores)):.4f} over {len(scores)} maps")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    generator, _ = training.load_generator_for_inference(args.ckpt)
    bank = expl.load_bank(args.bank) if args.bank else None
    palette = None
    if args.table:
        palette = grouping.load_remap_table(args.table).colors()
    app = create_app(ModelBundle(generator=generator, bank=bank, palette=palette))
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    rows_cfg = cfg.get("ablation") or []
    matrix = [TrainConfig(**_deep_merge(cfg["train"], row)) for row in rows_cfg]
    corpus = toydata.load_corpus(args.data, toydata.ToySceneSpec(**_tupled(cfg["toy"])))
    out_dir = Path(args.output)
    write_run_config(cfg, out_dir)
    rows = training.run_ablation(matrix, corpus, out_dir=out_dir, quiet=False)
    table = training.format_ablation_table(rows)
    (out_dir / "ablation_report.json").write_text(json.dumps(rows, indent=1))
    (out_dir / "ablation_report.txt").write_text(table + "\n")
    print(table)
    return 0


# -- parser ----------------------------------------------------------------------


def _common(parser):
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                        help="override a config field by dotted path")
    parser.add_argument("--seed", type=int, help="root random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenegan",
        description="Compositional scene GAN: preprocessing, training, "
                    "edit discovery, evaluation, and serving.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="remap a directory of label maps")
    p.add_argument("--table", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    _common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("make-toy", help="generate a paired toy corpus")
    p.add_argument("-n", "--count", type=int, default=512)
    p.add_argument("--out", dest="output", required=True)
    _common(p)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("train", help="adversarial training on a paired corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--out", dest="output", required=True)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample images from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("-n", "--count", type=int, default=8)
    p.add_argument("--out", dest="output", required=True)
    _common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("explore", help="discover edit directions by PCA")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--classes", help="comma separated class indices (default all)")
    p.add_argument("--layers", help="comma separated layer indices (default 5,9)")
    p.add_argument("-N", "--num-samples", type=int)
    p.add_argument("-k", "--components", type=int)
    p.add_argument("--out", dest="output", required=True)
    _common(p)
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("edit", help="apply a stored edit spec to a seed")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--out", dest="output", required=True)
    _common(p)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("eval", help="metrics")
    eval_sub = p.add_subparsers(dest="metric", required=True)
    pf = eval_sub.add_parser("fid", help="Fréchet proxy distance between image dirs")
    pf.add_argument("--real", required=True)
    pf.add_argument("--fake", required=True)
    pf.add_argument("--count", type=int)
    _common(pf)
    pf.set_defaults(func=cmd_eval_fid)
    pm = eval_sub.add_parser("miou", help="mean IoU between label map dirs")
    pm.add_argument("--pred", required=True)
    pm.add_argument("--gt", required=True)
    pm.add_argument("--classes", type=int, required=True)
    _common(pm)
    pm.set_defaults(func=cmd_eval_miou)

    p = sub.add_parser("serve", help="run the editing service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bank")
    p.add_argument("--table", help="remap table supplying overlay colors")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    _common(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("ablate", help="run a configuration matrix")
    p.add_argument("--data", required=True)
    p.add_argument("--out", dest="output", required=True)
    _common(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 1
        return int(exc.code) if exc.code is not None else 0
    except (grouping.GroupingError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
