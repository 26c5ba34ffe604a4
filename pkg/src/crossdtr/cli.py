"""Command-line entry point: scene generation, depth maps, training, eval,
self-check.

Run configs are JSON documents validated against an exhaustive schema; every
field has a default, printable via ``crossdtr train --print-config``. The
seed precedence is flags > CROSSDTR_SEED env var > config file.

Exit codes: 0 success, 1 usage error, 2 data error, 3 self-check failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .bench.metrics import build_report, detection_set_from_boxes
from .bench.scenes import (
    Scene,
    SceneConfig,
    generate_scene,
    load_scene,
    save_scene,
)
from .depthmap import DepthRange, build_sparse_depth_maps, write_pgm
from .errors import (
    ConfigurationError,
    DataError,
    GenerationError,
    SelfCheckError,
    UsageError,
)
from .geometry import Box3D
from .network.config import ModelConfig
from .network.model import CrossDTRModel
from .objective import LossWeights
from .tensor import load_checkpoint, save_checkpoint
from .training import TrainSettings, predict_scenes, train_model, write_log_csv

SEED_ENV_VAR = "CROSSDTR_SEED"
ABLATION_PRESETS = ("none", "de", "de+ddn")

DEFAULT_CONFIG: dict = {
    "model": ModelConfig().to_dict(),
    "loss": {"alpha_class": 2.0, "alpha_reg": 0.25, "alpha_ddn": 1.0},
    "optimizer": {"lr": 2e-4, "betas": [0.9, 0.999], "weight_decay": 0.01,
                  "lr_schedule": "cosine"},
    "training": {
        "epochs": 50,
        "batch_size": 1,
        "seed": 0,
        "deep_supervision": True,
        "checkpoint_every": 0,
    },
    "scenes": {
        "train_count": 8,
        "val_count": 4,
        "seed_base": 1000,
        "train_dir": None,
        "val_dir": None,
        "num_cameras": 2,
        "image_w": 96,
        "image_h": 32,
        "min_boxes": 2,
        "max_boxes": 6,
    },
    "output_dir": "run",
}

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_BOOL = {"type": "boolean"}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "embed_dim": _INT,
                "encoder_layers": _INT,
                "decoder_layers": _INT,
                "heads": _INT,
                "num_queries": _INT,
                "num_classes": _INT,
                "depth_range": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"d_min": _NUM, "d_max": _NUM, "num_bins": _INT},
                },
                "feature_stride": _INT,
                "head_hidden": _INT,
                "ffn_hidden": _INT,
                "scene_bounds": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "min": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
                        "max": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
                    },
                },
                "query_self_attention": _BOOL,
                "learnable_anchors": _BOOL,
                "use_cross_depth": _BOOL,
                "separate_query_pos": _BOOL,
            },
        },
        "loss": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"alpha_class": _NUM, "alpha_reg": _NUM, "alpha_ddn": _NUM},
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": _NUM,
                "betas": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "weight_decay": _NUM,
                "lr_schedule": {"type": "string", "enum": ["cosine", "constant"]},
            },
        },
        "training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": _INT,
                "batch_size": _INT,
                "seed": _INT,
                "deep_supervision": _BOOL,
                "checkpoint_every": _INT,
            },
        },
        "scenes": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "train_count": _INT,
                "val_count": _INT,
                "seed_base": _INT,
                "train_dir": {"type": ["string", "null"]},
                "val_dir": {"type": ["string", "null"]},
                "num_cameras": _INT,
                "image_w": _INT,
                "image_h": _INT,
                "min_boxes": _INT,
                "max_boxes": _INT,
            },
        },
        "output_dir": {"type": "string"},
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_run_config(path: str | None) -> dict:
    """Defaults merged with the config file, schema-validated."""
    user: dict = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError as e:
            raise DataError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{e.lineno}: invalid JSON: {e.msg}") from e
        try:
            jsonschema.validate(user, CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            raise ConfigurationError(f"{path}: {where}: {e.message}") from e
    return _merge(DEFAULT_CONFIG, user)


def apply_seed_overrides(config: dict, flag_seed: int | None) -> dict:
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            config["training"]["seed"] = int(env)
        except ValueError as e:
            raise UsageError(f"{SEED_ENV_VAR}={env!r} is not an integer") from e
    if flag_seed is not None:
        config["training"]["seed"] = flag_seed
    return config


def apply_ablation(config: dict, preset: str | None) -> dict:
    """Presets mirroring the depth-guidance ablation rows.

    'none' removes the cross-depth sub-layer and depth supervision, 'de'
    keeps the sub-layer without supervision, 'de+ddn' is the full model.
    """
    if preset is None or preset == "de+ddn":
        return config
    if preset == "de":
        config["loss"]["alpha_ddn"] = 0.0
    elif preset == "none":
        config["model"]["use_cross_depth"] = False
        config["loss"]["alpha_ddn"] = 0.0
    else:
        raise UsageError(f"unknown ablation preset {preset!r}; expected {ABLATION_PRESETS}")
    return config


def scene_config_from(config: dict) -> SceneConfig:
    s = config["scenes"]
    m = config["model"]["depth_range"]
    return SceneConfig(
        num_cameras=s["num_cameras"],
        image_w=s["image_w"],
        image_h=s["image_h"],
        box_count=(s["min_boxes"], s["max_boxes"]),
        depth_range=DepthRange(m["d_min"], m["d_max"], m["num_bins"]),
    )


def resolve_scenes(config: dict, split: str) -> list[Scene]:
    s = config["scenes"]
    directory = s[f"{split}_dir"]
    if directory:
        paths = sorted(Path(directory).glob("*.json"))
        if not paths:
            raise DataError(f"no scene JSON files under {directory}")
        return [load_scene(p) for p in paths]
    count = s[f"{split}_count"]
    base = s["seed_base"] + (0 if split == "train" else s["train_count"])
    cfg = scene_config_from(config)
    return [generate_scene(base + i, cfg) for i in range(count)]


# ---------------------------------------------------------------------------
# commands


def cmd_gen_scenes(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SceneConfig(
        num_cameras=args.cameras,
        image_w=args.image_w,
        image_h=args.image_h,
        box_count=(args.min_boxes, args.max_boxes),
    )
    for i in range(args.count):
        scene = generate_scene(args.seed + i, cfg)
        save_scene(out / f"{scene.scene_id}.json", scene)
    print(f"wrote {args.count} scenes to {out}")
    return 0


def cmd_gen_depth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = sorted(Path(args.scenes).glob("*.json"))
    if not paths:
        raise DataError(f"no scene JSON files under {args.scenes}")
    r = DepthRange(args.dmin, args.dmax, args.bins)
    total = 0
    for path in paths:
        scene = load_scene(path)
        w_d = scene.image_w // args.stride
        h_d = scene.image_h // args.stride
        maps = build_sparse_depth_maps(scene.boxes, scene.cameras, r, w_d, h_d)
        for m, depth_map in enumerate(maps):
            write_pgm(out / f"{scene.scene_id}_cam{m}.pgm", depth_map)
            total += 1
    print(f"wrote {total} depth maps to {out}")
    return 0


def _model_config_from(config: dict) -> ModelConfig:
    return ModelConfig.from_dict(config["model"])


def cmd_train(args) -> int:
    config = load_run_config(args.config)
    config = apply_seed_overrides(config, args.seed)
    config = apply_ablation(config, args.ablate)
    if args.out is not None:
        config["output_dir"] = args.out
    if args.print_config:
        print(json.dumps(config, indent=2, sort_keys=True))
        return 0

    model_cfg = _model_config_from(config)
    weights = LossWeights(**config["loss"])
    opt = config["optimizer"]
    tr = config["training"]
    settings = TrainSettings(
        lr=opt["lr"],
        betas=tuple(opt["betas"]),
        weight_decay=opt["weight_decay"],
        lr_schedule=opt["lr_schedule"],
        epochs=tr["epochs"],
        batch_size=tr["batch_size"],
        seed=tr["seed"],
        deep_supervision=tr["deep_supervision"],
        checkpoint_every=tr["checkpoint_every"],
    )
    scenes = resolve_scenes(config, "train")

    run_dir = Path(config["output_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")

    model = CrossDTRModel(model_cfg, np.random.default_rng(settings.seed))

    def checkpoint_hook(iteration: int) -> None:
        save_checkpoint(run_dir / f"checkpoint_{iteration:06d}.cdtr", model.named_parameters())

    result = train_model(model, scenes, weights, settings, on_checkpoint=checkpoint_hook,
                         max_iterations=args.max_iterations)
    save_checkpoint(run_dir / "checkpoint.cdtr", model.named_parameters())
    write_log_csv(run_dir / "train_log.csv", result.log)
    if result.final is not None:
        f = result.final
        print(
            f"trained {f.iteration} iterations: L_class {f.l_class:.4f} "
            f"L_reg {f.l_reg:.4f} L_ddn {f.l_ddn:.4f} L_total {f.l_total:.4f}"
        )
    else:
        print("trained 0 iterations (epochs=0); checkpoint equals initialization")
    print(f"run directory: {run_dir}")
    return 0


def load_model_from_run(checkpoint_path: Path) -> tuple[CrossDTRModel, dict]:
    """Rebuild a model from a checkpoint and its run config.json sibling."""
    checkpoint_path = Path(checkpoint_path)
    run_dir = checkpoint_path.parent
    config_path = run_dir / "config.json"
    if not config_path.exists():
        raise DataError(f"missing {config_path}; a checkpoint needs its run config")
    config = load_run_config(config_path)
    model_cfg = _model_config_from(config)
    model = CrossDTRModel(model_cfg, np.random.default_rng(config["training"]["seed"]))
    state = load_checkpoint(checkpoint_path)
    try:
        model.load_state(state)
    except ValueError as e:
        raise DataError(f"checkpoint incompatible with {config_path}: {e}") from e
    return model, config


def load_predictions_file(path, scenes: list[Scene], num_classes: int):
    """External predictions: {scene_id: [{x..theta, class_id, score}, ...]}."""
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}:{e.lineno}: invalid predictions JSON: {e.msg}") from e
    sets = []
    for scene in scenes:
        rows = payload.get(scene.scene_id, [])
        try:
            boxes = [
                Box3D(r["x"], r["y"], r["z"], r["l"], r["w"], r["h"], r["theta"],
                      int(r["class_id"]))
                for r in rows
            ]
            scores = [float(r["score"]) for r in rows]
        except (KeyError, TypeError) as e:
            raise DataError(f"{path}: malformed prediction for {scene.scene_id}: {e}") from e
        sets.append(detection_set_from_boxes(boxes, scores, num_classes=num_classes))
    return sets


def cmd_eval(args) -> int:
    if (args.checkpoint is None) == (args.predictions is None):
        raise UsageError("eval needs exactly one of --checkpoint or --predictions")
    scene_paths = sorted(Path(args.scenes).glob("*.json"))
    if not scene_paths:
        raise DataError(f"no scene JSON files under {args.scenes}")
    scenes = [load_scene(p) for p in scene_paths]
    thresholds = [float(t) for t in args.thresholds.split(",") if t]
    if not thresholds:
        raise UsageError("--thresholds must name at least one distance")

    if args.checkpoint is not None:
        model, _ = load_model_from_run(Path(args.checkpoint))
        preds = predict_scenes(model, scenes)
        class_ids = list(range(model.cfg.num_classes))
    else:
        class_ids = [0, 1]
        preds = load_predictions_file(args.predictions, scenes, num_classes=len(class_ids))

    report = build_report(
        preds,
        [s.boxes for s in scenes],
        [s.cameras for s in scenes],
        class_ids=class_ids,
        thresholds=thresholds,
        normalized=not args.plain_ap,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "report.json")
    report.write_pr_csv(out / "pr_curves.csv")
    print(f"mean AP {report.mean_ap:.4f} over classes {class_ids} x thresholds {thresholds}")
    print(f"report: {out / 'report.json'}")
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    report = run_selfcheck(verbose=True)
    if not report.ok:
        raise SelfCheckError(f"failed suites: {', '.join(report.failures())}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crossdtr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="write synthetic scene JSON files")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--cameras", type=int, default=2)
    p.add_argument("--image-w", type=int, default=96)
    p.add_argument("--image-h", type=int, default=32)
    p.add_argument("--min-boxes", type=int, default=2)
    p.add_argument("--max-boxes", type=int, default=6)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("gen-depth", help="write sparse depth maps as PGM files")
    p.add_argument("--scenes", required=True, help="directory of scene JSON files")
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=16)
    p.add_argument("--dmin", type=float, default=1.0)
    p.add_argument("--dmax", type=float, default=61.2)
    p.add_argument("--stride", type=int, default=16)
    p.set_defaults(func=cmd_gen_depth)

    p = sub.add_parser("train", help="train a detector from a JSON run config")
    p.add_argument("--config", default=None, help="run config JSON (defaults used if omitted)")
    p.add_argument("--seed", type=int, default=None, help="override the training seed")
    p.add_argument("--ablate", choices=ABLATION_PRESETS, default=None)
    p.add_argument("--out", default=None, help="override output_dir")
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved config (with defaults) and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or a predictions file")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--predictions", default=None,
                   help="JSON predictions file instead of a checkpoint")
    p.add_argument("--scenes", required=True)
    p.add_argument("--thresholds", default="0.5,1.0,2.0,4.0")
    p.add_argument("--out", default="eval")
    p.add_argument("--plain-ap", action="store_true",
                   help="plain area under the PR envelope, no clipping/rescaling")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selfcheck", help="run every built-in oracle suite")
    p.set_defaults(func=cmd_selfcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1
    except (DataError, GenerationError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2
    except SelfCheckError as e:
        print(f"selfcheck failed: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
