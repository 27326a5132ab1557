"""Command-line pipeline: synth, propagate, train, eval, analyze, plot.

Every command takes ``--config <json>``, ``--seed <int>`` and ``--out <dir>``;
explicit flags override config-file values, which override defaults. The
effective configuration and a provenance block (config hash, seed, code
version) are written next to each command's outputs, and all stages
communicate only through documented file formats, so identical inputs and
seed reproduce outputs bit-exactly.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DescoError
from .evaluation import evaluate_volumes, slice_pair_hsic
from .io import load_label, load_manifest, load_volume, save_volume
from .model import SegmentationModel
from .registration import RegistrationConfig, propagate_orthogonal
from .schedules import ScheduleConfig
from .synthetic import make_orthogonal_annotation, synthesize_dataset
from .trainer import (
    TrainConfig,
    load_eval_pairs,
    load_training_data,
    sliding_window_predict,
    train_desco,
)
from .volume import LabelVolume, Plane


def _effective_config(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit CLI flags."""
    merged = dict(defaults)
    if args.config:
        loaded = json.loads(Path(args.config).read_text())
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise DescoError(f"config file has unknown keys: {sorted(unknown)}")
        merged.update(loaded)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _write_provenance(out: Path, cfg: dict, seed: int) -> None:
    canonical = json.dumps(cfg, sort_keys=True)
    prov = {
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": seed,
        "code_version": __version__,
    }
    (out / "config.json").write_text(canonical + "\n")
    (out / "provenance.json").write_text(json.dumps(prov, sort_keys=True, indent=1) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- synth ---------------------------------------------------------------------

_SYNTH_DEFAULTS = {
    "volumes": 20, "annotated": 3, "test_volumes": 4,
    "dims": [48, 48, 48], "blobs": 3, "drift": 0.7, "noise": 0.08,
}


def _cmd_synth(args) -> int:
    cfg = _effective_config(args, _SYNTH_DEFAULTS)
    out = _out_dir(args)
    synthesize_dataset(
        out,
        n_volumes=cfg["volumes"],
        n_annotated=cfg["annotated"],
        n_test=cfg["test_volumes"],
        dims=tuple(cfg["dims"]),
        n_blobs=cfg["blobs"],
        drift=cfg["drift"],
        noise_sigma=cfg["noise"],
        seed=args.seed,
    )
    _write_provenance(out, cfg, args.seed)
    print(f"wrote dataset with {cfg['volumes']} training volumes to {out}")
    return 0


# -- propagate -------------------------------------------------------------------

_PROP_DEFAULTS = {
    "backend": "builtin_demons", "iterations": 30, "smoothing_sigma": 1.0,
    "pyramid_levels": 2, "field_cap": 10.0, "external_cmd": "",
}


def _reg_config(cfg: dict) -> RegistrationConfig:
    return RegistrationConfig(
        backend=cfg["backend"],
        iterations=int(cfg["iterations"]),
        smoothing_sigma=float(cfg["smoothing_sigma"]),
        pyramid_levels=int(cfg["pyramid_levels"]),
        field_cap=float(cfg["field_cap"]),
        external_cmd=cfg["external_cmd"] or None,
    )


def _cmd_propagate(args) -> int:
    cfg = _effective_config(args, _PROP_DEFAULTS)
    out = _out_dir(args)
    reg = _reg_config(cfg)
    entries = load_manifest(args.manifest)
    report_rows = []
    n_done = 0
    for e in entries:
        if not e.annotated:
            continue
        vol = load_volume(e.volume_path)
        ann = make_orthogonal_annotation(load_label(e.label_path), e.m, e.n)
        pa, pb = propagate_orthogonal(vol, ann, reg)
        stem = Path(e.volume_path).name.replace("_img.json", "").replace(".json", "")
        for plane_tag, pseudo in (("a", pa), ("b", pb)):
            save_volume(
                LabelVolume(pseudo.data, vol.spacing, f"{vol.id}-pseudo-{plane_tag}"),
                out / f"{stem}_pseudo_{plane_tag}.json",
            )
            axis = pseudo.source_plane.axis
            for k in range(pseudo.data.shape[axis]):
                fg = int(np.take(pseudo.data, k, axis=axis).sum())
                report_rows.append(
                    {"volume": vol.id, "plane": plane_tag, "slice": k,
                     "d": abs(k - pseudo.source_index), "fg_area": fg}
                )
        n_done += 1
    with open(out / "propagation_quality.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["volume", "plane", "slice", "d", "fg_area"])
        writer.writeheader()
        writer.writerows(report_rows)
    _write_provenance(out, cfg, args.seed)
    print(f"propagated {n_done} annotated volumes to {out}")
    return 0


# -- train -----------------------------------------------------------------------

_TRAIN_DEFAULTS = {
    "iters": 6000, "alpha0": 0.95, "alpha_update_every": 1000,
    "lambda_oc": 0.8, "lr0": 0.01, "lr_min": 0.0001,
    "patch": [32, 32, 32], "eval_every": 100, "uncertainty_passes": 8,
    "variant": "desco", "channels": [8, 16, 32], "dropout": 0.1,
    **_PROP_DEFAULTS,
}


def _cmd_train(args) -> int:
    cfg = _effective_config(args, _TRAIN_DEFAULTS)
    out = _out_dir(args)
    schedule = ScheduleConfig(
        total_iters=int(cfg["iters"]),
        alpha0=float(cfg["alpha0"]),
        alpha_update_every=int(cfg["alpha_update_every"]),
        lambda_oc=float(cfg["lambda_oc"]),
        lr0=float(cfg["lr0"]),
        lr_min=float(cfg["lr_min"]),
    )
    tcfg = TrainConfig(
        schedule=schedule,
        registration=_reg_config(cfg),
        patch_size=tuple(cfg["patch"]),
        seed=args.seed,
        uncertainty_passes=int(cfg["uncertainty_passes"]),
        eval_every=int(cfg["eval_every"]),
        variant=cfg["variant"],
        channels=tuple(cfg["channels"]),
        dropout=float(cfg["dropout"]),
    )
    labeled, unlabeled = load_training_data(load_manifest(args.manifest))
    val_pairs = load_eval_pairs(load_manifest(args.val_manifest)) if args.val_manifest else None
    _write_provenance(out, cfg, args.seed)
    train_desco(labeled, unlabeled, tcfg, val_pairs=val_pairs, out_dir=out)
    print(f"trained {cfg['variant']} for {cfg['iters']} iterations; outputs in {out}")
    return 0


# -- eval ------------------------------------------------------------------------

_EVAL_DEFAULTS = {"patch": [32, 32, 32], "strides": [16, 16, 16]}


def _cmd_eval(args) -> int:
    cfg = _effective_config(args, _EVAL_DEFAULTS)
    out = _out_dir(args)
    models = [SegmentationModel.load(args.checkpoint_a)]
    if args.checkpoint_b:
        models.append(SegmentationModel.load(args.checkpoint_b))
    pairs = load_eval_pairs(load_manifest(args.manifest))
    scored = []
    for vol, gt in pairs:
        prob = sliding_window_predict(models, vol, tuple(cfg["patch"]), tuple(cfg["strides"]))
        pred = LabelVolume((prob > 0.5).astype(np.uint8), vol.spacing, vol.id)
        scored.append((pred, gt))
    report = evaluate_volumes(scored)
    canonical = json.dumps(cfg, sort_keys=True)
    report["provenance"] = {
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": args.seed,
        "code_version": __version__,
        "ensemble": len(models) == 2,
    }
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["id", "dice", "jaccard", "hd95", "asd"])
        writer.writeheader()
        writer.writerows(report["per_volume"])
    _write_provenance(out, cfg, args.seed)
    agg = report["aggregate"]
    print(
        "dice {dice[mean]:.4f}±{dice[std]:.4f} jaccard {jaccard[mean]:.4f}±{jaccard[std]:.4f} "
        "hd95 {hd95[mean]:.3f} asd {asd[mean]:.3f}".format(**agg)
    )
    return 0


# -- analyze ---------------------------------------------------------------------

_ANALYZE_DEFAULTS = {"pairs": 50}


def _cmd_analyze(args) -> int:
    cfg = _effective_config(args, _ANALYZE_DEFAULTS)
    out = _out_dir(args)
    entries = load_manifest(args.manifest)
    volumes = [load_volume(e.volume_path) for e in entries]
    rows = []
    for kernel in ("linear", "rbf"):
        res = slice_pair_hsic(volumes, n_pairs=int(cfg["pairs"]), kernel=kernel, seed=args.seed)
        for pair_type in ("parallel", "orthogonal"):
            rows.append(
                {"kernel": kernel, "pair_type": pair_type,
                 "hsic_mean": res[f"{pair_type}_mean"], "hsic_std": res[f"{pair_type}_std"],
                 "n_pairs": res["n_pairs"]}
            )
    with open(out / "hsic_comparison.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["kernel", "pair_type", "hsic_mean", "hsic_std", "n_pairs"]
        )
        writer.writeheader()
        writer.writerows(rows)
    _write_provenance(out, cfg, args.seed)
    for row in rows:
        print(
            f"{row['kernel']:6s} {row['pair_type']:10s} "
            f"HSIC {row['hsic_mean']:.6g} ± {row['hsic_std']:.6g}"
        )
    return 0


# -- plot ------------------------------------------------------------------------

def _cmd_plot(args) -> int:
    from .plots import plot_history, plot_report

    out = _out_dir(args)
    written = []
    if args.history:
        written += plot_history(args.history, out)
    if args.report:
        written += plot_report(args.report, out)
    if not written:
        raise DescoError("plot needs --history and/or --report")
    _write_provenance(out, {"history": args.history or "", "report": args.report or ""}, args.seed)
    print("wrote " + ", ".join(written))
    return 0


# -- parser ----------------------------------------------------------------------

def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="JSON config file (overridden by explicit flags)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="desco", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic phantom dataset")
    _add_common(sp)
    sp.add_argument("--volumes", type=int)
    sp.add_argument("--annotated", type=int)
    sp.add_argument("--test-volumes", dest="test_volumes", type=int)
    sp.add_argument("--dims", type=int, nargs=3)
    sp.add_argument("--blobs", type=int)
    sp.add_argument("--drift", type=float)
    sp.add_argument("--noise", type=float)
    sp.set_defaults(func=_cmd_synth)

    sp = sub.add_parser("propagate", help="propagate annotations to dense pseudo labels")
    _add_common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--backend", choices=["builtin_demons", "translation_only", "external_command"])
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--smoothing-sigma", dest="smoothing_sigma", type=float)
    sp.add_argument("--pyramid-levels", dest="pyramid_levels", type=int)
    sp.add_argument("--field-cap", dest="field_cap", type=float)
    sp.add_argument("--external-cmd", dest="external_cmd")
    sp.set_defaults(func=_cmd_propagate)

    sp = sub.add_parser("train", help="run co-training on a dataset manifest")
    _add_common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--val-manifest", dest="val_manifest")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--variant", choices=["desco", "sparse_only", "static_dense"])
    sp.add_argument("--alpha0", type=float)
    sp.add_argument("--alpha-update-every", dest="alpha_update_every", type=int)
    sp.add_argument("--lambda-oc", dest="lambda_oc", type=float)
    sp.add_argument("--lr0", type=float)
    sp.add_argument("--lr-min", dest="lr_min", type=float)
    sp.add_argument("--patch", type=int, nargs=3)
    sp.add_argument("--eval-every", dest="eval_every", type=int)
    sp.add_argument("--uncertainty-passes", dest="uncertainty_passes", type=int)
    sp.add_argument("--backend", choices=["builtin_demons", "translation_only", "external_command"])
    sp.add_argument("--iterations", type=int, help="registration iterations per level")
    sp.set_defaults(func=_cmd_train)

    sp = sub.add_parser("eval", help="evaluate checkpoints on a test manifest")
    _add_common(sp)
    sp.add_argument("--checkpoint-a", dest="checkpoint_a", required=True)
    sp.add_argument("--checkpoint-b", dest="checkpoint_b")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--patch", type=int, nargs=3)
    sp.add_argument("--strides", type=int, nargs=3)
    sp.set_defaults(func=_cmd_eval)

    sp = sub.add_parser("analyze", help="compare HSIC of parallel vs orthogonal slice pairs")
    _add_common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--pairs", type=int)
    sp.set_defaults(func=_cmd_analyze)

    sp = sub.add_parser("plot", help="render training curves and metric bars")
    _add_common(sp)
    sp.add_argument("--history", help="history.csv from train")
    sp.add_argument("--report", help="report.json from eval")
    sp.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DescoError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
