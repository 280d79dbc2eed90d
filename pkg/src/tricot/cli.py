"""Command line entry points.

Subcommands: gen-data, pretrain, distill, train-temporal, evaluate, ablate.
Each takes --config <path>, --seed <u64>, --out <dir>.  Success exits 0 and
prints a small JSON summary on stdout; any failure exits 1 with a one-line
JSON error document on stderr.  A run directory holds config.lock,
checkpoints/, reports/, and plots/.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import (ConfigError, RunConfig, load_run_config,
                     run_config_from_dict, run_config_to_dict, write_config_lock)
from .datagen import SyntheticConfig, generate_dataset, read_dataset, write_dataset
from .encoder import FrameEncoder
from .metrics import write_report_csv, write_report_json
from .mrtt import MrttConfig, TemporalHead
from .pipeline import (run_distill, run_evaluate, run_full, run_pretrain,
                       run_temporal)
from . import plots


def _resolve(path: str, config_path: str) -> str:
    if os.path.isabs(path):
        return path
    return os.path.join(os.path.dirname(os.path.abspath(config_path)), path)


def _run_dirs(out: str) -> dict:
    dirs = {"root": out,
            "checkpoints": os.path.join(out, "checkpoints"),
            "reports": os.path.join(out, "reports"),
            "plots": os.path.join(out, "plots")}
    for d in dirs.values():
        os.makedirs(d, exist_ok=True)
    return dirs


def _write_json(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _setup(args):
    rc = load_run_config(args.config)
    seed = args.seed if args.seed is not None else rc.seeds[0]
    ds = read_dataset(_resolve(rc.dataset, args.config))
    dirs = _run_dirs(args.out)
    write_config_lock(rc, seed, os.path.join(dirs["root"], "config.lock"))
    return rc, int(seed), ds, dirs


def _restore_encoder(rc: RunConfig, ds, params: dict) -> FrameEncoder:
    enc = FrameEncoder(ds.config.obs_dim, rc.encoder.hidden, rc.encoder.feat_dim,
                       rc.encoder.proj_dim, ds.num_classes, np.random.default_rng(0))
    enc.load_params(params)
    return enc


def _restore_head(rc: RunConfig, ds, params: dict) -> TemporalHead:
    head = TemporalHead(
        MrttConfig(feat_dim=rc.encoder.feat_dim, num_classes=ds.num_classes,
                   strides=rc.pathway.strides, layers=rc.pathway.layers,
                   heads=rc.pathway.heads, ff_dim=rc.pathway.ff_dim,
                   dropout=rc.pathway.dropout,
                   gamma_learnable=rc.toggles.gamma_fusion,
                   beta_learnable=rc.toggles.beta_fusion),
        np.random.default_rng(0))
    head.load_params(params)
    return head


def _need_checkpoint(dirs: dict, name: str) -> dict:
    path = os.path.join(dirs["checkpoints"], name)
    if not os.path.exists(path):
        raise ConfigError(f"missing checkpoint {path}; run the earlier stages "
                          "into the same --out directory first")
    return load_checkpoint(path)


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args) -> dict:
    with open(args.config) as fh:
        doc = json.load(fh)
    try:
        cfg = SyntheticConfig(**doc)
    except TypeError as exc:
        raise ConfigError(f"{args.config}: {exc}") from exc
    seed = args.seed if args.seed is not None else 0
    ds = generate_dataset(cfg, seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "dataset.trds")
    write_dataset(ds, path)
    _write_json({"seed": int(seed), "config": dataclasses.asdict(cfg)},
                os.path.join(args.out, "config.lock"))
    return {"dataset": path, "episodes": cfg.episodes,
            "classes": ds.num_classes,
            "train_episodes": len(ds.indices("train")),
            "val_episodes": len(ds.indices("val"))}


def cmd_pretrain(args) -> dict:
    rc, seed, ds, dirs = _setup(args)
    encoder, log = run_pretrain(ds, rc, seed)
    path = os.path.join(dirs["checkpoints"], "pretrained.trck")
    save_checkpoint(encoder.params, path)
    _write_json({"seed": seed, **log}, os.path.join(dirs["reports"], "pretrain.json"))
    plots.save_loss_curve(
        {st["stage"]: st["losses"] for st in log["stages"]},
        "contrastive pretraining", os.path.join(dirs["plots"], "pretrain_loss.svg"))
    return {"checkpoint": path, "marker": log["marker"]}


def cmd_distill(args) -> dict:
    rc, seed, ds, dirs = _setup(args)
    encoder = _restore_encoder(rc, ds, _need_checkpoint(dirs, "pretrained.trck"))
    teacher, student, log = run_distill(ds, rc, seed, encoder)
    t_path = os.path.join(dirs["checkpoints"], "teacher.trck")
    s_path = os.path.join(dirs["checkpoints"], "student.trck")
    save_checkpoint(teacher.params, t_path)
    save_checkpoint(student.params, s_path)
    _write_json({"seed": seed, **log}, os.path.join(dirs["reports"], "distill.json"))
    plots.save_loss_curve({"teacher": log["teacher_losses"],
                           "student": log["student_losses"]},
                          "distillation", os.path.join(dirs["plots"], "distill_loss.svg"))
    return {"teacher": t_path, "student": s_path}


def cmd_train_temporal(args) -> dict:
    rc, seed, ds, dirs = _setup(args)
    student = _restore_encoder(rc, ds, _need_checkpoint(dirs, "student.trck"))
    head, log = run_temporal(ds, rc, seed, student)
    path = os.path.join(dirs["checkpoints"], "temporal.trck")
    save_checkpoint(head.params, path)
    _write_json({"seed": seed, **log}, os.path.join(dirs["reports"], "temporal.json"))
    plots.save_loss_curve({"temporal": [e["loss"] for e in log["epochs"]]},
                          "temporal head", os.path.join(dirs["plots"], "temporal_loss.svg"))
    plots.save_fusion_trail(log, rc.pathway.strides,
                            os.path.join(dirs["plots"], "fusion.svg"))
    return {"checkpoint": path, "final_gamma": log["epochs"][-1]["gamma"],
            "final_beta": log["epochs"][-1]["beta"]}


def cmd_evaluate(args) -> dict:
    rc, seed, ds, dirs = _setup(args)
    student = _restore_encoder(rc, ds, _need_checkpoint(dirs, "student.trck"))
    head = _restore_head(rc, ds, _need_checkpoint(dirs, "temporal.trck"))
    splits = ("train", "val") if args.split == "both" else (args.split,)
    summary = {}
    for split in splits:
        report = run_evaluate(ds, rc, student, head, split,
                              spatial_only=args.spatial_only)
        tag = split + ("_spatial" if args.spatial_only else "")
        write_report_json(report, os.path.join(dirs["reports"], f"eval_{tag}.json"))
        write_report_csv(report, os.path.join(dirs["reports"], f"eval_{tag}.csv"))
        plots.save_ap_bars(report, f"AP by family ({tag})",
                           os.path.join(dirs["plots"], f"ap_{tag}.svg"))
        summary[tag] = {fam: report.families[fam].mean_ap
                        for fam in report.families}
    return summary


def _toggle_ladder() -> list:
    """Component ladder: from everything off to the full recipe."""
    return [
        {"supcon": False, "curriculum": False, "input_mixup": False,
         "feature_mixup": False, "gamma_fusion": False, "beta_fusion": False},
        {"supcon": True, "curriculum": False, "input_mixup": False,
         "feature_mixup": False, "gamma_fusion": False, "beta_fusion": False},
        {"supcon": True, "curriculum": True, "input_mixup": False,
         "feature_mixup": False, "gamma_fusion": False, "beta_fusion": False},
        {"supcon": True, "curriculum": True, "input_mixup": True,
         "feature_mixup": False, "gamma_fusion": False, "beta_fusion": False},
        {"supcon": True, "curriculum": True, "input_mixup": True,
         "feature_mixup": True, "gamma_fusion": False, "beta_fusion": False},
        {"supcon": True, "curriculum": True, "input_mixup": True,
         "feature_mixup": True, "gamma_fusion": True, "beta_fusion": True},
    ]


def _sweep_rows(base: RunConfig, sweep: dict) -> list:
    """(label, config, row-description) per sweep entry."""
    kind = sweep.get("kind")
    rows = []
    if kind == "toggles":
        for doc in sweep.get("rows", _toggle_ladder()):
            toggles = dataclasses.replace(base.toggles, **doc)
            cfg = dataclasses.replace(base, toggles=toggles)
            desc = {name: getattr(toggles, name) for name in
                    ("supcon", "curriculum", "input_mixup", "feature_mixup",
                     "gamma_fusion", "beta_fusion")}
            rows.append(("+".join(k for k, v in desc.items() if v) or "none",
                         cfg, desc))
    elif kind == "curriculum":
        for order in sweep["orders"]:
            cfg = dataclasses.replace(base, curriculum=tuple(order))
            rows.append(("->".join(order), cfg, {"order": list(order)}))
    elif kind == "alpha":
        for value in sweep["values"]:
            cfg = dataclasses.replace(
                base, loss=dataclasses.replace(base.loss, input_alpha=value))
            rows.append((f"input_alpha={value}", cfg,
                         {"mixup": "input", "alpha": value}))
        for value in sweep["values"]:
            cfg = dataclasses.replace(
                base, sampler=dataclasses.replace(base.sampler, alpha=value))
            rows.append((f"feature_alpha={value}", cfg,
                         {"mixup": "feature", "alpha": value}))
    elif kind == "strides":
        for strides in sweep["sets"]:
            cfg = dataclasses.replace(
                base, pathway=dataclasses.replace(base.pathway,
                                                  strides=tuple(strides)))
            rows.append((",".join(str(s) for s in strides), cfg,
                         {"strides": list(strides)}))
    else:
        raise ConfigError(f"unknown sweep kind {kind!r}; expected toggles, "
                          "curriculum, alpha, or strides")
    return rows


def cmd_ablate(args) -> dict:
    with open(args.config) as fh:
        doc = json.load(fh)
    if "base" not in doc or "sweep" not in doc:
        raise ConfigError("ablation config needs 'base' (run config) and 'sweep'")
    base = run_config_from_dict(doc["base"])
    seeds = (args.seed,) if args.seed is not None else base.seeds
    ds = read_dataset(_resolve(base.dataset, args.config))
    dirs = _run_dirs(args.out)
    _write_json(doc, os.path.join(dirs["root"], "config.lock"))

    table = []
    for label, cfg, desc in _sweep_rows(base, doc["sweep"]):
        per_seed = []
        for seed in seeds:
            result = run_full(ds, cfg, int(seed))
            entry = {"seed": int(seed)}
            for tag, report in result["reports"].items():
                entry[f"ap_ivt_{tag}"] = report.families["IVT"].mean_ap
            per_seed.append(entry)
        row = {"label": label, **desc, "seeds": per_seed}
        mean_keys = sorted({k for e in per_seed for k in e if k.startswith("ap_ivt_")})
        for key in mean_keys:
            values = [e[key] for e in per_seed if e.get(key) is not None]
            row[f"{key}_mean"] = float(np.mean(values)) if values else None
        table.append(row)

    _write_json({"sweep": doc["sweep"], "rows": table},
                os.path.join(dirs["reports"], "ablation.json"))
    _write_ablation_csv(table, os.path.join(dirs["reports"], "ablation.csv"))
    return {"rows": len(table),
            "report": os.path.join(dirs["reports"], "ablation.json")}


def _write_ablation_csv(table: list, path) -> None:
    import csv
    keys = []
    for row in table:
        for key in row:
            if key not in keys and key != "seeds":
                keys.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for row in table:
            writer.writerow([row.get(k, "") for k in keys])


# -- entry point -----------------------------------------------------------------

def _add_common(p) -> None:
    p.add_argument("--config", required=True, help="path to the JSON config")
    p.add_argument("--seed", type=int, default=None, help="run seed (u64)")
    p.add_argument("--out", required=True, help="run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tricot",
        description="curriculum-contrastive triplet recognition, desk scale")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("gen-data", cmd_gen_data), ("pretrain", cmd_pretrain),
                     ("distill", cmd_distill),
                     ("train-temporal", cmd_train_temporal),
                     ("evaluate", cmd_evaluate), ("ablate", cmd_ablate)):
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(fn=fn)
        if name == "evaluate":
            p.add_argument("--split", choices=("train", "val", "both"),
                           default="both")
            p.add_argument("--spatial-only", action="store_true",
                           help="force beta to 1 (per-frame head only)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print(json.dumps({"error": "ConfigError",
                          "message": "--seed must be non-negative"}),
              file=sys.stderr)
        return 1
    try:
        summary = args.fn(args)
    except Exception as exc:                       # CLI contract: JSON on stderr
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
