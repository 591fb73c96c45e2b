"""Config-driven ablation grids.

A grid file is YAML::

    base:                     # flat dotted overrides shared by every variant
      model.backbone: tiny
      data.train_dir: data/synthetic
    presets: [table4, table8] # built-in variant lists
    variants:                 # optional explicit variants
      - name: no_dgm
        overrides: {model.use_dgm: false}

Every variant is trained with the same budget and evaluated on
``data.test_dirs`` (the training set when none is given).
"""
import copy
import csv
import logging
from pathlib import Path
from typing import Dict, List

import yaml

from .backbones import NUM_LEVELS, parse_partition
from .config import RunConfig, apply_overrides, flatten, load_config
from .data import load_dataset
from .errors import ConfigError, ValidationError
from .evaluation import evaluate_model
from .training import load_checkpoint, train

log = logging.getLogger(__name__)

TABLE4_PARTITIONS = ("2+5", "3+5", "4+5", "5", "1+2+5", "1+3+5", "1+4+5",
                     "1+2+4+5", "1+2+3+5", "1+3+4+5", "1+5")


def _partition_variant(text):
    o = {"model.partition": text}
    if "+" not in text:
        o["model.allow_single_stage_a"] = True
    return o


PRESETS: Dict[str, List[tuple]] = {
    "table3": [(f"fem={v}", {"model.fem_variant": v})
               for v in ("dilated_pyramid", "fem_no_dilation", "fem")],
    "table4": [(f"partition={p}", _partition_variant(p)) for p in TABLE4_PARTITIONS],
    "table5": [(f"fusion={v}", {"model.fusion": v}) for v in ("bottom_up", "top_down", "middle")],
    "table6": [(f"use_dgm={v}", {"model.use_dgm": v}) for v in (False, True)],
    "table7": [(f"dem={v}", {"model.dem_mode": v}) for v in ("f_only", "b_only", "f_minus_b")],
    "table8": [(f"repeats={v}", {"model.dae_repeats": v}) for v in (1, 3, 2)],
}


def _canonical_key(cfg: RunConfig) -> str:
    flat = cfg.to_flat()
    levels = NUM_LEVELS.get(cfg.model.backbone)
    if levels:
        try:
            part = parse_partition(cfg.model.partition, levels, cfg.model.allow_single_stage_a)
            flat["model.partition"] = (tuple(sorted(part.stage_a_levels)), tuple(sorted(part.stage_b_levels)))
        except ValidationError:
            pass
    return repr(sorted(flat.items(), key=lambda kv: kv[0]))


def expand_grid(grid: dict) -> List[dict]:
    """Variant list with duplicates (same resolved config) merged."""
    base = flatten(grid.get("base") or {})
    entries = []
    for name in grid.get("presets") or []:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        entries += [(name, vname, o) for vname, o in PRESETS[name]]
    for v in grid.get("variants") or []:
        entries.append((v.get("table", "custom"), v["name"], flatten(v.get("overrides") or {})))

    variants, seen = [], {}
    for table, name, overrides in entries:
        try:
            cfg = apply_overrides(RunConfig(), {**base, **overrides})
            key = _canonical_key(cfg)
        except ConfigError as exc:
            variants.append({"tables": [table], "variant": name, "overrides": overrides,
                             "error": str(exc)})
            continue
        if key in seen:
            v = seen[key]
            log.warning("duplicate variant %s (same config as %s); merged", name, v["variant"])
            if table not in v["tables"]:
                v["tables"].append(table)
            continue
        v = {"tables": [table], "variant": name, "overrides": overrides}
        seen[key] = v
        variants.append(v)
    return variants


def run_ablation(grid: dict, out_dir, make_figure=True) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = flatten(grid.get("base") or {})
    variants = expand_grid(grid)
    base_cfg = load_config(None, grid.get("profile", "desk"), base)
    train_samples = load_dataset(base_cfg.data.train_dir, base_cfg.data.image_size)
    test_sets = {Path(d).name: load_dataset(d, base_cfg.data.image_size)
                 for d in base_cfg.data.test_dirs} or {"train": train_samples}
    metric_cols = [f"{name}_{m}" for name in test_sets for m in ("e_phi", "mae")]

    rows = []
    for i, v in enumerate(variants):
        row = {"table": ";".join(v["tables"]), "variant": v["variant"], "status": "FAILED", "reason": ""}
        row.update({c: "" for c in metric_cols + ["final_loss"]})
        try:
            if "error" in v:
                raise ConfigError(v["error"])
            cfg = load_config(None, grid.get("profile", "desk"), {**base, **v["overrides"]})
            cfg.output_dir = str(out_dir / f"variant_{i:02d}")
            result = train(copy.deepcopy(cfg), train_samples, make_figure=False)
            model, _ = load_checkpoint(result.checkpoint)
            for name, samples in test_sets.items():
                agg = evaluate_model(model, samples).aggregate
                row[f"{name}_e_phi"] = f"{agg['e_phi']:.4f}"
                row[f"{name}_mae"] = f"{agg['mae']:.4f}"
            row["final_loss"] = f"{result.epoch_losses[-1]:.4f}"
            row["status"] = "ok"
        except Exception as exc:  # a failed variant must not stop the grid
            log.error("variant %s failed: %s", v["variant"], exc)
            row["reason"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)

    path = out_dir / "ablation.csv"
    columns = ["table", "variant", "status"] + metric_cols + ["final_loss", "reason"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    if make_figure:
        from .plotting import plot_ablation
        plot_ablation(rows, out_dir / "ablation.png", metric_cols)
    return path


def load_grid(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"grid file not found: {p}")
    grid = yaml.safe_load(p.read_text()) or {}
    if not isinstance(grid, dict):
        raise ConfigError("grid file must contain a mapping")
    return grid
