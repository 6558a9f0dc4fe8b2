"""Experiment commands: synth, pretrain, finetune, eval, ablate."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
from pathlib import Path

from ..errors import ConfigError
from ..metrics import EvalReport
from . import plots
from .config import ExperimentConfig
from .data import resolve, verify_dataset, write_dataset
from .train import (
    FitResult,
    evaluate,
    load_task_model,
    read_log,
    run_finetune,
    run_pretrain,
    task_items,
)

DATA_ROLES = ("train_data", "eval_data", "pretrain_data")
HEADLINE = {"forecast": "overall_vim", "group": "mAP", "action": "mAP"}


def cmd_synth(cfg: ExperimentConfig, verify: bool = False) -> dict[str, Path]:
    """Write every synthetic data source to ``<out_dir>/<role>``; with ``verify`` re-check the manifests."""
    out = Path(cfg.out_dir)
    written = {}
    for role in DATA_ROLES:
        source = getattr(cfg, role)
        if source is None or source.synth is None:
            continue
        seed = cfg.seed if source.seed is None else source.seed
        path = out / role
        if verify:
            problems = verify_dataset(path)
            if problems:
                raise ConfigError(f"{path} failed verification: " + "; ".join(problems))
        else:
            write_dataset(path, source.synth, source.num_scenes, seed)
        written[role] = path
    if not written:
        raise ConfigError("no synthetic data source ('synth') in the config")
    return written


def _loss_plot(result: FitResult, out_dir: Path, kind: str) -> None:
    log = out_dir / f"{kind}_log.csv"
    plots.loss_curve(read_log(log), out_dir / "plots" / f"{kind}_loss.png")


def cmd_pretrain(cfg: ExperimentConfig, config_text: str, resume=None) -> FitResult:
    result = run_pretrain(cfg, config_text, resume=resume)
    _loss_plot(result, Path(cfg.out_dir), "pretrain")
    return result


def cmd_finetune(
    cfg: ExperimentConfig, config_text: str, checkpoint=None, from_scratch: bool = False, resume=None
) -> FitResult:
    result = run_finetune(cfg, config_text, checkpoint=checkpoint, from_scratch=from_scratch, resume=resume)
    _loss_plot(result, Path(cfg.out_dir), "finetune")
    return result


def cmd_eval(cfg: ExperimentConfig, checkpoint=None) -> EvalReport:
    """Evaluate a fine-tuned checkpoint; writes ``eval/report.{json,csv}`` and figures under ``out_dir``."""
    out = Path(cfg.out_dir)
    path = Path(checkpoint or cfg.checkpoint or out / "finetune.pt")
    model = load_task_model(cfg, path)
    source = cfg.eval_data or cfg.train_data
    if source is None:
        raise ConfigError("evaluation needs 'eval_data' or 'train_data'")
    scenes = resolve(source, cfg.seed + 1 if cfg.eval_data is not None else cfg.seed)
    items = task_items(cfg, scenes)
    report, extras = evaluate(model, cfg, items, details=True)

    eval_dir = out / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    (eval_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (eval_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    fig_dir = eval_dir / "plots"
    log = path.parent / "finetune_log.csv"
    if log.exists():
        plots.loss_curve(read_log(log), fig_dir / "loss.png")
    if report.vim:
        plots.vim_bars(report.vim, fig_dir / "vim.png")
    if extras.get("pr"):
        plots.pr_curves(extras["pr"], fig_dir / "pr.png")
    for i, partition in enumerate(extras.get("partitions", [])[:4]):
        plots.group_overlay(items[i], partition, fig_dir / f"groups_{i:02d}.png")
    return report


def run_pipeline(cfg: ExperimentConfig, from_scratch: bool = False) -> EvalReport:
    """Pretrain (unless ``from_scratch``), fine-tune and evaluate under ``cfg.out_dir``."""
    text = cfg.to_json()
    out = Path(cfg.out_dir)
    checkpoint = None
    if not from_scratch:
        checkpoint = cmd_pretrain(cfg, text).checkpoint
    cmd_finetune(cfg, text, checkpoint=checkpoint, from_scratch=from_scratch)
    return cmd_eval(cfg, out / "finetune.pt")


def _ablation_config(cfg: ExperimentConfig, axis: str, value, out_dir: Path) -> ExperimentConfig:
    if axis == "mask_ratio":
        changes = {"model": dataclasses.replace(cfg.model, mask_ratio=float(value))}
    elif axis == "dec_layers":
        changes = {"model": dataclasses.replace(cfg.model, dec_layers=int(value))}
    else:
        source = cfg.pretrain_data or cfg.train_data
        if source is None:
            raise ConfigError("data_fraction ablation needs 'pretrain_data' or 'train_data'")
        changes = {"pretrain_data": dataclasses.replace(source, fraction=float(value))}
    return cfg.replace(out_dir=str(out_dir), ablate=None, **changes)


def sweep_csv(axis: str, metric: str, rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([axis, metric])
    for row in rows:
        writer.writerow([row["value"], repr(float(row["metric"]))])
    return buf.getvalue()


def cmd_ablate(cfg: ExperimentConfig, axis: str | None = None, values=None) -> dict:
    """Full pipeline per value of one ablation axis; one table row per value."""
    if axis is None or values is None:
        if cfg.ablate is None:
            raise ConfigError("ablation needs an 'ablate' section with axis and values")
        axis = axis or cfg.ablate.axis
        values = cfg.ablate.values if values is None else values
    values = list(values)
    if not values:
        raise ValueError("ablation needs at least one value")
    task = cfg.finetune_task
    metric = HEADLINE[task]
    out = Path(cfg.out_dir)
    rows = []
    for value in values:
        run_cfg = _ablation_config(cfg, axis, value, out / "ablate" / f"{axis}_{value}")
        report = run_pipeline(run_cfg)
        rows.append({"value": value, "metric": report.metrics[metric], "report": report.to_dict()})
    doc = {"axis": axis, "task": task, "metric": metric, "rows": rows}
    (out / "sweep.json").write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    (out / "sweep.csv").write_text(sweep_csv(axis, metric, rows), encoding="utf-8")
    plots.sweep_plot(axis, values, metric, [r["metric"] for r in rows], out / "sweep.png")
    return doc
