"""Training loops, checkpoint/resume and evaluation for the experiment driver."""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from ..checkpoint import load_checkpoint, save_checkpoint
from ..errors import ConfigError, TrainingError
from ..heads import TaskModel, forecast, predict_actions, predict_groups, task_loss
from ..mae import (
    ModelConfig,
    PretrainModel,
    batch_reconstruction_loss,
    learning_rate,
    make_optimizer,
    pad_batch,
    prepare_scene,
    sample_plans,
    set_lr,
)
from ..metrics import EvalReport, SIZE_CLASSES, action_map, group_map, match_groups, vim
from ..scene import Scene
from .config import ExperimentConfig, config_from_dict
from .data import check_labels, forecast_windows, input_window, resolve

LOG_HEADER = ("step", "epoch", "split", "metric", "value")
THREADS_ENV = "SOCIALMAE_THREADS"


def worker_threads() -> int:
    """Thread cap from ``SOCIALMAE_THREADS`` (default 1, which keeps runs reproducible)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1")
    return n


def configure_threads() -> int:
    n = worker_threads()
    torch.set_num_threads(n)
    return n


# --------------------------------------------------------------------------- logs


def format_log(rows: Sequence[tuple]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_HEADER)
    for step, epoch, split, metric, value in rows:
        writer.writerow([step, epoch, split, metric, repr(float(value))])
    return buf.getvalue()


def read_log(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------- generic fit loop


@dataclass
class FitResult:
    model: torch.nn.Module
    losses: list[float]
    log_rows: list[tuple] = field(default_factory=list)
    checkpoint: Path | None = None


def _comparable(cfg: ExperimentConfig) -> dict:
    # fields that may legitimately change between an interrupted run and its resumption
    doc = cfg.to_dict()
    for key in ("out_dir", "checkpoint", "eval_every", "checkpoint_every"):
        doc.pop(key, None)
    return doc


def _rng_state() -> dict:
    return {"torch": torch.get_rng_state()}


def fit(
    model: torch.nn.Module,
    items: Sequence,
    loss_fn: Callable[[list, int, int], torch.Tensor],
    *,
    cfg: ExperimentConfig,
    config_text: str,
    kind: str,
    epochs: int,
    base_lr: float,
    out_dir: Path,
    resume: str | Path | None = None,
    eval_fn: Callable[[torch.nn.Module], dict[str, float]] | None = None,
) -> FitResult:
    """Mini-batch Adam over ``items`` with the step-decay schedule.

    The epoch permutation is drawn from ``(seed, epoch)`` and ``loss_fn`` receives
    ``(batch, epoch, batch_index)``, so each epoch depends only on the parameters
    and optimizer state at its start; resuming from a checkpoint therefore
    reproduces an uninterrupted run exactly.
    """
    if not items:
        raise ConfigError("training set is empty")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(config_text, encoding="utf-8")
    optimizer = make_optimizer(model, base_lr)
    mcfg: ModelConfig = cfg.model
    rows: list[tuple] = []
    start = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt["kind"] != kind:
            raise ConfigError(f"cannot resume a {kind} run from a {ckpt['kind']} checkpoint")
        saved = config_from_dict(ckpt["extra"]["config"])
        if _comparable(saved) != _comparable(cfg):
            raise ConfigError("resume checkpoint was written by a different experiment config")
        try:
            model.load_state_dict(ckpt["params"], strict=True)
        except RuntimeError as exc:
            raise ConfigError(f"checkpoint does not match the model architecture: {exc}") from None
        optimizer.load_state_dict(ckpt["optimizer"])
        torch.set_rng_state(ckpt["rng_state"]["torch"])
        start = ckpt["epoch"]
        rows = [tuple(r) for r in ckpt["extra"].get("log", [])]

    log_path = out_dir / f"{kind}_log.csv"
    losses = [r[4] for r in rows if r[2] == "train" and r[3] == "loss"]
    batches = range(0, len(items), cfg.batch_size)
    step = start * len(batches)
    last_path = None
    for epoch in range(start, epochs):
        set_lr(optimizer, learning_rate(epoch, epochs, base_lr, mcfg.lr_decay_factor, mcfg.lr_decay_at))
        perm = np.random.default_rng([cfg.seed, epoch]).permutation(len(items))
        model.train()
        total = 0.0
        for b, lo in enumerate(batches):
            batch = [items[i] for i in perm[lo : lo + cfg.batch_size]]
            optimizer.zero_grad(set_to_none=True)
            loss = loss_fn(batch, epoch, b)
            if not torch.isfinite(loss):
                raise TrainingError(f"{kind} loss is not finite at epoch {epoch}, batch {b}")
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(batch)
            step += 1
        mean = total / len(items)
        losses.append(mean)
        rows.append((step, epoch, "train", "loss", mean))
        if eval_fn is not None and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            model.eval()
            with torch.no_grad():
                for name, value in eval_fn(model).items():
                    rows.append((step, epoch, "eval", name, value))
        log_path.write_text(format_log(rows), encoding="utf-8")

        payload = dict(
            model_config=mcfg.to_dict(),
            state_dict=model.state_dict(),
            kind=kind,
            epoch=epoch + 1,
            optimizer_state=optimizer.state_dict(),
            rng_state=_rng_state(),
            config_text=config_text,
            extra={"log": rows, "task": cfg.task, "config": cfg.to_dict()},
        )
        if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out_dir / "checkpoints" / f"{kind}_epoch_{epoch + 1:04d}.pt", **payload)
        last_path = save_checkpoint(out_dir / f"{kind}.pt", **payload)

    if last_path is None:
        # resumed from a checkpoint of an already finished run
        log_path.write_text(format_log(rows), encoding="utf-8")
        last_path = out_dir / f"{kind}.pt"
        if not last_path.exists():
            save_checkpoint(
                last_path,
                model_config=mcfg.to_dict(),
                state_dict=model.state_dict(),
                kind=kind,
                epoch=epochs,
                optimizer_state=optimizer.state_dict(),
                rng_state=_rng_state(),
                config_text=config_text,
                extra={"log": rows, "task": cfg.task, "config": cfg.to_dict()},
            )
    model.eval()
    return FitResult(model=model, losses=losses, log_rows=rows, checkpoint=last_path)


# --------------------------------------------------------------------------- pretraining


def pretrain_scenes(cfg: ExperimentConfig) -> list[Scene]:
    source = cfg.pretrain_data or cfg.train_data
    if source is None:
        raise ConfigError("pretraining needs 'pretrain_data' or 'train_data'")
    scenes = [input_window(s, cfg.model.num_frames) for s in resolve(source, cfg.seed)]
    check_labels(scenes, "pretrain", cfg.model.coord_dim)
    return scenes


def run_pretrain(cfg: ExperimentConfig, config_text: str, resume=None, scenes: Sequence[Scene] | None = None) -> FitResult:
    configure_threads()
    mcfg = cfg.model
    scenes = pretrain_scenes(cfg) if scenes is None else list(scenes)
    model = PretrainModel(mcfg, seed=cfg.seed)

    def loss_fn(batch, epoch, b):
        prepared = [prepare_scene(s) for s in pad_batch(batch, mcfg.num_frames)]
        plans = sample_plans(prepared, mcfg.mask_ratio, cfg.seed, epoch, b)
        return batch_reconstruction_loss(model, prepared, plans, mcfg.loss_scope)

    return fit(
        model,
        scenes,
        loss_fn,
        cfg=cfg,
        config_text=config_text,
        kind="pretrain",
        epochs=mcfg.pretrain_epochs,
        base_lr=mcfg.pretrain_lr,
        out_dir=Path(cfg.out_dir),
        resume=resume,
    )


# --------------------------------------------------------------------------- fine-tuning


def task_items(cfg: ExperimentConfig, scenes: Sequence[Scene]) -> list:
    """Training/evaluation items: ``(history, future)`` pairs for forecasting, input windows otherwise."""
    task = cfg.finetune_task
    check_labels(scenes, task, cfg.model.coord_dim, cfg.num_pose, cfg.num_interactions)
    if task == "forecast":
        return [forecast_windows(s, cfg.history_frames, cfg.horizon) for s in scenes]
    return [input_window(s, cfg.history_frames) for s in scenes]


def build_task_model(cfg: ExperimentConfig) -> TaskModel:
    return TaskModel(
        cfg.model,
        cfg.finetune_task,
        seed=cfg.seed,
        horizon=cfg.horizon,
        num_pose=cfg.num_pose,
        num_interactions=cfg.num_interactions,
    )


def load_pretrained_encoder(model: TaskModel, path: str | Path) -> None:
    ckpt = load_checkpoint(path)
    saved = ModelConfig.from_dict(ckpt["model_config"])
    mine = model.cfg
    arch = ("enc_layers", "enc_heads", "enc_dim", "pos_dim", "coord_dim", "num_frames", "max_joints", "max_persons", "mlp_ratio")
    diffs = [k for k in arch if getattr(saved, k) != getattr(mine, k)]
    if diffs:
        raise ConfigError(f"checkpoint encoder differs from the configured model in {diffs}")
    if not any(k.startswith("encoder.") for k in ckpt["params"]):
        raise ConfigError(f"{path} holds no encoder parameters")
    try:
        model.load_encoder(ckpt["params"])
    except RuntimeError as exc:
        raise ConfigError(f"checkpoint encoder does not match the model architecture: {exc}") from None


def task_loss_fn(model: TaskModel, cfg: ExperimentConfig) -> Callable:
    weights = cfg.weights.as_dict()

    def loss_fn(batch, epoch, b):
        if cfg.finetune_task == "forecast":
            hist, fut = zip(*batch)
            return task_loss(model, list(hist), weights, list(fut))
        return task_loss(model, batch, weights)

    return loss_fn


def run_finetune(
    cfg: ExperimentConfig,
    config_text: str,
    *,
    checkpoint: str | Path | None = None,
    from_scratch: bool = False,
    resume=None,
    train_scenes: Sequence[Scene] | None = None,
) -> FitResult:
    """Fine-tune the encoder with a task head, from a pre-trained encoder or from scratch."""
    configure_threads()
    model = build_task_model(cfg)
    source = checkpoint or cfg.checkpoint or cfg.init_checkpoint
    if resume is None:
        if from_scratch:
            source = None
        elif source is None:
            raise ConfigError("fine-tuning needs a pre-trained checkpoint or --from-scratch")
        if source is not None:
            load_pretrained_encoder(model, source)
    if train_scenes is None:
        if cfg.train_data is None:
            raise ConfigError("fine-tuning needs 'train_data'")
        train_scenes = resolve(cfg.train_data, cfg.seed)
    items = task_items(cfg, train_scenes)
    eval_fn = None
    if cfg.eval_data is not None and cfg.eval_every:
        eval_items = task_items(cfg, resolve(cfg.eval_data, cfg.seed + 1))

        def eval_fn(m):
            return evaluate(m, cfg, eval_items).metrics

    return fit(
        model,
        items,
        task_loss_fn(model, cfg),
        cfg=cfg,
        config_text=config_text,
        kind="finetune",
        epochs=cfg.model.finetune_epochs,
        base_lr=cfg.model.finetune_lr,
        out_dir=Path(cfg.out_dir),
        resume=resume,
        eval_fn=eval_fn,
    )


def load_task_model(cfg: ExperimentConfig, path: str | Path) -> TaskModel:
    ckpt = load_checkpoint(path)
    if ckpt["kind"] != "finetune":
        raise ConfigError(f"{path} is a {ckpt['kind']} checkpoint; evaluation needs a fine-tuned one")
    task = ckpt["extra"].get("task")
    if task != cfg.finetune_task:
        raise ConfigError(f"checkpoint was fine-tuned for {task!r}, config asks for {cfg.finetune_task!r}")
    saved = config_from_dict(ckpt["extra"]["config"])
    model = build_task_model(saved)
    try:
        model.load_state_dict(ckpt["params"], strict=True)
    except RuntimeError as exc:
        raise ConfigError(f"checkpoint does not match the model architecture: {exc}") from None
    model.eval()
    return model


# --------------------------------------------------------------------------- evaluation


def _chunks(items: Sequence, size: int):
    for lo in range(0, len(items), size):
        yield list(items[lo : lo + size])


def _pmap(fn, items: Sequence) -> list:
    """Order-preserving map over at most ``SOCIALMAE_THREADS`` worker threads."""
    n = worker_threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _forecast_report(model: TaskModel, cfg: ExperimentConfig, items) -> EvalReport:
    outs = []
    for chunk in _chunks(items, cfg.batch_size):
        outs += forecast(model, [h for h, _ in chunk])
    scale = cfg.metric_scale

    def per_scene(pair):
        out, (_, fut) = pair
        pred = out.final.detach().cpu().numpy().astype(np.float64)
        gt, vis = fut.trajectories, fut.visibility
        sq = ((pred - gt) ** 2).sum(axis=-1)[vis]
        return vim(pred, gt, vis) * scale, sq.mean(), pred

    results = _pmap(per_scene, list(zip(outs, items)))
    curves = np.stack([r[0] for r in results])
    with np.errstate(invalid="ignore"):
        per_t = np.nanmean(curves, axis=0)
    report = EvalReport(task="forecast")
    report.vim = [float(v) for v in per_t]
    report.metrics["overall_vim"] = float(np.nanmean(per_t))
    report.metrics["final_layer_mse"] = float(np.mean([r[1] for r in results]))
    frames = cfg.mpjpe_frames or [cfg.horizon]
    for f in frames:
        if not 1 <= f <= cfg.horizon:
            raise ConfigError(f"mpjpe frame {f} outside the horizon 1..{cfg.horizon}")
        preds = [r[2][:, :, :f] for r in results]
        dists = [
            np.linalg.norm(p - fut.trajectories[:, :, :f], axis=-1)[fut.visibility[:, :, :f]]
            for p, (_, fut) in zip(preds, items)
        ]
        report.mpjpe[str(f)] = float(np.concatenate(dists).mean() * scale)
    report.counts["scenes"] = len(items)
    return report, {}


def _group_report(model: TaskModel, cfg: ExperimentConfig, scenes) -> EvalReport:
    preds = []
    for chunk in _chunks(scenes, cfg.batch_size):
        preds += predict_groups(model, chunk)

    def per_scene(p):
        p.extract(use_count=cfg.group_count_sweep)
        return p.scored_groups(), float(p.count)

    results = _pmap(per_scene, preds)
    scored = [r[0] for r in results]
    truth = [s.real_groups() for s in scenes]
    aps, mean_ap = group_map(scored, truth, cfg.iou_threshold)
    report = EvalReport(task="group")
    report.group_ap = aps
    report.metrics["mAP"] = mean_ap
    report.metrics["count_mae"] = float(np.mean([abs(r[1] - len(t)) for r, t in zip(results, truth)]))
    for cls in SIZE_CLASSES:
        _, _, num_gt = match_groups(scored, truth, cls, cfg.iou_threshold)
        report.counts[f"gt_G{cls}"] = num_gt
    report.counts["scenes"] = len(scenes)
    curves = {}
    for cls in SIZE_CLASSES:
        scores, hits, num_gt = match_groups(scored, truth, cls, cfg.iou_threshold)
        if num_gt:
            curves[f"G{cls}"] = (scores, hits, num_gt)
    return report, {"partitions": [[g for g, _ in sg] for sg in scored], "pr": curves}


def _action_report(model: TaskModel, cfg: ExperimentConfig, scenes) -> EvalReport:
    pose, inter, pose_gt, inter_gt = [], [], [], []
    for chunk in _chunks(scenes, cfg.batch_size):
        for p, s in zip(predict_actions(model, chunk), chunk):
            keep = ~s.padded
            pose.append(p.pose_probs.detach().cpu().numpy())
            inter.append(p.interaction_probs.detach().cpu().numpy())
            pose_gt.append(s.pose_actions[keep])
            inter_gt.append(s.interaction_actions[keep])
    per_class, mean_ap = action_map(
        np.concatenate(pose), np.concatenate(pose_gt), np.concatenate(inter), np.concatenate(inter_gt)
    )
    report = EvalReport(task="action")
    report.action_ap = per_class
    report.metrics["mAP"] = mean_ap
    report.counts["persons"] = int(sum(len(g) for g in pose_gt))
    report.counts["scenes"] = len(scenes)
    pose_all, pose_lab = np.concatenate(pose), np.concatenate(pose_gt)
    inter_all, inter_lab = np.concatenate(inter), np.concatenate(inter_gt)
    curves = {}
    for name in per_class:
        kind, c = name.rsplit("_", 1)
        c = int(c)
        if kind == "pose":
            curves[name] = (pose_all[:, c], pose_lab == c)
        else:
            curves[name] = (inter_all[:, c], inter_lab[:, c])
    return report, {"pr": curves}


def evaluate(model: TaskModel, cfg: ExperimentConfig, items: Sequence, details: bool = False):
    """Task metrics over prepared items (see :func:`task_items`).

    With ``details`` the return value is ``(report, extras)`` where ``extras``
    holds plotting inputs (precision-recall points, predicted partitions).
    """
    builders = {"forecast": _forecast_report, "group": _group_report, "action": _action_report}
    model.eval()
    with torch.no_grad():
        report, extras = builders[cfg.finetune_task](model, cfg, items)
    return (report, extras) if details else report
