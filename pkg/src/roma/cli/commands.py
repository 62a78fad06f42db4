"""What each subcommand does, callable without going through argv."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from roma.bench import BenchConfig, emit_report, fit_all, sweep
from roma.cli.config import RunConfig
from roma.data import generate_arrays, iter_samples, load_image_dir, write_dataset
from roma.errors import ConfigError
from roma.eval import (
    AresSelector, CaptureSample, RandomCropSelector, capture_rate, causality_audit, future_sensitivity,
)
from roma.eval.robustness import rotation_probe_accuracy
from roma.model.network import RoMANetwork
from roma.pretrain.checkpoint import load_checkpoint
from roma.pretrain.trainer import MetricsWriter, Pretrainer, sample_rng
from roma.vision.ares import apply_rotation_augment
from roma.vision.image import write_png
from roma.vision.lbp import DESCRIPTORS

log = logging.getLogger("roma")

RESULT_FIELDS = ("strategy", "seed", "metric", "value")


def prepare_run_dir(path, force: bool = False) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"run directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_resolved(cfg: RunConfig, out: Path) -> None:
    (out / "config.txt").write_text(cfg.to_text())


def load_training_images(cfg: RunConfig) -> np.ndarray:
    if cfg.data == "synthetic":
        images, _ = generate_arrays(cfg.synthetic_spec(), cfg.seed)
        return images
    images, _ = load_image_dir(cfg.data, cfg.model_config().image_side, cfg.synth_count)
    return images


def strategy_of(train_config: dict, model_config: dict) -> str:
    ares, lam = bool(train_config.get("ares")), float(model_config.get("lam", 0.0))
    if ares and lam > 0:
        return "roma"
    if not ares and lam == 0:
        return "baseline"
    return ("ares" if ares else "no-ares") + f"-lam{lam:g}"


# -- pretrain ------------------------------------------------------------------
def run_pretrain(cfg: RunConfig, force: bool = False, resume: Optional[str] = None) -> Path:
    ckpt = load_checkpoint(resume) if resume else None
    images = load_training_images(cfg)
    # a resumed run keeps the checkpoint's weights, moments and data order but
    # follows this run's schedule, so --steps can extend it
    trainer = Pretrainer(RoMANetwork(cfg.model_config(), seed=cfg.seed), cfg.train_config())
    if ckpt is not None:
        trainer.restore(ckpt)
        if trainer.step >= cfg.steps:
            raise ConfigError(f"checkpoint is already at step {trainer.step}; raise steps above it to resume")
    out = prepare_run_dir(cfg.out_dir, force)
    write_resolved(cfg, out)
    ck_dir = out / "checkpoints"
    ck_dir.mkdir(exist_ok=True)
    writer = MetricsWriter(out / "metrics.csv")

    def on_step(step, lr, parts, wall_ms):
        writer(step, lr, parts, wall_ms)
        if step % cfg.checkpoint_every == 0:
            trainer.save(ck_dir / f"step_{step:06d}.roma")
        if step % 100 == 0:
            log.info("step %d  loss %.5f  (token %.5f, cluster %.5f)", step, parts.total, parts.token_mse,
                     parts.cluster_mse)

    try:
        trainer.fit(images, callback=on_step)
    finally:
        writer.close()
    trainer.save(ck_dir / "final.roma")
    return out


# -- evaluate ------------------------------------------------------------------
def run_evaluate(cfg: RunConfig, checkpoint, force: bool = False) -> Path:
    ckpt = load_checkpoint(checkpoint)
    trainer = Pretrainer.from_checkpoint(ckpt)
    net = trainer.network
    strategy = strategy_of(ckpt.train_config, ckpt.model_config)
    spec = cfg.synthetic_spec().with_(image_side=net.config.image_side)
    out = prepare_run_dir(cfg.out_dir, force)
    write_resolved(cfg, out)
    rows = []
    oa = rotation_probe_accuracy(net, spec, cfg.seed, cfg.probe_train, cfg.probe_test, cfg.probe_epochs,
                                 cfg.probe_lr)
    rows.append((strategy, cfg.seed, "probe_oa_rotated", oa))
    log.info("rotated-split probe accuracy %.4f", oa)

    side = cfg.capture_side or cfg.resolved_ladder()[0]
    capture_spec = cfg.capture_spec().with_(image_side=net.config.image_side)
    samples = [CaptureSample(s.image, s.mask, s.label) for s in iter_samples(capture_spec, cfg.seed)]
    p = net.config.patch_size
    for selector in (AresSelector(p, cfg.threshold, DESCRIPTORS[cfg.descriptor]()), RandomCropSelector(p)):
        rate = capture_rate(selector, samples, side, cfg.capture_threshold, cfg.seed)
        rows.append((selector.name, cfg.seed, f"capture_rate_L{side}", rate))

    images = np.stack([s.image for s in samples[:8]])
    report = causality_audit(net, images, cfg.audit_trials, cfg.seed)
    rows.append((strategy, cfg.seed, "causality_violations", report.violations))
    rows.append((strategy, cfg.seed, "causality_max_diff", report.max_violation))
    rows.append((strategy, cfg.seed, "future_sensitivity", future_sensitivity(net, images[0], cfg.seed)))
    write_results(out / "results.csv", rows)
    return out


def write_results(path: Path, rows: Sequence[tuple]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for strategy, seed, metric, value in rows:
            w.writerow([strategy, seed, metric, repr(float(value))])


# -- ares-preview -----------------------------------------------------------------
def _outline(img: np.ndarray, box, color=(1.0, 0.0, 0.0)) -> np.ndarray:
    out = img.copy()
    t, l, s = box.top, box.left, box.side
    out[t, l:l + s] = color
    out[t + s - 1, l:l + s] = color
    out[t:t + s, l] = color
    out[t:t + s, l + s - 1] = color
    return out


def run_ares_preview(cfg: RunConfig, count: int = 8, force: bool = False) -> Path:
    images = load_training_images(replace(cfg, synth_count=max(count, 1)))[:count]
    out = prepare_run_dir(cfg.out_dir, force)
    write_resolved(cfg, out)
    p = cfg.model_config().patch_size
    with (out / "ares.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("image", "applied", "top", "left", "side", "theta_deg", "covered_patches"))
        for i, img in enumerate(images):
            aug, rec = apply_rotation_augment(img, sample_rng(cfg.seed, i), p, cfg.resolved_ladder(),
                                              cfg.threshold)
            left = _outline(img, rec.box) if rec.applied else img
            right = _outline(aug, rec.box) if rec.applied else aug
            write_png(out / f"preview_{i:03d}.png", np.concatenate([left, right], axis=1))
            if rec.applied:
                w.writerow((i, 1, rec.box.top, rec.box.left, rec.box.side, f"{math.degrees(rec.theta):.4f}",
                            " ".join(str(k) for k in sorted(rec.covered_patches))))
            else:
                w.writerow((i, 0, "", "", "", "", ""))
    return out


# -- bench -------------------------------------------------------------------------
def run_bench(kinds: Sequence[str], lengths: Sequence[int], reps: int, out_dir, force: bool = False,
              config: BenchConfig = BenchConfig()) -> Path:
    out = prepare_run_dir(out_dir, force)
    points = sweep(kinds, lengths, config, reps)
    emit_report(fit_all(points), points, out, config)
    return out


# -- synth-data --------------------------------------------------------------------
def run_synth_data(cfg: RunConfig, force: bool = False) -> Path:
    spec = cfg.synthetic_spec()
    out = prepare_run_dir(cfg.out_dir, force)
    write_dataset(spec, cfg.seed, out)
    write_resolved(cfg, out)
    return out


# -- scaling-grid ------------------------------------------------------------------
GRID_FIELDS = ("preset", "fraction", "n_images", "final_loss", "probe_oa")
DEFAULT_FRACTIONS = (0.125, 0.25, 0.5, 1.0)


def run_scaling_grid(cfg: RunConfig, presets: Sequence[str], fractions: Sequence[float] = DEFAULT_FRACTIONS,
                     force: bool = False) -> Path:
    for frac in fractions:
        if not 0.0 < frac <= 1.0:
            raise ConfigError(f"data fractions must lie in (0, 1], got {frac}")
    configs = {name: replace(cfg, preset=name).validate() for name in presets}
    images = load_training_images(cfg)
    out = prepare_run_dir(cfg.out_dir, force)
    write_resolved(cfg, out)
    rows = []
    for name, run_cfg in configs.items():
        model_cfg = run_cfg.model_config()
        if model_cfg.image_side != images.shape[1]:
            raise ConfigError(f"preset {name} expects {model_cfg.image_side}px images, data has {images.shape[1]}px")
        for frac in fractions:
            n = max(run_cfg.batch_size, int(round(frac * len(images))))
            trainer = Pretrainer(RoMANetwork(model_cfg, seed=cfg.seed), run_cfg.train_config())
            history = trainer.fit(images[:n])
            oa = rotation_probe_accuracy(trainer.network, run_cfg.synthetic_spec(), cfg.seed, cfg.probe_train,
                                         cfg.probe_test, cfg.probe_epochs, cfg.probe_lr)
            rows.append((name, frac, n, history[-1].total, oa))
            log.info("grid %s x %.3f: loss %.5f  probe %.4f", name, frac, history[-1].total, oa)
    with (out / "grid.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_FIELDS)
        for name, frac, n, loss, oa in rows:
            w.writerow([name, repr(frac), n, repr(loss), repr(oa)])
    (out / "grid.md").write_text(monotonicity_report(rows, list(presets), list(fractions)))
    return out


def monotonicity_report(rows, presets, fractions) -> str:
    """Markdown summary; non-monotone runs are listed, not treated as failures."""
    oa = {(r[0], r[1]): r[4] for r in rows}
    lines = ["# Scaling grid", "", "| preset | " + " | ".join(f"{f:g}" for f in fractions) + " |",
             "|---|" + "---|" * len(fractions)]
    for p in presets:
        lines.append(f"| {p} | " + " | ".join(f"{oa[(p, f)]:.4f}" for f in fractions) + " |")
    lines.append("")
    for p in presets:
        seq = [oa[(p, f)] for f in fractions]
        ok = all(b >= a for a, b in zip(seq, seq[1:]))
        lines.append(f"- {p}: accuracy {'non-decreasing' if ok else 'NOT monotone'} in data fraction")
    for f in fractions:
        seq = [oa[(p, f)] for p in presets]
        ok = all(b >= a for a, b in zip(seq, seq[1:]))
        lines.append(f"- fraction {f:g}: accuracy {'non-decreasing' if ok else 'NOT monotone'} in model size")
    lines += ["", "Training is stochastic; a non-monotone cell is a finding, not an error.", ""]
    return "\n".join(lines)
