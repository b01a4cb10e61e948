"""Command-line driver for every pipeline stage and the editing service."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .. import pipeline as pl
from ..config import RunConfig
from ..imageio import load_png, save_png


def _load_run(config: str | None, seed: int | None, run_dir: str | None) -> pl.Run:
    cfg = RunConfig.load(config) if config else RunConfig()
    if seed is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": seed})
    root = Path(run_dir) if run_dir else Path("runs") / f"{cfg.category}-{cfg.config_hash()}"
    return pl.open_run(cfg, root)


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


pass_run = click.make_pass_decorator(pl.Run)


@click.group()
@click.option("--config", type=click.Path(exists=True, dir_okay=False),
              help="JSON config file (defaults to the desk chair profile).")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--run-dir", type=click.Path(file_okay=False), default=None,
              help="Artifact directory (default: runs/<category>-<hash>).")
@click.pass_context
def main(ctx, config, seed, run_dir):
    """Image-based shape part manipulation pipeline."""
    try:
        ctx.obj = _load_run(config, seed, run_dir)
    except (ValueError, OSError) as exc:
        _fail(str(exc))


@main.command("gen-data")
@pass_run
def gen_data(run: pl.Run):
    """Build the procedural dataset and render all views."""
    manifest = pl.ensure_dataset(run).manifest
    click.echo(f"dataset ready: {len(manifest['records'])} shapes, "
               f"{12 * len(manifest['records'])} images at {run.dataset_dir}")


@main.group()
def train():
    """Train one pipeline stage (prerequisites must exist)."""


def _train_stage(run: pl.Run, stage: str, fn) -> None:
    try:
        fn(run)
    except pl.MissingStageError as exc:
        _fail(str(exc))
    click.echo(f"{stage}: ready")


@train.command("partvae")
@pass_run
def train_partvae(run):
    _train_stage(run, "partvae", pl.ensure_partvae)


@train.command("generator")
@pass_run
def train_generator(run):
    _train_stage(run, "generator", pl.ensure_generator)


@train.command("latents")
@pass_run
def train_latents(run):
    """Prepare dataset image latents by batched inversion."""
    _train_stage(run, "latents", pl.ensure_latents)


@train.command("forward")
@pass_run
def train_forward(run):
    _train_stage(run, "forward", pl.ensure_forward)


@train.command("backward")
@pass_run
def train_backward(run):
    _train_stage(run, "backward", pl.ensure_backward)


@train.command("finetune")
@pass_run
def train_finetune(run):
    _train_stage(run, "joint finetune", pl.ensure_joint)


@train.command("viewpred")
@pass_run
def train_viewpred(run):
    _train_stage(run, "view predictor", pl.ensure_view)


@train.command("trajectory")
@pass_run
def train_trajectory(run):
    _train_stage(run, "trajectory finetuners", pl.ensure_trajectories)


@main.command("invert")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--steps", type=int, default=None)
@pass_run
def invert_cmd(run, image_path, out_path, steps):
    """Invert an image to a latent code (saved as .npy)."""
    try:
        ms = pl.ModelSet.load(run)
    except pl.MissingStageError as exc:
        _fail(str(exc))
    w = ms.invert_image(load_png(image_path), steps=steps)
    np.save(out_path, w)
    click.echo(f"latent saved to {out_path}")


def _load_models(run) -> pl.ModelSet:
    try:
        return pl.ModelSet.load(run)
    except pl.MissingStageError as exc:
        _fail(str(exc))


def _latent_for(ms: pl.ModelSet, path: str) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path)
    return ms.invert_image(load_png(path))


def _emit_edit(result, out: str) -> None:
    save_png(out, result.image)
    meta = {
        "operation": result.operation,
        "diagnostics": result.diagnostics,
        "latent_out": result.w_out.tolist(),
        "image": out,
    }
    sidecar = Path(out).with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2))
    click.echo(f"edit written: {out} (+ {sidecar.name})")


@main.group()
def edit():
    """Run one editing operation on images or saved latents."""


@edit.command("replace")
@click.option("--src", required=True, type=click.Path(exists=True),
              help="Source image (.png) or latent (.npy).")
@click.option("--tgt", required=True, type=click.Path(exists=True))
@click.option("--part", required=True)
@click.option("--out", default="edit_replace.png", type=click.Path())
@pass_run
def edit_replace(run, src, tgt, part, out):
    ms = _load_models(run)
    if part not in ms.cfg.parts:
        _fail(f"invalid part {part!r}; choose from {ms.cfg.parts}")
    result = ms.edit_replace(_latent_for(ms, src), _latent_for(ms, tgt), part)
    _emit_edit(result, out)


@edit.command("resize")
@click.option("--src", required=True, type=click.Path(exists=True))
@click.option("--part", required=True)
@click.option("--weight", type=float, default=1.0)
@click.option("--mode", type=click.Choice(["finetuner", "raw"]), default="finetuner")
@click.option("--out", default="edit_resize.png", type=click.Path())
@pass_run
def edit_resize(run, src, part, weight, mode, out):
    ms = _load_models(run)
    if part not in ms.trajectories:
        _fail(f"no trajectory finetuner for part {part!r}; "
              f"resizable: {sorted(ms.trajectories)}")
    result = ms.edit_resize(_latent_for(ms, src), part, weight, mode=mode)
    _emit_edit(result, out)


@edit.command("view")
@click.option("--src", required=True, type=click.Path(exists=True))
@click.option("--view-index", "view_index", required=True, type=int)
@click.option("--out", default="edit_view.png", type=click.Path())
@pass_run
def edit_view(run, src, view_index, out):
    if not 0 <= view_index < 12:
        _fail("view index must be in [0, 12)")
    ms = _load_models(run)
    result = ms.edit_view(_latent_for(ms, src), view_index)
    _emit_edit(result, out)


@main.group("eval")
def eval_group():
    """Evaluation and ablation runs (write reports/)."""


@eval_group.command("recon")
@click.option("--max-records", type=int, default=None)
@pass_run
def eval_recon(run, max_records):
    try:
        mf, _ = pl.ensure_joint(run)
        rep = pl.eval_reconstruction(run, mf, max_records=max_records)
    except pl.MissingStageError as exc:
        _fail(str(exc))
    run.write_report("recon", {"e_s_mean": rep["e_s_mean"], "e_i_mean": rep["e_i_mean"]})
    click.echo(f"held-out E_s={rep['e_s_mean']:.4f}  E_i={rep['e_i_mean']:.4f}")


@eval_group.command("ablate-size")
@click.option("--max-records", type=int, default=None)
@pass_run
def eval_ablate_size(run, max_records):
    try:
        rep = pl.ablate_size(run, max_records=max_records)
    except pl.MissingStageError as exc:
        _fail(str(exc))
    for r in rep["runs"]:
        click.echo(f"seed {r['seed']}: E_s {r['e_s_without']:.4f} -> {r['e_s_with']:.4f}  "
                   f"E_i {r['e_i_without']:.4f} -> {r['e_i_with']:.4f}")
    click.echo(f"size finetuning improves both metrics on all seeds: {rep['all_improved']}")


@eval_group.command("ablate-finetune")
@pass_run
def eval_ablate_finetune(run):
    try:
        rep = pl.ablate_finetune(run)
    except pl.MissingStageError as exc:
        _fail(str(exc))
    click.echo(f"E_i {rep['e_i_pre']:.5f} -> {rep['e_i_post']:.5f} "
               f"({100 * rep['e_i_reduction']:.1f}% reduction); "
               f"drift {rep['drift_lambda2']:.4f} (reg) vs {rep['drift_zero']:.4f} (none)")


@eval_group.command("ablate-trajectory")
@click.option("--max-records", type=int, default=None)
@pass_run
def eval_ablate_trajectory(run, max_records):
    try:
        rep = pl.ablate_trajectory(run, max_records=max_records)
    except pl.MissingStageError as exc:
        _fail(str(exc))
    for part, r in rep["parts"].items():
        click.echo(f"{part}: finetuner {r['finetuner_mean']:.4f} vs raw "
                   f"{r['raw_mean']:.4f} -> {'finetuner' if r['finetuner_wins'] else 'raw'}")


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=None,
              help="Overrides PARTBRIDGE_PORT; default 8008.")
@pass_run
def serve(run, host, port):
    """Serve the trained pipeline over HTTP for the companion UI."""
    import uvicorn

    from .app import create_app

    try:
        pl.ModelSet.load(run)
    except pl.MissingStageError as exc:
        _fail(str(exc))
    if port is None:
        port = int(os.environ.get("PARTBRIDGE_PORT", "8008"))
    uvicorn.run(create_app(run), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
