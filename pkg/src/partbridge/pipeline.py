"""Stage orchestration: artifacts on disk, gating, evaluation runs.

Each stage writes a checkpoint (embedding the config hash) plus a JSON
report; re-running a stage with matching artifacts reloads instead of
retraining. The stage order is enforced by checkpoint-presence checks.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import generator as gen
from . import manipulate as mn
from . import mapping as mp
from . import numcore as nc
from . import partvae as pv
from .config import RunConfig
from .generator import GeneratorModel
from .seeds import derive_seed, rng_for
from .shapegen import (
    Dataset,
    ShapeInstance,
    build_dataset,
    build_solve_operator,
    chamfer,
    compose_triangles,
    render,
    sample_surface,
)
from .shapegen.feature import PartFeature, reconstruct_vertices

STAGES = ["dataset", "partvae", "generator", "latents", "forward", "backward",
          "joint", "view", "trajectory"]


class MissingStageError(RuntimeError):
    def __init__(self, missing: str, needed_for: str):
        self.missing = missing
        super().__init__(f"stage '{needed_for}' requires '{missing}' artifacts; "
                         f"run `train {missing}` (or gen-data) first")


@dataclass
class Run:
    cfg: RunConfig
    root: Path
    _cache: dict = field(default_factory=dict)

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def dataset_dir(self) -> Path:
        return self.root / "dataset"

    def ckpt(self, name: str) -> Path:
        return self.root / "checkpoints" / f"{name}.ckpt"

    def report_path(self, name: str) -> Path:
        return self.root / "reports" / f"{name}.json"

    def write_report(self, name: str, payload: dict) -> None:
        path = self.report_path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2) + "\n")

    def read_report(self, name: str) -> dict:
        return json.loads(self.report_path(name).read_text())

    @property
    def latents_path(self) -> Path:
        return self.root / "latents" / "dataset_w.npz"

    @property
    def codes_path(self) -> Path:
        return self.root / "latents" / "part_codes.npz"

    def trajectory_path(self, part: str) -> Path:
        return self.root / "trajectories" / f"{part}.npz"

    def meta(self) -> dict:
        return {"config": self.cfg.config_hash()}

    def check_meta(self, meta: dict, path) -> None:
        if meta.get("config") != self.cfg.config_hash():
            raise nc.CheckpointError(
                f"{path}: checkpoint was trained under a different config "
                f"(hash {meta.get('config')} != {self.cfg.config_hash()})")

    def stage_seed(self, stage: str, *labels) -> int:
        return derive_seed(self.cfg.seed, stage, *labels)


def open_run(cfg: RunConfig, root) -> Run:
    run = Run(cfg, Path(root))
    cfg_path = run.root / "config.json"
    if cfg_path.exists():
        existing = RunConfig.load(cfg_path)
        if existing.config_hash() != cfg.config_hash():
            raise ValueError(f"{run.root} already holds a different config")
    else:
        cfg.save(cfg_path)
    return run


def require(run: Run, stage: str, needed_for: str) -> None:
    probes = {
        "dataset": run.dataset_dir / "manifest.json",
        "partvae": run.ckpt(f"partvae_{run.cfg.parts[0]}"),
        "generator": run.ckpt("generator"),
        "latents": run.latents_path,
        "forward": run.ckpt("forward"),
        "backward": run.ckpt("backward"),
        "joint": run.ckpt("forward_joint"),
        "view": run.ckpt("view"),
        "trajectory": run.ckpt(
            f"fr_{next(iter(run.cfg.resize_ops))}") if run.cfg.resize_ops else None,
    }
    probe = probes[stage]
    if probe is None or not probe.exists():
        raise MissingStageError(stage, needed_for)


# ---------------------------------------------------------------------------
# stages


def ensure_dataset(run: Run) -> Dataset:
    if "dataset" not in run._cache:
        if not (run.dataset_dir / "manifest.json").exists():
            build_dataset(run.dataset_dir, run.cfg.category, run.cfg.template_n,
                          run.cfg.dataset_n, run.cfg.dataset_m, run.cfg.image_size,
                          seed=run.stage_seed("dataset"))
        run._cache["dataset"] = Dataset.load(run.dataset_dir)
    return run._cache["dataset"]


def ensure_partvae(run: Run) -> list[pv.PartVaeModel]:
    if "partvae" in run._cache:
        return run._cache["partvae"]
    require(run, "dataset", "partvae")
    ds = ensure_dataset(run)
    cfg = run.cfg
    models = []
    codes: dict[str, np.ndarray] = {}
    for part in cfg.parts:
        path = run.ckpt(f"partvae_{part}")
        if path.exists():
            arrays, meta = nc.load_checkpoint(path)
            run.check_meta(meta, path)
            model = pv.load_partvae(path)
        else:
            train_sources = sorted({
                r["sources"][cfg.parts.index(part)]
                for r in ds.split_records("train")})
            feats = np.stack([ds.part_feature_flat(part, s) for s in train_sources])
            model, report = pv.train_partvae(
                feats, cfg.z, part, epochs=cfg.partvae_epochs, beta=cfg.beta,
                seed=run.stage_seed("partvae", part))
            pv.save_partvae(path, model, extra_meta=run.meta())
            run.write_report(f"partvae_{part}", report)
        models.append(model)
        for src in range(cfg.dataset_n):
            codes[f"{part}_{src}"] = pv.encode(model, ds.part_feature_flat(part, src))
    if not run.codes_path.exists():
        run.codes_path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(run.codes_path, **{k: v.astype(np.float32) for k, v in codes.items()})
    run._cache["partvae"] = models
    run._cache["codes"] = codes
    return models


def part_codes(run: Run) -> dict[str, np.ndarray]:
    if "codes" not in run._cache:
        ensure_partvae(run)
    return run._cache["codes"]


def ensure_generator(run: Run) -> GeneratorModel:
    if "generator" in run._cache:
        return run._cache["generator"]
    require(run, "dataset", "generator")
    ds = ensure_dataset(run)
    cfg = run.cfg
    path = run.ckpt("generator")
    if path.exists():
        _, meta = nc.load_checkpoint(path)
        run.check_meta(meta, path)
        model = gen.load_generator(path)
    else:
        train = ds.split_records("train")
        images = np.stack([ds.image(r, k) for r in train for k in range(12)])
        model, report = gen.train_generator(
            images, d=cfg.d, epochs=cfg.generator_epochs,
            seed=run.stage_seed("generator"), lambda_w=cfg.lambda_w,
            lr=cfg.generator_lr, batch_size=cfg.batch_size)
        gen.save_generator(path, model, extra_meta=run.meta())
        run.write_report("generator", report)
    run._cache["generator"] = model
    return model


def ensure_latents(run: Run) -> dict[str, np.ndarray]:
    if "latents" in run._cache:
        return run._cache["latents"]
    require(run, "generator", "latents")
    ds = ensure_dataset(run)
    model = ensure_generator(run)
    cfg = run.cfg
    if not run.latents_path.exists():
        keys = [ds.image_key(r, k) for r in ds.records for k in range(12)]
        images = np.stack([ds.image(r, k) for r in ds.records for k in range(12)])
        w, report = gen.invert(model, images, steps=cfg.dataset_invert_steps,
                               lambda_w=cfg.lambda_w, seed=run.stage_seed("latents"),
                               lr=cfg.invert_lr)
        run.latents_path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(run.latents_path, **{k: w[i] for i, k in enumerate(keys)})
        run.write_report("latents", {
            "steps": cfg.dataset_invert_steps,
            "proxy_mean": float(np.mean(report["proxy_best"])),
            "proxy_p95": float(np.quantile(report["proxy_best"], 0.95)),
        })
    run._cache["latents"] = dict(np.load(run.latents_path))
    return run._cache["latents"]


def training_pairs(run: Run, split: str = "train") -> dict:
    """(w, P, T, S, view) arrays for every image of the given split."""
    ds = ensure_dataset(run)
    codes = part_codes(run)
    latents = ensure_latents(run)
    cfg = run.cfg
    layout = mp.AttrLayout(cfg.n_c, cfg.z)
    ws, Ps, Ts, views, keys = [], [], [], [], []
    for record in ds.split_records(split):
        P = np.stack([codes[f"{part}_{src}"]
                      for part, src in zip(cfg.parts, record["sources"])])
        T = np.asarray(record["topo"], dtype=np.float32)
        for k in range(12):
            ws.append(latents[ds.image_key(record, k)])
            Ps.append(P)
            Ts.append(T)
            views.append(k)
            keys.append(ds.image_key(record, k))
    P_arr = np.stack(Ps).astype(np.float32)
    T_arr = np.stack(Ts).astype(np.float32)
    S_arr = np.concatenate([P_arr.reshape(len(P_arr), -1), T_arr], axis=1)
    return {
        "w": np.stack(ws).astype(np.float32),
        "P": P_arr, "T": T_arr, "S": S_arr,
        "view": np.asarray(views, dtype=np.int64),
        "onehot": np.eye(12, dtype=np.float32)[np.asarray(views)],
        "keys": keys,
        "layout": layout,
    }


def _solve_op(run: Run):
    if "solve_op" not in run._cache:
        ds = ensure_dataset(run)
        run._cache["solve_op"] = build_solve_operator(ds.template, 0)
    return run._cache["solve_op"]


def train_forward_variant(run: Run, seed: int, with_stage2: bool,
                          mf: mp.ForwardMap | None = None,
                          stage1_epochs: int | None = None,
                          stage2_epochs: int | None = None) -> mp.ForwardMap:
    """Stage-1 (optionally + stage-2) forward-map training, isolated by seed."""
    cfg = run.cfg
    vaes = ensure_partvae(run)
    pairs = training_pairs(run, "train")
    layout = pairs["layout"]
    if mf is None:
        mf = mp.build_forward(cfg.d, layout, cfg.mf_hidden, seed=seed)
        mp_opt, rep1 = mp.train_forward_stage1(
            mf, pairs["w"], pairs["P"], pairs["T"], vaes,
            epochs=stage1_epochs if stage1_epochs is not None else cfg.forward1_epochs,
            seed=seed, lr=cfg.forward1_lr, batch_size=cfg.batch_size)
    if with_stage2:
        mp.train_forward_stage2(
            mf, pairs["w"], pairs["P"], pairs["T"], vaes, _solve_op(run),
            epochs=stage2_epochs if stage2_epochs is not None else cfg.forward2_epochs,
            seed=seed, lr=cfg.forward2_lr, batch_size=cfg.batch_size)
    return mf


def ensure_forward(run: Run) -> mp.ForwardMap:
    if "forward" in run._cache:
        return run._cache["forward"]
    for stage in ("partvae", "latents"):
        require(run, stage, "forward")
    cfg = run.cfg
    path = run.ckpt("forward")
    path_s1 = run.ckpt("forward_s1")
    if path.exists():
        _, meta = nc.load_checkpoint(path)
        run.check_meta(meta, path)
        mf = mp.load_forward(path)
    else:
        vaes = ensure_partvae(run)
        pairs = training_pairs(run, "train")
        seed = run.stage_seed("forward")
        mf = mp.build_forward(cfg.d, pairs["layout"], cfg.mf_hidden, seed=seed)
        _, rep1 = mp.train_forward_stage1(
            mf, pairs["w"], pairs["P"], pairs["T"], vaes,
            epochs=cfg.forward1_epochs, seed=seed, lr=cfg.forward1_lr,
            batch_size=cfg.batch_size)
        mp.save_forward(path_s1, mf, meta=run.meta())
        run.write_report("forward_s1", rep1)
        _, rep2 = mp.train_forward_stage2(
            mf, pairs["w"], pairs["P"], pairs["T"], vaes, _solve_op(run),
            epochs=cfg.forward2_epochs, seed=seed, lr=cfg.forward2_lr,
            batch_size=cfg.batch_size)
        mp.save_forward(path, mf, meta=run.meta())
        run.write_report("forward_s2", rep2)
    run._cache["forward"] = mf
    return mf


def ensure_backward(run: Run) -> mp.BackwardMap:
    if "backward" in run._cache:
        return run._cache["backward"]
    for stage in ("generator", "latents", "partvae"):
        require(run, stage, "backward")
    cfg = run.cfg
    path = run.ckpt("backward")
    if path.exists():
        _, meta = nc.load_checkpoint(path)
        run.check_meta(meta, path)
        mb = mp.load_backward(path)
    else:
        model = ensure_generator(run)
        pairs = training_pairs(run, "train")
        seed = run.stage_seed("backward")
        mb = mp.build_backward(cfg.d, pairs["layout"], cfg.mb_hidden, seed=seed)
        _, rep = mp.train_backward(
            mb, pairs["S"], pairs["onehot"], pairs["w"], model,
            lambda1=cfg.lambda_w, epochs=cfg.backward_epochs, seed=seed,
            lr=cfg.backward_lr, batch_size=cfg.batch_size)
        mp.save_backward(path, mb, meta=run.meta())
        run.write_report("backward", rep)
    run._cache["backward"] = mb
    return mb


def pipeline_image_error(run: Run, mf: mp.ForwardMap, mb: mp.BackwardMap,
                         split: str = "test") -> float:
    """Mean proxy(G(M_B(M_F(w), v)), I) over a split (all 12 views)."""
    ds = ensure_dataset(run)
    latents = ensure_latents(run)
    model = ensure_generator(run)
    ws, views, imgs = [], [], []
    for record in ds.split_records(split):
        for k in range(12):
            ws.append(latents[ds.image_key(record, k)])
            views.append(k)
            imgs.append(ds.image(record, k))
    w = np.stack(ws)
    S = np.atleast_2d(mp.forward_map(mf, w))
    onehots = np.eye(12, dtype=np.float32)[np.asarray(views)]
    w2 = mb.net(nc.Tensor(np.concatenate([S, onehots], axis=1).astype(np.float32))).data
    out = gen.synthesize(model, w2)
    return float(gen.proxy_per_item(out, np.stack(imgs)).mean())


def ensure_joint(run: Run) -> tuple[mp.ForwardMap, mp.BackwardMap]:
    if "joint" in run._cache:
        return run._cache["joint"]
    for stage in ("forward", "backward"):
        require(run, stage, "joint")
    cfg = run.cfg
    path_f = run.ckpt("forward_joint")
    path_b = run.ckpt("backward_joint")
    if path_f.exists() and path_b.exists():
        _, meta = nc.load_checkpoint(path_f)
        run.check_meta(meta, path_f)
        mf, mb = mp.load_forward(path_f), mp.load_backward(path_b)
    else:
        mf = mp.clone_forward(ensure_forward(run))
        mb = mp.clone_backward(ensure_backward(run))
        model = ensure_generator(run)
        pairs = training_pairs(run, "train")
        e_i_pre = pipeline_image_error(run, mf, mb)
        seed = run.stage_seed("joint")
        _, rep = mp.joint_finetune(
            mf, mb, pairs["w"], pairs["onehot"], pairs["T"], model,
            lambda1=cfg.lambda_w, lambda2=cfg.lambda2, epochs=cfg.joint_epochs,
            seed=seed, lr=cfg.joint_lr, batch_size=cfg.batch_size)
        e_i_post = pipeline_image_error(run, mf, mb)
        rep.update({"e_i_pre": e_i_pre, "e_i_post": e_i_post,
                    "e_i_reduction": 1.0 - e_i_post / e_i_pre})
        mp.save_forward(path_f, mf, meta=run.meta())
        mp.save_backward(path_b, mb, meta=run.meta())
        run.write_report("joint", rep)
    run._cache["joint"] = (mf, mb)
    return run._cache["joint"]


def ensure_view(run: Run) -> mp.ViewPredictor:
    if "view" in run._cache:
        return run._cache["view"]
    require(run, "latents", "view")
    cfg = run.cfg
    path = run.ckpt("view")
    if path.exists():
        _, meta = nc.load_checkpoint(path)
        run.check_meta(meta, path)
        mv = mp.load_view_predictor(path)
    else:
        pairs = training_pairs(run, "train")
        held = training_pairs(run, "test")
        seed = run.stage_seed("view")
        mv = mp.build_view_predictor(cfg.d, cfg.mv_hidden, seed=seed)
        _, rep = mp.train_view_predictor(
            mv, pairs["w"], pairs["view"], epochs=cfg.view_epochs, seed=seed,
            lr=cfg.view_lr, batch_size=cfg.batch_size)
        pred = mp.predict_view_index(mv, held["w"])
        rep["holdout_accuracy"] = float((pred == held["view"]).mean())
        rep["train_pairs"] = int(len(pairs["w"]))
        mp.save_view_predictor(path, mv, meta=run.meta())
        run.write_report("view", rep)
    run._cache["view"] = mv
    return mv


def ensure_trajectories(run: Run) -> dict[str, dict]:
    if "trajectory" in run._cache:
        return run._cache["trajectory"]
    for stage in ("partvae", "generator", "latents"):
        require(run, stage, "trajectory")
    cfg = run.cfg
    ds = ensure_dataset(run)
    vaes = ensure_partvae(run)
    model = ensure_generator(run)
    latents = ensure_latents(run)
    out = {}
    for part, factors in cfg.resize_ops.items():
        path = run.ckpt(f"fr_{part}")
        vae = vaes[cfg.parts.index(part)]
        if path.exists():
            _, meta = nc.load_checkpoint(path)
            run.check_meta(meta, path)
            fr, r_p, r_w_mean = mn.load_trajectory_finetuner(path)
            pairs = dict(np.load(run.trajectory_path(part), allow_pickle=True))
        else:
            seed = run.stage_seed("trajectory", part)
            traj = mn.compute_resize_trajectory(ds, vae, part, factors)
            pairs = mn.build_trajectory_pairs(
                ds, vae, model, latents, part, factors, traj.vector,
                weights=cfg.trajectory_weights, invert_steps=cfg.traj_invert_steps,
                lambda_w=cfg.lambda_w, seed=seed)
            fr = mn.build_trajectory_finetuner(cfg.d, cfg.z, part, seed=seed,
                                               hidden=cfg.fr_hidden)
            rep = mn.train_trajectory_finetuner(fr, pairs, epochs=cfg.trajectory_epochs,
                                                seed=seed, lr=cfg.trajectory_lr,
                                                batch_size=cfg.batch_size)
            rep["skipped"] = pairs["skipped"]
            rep["pair_count"] = int(len(pairs["w"]))
            r_p, r_w_mean = traj.vector, pairs["r_w_mean"]
            mn.save_trajectory_finetuner(path, fr, r_p, r_w_mean, meta=run.meta())
            run.trajectory_path(part).parent.mkdir(parents=True, exist_ok=True)
            np.savez(run.trajectory_path(part),
                     **{k: v for k, v in pairs.items()
                        if isinstance(v, np.ndarray)})
            run.write_report(f"trajectory_{part}", rep)
        out[part] = {"fr": fr, "r_p": r_p, "r_w_mean": r_w_mean,
                     "factors": np.asarray(factors, dtype=np.float64)}
    run._cache["trajectory"] = out
    return out


def ensure_all(run: Run) -> None:
    ensure_dataset(run)
    ensure_partvae(run)
    ensure_generator(run)
    ensure_latents(run)
    ensure_forward(run)
    ensure_backward(run)
    ensure_joint(run)
    ensure_view(run)
    ensure_trajectories(run)


# ---------------------------------------------------------------------------
# model set for edits and the service


@dataclass
class ModelSet:
    run: Run
    ds: Dataset
    vaes: list
    generator: GeneratorModel
    mf: mp.ForwardMap
    mb: mp.BackwardMap
    mv: mp.ViewPredictor
    trajectories: dict
    latents: dict

    @property
    def cfg(self) -> RunConfig:
        return self.run.cfg

    @property
    def layout(self) -> mp.AttrLayout:
        return mp.AttrLayout(self.cfg.n_c, self.cfg.z)

    @staticmethod
    def load(run: Run, joint: bool = True) -> "ModelSet":
        for stage in STAGES:
            if stage == "joint" and not joint:
                continue
            require(run, stage, "model set")
        mf, mb = ensure_joint(run) if joint else (ensure_forward(run), ensure_backward(run))
        return ModelSet(run=run, ds=ensure_dataset(run), vaes=ensure_partvae(run),
                        generator=ensure_generator(run), mf=mf, mb=mb,
                        mv=ensure_view(run), trajectories=ensure_trajectories(run),
                        latents=ensure_latents(run))

    def part_index(self, part: str) -> int:
        if part not in self.cfg.parts:
            raise ValueError(f"unknown part {part!r}; category has {self.cfg.parts}")
        return self.cfg.parts.index(part)

    def invert_image(self, image: np.ndarray, steps: int | None = None) -> np.ndarray:
        w, _ = gen.invert(self.generator, image,
                          steps=steps if steps is not None else self.cfg.invert_steps,
                          lambda_w=self.cfg.lambda_w, seed=self.cfg.seed,
                          lr=self.cfg.invert_lr)
        return w

    def edit_replace(self, w_src, w_tgt, part: str) -> mn.EditResult:
        return mn.replace_part(self.mf, self.mb, self.mv, self.generator,
                               w_src, w_tgt, self.part_index(part))

    def edit_resize(self, w, part: str, weight: float, mode: str = "finetuner") -> mn.EditResult:
        if part not in self.trajectories:
            raise ValueError(f"no trajectory finetuner for part {part!r}")
        t = self.trajectories[part]
        return mn.resize_image(self.generator, t["fr"], t["r_p"], t["r_w_mean"],
                               w, weight, mode=mode)

    def edit_view(self, w, view_index: int) -> mn.EditResult:
        return mn.set_view(self.mf, self.mb, self.generator, w, mp.onehot(view_index))


# ---------------------------------------------------------------------------
# reconstruction + evaluation


def shape_from_attr(run: Run, S: np.ndarray) -> ShapeInstance:
    """Decode predicted attributes to a composed shape instance."""
    cfg = run.cfg
    ds = ensure_dataset(run)
    vaes = ensure_partvae(run)
    layout = mp.AttrLayout(cfg.n_c, cfg.z)
    P, T = mp.unpack_attr(layout, np.asarray(S, dtype=np.float64))
    meshes = []
    topo = T.copy()
    for i in range(cfg.n_c):
        feat_flat = pv.decode(vaes[i], P[i].astype(np.float32)).astype(np.float64)
        feat = PartFeature.from_flat(feat_flat, ds.template.n_vertices)
        meshes.append(reconstruct_vertices(feat, ds.template, 0))
        base = 7 * i
        topo[base] = 1.0 if topo[base] > 0.5 else 0.0
        topo[base + 4:base + 7] = np.maximum(topo[base + 4:base + 7], 1e-3)
    return ShapeInstance(cfg.category, meshes, topo)


def eval_reconstruction(run: Run, mf: mp.ForwardMap, split: str = "test",
                        view: int = 0, n_points: int = 4000,
                        max_records: int | None = None) -> dict:
    """Shape error E_s (Chamfer) and image error E_i (render proxy)."""
    ds = ensure_dataset(run)
    latents = ensure_latents(run)
    cfg = run.cfg
    records = ds.split_records(split)
    if max_records:
        records = records[:max_records]
    e_s, e_i = [], []
    for record in records:
        w = latents[ds.image_key(record, view)]
        S = mp.forward_map(mf, w)
        recon = shape_from_attr(run, S)
        rv, rt = compose_triangles(recon)
        gv, gt = compose_triangles(ds.shape_instance(record))
        seed = derive_seed(cfg.seed, "eval-recon", record["id"])
        pts_r = sample_surface(rv, rt, n_points, seed, "recon")
        pts_g = sample_surface(gv, gt, n_points, seed, "gt")
        e_s.append(chamfer(pts_r, pts_g))
        img_r = render(rv, rt, view, cfg.image_size)
        e_i.append(gen.perceptual_proxy(img_r, ds.image(record, view)))
    return {"e_s": e_s, "e_i": e_i,
            "e_s_mean": float(np.mean(e_s)), "e_i_mean": float(np.mean(e_i))}


def ablate_size(run: Run, n_seeds: int = 3, max_records: int | None = None) -> dict:
    """Train M_F with/without the vertex-loss stage under multiple seeds."""
    for stage in ("partvae", "latents"):
        require(run, stage, "ablate-size")
    results = []
    for i in range(n_seeds):
        seed = run.stage_seed("forward") if i == 0 else run.stage_seed("ablate-size", i)
        if i == 0:
            ensure_forward(run)  # reuses the main stage-1/stage-2 artifacts
            mf_s1 = mp.load_forward(run.ckpt("forward_s1"))
            without = eval_reconstruction(run, mf_s1, max_records=max_records)
            mf_s2 = mp.load_forward(run.ckpt("forward"))
        else:
            mf_s1 = train_forward_variant(run, seed, with_stage2=False)
            without = eval_reconstruction(run, mf_s1, max_records=max_records)
            mf_s2 = train_forward_variant(run, seed, with_stage2=True, mf=mf_s1)
        with_ft = eval_reconstruction(run, mf_s2, max_records=max_records)
        results.append({
            "seed": seed,
            "e_s_without": without["e_s_mean"], "e_s_with": with_ft["e_s_mean"],
            "e_i_without": without["e_i_mean"], "e_i_with": with_ft["e_i_mean"],
            "e_s_improved": with_ft["e_s_mean"] < without["e_s_mean"],
            "e_i_improved": with_ft["e_i_mean"] < without["e_i_mean"],
        })
    report = {"runs": results,
              "all_improved": all(r["e_s_improved"] and r["e_i_improved"]
                                  for r in results)}
    run.write_report("ablate_size", report)
    return report


def ablate_finetune(run: Run) -> dict:
    """Joint finetune vs a lambda2=0 variant: error drop and latent drift."""
    for stage in ("forward", "backward"):
        require(run, stage, "ablate-finetune")
    cfg = run.cfg
    ensure_joint(run)
    joint_rep = run.read_report("joint")
    pairs = training_pairs(run, "test")
    s_freeze = mp.forward_map(ensure_forward(run), pairs["w"])

    mf_j, _ = ensure_joint(run)
    drift_reg = mp.mean_forward_drift(mf_j, s_freeze, pairs["w"])

    mf0 = mp.clone_forward(ensure_forward(run))
    mb0 = mp.clone_backward(ensure_backward(run))
    model = ensure_generator(run)
    tr = training_pairs(run, "train")
    mp.joint_finetune(mf0, mb0, tr["w"], tr["onehot"], tr["T"], model,
                      lambda1=cfg.lambda_w, lambda2=0.0, epochs=cfg.joint_epochs,
                      seed=run.stage_seed("joint"), lr=cfg.joint_lr,
                      batch_size=cfg.batch_size)
    drift_zero = mp.mean_forward_drift(mf0, s_freeze, pairs["w"])
    report = {
        "e_i_pre": joint_rep["e_i_pre"],
        "e_i_post": joint_rep["e_i_post"],
        "e_i_reduction": joint_rep["e_i_reduction"],
        "drift_lambda2": drift_reg,
        "drift_zero": drift_zero,
        "regularizer_limits_drift": drift_zero > drift_reg,
    }
    run.write_report("ablate_finetune", report)
    return report


def ablate_trajectory(run: Run, max_records: int | None = None) -> dict:
    """Finetuner route vs raw mean-trajectory route against geometric renders."""
    ms_parts = ensure_trajectories(run)
    ds = ensure_dataset(run)
    vaes = ensure_partvae(run)
    model = ensure_generator(run)
    latents = ensure_latents(run)
    cfg = run.cfg
    records = ds.split_records("test")
    if max_records:
        records = records[:max_records]
    out = {}
    for part, t in ms_parts.items():
        vae = vaes[cfg.parts.index(part)]
        err_fr, err_raw = [], []
        for record in records:
            yaw = derive_seed(cfg.seed, "ablate-traj", part, record["id"]) % 12
            w = latents[ds.image_key(record, yaw)]
            for weight in cfg.trajectory_weights:
                gt = mn.geometric_resized_render(ds, record, part, t["factors"],
                                                 weight, yaw, cfg.image_size)
                img_fr = mn.resize_image(model, t["fr"], t["r_p"], t["r_w_mean"],
                                         w, weight, mode="finetuner").image
                img_raw = mn.resize_image(model, t["fr"], t["r_p"], t["r_w_mean"],
                                          w, weight, mode="raw").image
                err_fr.append(gen.perceptual_proxy(img_fr, gt))
                err_raw.append(gen.perceptual_proxy(img_raw, gt))
        out[part] = {
            "finetuner_mean": float(np.mean(err_fr)),
            "raw_mean": float(np.mean(err_raw)),
            "finetuner_wins": bool(np.mean(err_fr) < np.mean(err_raw)),
        }
    report = {"parts": out,
              "all_finetuner_wins": all(v["finetuner_wins"] for v in out.values())}
    run.write_report("ablate_trajectory", report)
    return report


def eval_replacement(run: Run, n_pairs: int = 50, sample_label: str = "train-eval",
                     joint: bool = True) -> dict:
    """Edited images vs the ground-truth recombined shapes' renders."""
    ms = ModelSet.load(run, joint=joint)
    ds = ms.ds
    cfg = run.cfg
    records = ds.split_records("test")
    by_sources = {tuple(r["sources"]): r for r in ds.records}
    rng = rng_for(cfg.seed, "replace-eval", sample_label)
    errors = []
    used = []
    for trial in range(n_pairs):
        src = records[int(rng.integers(len(records)))]
        tgt = records[int(rng.integers(len(records)))]
        part_idx = trial % cfg.n_c
        yaw = int(rng.integers(12))
        w_src = ms.latents[ds.image_key(src, yaw)]
        w_tgt = ms.latents[ds.image_key(tgt, int(rng.integers(12)))]
        result = ms.edit_replace(w_src, w_tgt, cfg.parts[part_idx])
        gt_sources = list(src["sources"])
        gt_sources[part_idx] = tgt["sources"][part_idx]
        gt_record = by_sources[tuple(gt_sources)]
        gt_img = ds.image(gt_record, yaw)
        errors.append(gen.perceptual_proxy(result.image, gt_img))
        used.append({"src": src["id"], "tgt": tgt["id"], "part": cfg.parts[part_idx],
                     "yaw": yaw, "gt": gt_record["id"]})
    errors = np.asarray(errors)
    report = {
        "errors": errors.tolist(),
        "mean": float(errors.mean()),
        "tau_rep": float(2.0 * errors.mean()),
        "n_pairs": n_pairs,
        "pairs": used,
    }
    if sample_label == "train-eval":
        run.write_report("replacement", report)
    return report


def eval_view_cycle(run: Run, n_shapes: int = 10, joint: bool = True) -> dict:
    """set_view outputs re-inverted and re-classified across all 12 stops."""
    ms = ModelSet.load(run, joint=joint)
    ds = ms.ds
    cfg = run.cfg
    records = ds.split_records("test")[:n_shapes]
    images, expected, gt_err = [], [], []
    for record in records:
        w = ms.latents[ds.image_key(record, 0)]
        for k in range(12):
            result = ms.edit_view(w, k)
            images.append(result.image)
            expected.append(k)
            gt_err.append(gen.perceptual_proxy(result.image, ds.image(record, k)))
    w_inv, _ = gen.invert(ms.generator, np.stack(images), steps=cfg.invert_steps,
                          lambda_w=cfg.lambda_w, seed=cfg.seed, lr=cfg.invert_lr)
    pred = mp.predict_view_index(ms.mv, w_inv)
    expected = np.asarray(expected)
    report = {
        "cycle_accuracy": float((pred == expected).mean()),
        "gt_proxy_mean": float(np.mean(gt_err)),
        "gt_proxy": list(map(float, gt_err)),
        "n_shapes": len(records),
    }
    run.write_report("view_cycle", report)
    return report


# ---------------------------------------------------------------------------
# determinism support


def checkpoint_hashes(run: Run) -> dict[str, str]:
    """sha256 of every artifact that a rerun must reproduce."""
    out = {}
    for sub in ("checkpoints", "latents", "trajectories"):
        base = run.root / sub
        if not base.exists():
            continue
        for path in sorted(base.rglob("*")):
            if path.is_file():
                out[str(path.relative_to(run.root))] = hashlib.sha256(
                    path.read_bytes()).hexdigest()
    return out
