"""The three edits: part replacement, trajectory resizing, view change.

Every edit follows the same dataflow: invert (done by the caller), forward
map to attributes, edit in attribute or latent space, backward map, then
synthesize. Intermediate stages are kept on the result object so each hop
of the pipeline can be inspected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import generator as gen
from . import mapping as mp
from . import numcore as nc
from . import partvae as pv
from .seeds import derive_seed
from .shapegen import (
    Dataset,
    ShapeInstance,
    compose_triangles,
    extract_feature,
    reconstruct_vertices,
    render,
    resize_part,
)
from .shapegen.compose import TOPO_FIELDS
from .shapegen.feature import PartFeature


@dataclass
class EditResult:
    """Output image plus every intermediate stage of the edit."""

    operation: str
    image: np.ndarray
    w_out: np.ndarray
    w_in: np.ndarray | None = None
    attr_in: np.ndarray | None = None
    attr_edit: np.ndarray | None = None
    view: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class Trajectory:
    """Edit direction in attribute space (one part) or latent space."""

    space: str                  # "P" or "W"
    vector: np.ndarray
    part: str | None = None

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32)
        if self.space not in ("P", "W"):
            raise ValueError(f"unknown trajectory space {self.space!r}")


@dataclass
class TrajectoryFinetuner:
    net: nc.MLP
    d: int
    z: int
    part: str

    def __call__(self, w: np.ndarray, r_p: np.ndarray) -> np.ndarray:
        w2 = np.atleast_2d(np.asarray(w, dtype=np.float32))
        r2 = np.atleast_2d(np.asarray(r_p, dtype=np.float32))
        if r2.shape[0] == 1 and w2.shape[0] > 1:
            r2 = np.repeat(r2, w2.shape[0], axis=0)
        if w2.shape[1] != self.d or r2.shape[1] != self.z:
            raise nc.ShapeError("trajectory_finetuner", w2.shape, r2.shape)
        out = self.net(nc.Tensor(np.concatenate([w2, r2], axis=1))).data
        return out[0] if np.asarray(w).ndim == 1 else out


# ---------------------------------------------------------------------------
# part replacement


def replace_attr(layout: mp.AttrLayout, s_src: np.ndarray, s_tgt: np.ndarray,
                 k: int) -> np.ndarray:
    """Swap part k's geometry code and topology block from the target."""
    if not 0 <= k < layout.n_c:
        raise ValueError(f"part index {k} out of range")
    out = np.asarray(s_src, dtype=np.float32).copy()
    s_tgt = np.asarray(s_tgt, dtype=np.float32)
    out[layout.p_slice(k)] = s_tgt[layout.p_slice(k)]
    out[layout.t_block(k)] = s_tgt[layout.t_block(k)]
    return out


def replace_part(mf: mp.ForwardMap, mb: mp.BackwardMap, mv: mp.ViewPredictor,
                 generator: gen.GeneratorModel, w_src: np.ndarray,
                 w_tgt: np.ndarray, k: int) -> EditResult:
    s_src = mp.forward_map(mf, w_src)
    s_tgt = mp.forward_map(mf, w_tgt)
    s_edit = replace_attr(mf.layout, s_src, s_tgt, k)
    v = mp.predict_view(mv, w_src)
    w_out = mp.backward_map(mb, s_edit, v)
    image = gen.synthesize(generator, w_out)
    return EditResult(operation="replace", image=image, w_out=w_out, w_in=w_src,
                      attr_in=s_src, attr_edit=s_edit, view=v,
                      diagnostics={"part": k, "s_tgt": s_tgt.tolist()})


# ---------------------------------------------------------------------------
# resize trajectories


def apply_resize_to_topo(topo: np.ndarray, k: int, factors: np.ndarray) -> np.ndarray:
    out = np.asarray(topo, dtype=np.float64).copy()
    base = TOPO_FIELDS * k
    out[base + 4:base + 7] = out[base + 4:base + 7] * factors
    return out


def resize_factors_pow(factors, weight: float) -> np.ndarray:
    """Fractional/negative weights scale multiplicatively: factors**weight."""
    return np.asarray(factors, dtype=np.float64) ** weight


def compute_resize_trajectory(ds: Dataset, vae: pv.PartVaeModel, part: str,
                              factors) -> Trajectory:
    """Mean latent step produced by the geometric resize over training shapes."""
    factors = np.asarray(factors, dtype=np.float64)
    records = ds.split_records("train")
    if not records:
        raise ValueError("empty training split")
    slot_idx = ds.slots.index(part)
    tpl = ds.template

    deltas: dict[int, np.ndarray] = {}
    for src in sorted({r["sources"][slot_idx] for r in records}):
        mesh = ds.part_mesh(part, src)
        p_base = pv.encode(vae, extract_feature(mesh, tpl).flat())
        scaled = mesh.copy()
        c0, _ = scaled.bbox()
        scaled.vertices = c0 + (scaled.vertices - c0) * factors
        p_resized = pv.encode(vae, extract_feature(scaled, tpl).flat())
        deltas[src] = p_resized - p_base

    total = np.zeros(vae.z, dtype=np.float64)
    for r in records:
        total += deltas[r["sources"][slot_idx]]
    return Trajectory(space="P", vector=(total / len(records)).astype(np.float32),
                      part=part)


def resized_shape_views(ds: Dataset, record: dict, vae: pv.PartVaeModel, part: str,
                        factors, weight: float,
                        r_p: np.ndarray | None = None) -> tuple[ShapeInstance, np.ndarray]:
    """Decoded-latent realization of a weighted resize of one dataset shape.

    Walk the attribute-space route: encode the part, step along the
    trajectory, decode to a feature, invert to a mesh, then compose with
    the correspondingly resized topology.
    """
    slot_idx = ds.slots.index(part)
    tpl = ds.template
    src = record["sources"][slot_idx]
    mesh = ds.part_mesh(part, src)
    p_base = pv.encode(vae, ds.part_feature_flat(part, src))
    step = r_p if r_p is not None else compute_resize_trajectory(ds, vae, part, factors).vector
    p_new = p_base + weight * step
    feat = PartFeature.from_flat(pv.decode(vae, p_new).astype(np.float64), tpl.n_vertices)
    new_mesh = reconstruct_vertices(feat, tpl, 0, mesh.vertices[0])

    shape = ds.shape_instance(record)
    shape.part_meshes[slot_idx] = new_mesh
    shape.topo = apply_resize_to_topo(shape.topo, slot_idx,
                                      resize_factors_pow(factors, weight))
    return shape, p_new


def geometric_resized_render(ds: Dataset, record: dict, part: str, factors,
                             weight: float, yaw: int, image_size: int) -> np.ndarray:
    """Ground-truth render: the geometric resize applied to the real shape."""
    slot_idx = ds.slots.index(part)
    shape = resize_part(ds.shape_instance(record), slot_idx,
                        resize_factors_pow(factors, weight))
    verts, tris = compose_triangles(shape)
    return render(verts, tris, yaw, image_size)


def build_trajectory_pairs(ds: Dataset, vae: pv.PartVaeModel,
                           generator: gen.GeneratorModel, latents: dict[str, np.ndarray],
                           part: str, factors, r_p: np.ndarray,
                           weights=(-0.5, 0.5, 1.0), invert_steps: int = 40,
                           lambda_w: float = 0.01, seed: int = 0,
                           divergence_proxy: float | None = None) -> dict:
    """(w_I, weight * r^P, r_i^W) triples for finetuner training.

    Each training shape contributes one deterministic view per weight; the
    resized image latent comes from inversion of the decoded-route render.
    """
    records = ds.split_records("train")
    image_size = ds.manifest["image_size"]
    rows_w, rows_rp, keys, views, images, targets = [], [], [], [], [], []
    for record in records:
        yaw = derive_seed(seed, "traj-view", part, record["id"]) % 12
        for weight in weights:
            shape, _ = resized_shape_views(ds, record, vae, part, factors, weight, r_p=r_p)
            verts, tris = compose_triangles(shape)
            images.append(render(verts, tris, yaw, image_size))
            rows_w.append(latents[ds.image_key(record, yaw)])
            rows_rp.append(weight * r_p)
            keys.append(record["id"])
            views.append(yaw)
            targets.append(weight)

    images = np.stack(images)
    w_hat, inv_report = gen.invert(generator, images, steps=invert_steps,
                                   lambda_w=lambda_w, seed=seed)
    proxy_best = np.asarray(inv_report["proxy_best"])
    if divergence_proxy is None:
        # divergence = extreme outlier relative to the batch, or plain junk
        divergence_proxy = max(10.0 * float(np.median(proxy_best)), 0.3)
    ok = np.isfinite(proxy_best) & (proxy_best <= divergence_proxy)
    skipped = [f"{keys[i]}@w{targets[i]}" for i in np.nonzero(~ok)[0]]

    w_in = np.stack(rows_w)[ok]
    r_w = (w_hat - np.stack(rows_w))[ok]
    # per-unit-weight mean latent step, for the raw comparison route
    unit = r_w / np.asarray(targets, dtype=np.float32)[ok, None]
    return {
        "part": part,
        "w": w_in.astype(np.float32),
        "r_p": np.stack(rows_rp)[ok].astype(np.float32),
        "r_w": r_w.astype(np.float32),
        "weights": np.asarray(targets, dtype=np.float32)[ok],
        "views": np.asarray(views, dtype=np.int32)[ok],
        "record_ids": [k for k, keep in zip(keys, ok) if keep],
        "r_w_mean": unit.mean(axis=0).astype(np.float32),
        "skipped": skipped,
        "invert_proxy_mean": float(proxy_best.mean()),
    }


def build_trajectory_finetuner(d: int, z: int, part: str, seed: int,
                               hidden: int = 128) -> TrajectoryFinetuner:
    from .seeds import rng_for
    rng = rng_for(seed, "fr-init", part)
    net = nc.MLP([d + z, hidden, hidden, hidden, d], rng, name="fr")
    return TrajectoryFinetuner(net=net, d=d, z=z, part=part)


def train_trajectory_finetuner(fr: TrajectoryFinetuner, pairs: dict, epochs: int,
                               seed: int, lr: float = 1e-3, batch_size: int = 64,
                               holdout_frac: float = 0.2) -> dict:
    """Supervised regression of latent-space steps from (w, weighted r^P)."""
    w = pairs["w"]
    x = np.concatenate([w, pairs["r_p"]], axis=1)
    y = pairs["r_w"]
    if len(x) == 0:
        raise ValueError("no trajectory pairs to train on")
    from .seeds import rng_for
    perm = rng_for(seed, "fr-split", fr.part).permutation(len(x))
    n_hold = max(1, int(round(holdout_frac * len(x)))) if len(x) > 4 else 0
    hold, train = perm[:n_hold], perm[n_hold:]

    opt = nc.Adam(fr.net.parameters(), lr=lr)
    losses = []
    for epoch in range(epochs):
        rng = rng_for(seed, "fr-epoch", fr.part, epoch)
        order = rng.permutation(len(train))
        epoch_loss = 0.0
        for start in range(0, len(train), batch_size):
            idx = train[order[start:start + batch_size]]
            with nc.Tape() as tape:
                pred = fr.net(nc.Tensor(x[idx]))
                loss = nc.mean(nc.sum_(nc.square(nc.sub(pred, nc.Tensor(y[idx]))), axis=1))
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            epoch_loss += loss.item() * len(idx)
        losses.append(epoch_loss / max(len(train), 1))

    report = {"part": fr.part, "epochs": epochs, "loss_per_epoch": losses}
    if n_hold:
        pred = fr.net(nc.Tensor(x[hold])).data
        report["holdout_l_r"] = float(((pred - y[hold]) ** 2).sum(axis=1).mean())
        mean_pred = y[train].mean(axis=0)
        report["holdout_predict_mean_baseline"] = float(
            ((mean_pred - y[hold]) ** 2).sum(axis=1).mean())
    return report


def resize_image(generator: gen.GeneratorModel, fr: TrajectoryFinetuner,
                 r_p: np.ndarray, r_w_mean: np.ndarray, w_i: np.ndarray,
                 weight: float, mode: str = "finetuner") -> EditResult:
    """Resized image via the finetuner route or the raw mean-trajectory route."""
    w_i = np.asarray(w_i, dtype=np.float32)
    if mode == "finetuner":
        offset = fr(w_i, weight * np.asarray(r_p, dtype=np.float32))
    elif mode == "raw":
        offset = weight * np.asarray(r_w_mean, dtype=np.float32)
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    w_out = w_i + offset
    image = gen.synthesize(generator, w_out)
    return EditResult(operation="resize", image=image, w_out=w_out, w_in=w_i,
                      diagnostics={"part": fr.part, "weight": weight, "mode": mode,
                                   "offset_norm": float(np.linalg.norm(offset))})


# ---------------------------------------------------------------------------
# view manipulation


def set_view(mf: mp.ForwardMap, mb: mp.BackwardMap, generator: gen.GeneratorModel,
             w_i: np.ndarray, v: np.ndarray) -> EditResult:
    v = mp.check_onehot(v)
    s = mp.forward_map(mf, w_i)
    w_out = mp.backward_map(mb, s, v)
    image = gen.synthesize(generator, w_out)
    return EditResult(operation="view", image=image, w_out=w_out, w_in=w_i,
                      attr_in=s, attr_edit=s, view=v,
                      diagnostics={"view_index": int(np.argmax(v))})


def save_trajectory_finetuner(path, fr: TrajectoryFinetuner, r_p: np.ndarray,
                              r_w_mean: np.ndarray, meta: dict | None = None) -> None:
    m = {"kind": "fr", "d": fr.d, "z": fr.z, "part": fr.part,
         "hidden": fr.net.layers[0].w.shape[1] if fr.net.layers else 0}
    m.update(meta or {})
    arrays = fr.net.state_arrays() + [("traj.r_p", r_p), ("traj.r_w_mean", r_w_mean)]
    nc.save_checkpoint(path, arrays, m)


def load_trajectory_finetuner(path) -> tuple[TrajectoryFinetuner, np.ndarray, np.ndarray]:
    arrays, meta = nc.load_checkpoint(path)
    fr = build_trajectory_finetuner(meta["d"], meta["z"], meta["part"], seed=0,
                                    hidden=meta["hidden"])
    fr.net.load_state(arrays)
    return fr, arrays["traj.r_p"], arrays["traj.r_w_mean"]
