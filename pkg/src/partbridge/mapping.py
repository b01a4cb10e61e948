"""The latent bridge: forward map, backward map, view predictor, training.

Attribute layout is fixed everywhere: S = [P_0 ... P_{n_c-1}, T] with P_i
of length z and T of length 7*n_c. The forward map sends an image latent
to S; the backward map sends (S, view one-hot) back to an image latent;
the view predictor classifies the 12 yaw stops from an image latent.

Training runs in four stages. Stage 1 fits decoded-feature reconstruction,
stage 2 continues with a vertex-coordinate loss routed through the dense
feature-solve operator (the solve is linear, so the operator is its own
Jacobian), the backward map trains through the frozen generator with a
perceptual loss, and joint finetuning couples both maps end to end with a
drift regularizer against a frozen forward-map snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .generator import (
    GeneratorModel,
    image_pyramid,
    invert,
    proxy_items_from,
    proxy_items_t,
    synthesize_t,
)
from .partvae import PartVaeModel, decode_t
from .seeds import rng_for
from .shapegen.feature import FeatureSolveOp

N_VIEWS = 12
MLP_LAYERS = 8
EPS_NORM = 1e-12


# ---------------------------------------------------------------------------
# attribute packing


@dataclass(frozen=True)
class AttrLayout:
    n_c: int
    z: int

    @property
    def p_dim(self) -> int:
        return self.n_c * self.z

    @property
    def t_dim(self) -> int:
        return 7 * self.n_c

    @property
    def s_dim(self) -> int:
        return self.p_dim + self.t_dim

    def p_slice(self, k: int) -> slice:
        return slice(k * self.z, (k + 1) * self.z)

    def t_slice(self) -> slice:
        return slice(self.p_dim, self.s_dim)

    def t_block(self, k: int) -> slice:
        return slice(self.p_dim + 7 * k, self.p_dim + 7 * (k + 1))


def pack_attr(layout: AttrLayout, P: np.ndarray, T: np.ndarray) -> np.ndarray:
    P = np.asarray(P).reshape(layout.n_c, layout.z)
    T = np.asarray(T).reshape(layout.t_dim)
    return np.concatenate([P.reshape(-1), T])


def unpack_attr(layout: AttrLayout, S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    S = np.asarray(S)
    if S.shape[-1] != layout.s_dim:
        raise ValueError(f"attribute length {S.shape[-1]} != {layout.s_dim}")
    P = S[..., :layout.p_dim].reshape(*S.shape[:-1], layout.n_c, layout.z)
    T = S[..., layout.p_dim:]
    return P, T


# ---------------------------------------------------------------------------
# networks


@dataclass
class ForwardMap:
    net: nc.MLP
    d: int
    layout: AttrLayout


@dataclass
class BackwardMap:
    net: nc.MLP
    d: int
    layout: AttrLayout


@dataclass
class ViewPredictor:
    net: nc.MLP
    d: int


def _mlp_dims(n_in: int, hidden: int, n_out: int, layers: int = MLP_LAYERS) -> list[int]:
    return [n_in] + [hidden] * (layers - 1) + [n_out]


def build_forward(d: int, layout: AttrLayout, hidden: int, seed: int) -> ForwardMap:
    rng = rng_for(seed, "mf-init")
    return ForwardMap(nc.MLP(_mlp_dims(d, hidden, layout.s_dim), rng, name="mf"), d, layout)


def build_backward(d: int, layout: AttrLayout, hidden: int, seed: int) -> BackwardMap:
    rng = rng_for(seed, "mb-init")
    return BackwardMap(nc.MLP(_mlp_dims(layout.s_dim + N_VIEWS, hidden, d), rng, name="mb"),
                       d, layout)


def build_view_predictor(d: int, hidden: int, seed: int) -> ViewPredictor:
    rng = rng_for(seed, "mv-init")
    return ViewPredictor(nc.MLP(_mlp_dims(d, hidden, N_VIEWS), rng, name="mv"), d)


def clone_forward(mf: ForwardMap) -> ForwardMap:
    out = build_forward(mf.d, mf.layout, mf.net.layers[0].w.shape[1], seed=0)
    out.net.load_state(dict(mf.net.state_arrays()))
    return out


def clone_backward(mb: BackwardMap) -> BackwardMap:
    out = build_backward(mb.d, mb.layout, mb.net.layers[0].w.shape[1], seed=0)
    out.net.load_state(dict(mb.net.state_arrays()))
    return out


def forward_map(mf: ForwardMap, w: np.ndarray) -> np.ndarray:
    """Deterministic S for one latent (or batch)."""
    arr = np.atleast_2d(np.asarray(w, dtype=np.float32))
    if arr.shape[1] != mf.d:
        raise nc.ShapeError("forward_map", arr.shape, (mf.d,))
    out = mf.net(nc.Tensor(arr)).data
    return out[0] if np.asarray(w).ndim == 1 else out


def check_onehot(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float32)
    flat = np.atleast_2d(v)
    if flat.shape[-1] != N_VIEWS:
        raise ValueError(f"view vector length {flat.shape[-1]} != {N_VIEWS}")
    ok = np.all(np.isin(flat, (0.0, 1.0))) and np.all(flat.sum(axis=-1) == 1.0)
    if not ok:
        raise ValueError("view vector must be one-hot")
    return v


def onehot(k: int) -> np.ndarray:
    if not 0 <= int(k) < N_VIEWS:
        raise ValueError(f"view index {k} out of range")
    v = np.zeros(N_VIEWS, dtype=np.float32)
    v[int(k)] = 1.0
    return v


def backward_map(mb: BackwardMap, S: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Deterministic image latent for (S, view one-hot)."""
    S2 = np.atleast_2d(np.asarray(S, dtype=np.float32))
    if S2.shape[1] != mb.layout.s_dim:
        raise nc.ShapeError("backward_map", S2.shape, (mb.layout.s_dim,))
    v2 = np.atleast_2d(check_onehot(v))
    if v2.shape[0] == 1 and S2.shape[0] > 1:
        v2 = np.repeat(v2, S2.shape[0], axis=0)
    out = mb.net(nc.Tensor(np.concatenate([S2, v2], axis=1))).data
    return out[0] if np.asarray(S).ndim == 1 else out


def view_probs(mv: ViewPredictor, w: np.ndarray) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(w, dtype=np.float32))
    if arr.shape[1] != mv.d:
        raise nc.ShapeError("predict_view", arr.shape, (mv.d,))
    probs = nc.softmax(mv.net(nc.Tensor(arr))).data
    return probs[0] if np.asarray(w).ndim == 1 else probs


def predict_view(mv: ViewPredictor, w: np.ndarray) -> np.ndarray:
    """One-hot argmax of the 12-way softmax."""
    probs = np.atleast_2d(view_probs(mv, w))
    out = np.zeros_like(probs)
    out[np.arange(len(probs)), probs.argmax(axis=1)] = 1.0
    return out[0] if np.asarray(w).ndim == 1 else out


def predict_view_index(mv: ViewPredictor, w: np.ndarray) -> np.ndarray | int:
    probs = np.atleast_2d(view_probs(mv, w))
    idx = probs.argmax(axis=1)
    return int(idx[0]) if np.asarray(w).ndim == 1 else idx


# ---------------------------------------------------------------------------
# losses (shared by training and the gradient-check suite)


def norm_items(x: nc.Tensor) -> nc.Tensor:
    """Row-wise L2 norm (not squared), epsilon-smoothed at zero."""
    return nc.sqrt(nc.add(nc.sum_(nc.square(x), axis=-1), EPS_NORM))


def loss_p_recon(layout: AttrLayout, s_pred: nc.Tensor, p_true: np.ndarray,
                 decoders: list[PartVaeModel]) -> nc.Tensor:
    """Sum over parts of squared decoded-feature error, mean over batch."""
    total = None
    for i in range(layout.n_c):
        pi = nc.narrow(s_pred, 1, i * layout.z, layout.z)
        dec_pred = decode_t(decoders[i], pi)
        dec_true = decode_t(decoders[i], nc.Tensor(p_true[:, i, :]))
        term = nc.sum_(nc.square(nc.sub(dec_pred, dec_true)), axis=1)
        total = term if total is None else nc.add(total, term)
    return nc.mean(total)


def loss_v_recon(layout: AttrLayout, s_pred: nc.Tensor, p_true: np.ndarray,
                 decoders: list[PartVaeModel], solve_op: nc.Tensor) -> nc.Tensor:
    """Sum over parts of vertex-coordinate L2 error via the solve operator."""
    total = None
    for i in range(layout.n_c):
        pi = nc.narrow(s_pred, 1, i * layout.z, layout.z)
        diff = nc.sub(decode_t(decoders[i], pi),
                      decode_t(decoders[i], nc.Tensor(p_true[:, i, :])))
        verts = nc.matmul(diff, solve_op)  # anchor offset cancels in the difference
        term = norm_items(verts)
        total = term if total is None else nc.add(total, term)
    return nc.mean(total)


def loss_topo(layout: AttrLayout, s_pred: nc.Tensor, t_true: np.ndarray) -> nc.Tensor:
    t_pred = nc.narrow(s_pred, 1, layout.p_dim, layout.t_dim)
    return nc.mean(nc.sum_(nc.square(nc.sub(t_pred, nc.Tensor(t_true))), axis=1))


def solve_op_tensor(op: FeatureSolveOp) -> nc.Tensor:
    """Solve-operator matrix transposed for right-multiplication."""
    return nc.Tensor(op.matrix.T.astype(np.float32))


# ---------------------------------------------------------------------------
# training stages


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_forward_stage1(mf: ForwardMap, w: np.ndarray, P: np.ndarray, T: np.ndarray,
                         decoders: list[PartVaeModel], epochs: int, seed: int,
                         lr: float = 1e-3, batch_size: int = 64, epoch_offset: int = 0,
                         opt: nc.Adam | None = None) -> tuple[nc.Adam, dict]:
    """Decoded-feature reconstruction training (plus topology loss)."""
    if len(decoders) != mf.layout.n_c:
        raise ValueError("need one pretrained decoder per part")
    w = np.asarray(w, dtype=np.float32)
    P = np.asarray(P, dtype=np.float32)
    T = np.asarray(T, dtype=np.float32)
    opt = opt or nc.Adam(mf.net.parameters(), lr=lr)
    losses = []
    for epoch in range(epochs):
        rng = rng_for(seed, "mf1-epoch", epoch_offset + epoch)
        epoch_loss = 0.0
        for idx in _batches(len(w), batch_size, rng):
            with nc.Tape() as tape:
                s_pred = mf.net(nc.Tensor(w[idx]))
                loss = nc.add(loss_p_recon(mf.layout, s_pred, P[idx], decoders),
                              loss_topo(mf.layout, s_pred, T[idx]))
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            epoch_loss += loss.item() * len(idx)
        losses.append(epoch_loss / len(w))
    return opt, {"stage": "forward1", "epochs": epochs, "loss_per_epoch": losses}


def train_forward_stage2(mf: ForwardMap, w: np.ndarray, P: np.ndarray, T: np.ndarray,
                         decoders: list[PartVaeModel], solve_op: FeatureSolveOp,
                         epochs: int, seed: int, lr: float = 2e-4, batch_size: int = 64,
                         epoch_offset: int = 0,
                         opt: nc.Adam | None = None) -> tuple[nc.Adam, dict]:
    """Size finetuning: vertex-coordinate loss through the solve operator."""
    w = np.asarray(w, dtype=np.float32)
    P = np.asarray(P, dtype=np.float32)
    T = np.asarray(T, dtype=np.float32)
    K = solve_op_tensor(solve_op)
    opt = opt or nc.Adam(mf.net.parameters(), lr=lr)
    losses = []
    for epoch in range(epochs):
        rng = rng_for(seed, "mf2-epoch", epoch_offset + epoch)
        epoch_loss = 0.0
        for idx in _batches(len(w), batch_size, rng):
            with nc.Tape() as tape:
                s_pred = mf.net(nc.Tensor(w[idx]))
                loss = nc.add(loss_v_recon(mf.layout, s_pred, P[idx], decoders, K),
                              loss_topo(mf.layout, s_pred, T[idx]))
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            epoch_loss += loss.item() * len(idx)
        losses.append(epoch_loss / len(w))
    return opt, {"stage": "forward2", "epochs": epochs, "loss_per_epoch": losses}


def train_backward(mb: BackwardMap, S: np.ndarray, views: np.ndarray, w: np.ndarray,
                   generator: GeneratorModel, lambda1: float, epochs: int, seed: int,
                   lr: float = 1e-3, batch_size: int = 64, epoch_offset: int = 0,
                   opt: nc.Adam | None = None) -> tuple[nc.Adam, dict]:
    """Image-space perceptual loss through the frozen generator."""
    if not generator.trained:
        raise RuntimeError("train_backward requires a trained generator")
    S = np.asarray(S, dtype=np.float32)
    views = np.asarray(views, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    inputs = np.concatenate([S, views], axis=1)
    opt = opt or nc.Adam(mb.net.parameters(), lr=lr)
    losses = []
    for epoch in range(epochs):
        rng = rng_for(seed, "mb-epoch", epoch_offset + epoch)
        epoch_loss = 0.0
        for idx in _batches(len(w), batch_size, rng):
            target = synthesize_t(generator, nc.Tensor(w[idx]))  # frozen G, no grad needed
            target_pyr = [nc.Tensor(l.data) for l in image_pyramid(target)]
            with nc.Tape() as tape:
                w_pred = mb.net(nc.Tensor(inputs[idx]))
                recon_pyr = image_pyramid(synthesize_t(generator, w_pred))
                loss = nc.add(
                    nc.mean(proxy_items_from(recon_pyr, target_pyr)),
                    nc.mul(nc.mean(nc.sum_(nc.square(w_pred), axis=1)), lambda1))
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            epoch_loss += loss.item() * len(idx)
        losses.append(epoch_loss / len(w))
    return opt, {"stage": "backward", "epochs": epochs, "lambda1": lambda1,
                 "loss_per_epoch": losses}


def joint_finetune(mf: ForwardMap, mb: BackwardMap, w: np.ndarray, views: np.ndarray,
                   T: np.ndarray, generator: GeneratorModel, lambda1: float,
                   lambda2: float, epochs: int, seed: int, lr: float = 2e-4,
                   batch_size: int = 64, epoch_offset: int = 0,
                   opt: nc.Adam | None = None) -> tuple[nc.Adam, dict]:
    """End-to-end w -> M_F -> M_B -> G training with a drift regularizer.

    The drift term anchors M_F outputs to a frozen snapshot taken at entry,
    preventing the attribute codes from collapsing to whatever happens to
    reconstruct images well.
    """
    if not generator.trained:
        raise RuntimeError("joint_finetune requires a trained generator")
    w = np.asarray(w, dtype=np.float32)
    views = np.asarray(views, dtype=np.float32)
    T = np.asarray(T, dtype=np.float32)
    s_freeze = forward_map(mf, w)  # snapshot of M_F at entry
    params = mf.net.parameters() + mb.net.parameters()
    opt = opt or nc.Adam(params, lr=lr)
    losses = []
    for epoch in range(epochs):
        rng = rng_for(seed, "joint-epoch", epoch_offset + epoch)
        epoch_loss = 0.0
        for idx in _batches(len(w), batch_size, rng):
            target = synthesize_t(generator, nc.Tensor(w[idx]))
            target_pyr = [nc.Tensor(l.data) for l in image_pyramid(target)]
            with nc.Tape() as tape:
                s_pred = mf.net(nc.Tensor(w[idx]))
                w_pred = mb.net(nc.concat([s_pred, nc.Tensor(views[idx])], axis=1))
                recon_pyr = image_pyramid(synthesize_t(generator, w_pred))
                drift = nc.mean(norm_items(nc.sub(s_pred, nc.Tensor(s_freeze[idx]))))
                loss = nc.add(
                    nc.add(loss_topo(mf.layout, s_pred, T[idx]),
                           nc.mean(proxy_items_from(recon_pyr, target_pyr))),
                    nc.add(nc.mul(nc.mean(nc.sum_(nc.square(w_pred), axis=1)), lambda1),
                           nc.mul(drift, lambda2)))
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            epoch_loss += loss.item() * len(idx)
        losses.append(epoch_loss / len(w))
    report = {"stage": "joint", "epochs": epochs, "lambda1": lambda1,
              "lambda2": lambda2, "loss_per_epoch": losses}
    return opt, report


def mean_forward_drift(mf: ForwardMap, s_freeze: np.ndarray, w: np.ndarray) -> float:
    """Mean ||M_F(w) - M_F_freeze(w)||_2 over a latent set."""
    s_now = np.atleast_2d(forward_map(mf, w))
    return float(np.linalg.norm(s_now - np.atleast_2d(s_freeze), axis=1).mean())


def train_view_predictor(mv: ViewPredictor, w: np.ndarray, yaw: np.ndarray,
                         epochs: int, seed: int, lr: float = 1e-3,
                         batch_size: int = 64, epoch_offset: int = 0,
                         opt: nc.Adam | None = None) -> tuple[nc.Adam, dict]:
    """Cross-entropy training of the 12-way yaw classifier."""
    w = np.asarray(w, dtype=np.float32)
    labels = np.eye(N_VIEWS, dtype=np.float32)[np.asarray(yaw, dtype=int)]
    opt = opt or nc.Adam(mv.net.parameters(), lr=lr)
    losses = []
    for epoch in range(epochs):
        rng = rng_for(seed, "mv-epoch", epoch_offset + epoch)
        epoch_loss = 0.0
        for idx in _batches(len(w), batch_size, rng):
            with nc.Tape() as tape:
                logits = mv.net(nc.Tensor(w[idx]))
                loss = nc.mean(nc.softmax_cross_entropy(logits, nc.Tensor(labels[idx])))
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            epoch_loss += loss.item() * len(idx)
        losses.append(epoch_loss / len(w))
    return opt, {"stage": "viewpred", "epochs": epochs, "loss_per_epoch": losses}


# ---------------------------------------------------------------------------
# shape-specific finetuning


def _param_drift(params_now: list[tuple[str, nc.Tensor]],
                 params_ref: dict[str, np.ndarray]) -> nc.Tensor:
    total = None
    for name, p in params_now:
        ref = nc.Tensor(params_ref[name])
        term = nc.sum_(nc.square(nc.sub(nc.reshape(p, (-1,)), nc.reshape(ref, (-1,)))))
        total = term if total is None else nc.add(total, term)
    return nc.sqrt(nc.add(total, EPS_NORM))


def shape_specific_finetune(image: np.ndarray, mf: ForwardMap, mb: BackwardMap,
                            mv: ViewPredictor, generator: GeneratorModel,
                            lambda3: float, lambda4: float, steps: int,
                            invert_steps: int, lambda_w: float, seed: int,
                            lr: float = 1e-4) -> tuple[ForwardMap, BackwardMap, dict]:
    """Per-input optimization of cloned mapping weights for one image.

    The originals stay untouched. Stops early and returns the best-so-far
    weights if the reconstruction error rises for 50 consecutive steps.
    """
    w_img, _ = invert(generator, image, steps=invert_steps, lambda_w=lambda_w, seed=seed)
    v = predict_view(mv, w_img)
    mf2, mb2 = clone_forward(mf), clone_backward(mb)
    ref_f = dict(mf.net.state_arrays())
    ref_b = dict(mb.net.state_arrays())
    target = nc.Tensor(_image_batch(image))
    target_pyr = image_pyramid(target)
    wv = nc.Tensor(np.concatenate([w_img, v])[None, :].astype(np.float32))

    params = mf2.net.parameters() + mb2.net.parameters()
    opt = nc.Adam(params, lr=lr)

    def recon_error() -> float:
        s = forward_map(mf2, w_img)
        w2 = backward_map(mb2, s, v)
        out = synthesize_t(generator, nc.Tensor(w2[None, :]))
        return float(proxy_items_from(image_pyramid(out), target_pyr).data[0])

    before = recon_error()
    best = before
    best_state = [p.data.copy() for _, p in params]
    consec_worse = 0
    diverged = False
    for step in range(steps):
        with nc.Tape() as tape:
            w_in = nc.narrow(wv, 1, 0, mf2.d)
            v_in = nc.narrow(wv, 1, mf2.d, N_VIEWS)
            s_pred = mf2.net(w_in)
            w_pred = mb2.net(nc.concat([s_pred, v_in], axis=1))
            recon_pyr = image_pyramid(synthesize_t(generator, w_pred))
            loss = nc.add(
                nc.mean(proxy_items_from(recon_pyr, target_pyr)),
                nc.add(nc.mul(_param_drift(mf2.net.parameters(), ref_f), lambda3),
                       nc.mul(_param_drift(mb2.net.parameters(), ref_b), lambda4)))
            tape.backward(loss)
        opt.step()
        opt.zero_grad()
        err = recon_error()
        if err < best:
            best = err
            best_state = [p.data.copy() for _, p in params]
            consec_worse = 0
        else:
            consec_worse += 1
            if consec_worse >= 50:
                diverged = True
                break
    for (_, p), data in zip(params, best_state):
        p.data = data

    drift_f = float(np.sqrt(sum(((p.data - ref_f[n]) ** 2).sum()
                                for n, p in mf2.net.parameters())))
    drift_b = float(np.sqrt(sum(((p.data - ref_b[n]) ** 2).sum()
                                for n, p in mb2.net.parameters())))
    report = {
        "proxy_before": before,
        "proxy_after": best,
        "drift_forward": drift_f,
        "drift_backward": drift_b,
        "diverged": diverged,
        "steps": steps,
    }
    return mf2, mb2, report


def _image_batch(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    return arr[..., None]


# ---------------------------------------------------------------------------
# checkpoints


def save_forward(path, mf: ForwardMap, opt: nc.Adam | None = None, meta: dict | None = None):
    m = {"kind": "forward", "d": mf.d, "n_c": mf.layout.n_c, "z": mf.layout.z,
         "hidden": mf.net.layers[0].w.shape[1]}
    m.update(meta or {})
    arrays = mf.net.state_arrays() + (opt.state_arrays() if opt else [])
    nc.save_checkpoint(path, arrays, m)


def load_forward(path, opt_params: bool = False):
    arrays, meta = nc.load_checkpoint(path)
    mf = build_forward(meta["d"], AttrLayout(meta["n_c"], meta["z"]), meta["hidden"], seed=0)
    mf.net.load_state(arrays)
    return (mf, arrays, meta) if opt_params else mf


def save_backward(path, mb: BackwardMap, opt: nc.Adam | None = None, meta: dict | None = None):
    m = {"kind": "backward", "d": mb.d, "n_c": mb.layout.n_c, "z": mb.layout.z,
         "hidden": mb.net.layers[0].w.shape[1]}
    m.update(meta or {})
    arrays = mb.net.state_arrays() + (opt.state_arrays() if opt else [])
    nc.save_checkpoint(path, arrays, m)


def load_backward(path):
    arrays, meta = nc.load_checkpoint(path)
    mb = build_backward(meta["d"], AttrLayout(meta["n_c"], meta["z"]), meta["hidden"], seed=0)
    mb.net.load_state(arrays)
    return mb


def save_view_predictor(path, mv: ViewPredictor, meta: dict | None = None):
    m = {"kind": "view", "d": mv.d, "hidden": mv.net.layers[0].w.shape[1]}
    m.update(meta or {})
    nc.save_checkpoint(path, mv.net.state_arrays(), m)


def load_view_predictor(path):
    arrays, meta = nc.load_checkpoint(path)
    mv = build_view_predictor(meta["d"], meta["hidden"], seed=0)
    mv.net.load_state(arrays)
    return mv
