"""Toy image generator, perceptual proxy metric, and image inversion.

The generator G maps a latent w to a grayscale image through an MLP trunk
and an upsampling convolutional head; a companion encoder E maps images
back to warm-start latents. Both are trained jointly as a reconstruction
autoencoder, which stands in for adversarial training: the pipeline only
ever consumes G as a frozen differentiable decoder.

The perceptual proxy is the summed MSE over a 3-level Gaussian pyramid
(5-tap binomial kernel, constant-preserving padding); it is the loss for
inversion and backward-mapping training and doubles as the image error
metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .seeds import rng_for

TRUNK_HIDDEN = 256
TRUNK_CH = 8
ENC_HIDDEN = 256
PYRAMID_LEVELS = 3
INVERT_CHUNK = 256

_KERNELS: dict = {}


def _blur_kernels(dtype) -> tuple[nc.Tensor, nc.Tensor]:
    """The 5-tap binomial kernel, split into its separable 1-D factors."""
    key = np.dtype(dtype).name
    if key not in _KERNELS:
        k = np.array([1.0, 4.0, 6.0, 4.0, 1.0], dtype=dtype) / 16.0
        _KERNELS[key] = (nc.Tensor(k.reshape(5, 1, 1, 1)), nc.Tensor(k.reshape(1, 5, 1, 1)))
    return _KERNELS[key]


def _as_batch(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    arr = np.asarray(images, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise nc.ShapeError("image batch", arr.shape)
    return arr[..., None]  # (B, H, W, 1)


def image_pyramid(x: nc.Tensor) -> list[nc.Tensor]:
    """Gaussian pyramid: blur with the fixed 5-tap kernel, then halve."""
    kv, kh = _blur_kernels(x.dtype)
    levels = [x]
    for _ in range(PYRAMID_LEVELS - 1):
        padded = nc.pad2d(levels[-1], 2, "reflect")
        blurred = nc.conv2d(nc.conv2d(padded, kv), kh)
        levels.append(nc.avg_pool2x(blurred))
    return levels


def proxy_items_from(pa: list[nc.Tensor], pb: list[nc.Tensor]) -> nc.Tensor:
    total = None
    for la, lb in zip(pa, pb):
        level = nc.mean(nc.square(nc.sub(la, lb)), axis=(1, 2, 3))
        total = level if total is None else nc.add(total, level)
    return total


def proxy_items_t(a: nc.Tensor, b: nc.Tensor) -> nc.Tensor:
    """Per-item perceptual proxy between two (B, H, W, 1) tensors."""
    if a.shape != b.shape:
        raise nc.ShapeError("perceptual_proxy", a.shape, b.shape)
    return proxy_items_from(image_pyramid(a), image_pyramid(b))


def perceptual_proxy(i1: np.ndarray, i2: np.ndarray, dtype=np.float64) -> float:
    """Scalar proxy between two images or image batches (mean over batch)."""
    a = nc.Tensor(_as_batch(i1, dtype))
    b = nc.Tensor(_as_batch(i2, dtype))
    return float(proxy_items_t(a, b).data.mean())


def proxy_per_item(i1: np.ndarray, i2: np.ndarray) -> np.ndarray:
    a = nc.Tensor(_as_batch(i1))
    b = nc.Tensor(_as_batch(i2))
    return proxy_items_t(a, b).data.copy()


@dataclass
class GeneratorModel:
    trunk: nc.MLP
    conv1: nc.Conv3x3
    conv2: nc.Conv3x3
    conv3: nc.Conv3x3
    enc: nc.MLP
    d: int
    image_size: int
    trained: bool = False
    meta: dict = field(default_factory=dict)

    def parameters(self):
        return (self.trunk.parameters() + self.conv1.parameters()
                + self.conv2.parameters() + self.conv3.parameters()
                + self.enc.parameters())

    def decoder_parameters(self):
        return (self.trunk.parameters() + self.conv1.parameters()
                + self.conv2.parameters() + self.conv3.parameters())


def build_generator(d: int, image_size: int, seed: int) -> GeneratorModel:
    if image_size % 4:
        raise ValueError("image size must be divisible by 4")
    rng = rng_for(seed, "generator-init")
    base = image_size // 4
    trunk = nc.MLP([d, TRUNK_HIDDEN, TRUNK_CH * base * base], rng, name="g.trunk")
    conv1 = nc.Conv3x3(TRUNK_CH, TRUNK_CH, rng, name="g.conv1")
    conv2 = nc.Conv3x3(TRUNK_CH, 4, rng, name="g.conv2")
    conv3 = nc.Conv3x3(4, 1, rng, name="g.conv3")
    enc = nc.MLP([(image_size // 2) ** 2, ENC_HIDDEN, d], rng, name="e.mlp")
    return GeneratorModel(trunk, conv1, conv2, conv3, enc, d, image_size)


def synthesize_t(model: GeneratorModel, w: nc.Tensor) -> nc.Tensor:
    """Differentiable G: (B, d) latents -> (B, S, S, 1) images in (0, 1)."""
    if w.shape[-1] != model.d:
        raise nc.ShapeError("synthesize", w.shape, (model.d,))
    B = w.shape[0]
    base = model.image_size // 4
    h = nc.leaky_relu(model.trunk(w))
    h = nc.reshape(h, (B, base, base, TRUNK_CH))
    h = nc.leaky_relu(model.conv1(h))
    h = nc.leaky_relu(model.conv2(nc.upsample2x(h)))
    return nc.sigmoid(model.conv3(nc.upsample2x(h)))


def synthesize(model: GeneratorModel, w: np.ndarray) -> np.ndarray:
    """Deterministic image for one latent (H, W) or batch (B, H, W)."""
    arr = np.atleast_2d(np.asarray(w, dtype=np.float32))
    if arr.shape[1] != model.d:
        raise nc.ShapeError("synthesize", arr.shape, (model.d,))
    out = synthesize_t(model, nc.Tensor(arr)).data[..., 0]
    return out[0] if np.asarray(w).ndim == 1 else out


def encode_image_t(model: GeneratorModel, images: nc.Tensor) -> nc.Tensor:
    pooled = nc.avg_pool2x(images)
    flat = nc.reshape(pooled, (images.shape[0], (model.image_size // 2) ** 2))
    return model.enc(flat)


def encode_image(model: GeneratorModel, images: np.ndarray) -> np.ndarray:
    batch = _as_batch(images)
    out = encode_image_t(model, nc.Tensor(batch)).data
    return out[0] if np.asarray(images).ndim == 2 else out


def train_generator(images: np.ndarray, d: int, epochs: int, seed: int,
                    lambda_w: float = 0.01, lr: float = 1e-3, batch_size: int = 64,
                    model: GeneratorModel | None = None,
                    opt: nc.Adam | None = None) -> tuple[GeneratorModel, dict]:
    """Joint reconstruction training of E and G on (N, H, W) images."""
    data = _as_batch(images)
    n = data.shape[0]
    if n == 0:
        raise ValueError("train_generator needs a nonempty image set")
    if model is None:
        model = build_generator(d, data.shape[2], seed)
    if opt is None:
        opt = nc.Adam(model.parameters(), lr=lr)
    losses = []
    for epoch in range(epochs):
        order = rng_for(seed, "generator-shuffle", epoch).permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            batch = nc.Tensor(data[order[start:start + batch_size]])
            with nc.Tape() as tape:
                w = encode_image_t(model, batch)
                recon = synthesize_t(model, w)
                loss = nc.add(
                    nc.add(nc.mean(proxy_items_t(recon, batch)),
                           nc.mean(nc.square(nc.sub(recon, batch)))),
                    nc.mul(nc.mean(nc.sum_(nc.square(w), axis=1)), lambda_w))
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            epoch_loss += loss.item() * batch.shape[0]
        losses.append(epoch_loss / n)

    model.trained = True
    train_proxy = reconstruction_proxy(model, data[..., 0])
    report = {
        "epochs": epochs,
        "lambda_w": lambda_w,
        "loss_per_epoch": losses,
        "train_proxy_mean": float(train_proxy.mean()),
        "tau_gen": float(1.25 * train_proxy.mean()),
    }
    model.meta["tau_gen"] = report["tau_gen"]
    return model, report


def reconstruction_proxy(model: GeneratorModel, images: np.ndarray,
                         chunk: int = INVERT_CHUNK) -> np.ndarray:
    """Per-image proxy(G(E(I)), I) without grad tracking."""
    data = _as_batch(images)
    out = []
    for start in range(0, data.shape[0], chunk):
        part = data[start:start + chunk]
        w = encode_image_t(model, nc.Tensor(part))
        recon = synthesize_t(model, w)
        out.append(proxy_items_t(recon, nc.Tensor(part)).data)
    return np.concatenate(out)


def invert(model: GeneratorModel, images: np.ndarray, steps: int,
           lambda_w: float = 0.01, seed: int = 0, lr: float = 0.05,
           chunk: int = INVERT_CHUNK,
           warm_start: np.ndarray | None = None) -> tuple[np.ndarray, dict]:
    """Optimize latents to reproduce the images, warm-started at E(I).

    Returns best-so-far latents per item (the objective never ends above
    its initialization) plus a report with per-item objective traces.
    """
    if not model.trained:
        raise RuntimeError("invert requires a trained generator")
    data = _as_batch(images)
    n = data.shape[0]
    best_w = np.zeros((n, model.d), dtype=np.float32)
    obj_init = np.zeros(n, dtype=np.float64)
    obj_best = np.zeros(n, dtype=np.float64)
    proxy_init = np.zeros(n, dtype=np.float64)
    proxy_best = np.zeros(n, dtype=np.float64)

    for start in range(0, n, chunk):
        part = data[start:start + chunk]
        target = nc.Tensor(part)
        target_pyr = image_pyramid(target)  # constant across steps
        if warm_start is None:
            w0 = encode_image_t(model, target).data.copy()
        else:
            w0 = np.atleast_2d(warm_start)[start:start + chunk].astype(np.float32).copy()
        w = nc.Tensor(w0.copy(), requires_grad=True)
        opt = nc.Adam([("w", w)], lr=lr)

        def objective() -> tuple[nc.Tensor, nc.Tensor]:
            prox = proxy_items_from(image_pyramid(synthesize_t(model, w)), target_pyr)
            return nc.add(prox, nc.mul(nc.sum_(nc.square(w), axis=1), lambda_w)), prox

        m = len(part)
        cb_obj = np.full(m, np.inf)
        cb_proxy = np.zeros(m)
        cb_w = w0.copy()
        first = True
        for step in range(steps + 1):  # final evaluation happens on the last pass
            if step < steps:
                with nc.Tape() as tape:
                    items, prox = objective()
                    tape.backward(nc.sum_(items))
            else:
                items, prox = objective()
            vals = items.data.astype(np.float64)
            pvals = prox.data.astype(np.float64)
            if first:
                obj_init[start:start + m] = vals
                proxy_init[start:start + m] = pvals
                first = False
            improved = vals < cb_obj
            cb_obj[improved] = vals[improved]
            cb_proxy[improved] = pvals[improved]
            cb_w[improved] = w.data[improved]
            if step < steps:
                opt.step()
                opt.zero_grad()
        best_w[start:start + m] = cb_w
        obj_best[start:start + m] = cb_obj
        proxy_best[start:start + m] = cb_proxy

    report = {
        "steps": steps,
        "lambda_w": lambda_w,
        "seed": seed,
        "objective_init": obj_init.tolist(),
        "objective_best": obj_best.tolist(),
        "proxy_init": proxy_init.tolist(),
        "proxy_best": proxy_best.tolist(),
    }
    single = np.asarray(images).ndim == 2
    return (best_w[0] if single else best_w), report


def save_generator(path, model: GeneratorModel, extra_meta: dict | None = None) -> None:
    meta = {"d": model.d, "H": model.image_size, "W": model.image_size,
            "trained": model.trained}
    meta.update(model.meta)
    meta.update(extra_meta or {})
    nc.save_checkpoint(path, [(n, p.data) for n, p in model.parameters()], meta)


def load_generator(path) -> GeneratorModel:
    arrays, meta = nc.load_checkpoint(path)
    model = build_generator(meta["d"], meta["H"], seed=0)
    for name, p in model.parameters():
        p.data = arrays[name].astype(np.float32)
    model.trained = bool(meta.get("trained", False))
    model.meta = {k: v for k, v in meta.items() if k not in ("d", "H", "W", "trained")}
    return model
