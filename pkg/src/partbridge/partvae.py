"""Per-part variational autoencoder over deformation features.

One VAE per part slot. The posterior mean is the part's geometric
attribute code; downstream stages never sample. Encoder and decoder are
4-layer MLPs; the encoder's last layer emits mean and log-variance
stacked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .seeds import rng_for

ENC_HIDDEN = (256, 128, 64)
DEC_HIDDEN = (64, 128, 256)


@dataclass
class PartVaeModel:
    enc: nc.MLP
    dec: nc.MLP
    z: int
    feature_dim: int
    part: str

    def parameters(self):
        return self.enc.parameters() + self.dec.parameters()


def build_partvae(feature_dim: int, z: int, part: str, seed: int) -> PartVaeModel:
    rng = rng_for(seed, "partvae-init", part)
    enc = nc.MLP([feature_dim, *ENC_HIDDEN, 2 * z], rng, name="enc")
    dec = nc.MLP([z, *DEC_HIDDEN, feature_dim], rng, name="dec")
    return PartVaeModel(enc=enc, dec=dec, z=z, feature_dim=feature_dim, part=part)


def _check_dim(actual: int, expected: int, what: str) -> None:
    if actual != expected:
        raise ValueError(f"{what}: got length {actual}, model expects {expected}")


def encode(model: PartVaeModel, features: np.ndarray) -> np.ndarray:
    """Posterior mean for a (B, 9V) or (9V,) feature batch."""
    feats = np.atleast_2d(np.asarray(features, dtype=np.float32))
    _check_dim(feats.shape[1], model.feature_dim, "encode feature")
    out = model.enc(nc.Tensor(feats)).data
    mu = out[:, :model.z]
    return mu[0] if np.asarray(features).ndim == 1 else mu


def decode(model: PartVaeModel, latents: np.ndarray) -> np.ndarray:
    """Deterministic decode to (B, 9V) features."""
    lat = np.atleast_2d(np.asarray(latents, dtype=np.float32))
    _check_dim(lat.shape[1], model.z, "decode latent")
    out = model.dec(nc.Tensor(lat)).data
    return out[0] if np.asarray(latents).ndim == 1 else out


def decode_t(model: PartVaeModel, latents: nc.Tensor) -> nc.Tensor:
    """Tape-aware decode for losses that differentiate through the decoder."""
    if latents.shape[-1] != model.z:
        raise nc.ShapeError("decode", latents.shape, (model.z,))
    return model.dec(latents)


def kl_standard_normal(mu: nc.Tensor, logvar: nc.Tensor) -> nc.Tensor:
    """Closed form KL(N(mu, sigma^2) || N(0, I)), mean over the batch."""
    term = nc.sub(nc.add(nc.square(mu), nc.exp(logvar)), logvar)
    per_item = nc.mul(nc.sum_(term, axis=-1), 0.5)
    bias = 0.5 * mu.shape[-1]
    return nc.sub(nc.mean(per_item), nc.Tensor(np.asarray(bias, dtype=mu.dtype)))


def train_partvae(features: np.ndarray, z: int, part: str, epochs: int,
                  beta: float, seed: int, lr: float = 1e-3,
                  model: PartVaeModel | None = None) -> tuple[PartVaeModel, dict]:
    """Standard VAE training: entrywise MSE + beta * KL, full batch."""
    feats = np.asarray(features, dtype=np.float32)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValueError("train_partvae needs a nonempty (n, 9V) feature matrix")
    n, dim = feats.shape
    if model is None:
        model = build_partvae(dim, z, part, seed)
    opt = nc.Adam(model.parameters(), lr=lr)
    x = nc.Tensor(feats)
    losses = []
    for epoch in range(epochs):
        noise = rng_for(seed, "partvae-noise", part, epoch).normal(size=(n, z)).astype(np.float32)
        with nc.Tape() as tape:
            out = model.enc(x)
            mu = nc.narrow(out, 1, 0, z)
            logvar = nc.narrow(out, 1, z, z)
            std = nc.exp(nc.mul(logvar, 0.5))
            sample = nc.add(mu, nc.mul(std, nc.Tensor(noise)))
            recon = model.dec(sample)
            loss = nc.add(nc.mean(nc.square(nc.sub(recon, x))),
                          nc.mul(kl_standard_normal(mu, logvar), beta))
            tape.backward(loss)
        opt.step()
        opt.zero_grad()
        losses.append(loss.item())

    recon_mse = per_item_recon_mse(model, feats)
    report = {
        "part": part,
        "epochs": epochs,
        "beta": beta,
        "final_loss": losses[-1] if losses else None,
        "train_recon_mse": recon_mse.tolist(),
        "tau_vae": float(max(4.0 * recon_mse.mean(), 1e-6)),
    }
    return model, report


def per_item_recon_mse(model: PartVaeModel, feats: np.ndarray) -> np.ndarray:
    recon = decode(model, encode(model, feats))
    return ((recon - np.atleast_2d(feats)) ** 2).mean(axis=1)


def save_partvae(path, model: PartVaeModel, extra_meta: dict | None = None) -> None:
    meta = {"z": model.z, "V": model.feature_dim // 9, "part": model.part,
            "feature_dim": model.feature_dim}
    meta.update(extra_meta or {})
    nc.save_checkpoint(path, model.enc.state_arrays() + model.dec.state_arrays(), meta)


def load_partvae(path) -> PartVaeModel:
    arrays, meta = nc.load_checkpoint(path)
    model = build_partvae(meta["feature_dim"], meta["z"], meta["part"], seed=0)
    model.enc.load_state(arrays)
    model.dec.load_state(arrays)
    return model
