"""Thin-plate-spline warping with contour-sampled control points.

Standard 2-D TPS with kernel U(r) = r^2 log r and an optional bending
regularizer. Points are (row, col) floats. Image warping is backward:
the resampling grid comes from a swapped-control inverse fit, so content
at a source control point lands on its target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _kernel(r2: np.ndarray) -> np.ndarray:
    # U(r) = r^2 log r = 0.5 * r^2 log r^2, with U(0) = 0
    out = np.zeros_like(r2)
    pos = r2 > 0
    out[pos] = 0.5 * r2[pos] * np.log(r2[pos])
    return out


def _pairwise_k(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    return _kernel(d2)


@dataclass
class TpsWarp:
    src: np.ndarray            # (n, 2) control sources
    dst: np.ndarray            # (n, 2) control targets
    weights: np.ndarray        # (n, 2) radial coefficients
    affine: np.ndarray         # (3, 2) [const; row; col]
    lam: float
    _inverse: "TpsWarp | None" = field(default=None, repr=False)

    def transform(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        K = _pairwise_k(pts, self.src)
        P = np.column_stack([np.ones(len(pts)), pts])
        return K @ self.weights + P @ self.affine

    def inverse(self) -> "TpsWarp":
        if self._inverse is None:
            self._inverse = tps_fit(self.dst, self.src, self.lam)
        return self._inverse

    def bending_energy(self) -> float:
        K = _pairwise_k(self.src, self.src)
        return float(np.trace(self.weights.T @ K @ self.weights))


def tps_fit(src: np.ndarray, dst: np.ndarray, lam: float = 0.0) -> TpsWarp:
    """Solve the TPS interpolation system mapping src -> dst."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2 or src.shape != dst.shape:
        raise ValueError(f"control points must be matching (n, 2) arrays, "
                         f"got {src.shape} and {dst.shape}")
    n = len(src)
    if n < 3:
        raise ValueError("TPS needs at least 3 control points")
    if len(np.unique(src.round(9), axis=0)) != n:
        raise ValueError("duplicate source control points make the system singular")

    K = _pairwise_k(src, src) + lam * np.eye(n)
    P = np.column_stack([np.ones(n), src])
    A = np.zeros((n + 3, n + 3))
    A[:n, :n] = K
    A[:n, n:] = P
    A[n:, :n] = P.T
    b = np.zeros((n + 3, 2))
    b[:n] = dst
    try:
        sol = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular TPS system (collinear control points?)") from exc
    if not np.all(np.isfinite(sol)):
        raise ValueError("singular TPS system (collinear control points?)")
    return TpsWarp(src=src, dst=dst, weights=sol[:n], affine=sol[n:], lam=lam)


def tps_warp_image(img: np.ndarray, warp: TpsWarp, background: float = 0.0) -> np.ndarray:
    """Backward-warp an image (grayscale or RGB) through the fitted warp."""
    img = np.asarray(img, dtype=np.float64)
    gray = img.ndim == 2
    chans = img[..., None] if gray else img
    H, W = chans.shape[:2]

    rows, cols = np.meshgrid(np.arange(H, dtype=np.float64),
                             np.arange(W, dtype=np.float64), indexing="ij")
    grid = np.column_stack([rows.ravel(), cols.ravel()])
    src_pts = warp.inverse().transform(grid)

    eps = 1e-6  # numerical slack so exact-boundary samples stay inside
    r = src_pts[:, 0].reshape(H, W)
    c = src_pts[:, 1].reshape(H, W)
    valid = (r >= -eps) & (r <= H - 1 + eps) & (c >= -eps) & (c <= W - 1 + eps)
    r0 = np.clip(np.floor(r).astype(int), 0, H - 2)
    c0 = np.clip(np.floor(c).astype(int), 0, W - 2)
    fr = np.clip(r - r0, 0.0, 1.0)[..., None]
    fc = np.clip(c - c0, 0.0, 1.0)[..., None]

    out = (chans[r0, c0] * (1 - fr) * (1 - fc)
           + chans[r0 + 1, c0] * fr * (1 - fc)
           + chans[r0, c0 + 1] * (1 - fr) * fc
           + chans[r0 + 1, c0 + 1] * fr * fc)
    out[~valid] = background
    return out[..., 0] if gray else out
