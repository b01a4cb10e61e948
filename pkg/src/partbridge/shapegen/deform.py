"""Parametric part sampling: smooth deformations of the template cube.

The deformation is one simultaneous quadratic warp (each coordinate scaled
by an affine function of the other two: taper, lean, flare) followed by an
anisotropic scale. Quadratic axis-mixing warps keep edge midpoint secants
exact on the axis-aligned template grid, so the one-ring deformation
feature is lossless and the extract/reconstruct round trip is sharp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..seeds import rng_for
from .template import PartMesh, Template


@dataclass
class DeformParams:
    scale: np.ndarray    # (3,) per-axis scale
    mix: np.ndarray      # (3, 2) quadratic coefficients: x*(1+a*y+b*z), etc.

    @staticmethod
    def zero() -> "DeformParams":
        return DeformParams(scale=np.ones(3), mix=np.zeros((3, 2)))


def apply_deform(mesh: PartMesh, params: DeformParams) -> PartMesh:
    v = mesh.vertices
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    m = params.mix
    warped = np.stack([
        x * (1.0 + m[0, 0] * y + m[0, 1] * z),
        y * (1.0 + m[1, 0] * x + m[1, 1] * z),
        z * (1.0 + m[2, 0] * x + m[2, 1] * y),
    ], axis=1)
    return PartMesh(warped * params.scale, mesh.quads, mesh.template_id)


# Per-slot parameter ranges (scale low/high, mix magnitude). The mix bound
# keeps 1 + m*coord well above zero everywhere on the unit cube.
_SLOT_RANGES = {
    "default": ((0.7, 1.4), 0.35),
}


def sample_deform_params(seed: int, *labels, slot: str = "default") -> DeformParams:
    rng = rng_for(seed, "deform", slot, *labels)
    (lo, hi), mix_mag = _SLOT_RANGES["default"]
    scale = rng.uniform(lo, hi, size=3)
    mix = rng.uniform(-mix_mag, mix_mag, size=(3, 2))
    return DeformParams(scale=scale, mix=mix)


def sample_part(template: Template, category: str, slot: str, seed: int,
                params: DeformParams | None = None) -> PartMesh:
    """Deterministic part draw for (category, slot, seed)."""
    if params is None:
        params = sample_deform_params(seed, category, slot)
    return apply_deform(template.mesh, params)
