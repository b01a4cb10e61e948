"""Orthographic depth-shaded rendering at 12 yaw stops.

Pixel value is the normalized inverse depth of the nearest surface along
the view ray ((1 + p.d)/2 for unit view volume), background 0. The camera
framing is fixed to the [-1, 1]^2 screen window so all dataset shapes and
their resized variants stay inside.
"""

from __future__ import annotations

import numpy as np

N_VIEWS = 12


def yaw_angle(k: int) -> float:
    return np.deg2rad(30.0 * k)


def render(vertices: np.ndarray, triangles: np.ndarray, yaw_index: int,
           size: int = 64) -> np.ndarray:
    """Rasterize to a (size, size) float image in [0, 1]."""
    if not isinstance(yaw_index, (int, np.integer)) or not 0 <= int(yaw_index) < N_VIEWS:
        raise ValueError(f"yaw index must be an int in [0, {N_VIEWS}), got {yaw_index!r}")
    img = np.zeros((size, size), dtype=np.float64)
    if len(triangles) == 0:
        return img.astype(np.float32)

    theta = yaw_angle(int(yaw_index))
    d = np.array([np.sin(theta), 0.0, np.cos(theta)])      # toward camera
    right = np.array([np.cos(theta), 0.0, -np.sin(theta)])
    up = np.array([0.0, 1.0, 0.0])

    v = np.asarray(vertices, dtype=np.float64)
    sx = v @ right
    sy = v @ up
    depth = v @ d  # larger = nearer

    # continuous pixel coordinates of vertices
    px = (sx + 1.0) * 0.5 * size - 0.5
    py = (1.0 - sy) * 0.5 * size - 0.5

    zbuf = np.full((size, size), -np.inf)
    for tri in triangles:
        i0, i1, i2 = int(tri[0]), int(tri[1]), int(tri[2])
        x0, x1, x2 = px[i0], px[i1], px[i2]
        y0, y1, y2 = py[i0], py[i1], py[i2]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        lo_x = max(int(np.ceil(min(x0, x1, x2))), 0)
        hi_x = min(int(np.floor(max(x0, x1, x2))), size - 1)
        lo_y = max(int(np.ceil(min(y0, y1, y2))), 0)
        hi_y = min(int(np.floor(max(y0, y1, y2))), size - 1)
        if lo_x > hi_x or lo_y > hi_y:
            continue
        xs = np.arange(lo_x, hi_x + 1, dtype=np.float64)
        ys = np.arange(lo_y, hi_y + 1, dtype=np.float64)
        gx, gy = np.meshgrid(xs, ys)
        w0 = ((x1 - gx) * (y2 - gy) - (x2 - gx) * (y1 - gy)) / area
        w1 = ((x2 - gx) * (y0 - gy) - (x0 - gx) * (y2 - gy)) / area
        w2 = 1.0 - w0 - w1
        mask = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not mask.any():
            continue
        z = w0 * depth[i0] + w1 * depth[i1] + w2 * depth[i2]
        sub = zbuf[lo_y:hi_y + 1, lo_x:hi_x + 1]
        np.copyto(sub, z, where=mask & (z > sub))

    hit = np.isfinite(zbuf)
    img[hit] = np.clip((zbuf[hit] + 1.0) * 0.5, 0.0, 1.0)
    return img.astype(np.float32)
