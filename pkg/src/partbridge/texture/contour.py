"""Suzuki-Abe border following on binary masks.

Returns every outer and hole border with the full parent hierarchy, in
deterministic row-major discovery order. Points are (row, col) pixels in
following order; consecutive points are 8-adjacent and the loop closes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# 8-neighborhood, index increasing counterclockwise (rows grow downward)
_DIRS = [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)]
_DIR_OF = {d: k for k, d in enumerate(_DIRS)}


@dataclass
class Contour:
    points: np.ndarray       # (n, 2) int (row, col)
    kind: str                # "outer" | "hole"
    parent: int              # index into the returned list, -1 for top level

    def __len__(self):
        return len(self.points)


def _follow(f: np.ndarray, i: int, j: int, i2: int, j2: int, nbd: int) -> list:
    start_dir = _DIR_OF[(i2 - i, j2 - j)]
    found = -1
    for k in range(8):
        d = (start_dir - k) % 8  # clockwise scan
        ni, nj = i + _DIRS[d][0], j + _DIRS[d][1]
        if f[ni, nj] != 0:
            found = d
            break
    if found < 0:
        f[i, j] = -nbd
        return [(i, j)]

    i1, j1 = i + _DIRS[found][0], j + _DIRS[found][1]
    i2, j2 = i1, j1
    i3, j3 = i, j
    points = [(i, j)]
    while True:
        prev_dir = _DIR_OF[(i2 - i3, j2 - j3)]
        east_seen_zero = False
        i4 = j4 = -1
        for k in range(1, 9):
            d = (prev_dir + k) % 8  # counterclockwise scan
            ni, nj = i3 + _DIRS[d][0], j3 + _DIRS[d][1]
            if f[ni, nj] != 0:
                i4, j4 = ni, nj
                break
            if ni == i3 and nj == j3 + 1:
                east_seen_zero = True
        if east_seen_zero:
            f[i3, j3] = -nbd
        elif f[i3, j3] == 1:
            f[i3, j3] = nbd
        if i4 == i and j4 == j and i3 == i1 and j3 == j1:
            break
        i2, j2 = i3, j3
        i3, j3 = i4, j4
        points.append((i3, j3))
    return points


def trace_contours(mask: np.ndarray) -> list[Contour]:
    """All borders of a binary mask with their hierarchy."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    f = np.zeros((mask.shape[0] + 2, mask.shape[1] + 2), dtype=np.int32)
    f[1:-1, 1:-1] = (mask > 0).astype(np.int32)

    # border id 1 is the frame, treated as a hole border
    kinds = {1: "hole"}
    parents = {1: 0}
    contours_points = {}
    order = []
    nbd = 1
    for i in range(1, f.shape[0] - 1):
        lnbd = 1
        for j in range(1, f.shape[1] - 1):
            fij = f[i, j]
            if fij == 0:
                continue
            is_outer = fij == 1 and f[i, j - 1] == 0
            is_hole = fij >= 1 and f[i, j + 1] == 0
            if is_outer or is_hole:
                if is_outer:
                    start = (i, j - 1)
                    kind = "outer"
                else:
                    start = (i, j + 1)
                    kind = "hole"
                    if fij > 1:
                        lnbd = fij
                nbd += 1
                if kinds[lnbd] == kind:
                    parent = parents[lnbd]
                else:
                    parent = lnbd
                kinds[nbd] = kind
                parents[nbd] = parent
                contours_points[nbd] = _follow(f, i, j, start[0], start[1], nbd)
                order.append(nbd)
            if f[i, j] != 1 and f[i, j] != 0:
                lnbd = abs(f[i, j])

    id_to_idx = {bid: idx for idx, bid in enumerate(order)}
    out = []
    for bid in order:
        pts = np.asarray(contours_points[bid], dtype=np.int64) - 1  # unpad
        parent_bid = parents[bid]
        out.append(Contour(points=pts, kind=kinds[bid],
                           parent=id_to_idx.get(parent_bid, -1)))
    return out


def sample_contour_points(contour: Contour, n: int) -> np.ndarray:
    """n arc-length-uniform samples starting at the contour's start point."""
    if n < 1:
        raise ValueError("need at least one sample")
    pts = contour.points.astype(np.float64)
    if len(pts) == 1:
        return np.repeat(pts, n, axis=0)
    closed = np.vstack([pts, pts[:1]])
    seglen = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seglen)])  # arc position of each vertex
    total = cum[-1]
    targets = np.arange(n) * total / n
    # nearest vertex (cyclically) to each target arc position
    idx = np.searchsorted(cum, targets, side="left")
    idx = np.clip(idx, 0, len(pts))
    prev = np.clip(idx - 1, 0, len(pts))
    d_here = np.abs(cum[np.minimum(idx, len(pts))] - targets)
    d_prev = np.abs(cum[prev] - targets)
    choice = np.where(d_prev <= d_here, prev, idx) % len(pts)
    return pts[choice]
