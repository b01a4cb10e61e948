"""Template cube surface grids.

All parts of a category share one template: a unit cube surface subdivided
into an n x n quad grid per face, V = 6n^2 + 2 vertices, watertight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PartMesh:
    """Cube-topology surface mesh; connectivity lives on the template."""

    vertices: np.ndarray            # (V, 3) float64
    quads: np.ndarray               # (Q, 4) int32, outward-wound
    template_id: str = "cube"

    def copy(self) -> "PartMesh":
        return PartMesh(self.vertices.copy(), self.quads, self.template_id)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        """(center, half_extents) of the axis-aligned bounding box."""
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return (lo + hi) / 2.0, (hi - lo) / 2.0


@dataclass
class Template:
    mesh: PartMesh
    n: int
    edges: np.ndarray = field(default=None)          # (E, 2) unique undirected
    neighbors: list = field(default=None)            # one-ring vertex ids

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_vertices


def make_template(n: int) -> Template:
    """Unit cube surface with an n x n grid per face (V = 6n^2 + 2)."""
    if n < 1:
        raise ValueError(f"grid resolution must be >= 1, got {n}")

    # Integer lattice keys in [0, n]^3 make shared face borders dedup exactly.
    key_to_id: dict[tuple[int, int, int], int] = {}
    verts: list[tuple[int, int, int]] = []

    def vid(key):
        if key not in key_to_id:
            key_to_id[key] = len(verts)
            verts.append(key)
        return key_to_id[key]

    quads = []
    # Faces: (fixed axis, fixed value, axis u, axis v, flip for outward winding)
    faces = [
        (2, n, 0, 1, False), (2, 0, 0, 1, True),   # z = +/- 0.5
        (1, n, 0, 2, True), (1, 0, 0, 2, False),   # y = +/- 0.5
        (0, n, 1, 2, False), (0, 0, 1, 2, True),   # x = +/- 0.5
    ]
    for axis, value, ua, va, flip in faces:
        for i in range(n):
            for j in range(n):
                corners = []
                for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    key = [0, 0, 0]
                    key[axis] = value
                    key[ua] = i + di
                    key[va] = j + dj
                    corners.append(vid(tuple(key)))
                if flip:
                    corners = corners[::-1]
                quads.append(corners)

    coords = np.asarray(verts, dtype=np.float64) / n - 0.5
    mesh = PartMesh(coords, np.asarray(quads, dtype=np.int32), template_id=f"cube{n}")

    edge_set = set()
    for q in mesh.quads:
        for a, b in ((q[0], q[1]), (q[1], q[2]), (q[2], q[3]), (q[3], q[0])):
            edge_set.add((min(a, b), max(a, b)))
    edges = np.asarray(sorted(edge_set), dtype=np.int32)

    neighbors = [[] for _ in range(len(coords))]
    for a, b in edges:
        neighbors[a].append(int(b))
        neighbors[b].append(int(a))
    neighbors = [sorted(nb) for nb in neighbors]

    return Template(mesh=mesh, n=n, edges=edges, neighbors=neighbors)


def triangulate(quads: np.ndarray) -> np.ndarray:
    """Fixed quad split (0,1,2) + (0,2,3) for deterministic rasterization."""
    t1 = quads[:, [0, 1, 2]]
    t2 = quads[:, [0, 2, 3]]
    return np.concatenate([t1, t2], axis=0).astype(np.int32)
