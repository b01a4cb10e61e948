"""Category layouts, topology attributes, shape composition and resizing.

A shape is a list of sampled part meshes plus a topology attribute vector:
7 scalars per part slot (existence flag, bbox center, bbox half-extents).
Composition rigidly translates/scales every existing part so its bounding
box matches the topology entry; the part's intrinsic geometry supplies all
variation inside the box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .template import PartMesh, triangulate

TOPO_FIELDS = 7  # exist, cx, cy, cz, hx, hy, hz

# Axis convention: y is up (the yaw axis), x lateral, z depth (front at +z).
# Gains shrink raw sampled-part bounding boxes to slot-appropriate sizes so
# every composed shape (including resized variants) fits the render volume.
CATEGORY_SLOTS: dict[str, list[str]] = {
    "chair": ["back", "seat", "legs"],
    "cup": ["body", "grip"],
}

_SLOT_GAINS = {
    ("chair", "back"): (0.44, 0.30, 0.08),
    ("chair", "seat"): (0.46, 0.16, 0.46),
    ("chair", "legs"): (0.38, 0.34, 0.38),
    ("cup", "body"): (0.40, 0.40, 0.40),
    ("cup", "grip"): (0.10, 0.22, 0.16),
}


def part_names(category: str) -> list[str]:
    if category not in CATEGORY_SLOTS:
        raise ValueError(f"unknown category {category!r}")
    return CATEGORY_SLOTS[category]


@dataclass
class ShapeInstance:
    """Sampled parts plus their arrangement; the unit every edit acts on."""

    category: str
    part_meshes: list  # list[PartMesh], one per slot
    topo: np.ndarray   # (7 * n_c,)

    @property
    def n_parts(self) -> int:
        return len(self.part_meshes)

    def copy(self) -> "ShapeInstance":
        return ShapeInstance(self.category, [p.copy() for p in self.part_meshes],
                             self.topo.copy())


def topo_view(topo: np.ndarray, k: int) -> tuple[float, np.ndarray, np.ndarray]:
    """(exist, center, half_extents) slice of part k."""
    base = TOPO_FIELDS * k
    return float(topo[base]), topo[base + 1:base + 4], topo[base + 4:base + 7]


def build_topo(category: str, part_meshes: list) -> np.ndarray:
    """Slot-placement rules: seat/body centered, other parts attached."""
    slots = part_names(category)
    if len(part_meshes) != len(slots):
        raise ValueError(f"{category} needs {len(slots)} parts, got {len(part_meshes)}")
    he = {}
    for slot, mesh in zip(slots, part_meshes):
        _, half = mesh.bbox()
        he[slot] = half * np.asarray(_SLOT_GAINS[(category, slot)])

    centers = {}
    if category == "chair":
        centers["seat"] = np.zeros(3)
        centers["back"] = np.array([
            0.0, he["seat"][1] + he["back"][1], -(he["seat"][2] - he["back"][2])])
        centers["legs"] = np.array([0.0, -(he["seat"][1] + he["legs"][1]), 0.0])
    elif category == "cup":
        centers["body"] = np.zeros(3)
        centers["grip"] = np.array([he["body"][0] + he["grip"][0], 0.0, 0.0])

    topo = np.zeros(TOPO_FIELDS * len(slots))
    for k, slot in enumerate(slots):
        base = TOPO_FIELDS * k
        topo[base] = 1.0
        topo[base + 1:base + 4] = centers[slot]
        topo[base + 4:base + 7] = he[slot]
    return topo


def place_part(mesh: PartMesh, center: np.ndarray, half_extents: np.ndarray) -> np.ndarray:
    """Translate/scale vertices so the part bbox matches (center, he)."""
    c0, h0 = mesh.bbox()
    if np.any(h0 < 1e-9):
        raise ValueError("degenerate part bounding box")
    return center + (mesh.vertices - c0) * (half_extents / h0)


def compose_shape(shape: ShapeInstance) -> tuple[np.ndarray, np.ndarray]:
    """(vertices, quads) of the composed shape; parts with exist=0 omitted."""
    verts_out = []
    quads_out = []
    offset = 0
    for k, mesh in enumerate(shape.part_meshes):
        exist, center, he = topo_view(shape.topo, k)
        if exist == 0.0:
            continue
        if np.any(he <= 0.0):
            raise ValueError(f"part {k} exists but has nonpositive extent {he}")
        verts_out.append(place_part(mesh, center, he))
        quads_out.append(mesh.quads + offset)
        offset += mesh.n_vertices
    if not verts_out:
        return np.zeros((0, 3)), np.zeros((0, 4), dtype=np.int32)
    return np.concatenate(verts_out), np.concatenate(quads_out)


def compose_triangles(shape: ShapeInstance) -> tuple[np.ndarray, np.ndarray]:
    verts, quads = compose_shape(shape)
    return verts, triangulate(quads) if len(quads) else np.zeros((0, 3), dtype=np.int32)


def union_bbox(shape: ShapeInstance) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise hull over existing parts' topology boxes."""
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for k in range(shape.n_parts):
        exist, center, he = topo_view(shape.topo, k)
        if exist == 0.0:
            continue
        lo = np.minimum(lo, center - he)
        hi = np.maximum(hi, center + he)
    return (lo + hi) / 2.0, (hi - lo) / 2.0


def resize_part(shape: ShapeInstance, part_index: int, factors) -> ShapeInstance:
    """Scale one part about its bbox center; other parts untouched."""
    factors = np.asarray(factors, dtype=np.float64)
    if np.any(factors <= 0.0):
        raise ValueError(f"scale factors must be positive, got {factors}")
    if not 0 <= part_index < shape.n_parts:
        raise ValueError(f"part index {part_index} out of range")
    exist, _, _ = topo_view(shape.topo, part_index)
    if exist == 0.0:
        raise ValueError(f"part {part_index} does not exist in this shape")
    out = shape.copy()
    mesh = out.part_meshes[part_index]
    c0, _ = mesh.bbox()
    mesh.vertices = c0 + (mesh.vertices - c0) * factors
    base = TOPO_FIELDS * part_index
    out.topo[base + 4:base + 7] = out.topo[base + 4:base + 7] * factors
    return out
