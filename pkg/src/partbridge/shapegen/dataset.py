"""Procedural dataset: the N^M interchange closure of sampled parts.

Every dataset is a directory: manifest.json, images/ (12 grayscale PNGs
per shape), parts.npz (unique sampled part meshes) and features.npz
(their deformation features). Shape attributes split across the manifest
(topology vectors) and features (geometry); PartVAE codes are derived
later by the encoder stage.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..imageio import load_png, save_png
from ..seeds import derive_seed, rng_for
from .compose import ShapeInstance, build_topo, compose_triangles, part_names
from .deform import sample_part
from .template import Template, make_template
from .render import N_VIEWS, render


def plan_combos(N: int, M: int, n_c: int) -> list[tuple[int, ...]]:
    """Deterministic part-source tuples: M interchanged slots, rest fixed."""
    if N < 2:
        raise ValueError("need at least two base shapes per part")
    if M > n_c:
        raise ValueError(f"cannot interchange {M} parts of a {n_c}-part category")
    combos = []
    for combo in itertools.product(range(N), repeat=M):
        combos.append(tuple(combo) + (0,) * (n_c - M))
    return combos


def build_dataset(out_dir, category: str, template_n: int, N: int, M: int,
                  image_size: int, seed: int) -> dict:
    """Sample parts, compose N^M shapes, render 12 views each."""
    out_dir = Path(out_dir)
    slots = part_names(category)
    n_c = len(slots)
    combos = plan_combos(N, M, n_c)
    template = make_template(template_n)

    parts: dict[str, np.ndarray] = {}
    features: dict[str, np.ndarray] = {}
    from .feature import extract_feature  # local import to avoid cycle
    for slot in slots:
        for src in range(N):
            mesh = sample_part(template, category, slot, derive_seed(seed, "part", slot, src))
            parts[f"{slot}_{src}"] = mesh.vertices
            features[f"{slot}_{src}"] = extract_feature(mesh, template).flat()

    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    np.savez(out_dir / "parts.npz", **parts)
    np.savez(out_dir / "features.npz", **features)

    ids = [f"s{idx:05d}" for idx in range(len(combos))]
    perm = rng_for(seed, "split").permutation(len(ids))
    n_train = int(round(0.8 * len(ids)))
    split = {ids[i]: ("train" if rank < n_train else "test")
             for rank, i in enumerate(perm)}

    records = []
    for shape_id, sources in zip(ids, combos):
        meshes = [
            _mesh_from_verts(parts[f"{slot}_{src}"], template)
            for slot, src in zip(slots, sources)
        ]
        topo = build_topo(category, meshes)
        shape = ShapeInstance(category, meshes, topo)
        verts, tris = compose_triangles(shape)
        images = []
        for k in range(N_VIEWS):
            rel = f"images/{shape_id}_k{k:02d}.png"
            save_png(out_dir / rel, render(verts, tris, k, image_size))
            images.append({"path": rel, "yaw": k})
        records.append({
            "id": shape_id,
            "sources": list(sources),
            "split": split[shape_id],
            "topo": topo.tolist(),
            "images": images,
        })

    manifest = {
        "category": category,
        "parts": slots,
        "n_c": n_c,
        "V": template.n_vertices,
        "template_n": template_n,
        "N": N,
        "M": M,
        "image_size": image_size,
        "seed": seed,
        "records": records,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest))
    return manifest


def _mesh_from_verts(verts: np.ndarray, template: Template):
    from .template import PartMesh
    return PartMesh(np.asarray(verts, dtype=np.float64), template.mesh.quads,
                    template.mesh.template_id)


@dataclass
class Dataset:
    """Loaded dataset directory with lazy image access."""

    root: Path
    manifest: dict
    parts: dict
    features: dict
    template: Template

    @staticmethod
    def load(root) -> "Dataset":
        root = Path(root)
        manifest = json.loads((root / "manifest.json").read_text())
        parts = dict(np.load(root / "parts.npz"))
        features = dict(np.load(root / "features.npz"))
        template = make_template(manifest["template_n"])
        return Dataset(root, manifest, parts, features, template)

    @property
    def records(self) -> list[dict]:
        return self.manifest["records"]

    def split_records(self, split: str) -> list[dict]:
        return [r for r in self.records if r["split"] == split]

    @property
    def slots(self) -> list[str]:
        return self.manifest["parts"]

    def part_mesh(self, slot: str, src: int):
        return _mesh_from_verts(self.parts[f"{slot}_{src}"], self.template)

    def part_feature_flat(self, slot: str, src: int) -> np.ndarray:
        return self.features[f"{slot}_{src}"]

    def shape_instance(self, record: dict) -> ShapeInstance:
        meshes = [self.part_mesh(slot, src)
                  for slot, src in zip(self.slots, record["sources"])]
        return ShapeInstance(self.manifest["category"], meshes,
                             np.asarray(record["topo"], dtype=np.float64))

    def image(self, record: dict, yaw: int) -> np.ndarray:
        return load_png(self.root / record["images"][yaw]["path"])

    def image_key(self, record: dict, yaw: int) -> str:
        return f"{record['id']}_k{yaw:02d}"
