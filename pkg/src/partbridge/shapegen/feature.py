"""Per-vertex deformation features and their inverse transform.

A part is encoded relative to its template by one 3x3 matrix per vertex:
the least-squares deformation gradient over the vertex one-ring. The
inverse transform recovers vertex coordinates from the feature by a single
sparse linear least-squares solve with one anchored vertex. Because the
solve is linear in the feature, a dense solve operator can be precomputed
per template and used as a differentiable matrix inside training losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from .template import PartMesh, Template

TIKHONOV = 1e-8
DEGENERATE_TOL = 1e-10


@dataclass
class PartFeature:
    """Stored per vertex; equals the identity block for an undeformed part."""

    matrices: np.ndarray  # (V, 3, 3)

    @property
    def n_vertices(self) -> int:
        return int(self.matrices.shape[0])

    def flat(self) -> np.ndarray:
        """Length-9V vector, vertex-major, each block row-major."""
        return self.matrices.reshape(-1).copy()

    def as_9xv(self) -> np.ndarray:
        """9 x V layout: column i is vertex i's 3x3 block, row-major."""
        return self.matrices.reshape(self.n_vertices, 9).T.copy()

    @staticmethod
    def from_flat(vec: np.ndarray, n_vertices: int) -> "PartFeature":
        if vec.size != 9 * n_vertices:
            raise ValueError(f"feature length {vec.size} != 9*{n_vertices}")
        return PartFeature(np.asarray(vec, dtype=np.float64).reshape(n_vertices, 3, 3))

    @staticmethod
    def identity(n_vertices: int) -> "PartFeature":
        m = np.broadcast_to(np.eye(3), (n_vertices, 3, 3)).copy()
        return PartFeature(m)


def extract_feature(part: PartMesh, template: Template,
                    report: dict | None = None) -> PartFeature:
    """One-ring LS deformation gradient of `part` against its template.

    Rank-deficient rings (every face-interior vertex of a surface grid has
    a planar one-ring) are completed by a Tikhonov pull toward the global
    affine fit of the whole mesh, which keeps identity, uniform-scale and
    any affine deformation exact per block.
    """
    v = np.asarray(part.vertices, dtype=np.float64)
    vt = template.mesh.vertices
    if v.shape != vt.shape:
        raise ValueError(f"part has {v.shape[0]} vertices, template {vt.shape[0]}")
    V = v.shape[0]
    edges = template.edges
    e = v[edges[:, 0]] - v[edges[:, 1]]       # deformed edge vectors
    et = vt[edges[:, 0]] - vt[edges[:, 1]]    # template edge vectors

    # Sum e et^T and et et^T over the one-ring of every vertex; the outer
    # products are sign-invariant so each edge adds the same term at both ends.
    cross = np.einsum("ki,kj->kij", e, et)
    gram = np.einsum("ki,kj->kij", et, et)
    C = np.zeros((V, 3, 3))
    G = np.zeros((V, 3, 3))
    np.add.at(C, edges[:, 0], cross)
    np.add.at(C, edges[:, 1], cross)
    np.add.at(G, edges[:, 0], gram)
    np.add.at(G, edges[:, 1], gram)

    if report is not None:
        eigs = np.linalg.eigvalsh(G)
        report["degenerate_vertices"] = np.nonzero(eigs[:, 0] < DEGENERATE_TOL)[0].tolist()

    # Whole-mesh affine fit (always rank 3 on a 3D-spanning template).
    affine = cross.sum(axis=0) @ np.linalg.inv(gram.sum(axis=0))
    D = (C + TIKHONOV * affine) @ np.linalg.inv(G + TIKHONOV * np.eye(3))
    if not np.all(np.isfinite(D)):
        raise FloatingPointError("extract_feature produced non-finite blocks")
    return PartFeature(D)


def _edge_targets(feature: PartFeature, template: Template) -> np.ndarray:
    """g_ij = 0.5 (D_i + D_j) (t_i - t_j) for every template edge."""
    edges = template.edges
    vt = template.mesh.vertices
    et = vt[edges[:, 0]] - vt[edges[:, 1]]
    D = feature.matrices
    davg = 0.5 * (D[edges[:, 0]] + D[edges[:, 1]])
    return np.einsum("kij,kj->ki", davg, et)


def _laplacian(template: Template) -> sp.csr_matrix:
    V = template.n_vertices
    edges = template.edges
    rows = np.concatenate([edges[:, 0], edges[:, 1], edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0], edges[:, 0], edges[:, 1]])
    vals = np.concatenate([-np.ones(len(edges)), -np.ones(len(edges)),
                           np.ones(len(edges)), np.ones(len(edges))])
    return sp.csr_matrix((vals, (rows, cols)), shape=(V, V))


def reconstruct_vertices(feature: PartFeature, template: Template,
                         anchor_index: int = 0,
                         anchor_pos: np.ndarray | None = None) -> PartMesh:
    """Invert the feature: sparse LS over edge equations, anchor fixed."""
    if not np.all(np.isfinite(feature.matrices)):
        raise FloatingPointError("non-finite feature")
    V = template.n_vertices
    if feature.n_vertices != V:
        raise ValueError(f"feature V={feature.n_vertices} != template V={V}")
    if anchor_pos is None:
        anchor_pos = template.mesh.vertices[anchor_index]
    anchor_pos = np.asarray(anchor_pos, dtype=np.float64)

    g = _edge_targets(feature, template)
    edges = template.edges
    div = np.zeros((V, 3))
    np.add.at(div, edges[:, 0], g)
    np.add.at(div, edges[:, 1], -g)

    L = _laplacian(template)
    keep = np.arange(V) != anchor_index
    Lk = L[keep][:, keep].tocsc()
    rhs = div[keep] - L[keep][:, [anchor_index]].toarray() * anchor_pos[None, :]
    solve = factorized(Lk)
    out = np.empty((V, 3))
    out[anchor_index] = anchor_pos
    for c in range(3):
        out[keep, c] = solve(np.ascontiguousarray(rhs[:, c]))
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("reconstruction solve diverged")
    return PartMesh(out, template.mesh.quads, template.mesh.template_id)


@dataclass
class FeatureSolveOp:
    """Dense form of the inverse transform for one (template, anchor).

    vertices_flat = flat_feature @ matrix.T + offset, with vertex-major
    flattening on both sides. Linear in the feature, so it doubles as the
    exact Jacobian when used inside training losses.
    """

    matrix: np.ndarray        # (3V, 9V) float64
    offset: np.ndarray        # (3V,) anchor contribution
    anchor_index: int

    def apply_flat(self, flat_feature: np.ndarray) -> np.ndarray:
        return flat_feature @ self.matrix.T + self.offset


def build_solve_operator(template: Template, anchor_index: int = 0,
                         anchor_pos: np.ndarray | None = None) -> FeatureSolveOp:
    """Precompute the dense solve operator (desk-size templates only)."""
    V = template.n_vertices
    if anchor_pos is None:
        anchor_pos = template.mesh.vertices[anchor_index]
    anchor_pos = np.asarray(anchor_pos, dtype=np.float64)
    edges = template.edges
    vt = template.mesh.vertices
    et = vt[edges[:, 0]] - vt[edges[:, 1]]

    # div[:, c] = M @ f_c where f_c stacks row c of every vertex block.
    rows, cols, vals = [], [], []
    for k, (a, b) in enumerate(edges):
        for m in range(3):
            half = 0.5 * et[k, m]
            rows += [a, a, b, b]
            cols += [3 * a + m, 3 * b + m, 3 * a + m, 3 * b + m]
            vals += [half, half, -half, -half]
    M = sp.csr_matrix((vals, (rows, cols)), shape=(V, 3 * V))

    L = _laplacian(template)
    keep = np.arange(V) != anchor_index
    Lk = L[keep][:, keep].tocsc()
    solve = factorized(Lk)

    Mk = M[keep].toarray()
    Kc = np.column_stack([solve(np.ascontiguousarray(Mk[:, j])) for j in range(3 * V)])
    anchor_col = -L[keep][:, [anchor_index]].toarray().ravel()
    ka = solve(np.ascontiguousarray(anchor_col))

    keep_ids = np.nonzero(keep)[0]
    big = np.zeros((3 * V, 9 * V))
    offset = np.zeros(3 * V)
    for c in range(3):
        # feature column layout: entry (vertex j, block row c, block col m) = 9j + 3c + m
        fcols = (9 * np.arange(V)[:, None] + 3 * c + np.arange(3)[None, :]).reshape(-1)
        big[np.ix_(3 * keep_ids + c, fcols)] = Kc
        offset[3 * keep_ids + c] = ka * anchor_pos[c]
        offset[3 * anchor_index + c] = anchor_pos[c]
    return FeatureSolveOp(matrix=big, offset=offset, anchor_index=anchor_index)
