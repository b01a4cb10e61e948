"""Procedural part-based shapes: templates, features, composition, rendering."""

from .compose import (
    CATEGORY_SLOTS,
    ShapeInstance,
    build_topo,
    compose_shape,
    compose_triangles,
    part_names,
    resize_part,
    topo_view,
    union_bbox,
)
from .dataset import Dataset, build_dataset, plan_combos
from .deform import DeformParams, apply_deform, sample_deform_params, sample_part
from .feature import (
    FeatureSolveOp,
    PartFeature,
    build_solve_operator,
    extract_feature,
    reconstruct_vertices,
)
from .meshio import load_obj, save_obj
from .pointcloud import chamfer, sample_surface
from .render import N_VIEWS, render
from .template import PartMesh, Template, make_template, triangulate

__all__ = [
    "CATEGORY_SLOTS", "ShapeInstance", "build_topo", "compose_shape",
    "compose_triangles", "part_names", "resize_part", "topo_view", "union_bbox",
    "Dataset", "build_dataset", "plan_combos",
    "DeformParams", "apply_deform", "sample_deform_params", "sample_part",
    "FeatureSolveOp", "PartFeature", "build_solve_operator", "extract_feature",
    "reconstruct_vertices",
    "load_obj", "save_obj",
    "chamfer", "sample_surface",
    "N_VIEWS", "render",
    "PartMesh", "Template", "make_template", "triangulate",
]
