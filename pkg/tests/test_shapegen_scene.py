"""Composition, resizing, rendering, surface sampling, Chamfer."""

import numpy as np
import pytest

from partbridge import shapegen as sg
from partbridge.shapegen.compose import TOPO_FIELDS


@pytest.fixture(scope="module")
def tpl():
    return sg.make_template(4)


def chair(tpl, seeds=(0, 1, 2)) -> sg.ShapeInstance:
    slots = sg.part_names("chair")
    meshes = [sg.sample_part(tpl, "chair", slot, s) for slot, s in zip(slots, seeds)]
    return sg.ShapeInstance("chair", meshes, sg.build_topo("chair", meshes))


# ---------------------------------------------------------------------------
# compose


def test_single_part_with_own_bbox_is_unchanged(tpl):
    part = sg.sample_part(tpl, "cup", "body", 0)
    center, he = part.bbox()
    topo = np.concatenate([[1.0], center, he])
    shape = sg.ShapeInstance("cup", [part], topo)
    verts, quads = sg.compose_shape(shape)
    np.testing.assert_allclose(verts, part.vertices, atol=1e-12)
    np.testing.assert_array_equal(quads, part.quads)


def test_all_nonexistent_gives_empty_mesh(tpl):
    shape = chair(tpl)
    shape.topo[0::TOPO_FIELDS] = 0.0
    verts, quads = sg.compose_shape(shape)
    assert verts.shape == (0, 3) and quads.shape == (0, 4)


def test_union_bbox_is_componentwise_hull(tpl):
    shape = chair(tpl)
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for k in range(3):
        _, c, h = sg.topo_view(shape.topo, k)
        lo = np.minimum(lo, c - h)
        hi = np.maximum(hi, c + h)
    center, he = sg.union_bbox(shape)
    np.testing.assert_allclose(center, (lo + hi) / 2)
    np.testing.assert_allclose(he, (hi - lo) / 2)
    # and the composed geometry fills exactly that hull
    verts, _ = sg.compose_shape(shape)
    np.testing.assert_allclose(verts.min(axis=0), lo, atol=1e-9)
    np.testing.assert_allclose(verts.max(axis=0), hi, atol=1e-9)


def test_existence_with_bad_extent_rejected(tpl):
    shape = chair(tpl)
    shape.topo[4] = -0.1
    with pytest.raises(ValueError):
        sg.compose_shape(shape)


# ---------------------------------------------------------------------------
# resize


def test_resize_identity_scales_nothing(tpl):
    shape = chair(tpl)
    out = sg.resize_part(shape, 0, (1.0, 1.0, 1.0))
    np.testing.assert_allclose(out.topo, shape.topo)
    np.testing.assert_allclose(out.part_meshes[0].vertices, shape.part_meshes[0].vertices)


def test_resize_scales_only_selected_bbox(tpl):
    shape = chair(tpl)
    out = sg.resize_part(shape, 0, (1.0, 1.5, 1.0))
    _, _, he0 = sg.topo_view(shape.topo, 0)
    _, _, he1 = sg.topo_view(out.topo, 0)
    np.testing.assert_allclose(he1, he0 * [1.0, 1.5, 1.0])
    for k in (1, 2):
        _, _, a = sg.topo_view(shape.topo, k)
        _, _, b = sg.topo_view(out.topo, k)
        np.testing.assert_array_equal(a, b)


def test_resize_composition_is_multiplicative(tpl):
    shape = chair(tpl)
    twice = sg.resize_part(sg.resize_part(shape, 1, (1.0, 1.2, 1.0)), 1, (1.0, 1.2, 1.0))
    once = sg.resize_part(shape, 1, (1.0, 1.44, 1.0))
    np.testing.assert_allclose(twice.topo, once.topo, rtol=1e-12)


def test_resize_rejects_bad_input(tpl):
    shape = chair(tpl)
    with pytest.raises(ValueError):
        sg.resize_part(shape, 5, (1.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        sg.resize_part(shape, 0, (0.0, 1.0, 1.0))
    gone = shape.copy()
    gone.topo[0] = 0.0
    with pytest.raises(ValueError):
        sg.resize_part(gone, 0, (1.0, 1.1, 1.0))


# ---------------------------------------------------------------------------
# render


def test_render_empty_mesh_is_black():
    img = sg.render(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32), 0, 32)
    assert img.shape == (32, 32)
    assert img.max() == 0.0


def test_render_rejects_out_of_range_view(tpl):
    verts, tris = sg.compose_triangles(chair(tpl))
    with pytest.raises(ValueError):
        sg.render(verts, tris, 12, 32)
    with pytest.raises(ValueError):
        sg.render(verts, tris, -1, 32)


def test_render_deterministic(tpl):
    verts, tris = sg.compose_triangles(chair(tpl))
    a = sg.render(verts, tris, 4, 64)
    b = sg.render(verts, tris, 4, 64)
    np.testing.assert_array_equal(a, b)
    assert 0.0 < a.max() <= 1.0


def test_symmetric_shape_mirrors_between_k3_and_k9(tpl):
    # kill the lateral-asymmetry terms so each part is x-mirror symmetric
    slots = sg.part_names("chair")
    meshes = []
    for slot, s in zip(slots, (0, 1, 2)):
        p = sg.sample_deform_params(7, "chair", slot, s)
        p.mix[0, :] = 0.0   # x no longer depends on y, z
        p.mix[1, 0] = 0.0   # y*(1 + a*x): drop the x term
        p.mix[2, 0] = 0.0   # z*(1 + a*x): drop the x term
        meshes.append(sg.sample_part(tpl, "chair", slot, 7, params=p))
    shape = sg.ShapeInstance("chair", meshes, sg.build_topo("chair", meshes))
    verts, tris = sg.compose_triangles(shape)
    img3 = sg.render(verts, tris, 3, 64)
    img9 = sg.render(verts, tris, 9, 64)
    mirrored = img9[:, ::-1]
    assert np.mean(np.abs(img3 - mirrored)) < 0.02  # rasterization tolerance


# ---------------------------------------------------------------------------
# sample_surface / chamfer


def test_sample_surface_zero_points(tpl):
    verts, tris = sg.compose_triangles(chair(tpl))
    assert sg.sample_surface(verts, tris, 0).shape == (0, 3)


def test_sample_surface_unit_square_centroid():
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    tris = sg.triangulate(np.array([[0, 1, 2, 3]], dtype=np.int32))
    pts = sg.sample_surface(verts, tris, 100_000, seed=3)
    np.testing.assert_allclose(pts.mean(axis=0)[:2], [0.5, 0.5], atol=1e-2)


def test_sample_surface_deterministic(tpl):
    verts, tris = sg.compose_triangles(chair(tpl))
    a = sg.sample_surface(verts, tris, 500, seed=11)
    b = sg.sample_surface(verts, tris, 500, seed=11)
    np.testing.assert_array_equal(a, b)


def test_sample_surface_empty_mesh_rejected():
    with pytest.raises(ValueError):
        sg.sample_surface(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32), 10)


def test_chamfer_identical_sets_zero():
    pts = np.random.default_rng(0).normal(size=(30, 3))
    assert sg.chamfer(pts, pts) == 0.0


def test_chamfer_two_singletons():
    assert sg.chamfer(np.array([[0.0, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]])) == 2.0


def test_chamfer_tree_equals_brute_force_exactly():
    rng = np.random.default_rng(42)
    for trial in range(20):
        A = rng.normal(size=(rng.integers(5, 50), 3))
        B = rng.normal(size=(rng.integers(5, 50), 3))
        assert sg.chamfer(A, B, accel="tree") == sg.chamfer(A, B, accel="brute")


def test_chamfer_symmetric_nonnegative():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(20, 3))
    B = rng.normal(size=(25, 3))
    assert sg.chamfer(A, B) == sg.chamfer(B, A)
    assert sg.chamfer(A, B) > 0.0


def test_chamfer_empty_rejected():
    with pytest.raises(ValueError):
        sg.chamfer(np.zeros((0, 3)), np.ones((3, 3)))
