"""Template, deformation features and the inverse transform."""

import numpy as np
import pytest

from partbridge import shapegen as sg


@pytest.fixture(scope="module")
def tpl():
    return sg.make_template(4)


def test_template_vertex_counts():
    assert sg.make_template(1).n_vertices == 8
    assert sg.make_template(4).n_vertices == 98
    assert sg.make_template(25).n_vertices == 3752  # 6 * 25^2 + 2


def test_template_rejects_zero():
    with pytest.raises(ValueError):
        sg.make_template(0)


def test_template_is_watertight(tpl):
    # every edge is shared by exactly two quads
    from collections import Counter
    counts = Counter()
    for q in tpl.mesh.quads:
        for a, b in ((q[0], q[1]), (q[1], q[2]), (q[2], q[3]), (q[3], q[0])):
            counts[(min(a, b), max(a, b))] += 1
    assert set(counts.values()) == {2}
    assert len(counts) == len(tpl.edges)
    # all vertices on the unit cube surface
    assert np.abs(tpl.mesh.vertices).max() == pytest.approx(0.5)


def test_sample_part_zero_params_is_template(tpl):
    part = sg.sample_part(tpl, "chair", "seat", 0, params=sg.DeformParams.zero())
    np.testing.assert_array_equal(part.vertices, tpl.mesh.vertices)


def test_sample_part_scale_doubles_one_axis(tpl):
    params = sg.DeformParams(scale=np.array([2.0, 1.0, 1.0]), mix=np.zeros((3, 2)))
    part = sg.sample_part(tpl, "chair", "seat", 0, params=params)
    _, he = part.bbox()
    np.testing.assert_allclose(he, [1.0, 0.5, 0.5])


def test_sample_part_deterministic(tpl):
    a = sg.sample_part(tpl, "chair", "back", 7)
    b = sg.sample_part(tpl, "chair", "back", 7)
    np.testing.assert_array_equal(a.vertices, b.vertices)


def test_extract_identity_blocks(tpl):
    f = sg.extract_feature(tpl.mesh, tpl)
    np.testing.assert_allclose(f.matrices, np.broadcast_to(np.eye(3), f.matrices.shape),
                               atol=1e-12)


def test_extract_uniform_scale_blocks(tpl):
    part = tpl.mesh.copy()
    part.vertices = part.vertices * 1.3
    f = sg.extract_feature(part, tpl)
    np.testing.assert_allclose(f.matrices, 1.3 * np.broadcast_to(np.eye(3), f.matrices.shape),
                               atol=1e-10)


def test_extract_flags_planar_rings(tpl):
    report = {}
    sg.extract_feature(tpl.mesh, tpl, report)
    # face-interior vertices have planar one-rings; corners are full rank
    assert len(report["degenerate_vertices"]) > 0


def test_feature_layout_9xv(tpl):
    part = sg.sample_part(tpl, "chair", "back", 1)
    f = sg.extract_feature(part, tpl)
    nine = f.as_9xv()
    assert nine.shape == (9, 98)
    np.testing.assert_array_equal(nine[:, 5], f.matrices[5].reshape(9))
    back = sg.PartFeature.from_flat(f.flat(), 98)
    np.testing.assert_array_equal(back.matrices, f.matrices)


def test_feature_length_mismatch(tpl):
    with pytest.raises(ValueError):
        sg.PartFeature.from_flat(np.zeros(9 * 97), 98)


def test_reconstruct_identity_feature_gives_template(tpl):
    f = sg.PartFeature.identity(98)
    rec = sg.reconstruct_vertices(f, tpl, 0, tpl.mesh.vertices[0])
    np.testing.assert_allclose(rec.vertices, tpl.mesh.vertices, atol=1e-10)


def test_reconstruct_scaled_identity_feature(tpl):
    s = 1.4
    f = sg.PartFeature(s * np.broadcast_to(np.eye(3), (98, 3, 3)).copy())
    rec = sg.reconstruct_vertices(f, tpl, 0, s * tpl.mesh.vertices[0])
    np.testing.assert_allclose(rec.vertices, s * tpl.mesh.vertices, atol=1e-10)


def test_round_trip_50_random_parts(tpl):
    worst = 0.0
    for seed in range(50):
        part = sg.sample_part(tpl, "chair", ["back", "seat", "legs"][seed % 3], seed)
        f = sg.extract_feature(part, tpl)
        rec = sg.reconstruct_vertices(f, tpl, 0, part.vertices[0])
        worst = max(worst, float(np.abs(rec.vertices - part.vertices).max()))
    assert worst < 1e-5


def test_solve_operator_matches_sparse_solve(tpl):
    op = sg.build_solve_operator(tpl, 0)
    part = sg.sample_part(tpl, "chair", "legs", 3)
    f = sg.extract_feature(part, tpl)
    dense = op.apply_flat(f.flat()).reshape(-1, 3)
    sparse = sg.reconstruct_vertices(f, tpl, 0)
    np.testing.assert_allclose(dense, sparse.vertices, atol=1e-10)


def test_non_finite_feature_rejected(tpl):
    f = sg.PartFeature.identity(98)
    f.matrices[3, 1, 1] = np.nan
    with pytest.raises(FloatingPointError):
        sg.reconstruct_vertices(f, tpl)


def test_obj_round_trip(tmp_path, tpl):
    part = sg.sample_part(tpl, "chair", "seat", 5)
    sg.save_obj(tmp_path / "part.obj", part.vertices, part.quads)
    v, f = sg.load_obj(tmp_path / "part.obj")
    np.testing.assert_allclose(v, part.vertices, atol=1e-8)
    np.testing.assert_array_equal(f, part.quads)
