"""Contour tracing and TPS warping against constructed oracles."""

import numpy as np
import pytest

from partbridge.texture import (
    sample_contour_points,
    tps_fit,
    tps_warp_image,
    trace_contours,
)


def brute_border_pixels(mask: np.ndarray) -> set:
    """Foreground pixels with at least one background 8-neighbor."""
    H, W = mask.shape
    out = set()
    for i in range(H):
        for j in range(W):
            if not mask[i, j]:
                continue
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ni, nj = i + di, j + dj
                    if ni < 0 or nj < 0 or ni >= H or nj >= W or not mask[ni, nj]:
                        out.add((i, j))
    return out


# ---------------------------------------------------------------------------
# trace_contours


def test_empty_mask_gives_no_contours():
    assert trace_contours(np.zeros((16, 16))) == []


def test_filled_square_has_36_border_pixels():
    mask = np.zeros((20, 20), dtype=np.uint8)
    mask[4:14, 6:16] = 1  # 10x10 square
    contours = trace_contours(mask)
    assert len(contours) == 1
    c = contours[0]
    assert c.kind == "outer"
    assert c.parent == -1
    # 8-connected border of a filled 10x10 block: 4*10 - 4 = 36 pixels
    assert len(np.unique(c.points, axis=0)) == 36
    assert set(map(tuple, c.points.tolist())) == brute_border_pixels(mask)


def test_square_with_hole_hierarchy():
    mask = np.zeros((16, 16), dtype=np.uint8)
    mask[2:12, 2:12] = 1
    mask[5:9, 5:9] = 0  # 4x4 hole
    contours = trace_contours(mask)
    assert len(contours) == 2
    outer = [c for c in contours if c.kind == "outer"]
    hole = [c for c in contours if c.kind == "hole"]
    assert len(outer) == 1 and len(hole) == 1
    assert hole[0].parent == contours.index(outer[0])
    assert outer[0].parent == -1
    # hole border pixels lie on the foreground ring around the hole
    for i, j in hole[0].points:
        assert mask[i, j] == 1


def test_two_blobs_are_separate_top_level_contours():
    mask = np.zeros((12, 24), dtype=np.uint8)
    mask[3:7, 2:8] = 1
    mask[3:9, 14:20] = 1
    contours = trace_contours(mask)
    assert len(contours) == 2
    assert all(c.kind == "outer" and c.parent == -1 for c in contours)


def test_contours_are_closed_loops_without_stutters():
    rng = np.random.default_rng(0)
    mask = (rng.random((24, 24)) > 0.6).astype(np.uint8)
    for c in trace_contours(mask):
        pts = c.points
        if len(pts) > 1:
            diffs = np.abs(np.diff(np.vstack([pts, pts[:1]]), axis=0)).max(axis=1)
            assert diffs.max() <= 1  # 8-adjacent, including the closing step
            assert (diffs > 0).all()  # no repeated consecutive points


@pytest.mark.parametrize("seed", range(10))
def test_outer_contour_pixels_are_borders_by_brute_force(seed):
    rng = np.random.default_rng(seed)
    mask = (rng.random((32, 32)) > 0.55).astype(np.uint8)
    border = brute_border_pixels(mask)
    for c in trace_contours(mask):
        if c.kind != "outer":
            continue
        for i, j in c.points:
            assert mask[i, j] == 1
            assert (i, j) in border


def test_tracing_is_deterministic():
    rng = np.random.default_rng(3)
    mask = (rng.random((20, 20)) > 0.5).astype(np.uint8)
    a = trace_contours(mask)
    b = trace_contours(mask)
    assert len(a) == len(b)
    for ca, cb in zip(a, b):
        np.testing.assert_array_equal(ca.points, cb.points)
        assert ca.kind == cb.kind and ca.parent == cb.parent


# ---------------------------------------------------------------------------
# sample_contour_points


def square_contour():
    mask = np.zeros((16, 16), dtype=np.uint8)
    mask[4:12, 4:12] = 1
    return trace_contours(mask)[0]


def test_sampling_full_length_returns_each_pixel_once():
    c = square_contour()
    pts = sample_contour_points(c, len(c))
    np.testing.assert_array_equal(pts, c.points.astype(float))


def test_sampling_quarters_of_a_square():
    c = square_contour()
    pts = sample_contour_points(c, 4)
    closed = np.vstack([c.points, c.points[:1]]).astype(float)
    seglen = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    total = cum[-1]
    for k, p in enumerate(pts):
        target = k * total / 4
        arc_of_p = cum[np.all(c.points == p, axis=1).argmax()]
        gaps = np.abs(cum[:-1] - target)
        assert abs(arc_of_p - target) <= gaps.min() + 1e-9


def test_sampling_is_deterministic():
    c = square_contour()
    np.testing.assert_array_equal(sample_contour_points(c, 7),
                                  sample_contour_points(c, 7))


# ---------------------------------------------------------------------------
# TPS


def ring_points(n=12, r=5.0, center=(8.0, 8.0)):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([center[0] + r * np.sin(t), center[1] + r * np.cos(t)])


def test_identity_fit_is_identity():
    src = ring_points()
    warp = tps_fit(src, src, lam=0.0)
    np.testing.assert_allclose(warp.weights, 0.0, atol=1e-8)
    np.testing.assert_allclose(warp.affine, [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], atol=1e-8)


def test_translation_recovered_as_pure_affine():
    src = ring_points()
    dst = src + np.array([2.5, -1.0])
    warp = tps_fit(src, dst, lam=0.0)
    np.testing.assert_allclose(warp.weights, 0.0, atol=1e-8)
    probe = np.array([[3.0, 4.0], [10.0, 2.0]])
    np.testing.assert_allclose(warp.transform(probe), probe + [2.5, -1.0], atol=1e-8)


def test_interpolation_exact_at_controls():
    rng = np.random.default_rng(5)
    src = ring_points(16)
    dst = src + rng.normal(0, 1.0, src.shape)
    warp = tps_fit(src, dst, lam=0.0)
    np.testing.assert_allclose(warp.transform(src), dst, atol=1e-6)


def test_collinear_sources_rejected():
    src = np.column_stack([np.arange(6, dtype=float), np.arange(6, dtype=float) * 2])
    dst = src + 1.0
    with pytest.raises(ValueError):
        tps_fit(src, dst)
    with pytest.raises(ValueError):
        tps_fit(np.zeros((5, 2)), np.ones((5, 2)))  # duplicates


def test_bending_energy_nonincreasing_in_lambda():
    rng = np.random.default_rng(7)
    src = ring_points(20, r=6.0)
    dst = src + rng.normal(0, 1.5, src.shape)
    energies = [tps_fit(src, dst, lam).bending_energy() for lam in (0.0, 0.1, 1.0, 10.0)]
    for a, b in zip(energies, energies[1:]):
        assert b <= a + 1e-9


def checkerboard(n=48, cell=6):
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return (((i // cell) + (j // cell)) % 2).astype(np.float64)


def grid_points(n=48):
    g = np.linspace(4.0, n - 5.0, 5)
    return np.array([[r, c] for r in g for c in g])


def test_identity_warp_preserves_image():
    img = checkerboard()
    src = ring_points(12, r=18.0, center=(24.0, 24.0))
    warp = tps_fit(src, src, lam=0.0)
    np.testing.assert_allclose(tps_warp_image(img, warp), img, atol=1e-8)


def test_integer_translation_shifts_pixels_exactly():
    img = checkerboard()
    src = ring_points(12, r=14.0, center=(24.0, 24.0))
    warp = tps_fit(src, src + np.array([3.0, 5.0]), lam=0.0)
    out = tps_warp_image(img, warp, background=-1.0)
    np.testing.assert_allclose(out[3:, 5:], img[:-3, :-5], atol=1e-8)
    assert np.all(out[:3, :] == -1.0) and np.all(out[:, :5] == -1.0)


def test_warp_round_trip_on_checkerboard():
    img = checkerboard(n=64, cell=16)
    rng = np.random.default_rng(11)
    g = np.linspace(4.0, 59.0, 6)
    src = np.array([[r, c] for r in g for c in g])
    dst = src + rng.normal(0, 1.0, src.shape)
    fwd = tps_fit(src, dst, lam=0.0)
    back = tps_fit(dst, src, lam=0.0)  # inverse-fitted warp
    round_trip = tps_warp_image(tps_warp_image(img, fwd), back)
    inside = slice(6, -6)
    assert np.abs(round_trip - img)[inside, inside].mean() < 0.05


def test_rgb_images_supported():
    img = np.stack([checkerboard(), 1 - checkerboard(), checkerboard() * 0.5], axis=-1)
    src = ring_points(12, r=16.0, center=(24.0, 24.0))
    warp = tps_fit(src, src + 1.5, lam=0.0)
    out = tps_warp_image(img, warp)
    assert out.shape == img.shape
