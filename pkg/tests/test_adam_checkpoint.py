"""Adam update math and checkpoint round trips."""

import numpy as np
import pytest

from partbridge import numcore as nc


def test_zero_gradient_leaves_params_unchanged():
    p = nc.Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
    state = nc.AdamState([p])
    before = p.data.copy()
    nc.adam_step([p], [np.zeros(2, dtype=np.float32)], state)
    np.testing.assert_array_equal(p.data, before)
    assert state.step == 1


def test_first_step_matches_hand_computed_update():
    # m_hat = 1, v_hat = 1 at t=1 with g=1, so delta = -lr / (1 + eps)
    p = nc.Tensor(np.array([0.0], dtype=np.float64), requires_grad=True)
    state = nc.AdamState([p], lr=1e-3)
    nc.adam_step([p], [np.array([1.0])], state)
    expected = -1e-3 * 1.0 / (1.0 + 1e-8)
    np.testing.assert_allclose(p.data, [expected], rtol=1e-12)


def test_two_runs_same_seed_bitwise_identical():
    def run():
        r = np.random.Generator(np.random.PCG64(7))
        p = nc.Tensor(r.normal(size=(3, 2)).astype(np.float32), requires_grad=True)
        state = nc.AdamState([p], lr=1e-2)
        for _ in range(25):
            g = r.normal(size=(3, 2)).astype(np.float32)
            nc.adam_step([p], [g], state)
        return p.data

    np.testing.assert_array_equal(run(), run())


def test_shape_mismatch_rejected():
    p = nc.Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
    state = nc.AdamState([p])
    with pytest.raises(nc.ShapeError):
        nc.adam_step([p], [np.zeros(4, dtype=np.float32)], state)


def test_step_counter_strictly_increases():
    p = nc.Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
    state = nc.AdamState([p])
    steps = []
    for _ in range(5):
        nc.adam_step([p], [np.ones(2, dtype=np.float32)], state)
        steps.append(state.step)
    assert steps == [1, 2, 3, 4, 5]


def test_checkpoint_round_trip_bit_exact(tmp_path):
    r = np.random.Generator(np.random.PCG64(11))
    arrays = [
        ("enc.w", r.normal(size=(4, 3)).astype(np.float32)),
        ("enc.b", r.normal(size=(3,)).astype(np.float32)),
        ("scalar", np.array(2.5, dtype=np.float32)),
    ]
    meta = {"z": 8, "part": "back"}
    path = tmp_path / "m.ckpt"
    nc.save_checkpoint(path, arrays, meta)
    loaded, loaded_meta = nc.load_checkpoint(path)
    assert loaded_meta == meta
    assert list(loaded.keys()) == ["enc.w", "enc.b", "scalar"]
    for name, a in arrays:
        assert loaded[name].dtype == np.float32
        assert np.array_equal(loaded[name], a)
    # byte-identical when re-saved
    nc.save_checkpoint(tmp_path / "m2.ckpt", [(n, loaded[n]) for n, _ in arrays], meta)
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint\n\x00\x01")
    with pytest.raises(nc.CheckpointError):
        nc.load_checkpoint(path)
