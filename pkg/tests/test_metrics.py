import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from convexreg.displacement import make_field, zero_field
from convexreg.errors import DimensionMismatch, EngineError
from convexreg.metrics import dice, endpoint_error, log_det_std, mean_dice, sd_log_j
from convexreg.synth import make_smooth_field
from convexreg.volume import Volume, identity_grid


def labels(a):
    return Volume(np.asarray(a, dtype=np.int32)[None], kind="label-map")


def cube(offset=(0, 0, 0), size=2, dims=(6, 6, 6), label=1):
    a = np.zeros(dims, dtype=np.int32)
    sl = tuple(slice(o, o + size) for o in offset)
    a[sl] = label
    return a


def test_dice_fixtures():
    a = labels(cube((1, 1, 1)))
    assert dice(a, a, 1) == 1.0
    assert dice(a, labels(cube((4, 4, 4))), 1) == 0.0
    # 8-voxel cubes overlapping in 4 voxels
    assert dice(a, labels(cube((2, 1, 1))), 1) == 0.5


def test_dice_empty_conventions():
    a, b = labels(cube((1, 1, 1))), labels(np.zeros((6, 6, 6)))
    assert dice(b, b, 1) == 1.0
    assert dice(a, b, 1) == 0.0 and dice(b, a, 1) == 0.0


@given(st.integers(0, 2 ** 31 - 1), st.integers(0, 3))
def test_dice_symmetric_bounded_and_matches_sets(seed, label):
    r = np.random.default_rng(seed)
    a, b = r.integers(0, 4, (5, 5, 5)), r.integers(0, 4, (5, 5, 5))
    d = dice(labels(a), labels(b), label)
    assert d == dice(labels(b), labels(a), label)
    assert 0 <= d <= 1
    A = {i for i in np.ndindex(5, 5, 5) if a[i] == label}
    B = {i for i in np.ndindex(5, 5, 5) if b[i] == label}
    assert d == (2 * len(A & B) / (len(A) + len(B)) if A or B else 1.0)


def test_mean_dice():
    a = cube((1, 1, 1)) + cube((3, 3, 3), label=2)
    b = cube((1, 1, 1)) + cube((4, 3, 3), label=2)
    assert mean_dice(labels(a), labels(b), [1, 2]) == 0.75
    assert mean_dice(labels(a), labels(a), [1, 2]) == 1.0
    # a label absent from both maps counts as perfect agreement
    assert mean_dice(labels(a), labels(b), [1, 2, 7]) == pytest.approx((1 + 0.5 + 1) / 3)
    with pytest.raises(EngineError):
        mean_dice(labels(a), labels(b), [])


def test_dice_dimension_check():
    with pytest.raises(DimensionMismatch):
        dice(labels(np.zeros((3, 3, 3))), labels(np.zeros((3, 3, 4))), 1)


def test_sdlogj_zero_field_is_exactly_zero():
    assert sd_log_j(zero_field((5, 6, 7))) == 0.0


def test_sdlogj_constant_determinant():
    g = identity_grid((8, 8, 8))
    u = make_field(np.stack([0.1 * g[0], 0.05 * g[1], -0.02 * g[2]]))
    assert abs(sd_log_j(u)) < 1e-9


def test_log_det_std_closed_form():
    det = np.ones((4, 4, 4))
    det[:2] = np.e
    assert log_det_std(det) == pytest.approx(0.5, abs=1e-15)


def test_log_det_clamps_folds():
    det = np.array([-1.0, 0.0, 1e-6])
    assert log_det_std(det) == 0.0
    assert np.isfinite(log_det_std(np.array([-5.0, 1.0])))


@given(st.tuples(*[st.floats(-5, 5)] * 3))
def test_sdlogj_translation_invariant_on_interior(t):
    u = make_smooth_field((16, 16, 16), 2.0, 3, 7)
    shifted = make_field(u.data + np.asarray(t)[:, None, None, None])
    assert sd_log_j(shifted, border=1) == pytest.approx(sd_log_j(u, border=1), abs=1e-12)


def test_endpoint_error_cases():
    z = zero_field((3, 3, 3))
    assert endpoint_error(z, z) == (0.0, 0.0)
    one = make_field(np.stack([np.ones((3, 3, 3)), np.zeros((3, 3, 3)), np.zeros((3, 3, 3))]))
    assert endpoint_error(one, z) == (1.0, 1.0)


def test_endpoint_error_by_hand():
    r = np.random.default_rng(0)
    a, b = r.normal(size=(3, 3, 3, 3)), r.normal(size=(3, 3, 3, 3))
    mask = r.uniform(size=(3, 3, 3)) > 0.4
    errs = [np.sqrt(sum((a[c][i] - b[c][i]) ** 2 for c in range(3)))
            for i in np.ndindex(3, 3, 3) if mask[i]]
    mean, mx = endpoint_error(make_field(a), make_field(b), mask)
    assert mean == pytest.approx(np.mean(errs)) and mx == pytest.approx(max(errs))
    with pytest.raises(EngineError):
        endpoint_error(make_field(a), make_field(b), np.zeros((3, 3, 3), bool))
    with pytest.raises(DimensionMismatch):
        endpoint_error(make_field(a), zero_field((3, 3, 4)))
