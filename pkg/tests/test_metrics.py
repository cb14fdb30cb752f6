import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mmreg.errors import InvalidArgumentError
from mmreg.metrics import as_mask, dice, jacobian_determinant, jacobian_stats, warp_mask
from mmreg.transform import AffineParams, DeformationField
from mmreg.volume import Volume


def jacobian_loops(disp):
    """Per-voxel determinant with explicit central / one-sided differences."""
    dims = disp.shape[:3]
    out = np.empty(dims)
    for x in np.ndindex(dims):
        J = np.eye(3)
        for a in range(3):
            lo, hi = list(x), list(x)
            if x[a] == 0:
                hi[a] += 1
                step = 1.0
            elif x[a] == dims[a] - 1:
                lo[a] -= 1
                step = 1.0
            else:
                lo[a] -= 1
                hi[a] += 1
                step = 2.0
            J[:, a] += (disp[tuple(hi)] - disp[tuple(lo)]) / step
        out[x] = np.linalg.det(J)
    return out


def box(dims, lo, hi):
    m = np.zeros(dims)
    m[tuple(slice(a, b) for a, b in zip(lo, hi))] = 1
    return Volume(m)


# -- Dice -------------------------------------------------------------------


def test_dice_hand_example():
    a = box((4, 4, 4), (0, 0, 0), (2, 2, 1))  # 4 voxels
    b = box((4, 4, 4), (1, 1, 0), (3, 2, 1))  # 2 voxels, 1 shared
    assert dice(a, b) == pytest.approx(2 / 6)


def test_dice_identical_and_empty():
    a = box((5, 5, 5), (1, 1, 1), (4, 3, 2))
    assert dice(a, a) == 1.0
    empty = Volume(np.zeros((5, 5, 5)))
    assert dice(empty, empty) == 1.0
    assert dice(a, empty) == 0.0


@settings(max_examples=40, deadline=None)
@given(arrays(np.bool_, (4, 3, 5)), arrays(np.bool_, (4, 3, 5)))
def test_dice_symmetric_and_bounded(a, b):
    va, vb = Volume(a.astype(float)), Volume(b.astype(float))
    d = dice(va, vb)
    assert d == dice(vb, va)
    assert 0.0 <= d <= 1.0


def test_dice_dims_mismatch():
    with pytest.raises(InvalidArgumentError):
        dice(Volume(np.zeros((2, 2, 2))), Volume(np.zeros((2, 2, 3))))


def test_as_mask_threshold():
    v = Volume(np.array([0.0, 0.49, 0.5, 3.0]).reshape(4, 1, 1))
    np.testing.assert_array_equal(as_mask(v).data.ravel(), [0, 0, 1, 1])


# -- warping masks ----------------------------------------------------------


def test_warp_mask_integer_translation():
    m = box((10, 10, 10), (3, 3, 3), (6, 6, 6))
    moved = warp_mask(m, AffineParams(trans=(2.0, 0.0, 0.0)))
    # the affine moves content: output(x) = m(x - 2)
    np.testing.assert_array_equal(moved.data, box((10, 10, 10), (5, 3, 3), (8, 6, 6)).data)


def test_warp_mask_chain_matches_sequential_for_integer_maps():
    m = box((10, 10, 10), (3, 2, 3), (7, 6, 6))
    p = AffineParams(trans=(1.0, 0.0, 0.0))
    field = DeformationField(np.broadcast_to([0.0, 1.0, 0.0], (10, 10, 10, 3)).copy())
    chained = warp_mask(m, [p, field])
    sequential = warp_mask(warp_mask(m, p), field)
    np.testing.assert_array_equal(chained.data, sequential.data)


def test_warp_mask_rejects_unknown_transform():
    with pytest.raises(InvalidArgumentError):
        warp_mask(Volume(np.zeros((3, 3, 3))), ["shift"])


# -- Jacobian ---------------------------------------------------------------


def test_identity_field_exact():
    f = DeformationField.zeros((6, 5, 4))
    np.testing.assert_array_equal(jacobian_determinant(f), 1.0)
    assert jacobian_stats(f) == (0.0, 0.0)


def test_linear_field_constant_determinant(rng):
    M = 0.2 * rng.standard_normal((3, 3))
    g = np.stack(np.indices((6, 6, 6)), axis=-1).astype(float)
    f = DeformationField(g @ M.T)
    np.testing.assert_allclose(jacobian_determinant(f), np.linalg.det(np.eye(3) + M), atol=1e-12)
    assert jacobian_stats(f)[1] == pytest.approx(0.0, abs=1e-12)


def test_matches_loop_oracle(rng):
    disp = 0.4 * rng.standard_normal((5, 6, 4, 3))
    np.testing.assert_allclose(jacobian_determinant(DeformationField(disp)), jacobian_loops(disp), atol=1e-12)


def test_full_reflection_folds_everywhere():
    g = np.indices((5, 5, 5)).astype(float)
    disp = np.zeros((5, 5, 5, 3))
    disp[..., 0] = -2 * g[0]  # x -> -x
    folding, sigma = jacobian_stats(DeformationField(disp))
    assert folding == 100.0 and sigma == 0.0


def test_sigma_oracle():
    # u_x = a x^2: interior J = 1 + 2 a x, edges one-sided
    n, a = 8, 0.05
    disp = np.zeros((n, 3, 3, 3))
    disp[..., 0] = a * (np.arange(n) ** 2)[:, None, None]
    J = jacobian_loops(disp)
    folding, sigma = jacobian_stats(DeformationField(disp))
    assert folding == 0.0
    assert sigma == pytest.approx(np.std(np.log(J)), abs=1e-12)


def test_too_small_field():
    with pytest.raises(InvalidArgumentError):
        jacobian_determinant(DeformationField.zeros((1, 4, 4)))
