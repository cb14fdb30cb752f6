import numpy as np
import pytest

from mmreg.errors import InvalidArgumentError
from mmreg.metrics import dice, warp_mask
from mmreg.phantom import BumpSpec, PhantomSpec, affine_recovery_error, generate_pair, remap
from mmreg.transform import AffineParams, affine_matrix, volume_center
from mmreg.vwmi import vwmi_loss, weight_map

SMALL = dict(dims=(32, 32, 24))


def rigid_inverse(p: AffineParams, dims, spacing) -> AffineParams:
    """Parameters of the inverse of a pure rotation + translation about the volume center."""
    c = volume_center(dims, spacing)
    R = affine_matrix(AffineParams(rot=p.rot), c)[:3, :3]
    return AffineParams(rot=tuple(-np.asarray(p.rot)), trans=tuple(-R.T @ np.asarray(p.trans)))


def test_same_seed_bit_identical():
    spec = PhantomSpec(**SMALL, seed=5, modality_remap="gamma", transform=AffineParams(rot=(0, 0, 0.1)))
    a, b = generate_pair(spec), generate_pair(spec)
    for name in ("fixed", "moving", "fixed_mask", "moving_mask"):
        assert np.array_equal(getattr(a, name).data, getattr(b, name).data)


def test_different_seeds_differ():
    a = generate_pair(PhantomSpec(**SMALL, seed=1)).fixed.data
    b = generate_pair(PhantomSpec(**SMALL, seed=2)).fixed.data
    assert not np.array_equal(a, b)


def test_identity_pair_equal_within_noise():
    pair = generate_pair(PhantomSpec(**SMALL))
    # no transform, no remap: the moving image is a copy of the noisy fixed one
    assert np.abs(pair.moving.data - pair.fixed.data).max() <= 0.02
    assert dice(pair.fixed_mask, pair.moving_mask) == 1.0


def test_noise_amplitude_relative_to_range():
    clean = generate_pair(PhantomSpec(**SMALL, noise=0.0)).fixed.data
    noisy = generate_pair(PhantomSpec(**SMALL)).fixed.data
    # both normalized to [0, 1]; the residual std tracks the 2% amplitude
    assert 0.005 < np.std(noisy - clean) < 0.04


def test_inverse_remap_anticorrelated():
    pair = generate_pair(PhantomSpec(**SMALL, noise=0.0, modality_remap="inverse"))
    r = np.corrcoef(pair.fixed.data.ravel(), pair.moving.data.ravel())[0, 1]
    assert r == pytest.approx(-1.0, abs=1e-9)


def test_inverse_remap_vwmi_prefers_alignment():
    pair = generate_pair(PhantomSpec(**SMALL, modality_remap="inverse"))
    m = weight_map(pair.fixed, pair.moving)
    aligned = vwmi_loss(pair.fixed, pair.moving, m)
    shifted = pair.moving.with_data(np.roll(pair.moving.data, 10, axis=0))
    assert aligned < vwmi_loss(pair.fixed, shifted, m)


@pytest.mark.parametrize("kind", ["identity", "inverse", "gamma", "sigmoid-bands"])
def test_remap_ranges(kind):
    v = np.linspace(0, 1, 101)
    out = remap(v, kind)
    assert np.all(np.isfinite(out)) and out.min() >= -1e-12 and out.max() <= 1 + 1e-12


def test_sigmoid_bands_non_monotone():
    out = remap(np.linspace(0, 1, 101), "sigmoid-bands")
    assert out.argmax() not in (0, 100)


def test_mask_round_trip_through_inverse():
    truth = AffineParams(rot=(0.0, 0.0, np.deg2rad(10)), trans=(4.0, -3.0, 0.0))
    pair = generate_pair(PhantomSpec(**SMALL, seed=2, transform=truth))
    inv = rigid_inverse(truth, SMALL["dims"], (1.0, 1.0, 1.0))
    angle, shift = affine_recovery_error(inv, truth, SMALL["dims"], (1.0, 1.0, 1.0))
    assert angle < 1e-6 and shift < 1e-6
    assert dice(pair.fixed_mask, warp_mask(pair.moving_mask, inv)) >= 0.95


def test_bump_displaces_mask():
    dims = (32, 32, 32)
    spec = PhantomSpec(dims=dims, seed=3, bump=BumpSpec((15.5, 15.5, 15.5), 6.0, (0.0, 0.0, 4.0)))
    pair = generate_pair(spec)
    assert pair.bump_field is not None
    assert np.abs(pair.bump_field.disp).max() == pytest.approx(4.0, abs=0.05)
    assert dice(pair.fixed_mask, pair.moving_mask) < 1.0


def test_spec_validation():
    with pytest.raises(InvalidArgumentError):
        PhantomSpec(modality_remap="x-ray")
    with pytest.raises(InvalidArgumentError):
        PhantomSpec(dims=(16, 16, 16), bump=BumpSpec((8, 8, 8), 4.0, (0.0, 0.0, 3.0)))
    with pytest.raises(InvalidArgumentError):
        PhantomSpec(noise=-0.1)


def test_spec_dict_round_trip():
    spec = PhantomSpec(**SMALL, seed=9, transform=AffineParams(rot=(0, 0, 0.2), trans=(1, 2, 3)),
                       bump=BumpSpec((10.0, 11.0, 12.0), 5.0, (1.0, 0.0, -2.0)))
    assert PhantomSpec.from_dict(spec.to_dict()) == spec
