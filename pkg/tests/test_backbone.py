"""Frozen feature extractor tests."""

import numpy as np
import pytest

from src.cisslab.backbone import (
    StageSpec,
    extract,
    extractor_from_state,
    extractor_state,
    init_extractor,
)
from src.cisslab.errors import ConfigurationError, ShapeError


def test_default_output_dim(default_extractor):
    assert default_extractor.output_dim == 40


def test_same_seed_same_weights():
    assert init_extractor(3).digest() == init_extractor(3).digest()
    assert init_extractor(3).digest() != init_extractor(4).digest()


def test_pass_through(identity_extractor, rng):
    image = rng.random((8, 9, 3))
    assert identity_extractor.output_dim == 3
    assert np.array_equal(extract(identity_extractor, image), image)


def test_identity_stage_returns_image(rng):
    extractor = init_extractor(0, spec=[StageSpec("identity", 1, 3, 3)])
    image = rng.random((6, 6, 3))
    assert np.allclose(extract(extractor, image), image)


def test_zero_image_linear_stage():
    extractor = init_extractor(1, spec=[StageSpec("conv", 3, 3, 5, "none")])
    assert not extract(extractor, np.zeros((8, 8, 3))).any()


def test_keeps_resolution_and_is_repeatable(default_extractor, rng):
    image = rng.random((12, 10, 3))
    before = default_extractor.digest()
    a = extract(default_extractor, image)
    b = extract(default_extractor, image)
    assert a.shape == (12, 10, 40)
    assert np.array_equal(a, b)
    assert default_extractor.digest() == before


def test_weights_are_read_only(default_extractor):
    assert default_extractor.frozen
    with pytest.raises(ValueError):
        default_extractor.stages[1].kernel[0, 0, 0, 0] = 1.0


def test_dimension_chain_checked():
    with pytest.raises(ConfigurationError, match="input channels"):
        init_extractor(0, spec=[StageSpec("conv", 3, 3, 4), StageSpec("conv", 3, 5, 4)])


def test_even_kernel_rejected():
    with pytest.raises(ConfigurationError):
        init_extractor(0, spec=[StageSpec("conv", 2, 3, 4)])


def test_wrong_channels(default_extractor):
    with pytest.raises(ShapeError):
        extract(default_extractor, np.zeros((8, 8, 4)))


def test_features_within_bound(default_extractor, rng):
    bound = default_extractor.feature_bound()
    for _ in range(5):
        feats = extract(default_extractor, rng.random((10, 10, 3)))
        assert np.isfinite(feats).all()
        assert (np.abs(feats) <= bound + 1e-9).all()


def test_translation_equivariance_on_interior(default_extractor, rng):
    image = rng.random((20, 20, 3))
    shifted = np.roll(image, shift=(2, 3), axis=(0, 1))
    a = extract(default_extractor, image)
    b = extract(default_extractor, shifted)
    # two 3x3 stages: border effects reach 2 pixels in
    assert np.allclose(a[4:14, 4:14], b[6:16, 7:17])


def test_state_round_trip(default_extractor):
    meta, arrays = extractor_state(default_extractor)
    restored = extractor_from_state(meta, arrays)
    assert restored.digest() == default_extractor.digest()


def test_default_bank_keeps_centred_color(default_extractor):
    image = np.full((6, 6, 3), 0.5)
    image[2:4, 2:4] = [0.9, 0.2, 0.3]
    feats = extract(default_extractor, image)
    # the first eight channels are the hand-crafted stage, passed through
    assert np.allclose(feats[1, 1, :3], 0.0)
    assert np.allclose(feats[3, 3, :3], [0.4, -0.3, -0.2])
    assert (feats[..., 8:] >= 0.0).all()


def test_kept_input_precedes_stage_output(rng):
    spec = [StageSpec("conv", 1, 3, 4, "relu", keep_input=True)]
    extractor = init_extractor(2, spec=spec)
    image = rng.random((5, 5, 3))
    feats = extract(extractor, image)
    assert extractor.output_dim == 7
    assert np.array_equal(feats[..., :3], image)
    kernel = extractor.stages[0].kernel[0, 0]
    assert np.allclose(feats[..., 3:], np.maximum(image @ kernel, 0.0))


def test_kept_input_changes_digest():
    plain = init_extractor(0, spec=[StageSpec("conv", 3, 3, 4, "relu")])
    kept = init_extractor(0, spec=[StageSpec("conv", 3, 3, 4, "relu", keep_input=True)])
    assert plain.digest() != kept.digest()
    meta, arrays = extractor_state(kept)
    assert extractor_from_state(meta, arrays).output_dim == 7
