import numpy as np
import pytest
import constants
from datagen import SceneDataset
from augment import AugmentConfig, augment_batch, build_paste_mask, fit_to, mix
from conftest import make_scene

def _pair(seed:int=0, size:int=8):
    rng = np.random.default_rng(seed)
    coarse_label = rng.integers(3, size=(size, size)).astype(np.uint8)
    coarse_label[rng.random((size, size)) < 0.4] = constants.IGNORE
    real = make_scene('real/0', coarse_label, constants.DOMAIN_REAL_COARSE, seed=seed)
    synthetic = make_scene('synthetic/0', rng.integers(3, size=(size, size)).astype(np.uint8), constants.DOMAIN_SYNTHETIC, seed=seed + 1)
    return real, synthetic

def test_mix_takes_every_pixel_from_one_source():
    rng = np.random.default_rng(0)
    for seed in range(10):
        real, synthetic = _pair(seed)
        mask = rng.random(real.label.shape) < 0.5
        mixed = mix(real, synthetic, mask)
        assert np.array_equal(mixed.label[mask], synthetic.label[mask])
        assert np.array_equal(mixed.label[~mask], real.label[~mask])
        assert np.array_equal(mixed.image[:, mask], synthetic.image[:, mask])
        assert np.array_equal(mixed.image[:, ~mask], real.image[:, ~mask])
        assert np.array_equal(mixed.provenance[mask], synthetic.provenance[mask])
        assert mixed.domain == constants.DOMAIN_AUGMENTED

def test_empty_and_full_masks():
    real, synthetic = _pair()
    empty = mix(real, synthetic, np.zeros(real.label.shape, dtype=bool))
    full = mix(real, synthetic, np.ones(real.label.shape, dtype=bool))
    assert np.array_equal(empty.label, real.label) and np.array_equal(empty.image, real.image)
    assert np.array_equal(full.label, synthetic.label) and np.array_equal(full.image, synthetic.image)

def test_paste_mask_is_a_union_of_whole_classes():
    rng = np.random.default_rng(1)
    label = rng.integers(4, size=(10, 10)).astype(np.uint8)
    for _ in range(20):
        mask = build_paste_mask(label, AugmentConfig(), rng)
        for class_id in range(4):
            region = mask[label == class_id]
            assert region.all() or not region.any()

def test_paste_mask_probability_extremes():
    rng = np.random.default_rng(2)
    label = np.arange(16, dtype=np.uint8).reshape(4, 4) % 3
    assert build_paste_mask(label, AugmentConfig(p_class=1.0), rng).all()
    assert not build_paste_mask(label, AugmentConfig(p_class=0.0), rng).any()

def test_augment_batch_adds_twins_for_coarse_items_only():
    real, synthetic = _pair()
    pool = SceneDataset([synthetic], 3)
    batch = [real, synthetic]
    augmented = augment_batch(batch, pool, AugmentConfig(p_select_real=1.0, p_class=1.0), np.random.default_rng(0))
    assert len(augmented) == 3
    assert augmented[0] is real and augmented[1] is synthetic
    assert np.array_equal(augmented[2].label, synthetic.label)

def test_augment_batch_can_be_disabled():
    real, synthetic = _pair()
    pool = SceneDataset([synthetic], 3)
    assert len(augment_batch([real], pool, AugmentConfig(p_select_real=0.0), np.random.default_rng(0))) == 1
    assert len(augment_batch([real], pool, AugmentConfig(p_select_real=1.0, enabled=False), np.random.default_rng(0))) == 1

def test_augment_batch_fine_target():
    real, synthetic = _pair()
    fine = real.copy(domain=constants.DOMAIN_REAL_FINE)
    pool = SceneDataset([synthetic], 3)
    cfg = AugmentConfig(p_select_real=1.0, target='fine')
    assert len(augment_batch([fine, real], pool, cfg, np.random.default_rng(0))) == 3

def test_augment_batch_is_deterministic():
    real, synthetic = _pair()
    pool = SceneDataset([synthetic, synthetic.copy(id='synthetic/1')], 3)
    first = augment_batch([real] * 4, pool, AugmentConfig(), np.random.default_rng(5))
    second = augment_batch([real] * 4, pool, AugmentConfig(), np.random.default_rng(5))
    assert [scene.id for scene in first] == [scene.id for scene in second]
    assert all(np.array_equal(a.label, b.label) for a, b in zip(first, second))

def test_fit_to_pads_with_ignore():
    _, synthetic = _pair(size=4)
    padded = fit_to(synthetic, 6, 8)
    assert padded.label.shape == (6, 8)
    assert np.all(padded.label[0] == constants.IGNORE)
    assert np.array_equal(padded.label[1:5, 2:6], synthetic.label)
    cropped = fit_to(synthetic, 2, 2)
    assert np.array_equal(cropped.label, synthetic.label[1:3, 1:3])

def test_errors():
    real, synthetic = _pair()
    with pytest.raises(ValueError):
        mix(real, synthetic, np.zeros((3, 3), dtype=bool))
    with pytest.raises(ValueError):
        augment_batch([real], SceneDataset([], 3), AugmentConfig(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        AugmentConfig(p_class=1.5)
