import struct
import numpy as np
import pytest
import constants
from datagen import LabeledScene, SceneDataset, SceneSpec, generate_pool
from container import ContainerFormatError, load, parse, save, serialize, verify_container, violations_to_frame
from conftest import make_dataset, make_scene

HEADER_SIZE = struct.calcsize('<4sHIH')

def _assert_same(first:SceneDataset, second:SceneDataset) -> None:
    assert first.num_classes == second.num_classes
    assert first.get_ids == second.get_ids
    for a, b in zip(first, second):
        assert a.domain == b.domain
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.label, b.label)
        assert np.array_equal(a.provenance, b.provenance)

def test_random_containers_round_trip():
    for seed in range(100):
        dataset = make_dataset(int(np.random.default_rng(seed).integers(0, 6)), num_classes=5, seed=seed)
        payload = serialize(dataset)
        parsed = parse(payload)
        _assert_same(dataset, parsed)
        assert serialize(parsed) == payload
        assert verify_container(payload) == []

def test_generated_pool_round_trips(small_spec):
    pool = generate_pool(small_spec, 5, 'real')
    _assert_same(pool, parse(serialize(pool)))

def test_coarse_scenes_get_the_coarse_cost():
    dataset = make_dataset(12, seed=3)
    for scene in parse(serialize(dataset)):
        expected = constants.COARSE_MINUTES if scene.domain == constants.DOMAIN_REAL_COARSE else 0.0
        assert scene.cost_minutes == expected

def test_bad_magic_names_offset_zero():
    payload = b'XXXX' + serialize(make_dataset(2))[4:]
    with pytest.raises(ContainerFormatError, match='offset 0') as info:
        parse(payload)
    assert info.value.offset == 0
    violations = verify_container(payload)
    assert len(violations) == 1 and violations[0].offset == 0

def test_out_of_range_label_names_the_record():
    label = np.zeros((4, 4), dtype=np.uint8)
    label[2, 1] = 4 + 3
    dataset = SceneDataset([make_scene('synthetic/0', np.zeros((4, 4))), make_scene('synthetic/1', label)], 4)
    payload = serialize(dataset)
    violations = verify_container(payload)
    assert [violation.record_id for violation in violations] == ['synthetic/1']
    assert payload[violations[0].offset] == 7
    with pytest.raises(ContainerFormatError, match='synthetic/1'):
        parse(payload)

def test_manual_provenance_on_ignore_is_flagged():
    label = np.zeros((3, 3), dtype=np.uint8)
    label[0, 0] = constants.IGNORE
    scene = LabeledScene('real/0', np.zeros((3, 3, 3)), label, constants.DOMAIN_REAL_COARSE,
                         provenance=np.full((3, 3), constants.PROVENANCE_MANUAL, dtype=np.uint8))
    violations = verify_container(serialize(SceneDataset([scene], 2)))
    assert len(violations) == 1
    assert 'Manual provenance on IGNORE' in violations[0].message

def test_dense_domains_cannot_hold_ignore():
    label = np.zeros((3, 3), dtype=np.uint8)
    label[1, 1] = constants.IGNORE
    scene = make_scene('real/0', label, constants.DOMAIN_REAL_FINE)
    messages = [violation.message for violation in verify_container(serialize(SceneDataset([scene], 2)))]
    assert any(message.startswith('Dense domain') for message in messages)

def test_image_range_is_checked():
    scene = make_scene('synthetic/0', np.zeros((2, 2), dtype=np.uint8))
    scene.image[0, 0, 0] = 1.5
    assert len(verify_container(serialize(SceneDataset([scene], 2)))) == 1

def test_truncation_and_trailing_bytes():
    payload = serialize(make_dataset(3, seed=1))
    for broken in (payload[:-5], payload[:HEADER_SIZE + 1], payload + b'\x00'):
        with pytest.raises(ContainerFormatError):
            parse(broken)
        assert len(verify_container(broken)) >= 1

def test_duplicate_ids_are_flagged():
    payload = serialize(SceneDataset([make_scene('synthetic/0', np.zeros((2, 2), dtype=np.uint8))], 2))
    record = payload[HEADER_SIZE:]
    doubled = struct.pack('<4sHIH', constants.CONTAINER_MAGIC, constants.CONTAINER_VERSION, 2, 2) + record + record
    assert [violation.message for violation in verify_container(doubled)] == ['Duplicate record id']
    with pytest.raises(ContainerFormatError):
        parse(doubled)

def test_augmented_scenes_cannot_be_stored():
    scene = make_scene('augmented/0', np.zeros((2, 2), dtype=np.uint8), constants.DOMAIN_AUGMENTED)
    with pytest.raises(ValueError):
        serialize(SceneDataset([scene], 2))

def test_save_and_load(tmp_path):
    dataset = generate_pool(SceneSpec(height=8, width=8, num_classes=3), 3, 'synthetic')
    path = tmp_path / 'pool.c2fd'
    save(dataset, str(path))
    _assert_same(dataset, load(str(path)))

def test_violations_frame():
    frame = violations_to_frame(verify_container(b'XXXX'))
    assert list(frame.columns) == ['record_id', 'offset', 'message']
    assert frame['offset'].tolist() == [0]
