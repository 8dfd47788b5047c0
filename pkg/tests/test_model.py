import numpy as np
import pytest
import tensorops as ops
from tensorops import GradTape, NumericalError
from model import ArchConfig, CheckpointFormatError, ModelState, poly_lr
from losses import cross_entropy

def test_forward_shape(small_model):
    for height, width in [(16, 16), (15, 9), (8, 12)]:
        logits = small_model.forward(np.zeros((3, height, width)))
        assert logits.shape == (4, height, width)

def test_zero_head_gives_uniform_output():
    model = ModelState.initialize(ArchConfig(num_classes=5, channels=(4, 8)))
    probs = ops.softmax(model.forward(np.random.default_rng(0).random((3, 8, 8)))).data
    assert np.allclose(probs, 0.2)

def test_initialization_is_deterministic(small_arch):
    first, second = ModelState.initialize(small_arch), ModelState.initialize(small_arch)
    assert all(np.array_equal(first.params[name], second.params[name]) for name in first.params)
    other = ModelState.initialize(small_arch, seed=99)
    assert not np.array_equal(first.params['stem.weight'], other.params['stem.weight'])

def test_end_to_end_gradients(small_arch):
    model = ModelState.initialize(small_arch)
    image = np.random.default_rng(1).random((3, 6, 6))
    names = list(model.params)

    def network(*tensors):
        return ops.softmax(model.forward(image, dict(zip(names, tensors))))

    weights = np.random.default_rng(2).normal(size=(4, 6, 6))
    error = ops.gradcheck(lambda *tensors: ops.absolute(ops.subtract_constant(network(*tensors), weights)),
                          [model.params[name] for name in names], num_points=5)
    assert error < 1e-4

def test_sgd_step_follows_the_update_rule(small_model):
    grads = {name: np.full(value.shape, 0.5) for name, value in small_model.params.items()}
    before = {name: value.copy() for name, value in small_model.params.items()}
    small_model.sgd_step(grads, lr=0.1, momentum=0.9, weight_decay=0.01)
    for name in before:
        velocity = 0.5 + 0.01 * before[name]
        assert np.allclose(small_model.velocity[name], velocity)
        assert np.allclose(small_model.params[name], before[name] - 0.1 * velocity)

def test_sgd_step_rejects_non_finite_gradients(small_model):
    grads = {name: np.zeros(value.shape) for name, value in small_model.params.items()}
    grads['head.bias'][0] = np.inf
    with pytest.raises(NumericalError):
        small_model.sgd_step(grads, lr=0.1)

def test_training_step_reduces_the_loss(small_model):
    image = np.random.default_rng(3).random((3, 8, 8))
    target = np.ones((8, 8), dtype=np.uint8)
    before = cross_entropy(small_model.forward(image), target).item()
    for _ in range(5):
        with GradTape() as tape:
            params = small_model.parameter_tensors()
            loss = cross_entropy(small_model.forward(image, params), target)
        tape.backward(loss)
        small_model.sgd_step({name: tape.gradient(tensor) for name, tensor in params.items()}, lr=0.05)
    assert cross_entropy(small_model.forward(image), target).item() < before

def test_checkpoint_round_trip(small_model, tmp_path):
    small_model.sgd_step({name: np.ones(value.shape) for name, value in small_model.params.items()}, lr=0.01)
    path = tmp_path / 'model.ckpt'
    small_model.save(str(path))
    loaded = ModelState.load(str(path))
    assert loaded.arch == small_model.arch
    for name in small_model.params:
        assert np.array_equal(loaded.params[name], small_model.params[name])
        assert np.array_equal(loaded.velocity[name], small_model.velocity[name])
    assert loaded.to_bytes() == small_model.to_bytes()

def test_checkpoint_errors(small_model):
    payload = small_model.to_bytes()
    with pytest.raises(CheckpointFormatError, match='offset 0'):
        ModelState.from_bytes(b'XXXX' + payload[4:])
    with pytest.raises(CheckpointFormatError):
        ModelState.from_bytes(payload[:-10])

def test_poly_lr():
    assert poly_lr(0.1, 0, 100) == pytest.approx(0.1)
    assert poly_lr(0.1, 50, 100) == pytest.approx(0.1 * 0.25)
    assert poly_lr(0.1, 100, 100) == 0.0
    with pytest.raises(ValueError):
        poly_lr(0.1, 101, 100)

def test_arch_validation():
    with pytest.raises(ValueError):
        ArchConfig(kernel_size=2)
    with pytest.raises(ValueError):
        ArchConfig(num_classes=1)
    with pytest.raises(ValueError):
        ModelState(ArchConfig(), {})
