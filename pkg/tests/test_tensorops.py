import numpy as np
import pytest
import tensorops as ops
from tensorops import GradTape, NumericalError, Tensor

TOLERANCE = 1e-4

def _random(rng, *shape):
    return rng.normal(size=shape)

@pytest.mark.parametrize('stride,pad', [(1, 1), (2, 1), (1, 0)])
def test_conv2d_gradients(stride, pad):
    rng = np.random.default_rng(1)
    for instance in range(20):
        x, w, b = _random(rng, 2, 7, 6), _random(rng, 3, 2, 3, 3), _random(rng, 3)
        error = ops.gradcheck(lambda x, w, b: ops.conv2d(x, w, b, stride=stride, pad=pad), [x, w, b], seed=instance)
        assert error < TOLERANCE

def test_conv2d_matches_direct_sum():
    rng = np.random.default_rng(2)
    x, w = _random(rng, 2, 5, 5), _random(rng, 1, 2, 3, 3)
    out = ops.conv2d(Tensor(x), Tensor(w), pad=1).data
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    for i in range(5):
        for j in range(5):
            assert out[0, i, j] == pytest.approx(np.sum(padded[:, i:i + 3, j:j + 3] * w[0]))

def test_conv2d_rejects_even_kernel():
    with pytest.raises(ValueError):
        ops.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))

@pytest.mark.parametrize('size', [(9, 5), (3, 4), (6, 6)])
def test_bilinear_resize_gradients(size):
    rng = np.random.default_rng(3)
    for instance in range(20):
        x = _random(rng, 2, 6, 6)
        assert ops.gradcheck(lambda x: ops.bilinear_resize(x, size=size), [x], seed=instance) < TOLERANCE

def test_bilinear_resize_identity_and_constant():
    rng = np.random.default_rng(4)
    x = _random(rng, 3, 8, 8)
    assert np.array_equal(ops.bilinear_resize(Tensor(x), 1.0).data, x)
    constant = np.full((1, 8, 8), 0.3)
    assert np.allclose(ops.bilinear_resize(Tensor(constant), 0.5).data, 0.3)
    assert ops.bilinear_resize(Tensor(constant), 2.0).shape == (1, 16, 16)

def test_bilinear_resize_doubles_a_two_by_two_image():
    out = ops.bilinear_resize(Tensor(np.array([[[1.0, 3.0], [5.0, 7.0]]])), 2.0).data[0]
    # Half-pixel sample positions 0, 0.25, 0.75, 1 along both axes
    expected = np.array([[1.0, 1.5, 2.5, 3.0],
                         [2.0, 2.5, 3.5, 4.0],
                         [4.0, 4.5, 5.5, 6.0],
                         [5.0, 5.5, 6.5, 7.0]])
    assert np.allclose(out, expected)
    assert [out[0, 0], out[0, -1], out[-1, 0], out[-1, -1]] == [1.0, 3.0, 5.0, 7.0]

def test_bilinear_resize_rejects_non_finite():
    x = np.zeros((1, 4, 4))
    x[0, 1, 1] = np.nan
    with pytest.raises(NumericalError):
        ops.bilinear_resize(Tensor(x), 2.0)

def test_softmax_and_gumbel_gradients():
    rng = np.random.default_rng(5)
    for instance in range(20):
        x, noise = _random(rng, 4, 3, 3), rng.gumbel(size=(4, 3, 3))
        weights = _random(rng, 4, 3, 3)
        assert ops.gradcheck(lambda x: ops.absolute(ops.subtract_constant(ops.softmax(x), weights)), [x], seed=instance) < TOLERANCE
        assert ops.gradcheck(lambda x: ops.absolute(ops.subtract_constant(ops.gumbel_softmax(x, 0.7, noise), weights)), [x], seed=instance) < TOLERANCE

def test_softmax_sums_to_one_and_is_stable():
    x = np.array([[[1000.0]], [[999.0]]])
    probs = ops.softmax(Tensor(x)).data
    assert np.all(np.isfinite(probs))
    assert probs.sum() == pytest.approx(1.0)

def test_spatial_gradient_norm_gradients():
    rng = np.random.default_rng(6)
    for instance in range(20):
        x = _random(rng, 3, 6, 5)
        assert ops.gradcheck(ops.spatial_gradient_norm, [x], seed=instance) < TOLERANCE

def test_spatial_gradient_norm_of_step_edge():
    mask = np.zeros((2, 4, 6))
    mask[0, :, :3] = 1.0
    mask[1, :, 3:] = 1.0
    gamma = ops.spatial_gradient_norm(Tensor(mask)).data
    # Central differences spread the edge over the two columns next to it
    assert np.allclose(gamma[:, [2, 3]], np.sqrt(0.5))
    assert np.allclose(gamma[:, [0, 1, 4, 5]], 0.0)

def test_spatial_gradient_norm_zero_on_constant_input():
    x = Tensor(np.ones((2, 4, 4)), requires_grad=True)
    with GradTape() as tape:
        gamma = ops.spatial_gradient_norm(x)
    tape.backward(gamma)
    assert np.all(gamma.data == 0)
    assert np.all(tape.gradient(x) == 0)

def test_small_op_gradients():
    rng = np.random.default_rng(7)
    mask = rng.random((2, 3, 4)) < 0.5
    for instance in range(20):
        a, b = _random(rng, 2, 3, 4), _random(rng, 4, 3, 4)
        assert ops.gradcheck(lambda a, b: ops.concat([ops.relu(a), b]), [a, b], seed=instance) < TOLERANCE
        assert ops.gradcheck(lambda b: ops.crop(b, 2, 3), [b], seed=instance) < TOLERANCE
        assert ops.gradcheck(lambda a: ops.masked_mean(ops.scale(a, 1.5), mask), [a], seed=instance) < TOLERANCE
        assert ops.gradcheck(lambda a, c: ops.add_n([a, c, a]), [a, a.copy()], seed=instance) < TOLERANCE

def test_masked_mean_of_empty_mask():
    x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
    with GradTape() as tape:
        value = ops.masked_mean(x, np.zeros((1, 2, 2), dtype=bool))
    tape.backward(value)
    assert value.item() == 0.0
    assert np.all(tape.gradient(x) == 0)

def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with GradTape() as tape:
        y = ops.add(ops.scale(x, 3.0), x)
    tape.backward(y)
    assert tape.gradient(x)[0] == pytest.approx(4.0)

def test_tensor_is_immutable():
    tensor = Tensor(np.zeros(3))
    with pytest.raises(ValueError):
        tensor.data[0] = 1.0

def test_ops_outside_tape_are_not_recorded():
    x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
    ops.relu(x)
    with GradTape() as tape:
        ops.relu(Tensor(np.ones((1, 2, 2))))
        ops.relu(x)
    assert tape.get_num_records == 1

def test_overflow_raises_numerical_error():
    with pytest.raises(NumericalError):
        ops.scale(Tensor(np.array([1e308])), 10.0)
