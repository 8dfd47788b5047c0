import logging
import threading
import numpy as np
from typing import Callable, List, Optional, Sequence, Tuple
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

class NumericalError(ValueError):
    """ Raised when an operation produces NaN or Inf values. """

_local = threading.local()

def _tape_stack() -> list:
    """ Return the stack of active tapes of the current thread. """
    if not hasattr(_local, 'tapes'):
        _local.tapes = []
    return _local.tapes

class Tensor():
    """ Immutable dense float64 array with an optional gradient requirement.
        Rasters are channel-planar (C,H,W), row-major.

        Attributes:
            data (np.ndarray): The read-only values.
            requires_grad (bool): Whether the ops consuming this tensor are recorded on the active tape. """

    def __init__(self, data, requires_grad:bool=False) -> None:
        self._set(np.array(data, dtype=np.float64), requires_grad)

    @classmethod
    def _wrap(cls, array:np.ndarray, requires_grad:bool) -> 'Tensor':
        """ Build a tensor around a freshly computed array without copying it. """
        tensor = cls.__new__(cls)
        tensor._set(array, requires_grad)
        return tensor

    def _set(self, array:np.ndarray, requires_grad:bool) -> None:
        array.flags.writeable = False
        self._data = array
        self.requires_grad = requires_grad

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        """ Return the value of a single-element tensor. """
        if self._data.size != 1:
            raise ValueError(f'item() needs a single-element tensor. Received shape: {self.shape}')
        return float(self._data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """ Return a writable copy of the values. """
        return self._data.copy()

    def __repr__(self) -> str:
        return f'Tensor(shape={self.shape}, requires_grad={self.requires_grad})'

class _Record():
    """ One executed differentiable op: its inputs, its output and the vector-Jacobian product. """
    __slots__ = ('name', 'inputs', 'output', 'backward')

    def __init__(self, name:str, inputs:Sequence[Tensor], output:Tensor, backward:Callable) -> None:
        self.name = name
        self.inputs = tuple(inputs)
        self.output = output
        self.backward = backward

class GradTape():
    """ Ordered record of differentiable ops executed while the tape is active.
        One tape per training step; a tape belongs to the thread that entered it.

        Usage:
            with GradTape() as tape:
                loss = ...
            tape.backward(loss)
            grad = tape.gradient(weight) """

    def __init__(self) -> None:
        self._records: List[_Record] = []
        self._grads = {}

    def __enter__(self) -> 'GradTape':
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc_info) -> None:
        _tape_stack().pop()

    @property
    def get_num_records(self) -> int:
        """ Return the number of recorded ops. """
        return len(self._records)

    def record(self, name:str, inputs:Sequence[Tensor], output:Tensor, backward:Callable) -> None:
        """ Append an executed op. backward maps the output gradient to one gradient (or None) per input. """
        self._records.append(_Record(name, inputs, output, backward))

    def backward(self, output:Tensor, output_grad:Optional[np.ndarray]=None) -> None:
        """ Propagate gradients from output to every recorded input, visiting ops in reverse execution order.

            Inputs:
                output (Tensor): The tensor to differentiate (usually a scalar loss).
                output_grad (np.ndarray): Seed gradient (default: ones). """
        if output_grad is None:
            output_grad = np.ones(output.shape)
        grads = {id(output): np.asarray(output_grad, dtype=np.float64)}

        for record in reversed(self._records):
            grad = grads.get(id(record.output))
            if grad is None:
                continue
            input_grads = record.backward(grad)
            for tensor, input_grad in zip(record.inputs, input_grads):
                if input_grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                # Accumulation is additive for tensors consumed more than once
                grads[key] = grads[key] + input_grad if key in grads else input_grad

        self._grads = grads

    def gradient(self, tensor:Tensor) -> np.ndarray:
        """ Return the gradient accumulated for tensor by the last backward() (zeros if it was not reached). """
        grad = self._grads.get(id(tensor))
        if grad is None:
            return np.zeros(tensor.shape)
        return grad

def apply_op(name:str, array:np.ndarray, inputs:Sequence[Tensor], backward:Callable) -> Tensor:
    """ Wrap the result of a forward computation and record it on the active tape when needed.

        Inputs:
            name (str): The op name, used in error messages.
            array (np.ndarray): The forward result.
            inputs (Sequence[Tensor]): The differentiable inputs, in the order backward returns their gradients.
            backward (Callable): Maps the output gradient to a tuple of input gradients. """
    if not np.all(np.isfinite(array)):
        raise NumericalError(f'{name} produced non-finite values.')

    requires_grad = any(tensor.requires_grad for tensor in inputs)
    output = Tensor._wrap(np.asarray(array, dtype=np.float64), requires_grad)

    stack = _tape_stack()
    if requires_grad and stack:
        stack[-1].record(name, inputs, output, backward)

    return output

def _check_finite(name:str, tensor:Tensor) -> None:
    if not np.all(np.isfinite(tensor.data)):
        raise NumericalError(f'{name} received non-finite input.')

def conv2d(input:Tensor, kernel:Tensor, bias:Optional[Tensor]=None, stride:int=1, pad:int=0) -> Tensor:
    """ 2D cross-correlation of a (C,H,W) input with a (Co,C,k,k) kernel, zero padding.

        Inputs:
            input (Tensor): The (C,H,W) input.
            kernel (Tensor): The (Co,C,k,k) kernel, k odd.
            bias (Tensor): Optional (Co,) bias.
            stride (int): The stride (default: 1).
            pad (int): Zero padding on every side (default: 0, use (k-1)/2 for 'same'). """
    x = input.data
    w = kernel.data
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError(f'conv2d needs a (C,H,W) input and a (Co,C,k,k) kernel. Received: {x.shape} and {w.shape}')

    channels, height, width = x.shape
    out_channels, in_channels, k, k_width = w.shape
    if in_channels != channels:
        raise ValueError(f'Kernel input channels have to match the input. Received: {in_channels} and {channels}')
    if k != k_width or k % 2 == 0:
        raise ValueError(f'Kernel has to be square with odd size. Received: {k}x{k_width}')
    if bias is not None and bias.shape != (out_channels,):
        raise ValueError(f'Bias has to have shape ({out_channels},). Received: {bias.shape}')
    if stride < 1 or pad < 0:
        raise ValueError(f'stride has to be >= 1 and pad >= 0. Received: {stride} and {pad}')
    if height + 2 * pad < k or width + 2 * pad < k:
        raise ValueError(f'Input {height}x{width} with pad {pad} is smaller than the kernel {k}x{k}')

    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))[:, ::stride, ::stride] # (C,H',W',k,k)
    out = np.tensordot(w, windows, axes=([1, 2, 3], [0, 3, 4])) # (Co,H',W')
    if bias is not None:
        out = out + bias.data[:, None, None]

    def backward(grad:np.ndarray) -> tuple:
        out_height, out_width = grad.shape[1:]
        grad_kernel = np.tensordot(grad, windows, axes=([1, 2], [1, 2]))
        grad_cols = np.tensordot(w, grad, axes=([0], [0])) # (C,k,k,H',W')

        grad_padded = np.zeros(padded.shape)
        for i in range(k):
            for j in range(k):
                grad_padded[:, i:i + stride * (out_height - 1) + 1:stride, j:j + stride * (out_width - 1) + 1:stride] += grad_cols[:, i, j]
        grad_input = grad_padded[:, pad:pad + height, pad:pad + width]

        if bias is None:
            return grad_input, grad_kernel
        return grad_input, grad_kernel, grad.sum(axis=(1, 2))

    inputs = (input, kernel) if bias is None else (input, kernel, bias)
    return apply_op('conv2d', out, inputs, backward)

def relu(input:Tensor) -> Tensor:
    x = input.data
    positive = x > 0
    return apply_op('relu', np.where(positive, x, 0.0), (input,), lambda grad: (grad * positive,))

def _resize_matrix(in_size:int, out_size:int) -> np.ndarray:
    """ Linear interpolation weights (out_size, in_size) with half-pixel centers (align-corners=false). """
    ratio = in_size / out_size
    source = np.clip((np.arange(out_size) + 0.5) * ratio - 0.5, 0, in_size - 1)
    low = np.floor(source).astype(int)
    high = np.minimum(low + 1, in_size - 1)
    frac = source - low

    rows = np.arange(out_size)
    matrix = np.zeros((out_size, in_size))
    matrix[rows, low] += 1.0 - frac
    matrix[rows, high] += frac
    return matrix

def bilinear_resize(input:Tensor, scale:float=1.0, size:Optional[Tuple[int, int]]=None) -> Tensor:
    """ Bilinear resize of a (C,H,W) tensor, align-corners=false convention.

        Inputs:
            input (Tensor): The (C,H,W) input.
            scale (float): Scale factor, output extent round(H*scale) (default: 1.0).
            size (tuple): Explicit (H'',W'') output size, overrides scale. """
    _check_finite('bilinear_resize', input)
    if input.data.ndim != 3:
        raise ValueError(f'bilinear_resize needs a (C,H,W) input. Received: {input.shape}')
    _, height, width = input.shape

    if size is None:
        if scale <= 0:
            raise ValueError(f'scale has to be positive. Received: {scale}')
        size = (int(round(height * scale)), int(round(width * scale)))
    out_height, out_width = size
    if out_height < 1 or out_width < 1:
        raise ValueError(f'Output extent has to be at least 1. Received: {size}')

    if (out_height, out_width) == (height, width):
        return apply_op('bilinear_resize', input.data.copy(), (input,), lambda grad: (grad,))

    rows = _resize_matrix(height, out_height)
    cols = _resize_matrix(width, out_width)
    out = rows[None] @ input.data @ cols.T[None]

    def backward(grad:np.ndarray) -> tuple:
        return (rows.T[None] @ grad @ cols[None],)

    return apply_op('bilinear_resize', out, (input,), backward)

def concat(tensors:Sequence[Tensor], axis:int=0) -> Tensor:
    """ Concatenate tensors along axis (channel axis by default). """
    tensors = list(tensors)
    sizes = [tensor.shape[axis] for tensor in tensors]
    out = np.concatenate([tensor.data for tensor in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def backward(grad:np.ndarray) -> tuple:
        return tuple(np.split(grad, splits, axis=axis))

    return apply_op('concat', out, tensors, backward)

def crop(input:Tensor, height:int, width:int) -> Tensor:
    """ Keep the top-left height x width window of a (C,H,W) tensor. """
    full_shape = input.shape
    if height > full_shape[1] or width > full_shape[2]:
        raise ValueError(f'Crop {height}x{width} exceeds the input {full_shape[1]}x{full_shape[2]}')

    def backward(grad:np.ndarray) -> tuple:
        grad_input = np.zeros(full_shape)
        grad_input[:, :height, :width] = grad
        return (grad_input,)

    return apply_op('crop', input.data[:, :height, :width].copy(), (input,), backward)

def _softmax_array(x:np.ndarray, axis:int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    exponent = np.exp(shifted)
    return exponent / exponent.sum(axis=axis, keepdims=True)

def softmax(input:Tensor, axis:int=0) -> Tensor:
    """ Softmax along the class axis, stabilized by max-subtraction. """
    _check_finite('softmax', input)
    probs = _softmax_array(input.data, axis)

    def backward(grad:np.ndarray) -> tuple:
        return (probs * (grad - (grad * probs).sum(axis=axis, keepdims=True)),)

    return apply_op('softmax', probs, (input,), backward)

def gumbel_softmax(logits:Tensor, temperature:float, noise:np.ndarray) -> Tensor:
    """ Relaxed one-hot sample softmax((logits + noise) / temperature) along the class axis.
        The caller draws the standard-Gumbel noise and passes it in, so the op is deterministic.

        Inputs:
            logits (Tensor): The (C,H,W) logits.
            temperature (float): Relaxation temperature, > 0.
            noise (np.ndarray): The (C,H,W) Gumbel noise, held fixed for differentiation. """
    if temperature <= 0:
        raise ValueError(f'temperature has to be positive. Received: {temperature}')
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != logits.shape:
        raise ValueError(f'noise has to match the logits shape {logits.shape}. Received: {noise.shape}')
    _check_finite('gumbel_softmax', logits)

    probs = _softmax_array((logits.data + noise) / temperature, 0)

    def backward(grad:np.ndarray) -> tuple:
        return (probs * (grad - (grad * probs).sum(axis=0, keepdims=True)) / temperature,)

    return apply_op('gumbel_softmax', probs, (logits,), backward)

def spatial_gradient_norm(mask:Tensor) -> Tensor:
    """ Per-pixel boundary magnitude sqrt(sum_c (Dx y_c)^2 + (Dy y_c)^2) of a (C,H,W) mask.
        Dx, Dy are central differences with replicate padding at the borders. """
    if mask.data.ndim != 3:
        raise ValueError(f'spatial_gradient_norm needs a (C,H,W) input. Received: {mask.shape}')
    padded = np.pad(mask.data, ((0, 0), (1, 1), (1, 1)), mode='edge')
    dx = (padded[:, 1:-1, 2:] - padded[:, 1:-1, :-2]) / 2.0
    dy = (padded[:, 2:, 1:-1] - padded[:, :-2, 1:-1]) / 2.0
    gamma = np.sqrt((dx ** 2 + dy ** 2).sum(axis=0))

    def backward(grad:np.ndarray) -> tuple:
        # Subgradient 0 where the norm vanishes
        inverse = np.divide(grad, gamma, out=np.zeros_like(gamma), where=gamma > 0)
        grad_dx = inverse[None] * dx / 2.0
        grad_dy = inverse[None] * dy / 2.0

        grad_padded = np.zeros(padded.shape)
        grad_padded[:, 1:-1, 2:] += grad_dx
        grad_padded[:, 1:-1, :-2] -= grad_dx
        grad_padded[:, 2:, 1:-1] += grad_dy
        grad_padded[:, :-2, 1:-1] -= grad_dy

        # Fold the replicated border back onto the edge pixels
        grad_mask = grad_padded[:, 1:-1, 1:-1].copy()
        grad_mask[:, 0, :] += grad_padded[:, 0, 1:-1]
        grad_mask[:, -1, :] += grad_padded[:, -1, 1:-1]
        grad_mask[:, :, 0] += grad_padded[:, 1:-1, 0]
        grad_mask[:, :, -1] += grad_padded[:, 1:-1, -1]
        return (grad_mask,)

    return apply_op('spatial_gradient_norm', gamma, (mask,), backward)

def add(a:Tensor, b:Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f'add needs equal shapes. Received: {a.shape} and {b.shape}')
    return apply_op('add', a.data + b.data, (a, b), lambda grad: (grad, grad))

def add_n(tensors:Sequence[Tensor]) -> Tensor:
    """ Sum of equally shaped tensors, accumulated in list order. """
    tensors = list(tensors)
    if not tensors:
        raise ValueError('add_n needs at least one tensor.')
    total = np.zeros(tensors[0].shape)
    for tensor in tensors:
        if tensor.shape != total.shape:
            raise ValueError(f'add_n needs equal shapes. Received: {tensor.shape} and {total.shape}')
        total = total + tensor.data
    return apply_op('add_n', total, tensors, lambda grad: tuple(grad for _ in tensors))

def scale(input:Tensor, factor:float) -> Tensor:
    return apply_op('scale', input.data * factor, (input,), lambda grad: (grad * factor,))

def subtract_constant(input:Tensor, constant:np.ndarray) -> Tensor:
    """ input - constant, with the constant excluded from differentiation. """
    return apply_op('subtract_constant', input.data - constant, (input,), lambda grad: (grad,))

def absolute(input:Tensor) -> Tensor:
    sign = np.sign(input.data)
    return apply_op('absolute', np.abs(input.data), (input,), lambda grad: (grad * sign,))

def masked_mean(input:Tensor, mask:np.ndarray) -> Tensor:
    """ Mean of input over the pixels where mask is true; 0 with zero gradient for an empty mask.
        The mask is a constant for differentiation. """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != input.shape:
        raise ValueError(f'mask has to match the input shape {input.shape}. Received: {mask.shape}')
    count = int(mask.sum())
    if count == 0:
        return apply_op('masked_mean', np.array(0.0), (input,), lambda grad: (np.zeros(input.shape),))

    value = np.array(input.data[mask].sum() / count)

    def backward(grad:np.ndarray) -> tuple:
        return (np.where(mask, grad / count, 0.0),)

    return apply_op('masked_mean', value, (input,), backward)

def gradcheck(function:Callable, inputs:Sequence[np.ndarray], eps:float=1e-5, num_points:int=20, seed:int=0) -> float:
    """ Compare reverse-mode gradients with central finite differences and return the worst relative error.

        Inputs:
            function (Callable): Maps Tensors (one per input) to a Tensor; the sum of its output is differentiated.
            inputs (Sequence[np.ndarray]): The points at which to check.
            eps (float): Finite-difference step (default: 1e-5).
            num_points (int): Coordinates sampled per input (default: 20).
            seed (int): Seed for the coordinate sampling. """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(x, requires_grad=True) for x in arrays]
    with GradTape() as tape:
        output = function(*tensors)
    tape.backward(output)
    analytic = [tape.gradient(tensor).reshape(-1) for tensor in tensors]

    def evaluate(position:int, flat_index:int, delta:float) -> float:
        shifted = [x.copy() for x in arrays]
        shifted[position].reshape(-1)[flat_index] += delta
        return float(function(*[Tensor(x) for x in shifted]).data.sum())

    rng = np.random.default_rng(seed)
    worst = 0.0
    for position, x in enumerate(arrays):
        picks = rng.choice(x.size, size=min(num_points, x.size), replace=False)
        for flat_index in picks:
            numeric = (evaluate(position, flat_index, eps) - evaluate(position, flat_index, -eps)) / (2 * eps)
            exact = analytic[position][flat_index]
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-6)
            worst = max(worst, error)

    logger.debug(f'gradcheck worst relative error: {worst:.3e}')
    return worst
