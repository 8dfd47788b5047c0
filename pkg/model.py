import json
import struct
import logging
import constants
import functions
import numpy as np
import tensorops as ops
from dataclasses import dataclass, asdict
from typing import Dict, Optional, Tuple, Union
from tensorops import NumericalError, Tensor

logger = logging.getLogger(__name__)

class CheckpointFormatError(ValueError):
    """ Raised when a checkpoint file cannot be parsed. """

@dataclass
class ArchConfig():
    """ Toy encoder-decoder architecture.

        Attributes:
            num_classes (int): Output channels C (default: 8).
            in_channels (int): Image channels (default: 3).
            channels (tuple): Width of the full-resolution stem followed by one stride-2 stage per extra entry (default: (16, 32, 64)).
            kernel_size (int): Odd kernel size of the encoder convolutions (default: 3).
            zero_init_head (bool): Zero-initialize the final 1x1 convolution (default: True).
            init_seed (int): Seed of the He-style initialization. """
    num_classes: int = 8
    in_channels: int = 3
    channels: Tuple[int, ...] = (16, 32, 64)
    kernel_size: int = 3
    zero_init_head: bool = True
    init_seed: int = constants.DEFAULT_SEED

    def __post_init__(self) -> None:
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) < 1 or min(self.channels) < 1:
            raise ValueError(f'channels has to be a non-empty list of positive widths. Received: {self.channels}')
        if self.kernel_size % 2 == 0:
            raise ValueError(f'kernel_size has to be odd. Received: {self.kernel_size}')
        if self.num_classes < 2:
            raise ValueError(f'num_classes has to be at least 2. Received: {self.num_classes}')

    @property
    def get_downsample(self) -> int:
        """ Return the total downsampling factor of the encoder. """
        return 2 ** (len(self.channels) - 1)

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """ Return the parameter names and shapes in their canonical order. """
        k = self.kernel_size
        shapes = {
            'stem.weight': (self.channels[0], self.in_channels, k, k),
            'stem.bias': (self.channels[0],)
        }
        for stage in range(1, len(self.channels)):
            shapes[f'down{stage}.weight'] = (self.channels[stage], self.channels[stage - 1], k, k)
            shapes[f'down{stage}.bias'] = (self.channels[stage],)
        head_in = self.channels[-1] + self.channels[0] if len(self.channels) > 1 else self.channels[0]
        shapes['head.weight'] = (self.num_classes, head_in, 1, 1)
        shapes['head.bias'] = (self.num_classes,)
        return shapes

class ModelState():
    """ Parameters, momentum buffers and architecture of the toy segmentation network.
        The network is a full-resolution stem, stride-2 stages, a bilinear upsampling back to the stem
        resolution, a skip concatenation with the stem features and a final 1x1 convolution.

        Attributes:
            arch (ArchConfig): The architecture.
            params (dict): Parameter arrays by name.
            velocity (dict): SGD momentum buffers by name. """

    def __init__(self, arch:ArchConfig, params:Dict[str, np.ndarray], velocity:Optional[Dict[str, np.ndarray]]=None) -> None:
        self.arch = arch
        shapes = arch.parameter_shapes()
        if set(params) != set(shapes):
            raise ValueError(f'Parameters have to be {list(shapes)}. Received: {list(params)}')
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ValueError(f'{name} has to have shape {shape}. Received: {params[name].shape}')

        self.params = {name: np.array(params[name], dtype=np.float64) for name in shapes}
        if velocity is None:
            velocity = {name: np.zeros(shape) for name, shape in shapes.items()}
        self.velocity = {name: np.array(velocity[name], dtype=np.float64) for name in shapes}

    @classmethod
    def initialize(cls, arch:ArchConfig, seed:Optional[int]=None) -> 'ModelState':
        """ He-style scaled normal initialization, zero biases, optionally zero head.

            Inputs:
                arch (ArchConfig): The architecture.
                seed (int): Overrides arch.init_seed. """
        rng = functions.derive_rng(arch.init_seed if seed is None else seed, 'init')
        params = {}
        for name, shape in arch.parameter_shapes().items():
            if name.endswith('.bias') or (name == 'head.weight' and arch.zero_init_head):
                params[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:]))
                params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        return cls(arch, params)

    def copy(self) -> 'ModelState':
        return ModelState(self.arch, self.params, self.velocity)

    def parameter_tensors(self, requires_grad:bool=True) -> Dict[str, Tensor]:
        """ Wrap the parameters as tensors for a forward pass on a tape. """
        return {name: Tensor(value, requires_grad=requires_grad) for name, value in self.params.items()}

    def forward(self, image:Union[np.ndarray, Tensor], params:Optional[Dict[str, Tensor]]=None) -> Tensor:
        """ Compute the (C,H,W) logits of a (3,H,W) image. Sizes that are not a multiple of the
            downsampling factor are reflect-padded and the logits cropped back.

            Inputs:
                image (np.ndarray | Tensor): The (3,H,W) image.
                params (dict): Parameter tensors to differentiate through (default: constant parameters). """
        x = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
        if x.ndim != 3 or x.shape[0] != self.arch.in_channels:
            raise ValueError(f'Image has to be ({self.arch.in_channels},H,W). Received: {x.shape}')
        if params is None:
            params = self.parameter_tensors(requires_grad=False)

        _, height, width = x.shape
        factor = self.arch.get_downsample
        pad_height, pad_width = (-height) % factor, (-width) % factor
        if pad_height or pad_width:
            mode = 'reflect' if height > pad_height and width > pad_width else 'edge'
            x = np.pad(x, ((0, 0), (0, pad_height), (0, pad_width)), mode=mode)

        pad = self.arch.kernel_size // 2
        stem = ops.relu(ops.conv2d(Tensor(x), params['stem.weight'], params['stem.bias'], stride=1, pad=pad))

        features = stem
        for stage in range(1, len(self.arch.channels)):
            features = ops.relu(ops.conv2d(features, params[f'down{stage}.weight'], params[f'down{stage}.bias'], stride=2, pad=pad))
        if len(self.arch.channels) > 1:
            upsampled = ops.bilinear_resize(features, size=stem.shape[1:])
            features = ops.concat([upsampled, stem])

        logits = ops.conv2d(features, params['head.weight'], params['head.bias'], stride=1, pad=0)
        if pad_height or pad_width:
            logits = ops.crop(logits, height, width)
        return logits

    def sgd_step(self, grads:Dict[str, np.ndarray], lr:float, momentum:float=0.9, weight_decay:float=1e-4) -> 'ModelState':
        """ One SGD step with momentum and L2 weight decay, in place:
            v <- momentum * v + g + weight_decay * theta; theta <- theta - lr * v.

            Inputs:
                grads (dict): Gradient arrays by parameter name.
                lr (float): The learning rate.
                momentum (float): The momentum (default: 0.9).
                weight_decay (float): The weight decay (default: 1e-4). """
        for name in self.params:
            grad = np.asarray(grads[name], dtype=np.float64)
            if not np.all(np.isfinite(grad)):
                raise NumericalError(f'Non-finite gradient for {name}.')
            velocity = momentum * self.velocity[name] + grad + weight_decay * self.params[name]
            updated = self.params[name] - lr * velocity
            if not np.all(np.isfinite(updated)):
                raise NumericalError(f'Non-finite update for {name}.')
            self.velocity[name] = velocity
            self.params[name] = updated
        return self

    def to_bytes(self) -> bytes:
        """ Serialize: magic, version, architecture JSON, then parameters and momentum buffers
            as shape-prefixed little-endian float64 arrays. """
        arch_json = json.dumps(asdict(self.arch), sort_keys=True).encode('utf-8')
        chunks = [constants.CHECKPOINT_MAGIC, struct.pack('<HI', constants.CHECKPOINT_VERSION, len(arch_json)), arch_json]
        for group in (self.params, self.velocity):
            chunks.append(struct.pack('<H', len(group)))
            for name, value in group.items():
                encoded = name.encode('utf-8')
                chunks.append(struct.pack('<H', len(encoded)) + encoded)
                chunks.append(struct.pack('<B', value.ndim) + struct.pack(f'<{value.ndim}I', *value.shape))
                chunks.append(value.astype('<f8').tobytes())
        return b''.join(chunks)

    @classmethod
    def from_bytes(cls, payload:bytes) -> 'ModelState':
        """ Parse a serialized checkpoint. """
        if payload[:4] != constants.CHECKPOINT_MAGIC:
            raise CheckpointFormatError('Bad checkpoint magic at offset 0.')
        try:
            version, arch_length = struct.unpack_from('<HI', payload, 4)
            if version != constants.CHECKPOINT_VERSION:
                raise CheckpointFormatError(f'Unsupported checkpoint version {version} at offset 4.')
            offset = 10
            arch_fields = json.loads(payload[offset:offset + arch_length].decode('utf-8'))
            offset += arch_length
            arch = ArchConfig(**arch_fields)

            groups = []
            for _ in range(2):
                (count,) = struct.unpack_from('<H', payload, offset)
                offset += 2
                group = {}
                for _ in range(count):
                    (name_length,) = struct.unpack_from('<H', payload, offset)
                    name = payload[offset + 2:offset + 2 + name_length].decode('utf-8')
                    offset += 2 + name_length
                    (ndim,) = struct.unpack_from('<B', payload, offset)
                    shape = struct.unpack_from(f'<{ndim}I', payload, offset + 1)
                    offset += 1 + 4 * ndim
                    size = int(np.prod(shape)) * 8
                    if offset + size > len(payload):
                        raise CheckpointFormatError(f'Truncated array {name} at offset {offset}.')
                    group[name] = np.frombuffer(payload, dtype='<f8', count=size // 8, offset=offset).reshape(shape).astype(np.float64)
                    offset += size
                groups.append(group)
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError, TypeError) as error:
            raise CheckpointFormatError(f'Corrupt checkpoint: {error}') from error

        return cls(arch, groups[0], groups[1])

    def save(self, path:str) -> None:
        with open(path, 'wb') as file:
            file.write(self.to_bytes())

    @classmethod
    def load(cls, path:str) -> 'ModelState':
        with open(path, 'rb') as file:
            return cls.from_bytes(file.read())

def poly_lr(base_lr:float, step:int, total_steps:int, power:float=2.0) -> float:
    """ 'Poly' schedule base_lr * (1 - step / total_steps) ** power. """
    if total_steps <= 0:
        raise ValueError(f'total_steps has to be positive. Received: {total_steps}')
    if not 0 <= step <= total_steps:
        raise ValueError(f'step has to be between 0 and {total_steps}. Received: {step}')
    return base_lr * (1.0 - step / total_steps) ** power
