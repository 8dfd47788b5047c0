import re
import zlib
import numpy as np
from typing import Tuple, Union

def derive_rng(seed:int, *keys:Union[int, str]) -> np.random.Generator:
    """ Return a generator that is a pure function of the seed and the keys.
        String keys are hashed with CRC32 so that the stream does not depend on PYTHONHASHSEED.

        Inputs:
            seed (int): The global seed.
            keys (int | str): Stream identifiers (e.g. epoch, item id). """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode('utf-8')))
        else:
            entropy.append(int(key) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))

def id_sort_key(scene_id:str) -> Tuple:
    """ Natural ordering key for ids such as 'real/12' so that 'real/2' < 'real/10'. """
    parts = re.split(r'(\d+)', scene_id)
    return tuple(int(part) if part.isdigit() else part for part in parts)

def one_hot(label:np.ndarray, num_classes:int) -> np.ndarray:
    """ One-hot encode a (H,W) class-id grid into a (C,H,W) float64 array.
        Pixels outside [0, num_classes) get an all-zero column. """
    classes = np.arange(num_classes).reshape(-1, 1, 1)
    return (label[None, :, :] == classes).astype(np.float64)

def hflip(array:np.ndarray) -> np.ndarray:
    """ Mirror the last axis of an image (C,H,W) or mask (H,W). """
    return np.ascontiguousarray(array[..., ::-1])
