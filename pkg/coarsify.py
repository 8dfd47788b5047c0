import logging
import constants
import functions
import numpy as np
from scipy import ndimage
from dataclasses import dataclass
from datagen import LabeledScene, SceneDataset, provenance_from_label

logger = logging.getLogger(__name__)

# 3x3 cross: erosion and component connectivity
CROSS = ndimage.generate_binary_structure(2, 1)

@dataclass
class CoarsePolicy():
    """ Coarse annotation simulation parameters.

        Attributes:
            target_labeled_fraction (float): Fraction of pixels left labeled, in (0,1] (default: 0.63).
            min_component_area (int): Labeled components smaller than this become IGNORE (default: 16).
            max_erosion_iters (int): Upper bound of the uniform erosion count (default: 8).
            fractional_last_step (bool): Restore a seeded subset of the last eroded layer to approach the
                target from below (default: True). Only layers away from class boundaries are restored. """
    target_labeled_fraction: float = 0.63
    min_component_area: int = 16
    max_erosion_iters: int = 8
    fractional_last_step: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.target_labeled_fraction <= 1:
            raise ValueError(f'target_labeled_fraction has to be in (0,1]. Received: {self.target_labeled_fraction}')
        if self.min_component_area < 0 or self.max_erosion_iters < 0:
            raise ValueError(f'min_component_area and max_erosion_iters have to be >= 0. Received: {self.min_component_area} and {self.max_erosion_iters}')

def labeled_fraction(label:np.ndarray) -> float:
    """ Fraction of non-IGNORE pixels. """
    return float(np.count_nonzero(label != constants.IGNORE)) / label.size

def _erosion_depth(label:np.ndarray, max_iters:int) -> np.ndarray:
    """ Number of uniform erosion iterations each pixel survives within its class region (image border erodes too). """
    depth = np.zeros(label.shape, dtype=np.int64)
    for class_id in np.unique(label):
        region = label == class_id
        for iteration in range(1, max_iters + 1):
            region = ndimage.binary_erosion(region, structure=CROSS, border_value=0)
            if not region.any():
                break
            depth[region] = iteration
    return depth

def _drop_small_components(keep:np.ndarray, label:np.ndarray, min_area:int) -> np.ndarray:
    """ Remove kept components (per class, 4-connected) with fewer than min_area pixels. """
    if min_area <= 0:
        return keep
    result = keep.copy()
    for class_id in np.unique(label[keep]):
        components, count = ndimage.label(keep & (label == class_id), structure=CROSS)
        if count == 0:
            continue
        sizes = np.bincount(components.ravel())
        small = sizes < min_area
        small[0] = False
        result[small[components]] = False
    return result

def coarsify(label:np.ndarray, policy:CoarsePolicy, seed:int) -> np.ndarray:
    """ Simulate a coarse annotation of a dense mask: class regions are eroded uniformly until the labeled
        fraction first falls to <= target, leaving an IGNORE band along every class boundary. Kept pixels
        always carry their input class.

        Inputs:
            label (np.ndarray): The dense (H,W) class-id mask.
            policy (CoarsePolicy): The simulation parameters.
            seed (int): Seed of the fractional last step. """
    if np.any(label == constants.IGNORE):
        raise ValueError('coarsify needs a dense mask. Received a mask with IGNORE pixels.')

    depth = _erosion_depth(label, policy.max_erosion_iters)
    total = label.size

    def kept_at(iterations:int) -> np.ndarray:
        return _drop_small_components(depth >= iterations, label, policy.min_component_area)

    # Binary search on the uniform iteration count: the fraction is non-increasing in it
    low, high = 0, policy.max_erosion_iters
    while low < high:
        middle = (low + high) // 2
        if np.count_nonzero(kept_at(middle)) / total <= policy.target_labeled_fraction:
            high = middle
        else:
            low = middle + 1
    iterations = low
    keep = kept_at(iterations)

    target_pixels = int(round(policy.target_labeled_fraction * total))
    missing = target_pixels - int(np.count_nonzero(keep))
    if policy.fractional_last_step and iterations >= 2 and missing > 0:
        # The layer removed by the last iteration never touches a class boundary
        layer = np.flatnonzero(depth.ravel() == iterations - 1)
        order = functions.derive_rng(seed, 'coarsify-layer').permutation(layer)
        restored = np.zeros(total, dtype=bool)
        restored[order[:missing]] = True
        keep = _drop_small_components((depth >= iterations) | restored.reshape(label.shape), label, policy.min_component_area)

    coarse = np.where(keep, label, constants.IGNORE).astype(np.uint8)
    logger.debug(f'Coarsified with {iterations} erosion iterations: labeled fraction {labeled_fraction(coarse):.3f}.')
    return coarse

def coarsify_scene(scene:LabeledScene, policy:CoarsePolicy, seed:int) -> LabeledScene:
    """ Return the real-coarse version of a dense real scene, costed at the coarse unit cost. """
    coarse = coarsify(scene.label, policy, seed)
    return scene.copy(
        label=coarse,
        domain=constants.DOMAIN_REAL_COARSE,
        provenance=provenance_from_label(coarse),
        cost_minutes=constants.COARSE_MINUTES
    )

def coarsify_dataset(dataset:SceneDataset, policy:CoarsePolicy, seed:int, print_is_requested:bool=False) -> SceneDataset:
    """ Coarsify every scene; the per-scene seed is derived from (seed, scene id). """
    scenes = []
    for scene in dataset:
        scene_seed = int(functions.derive_rng(seed, scene.id).integers(2 ** 63))
        scenes.append(coarsify_scene(scene, policy, scene_seed))
    coarse = SceneDataset(scenes, dataset.num_classes)

    if print_is_requested:
        logger.info(f'Coarsified {len(coarse)} scenes: mean labeled fraction {coarse.summary()["labeled_fraction"].mean():.3f}.')
    return coarse
