import logging
import constants
import numpy as np
from dataclasses import dataclass
from typing import List, Sequence
from datagen import LabeledScene, SceneDataset

logger = logging.getLogger(__name__)

AUGMENT_SOURCES = ('synthetic', 'fine')
AUGMENT_TARGETS = ('coarse', 'fine')

@dataclass
class AugmentConfig():
    """ Cross-domain augmentation parameters.

        Attributes:
            p_select_real (float): Probability that a target batch item gains an augmented twin (default: 0.5).
            p_class (float): Per-class inclusion probability in the paste mask (default: 0.5).
            enabled (bool): Switch for the whole augmentation (default: True).
            source (str): Pool the pasted regions come from, 'synthetic' or 'fine' (default: 'synthetic').
            target (str): Batch items that receive pasted regions, 'coarse' or 'fine' (default: 'coarse').
            seed (int): Seed stream id of the augmentation draws. """
    p_select_real: float = 0.5
    p_class: float = 0.5
    enabled: bool = True
    source: str = 'synthetic'
    target: str = 'coarse'
    seed: int = constants.DEFAULT_SEED

    def __post_init__(self) -> None:
        for name in ('p_select_real', 'p_class'):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f'{name} has to be between 0 and 1. Received: {value}')
        if self.source not in AUGMENT_SOURCES:
            raise ValueError(f'source has to be one of {AUGMENT_SOURCES}. Received: {self.source}')
        if self.target not in AUGMENT_TARGETS:
            raise ValueError(f'target has to be one of {AUGMENT_TARGETS}. Received: {self.target}')

    @property
    def get_target_domain(self) -> int:
        return constants.DOMAIN_REAL_COARSE if self.target == 'coarse' else constants.DOMAIN_REAL_FINE

def build_paste_mask(synthetic_label:np.ndarray, cfg:AugmentConfig, rng:np.random.Generator) -> np.ndarray:
    """ Boolean mask of the pixels whose class was drawn into the pasted subset.
        Every class present in the label is included independently with probability p_class.

        Inputs:
            synthetic_label (np.ndarray): The (H,W) source label.
            cfg (AugmentConfig): The augmentation parameters.
            rng (np.random.Generator): The draw stream. """
    present = np.unique(synthetic_label[synthetic_label != constants.IGNORE])
    chosen = present[rng.random(present.size) < cfg.p_class]
    return np.isin(synthetic_label, chosen)

def mix(real:LabeledScene, synthetic:LabeledScene, mask:np.ndarray) -> LabeledScene:
    """ Paste the masked pixels of the synthetic scene onto the real scene. Image, label and provenance of a
        pixel always come from the same source scene.

        Inputs:
            real (LabeledScene): The scene receiving the paste (non-pasted pixels keep its labels, IGNORE included).
            synthetic (LabeledScene): The scene providing the pasted pixels.
            mask (np.ndarray): The (H,W) paste mask, true where the synthetic pixel is taken. """
    mask = np.asarray(mask, dtype=bool)
    if real.label.shape != synthetic.label.shape or mask.shape != real.label.shape:
        raise ValueError(f'mix needs matching sizes. Received: {real.label.shape}, {synthetic.label.shape} and mask {mask.shape}')

    return LabeledScene(
        id=f'{real.id}+{synthetic.id}',
        image=np.where(mask[None], synthetic.image, real.image),
        label=np.where(mask, synthetic.label, real.label).astype(np.uint8),
        domain=constants.DOMAIN_AUGMENTED,
        provenance=np.where(mask, synthetic.provenance, real.provenance).astype(np.uint8),
        cost_minutes=0.0
    )

def fit_to(scene:LabeledScene, height:int, width:int) -> LabeledScene:
    """ Center-crop or pad (zero image, IGNORE label) a scene to height x width. """
    if (scene.height, scene.width) == (height, width):
        return scene

    def place(array:np.ndarray, fill) -> np.ndarray:
        out = np.full(array.shape[:-2] + (height, width), fill, dtype=array.dtype)
        src_top, dst_top = max((array.shape[-2] - height) // 2, 0), max((height - array.shape[-2]) // 2, 0)
        src_left, dst_left = max((array.shape[-1] - width) // 2, 0), max((width - array.shape[-1]) // 2, 0)
        rows, cols = min(height, array.shape[-2]), min(width, array.shape[-1])
        out[..., dst_top:dst_top + rows, dst_left:dst_left + cols] = array[..., src_top:src_top + rows, src_left:src_left + cols]
        return out

    return scene.copy(
        image=place(scene.image, 0.0),
        label=place(scene.label, constants.IGNORE),
        provenance=place(scene.provenance, constants.PROVENANCE_IGNORE)
    )

def augment_batch(batch:Sequence[LabeledScene], synthetic_pool:SceneDataset, cfg:AugmentConfig, rng:np.random.Generator) -> List[LabeledScene]:
    """ Add an augmented twin next to each target item selected with probability p_select_real. The partner
        is drawn uniformly from the whole pool, not from the batch. Draws happen in item order.

        Inputs:
            batch (Sequence[LabeledScene]): The batch items.
            synthetic_pool (SceneDataset): The pool the pasted regions come from.
            cfg (AugmentConfig): The augmentation parameters.
            rng (np.random.Generator): The draw stream. """
    if len(synthetic_pool) == 0:
        raise ValueError('augment_batch needs a non-empty source pool.')

    augmented = list(batch)
    if not cfg.enabled:
        return augmented

    target_domain = cfg.get_target_domain
    for scene in batch:
        if scene.domain != target_domain:
            continue
        if rng.random() >= cfg.p_select_real:
            continue
        partner = synthetic_pool[int(rng.integers(len(synthetic_pool)))]
        partner = fit_to(partner, scene.height, scene.width)
        mask = build_paste_mask(partner.label, cfg, rng)
        augmented.append(mix(scene, partner, mask))

    logger.debug(f'Augmented batch: {len(batch)} items + {len(augmented) - len(batch)} twins.')
    return augmented
