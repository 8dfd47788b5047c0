import logging
import constants
import functions
import numpy as np
import tensorops as ops
from dataclasses import dataclass
from typing import List, Tuple
from tensorops import NumericalError, Tensor
from coarsify import labeled_fraction
from datagen import LabeledScene, SceneDataset
from model import ModelState

logger = logging.getLogger(__name__)

COMBINE_MODES = ('mean-prob', 'mean-logit')

@dataclass
class TTAConfig():
    """ Test-time augmentation consistency parameters.

        Attributes:
            flips (tuple): Horizontal flip settings (default: no flip, flip).
            scales (tuple): Resize scales (default: 0.5, 1.0, 2.0).
            confidence_threshold (float): Accept a pixel only if its averaged confidence is strictly above this (default: 0.9).
            combine (str): 'mean-prob' averages probabilities, 'mean-logit' averages logits then applies softmax (default: 'mean-prob'). """
    flips: Tuple[bool, ...] = constants.TTA_FLIPS
    scales: Tuple[float, ...] = constants.TTA_SCALES
    confidence_threshold: float = 0.9
    combine: str = 'mean-prob'

    def __post_init__(self) -> None:
        self.flips = tuple(bool(flip) for flip in self.flips)
        self.scales = tuple(float(scale) for scale in self.scales)
        if not self.flips or not self.scales or min(self.scales) <= 0:
            raise ValueError(f'flips and scales have to be non-empty with positive scales. Received: {self.flips} and {self.scales}')
        if self.combine not in COMBINE_MODES:
            raise ValueError(f'combine has to be one of {COMBINE_MODES}. Received: {self.combine}')
        if not 0 < self.confidence_threshold < 1:
            raise ValueError(f'confidence_threshold has to be in (0,1). Received: {self.confidence_threshold}')

    @property
    def get_combinations(self) -> List[Tuple[bool, float]]:
        """ Return every (flip, scale) combination in evaluation order. """
        return [(flip, scale) for flip in self.flips for scale in self.scales]

@dataclass
class PseudoLabelResult():
    """ Pseudo labels of one coarse scene merged with its manual labels.

        Attributes:
            label (np.ndarray): The merged (H,W) label, IGNORE where rejected.
            accepted_fraction (float): labeled_fraction(label).
            argmax_stack (np.ndarray): The (combos,H,W) per-combination argmax maps.
            provenance (np.ndarray): The (H,W) manual / pseudo / ignore flags. """
    label: np.ndarray
    accepted_fraction: float
    argmax_stack: np.ndarray
    provenance: np.ndarray

def _aligned_output(model:ModelState, image:np.ndarray, flip:bool, scale:float, combine:str) -> np.ndarray:
    """ Run one transformed forward pass and map its output back onto the original pixel grid. """
    _, height, width = image.shape
    x = functions.hflip(image) if flip else image
    if scale != 1.0:
        x = ops.bilinear_resize(Tensor(x), scale).data

    logits = model.forward(x)
    output = logits if combine == 'mean-logit' else ops.softmax(logits)
    aligned = ops.bilinear_resize(output, size=(height, width)).data
    return functions.hflip(aligned) if flip else aligned

def tta_predict(model:ModelState, image:np.ndarray, cfg:TTAConfig) -> Tuple[np.ndarray, np.ndarray]:
    """ Combine the predictions of every (flip, scale) combination. Probability maps (or logits in
        'mean-logit' mode) are resized back and un-flipped before the per-pixel argmax and the average.

        Inputs:
            model (ModelState): The trained model (read only).
            image (np.ndarray): The (3,H,W) image.
            cfg (TTAConfig): The augmentation parameters.

        Returns:
            prob_avg (np.ndarray): The (C,H,W) averaged class probabilities.
            argmax_stack (np.ndarray): The (combos,H,W) per-combination argmax maps. """
    outputs = [_aligned_output(model, image, flip, scale, cfg.combine) for flip, scale in cfg.get_combinations]
    argmax_stack = np.stack([output.argmax(axis=0) for output in outputs]).astype(np.uint8)

    average = np.mean(outputs, axis=0)
    prob_avg = ops.softmax(Tensor(average)).data if cfg.combine == 'mean-logit' else average
    if not np.all(np.isfinite(prob_avg)):
        raise NumericalError('tta_predict produced non-finite probabilities.')
    return prob_avg, argmax_stack

def fuse(prob_avg:np.ndarray, argmax_stack:np.ndarray, cfg:TTAConfig) -> np.ndarray:
    """ Accept argmax(prob_avg) where every combination agrees and the averaged confidence is strictly
        above the threshold; IGNORE elsewhere. """
    if prob_avg.shape[1:] != argmax_stack.shape[1:]:
        raise ValueError(f'prob_avg and argmax_stack have to be aligned. Received: {prob_avg.shape} and {argmax_stack.shape}')
    agree = np.all(argmax_stack == argmax_stack[0], axis=0)
    confident = prob_avg.max(axis=0) > cfg.confidence_threshold
    return np.where(agree & confident, prob_avg.argmax(axis=0), constants.IGNORE).astype(np.uint8)

def merge(coarse:LabeledScene, pseudo:np.ndarray) -> LabeledScene:
    """ Manual labels stay forever; every other pixel takes the new pseudo label (which may be IGNORE),
        replacing any pseudo label from a previous iteration.

        Inputs:
            coarse (LabeledScene): The current coarse scene with its provenance flags.
            pseudo (np.ndarray): The (H,W) fused pseudo labels. """
    if coarse.provenance is None or coarse.provenance.shape != coarse.label.shape:
        raise ValueError(f'Scene {coarse.id} needs per-pixel provenance flags to merge.')
    if pseudo.shape != coarse.label.shape:
        raise ValueError(f'pseudo has to be {coarse.label.shape}. Received: {pseudo.shape}')

    manual = coarse.provenance == constants.PROVENANCE_MANUAL
    if np.any(coarse.label[manual] == constants.IGNORE):
        raise ValueError(f'Scene {coarse.id} has manual provenance on IGNORE pixels.')

    label = np.where(manual, coarse.label, pseudo).astype(np.uint8)
    provenance = np.where(manual, constants.PROVENANCE_MANUAL,
                          np.where(pseudo != constants.IGNORE, constants.PROVENANCE_PSEUDO, constants.PROVENANCE_IGNORE)).astype(np.uint8)
    return coarse.copy(label=label, provenance=provenance)

def pseudolabel_scene(model:ModelState, scene:LabeledScene, cfg:TTAConfig, keep_previous:bool=False) -> Tuple[LabeledScene, PseudoLabelResult]:
    """ Pseudo-label the unlabeled pixels of one coarse scene and merge.

        Inputs:
            model (ModelState): The model of the previous round.
            scene (LabeledScene): The coarse scene.
            cfg (TTAConfig): The augmentation parameters.
            keep_previous (bool): Offer the previous pseudo label to merge where the new pass rejects a pixel. """
    prob_avg, argmax_stack = tta_predict(model, scene.image, cfg)
    pseudo = fuse(prob_avg, argmax_stack, cfg)
    if keep_previous:
        previous = (pseudo == constants.IGNORE) & (scene.provenance == constants.PROVENANCE_PSEUDO)
        pseudo = np.where(previous, scene.label, pseudo).astype(np.uint8)

    merged = merge(scene, pseudo)
    result = PseudoLabelResult(
        label=merged.label,
        accepted_fraction=labeled_fraction(merged.label),
        argmax_stack=argmax_stack,
        provenance=merged.provenance
    )
    return merged, result

def pseudolabel_dataset(model:ModelState, dataset:SceneDataset, cfg:TTAConfig, keep_previous:bool=False, print_is_requested:bool=False) -> SceneDataset:
    """ Pseudo-label every real-coarse scene; other scenes pass through untouched. Returns a new dataset. """
    scenes = []
    accepted = []
    for scene in dataset:
        if scene.domain != constants.DOMAIN_REAL_COARSE:
            scenes.append(scene)
            continue
        merged, result = pseudolabel_scene(model, scene, cfg, keep_previous=keep_previous)
        scenes.append(merged)
        accepted.append(result.accepted_fraction)

    if accepted:
        log = logger.info if print_is_requested else logger.debug
        log(f'Pseudo-labeled {len(accepted)} coarse scenes: mean labeled fraction {np.mean(accepted):.3f}.')
    return SceneDataset(scenes, dataset.num_classes)
