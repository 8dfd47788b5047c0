import logging
import constants
import functions
import numpy as np
import tensorops as ops
from dataclasses import dataclass
from typing import Optional, Sequence
from tensorops import Tensor
from datagen import LabeledScene

logger = logging.getLogger(__name__)

@dataclass
class LossConfig():
    """ Loss weights.

        Attributes:
            lambda1 (float): Weight of the term over ground-truth boundary pixels (default: 0.5).
            lambda2 (float): Weight of the term over predicted boundary pixels (default: 0.5).
            boundary_threshold (float): Boundary pixel selection threshold on the gradient norm (default: 1e-8).
            lambda_bd (float): Weight of the boundary loss against cross-entropy, 0 disables it (default: 1.0).
            gumbel_temperature (float): Temperature of the relaxed prediction (default: 1.0). """
    lambda1: float = 0.5
    lambda2: float = 0.5
    boundary_threshold: float = 1e-8
    lambda_bd: float = 1.0
    gumbel_temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.boundary_threshold <= 0 or self.gumbel_temperature <= 0:
            raise ValueError(f'boundary_threshold and gumbel_temperature have to be positive. Received: {self.boundary_threshold} and {self.gumbel_temperature}')
        if min(self.lambda1, self.lambda2, self.lambda_bd) < 0:
            raise ValueError(f'Loss weights have to be >= 0. Received: {self.lambda1}, {self.lambda2}, {self.lambda_bd}')

@dataclass
class LossItem():
    """ One batch entry: the network output and the scene it was computed for.

        Attributes:
            logits (Tensor): The (C,H,W) logits.
            scene (LabeledScene): The target scene; its domain decides which losses apply.
            noise (np.ndarray): Gumbel noise for the boundary loss (synthetic scenes only). """
    logits: Tensor
    scene: LabeledScene
    noise: Optional[np.ndarray] = None

@dataclass
class LossBreakdown():
    total: Tensor
    cross_entropy: float
    boundary: float

def draw_gumbel_noise(rng:np.random.Generator, shape:tuple) -> np.ndarray:
    """ i.i.d. standard Gumbel noise. """
    return rng.gumbel(0.0, 1.0, size=shape)

def cross_entropy(logits:Tensor, target:np.ndarray) -> Tensor:
    """ Mean of -log softmax(logits)[target] over non-IGNORE pixels; 0 with zero gradient if every pixel is IGNORE.

        Inputs:
            logits (Tensor): The (C,H,W) logits.
            target (np.ndarray): The (H,W) class ids, constants.IGNORE excluded. """
    x = logits.data
    num_classes = x.shape[0]
    if target.shape != x.shape[1:]:
        raise ValueError(f'target has to be {x.shape[1:]}. Received: {target.shape}')

    valid = target != constants.IGNORE
    if np.any(target[valid] >= num_classes):
        raise ValueError(f'target class ids have to be below {num_classes}. Received: {int(target[valid].max())}')

    count = int(np.count_nonzero(valid))
    if count == 0:
        return ops.apply_op('cross_entropy', np.array(0.0), (logits,), lambda grad: (np.zeros(x.shape),))

    shifted = x - x.max(axis=0, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    safe_target = np.where(valid, target, 0).astype(np.int64)
    picked = np.take_along_axis(log_probs, safe_target[None], axis=0)[0]
    loss = np.array(-picked[valid].sum() / count)

    def backward(grad:np.ndarray) -> tuple:
        delta = np.exp(log_probs) - functions.one_hot(safe_target, num_classes)
        return (grad * delta * valid[None] / count,)

    return ops.apply_op('cross_entropy', loss, (logits,), backward)

def boundary_loss(logits:Tensor, target:np.ndarray, cfg:LossConfig, noise:np.ndarray) -> Tensor:
    """ L1 discrepancy between the boundary maps of the relaxed prediction and of the one-hot ground truth,
        averaged separately over ground-truth boundary pixels and predicted boundary pixels.
        The pixel sets are constants for differentiation.

        Inputs:
            logits (Tensor): The (C,H,W) logits.
            target (np.ndarray): The dense (H,W) ground truth (synthetic scenes only).
            cfg (LossConfig): The loss weights.
            noise (np.ndarray): The (C,H,W) Gumbel noise. """
    if np.any(target == constants.IGNORE):
        raise ValueError('boundary_loss needs a dense target (synthetic data only). Received IGNORE pixels.')
    num_classes = logits.shape[0]
    if np.any(target >= num_classes):
        raise ValueError(f'target class ids have to be below {num_classes}. Received: {int(target.max())}')

    relaxed = ops.gumbel_softmax(logits, cfg.gumbel_temperature, noise)
    gamma_pred = ops.spatial_gradient_norm(relaxed)
    gamma_gt = ops.spatial_gradient_norm(Tensor(functions.one_hot(target, num_classes))).data

    boundary_gt = gamma_gt > cfg.boundary_threshold
    boundary_pred = gamma_pred.data > cfg.boundary_threshold

    difference = ops.absolute(ops.subtract_constant(gamma_pred, gamma_gt))
    term_gt = ops.scale(ops.masked_mean(difference, boundary_gt), cfg.lambda1)
    term_pred = ops.scale(ops.masked_mean(difference, boundary_pred), cfg.lambda2)
    return ops.add(term_gt, term_pred)

def total_loss(batch:Sequence[LossItem], cfg:LossConfig) -> LossBreakdown:
    """ Mean cross-entropy over every item plus lambda_bd times the mean boundary loss over pure synthetic items.
        Augmented items contribute cross-entropy only.

        Inputs:
            batch (Sequence[LossItem]): The batch entries.
            cfg (LossConfig): The loss weights. """
    batch = list(batch)
    if not batch:
        raise ValueError('total_loss needs a non-empty batch.')

    ce_terms = [cross_entropy(item.logits, item.scene.label) for item in batch]
    ce_mean = ops.scale(ops.add_n(ce_terms), 1.0 / len(ce_terms))

    synthetic = [item for item in batch if item.scene.domain == constants.DOMAIN_SYNTHETIC]
    if cfg.lambda_bd == 0 or not synthetic:
        return LossBreakdown(total=ce_mean, cross_entropy=ce_mean.item(), boundary=0.0)

    bd_terms = []
    for item in synthetic:
        if item.noise is None:
            raise ValueError(f'Synthetic item {item.scene.id} needs Gumbel noise for the boundary loss.')
        bd_terms.append(boundary_loss(item.logits, item.scene.label, cfg, item.noise))
    bd_mean = ops.scale(ops.add_n(bd_terms), 1.0 / len(bd_terms))

    total = ops.add(ce_mean, ops.scale(bd_mean, cfg.lambda_bd))
    return LossBreakdown(total=total, cross_entropy=ce_mean.item(), boundary=bd_mean.item())
