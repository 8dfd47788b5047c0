import math
import logging
import constants
import functions
import numpy as np
import pandas as pd
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple
from tensorops import GradTape, NumericalError
from datagen import SceneDataset, SceneSpec, generate_pool
from coarsify import CoarsePolicy, coarsify_dataset
from losses import LossConfig, LossItem, draw_gumbel_noise, total_loss
from augment import AugmentConfig, augment_batch
from model import ArchConfig, ModelState, poly_lr
from pseudolabel import TTAConfig, pseudolabel_dataset, tta_predict
from sampler import SamplerState, class_counts, estimate_distribution, min_class_coverage, select_next, uniform_select

logger = logging.getLogger(__name__)

SAMPLING_MODES = ('model-based', 'uniform')
SWEEP_METHODS = ('fine', 'ours', 'fine+syn', 'fine+coarse', 'synthetic')
# Budget share of the fine images in the fine+coarse method
FINE_COARSE_SHARE = 0.5
# Validation scenes use their own index range of the real domain
VAL_START = 100000

class TrainingDivergedError(NumericalError):
    """ Raised when a training step produces non-finite values. """

@dataclass
class ExperimentConfig():
    """ Everything one experiment run depends on. Together with the seeds it fully determines the outputs.

        Attributes:
            scene, coarse, loss, augment, tta, arch: The module configurations.
            n_coarse, n_fine, n_synthetic, n_val (int): Dataset sizes.
            n_pool (int): Size of the unlabeled real pool of the sampling and budget experiments.
            iterations (int): Self-training iterations R.
            epochs (int): Epochs per round.
            batch_size (int), base_lr (float), momentum (float), weight_decay (float), poly_power (float): Optimizer settings.
            hflip_p (float): Train-time horizontal flip probability.
            warm_start (bool): Start each round from the previous model instead of a fresh initialization.
            keep_previous_pseudo (bool): Keep earlier pseudo labels where a new pass rejects the pixel.
            sampling_mode (str): 'model-based' or 'uniform'.
            sampling_initial_fraction (float): Initial uniform draw as a fraction of the pool.
            sampling_refresh (bool): Re-estimate the class distribution with the latest model at every increment.
            sampling_binary (bool): Use 0/1 class presence instead of pixel counts.
            eval_scales (tuple): Multiscale inference scales.
            cost_model (str): 'cityscapes' or 'bdd'.
            seed (int): Seed of initialization, shuffling, augmentation and noise draws. """
    scene: SceneSpec = field(default_factory=SceneSpec)
    coarse: CoarsePolicy = field(default_factory=CoarsePolicy)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    tta: TTAConfig = field(default_factory=TTAConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    n_coarse: int = 60
    n_fine: int = 0
    n_synthetic: int = 60
    n_val: int = 40
    n_pool: int = 200
    iterations: int = 3
    epochs: int = 30
    batch_size: int = 8
    base_lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    poly_power: float = 2.0
    hflip_p: float = 0.5
    warm_start: bool = False
    keep_previous_pseudo: bool = True
    sampling_mode: str = 'model-based'
    sampling_initial_fraction: float = 0.125
    sampling_refresh: bool = True
    sampling_binary: bool = False
    eval_scales: Tuple[float, ...] = constants.EVAL_SCALES
    cost_model: str = 'cityscapes'
    seed: int = constants.DEFAULT_SEED

    def __post_init__(self) -> None:
        counts = {name: getattr(self, name) for name in ('n_coarse', 'n_fine', 'n_synthetic', 'n_val', 'n_pool')}
        if min(counts.values()) < 0:
            raise ValueError(f'Dataset sizes have to be >= 0. Received: {counts}')
        if self.n_coarse + self.n_fine + self.n_synthetic == 0:
            raise ValueError('At least one labeled source (coarse, fine or synthetic) has to be non-empty.')
        if self.iterations < 0:
            raise ValueError(f'iterations has to be >= 0. Received: {self.iterations}')
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError(f'epochs and batch_size have to be >= 1. Received: {self.epochs} and {self.batch_size}')
        if self.sampling_mode not in SAMPLING_MODES:
            raise ValueError(f'sampling_mode has to be one of {SAMPLING_MODES}. Received: {self.sampling_mode}')
        if self.cost_model not in constants.FINE_MINUTES:
            raise ValueError(f'cost_model has to be one of {list(constants.FINE_MINUTES)}. Received: {self.cost_model}')
        if not 0 <= self.hflip_p <= 1:
            raise ValueError(f'hflip_p has to be between 0 and 1. Received: {self.hflip_p}')
        self.eval_scales = tuple(float(scale) for scale in self.eval_scales)
        # The scene vocabulary decides the class count of the network
        if self.arch.num_classes != self.scene.num_classes:
            self.arch = replace(self.arch, num_classes=self.scene.num_classes)

    @classmethod
    def desk_small(cls, seed:int=constants.DEFAULT_SEED) -> 'ExperimentConfig':
        """ 64x64, 8 classes, 60 coarse + 60 synthetic train, 40 val, 30 epochs per round, 3 iterations. """
        return cls(n_coarse=60, n_synthetic=60, n_val=40, epochs=30, iterations=3).with_seed(seed)

    def with_seed(self, seed:int) -> 'ExperimentConfig':
        """ Return a copy whose data and training seeds are both set to seed. """
        return replace(self, seed=seed, scene=replace(self.scene, seed=seed), arch=replace(self.arch, init_seed=seed))

@dataclass(frozen=True)
class BudgetLedger():
    """ Annotation cost of a dataset composition.

        Attributes:
            n_coarse, n_fine, n_synthetic (int): Image counts.
            cost_model (str): Fine unit cost, 'cityscapes' (90 min) or 'bdd' (75 min). """
    n_coarse: int = 0
    n_fine: int = 0
    n_synthetic: int = 0
    cost_model: str = 'cityscapes'

    def __post_init__(self) -> None:
        if min(self.n_coarse, self.n_fine, self.n_synthetic) < 0:
            raise ValueError(f'Counts have to be >= 0. Received: {self.n_coarse}, {self.n_fine}, {self.n_synthetic}')
        if self.cost_model not in constants.FINE_MINUTES:
            raise ValueError(f'cost_model has to be one of {list(constants.FINE_MINUTES)}. Received: {self.cost_model}')

    @property
    def get_minutes(self) -> float:
        return (self.n_coarse * constants.COARSE_MINUTES
                + self.n_fine * constants.FINE_MINUTES[self.cost_model]
                + self.n_synthetic * constants.SYNTHETIC_MINUTES)

    @property
    def get_hours(self) -> float:
        return self.get_minutes / 60.0

    def __add__(self, other:'BudgetLedger') -> 'BudgetLedger':
        if other.cost_model != self.cost_model:
            raise ValueError(f'Cannot add ledgers of different cost models. Received: {self.cost_model} and {other.cost_model}')
        return BudgetLedger(self.n_coarse + other.n_coarse, self.n_fine + other.n_fine, self.n_synthetic + other.n_synthetic, self.cost_model)

@dataclass
class EvalReport():
    """ Segmentation quality of one model on a validation set.

        Attributes:
            per_class_iou (np.ndarray): IoU per class, NaN for classes absent from both ground truth and prediction.
            miou (float): Mean IoU over the classes with a defined IoU.
            confusion (np.ndarray): The (C,C) confusion matrix, rows ground truth, columns prediction.
            budget_hours (float): Annotation budget of the training data.
            iteration (int): Self-training iteration index. """
    per_class_iou: np.ndarray
    miou: float
    confusion: np.ndarray
    budget_hours: float = 0.0
    iteration: int = 0

    @classmethod
    def from_confusion(cls, confusion:np.ndarray, budget_hours:float=0.0, iteration:int=0) -> 'EvalReport':
        confusion = np.asarray(confusion, dtype=np.int64)
        true_positive = np.diag(confusion).astype(np.float64)
        union = confusion.sum(axis=0) + confusion.sum(axis=1) - true_positive
        present = union > 0

        per_class_iou = np.full(confusion.shape[0], np.nan)
        per_class_iou[present] = true_positive[present] / union[present]
        miou = float(np.mean(per_class_iou[present])) if present.any() else float('nan')
        return cls(per_class_iou=per_class_iou, miou=miou, confusion=confusion, budget_hours=budget_hours, iteration=iteration)

    def to_row(self) -> Dict[str, float]:
        row = {'iteration': self.iteration}
        row.update({f'class_{class_id}': float(iou) for class_id, iou in enumerate(self.per_class_iou)})
        row['miou'] = self.miou
        row['budget_hours'] = self.budget_hours
        return row

def reports_to_frame(reports:Sequence[EvalReport]) -> pd.DataFrame:
    """ One row per report: iteration, class_0..class_{C-1}, miou, budget_hours. """
    return pd.DataFrame.from_records([report.to_row() for report in reports])

@dataclass
class ExperimentData():
    """ The datasets of one experiment. Coarse and fine scenes are distinct real images. """
    coarse: SceneDataset
    fine: SceneDataset
    synthetic: SceneDataset
    val: SceneDataset

    @property
    def get_train_set(self) -> SceneDataset:
        return self.coarse.concat(self.fine).concat(self.synthetic)

    def get_ledger(self, cost_model:str) -> BudgetLedger:
        return BudgetLedger(len(self.coarse), len(self.fine), len(self.synthetic), cost_model)

@dataclass
class IterationResult():
    iteration: int
    model: ModelState
    report: EvalReport
    coarse: SceneDataset
    loss_log: pd.DataFrame

def scene_pool(spec:SceneSpec, n:int, domain:str, start:int=0) -> SceneDataset:
    """ generate_pool that also accepts n == 0. """
    if n == 0:
        return SceneDataset([], spec.num_classes)
    return generate_pool(spec, n, domain, start=start)

def _as_fine(dataset:SceneDataset, cost_model:str) -> SceneDataset:
    return SceneDataset([scene.copy(domain=constants.DOMAIN_REAL_FINE, cost_minutes=constants.FINE_MINUTES[cost_model]) for scene in dataset], dataset.num_classes)

def build_datasets(cfg:ExperimentConfig, print_is_requested:bool=False) -> ExperimentData:
    """ Generate the synthetic and real pools, coarsify the coarse share and cost the fine share.

        Inputs:
            cfg (ExperimentConfig): The experiment configuration.
            print_is_requested (bool): Whether to log the dataset statistics. """
    real = scene_pool(cfg.scene, cfg.n_coarse + cfg.n_fine, 'real')
    coarse_ids, fine_ids = real.get_ids[:cfg.n_coarse], real.get_ids[cfg.n_coarse:]

    data = ExperimentData(
        coarse=coarsify_dataset(real.subset(coarse_ids), cfg.coarse, cfg.scene.seed),
        fine=_as_fine(real.subset(fine_ids), cfg.cost_model),
        synthetic=scene_pool(cfg.scene, cfg.n_synthetic, 'synthetic'),
        val=scene_pool(cfg.scene, cfg.n_val, 'real', start=VAL_START)
    )
    if print_is_requested:
        logger.info(f'Datasets: {len(data.coarse)} coarse, {len(data.fine)} fine, {len(data.synthetic)} synthetic, {len(data.val)} val ({data.get_ledger(cfg.cost_model).get_hours:.2f} h).')
    return data

def _augment_source(cfg:ExperimentConfig, data:ExperimentData) -> Optional[SceneDataset]:
    if not cfg.augment.enabled:
        return None
    source = data.synthetic if cfg.augment.source == 'synthetic' else data.fine
    return source if len(source) > 0 else None

def _derived_seed(seed:int, *keys) -> int:
    return int(functions.derive_rng(seed, *keys).integers(2 ** 63))

def train(cfg:ExperimentConfig, train_set:SceneDataset, augment_source:Optional[SceneDataset]=None, round_index:int=0, init:Optional[ModelState]=None, print_is_requested:bool=False) -> Tuple[ModelState, pd.DataFrame]:
    """ Train a model on a dataset with the total loss, cross-domain augmentation, random flips and the
        poly learning-rate schedule. Deterministic in (cfg, round_index).

        Inputs:
            cfg (ExperimentConfig): The experiment configuration.
            train_set (SceneDataset): The training scenes (coarse, fine and synthetic mixed).
            augment_source (SceneDataset): Pool of the pasted regions, None disables augmentation.
            round_index (int): Self-training round, part of every seed stream.
            init (ModelState): Starting model (default: fresh initialization).
            print_is_requested (bool): Whether to log the per-epoch losses.

        Returns:
            model (ModelState): The trained model.
            loss_log (pd.DataFrame): One row per epoch: round, epoch, loss, cross_entropy, boundary, lr. """
    if len(train_set) == 0:
        raise ValueError('train needs a non-empty training set.')
    model = init.copy() if init is not None else ModelState.initialize(cfg.arch, seed=_derived_seed(cfg.arch.init_seed, 'init', round_index))

    items = list(train_set)
    num_batches = math.ceil(len(items) / cfg.batch_size)
    total_steps = cfg.epochs * num_batches
    num_classes = cfg.arch.num_classes
    log = logger.info if print_is_requested else logger.debug

    step = 0
    rows = []
    for epoch in range(cfg.epochs):
        rng = functions.derive_rng(cfg.seed, 'train', cfg.augment.seed, round_index, epoch)
        order = rng.permutation(len(items))
        sums = np.zeros(3)
        lr = cfg.base_lr

        for batch_index in range(num_batches):
            batch = [items[i] for i in order[batch_index * cfg.batch_size:(batch_index + 1) * cfg.batch_size]]
            if augment_source is not None:
                batch = augment_batch(batch, augment_source, cfg.augment, rng)
            batch = [scene.copy(image=functions.hflip(scene.image), label=functions.hflip(scene.label), provenance=functions.hflip(scene.provenance))
                     if rng.random() < cfg.hflip_p else scene for scene in batch]
            lr = poly_lr(cfg.base_lr, step, total_steps, cfg.poly_power)

            try:
                with GradTape() as tape:
                    params = model.parameter_tensors()
                    loss_items = []
                    for scene in batch:
                        noise = None
                        if scene.domain == constants.DOMAIN_SYNTHETIC:
                            noise = draw_gumbel_noise(rng, (num_classes, scene.height, scene.width))
                        loss_items.append(LossItem(model.forward(scene.image, params), scene, noise))
                    breakdown = total_loss(loss_items, cfg.loss)
                if step == 0:
                    logger.debug(f'First step recorded {tape.get_num_records} ops for {len(batch)} scenes.')
                tape.backward(breakdown.total)
                model.sgd_step({name: tape.gradient(tensor) for name, tensor in params.items()}, lr, cfg.momentum, cfg.weight_decay)
            except NumericalError as error:
                raise TrainingDivergedError(f'Training diverged in round {round_index}, epoch {epoch}, step {step} '
                                            f'(batch {[scene.id for scene in batch]}): {error}') from error

            sums += (breakdown.total.item(), breakdown.cross_entropy, breakdown.boundary)
            step += 1

        means = sums / num_batches
        rows.append({'round': round_index, 'epoch': epoch + 1, 'loss': means[0], 'cross_entropy': means[1], 'boundary': means[2], 'lr': lr})
        log(f'Round {round_index} epoch {epoch + 1}/{cfg.epochs}: loss {means[0]:.4f} (ce {means[1]:.4f}, bd {means[2]:.4f}).')

    return model, pd.DataFrame.from_records(rows, columns=['round', 'epoch', 'loss', 'cross_entropy', 'boundary', 'lr'])

def pretrain(cfg:ExperimentConfig, data:ExperimentData, print_is_requested:bool=False) -> Tuple[ModelState, pd.DataFrame]:
    """ Round 0: train on coarse, fine and synthetic data plus their augmented mixtures. """
    return train(cfg, data.get_train_set, _augment_source(cfg, data), round_index=0, print_is_requested=print_is_requested)

def self_train(cfg:ExperimentConfig, data:Optional[ExperimentData]=None, print_is_requested:bool=False) -> List[IterationResult]:
    """ Pre-train, then R times: pseudo-label the coarse data with the previous model, merge (manual labels
        stay), and retrain on the updated data. Every round starts from a fresh initialization unless
        cfg.warm_start is set.

        With cfg.keep_previous_pseudo (the default) pseudo labels accumulate across rounds: a pixel the new
        pass rejects keeps its earlier pseudo label, so the labeled fraction of every coarse image never
        decreases. Turn it off to get merge's plain replace semantics, where each pass discards the
        previous pseudo labels.

        Inputs:
            cfg (ExperimentConfig): The experiment configuration.
            data (ExperimentData): The datasets (default: build_datasets(cfg)).
            print_is_requested (bool): Whether to log progress.

        Returns:
            results (list): One IterationResult per iteration 0..R. """
    if data is None:
        data = build_datasets(cfg, print_is_requested=print_is_requested)
    hours = data.get_ledger(cfg.cost_model).get_hours
    log = logger.info if print_is_requested else logger.debug

    model, loss_log = pretrain(cfg, data, print_is_requested=print_is_requested)
    report = evaluate(model, data.val, cfg.eval_scales, iteration=0, budget_hours=hours)
    results = [IterationResult(0, model, report, data.coarse, loss_log)]
    log(f'Iteration 0: mIoU {report.miou:.4f}')

    coarse = data.coarse
    for iteration in range(1, cfg.iterations + 1):
        coarse = pseudolabel_dataset(model, coarse, cfg.tta, keep_previous=cfg.keep_previous_pseudo, print_is_requested=print_is_requested)
        round_data = replace(data, coarse=coarse)
        init = model if cfg.warm_start else None
        model, loss_log = train(cfg, round_data.get_train_set, _augment_source(cfg, round_data), round_index=iteration, init=init, print_is_requested=print_is_requested)
        report = evaluate(model, data.val, cfg.eval_scales, iteration=iteration, budget_hours=hours)
        results.append(IterationResult(iteration, model, report, coarse, loss_log))
        log(f'Iteration {iteration}: mIoU {report.miou:.4f}')

    return results

def confusion_matrix(prediction:np.ndarray, label:np.ndarray, num_classes:int) -> np.ndarray:
    """ (C,C) pixel tally, rows ground truth, columns prediction. IGNORE pixels are skipped. """
    valid = label < num_classes
    index = num_classes * label[valid].astype(np.int64) + prediction[valid].astype(np.int64)
    return np.bincount(index, minlength=num_classes ** 2).reshape(num_classes, num_classes)

def evaluate(model:ModelState, valset:SceneDataset, scales:Sequence[float]=constants.EVAL_SCALES, iteration:int=0, budget_hours:float=0.0) -> EvalReport:
    """ Multiscale inference (probabilities averaged across scales, no flips) and global confusion matrix.

        Inputs:
            model (ModelState): The model to evaluate.
            valset (SceneDataset): Scenes with dense labels.
            scales (Sequence[float]): Inference scales (default: 0.5, 1, 2).
            iteration (int): Iteration index stored in the report.
            budget_hours (float): Budget stored in the report. """
    num_classes = model.arch.num_classes
    inference = TTAConfig(flips=(False,), scales=tuple(scales))
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for scene in valset:
        prob_avg, _ = tta_predict(model, scene.image, inference)
        confusion += confusion_matrix(prob_avg.argmax(axis=0), scene.label, num_classes)
    return EvalReport.from_confusion(confusion, budget_hours=budget_hours, iteration=iteration)

def budget(cfg:ExperimentConfig) -> BudgetLedger:
    """ Annotation budget of the configured dataset composition. """
    return BudgetLedger(cfg.n_coarse, cfg.n_fine, cfg.n_synthetic, cfg.cost_model)

def grow_selection(state:SamplerState, n:int, estimator:Optional[ModelState], pool:SceneDataset, cfg:ExperimentConfig, rng:np.random.Generator) -> List[str]:
    """ Return the first n chosen ids, extending the selection when needed. The first draw is uniform and takes
        at least state.initial_size ids; later draws are uniform in uniform mode or while no model exists,
        model-based otherwise. Earlier results are prefixes of later ones. """
    n = min(n, len(state.chosen) + len(state.pool))
    k = n - len(state.chosen)
    if not state.chosen:
        k = min(max(k, state.initial_size), len(state.pool))
    if k > 0:
        if cfg.sampling_mode == 'uniform' or estimator is None:
            uniform_select(state, k, rng)
        else:
            state.presence = estimate_distribution(estimator, pool, binary=cfg.sampling_binary)
            select_next(state, k)
    return state.chosen[:n]

def method_counts(method:str, hours:float, cost_model:str) -> Tuple[int, int]:
    """ Fine and coarse image counts a sweep method buys with a budget. Fine-annotating methods get at least
        one image; fine+coarse spends half of the budget on fine images and the rest on coarse ones. """
    if method not in SWEEP_METHODS:
        raise ValueError(f'method has to be one of {SWEEP_METHODS}. Received: {method}')
    minutes = hours * 60.0
    fine_minutes = constants.FINE_MINUTES[cost_model]
    if method == 'synthetic':
        return 0, 0
    if method == 'ours':
        return 0, max(1, int(math.floor(minutes / constants.COARSE_MINUTES + 1e-9)))
    if method == 'fine+coarse':
        n_fine = max(1, int(math.floor(minutes * FINE_COARSE_SHARE / fine_minutes + 1e-9)))
        return n_fine, max(0, int(math.floor((minutes - n_fine * fine_minutes) / constants.COARSE_MINUTES + 1e-9)))
    return max(1, int(math.floor(minutes / fine_minutes + 1e-9))), 0

def pretrain_coarse(cfg:ExperimentConfig, coarse:SceneDataset, print_is_requested:bool=False) -> Tuple[ModelState, pd.DataFrame]:
    """ Cross-entropy-only training on coarse real data, without synthetic data or augmentation. """
    coarse_cfg = replace(cfg, loss=replace(cfg.loss, lambda_bd=0.0), augment=replace(cfg.augment, enabled=False))
    return train(coarse_cfg, coarse, None, round_index=0, print_is_requested=print_is_requested)

def _run_method(method:str, cfg:ExperimentConfig, chosen:SceneDataset, n_fine:int, synthetic:SceneDataset, val:SceneDataset, print_is_requested:bool=False) -> IterationResult:
    """ Train and evaluate one budget-sweep method; the first n_fine chosen images are fine-annotated, the rest coarse. """
    empty = SceneDataset([], cfg.scene.num_classes)
    fine = _as_fine(chosen.subset(chosen.get_ids[:n_fine]), cfg.cost_model)
    coarse = coarsify_dataset(chosen.subset(chosen.get_ids[n_fine:]), cfg.coarse, cfg.scene.seed)

    if method == 'ours':
        return self_train(cfg, ExperimentData(coarse, empty, synthetic, val), print_is_requested=print_is_requested)[-1]

    if method == 'fine+coarse':
        data = ExperimentData(coarse, fine, empty, val)
        init, loss_logs = None, []
        if len(coarse) > 0:
            init, coarse_log = pretrain_coarse(cfg, coarse, print_is_requested=print_is_requested)
            loss_logs.append(coarse_log)
        model, fine_log = train(cfg, fine, None, round_index=1, init=init, print_is_requested=print_is_requested)
        loss_log = pd.concat(loss_logs + [fine_log], ignore_index=True)
    else:
        if method == 'synthetic':
            if len(synthetic) == 0:
                raise ValueError('The synthetic method needs n_synthetic > 0.')
            cfg = replace(cfg, augment=replace(cfg.augment, enabled=False))
            data = ExperimentData(empty, empty, synthetic, val)
        elif method == 'fine+syn':
            cfg = replace(cfg, augment=replace(cfg.augment, source='synthetic', target='fine'))
            data = ExperimentData(empty, fine, synthetic, val)
        else:
            data = ExperimentData(empty, fine, empty, val)
        model, loss_log = pretrain(cfg, data, print_is_requested=print_is_requested)

    report = evaluate(model, val, cfg.eval_scales, budget_hours=data.get_ledger(cfg.cost_model).get_hours)
    return IterationResult(0, model, report, coarse, loss_log)

def budget_sweep(cfg:ExperimentConfig, budget_hours:Sequence[float], methods:Sequence[str]=('fine', 'ours'), print_is_requested:bool=False) -> pd.DataFrame:
    """ mIoU against annotation budget. At every budget point each method buys its method_counts of real
        images from the same pool; the chosen sets of a method nest across points. The synthetic method uses
        no real images and is trained once.

        Inputs:
            cfg (ExperimentConfig): The base configuration (n_pool, n_synthetic, n_val are used).
            budget_hours (Sequence[float]): The budget points in hours.
            methods (Sequence[str]): Any of 'fine', 'ours', 'fine+syn', 'fine+coarse', 'synthetic'.
            print_is_requested (bool): Whether to log progress.

        Returns:
            curve (pd.DataFrame): One row per (method, point): budget_hours, method, miou, n_images. """
    if len(budget_hours) == 0:
        raise ValueError('budget_sweep needs at least one budget point.')
    unknown = [method for method in methods if method not in SWEEP_METHODS]
    if unknown:
        raise ValueError(f'methods have to be in {SWEEP_METHODS}. Received: {unknown}')
    if cfg.n_pool < 1:
        raise ValueError(f'budget_sweep needs a non-empty pool. Received n_pool: {cfg.n_pool}')

    pool = scene_pool(cfg.scene, cfg.n_pool, 'real')
    synthetic = scene_pool(cfg.scene, cfg.n_synthetic, 'synthetic')
    val = scene_pool(cfg.scene, cfg.n_val, 'real', start=VAL_START)
    log = logger.info if print_is_requested else logger.debug

    rows = []
    for method in methods:
        state = SamplerState.from_ids(pool.get_ids, cfg.sampling_initial_fraction)
        rng = functions.derive_rng(cfg.seed, 'sweep', method)
        estimator = None
        result = None

        for hours in sorted(set(float(hours) for hours in budget_hours)):
            n_fine, n_coarse = method_counts(method, hours, cfg.cost_model)
            if method == 'synthetic':
                chosen = []
                if result is None:
                    result = _run_method(method, cfg, pool.subset(chosen), 0, synthetic, val)
            else:
                chosen = grow_selection(state, n_fine + n_coarse, estimator, pool, cfg, rng)
                result = _run_method(method, cfg, pool.subset(chosen), n_fine, synthetic, val)
                if estimator is None or cfg.sampling_refresh:
                    estimator = result.model

            rows.append({'budget_hours': hours, 'method': method, 'miou': result.report.miou, 'n_images': len(chosen)})
            log(f'{method} at {hours:g} h ({len(chosen)} images): mIoU {result.report.miou:.4f}')

    return pd.DataFrame.from_records(rows, columns=['budget_hours', 'method', 'miou', 'n_images'])

def pretrain_comparison(cfg:ExperimentConfig, data:Optional[ExperimentData]=None, print_is_requested:bool=False) -> pd.DataFrame:
    """ Per-class IoU of pre-training on the coarse data alone against pre-training on coarse plus synthetic
        data with cross-domain augmentation and the boundary loss.

        Returns:
            comparison (pd.DataFrame): Rows 'coarse' and 'ours' (index pretrain) of class_0..class_{C-1}, miou, budget_hours. """
    if data is None:
        data = build_datasets(cfg, print_is_requested=print_is_requested)
    if len(data.coarse) == 0:
        raise ValueError('pretrain_comparison needs coarse data.')

    coarse_model, _ = pretrain_coarse(cfg, data.coarse, print_is_requested=print_is_requested)
    ours_model, _ = pretrain(cfg, data, print_is_requested=print_is_requested)
    reports = [
        evaluate(coarse_model, data.val, cfg.eval_scales, budget_hours=BudgetLedger(len(data.coarse), cost_model=cfg.cost_model).get_hours),
        evaluate(ours_model, data.val, cfg.eval_scales, budget_hours=data.get_ledger(cfg.cost_model).get_hours)
    ]
    comparison = reports_to_frame(reports).drop(columns='iteration')
    comparison.index = pd.Index(['coarse', 'ours'], name='pretrain')
    return comparison

def sampling_comparison(cfg:ExperimentConfig, sizes:Sequence[int], print_is_requested:bool=False) -> pd.DataFrame:
    """ Model-based against uniform incremental selection on the same long-tailed pool. Both modes share
        the initial uniform draw; coverage is measured on the ground-truth class pixel counts.

        Inputs:
            cfg (ExperimentConfig): The base configuration (n_pool, n_synthetic, n_val are used).
            sizes (Sequence[int]): Increasing chosen-set sizes.
            print_is_requested (bool): Whether to log progress.

        Returns:
            comparison (pd.DataFrame): One row per (mode, size): mode, n_images, min_coverage, miou. """
    if len(sizes) == 0 or list(sizes) != sorted(sizes) or sizes[0] < 1:
        raise ValueError(f'sizes have to be increasing and positive. Received: {sizes}')

    pool = scene_pool(cfg.scene, cfg.n_pool, 'real')
    synthetic = scene_pool(cfg.scene, cfg.n_synthetic, 'synthetic')
    val = scene_pool(cfg.scene, cfg.n_val, 'real', start=VAL_START)
    truth = class_counts(pool)
    log = logger.info if print_is_requested else logger.debug

    rows = []
    for mode in SAMPLING_MODES:
        mode_cfg = replace(cfg, sampling_mode=mode)
        state = SamplerState.from_ids(pool.get_ids, cfg.sampling_initial_fraction)
        rng = functions.derive_rng(cfg.seed, 'sampling')
        estimator = None

        for n in sizes:
            chosen = grow_selection(state, n, estimator, pool, mode_cfg, rng)
            result = _run_method('ours', mode_cfg, pool.subset(chosen), 0, synthetic, val)
            if estimator is None or cfg.sampling_refresh:
                estimator = result.model

            coverage = min_class_coverage(SamplerState(chosen=list(chosen), pool=[]), truth)
            rows.append({'mode': mode, 'n_images': len(chosen), 'min_coverage': coverage, 'miou': result.report.miou})
            log(f'{mode} with {len(chosen)} images: min class coverage {coverage}, mIoU {result.report.miou:.4f}')

    return pd.DataFrame.from_records(rows, columns=['mode', 'n_images', 'min_coverage', 'miou'])

def seed_sweep(cfg:ExperimentConfig, seeds:Sequence[int], experiment:Callable[[ExperimentConfig], Dict[str, float]]) -> pd.DataFrame:
    """ Run experiment once per seed (cfg.with_seed) and collect its scalar results, indexed by seed. """
    records = []
    for seed in seeds:
        record = {'seed': seed}
        record.update(experiment(cfg.with_seed(seed)))
        records.append(record)
    return pd.DataFrame.from_records(records).set_index('seed')
