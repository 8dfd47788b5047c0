import logging
import constants
import functions
import numpy as np
import pandas as pd
from dataclasses import dataclass, field
from typing import List, Optional, Sequence
from datagen import SceneDataset
from model import ModelState

logger = logging.getLogger(__name__)

@dataclass
class SamplerState():
    """ Incremental selection state over a pool of unlabeled image ids.

        Attributes:
            chosen (list): Selected ids in selection order (only ever grows).
            pool (list): Remaining ids.
            presence (pd.DataFrame): P[image, class], predicted pixel counts (or 0/1 presence), indexed by id.
            initial_size (int): Size n0 of the initial uniform draw (default: 1/8 of the pool). """
    chosen: List[str]
    pool: List[str]
    presence: pd.DataFrame = field(default_factory=pd.DataFrame)
    initial_size: int = 0

    def __post_init__(self) -> None:
        overlap = set(self.chosen) & set(self.pool)
        if overlap:
            raise ValueError(f'chosen and pool have to be disjoint. Received overlap: {sorted(overlap, key=functions.id_sort_key)[:5]}')

    @classmethod
    def from_ids(cls, ids:Sequence[str], initial_fraction:float=0.125) -> 'SamplerState':
        """ Start with nothing chosen and every id in the pool. """
        ids = sorted(ids, key=functions.id_sort_key)
        return cls(chosen=[], pool=ids, initial_size=max(1, int(round(len(ids) * initial_fraction))))

    def _move(self, picks:Sequence[str]) -> None:
        picked = set(picks)
        self.chosen.extend(picks)
        self.pool = [scene_id for scene_id in self.pool if scene_id not in picked]

def class_counts(dataset:SceneDataset) -> pd.DataFrame:
    """ Ground-truth pixel counts per image and class (IGNORE excluded). """
    rows = {}
    for scene in dataset:
        labeled = scene.label[scene.label != constants.IGNORE]
        rows[scene.id] = np.bincount(labeled, minlength=dataset.num_classes)[:dataset.num_classes]
    return pd.DataFrame.from_dict(rows, orient='index', columns=list(range(dataset.num_classes))).astype(np.int64)

def estimate_distribution(model:ModelState, pool:SceneDataset, binary:bool=False) -> pd.DataFrame:
    """ Predicted pixel count of every class in every pool image (single-scale argmax).

        Inputs:
            model (ModelState): The current model.
            pool (SceneDataset): The images to estimate.
            binary (bool): Report 0/1 class presence instead of pixel counts (default: False). """
    if len(pool) == 0:
        raise ValueError('estimate_distribution needs a non-empty pool.')
    num_classes = model.arch.num_classes
    rows = {}
    for scene in pool:
        prediction = model.forward(scene.image).data.argmax(axis=0)
        rows[scene.id] = np.bincount(prediction.ravel(), minlength=num_classes)[:num_classes]

    presence = pd.DataFrame.from_dict(rows, orient='index', columns=list(range(num_classes))).astype(np.int64)
    if binary:
        presence = (presence > 0).astype(np.int64)
    return presence

def coverage(state:SamplerState, presence:Optional[pd.DataFrame]=None) -> pd.Series:
    """ Per-class coverage: sum of P over the chosen images. """
    presence = state.presence if presence is None else presence
    if not state.chosen:
        return pd.Series(0, index=presence.columns, dtype=np.int64)
    return presence.loc[state.chosen].sum(axis=0)

def min_class_coverage(state:SamplerState, presence:Optional[pd.DataFrame]=None) -> int:
    return int(coverage(state, presence).min())

def select_next(state:SamplerState, k:int) -> List[str]:
    """ Class-balanced greedy selection. Each round visits the classes in ascending order of current coverage
        (ties by class index); each turn takes the remaining image with the most pixels of the turn's class
        (ties by smallest id). Classes absent from every remaining image are skipped; if no class is
        available the remaining ids are taken in id order.

        Inputs:
            state (SamplerState): The selection state, updated in place.
            k (int): Number of ids to select, <= |pool|. """
    if k < 0 or k > len(state.pool):
        raise ValueError(f'k has to be between 0 and the pool size {len(state.pool)}. Received: {k}')
    missing = [scene_id for scene_id in state.pool + state.chosen if scene_id not in state.presence.index]
    if missing:
        raise ValueError(f'presence has no estimate for {missing[:5]}')

    presence = state.presence
    current = coverage(state).astype(np.float64)
    remaining = sorted(state.pool, key=functions.id_sort_key)
    picks: List[str] = []

    while len(picks) < k:
        order = sorted(presence.columns, key=lambda class_id: (current[class_id], class_id))
        progressed = False
        for class_id in order:
            if len(picks) == k:
                break
            column = presence.loc[remaining, class_id]
            if column.max() <= 0:
                continue
            # idxmax returns the first maximum, i.e. the smallest id in natural order
            best = column.idxmax()
            picks.append(best)
            remaining.remove(best)
            current += presence.loc[best]
            progressed = True

        if not progressed:
            picks.extend(remaining[:k - len(picks)])

    state._move(picks)
    logger.debug(f'Model-based selection of {k} ids, min class coverage now {int(current.min())}.')
    return picks

def uniform_select(state:SamplerState, k:int, rng:np.random.Generator) -> List[str]:
    """ Uniform selection without replacement from the pool. """
    if k < 0 or k > len(state.pool):
        raise ValueError(f'k has to be between 0 and the pool size {len(state.pool)}. Received: {k}')
    candidates = sorted(state.pool, key=functions.id_sort_key)
    picks = [candidates[i] for i in rng.choice(len(candidates), size=k, replace=False)]
    state._move(picks)
    return picks
