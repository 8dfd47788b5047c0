import logging
import constants
import functions
import numpy as np
import pandas as pd
from matplotlib.colors import hsv_to_rgb
from dataclasses import dataclass, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

logger = logging.getLogger(__name__)

SHAPE_KINDS = ('rectangle', 'disk', 'triangle', 'bar')

@dataclass(frozen=True)
class ShapeStyle():
    """ How the instances of one class are drawn. Extents are full heights/widths as fractions of the frame.

        Attributes:
            kind (str): One of 'rectangle', 'disk', 'triangle', 'bar'.
            height (tuple): (min, max) height fraction (the diameter for disks).
            width (tuple): (min, max) width fraction (ignored for disks). """
    kind: str
    height: Tuple[float, float]
    width: Tuple[float, float]

    def __post_init__(self) -> None:
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f'kind has to be one of {SHAPE_KINDS}. Received: {self.kind}')

# Shape vocabulary of the first foreground classes, from the large "road-like" class 1 down to small objects
_BASE_VOCABULARY = (
    ShapeStyle('rectangle', (0.30, 0.60), (0.40, 0.80)),
    ShapeStyle('rectangle', (0.20, 0.40), (0.20, 0.40)),
    ShapeStyle('disk', (0.16, 0.30), (0.16, 0.30)),
    ShapeStyle('triangle', (0.20, 0.30), (0.20, 0.30)),
    ShapeStyle('disk', (0.12, 0.24), (0.12, 0.24)),
    ShapeStyle('rectangle', (0.12, 0.24), (0.12, 0.24))
)
# Thin "pole-like" tail class
_BAR_STYLE = ShapeStyle('bar', (0.30, 0.60), (0.04, 0.07))

def default_vocabulary(num_classes:int) -> Dict[int, ShapeStyle]:
    """ Shape style of every foreground class 1..C-1; the last class is a thin bar when C > 2. """
    vocabulary = {}
    for class_id in range(1, num_classes):
        if class_id == num_classes - 1 and num_classes > 2:
            vocabulary[class_id] = _BAR_STYLE
        elif class_id <= len(_BASE_VOCABULARY):
            vocabulary[class_id] = _BASE_VOCABULARY[class_id - 1]
        else:
            # Beyond the base table, keep shrinking small rectangles
            shrink = 0.85 ** (class_id - len(_BASE_VOCABULARY))
            last = _BASE_VOCABULARY[-1]
            vocabulary[class_id] = ShapeStyle('rectangle', tuple(v * shrink for v in last.height), tuple(v * shrink for v in last.width))
    return vocabulary

@dataclass
class SceneSpec():
    """ Parameters of the procedural toy urban scenes.

        Attributes:
            height, width (int): Raster size in pixels (default: 64x64).
            num_classes (int): Number of classes C, class 0 is the background (default: 8).
            shapes_per_scene (int): Shapes drawn back-to-front per scene (default: 5).
            decay (float): Geometric decay of the class frequency weights across class index (default: 0.5).
            frequency_weights (tuple): Explicit weights of classes 1..C-1, overrides decay.
            vocabulary (dict): Explicit class -> ShapeStyle map, overrides the default vocabulary.
            texture_sigma (float): Per-pixel texture noise of every scene (default: 0.02).
            shade_range (float): Per-instance brightness variation (default: 0.08).
            real_noise_sigma (float): Additive Gaussian noise of the real domain (default: 0.05).
            real_gain (float): Magnitude of the real-domain global color affine transform (default: 0.15).
            real_hue_jitter (float): Magnitude of the real-domain per-class hue shift (default: 0.04).
            paired (bool): Real and synthetic scenes of the same index share their geometry (default: False).
            seed (int): The 64-bit generation seed. """
    height: int = 64
    width: int = 64
    num_classes: int = 8
    shapes_per_scene: int = 5
    decay: float = 0.5
    frequency_weights: Optional[Tuple[float, ...]] = None
    vocabulary: Optional[Dict[int, ShapeStyle]] = None
    texture_sigma: float = 0.02
    shade_range: float = 0.08
    real_noise_sigma: float = 0.05
    real_gain: float = 0.15
    real_hue_jitter: float = 0.04
    paired: bool = False
    seed: int = constants.DEFAULT_SEED

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f'num_classes has to be at least 2. Received: {self.num_classes}')
        if self.num_classes >= constants.IGNORE:
            raise ValueError(f'num_classes has to be below {constants.IGNORE}. Received: {self.num_classes}')
        if self.height < 1 or self.width < 1:
            raise ValueError(f'height and width have to be positive. Received: {self.height}x{self.width}')
        if self.shapes_per_scene < 0:
            raise ValueError(f'shapes_per_scene has to be >= 0. Received: {self.shapes_per_scene}')
        if self.frequency_weights is not None:
            if len(self.frequency_weights) != self.num_classes - 1:
                raise ValueError(f'frequency_weights needs one weight per foreground class ({self.num_classes - 1}). Received: {len(self.frequency_weights)}')
            if min(self.frequency_weights) <= 0:
                raise ValueError(f'frequency_weights have to be positive. Received: {self.frequency_weights}')
        elif self.decay <= 0:
            raise ValueError(f'decay has to be positive. Received: {self.decay}')

    @property
    def get_weights(self) -> np.ndarray:
        """ Return the normalized draw probabilities of classes 1..C-1. """
        if self.frequency_weights is not None:
            weights = np.asarray(self.frequency_weights, dtype=np.float64)
        else:
            weights = self.decay ** np.arange(self.num_classes - 1)
        return weights / weights.sum()

    @property
    def get_vocabulary(self) -> Dict[int, ShapeStyle]:
        return self.vocabulary if self.vocabulary is not None else default_vocabulary(self.num_classes)

@dataclass
class LabeledScene():
    """ One (image, label) pair with its provenance and annotation cost.

        Attributes:
            id (str): Stable id, 'domain/index'.
            image (np.ndarray): The (3,H,W) float64 image in [0,1].
            label (np.ndarray): The (H,W) uint8 class ids, constants.IGNORE where unlabeled.
            domain (int): One of the constants.DOMAIN_* codes.
            provenance (np.ndarray): The (H,W) uint8 constants.PROVENANCE_* flags.
            cost_minutes (float): Annotation cost of this image. """
    id: str
    image: np.ndarray
    label: np.ndarray
    domain: int
    provenance: np.ndarray = None
    cost_minutes: float = 0.0

    def __post_init__(self) -> None:
        if self.image.ndim != 3 or self.image.shape[1:] != self.label.shape:
            raise ValueError(f'Scene {self.id}: image (3,H,W) and label (H,W) have to match. Received: {self.image.shape} and {self.label.shape}')
        if self.provenance is None:
            self.provenance = provenance_from_label(self.label)

    @property
    def height(self) -> int:
        return self.label.shape[0]

    @property
    def width(self) -> int:
        return self.label.shape[1]

    def copy(self, **changes) -> 'LabeledScene':
        """ Return a deep copy with the given fields replaced. """
        fields = {
            'image': self.image.copy(),
            'label': self.label.copy(),
            'provenance': self.provenance.copy()
        }
        fields.update(changes)
        return replace(self, **fields)

def provenance_from_label(label:np.ndarray) -> np.ndarray:
    """ Manual provenance on labeled pixels, ignore provenance on IGNORE pixels. """
    return np.where(label == constants.IGNORE, constants.PROVENANCE_IGNORE, constants.PROVENANCE_MANUAL).astype(np.uint8)

class SceneDataset():
    """ Ordered collection of LabeledScenes sharing a class count.

        Attributes:
            scenes (list): The scenes in insertion order.
            num_classes (int): The class count C. """

    def __init__(self, scenes:Sequence[LabeledScene], num_classes:int) -> None:
        self.scenes: List[LabeledScene] = list(scenes)
        self.num_classes = num_classes

        ids = [scene.id for scene in self.scenes]
        if len(set(ids)) != len(ids):
            raise ValueError('Scene ids have to be unique.')
        self._index = {scene_id: position for position, scene_id in enumerate(ids)}

    def __len__(self) -> int:
        return len(self.scenes)

    def __iter__(self) -> Iterator[LabeledScene]:
        return iter(self.scenes)

    def __getitem__(self, key:Union[int, str]) -> LabeledScene:
        if isinstance(key, str):
            if key not in self._index:
                raise KeyError(f'No scene with id {key}.')
            return self.scenes[self._index[key]]
        return self.scenes[key]

    def __contains__(self, scene_id:str) -> bool:
        return scene_id in self._index

    @property
    def get_ids(self) -> List[str]:
        """ Return the scene ids in order. """
        return [scene.id for scene in self.scenes]

    def by_domain(self, *domains:int) -> 'SceneDataset':
        """ Return the sub-dataset of the given domain codes. """
        return SceneDataset([scene for scene in self.scenes if scene.domain in domains], self.num_classes)

    def subset(self, ids:Sequence[str]) -> 'SceneDataset':
        """ Return the scenes with the given ids, in the given order. """
        return SceneDataset([self[scene_id] for scene_id in ids], self.num_classes)

    def concat(self, other:'SceneDataset') -> 'SceneDataset':
        if other.num_classes != self.num_classes:
            raise ValueError(f'Class counts differ. Received: {self.num_classes} and {other.num_classes}')
        return SceneDataset(self.scenes + other.scenes, self.num_classes)

    def class_histogram(self) -> pd.DataFrame:
        """ Labeled pixel count and share per class (IGNORE excluded). """
        counts = np.zeros(self.num_classes, dtype=np.int64)
        for scene in self.scenes:
            labeled = scene.label[scene.label != constants.IGNORE]
            counts += np.bincount(labeled, minlength=self.num_classes)[:self.num_classes]
        histogram_df = pd.DataFrame({'class': np.arange(self.num_classes), 'pixels': counts})
        total = counts.sum()
        histogram_df['share'] = counts / total if total > 0 else 0.0
        return histogram_df.set_index('class')

    def summary(self) -> pd.DataFrame:
        """ One row per scene with domain, labeled fraction and cost. """
        records = [{
            'id': scene.id,
            'domain': constants.DOMAIN_NAMES[scene.domain],
            'labeled_fraction': float(np.mean(scene.label != constants.IGNORE)),
            'cost_minutes': scene.cost_minutes
        } for scene in self.scenes]
        return pd.DataFrame.from_records(records, columns=['id', 'domain', 'labeled_fraction', 'cost_minutes']).set_index('id')

def _normalize_domain(domain:Union[str, int]) -> str:
    if domain in ('synthetic', constants.DOMAIN_SYNTHETIC):
        return 'synthetic'
    if domain in ('real', constants.DOMAIN_REAL_FINE):
        return 'real'
    raise ValueError(f"domain has to be 'synthetic' or 'real'. Received: {domain}")

def _rasterize(style:ShapeStyle, rows:np.ndarray, cols:np.ndarray, center:Tuple[float, float], extent:Tuple[float, float], aspect:float) -> np.ndarray:
    """ Boolean region of one shape on normalized pixel-center coordinates. """
    center_y, center_x = center
    height, width = extent

    if style.kind in ('rectangle', 'bar'):
        return (np.abs(rows - center_y) <= height / 2) & (np.abs(cols - center_x) <= width / 2)

    if style.kind == 'disk':
        # Round in pixels: the column distance is rescaled by the frame aspect ratio
        radius = height / 2
        return (rows - center_y) ** 2 + ((cols - center_x) * aspect) ** 2 <= radius ** 2

    # Triangle with the apex on top
    top = center_y - height / 2
    depth = (rows - top) / height
    return (depth >= 0) & (depth <= 1) & (np.abs(cols - center_x) <= depth * width / 2)

def _palette(spec:SceneSpec, domain:str) -> np.ndarray:
    """ (C,3) RGB class colors: evenly spaced hues, background gray. Real scenes get a fixed per-class hue jitter. """
    hues = np.arange(spec.num_classes) / spec.num_classes
    if domain == 'real':
        jitter_rng = functions.derive_rng(spec.seed, 'hue-jitter')
        hues = hues + jitter_rng.uniform(-spec.real_hue_jitter, spec.real_hue_jitter, size=spec.num_classes)
    hsv = np.stack([np.mod(hues, 1.0), np.full(spec.num_classes, 0.7), np.full(spec.num_classes, 0.8)], axis=1)
    colors = hsv_to_rgb(hsv)
    colors[0] = (0.45, 0.45, 0.45)
    return colors

def generate_scene(spec:SceneSpec, domain:Union[str, int], index:int) -> LabeledScene:
    """ Generate one toy scene. Deterministic in (spec.seed, domain, index).
        Real scenes get a fixed photometric shift: global color affine transform, per-class hue jitter and
        additive Gaussian noise. Geometry is drawn from the same distribution in both domains.

        Inputs:
            spec (SceneSpec): The scene parameters.
            domain (str): 'synthetic' or 'real'.
            index (int): The scene index, >= 0. """
    if index < 0:
        raise ValueError(f'index has to be >= 0. Received: {index}')
    domain = _normalize_domain(domain)

    if spec.paired:
        geometry_rng = functions.derive_rng(spec.seed, 'geometry', index)
    else:
        geometry_rng = functions.derive_rng(spec.seed, 'geometry', domain, index)
    texture_rng = functions.derive_rng(spec.seed, 'texture', domain, index)

    rows = (np.arange(spec.height)[:, None] + 0.5) / spec.height
    cols = (np.arange(spec.width)[None, :] + 0.5) / spec.width
    aspect = spec.width / spec.height

    label = np.zeros((spec.height, spec.width), dtype=np.uint8)
    shade = np.zeros((spec.height, spec.width))
    vocabulary = spec.get_vocabulary
    classes = geometry_rng.choice(np.arange(1, spec.num_classes), size=spec.shapes_per_scene, p=spec.get_weights)

    # Back-to-front: later shapes occlude earlier ones
    for class_id in classes:
        style = vocabulary[int(class_id)]
        center = tuple(geometry_rng.random(2))
        extent = (geometry_rng.uniform(*style.height), geometry_rng.uniform(*style.width))
        region = _rasterize(style, rows, cols, center, extent, aspect)
        label[region] = class_id
        shade[region] = geometry_rng.uniform(-spec.shade_range, spec.shade_range)

    colors = _palette(spec, domain)
    image = np.moveaxis(colors[label], -1, 0) * (1.0 + shade[None])
    image = image + texture_rng.normal(0.0, spec.texture_sigma, size=image.shape)

    if domain == 'real':
        shift_rng = functions.derive_rng(spec.seed, 'domain-shift')
        gain = np.eye(3) + spec.real_gain * shift_rng.uniform(-1.0, 1.0, size=(3, 3))
        offset = spec.real_gain * shift_rng.uniform(-0.5, 0.5, size=3)
        image = np.tensordot(gain, image, axes=([1], [0])) + offset[:, None, None]
        image = image + texture_rng.normal(0.0, spec.real_noise_sigma, size=image.shape)

    # Clamp, then keep float32-representable values so the container round-trip is bit-exact
    image = np.clip(image, 0.0, 1.0).astype(np.float32).astype(np.float64)

    domain_code = constants.DOMAIN_SYNTHETIC if domain == 'synthetic' else constants.DOMAIN_REAL_FINE
    return LabeledScene(id=f'{domain}/{index}', image=image, label=label, domain=domain_code)

def generate_pool(spec:SceneSpec, n:int, domain:Union[str, int], start:int=0, print_is_requested:bool=False) -> SceneDataset:
    """ Generate n scenes with ids 'domain/start'..'domain/start+n-1'. Annotation cost is 0 here;
        real scenes are costed when they are coarsified or assigned as fine data.

        Inputs:
            spec (SceneSpec): The scene parameters.
            n (int): Number of scenes, >= 1.
            domain (str): 'synthetic' or 'real'.
            start (int): First index (default: 0).
            print_is_requested (bool): Whether to log the pool statistics. """
    if n <= 0:
        raise ValueError(f'n has to be >= 1. Received: {n}')
    scenes = [generate_scene(spec, domain, index) for index in range(start, start + n)]
    pool = SceneDataset(scenes, spec.num_classes)

    log = logger.info if print_is_requested else logger.debug
    log(f'Generated {n} {_normalize_domain(domain)} scenes starting at index {start}.')
    return pool
