import numpy as np
import pytest
import constants
from datagen import LabeledScene, SceneDataset, SceneSpec
from model import ArchConfig, ModelState
from pipeline import ExperimentConfig

@pytest.fixture
def small_spec() -> SceneSpec:
    """ 16x16 scenes with 4 classes. """
    return SceneSpec(height=16, width=16, num_classes=4, shapes_per_scene=3, seed=7)

@pytest.fixture
def small_arch() -> ArchConfig:
    return ArchConfig(num_classes=4, channels=(4, 8), zero_init_head=False, init_seed=3)

@pytest.fixture
def small_model(small_arch) -> ModelState:
    return ModelState.initialize(small_arch)

@pytest.fixture
def tiny_config(small_spec, small_arch) -> ExperimentConfig:
    """ A few images and epochs: runs in seconds. """
    return ExperimentConfig(
        scene=small_spec,
        arch=small_arch,
        n_coarse=4,
        n_synthetic=4,
        n_val=3,
        n_pool=12,
        iterations=1,
        epochs=2,
        batch_size=4,
        seed=11
    )

def make_scene(scene_id:str, label:np.ndarray, domain:int=constants.DOMAIN_SYNTHETIC, seed:int=0) -> LabeledScene:
    """ Scene with a random image in [0,1] for a given label. """
    rng = np.random.default_rng(seed)
    image = rng.random((3,) + label.shape).astype(np.float32).astype(np.float64)
    return LabeledScene(id=scene_id, image=image, label=label.astype(np.uint8), domain=domain)

def make_dataset(num_scenes:int, num_classes:int=4, size:int=8, seed:int=0) -> SceneDataset:
    """ Random small dataset of all stored domains (coarse scenes get IGNORE pixels). """
    rng = np.random.default_rng(seed)
    scenes = []
    for index in range(num_scenes):
        domain = int(rng.integers(3))
        height, width = int(rng.integers(1, size + 1)), int(rng.integers(1, size + 1))
        label = rng.integers(num_classes, size=(height, width)).astype(np.uint8)
        if domain == constants.DOMAIN_REAL_COARSE:
            label[rng.random((height, width)) < 0.4] = constants.IGNORE
        scenes.append(make_scene(f'scene/{index}', label, domain, seed=seed * 1000 + index))
    return SceneDataset(scenes, num_classes)
