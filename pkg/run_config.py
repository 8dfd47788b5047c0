import os
import logging
import constants
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Tuple
from dotenv import dotenv_values
from pipeline import ExperimentConfig, SWEEP_METHODS

logger = logging.getLogger(__name__)

class ConfigError(ValueError):
    """ Raised for unknown keys and unparseable or invalid values of a run configuration. """

def _parse_bool(text:str) -> bool:
    lowered = text.strip().lower()
    if lowered in ('true', '1', 'yes', 'on'):
        return True
    if lowered in ('false', '0', 'no', 'off'):
        return False
    raise ValueError(f"expected true/false, received '{text}'")

def _list_of(parse:Callable) -> Callable:
    return lambda text: tuple(parse(part) for part in text.split(',') if part.strip())

def _format(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ','.join(_format(item) for item in value)
    return str(value)

# key -> (ExperimentConfig section or None for top-level fields, field name, parser)
FIELDS: Dict[str, Tuple[Optional[str], str, Callable]] = {
    'scene.height': ('scene', 'height', int),
    'scene.width': ('scene', 'width', int),
    'scene.num_classes': ('scene', 'num_classes', int),
    'scene.shapes_per_scene': ('scene', 'shapes_per_scene', int),
    'scene.decay': ('scene', 'decay', float),
    'scene.texture_sigma': ('scene', 'texture_sigma', float),
    'scene.shade_range': ('scene', 'shade_range', float),
    'scene.real_noise_sigma': ('scene', 'real_noise_sigma', float),
    'scene.real_gain': ('scene', 'real_gain', float),
    'scene.real_hue_jitter': ('scene', 'real_hue_jitter', float),
    'scene.paired': ('scene', 'paired', _parse_bool),
    'scene.seed': ('scene', 'seed', int),
    'data.n_coarse': (None, 'n_coarse', int),
    'data.n_fine': (None, 'n_fine', int),
    'data.n_synthetic': (None, 'n_synthetic', int),
    'data.n_val': (None, 'n_val', int),
    'data.n_pool': (None, 'n_pool', int),
    'coarse.target_labeled_fraction': ('coarse', 'target_labeled_fraction', float),
    'coarse.min_component_area': ('coarse', 'min_component_area', int),
    'coarse.max_erosion_iters': ('coarse', 'max_erosion_iters', int),
    'coarse.fractional_last_step': ('coarse', 'fractional_last_step', _parse_bool),
    'loss.lambda1': ('loss', 'lambda1', float),
    'loss.lambda2': ('loss', 'lambda2', float),
    'loss.boundary_threshold': ('loss', 'boundary_threshold', float),
    'loss.lambda_bd': ('loss', 'lambda_bd', float),
    'loss.gumbel_temperature': ('loss', 'gumbel_temperature', float),
    'augment.enabled': ('augment', 'enabled', _parse_bool),
    'augment.p_select_real': ('augment', 'p_select_real', float),
    'augment.p_class': ('augment', 'p_class', float),
    'augment.source': ('augment', 'source', str),
    'augment.target': ('augment', 'target', str),
    'augment.seed': ('augment', 'seed', int),
    'tta.flips': ('tta', 'flips', _list_of(_parse_bool)),
    'tta.scales': ('tta', 'scales', _list_of(float)),
    'tta.confidence_threshold': ('tta', 'confidence_threshold', float),
    'tta.combine': ('tta', 'combine', str),
    'model.channels': ('arch', 'channels', _list_of(int)),
    'model.kernel_size': ('arch', 'kernel_size', int),
    'model.zero_init_head': ('arch', 'zero_init_head', _parse_bool),
    'model.init_seed': ('arch', 'init_seed', int),
    'train.epochs': (None, 'epochs', int),
    'train.batch_size': (None, 'batch_size', int),
    'train.base_lr': (None, 'base_lr', float),
    'train.momentum': (None, 'momentum', float),
    'train.weight_decay': (None, 'weight_decay', float),
    'train.poly_power': (None, 'poly_power', float),
    'train.hflip_p': (None, 'hflip_p', float),
    'selftrain.iterations': (None, 'iterations', int),
    'selftrain.warm_start': (None, 'warm_start', _parse_bool),
    'selftrain.keep_previous_pseudo': (None, 'keep_previous_pseudo', _parse_bool),
    'sampling.mode': (None, 'sampling_mode', str),
    'sampling.initial_fraction': (None, 'sampling_initial_fraction', float),
    'sampling.refresh': (None, 'sampling_refresh', _parse_bool),
    'sampling.binary': (None, 'sampling_binary', _parse_bool),
    'eval.scales': (None, 'eval_scales', _list_of(float)),
    'budget.cost_model': (None, 'cost_model', str),
    'seed': (None, 'seed', int)
}
# Sweep settings that live next to the experiment
SWEEP_FIELDS: Dict[str, Callable] = {
    'budget.hours': _list_of(float),
    'budget.methods': _list_of(str)
}

def _presets() -> Dict[str, ExperimentConfig]:
    desk_small = ExperimentConfig.desk_small()
    return {
        'default': ExperimentConfig(),
        'desk-small': desk_small,
        'desk-small-bdd': replace(desk_small, cost_model='bdd', coarse=replace(desk_small.coarse, target_labeled_fraction=constants.COARSE_FRACTION['bdd']))
    }

PRESETS = tuple(_presets())

@dataclass
class RunConfig():
    """ A loaded run configuration.

        Attributes:
            experiment (ExperimentConfig): The experiment configuration.
            budget_hours (tuple): Budget points of the sweep, in hours.
            sweep_methods (tuple): Methods of the sweep. """
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    budget_hours: Tuple[float, ...] = (7.0, 14.0, 28.0)
    sweep_methods: Tuple[str, ...] = ('fine', 'ours')

    def get_value(self, key:str):
        """ Return the effective value of a key. """
        if key in SWEEP_FIELDS:
            return self.budget_hours if key == 'budget.hours' else self.sweep_methods
        section, name, _ = FIELDS[key]
        owner = self.experiment if section is None else getattr(self.experiment, section)
        return getattr(owner, name)

    def echo(self) -> str:
        """ Every key with its effective value, one key=value line each. """
        lines = [f'{key}={_format(self.get_value(key))}' for key in list(FIELDS) + list(SWEEP_FIELDS)]
        return '\n'.join(lines) + '\n'

    def write_echo(self, path:str) -> None:
        with open(path, 'w', encoding='utf-8', newline='\n') as file:
            file.write(self.echo())

def apply_values(base:RunConfig, values:Dict[str, str]) -> RunConfig:
    """ Apply raw key=value strings on top of a configuration. A 'seed' key re-seeds the data and the
        training streams before the other keys are applied.

        Inputs:
            base (RunConfig): The starting configuration.
            values (dict): Raw values by key. """
    unknown = [key for key in values if key not in FIELDS and key not in SWEEP_FIELDS]
    if unknown:
        raise ConfigError(f'Unknown configuration keys: {unknown}')

    parsed = {}
    for key, text in values.items():
        if text is None:
            raise ConfigError(f"Key '{key}' has no value.")
        parse = SWEEP_FIELDS[key] if key in SWEEP_FIELDS else FIELDS[key][2]
        try:
            parsed[key] = parse(text)
        except ValueError as error:
            raise ConfigError(f"Cannot parse '{key}={text}': {error}") from error

    try:
        experiment = base.experiment
        if 'seed' in parsed:
            experiment = experiment.with_seed(parsed['seed'])

        sections: Dict[Optional[str], Dict[str, object]] = {}
        for key, value in parsed.items():
            if key in FIELDS and key != 'seed':
                section, name, _ = FIELDS[key]
                sections.setdefault(section, {})[name] = value

        changes = dict(sections.pop(None, {}))
        for section, fields in sections.items():
            changes[section] = replace(getattr(experiment, section), **fields)
        experiment = replace(experiment, **changes)

        budget_hours = parsed.get('budget.hours', base.budget_hours)
        sweep_methods = parsed.get('budget.methods', base.sweep_methods)
        if not budget_hours or min(budget_hours) <= 0:
            raise ValueError(f'budget.hours has to be a non-empty list of positive hours. Received: {budget_hours}')
        if [method for method in sweep_methods if method not in SWEEP_METHODS]:
            raise ValueError(f'budget.methods have to be in {SWEEP_METHODS}. Received: {sweep_methods}')
    except ValueError as error:
        raise ConfigError(f'Invalid configuration: {error}') from error

    return RunConfig(experiment, tuple(budget_hours), tuple(sweep_methods))

def load_run_config(path:Optional[str]=None, preset:str='default', overrides:Optional[Dict[str, str]]=None) -> RunConfig:
    """ Build a run configuration from a preset, an optional key=value file ('#' comments) and overrides.

        Inputs:
            path (str): The configuration file (default: none).
            preset (str): One of PRESETS (default: 'default').
            overrides (dict): Raw values applied after the file. """
    presets = _presets()
    if preset not in presets:
        raise ConfigError(f'preset has to be one of {list(presets)}. Received: {preset}')
    run_config = RunConfig(experiment=presets[preset])

    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f'Configuration file {path} does not exist.')
        values = dotenv_values(path, interpolate=False)
        run_config = apply_values(run_config, dict(values))
        logger.debug(f'Loaded {len(values)} configuration keys from {path}.')
    if overrides:
        run_config = apply_values(run_config, overrides)
    return run_config
