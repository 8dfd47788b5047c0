import os
import sys
import argparse
import logging
import constants
import functions
import container
import numpy as np
import pandas as pd
from typing import Dict, List, Optional, Sequence
from tensorops import NumericalError
from model import CheckpointFormatError, ModelState
from datagen import SceneDataset
from coarsify import coarsify_dataset, labeled_fraction
from pseudolabel import pseudolabel_dataset
from sampler import SamplerState, estimate_distribution, select_next, uniform_select
from run_config import ConfigError, PRESETS, RunConfig, load_run_config
from plotter import Plotter
import pipeline

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

class _ArgumentParser(argparse.ArgumentParser):
    """ argparse parser that reports usage errors with exit code 1. """

    def error(self, message:str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f'{self.prog}: error: {message}\n')

def _parse_overrides(items:Optional[Sequence[str]]) -> Dict[str, str]:
    overrides = {}
    for item in items or []:
        if '=' not in item:
            raise ConfigError(f"--set expects key=value. Received: '{item}'")
        key, value = item.split('=', 1)
        overrides[key.strip()] = value.strip()
    return overrides

def _run_config(args:argparse.Namespace) -> RunConfig:
    return load_run_config(args.config, preset=args.preset, overrides=_parse_overrides(args.set))

def _write_csv(df:pd.DataFrame, path:str) -> None:
    df.to_csv(path, index=False, lineterminator='\n')

def _print_histogram(dataset:SceneDataset, title:str) -> None:
    print(f'{title}: {len(dataset)} scenes')
    print(dataset.class_histogram().to_string(float_format=lambda value: f'{value:.4f}'))

def _experiment_data(dataset:SceneDataset, val:SceneDataset, cost_model:str) -> pipeline.ExperimentData:
    """ Split a stored training dataset by domain; stored real-fine scenes are costed as fine annotations. """
    fine = dataset.by_domain(constants.DOMAIN_REAL_FINE)
    fine = SceneDataset([scene.copy(cost_minutes=constants.FINE_MINUTES[cost_model]) for scene in fine], dataset.num_classes)
    return pipeline.ExperimentData(
        coarse=dataset.by_domain(constants.DOMAIN_REAL_COARSE),
        fine=fine,
        synthetic=dataset.by_domain(constants.DOMAIN_SYNTHETIC),
        val=val
    )

def cmd_generate(args:argparse.Namespace) -> int:
    """ Write the synthetic and dense real pools (train split) or the real validation pool (val split). """
    cfg = _run_config(args).experiment
    if args.split == 'val':
        dataset = pipeline.scene_pool(cfg.scene, cfg.n_val, 'real', start=pipeline.VAL_START)
    else:
        synthetic = pipeline.scene_pool(cfg.scene, cfg.n_synthetic, 'synthetic')
        real = pipeline.scene_pool(cfg.scene, cfg.n_coarse + cfg.n_fine, 'real')
        dataset = synthetic.concat(real)
        _print_histogram(synthetic, 'synthetic pool')
    container.save(dataset, args.out)
    _print_histogram(dataset.by_domain(constants.DOMAIN_REAL_FINE), 'real pool')
    print(f'Wrote {len(dataset)} records to {args.out}')
    return EXIT_OK

def cmd_coarsify(args:argparse.Namespace) -> int:
    """ Coarsify the first n real scenes (id order); the remaining real scenes stay fine. """
    cfg = _run_config(args).experiment
    dataset = container.load(args.data)
    real_ids = sorted(dataset.by_domain(constants.DOMAIN_REAL_FINE).get_ids, key=functions.id_sort_key)
    count = cfg.n_coarse if args.count is None else args.count
    to_coarsify = set(real_ids[:count])

    coarse = coarsify_dataset(dataset.subset([scene_id for scene_id in real_ids if scene_id in to_coarsify]), cfg.coarse, cfg.scene.seed, print_is_requested=True)
    scenes = [coarse[scene.id] if scene.id in to_coarsify else scene for scene in dataset]
    result = SceneDataset(scenes, dataset.num_classes)
    container.save(result, args.out)

    fractions = [labeled_fraction(scene.label) for scene in coarse]
    print(f'Coarsified {len(coarse)} scenes, mean labeled fraction {np.mean(fractions) if fractions else float("nan"):.4f}')
    return EXIT_OK

def cmd_pseudolabel(args:argparse.Namespace) -> int:
    cfg = _run_config(args).experiment
    model = ModelState.load(args.checkpoint)
    dataset = container.load(args.data)
    updated = pseudolabel_dataset(model, dataset, cfg.tta, keep_previous=cfg.keep_previous_pseudo, print_is_requested=True)
    container.save(updated, args.out)

    coarse = updated.by_domain(constants.DOMAIN_REAL_COARSE)
    if len(coarse) > 0:
        print(f'Mean labeled fraction of {len(coarse)} coarse scenes: {coarse.summary()["labeled_fraction"].mean():.4f}')
    return EXIT_OK

def _read_ids(path:Optional[str]) -> List[str]:
    if path is None or not os.path.exists(path):
        return []
    with open(path, encoding='utf-8') as file:
        return [line.strip() for line in file if line.strip()]

def cmd_sample(args:argparse.Namespace) -> int:
    """ Extend a chosen-id list by k pool images, model-based with a checkpoint, uniform otherwise. """
    cfg = _run_config(args).experiment
    pool = container.load(args.data)
    chosen = _read_ids(args.chosen)
    unknown = [scene_id for scene_id in chosen if scene_id not in pool]
    if unknown:
        raise ValueError(f'Chosen ids missing from the pool: {unknown[:5]}')

    state = SamplerState(chosen=list(chosen), pool=[scene_id for scene_id in pool.get_ids if scene_id not in set(chosen)])
    if args.checkpoint is not None and cfg.sampling_mode == 'model-based':
        model = ModelState.load(args.checkpoint)
        state.presence = estimate_distribution(model, pool, binary=cfg.sampling_binary)
        picks = select_next(state, args.k)
    else:
        picks = uniform_select(state, args.k, functions.derive_rng(cfg.seed, 'sample', len(chosen)))

    with open(args.out, 'w', encoding='utf-8', newline='\n') as file:
        file.write(''.join(f'{scene_id}\n' for scene_id in state.chosen))
    print(f'Selected {len(picks)} ids, {len(state.chosen)} chosen in total: {", ".join(picks)}')
    return EXIT_OK

def cmd_selftrain(args:argparse.Namespace) -> int:
    """ Run pre-training and R self-training iterations; write checkpoints, reports, labels, loss log and config echo. """
    run_config = _run_config(args)
    cfg = run_config.experiment
    os.makedirs(args.out, exist_ok=True)

    if args.data is None:
        data = pipeline.build_datasets(cfg, print_is_requested=True)
    else:
        val = container.load(args.val) if args.val is not None else pipeline.scene_pool(cfg.scene, cfg.n_val, 'real', start=pipeline.VAL_START)
        stored = container.load(args.data)
        if stored.num_classes != cfg.scene.num_classes or val.num_classes != cfg.scene.num_classes:
            raise ConfigError(f'scene.num_classes is {cfg.scene.num_classes} but the containers hold {stored.num_classes} and {val.num_classes} classes.')
        data = _experiment_data(stored, val, cfg.cost_model)

    run_config.write_echo(os.path.join(args.out, 'config.txt'))
    results = pipeline.self_train(cfg, data, print_is_requested=True)

    for result in results:
        result.model.save(os.path.join(args.out, f'iteration_{result.iteration}.ckpt'))
        labels = result.coarse.concat(data.fine).concat(data.synthetic)
        container.save(labels, os.path.join(args.out, f'labels_{result.iteration}.c2fd'))

    _write_csv(pipeline.reports_to_frame([result.report for result in results]), os.path.join(args.out, 'report.csv'))
    loss_log = pd.concat([result.loss_log for result in results], ignore_index=True)
    _write_csv(loss_log, os.path.join(args.out, 'loss_log.csv'))
    if args.plot is not None:
        plotter = Plotter('Training loss')
        plotter.add_loss_log(loss_log)
        plotter.save(args.plot)

    for result in results:
        print(f'Iteration {result.iteration}: mIoU {result.report.miou:.4f} ({result.report.budget_hours:.2f} h)')
    return EXIT_OK

def cmd_evaluate(args:argparse.Namespace) -> int:
    cfg = _run_config(args).experiment
    model = ModelState.load(args.checkpoint)
    val = container.load(args.data)
    report = pipeline.evaluate(model, val, cfg.eval_scales)
    if args.out is not None:
        _write_csv(pipeline.reports_to_frame([report]), args.out)
    print(f'mIoU {report.miou:.4f}')
    return EXIT_OK

def cmd_sweep(args:argparse.Namespace) -> int:
    run_config = _run_config(args)
    curve = pipeline.budget_sweep(run_config.experiment, run_config.budget_hours, run_config.sweep_methods, print_is_requested=True)
    _write_csv(curve, args.out)
    if args.plot is not None:
        plotter = Plotter('Annotation budget vs mIoU')
        plotter.add_budget_curve(curve)
        plotter.save(args.plot)
    print(curve.to_string(index=False))
    return EXIT_OK

def cmd_compare(args:argparse.Namespace) -> int:
    """ Per-class IoU of coarse-only pre-training against coarse plus synthetic pre-training. """
    cfg = _run_config(args).experiment
    comparison = pipeline.pretrain_comparison(cfg, print_is_requested=True)
    comparison.to_csv(args.out, lineterminator='\n')
    print(comparison.to_string(float_format=lambda value: f'{value:.4f}'))
    return EXIT_OK

def _monotone_violations(paths:Sequence[str], datasets:Sequence[SceneDataset]) -> List[str]:
    """ Labeled fractions of coarse records never decrease along the file order and manual labels never change. """
    violations = []
    for (previous_path, previous), (path, current) in zip(zip(paths, datasets), zip(paths[1:], datasets[1:])):
        for scene in previous.by_domain(constants.DOMAIN_REAL_COARSE):
            if scene.id not in current:
                violations.append(f'{path}: record {scene.id} of {previous_path} is missing')
                continue
            later = current[scene.id]
            before, after = labeled_fraction(scene.label), labeled_fraction(later.label)
            if after < before:
                violations.append(f'{path}: record {scene.id} labeled fraction decreased from {before:.4f} to {after:.4f}')
            manual = scene.provenance == constants.PROVENANCE_MANUAL
            if later.label.shape != scene.label.shape or np.any(later.label[manual] != scene.label[manual]) \
                    or np.any(later.provenance[manual] != constants.PROVENANCE_MANUAL):
                violations.append(f'{path}: record {scene.id} changed manual labels')
    return violations

def cmd_verify(args:argparse.Namespace) -> int:
    """ Check container invariants of every file (and monotone labeling across them); exit 0 iff clean. """
    messages = []
    payloads = {}
    tables = []
    for path in args.data:
        with open(path, 'rb') as file:
            payloads[path] = file.read()
        violations = container.verify_container(payloads[path])
        messages.extend(f'{path}: {violation}' for violation in violations)
        tables.append(container.violations_to_frame(violations).assign(path=path))

    if args.out is not None:
        _write_csv(pd.concat(tables, ignore_index=True)[['path', 'record_id', 'offset', 'message']], args.out)

    if args.monotone and not messages:
        datasets = [container.parse(payloads[path]) for path in args.data]
        messages.extend(_monotone_violations(args.data, datasets))

    for message in messages:
        print(message)
    print(f'{len(messages)} violations')
    return EXIT_OK if not messages else EXIT_DATA

def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog='c2f', description='Coarse-to-fine self-training segmentation toolkit.')
    parser.add_argument('-v', '--verbose', action='store_true', help='log progress at INFO level')
    subparsers = parser.add_subparsers(dest='command', required=True)

    def command(name:str, handler, help_text:str, configurable:bool=True) -> argparse.ArgumentParser:
        subparser = subparsers.add_parser(name, help=help_text)
        subparser.set_defaults(handler=handler)
        if configurable:
            subparser.add_argument('--config', help='key=value configuration file')
            subparser.add_argument('--preset', default='default', choices=PRESETS)
            subparser.add_argument('--set', action='append', metavar='KEY=VALUE', help='override one configuration key')
        return subparser

    generate = command('generate', cmd_generate, 'generate synthetic and real scene pools')
    generate.add_argument('--split', choices=('train', 'val'), default='train')
    generate.add_argument('--out', required=True)

    coarsify = command('coarsify', cmd_coarsify, 'simulate coarse annotations of real scenes')
    coarsify.add_argument('--data', required=True)
    coarsify.add_argument('--count', type=int, help='number of real scenes to coarsify (default: data.n_coarse)')
    coarsify.add_argument('--out', required=True)

    pseudolabel = command('pseudolabel', cmd_pseudolabel, 'pseudo-label the coarse scenes with a checkpoint')
    pseudolabel.add_argument('--checkpoint', required=True)
    pseudolabel.add_argument('--data', required=True)
    pseudolabel.add_argument('--out', required=True)

    sample = command('sample', cmd_sample, 'select the next pool images to annotate')
    sample.add_argument('--data', required=True)
    sample.add_argument('--k', type=int, required=True)
    sample.add_argument('--checkpoint')
    sample.add_argument('--chosen', help='file of already chosen ids, one per line')
    sample.add_argument('--out', required=True)

    selftrain = command('selftrain', cmd_selftrain, 'pre-train and self-train')
    selftrain.add_argument('--data', help='training container (default: generated from the configuration)')
    selftrain.add_argument('--val', help='validation container (default: generated from the configuration)')
    selftrain.add_argument('--out', required=True)
    selftrain.add_argument('--plot', help='image file of the per-epoch losses')

    evaluate = command('evaluate', cmd_evaluate, 'evaluate a checkpoint on a validation container')
    evaluate.add_argument('--checkpoint', required=True)
    evaluate.add_argument('--data', required=True)
    evaluate.add_argument('--out')

    sweep = command('sweep', cmd_sweep, 'annotation budget sweep')
    sweep.add_argument('--out', required=True)
    sweep.add_argument('--plot')

    compare = command('compare', cmd_compare, 'per-class IoU of coarse-only against coarse plus synthetic pre-training')
    compare.add_argument('--out', required=True)

    verify = command('verify', cmd_verify, 'verify container files', configurable=False)
    verify.add_argument('data', nargs='+')
    verify.add_argument('--monotone', action='store_true', help='files are successive iterations; labeled fractions must not decrease')
    verify.add_argument('--out', help='csv file of the container violations')
    return parser

def main(argv:Optional[Sequence[str]]=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format='%(levelname)s %(name)s: %(message)s')

    try:
        return args.handler(args)
    except ConfigError as error:
        print(f'Configuration error: {error}', file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as error:
        print(f'Numerical failure: {error}', file=sys.stderr)
        return EXIT_NUMERICAL
    except (container.ContainerFormatError, CheckpointFormatError, ValueError, KeyError, OSError) as error:
        print(f'Data error: {error}', file=sys.stderr)
        return EXIT_DATA

if __name__ == '__main__':
    sys.exit(main())
