import numpy as np
import pandas as pd
import pytest
import constants
import container
from datagen import SceneDataset
from cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from conftest import make_scene

TINY = ['--set', 'scene.height=16', '--set', 'scene.width=16', '--set', 'scene.num_classes=4',
        '--set', 'data.n_coarse=4', '--set', 'data.n_synthetic=4', '--set', 'data.n_val=3',
        '--set', 'train.epochs=1', '--set', 'train.batch_size=4', '--set', 'model.channels=4,8',
        '--set', 'seed=5']

def _selftrain(out_dir, iterations:int, *extra:str) -> int:
    return main(['selftrain', '--out', str(out_dir)] + TINY + ['--set', f'selftrain.iterations={iterations}'] + list(extra))

def test_generate_is_deterministic(tmp_path, capsys):
    first, second = tmp_path / 'first.c2fd', tmp_path / 'second.c2fd'
    sizes = ['--set', 'data.n_coarse=10', '--set', 'data.n_synthetic=10', '--set', 'scene.height=16', '--set', 'scene.width=16']
    assert main(['generate', '--out', str(first)] + sizes) == EXIT_OK
    assert main(['generate', '--out', str(second)] + sizes) == EXIT_OK
    assert first.read_bytes() == second.read_bytes()

    dataset = container.load(str(first))
    assert len(dataset) == 20
    assert container.serialize(dataset) == first.read_bytes()
    assert 'Wrote 20 records' in capsys.readouterr().out

def test_verify_clean_and_corrupt_files(tmp_path, capsys):
    path = tmp_path / 'pool.c2fd'
    main(['generate', '--out', str(path), '--set', 'data.n_coarse=2', '--set', 'data.n_synthetic=2', '--set', 'scene.height=8', '--set', 'scene.width=8'])
    capsys.readouterr()
    assert main(['verify', str(path)]) == EXIT_OK
    assert capsys.readouterr().out.strip().endswith('0 violations')

    corrupt = tmp_path / 'corrupt.c2fd'
    corrupt.write_bytes(b'XXXX' + path.read_bytes()[4:])
    assert main(['verify', str(corrupt)]) == EXIT_DATA
    assert 'offset 0' in capsys.readouterr().out
    assert main(['coarsify', '--data', str(corrupt), '--out', str(tmp_path / 'out.c2fd')]) == EXIT_DATA

def test_verify_names_the_faulty_record(tmp_path, capsys):
    label = np.zeros((4, 4), dtype=np.uint8)
    label[0, 0] = 4 + 3
    path = tmp_path / 'faulty.c2fd'
    container.save(SceneDataset([make_scene('synthetic/0', np.zeros((4, 4))), make_scene('synthetic/1', label)], 4), str(path))
    table = tmp_path / 'violations.csv'
    assert main(['verify', str(path), '--out', str(table)]) == EXIT_DATA
    output = capsys.readouterr().out
    assert 'synthetic/1' in output
    assert '1 violations' in output
    violations = pd.read_csv(table)
    assert list(violations.columns) == ['path', 'record_id', 'offset', 'message']
    assert violations['record_id'].tolist() == ['synthetic/1']
    assert violations['path'].tolist() == [str(path)]

def test_selftrain_without_iterations(tmp_path):
    assert _selftrain(tmp_path, 0) == EXIT_OK
    assert sorted(path.name for path in tmp_path.glob('*.ckpt')) == ['iteration_0.ckpt']
    report = pd.read_csv(tmp_path / 'report.csv')
    assert len(report) == 1
    assert list(report.columns) == ['iteration', 'class_0', 'class_1', 'class_2', 'class_3', 'miou', 'budget_hours']
    assert (tmp_path / 'config.txt').read_text().count('\n') > 50
    assert 'seed=5\n' in (tmp_path / 'config.txt').read_text()

def test_selftrain_outputs_are_monotone_and_reproducible(tmp_path, capsys):
    first, second = tmp_path / 'first', tmp_path / 'second'
    assert _selftrain(first, 1, '--plot', str(tmp_path / 'loss.png')) == EXIT_OK
    assert _selftrain(second, 1) == EXIT_OK
    assert len(pd.read_csv(first / 'report.csv')) == 2
    assert len(pd.read_csv(first / 'loss_log.csv')) == 2
    assert (tmp_path / 'loss.png').stat().st_size > 0
    for name in ('iteration_0.ckpt', 'iteration_1.ckpt', 'labels_1.c2fd', 'report.csv'):
        assert (first / name).read_bytes() == (second / name).read_bytes()

    capsys.readouterr()
    assert main(['verify', '--monotone', str(first / 'labels_0.c2fd'), str(first / 'labels_1.c2fd')]) == EXIT_OK
    assert capsys.readouterr().out.strip() == '0 violations'

def test_verify_monotone_catches_a_shrinking_label(tmp_path, capsys):
    label = np.zeros((4, 4), dtype=np.uint8)
    full = make_scene('real/0', label, constants.DOMAIN_REAL_COARSE)
    emptier_label = label.copy()
    emptier_label[0] = constants.IGNORE
    emptier = make_scene('real/0', emptier_label, constants.DOMAIN_REAL_COARSE)
    before, after = tmp_path / 'labels_0.c2fd', tmp_path / 'labels_1.c2fd'
    container.save(SceneDataset([full], 2), str(before))
    container.save(SceneDataset([emptier], 2), str(after))
    assert main(['verify', '--monotone', str(before), str(after)]) == EXIT_DATA
    output = capsys.readouterr().out
    assert 'decreased' in output and 'changed manual labels' in output

def test_file_based_workflow(tmp_path, capsys):
    train, val = tmp_path / 'train.c2fd', tmp_path / 'val.c2fd'
    coarse, pseudo = tmp_path / 'coarse.c2fd', tmp_path / 'pseudo.c2fd'
    out = tmp_path / 'run'
    assert main(['generate', '--out', str(train)] + TINY) == EXIT_OK
    assert main(['generate', '--split', 'val', '--out', str(val)] + TINY) == EXIT_OK
    assert main(['coarsify', '--data', str(train), '--count', '3', '--out', str(coarse)] + TINY) == EXIT_OK

    coarse_set = container.load(str(coarse))
    assert len(coarse_set.by_domain(constants.DOMAIN_REAL_COARSE)) == 3
    assert len(coarse_set.by_domain(constants.DOMAIN_REAL_FINE)) == 1

    assert main(['selftrain', '--data', str(coarse), '--val', str(val), '--out', str(out)] + TINY + ['--set', 'selftrain.iterations=0']) == EXIT_OK
    checkpoint = str(out / 'iteration_0.ckpt')
    assert main(['evaluate', '--checkpoint', checkpoint, '--data', str(val), '--out', str(tmp_path / 'eval.csv')] + TINY) == EXIT_OK
    assert len(pd.read_csv(tmp_path / 'eval.csv')) == 1
    assert main(['pseudolabel', '--checkpoint', checkpoint, '--data', str(coarse), '--out', str(pseudo)] + TINY) == EXIT_OK
    capsys.readouterr()
    assert main(['verify', '--monotone', str(coarse), str(pseudo)]) == EXIT_OK

    chosen = tmp_path / 'chosen.txt'
    assert main(['sample', '--data', str(val), '--k', '2', '--checkpoint', checkpoint, '--out', str(chosen)] + TINY) == EXIT_OK
    assert main(['sample', '--data', str(val), '--k', '1', '--chosen', str(chosen), '--out', str(chosen)] + TINY) == EXIT_OK
    ids = chosen.read_text().split()
    assert len(ids) == 3 and len(set(ids)) == 3

def test_sweep_writes_the_curve(tmp_path):
    curve_path, plot_path = tmp_path / 'curve.csv', tmp_path / 'curve.png'
    arguments = ['sweep', '--out', str(curve_path), '--plot', str(plot_path), '--set', 'data.n_pool=6',
                 '--set', 'budget.hours=0.5', '--set', 'budget.methods=fine'] + TINY
    assert main(arguments) == EXIT_OK
    curve = pd.read_csv(curve_path)
    assert curve['method'].tolist() == ['fine']
    assert plot_path.stat().st_size > 0

def test_compare_writes_both_pretrainings(tmp_path):
    out = tmp_path / 'compare.csv'
    assert main(['compare', '--out', str(out)] + TINY) == EXIT_OK
    comparison = pd.read_csv(out, index_col='pretrain')
    assert comparison.index.tolist() == ['coarse', 'ours']
    assert list(comparison.columns) == ['class_0', 'class_1', 'class_2', 'class_3', 'miou', 'budget_hours']
    # 4 coarse images cost 28 min; synthetic data is free
    assert comparison['budget_hours'].tolist() == pytest.approx([28 / 60, 28 / 60])

def test_usage_errors_exit_with_one():
    with pytest.raises(SystemExit) as info:
        main(['generate'])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(['train'])
    assert info.value.code == EXIT_USAGE

def test_configuration_errors_exit_with_one(tmp_path, capsys):
    out = str(tmp_path / 'pool.c2fd')
    assert main(['generate', '--out', out, '--set', 'bogus.key=1']) == EXIT_USAGE
    assert main(['generate', '--out', out, '--set', 'train.epochs']) == EXIT_USAGE
    assert main(['generate', '--out', out, '--config', str(tmp_path / 'missing.cfg')]) == EXIT_USAGE
    assert 'Configuration error' in capsys.readouterr().err

def test_missing_input_is_a_data_error(tmp_path):
    assert main(['verify', str(tmp_path / 'missing.c2fd')]) == EXIT_DATA
