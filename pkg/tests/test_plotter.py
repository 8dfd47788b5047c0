import pandas as pd
from plotter import Plotter

def test_budget_curve_has_one_line_per_method(tmp_path):
    curve = pd.DataFrame({
        'budget_hours': [3.0, 1.5, 1.5, 3.0],
        'method': ['fine', 'fine', 'ours', 'ours'],
        'miou': [0.3, 0.2, 0.4, 0.45],
        'n_images': [2, 1, 12, 25]
    })
    plotter = Plotter('budget')
    plotter.add_budget_curve(curve)
    lines = plotter.plot.axes[0].get_lines()
    assert [line.get_label() for line in lines] == ['fine', 'ours']
    assert list(lines[0].get_xdata()) == [1.5, 3.0]

    path = tmp_path / 'curve.png'
    plotter.save(str(path))
    assert path.stat().st_size > 0

def test_loss_log_marks_round_starts():
    loss_log = pd.DataFrame({
        'round': [0, 0, 1, 1, 2],
        'epoch': [1, 2, 1, 2, 1],
        'loss': [2.0, 1.5, 1.8, 1.2, 1.1],
        'cross_entropy': [1.5, 1.1, 1.4, 0.9, 0.8],
        'boundary': [0.5, 0.4, 0.4, 0.3, 0.3]
    })
    plotter = Plotter()
    plotter.add_loss_log(loss_log)
    lines = plotter.plot.axes[0].get_lines()
    # Three loss curves, then one dashed marker per new round
    assert len(lines) == 5
    assert [line.get_xdata()[0] for line in lines[3:]] == [2.5, 4.5]
