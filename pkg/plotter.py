import logging
import pandas as pd
from matplotlib.figure import Figure

logger = logging.getLogger(__name__)

class Plotter():
    """ Class to plot budget curves and training loss logs on a matplotlib figure (no GUI backend needed). """

    def __init__(self, title:str='') -> None:
        self.figure = Figure(figsize=(7, 4.5))
        self.axes = self.figure.add_subplot(1, 1, 1)
        self.axes.grid(True, alpha=0.3)
        if title:
            self.axes.set_title(title)

    @property
    def plot(self) -> Figure:
        """ Return the figure."""
        return self.figure

    def add_budget_curve(self, curve_df:pd.DataFrame) -> None:
        """ Add one mIoU vs budget line per method.

            Inputs:
                curve_df (pd.DataFrame): Rows of budget_hours, method, miou. """
        for method, method_df in curve_df.groupby('method', sort=False):
            method_df = method_df.sort_values('budget_hours')
            self.axes.plot(method_df['budget_hours'], 100 * method_df['miou'], marker='o', label=method)

        self.axes.set_xlabel('Annotation budget [h]')
        self.axes.set_ylabel('mIoU [%]')
        self.axes.legend()

    def add_loss_log(self, loss_log_df:pd.DataFrame) -> None:
        """ Add the per-epoch total, cross-entropy and boundary losses, rounds one after the other.

            Inputs:
                loss_log_df (pd.DataFrame): Rows of round, epoch, loss, cross_entropy, boundary. """
        x = range(1, len(loss_log_df) + 1)
        for column in ('loss', 'cross_entropy', 'boundary'):
            self.axes.plot(x, loss_log_df[column], label=column)

        # Mark where a new self-training round starts
        starts = loss_log_df.reset_index(drop=True).index[loss_log_df['round'].diff().fillna(0).to_numpy() != 0]
        for start in starts:
            self.axes.axvline(start + 0.5, color='gray', linestyle='--', linewidth=0.8)

        self.axes.set_xlabel('Epoch')
        self.axes.set_ylabel('Loss')
        self.axes.legend()

    def save(self, path:str) -> None:
        self.figure.savefig(path, dpi=120, bbox_inches='tight')
        logger.debug(f'Saved plot to {path}.')
