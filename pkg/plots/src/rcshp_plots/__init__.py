"""Figure rendering over the simulator's CSV outputs.

Strictly a view: reads results/trace CSV files produced by the experiment
harness and draws the standard figure families (convergence curve, utility vs
pilot count, utility vs SNR, energy-efficiency bars).  Never recomputes any
metric; identical inputs give byte-identical images.
"""

from .figures import FIGURE_KINDS, FigureSpec, PlotDataError, render_figure

__version__ = "0.1.0"
