from .figures import FigureSpec, plot_gap_curves, plot_speedup

__version__ = "0.1.0"
