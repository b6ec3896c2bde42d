"""Report rendering for wavetomo run directories.

Everything here reads the CSV/JSON files a run left behind and turns
them into figures plus a summary table; nothing recomputes physics and
nothing writes into the run directory.
"""

__version__ = "0.1.0"

from .reading import ReportError  # noqa: F401
from .render import PLOT_KINDS, ReportSpec, render  # noqa: F401
