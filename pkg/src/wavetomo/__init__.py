"""Desk-scale laboratory for a time-dependent wave-coefficient inverse problem.

Plane waves are driven through compactly supported space-time
coefficients (a, b, c) of a perturbed wave operator; the final-time
traces of the transmitted front and of the wave behind it are the data.
The package provides the characteristic forward solvers, two-sided
stability functionals with a weighted wedge-inequality check, and
regularized least-squares reconstruction, all behind a config-driven
command line runner.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("wavetomo")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"
