"""Exact small-system simulator for mixed-state phase equivalence.

Submodules: ``tensor_core`` (dense and diagonal states), ``lattice`` (named
operators, MPOs), ``transfer`` (fixed point and branch states), ``channels``
(local channels and circuits), ``petz`` (twirled Petz recovery),
``diagnostics`` (CMI, correlations), ``zn`` (Z_N cocycle algebra) and
``cli``.
"""

__version__ = "0.1.0"

from .errors import MplabError  # noqa: E402,F401
