"""Simulation toolkit for shaping spatial correlations of photon pairs.

Modules: ``fields`` (grids, masks, two-photon states), ``propagation``
(SLM-to-camera propagation of fields and pair correlations), ``detector``
(EMCCD frame synthesis), ``estimator`` (streaming G2 reconstruction and
projections), ``experiments`` (grating sweeps), ``applications`` (adaptive
optics and transmission-matrix correction), ``slm_calibration`` and ``cli``.
"""

__version__ = "0.1.0"
