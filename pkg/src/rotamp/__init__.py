"""Approximate message passing on rotationally invariant random matrices.

Subpackages split along the pipeline: free-probability calculus
(:mod:`rotamp.freeprob`), spectral laws (:mod:`rotamp.spectra`), instance
generation (:mod:`rotamp.ensembles`), the AMP iteration itself
(:mod:`rotamp.amp_engine`), its deterministic state-evolution and
fixed-point predictions (:mod:`rotamp.state_evolution`), and a command-line
front end (:mod:`rotamp.cli`).
"""

__version__ = "0.1.0"
