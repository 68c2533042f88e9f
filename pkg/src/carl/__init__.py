"""Numerical laboratory for the collective atomic recoil laser (CARL).

Ray-atom-optics (classical centre-of-mass motion) and wave-atom-optics
(quantised centre-of-mass motion) models, their linear-stability
characteristic equations, and the dynamics needed to cross-check them.
"""

__version__ = "0.1.0"
