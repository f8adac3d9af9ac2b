"""
active-torus: pseudo-spectral simulation and verification of a nonlocal
degenerate active-particle equation on the periodic torus.
"""

__version__ = "1.0.0"
