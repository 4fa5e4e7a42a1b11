"""Fast multi-body scattering solver for axisymmetric bodies."""
__version__ = "0.1.0"
