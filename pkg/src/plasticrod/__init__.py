"""Elastoplastic bending-torsion rods: cross-section homogenisation,
time-incremental evolution and thin-rod energy diagnostics."""

__version__ = "0.1.0"
