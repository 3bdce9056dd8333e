"""Robust downlink precoding from mixed instantaneous/statistical CSI.

Precoder directions come from maximum generalized eigenpairs of
per-user (signal, leakage-plus-noise) covariance pencils, powers from a
closed-form K x K solve; the Lagrange multipliers that parameterize both
are produced by an iterative oracle, a small trained CNN, or a
low-complexity weighted decomposition.
"""

__version__ = "0.1.0"
