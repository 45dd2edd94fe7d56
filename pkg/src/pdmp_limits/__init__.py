"""Spatial PDMP simulation with fluid (LLN) and Gaussian (CLT) limit solvers.

Modules
-------
spatial      partitions, grids, coordinate functions, Hilbert-scale norms
models       compartmental membrane and neural field rate structures
engine       exact hybrid simulation and martingale extraction
limits       deterministic limits, covariance ODEs, Langevin simulation
experiments  ensemble studies turning the limit theorems into checks
cli          command-line front end
"""
__version__ = "0.1.0"
