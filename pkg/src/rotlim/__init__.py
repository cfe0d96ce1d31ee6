"""Numerical lab for rotating compressible flow with large bulk viscosity.

Modules:
    spectral          Fourier fields on the 2-D torus, norms, dealiasing, SPF1 files
    littlewood_paley  dyadic blocks, Besov norms, paraproducts, Bernstein checks
    fast_heat         exact solver for heat equations with fast diffusion
    nsc               compressible solver with exponential time stepping
    limit             limit (omega, sigma) system and limit-law residuals
    harness           eps sweeps, order fits and reports
"""

__version__ = "0.1.0"
