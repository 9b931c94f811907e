"""Heat transport in a harmonic ring driven by a chaotic magnetic-like field.

Submodules
----------
circle
    Expanding circle maps, transfer operator, correlations and gamma.
chain
    Deterministic fast-slow microdynamics and ensemble runner.
stochastic
    Covariance ODE of the stochastic surrogate and a pathwise SDE integrator.
spectral
    Lattice Fourier tools, Green's functions and the diffusivity D.
heat
    Exact Fourier solution of the macroscopic heat equation and measure metrics.
"""

__version__ = "0.1.0"
