"""Fast evaluation of 2D Helmholtz layer potentials via expansion-based
quadrature embedded in an adaptive FMM, plus an exterior Dirichlet
scattering solver."""

__version__ = "0.1.0"
