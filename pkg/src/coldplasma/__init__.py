"""Structure-preserving finite element solver for relativistic cold plasma fluids and particles.

Modules
-------
mesh          structured hexahedral meshes and particle segment tracing
fespace       nodal, edge, face and broken element spaces with quadrature
derham        discrete gradient, curl and divergence plus mass matrices
semidiscrete  flux-free and upwind-flux spatial discretizations
particles     relativistic macro-particles, sampling and charge-conserving deposition
integrators   energy-conserving AVF, SSP-RK3, forward Euler and Gauss-law cleaning
solvers       preconditioned CG and the cleaning projection
diagnostics   mass, energy, Gauss residual and divB monitors
harness       experiments, configuration, output formats and the ``coldplasma`` CLI
"""

__version__ = "0.1.0"
