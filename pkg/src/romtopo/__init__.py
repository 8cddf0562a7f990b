"""ROM-accelerated density-based topology optimization.

Linear solves inside an interior-point design loop are accelerated with a
Galerkin reduced-order model built from earlier solutions and, when the ROM
is not accurate enough, with Krylov-recycling PCG deflated by the same basis.
"""

__version__ = "0.1.0"
