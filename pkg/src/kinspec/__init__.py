"""kinspec: a numerical laboratory for non-symmetric semigroup factorization
and its kinetic applications (Fokker-Planck decay in weighted spaces, kinetic
Fokker-Planck hypocoercivity on the torus, hard-sphere collision kernels with
sharp constants, and exponential relaxation of the homogeneous Boltzmann
equation)."""

__version__ = "0.1.0"
