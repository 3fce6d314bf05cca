"""Structure-preserving finite elements for 2D incompressible flow on periodic triangular meshes.

The velocity lives in Raviart-Thomas RT_N, total pressure in DG_{N-1} and
vorticity in CG_N. A staggered implicit midpoint integrator conserves mass,
energy, enstrophy and total vorticity in the inviscid limit.
"""
__version__ = "0.1.0"
