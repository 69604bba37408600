"""Plane-strain slope/column failure simulator.

Three-phase pipeline: explicit Lagrangian FEM for failure initiation, a
full-state transfer onto material points, and a GIMP material point solver
for the large-deformation runout.
"""

__version__ = "0.1.0"
