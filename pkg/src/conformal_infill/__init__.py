"""Graded porous infill by conformal rescaling and rotation of one matrix cell.

The scaling field ln(lambda) is harmonic and the rotation theta is its
conjugate, so the composed cell map is conformal: cells only grow, shrink
and turn. A compliance minimization over the boundary values of ln(lambda)
drives the layout, and the structure is rebuilt at the fine scale for
verification.
"""

__version__ = "0.1.0"
