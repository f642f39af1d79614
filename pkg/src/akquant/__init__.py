"""Nonlinear-connection geometry, deformation quantization with
machine-checked flatness, characteristic-class index data, and exact
generic off-diagonal Einstein solutions, all over a small truncated-jet
computer-algebra core.

Layering (each module only depends on the ones above it):

    jets        dense truncated Taylor arithmetic with reliability tracking
    exprlang    tiny expression language -> jets
    lagrange_geometry
                fiber Hessian, canonical nonlinear connection, adapted
                frames, Sasaki lift, almost-symplectic/almost-complex data
    dconnection metric-compatible distinguished connection, torsion, two
                independent curvature routes, Ricci data, distortion from
                Levi-Civita, Einstein residuals
    weyl        formal Weyl algebra (fiberwise Wick product, delta homotopy)
    fedosov     flat connection recursion, flatness certificates, star
                product, Weyl curvature, gauge moves, endomorphism checks
    index       characteristic forms, index class, cyclic-cochain data,
                trace density, solution fingerprints
    einstein    exact-solution generator for the off-diagonal ansatz and
                independent curvature-level verification
    cli         `akquant` command line driver
"""

from .jets import Chart, Jet, constant, coordinate, zero

__all__ = ["Chart", "Jet", "constant", "coordinate", "zero"]

__version__ = "0.1.0"
