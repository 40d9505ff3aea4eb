"""Quadrature rules on the reference triangle (0,0), (1,0), (0,1).

Rules return barycentric points ``(n, 3)`` and weights summing to 1, so an
integral over a physical triangle is ``area * sum(w * f(points))``.
"""
import numpy as np

# 12-point symmetric rule (Dunavant), exact through degree 6.
_D6_ORBITS = (
    (0.116786275726379, (0.249286745170910,)),
    (0.050844906370207, (0.063089014491502,)),
    (0.082851075618374, (0.053145049844817, 0.310352451033784)),
)


def _expand(orbits):
    pts, wts = [], []
    for w, coords in orbits:
        if len(coords) == 1:
            a = coords[0]
            b = 1.0 - 2.0 * a
            orbit = [(a, a, b), (a, b, a), (b, a, a)]
        else:
            a, b = coords
            c = 1.0 - a - b
            orbit = [(a, b, c), (b, c, a), (c, a, b), (b, a, c), (a, c, b), (c, b, a)]
        pts.extend(orbit)
        wts.extend([w] * len(orbit))
    pts = np.array(pts)
    wts = np.array(wts)
    return pts, wts / wts.sum()


def collapsed_gauss(n: int):
    """Duffy-collapsed Gauss-Legendre product rule with n x n points.

    Exact for polynomials of degree 2n - 2 on the triangle; used as a
    higher-order cross-check and for singular-ish integrands.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    s, t = np.meshgrid(x, x, indexing="ij")
    ws, wt = np.meshgrid(w, w, indexing="ij")
    xi = s.ravel()
    eta = (t * (1.0 - s)).ravel()
    wts = (ws * wt * (1.0 - s)).ravel() * 2.0
    pts = np.stack([1.0 - xi - eta, xi, eta], axis=1)
    return pts, wts


def triangle_rule(degree: int = 6):
    """Barycentric points and normalized weights exact for ``degree``."""
    if degree <= 6:
        return _expand(_D6_ORBITS)
    return collapsed_gauss(degree // 2 + 1)
