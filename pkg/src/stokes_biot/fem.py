"""Reference elements, quadrature rules and affine cell maps.

The reference triangle has vertices (0,0), (1,0), (0,1); its barycentric
coordinates are ``l0 = 1 - x - y``, ``l1 = x``, ``l2 = y``.  Local edges are
ordered (0,1), (1,2), (2,0) and P2 midpoint nodes follow that order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_QUADRATURE_DEGREE = 6
# Assembly may need more than the public range (bubble products, radial weights).
MAX_ASSEMBLY_DEGREE = 10

LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))

REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class ElementKind(enum.Enum):
    """Scalar Lagrange families supported by the solver."""

    P1 = "P1"
    P2 = "P2"
    P1_BUBBLE = "P1_BUBBLE"

    @property
    def dofs_per_cell(self) -> int:
        return {"P1": 3, "P2": 6, "P1_BUBBLE": 4}[self.value]

    @property
    def degree(self) -> int:
        """Highest polynomial degree appearing in the basis."""
        return {"P1": 1, "P2": 2, "P1_BUBBLE": 3}[self.value]

    @property
    def approximation_order(self) -> int:
        """Degree of the largest complete polynomial space contained."""
        return 2 if self is ElementKind.P2 else 1


@dataclass(frozen=True)
class QuadRule:
    """Points and weights on the reference triangle or on the unit interval."""

    points: np.ndarray
    weights: np.ndarray
    degree: int
    domain: str

    def __len__(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def _triangle_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    # Collapsed (Duffy) product: Gauss-Legendre along the collapsed direction,
    # Gauss-Jacobi(1,0) across, which absorbs the Jacobian factor (1 - eta).
    s, ws = roots_legendre(n)
    r, wr = roots_jacobi(n, 1.0, 0.0)
    xi = 0.5 * (1.0 + s)
    eta = 0.5 * (1.0 + r)
    w_xi = 0.5 * ws
    w_eta = 0.25 * wr
    X, E = np.meshgrid(xi, eta, indexing="ij")
    WX, WE = np.meshgrid(w_xi, w_eta, indexing="ij")
    points = np.column_stack([(X * (1.0 - E)).ravel(), E.ravel()])
    weights = (WX * WE).ravel()
    return points, weights


@lru_cache(maxsize=None)
def _edge_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    s, ws = roots_legendre(n)
    return 0.5 * (1.0 + s), 0.5 * ws


def quadrature(domain: str, degree: int) -> QuadRule:
    """Return a rule exact for polynomials of total degree ``degree``.

    ``domain`` is ``"triangle"`` (reference triangle, weights sum to 1/2) or
    ``"edge"`` (unit interval).
    """
    if not isinstance(degree, (int, np.integer)) or not 1 <= degree <= MAX_QUADRATURE_DEGREE:
        raise ValueError(
            f"unsupported quadrature degree {degree!r}; expected 1..{MAX_QUADRATURE_DEGREE}"
        )
    return assembly_rule(domain, degree)


@lru_cache(maxsize=None)
def assembly_rule(domain: str, degree: int) -> QuadRule:
    """Like :func:`quadrature` but accepting degrees up to ``MAX_ASSEMBLY_DEGREE``."""
    degree = int(degree)
    if not 1 <= degree <= MAX_ASSEMBLY_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree!r}; expected 1..{MAX_ASSEMBLY_DEGREE}")
    n = math.ceil((degree + 1) / 2)
    if domain == "triangle":
        pts, wts = _triangle_rule(n)
    elif domain == "edge":
        pts, wts = _edge_rule(n)
        pts = pts[:, None]
    else:
        raise ValueError(f"unknown quadrature domain {domain!r}")
    pts = pts.copy()
    wts = wts.copy()
    pts.flags.writeable = False
    wts.flags.writeable = False
    return QuadRule(points=pts, weights=wts, degree=degree, domain=domain)


def barycentric(points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates (..., 3) of reference points (..., 2)."""
    points = np.asarray(points, dtype=float)
    x = points[..., 0]
    y = points[..., 1]
    return np.stack([1.0 - x - y, x, y], axis=-1)


# Gradients of the barycentric coordinates in reference coordinates.
_DLAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def eval_basis(kind: ElementKind, points) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the local basis of ``kind`` at reference points.

    Parameters
    ----------
    kind : ElementKind
    points : array_like, shape (2,) or (..., 2)

    Returns
    -------
    values : ndarray, shape (..., nbasis)
    gradients : ndarray, shape (..., nbasis, 2)
        Gradients with respect to the reference coordinates.
    """
    pts = np.asarray(points, dtype=float)
    lam = barycentric(pts)
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    D = _DLAMBDA

    if kind is ElementKind.P1:
        values = lam
        grads = np.broadcast_to(D, lam.shape + (2,)).copy()
        return values, grads

    if kind is ElementKind.P2:
        vals = [lam[..., i] * (2.0 * lam[..., i] - 1.0) for i in range(3)]
        grds = [(4.0 * lam[..., i] - 1.0)[..., None] * D[i] for i in range(3)]
        for i, j in LOCAL_EDGES:
            vals.append(4.0 * lam[..., i] * lam[..., j])
            grds.append(4.0 * (lam[..., j][..., None] * D[i] + lam[..., i][..., None] * D[j]))
        return np.stack(vals, axis=-1), np.stack(grds, axis=-2)

    if kind is ElementKind.P1_BUBBLE:
        bubble = 27.0 * l0 * l1 * l2
        dbubble = 27.0 * (
            (l1 * l2)[..., None] * D[0]
            + (l0 * l2)[..., None] * D[1]
            + (l0 * l1)[..., None] * D[2]
        )
        values = np.concatenate([lam, bubble[..., None]], axis=-1)
        p1_grads = np.broadcast_to(D, lam.shape + (2,))
        grads = np.concatenate([p1_grads, dbubble[..., None, :]], axis=-2)
        return values, grads

    raise ValueError(f"unknown element kind {kind!r}")


def reference_nodes(kind: ElementKind) -> np.ndarray:
    """Reference coordinates of the local nodes (bubble node at the centroid)."""
    v = REFERENCE_VERTICES
    if kind is ElementKind.P1:
        return v.copy()
    if kind is ElementKind.P2:
        mids = [0.5 * (v[i] + v[j]) for i, j in LOCAL_EDGES]
        return np.vstack([v, mids])
    if kind is ElementKind.P1_BUBBLE:
        return np.vstack([v, v.mean(axis=0)])
    raise ValueError(f"unknown element kind {kind!r}")


@dataclass(frozen=True)
class AffineMap:
    """Affine maps ``x = J xi + b`` for one or many cells.

    Arrays carry a leading cell axis when built from a stack of triangles.
    """

    jacobian: np.ndarray
    translation: np.ndarray
    det: np.ndarray
    inv_transpose: np.ndarray

    def to_physical(self, ref_points: np.ndarray) -> np.ndarray:
        """Map reference points (nq, 2) to physical points (..., nq, 2)."""
        ref_points = np.asarray(ref_points, dtype=float)
        return np.einsum("...ij,qj->...qi", self.jacobian, ref_points) + self.translation[..., None, :]

    def to_reference(self, phys_points: np.ndarray) -> np.ndarray:
        """Map physical points (..., nq, 2) back to reference coordinates."""
        inv = np.swapaxes(self.inv_transpose, -1, -2)
        shifted = np.asarray(phys_points, dtype=float) - self.translation[..., None, :]
        return np.einsum("...ij,...qj->...qi", inv, shifted)


def affine_map(cell_vertices) -> AffineMap:
    """Build the affine map(s) from vertex coordinates of shape (3, 2) or (M, 3, 2).

    Raises ``ValueError`` if any triangle is degenerate or clockwise.
    """
    v = np.asarray(cell_vertices, dtype=float)
    J = np.stack([v[..., 1, :] - v[..., 0, :], v[..., 2, :] - v[..., 0, :]], axis=-1)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    scale = np.maximum(np.abs(J).max(axis=(-1, -2)), np.finfo(float).tiny) ** 2
    bad = np.atleast_1d(det <= 1e-14 * scale)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise ValueError(f"degenerate or inverted triangle (cell {first}, det={np.atleast_1d(det)[first]:.3e})")
    invT = np.empty_like(J)
    invT[..., 0, 0] = J[..., 1, 1]
    invT[..., 0, 1] = -J[..., 1, 0]
    invT[..., 1, 0] = -J[..., 0, 1]
    invT[..., 1, 1] = J[..., 0, 0]
    invT /= det[..., None, None]
    return AffineMap(jacobian=J, translation=v[..., 0, :].copy(), det=det, inv_transpose=invT)


def push_gradients(amap: AffineMap, ref_gradients: np.ndarray) -> np.ndarray:
    """Physical gradients ``J^{-T} grad_ref``.

    ``ref_gradients`` has shape (..., nb, 2) for a single map, or
    (nq, nb, 2) for a stack of maps, in which case the result is
    (ncells, nq, nb, 2).
    """
    g = np.asarray(ref_gradients, dtype=float)
    invT = amap.inv_transpose
    if invT.ndim == 2:
        return g @ invT.T
    return np.einsum("cij,...j->c...i", invT, g)
