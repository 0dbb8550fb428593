"""Basis functions, the dimension-expanded distance and the nonstationary covariance.

Locations are handled as ``(n, d)`` float arrays with ``d`` in {1, 2}. A single
location may be passed as a scalar or a length-``d`` vector wherever one point
is expected.

The warp into the expanded dimensions is ``f(s) = psi(s)' eta`` where ``psi(s)``
is an ``r x d`` matrix of known basis functions. The covariance between two
locations is ``sigma_nu^2 * exp(-E / phi)`` with ``E`` the Euclidean distance
between the expanded points ``(s, f(s))`` in ``R^{2d}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .exceptions import NumericalError, ValidationError

BASIS_KINDS = ("gaussian-rbf", "bisquare", "ozone-composite")

DEFAULT_MATRIX_CAP = 500
DEFAULT_JITTER = 1e-8
# kernel entries (points x knots) evaluated per block when warping many points
_WARP_BUDGET = 2 ** 15


def as_points(x, d=None):
    """Coerce ``x`` to a finite ``(n, d)`` array.

    A 1-D input is read as ``n`` points in one dimension unless ``d`` says the
    vector is a single ``d``-dimensional location.
    """
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1) if d is not None and d > 1 and a.size == d else a.reshape(-1, 1)
    elif a.ndim != 2:
        raise ValidationError(f"locations must be at most 2-D, got shape {a.shape}")
    if d is not None and a.shape[1] != d:
        raise ValidationError(f"expected {d}-dimensional locations, got {a.shape[1]}")
    if a.shape[1] not in (1, 2):
        raise ValidationError(f"only d in {{1, 2}} is supported, got d={a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("locations must be finite")
    return a


@dataclass(frozen=True)
class BasisSet:
    """Radial basis layout.

    ``bandwidth`` is the rate ``tau`` for ``gaussian-rbf`` and the aperture
    ``w`` for the bisquare kernels (``bisquare`` and ``ozone-composite``).
    """

    kind: str
    knots: np.ndarray
    bandwidth: float

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ValidationError(f"unknown basis kind {self.kind!r}; choose from {BASIS_KINDS}")
        knots = as_points(self.knots)
        object.__setattr__(self, "knots", knots)
        if knots.shape[0] < 1:
            raise ValidationError("a basis needs at least one knot")
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValidationError(f"bandwidth must be positive, got {self.bandwidth}")
        if len(np.unique(knots, axis=0)) != len(knots):
            raise ValidationError("knots must be distinct")
        if self.kind == "ozone-composite" and knots.shape[1] != 2:
            raise ValidationError("ozone-composite basis is defined for d=2 only")

    @property
    def d(self):
        return self.knots.shape[1]

    @property
    def n_knots(self):
        return self.knots.shape[0]

    @property
    def r(self):
        """Number of rows of psi(s), i.e. the length of eta."""
        if self.kind == "ozone-composite":
            return self.n_knots + 3
        return self.n_knots * self.d


@dataclass(frozen=True)
class ExpansionMap:
    basis: BasisSet
    eta: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float).reshape(-1)
        if eta.size != self.basis.r:
            raise ValidationError(f"eta has length {eta.size}, basis produces r={self.basis.r}")
        object.__setattr__(self, "eta", eta)

    @property
    def d(self):
        return self.basis.d

    @property
    def is_identity(self):
        """True when the warp is identically zero (stationary submodel)."""
        return not np.any(self.eta)


@dataclass(frozen=True)
class CovParams:
    eta: np.ndarray
    phi: float
    sigma_nu_sq: float

    def __post_init__(self):
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float).reshape(-1))
        if not self.phi > 0:
            raise ValidationError(f"phi must be positive, got {self.phi}")
        if not self.sigma_nu_sq > 0:
            raise ValidationError(f"sigma_nu_sq must be positive, got {self.sigma_nu_sq}")


def default_tau(points):
    """1.5 times the median of the nonzero pairwise distances between ``points``."""
    pts = as_points(points)
    if len(pts) < 2:
        raise ValidationError("default_tau needs at least two points")
    dist = pdist(pts)
    dist = dist[dist > 0]
    if dist.size == 0:
        raise ValidationError("all points coincide; no nonzero distance")
    return 1.5 * float(np.median(dist))


def knot_grid(points, n_knots):
    """Equally spaced knots over the bounding box of ``points``.

    In 2-D the per-axis counts follow the box aspect ratio, so the total is
    close to (not always exactly) ``n_knots``.
    """
    pts = as_points(points)
    if n_knots < 1:
        raise ValidationError("n_knots must be >= 1")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    if pts.shape[1] == 1:
        return np.linspace(lo[0], hi[0], n_knots).reshape(-1, 1)
    width, height = np.maximum(hi - lo, np.finfo(float).eps)
    ny = max(1, int(round(np.sqrt(n_knots * height / width))))
    nx = max(1, int(round(n_knots / ny)))
    gx = np.linspace(lo[0], hi[0], nx)
    gy = np.linspace(lo[1], hi[1], ny)
    xx, yy = np.meshgrid(gx, gy, indexing="xy")
    return np.column_stack([xx.ravel(), yy.ravel()])


def knot_spacing(knots):
    """Largest per-axis spacing of a regular knot grid (0 for a single knot)."""
    knots = as_points(knots)
    spacing = 0.0
    for axis in range(knots.shape[1]):
        u = np.unique(knots[:, axis])
        if u.size > 1:
            spacing = max(spacing, float(np.max(np.diff(u))))
    return spacing


def make_basis(kind, points, n_knots, bandwidth=None):
    """Build a basis with knots on a regular grid over ``points``.

    Default bandwidths: ``tau = default_tau(points)`` for ``gaussian-rbf``;
    ``w = 1.5 * knot spacing`` for the bisquare kinds.
    """
    pts = as_points(points)
    knots = knot_grid(pts, n_knots)
    if bandwidth is None:
        if kind == "gaussian-rbf":
            bandwidth = default_tau(_thin(pts, 2000))
        else:
            spacing = knot_spacing(knots)
            if spacing == 0:
                spacing = float(np.max(np.ptp(pts, axis=0))) or 1.0
            bandwidth = 1.5 * spacing
    return BasisSet(kind, knots, float(bandwidth))


def _thin(pts, limit):
    # evenly strided subset keeps default_tau O(limit^2) for large inputs
    if len(pts) <= limit:
        return pts
    idx = np.linspace(0, len(pts) - 1, limit).round().astype(int)
    return pts[idx]


def kernel_values(points, basis):
    """Radial kernel values ``zeta_k(s)``, shape ``(n, n_knots)``."""
    pts = as_points(points, basis.d)
    dist = cdist(pts, basis.knots)
    if basis.kind == "gaussian-rbf":
        return np.exp(-basis.bandwidth * dist)
    u = dist / basis.bandwidth
    return np.where(u <= 1.0, (1.0 - u * u) ** 2, 0.0)


def eval_basis(s, basis):
    """The ``r x d`` basis matrix psi(s) at a single location."""
    pt = as_points(s, basis.d)
    if pt.shape[0] != 1:
        raise ValidationError("eval_basis takes a single location")
    zeta = kernel_values(pt, basis)[0]
    d = basis.d
    if basis.kind == "ozone-composite":
        psi = np.zeros((basis.r, 2))
        psi[3:, 0] = zeta
        psi[0, 1] = 1.0
        psi[1:3, 1] = pt[0]
        return psi
    # one block of kernel coefficients per output dimension
    psi = np.zeros((basis.r, d))
    nk = basis.n_knots
    for j in range(d):
        psi[j * nk:(j + 1) * nk, j] = zeta
    return psi


def warp(points, emap, budget=_WARP_BUDGET):
    """f(s) = psi(s)' eta for every point, shape ``(n, d)``.

    Evaluated in row blocks so no ``n x r`` array is ever formed.
    """
    basis = emap.basis
    pts = as_points(points, basis.d)
    out = np.zeros_like(pts)
    if emap.is_identity:
        return out
    eta = emap.eta
    nk = basis.n_knots
    block = max(1, budget // nk)
    for start in range(0, len(pts), block):
        chunk = pts[start:start + block]
        zeta = kernel_values(chunk, basis)
        if basis.kind == "ozone-composite":
            out[start:start + block, 0] = zeta @ eta[3:]
            out[start:start + block, 1] = eta[0] + chunk @ eta[1:3]
        else:
            for j in range(basis.d):
                out[start:start + block, j] = zeta @ eta[j * nk:(j + 1) * nk]
    return out


def expanded_coords(points, emap):
    """Points lifted into ``R^{2d}`` as ``(s, f(s))``."""
    pts = as_points(points, emap.d)
    return np.hstack([pts, warp(pts, emap)])


def expanded_distance(si, sj, emap):
    a = expanded_coords(as_points(si, emap.d), emap)[0]
    b = expanded_coords(as_points(sj, emap.d), emap)[0]
    return float(np.sqrt(np.sum((a - b) ** 2)))


def cov(si, sj, params, basis):
    emap = ExpansionMap(basis, params.eta)
    return float(params.sigma_nu_sq * np.exp(-expanded_distance(si, sj, emap) / params.phi))


def expanded_distance_matrix(points, emap, cap=DEFAULT_MATRIX_CAP):
    pts = as_points(points, emap.d)
    if len(pts) > cap:
        raise ValidationError(
            f"{len(pts)} points exceeds the dense-matrix cap of {cap}; "
            "dense covariance is only built for small subsamples")
    return squareform(pdist(expanded_coords(pts, emap)))


def correlation_from_distance(dist, phi, jitter=DEFAULT_JITTER):
    corr = np.exp(-dist / phi)
    if jitter:
        corr[np.diag_indices_from(corr)] += jitter
    return corr


def cov_matrix(points, params, basis, cap=DEFAULT_MATRIX_CAP, jitter=DEFAULT_JITTER):
    """Dense ``C(theta)`` over a small point set.

    ``jitter`` is relative to ``sigma_nu_sq`` and is added to the diagonal;
    pass ``jitter=0`` to get the raw matrix.
    """
    emap = ExpansionMap(basis, params.eta)
    dist = expanded_distance_matrix(points, emap, cap=cap)
    return params.sigma_nu_sq * correlation_from_distance(dist, params.phi, jitter)


def is_positive_definite(mat):
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return False
    return True


def require_positive_definite(mat, what="covariance matrix"):
    if not is_positive_definite(mat):
        raise NumericalError(f"{what} is not positive definite")
    return mat
