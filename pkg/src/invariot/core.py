"""
Shared value types: histograms, point sets, couplings, invariance balls and
linear maps, plus the Schatten norm and coupling validation.

All types are frozen dataclasses whose array fields are marked read-only,
so instances can be shared freely between threads.
"""

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidInputError",
    "NumericalFailureError",
    "SingularInputError",
    "Histogram",
    "PointSet",
    "Coupling",
    "CouplingReport",
    "InvarianceBall",
    "LinearMap",
    "parse_order",
    "is_infinite_order",
    "schatten_norm",
    "vector_norm",
    "validate_coupling",
    "barycentric_image",
]

MASS_TOL = 1e-6
MARGINAL_TOL = 1e-6
BALL_SLACK = 1e-8


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class SingularInputError(InvalidInputError):
    """Raised when a matrix that must be invertible is (numerically) singular."""


class NumericalFailureError(ArithmeticError):
    """Raised when an iterative routine breaks down numerically."""


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def parse_order(p):
    """Normalize a Schatten order.

    Accepts numbers, ``math.inf`` or the strings ``"inf"``/``"infinity"``.
    Infinity is kept as the exact float ``math.inf`` and always tested with
    :func:`is_infinite_order`; it never enters exponent arithmetic.
    """
    if isinstance(p, str):
        s = p.strip().lower()
        if s in ("inf", "infinity", "∞"):
            return math.inf
        try:
            p = float(s)
        except ValueError:
            raise InvalidInputError(f"cannot parse Schatten order {p!r}") from None
    p = float(p)
    if math.isnan(p) or p < 1:
        raise InvalidInputError(f"Schatten order must lie in [1, inf], got {p}")
    return p


def is_infinite_order(p):
    return math.isinf(p)


def vector_norm(v, p):
    """l_p norm of a vector for p in [1, inf]."""
    v = np.abs(np.asarray(v, dtype=float))
    if v.size == 0:
        return 0.0
    if is_infinite_order(p):
        return float(v.max())
    if p == 1:
        return float(v.sum())
    vmax = v.max()
    if vmax == 0:
        return 0.0
    # scale first so that large p does not overflow
    return float(vmax * np.sum((v / vmax) ** p) ** (1.0 / p))


def schatten_norm(M, p):
    """Schatten l_p norm: the l_p norm of the singular values of ``M``.

    Parameters
    ----------
    M : array_like, shape (d1, d2)
    p : float or str
        Order in [1, inf]; ``"inf"`` gives the spectral norm, 1 the nuclear
        norm and 2 the Frobenius norm.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InvalidInputError(f"expected a matrix, got array of shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("matrix contains non-finite entries")
    p = parse_order(p)
    sigma = np.linalg.svd(M, compute_uv=False)
    return vector_norm(sigma, p)


@dataclass(frozen=True)
class Histogram:
    """Probability vector over the points of a point set."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        if m.ndim != 1 or m.size == 0:
            raise InvalidInputError("histogram must be a non-empty vector")
        if not np.all(np.isfinite(m)):
            raise InvalidInputError("histogram contains non-finite entries")
        if np.any(m < 0):
            raise InvalidInputError("histogram has negative entries")
        total = m.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise InvalidInputError(f"histogram mass is {total!r}, expected 1")
        object.__setattr__(self, "mass", _frozen(m / total))

    @classmethod
    def uniform(cls, n):
        if n < 1:
            raise InvalidInputError("histogram length must be positive")
        return cls(np.full(n, 1.0 / n))

    def __len__(self):
        return self.mass.shape[0]


@dataclass(frozen=True)
class PointSet:
    """A ``d x n`` matrix whose columns are points, with weights over columns."""

    data: np.ndarray
    weights: Histogram = None

    def __post_init__(self):
        X = np.asarray(self.data, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidInputError(f"point set must be a non-empty d x n matrix, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("point set contains non-finite entries")
        w = self.weights
        if w is None:
            w = Histogram.uniform(X.shape[1])
        elif not isinstance(w, Histogram):
            w = Histogram(w)
        if len(w) != X.shape[1]:
            raise InvalidInputError(
                f"weights have length {len(w)} but the point set has {X.shape[1]} columns"
            )
        object.__setattr__(self, "data", _frozen(X))
        object.__setattr__(self, "weights", w)

    @property
    def dim(self):
        return self.data.shape[0]

    @property
    def size(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class CouplingReport:
    feasible: bool
    row_residual: float
    col_residual: float
    min_entry: float


def validate_coupling(gamma, p, q, tol=MARGINAL_TOL):
    """Check that ``gamma`` lies in the transportation polytope of ``(p, q)``.

    Returns
    -------
    CouplingReport
        ``feasible`` is true iff all entries are nonnegative and both
        marginal residuals (max-norm) are at most ``tol``.
    """
    G = np.asarray(gamma, dtype=float)
    p = np.asarray(getattr(p, "mass", p), dtype=float)
    q = np.asarray(getattr(q, "mass", q), dtype=float)
    if G.ndim != 2 or G.shape != (p.shape[0], q.shape[0]):
        raise InvalidInputError(
            f"coupling shape {G.shape} does not match marginals ({p.shape[0]}, {q.shape[0]})"
        )
    row = float(np.max(np.abs(G.sum(axis=1) - p)))
    col = float(np.max(np.abs(G.sum(axis=0) - q)))
    mn = float(G.min())
    ok = bool(np.all(np.isfinite(G)) and mn >= 0 and row <= tol and col <= tol)
    return CouplingReport(ok, row, col, mn)


@dataclass(frozen=True)
class Coupling:
    """Transport plan ``gamma`` with marginals ``p`` (rows) and ``q`` (columns).

    Solver outputs also carry whether the producing iteration converged, the
    iteration count, and optionally the dual potentials ``(f, g)`` in cost
    units, which can be used to warm-start a subsequent solve.
    """

    gamma: np.ndarray
    p: Histogram
    q: Histogram
    converged: bool = True
    n_iter: int = 0
    potentials: tuple = field(default=None, repr=False, compare=False)
    tol: float = MARGINAL_TOL

    def __post_init__(self):
        p = self.p if isinstance(self.p, Histogram) else Histogram(self.p)
        q = self.q if isinstance(self.q, Histogram) else Histogram(self.q)
        G = np.asarray(self.gamma, dtype=float)
        rep = validate_coupling(G, p, q, tol=max(self.tol, 0.0))
        if rep.min_entry < 0 or not np.all(np.isfinite(G)):
            raise InvalidInputError("coupling must be finite and nonnegative")
        if self.converged and not rep.feasible:
            raise InvalidInputError(
                "coupling violates its marginals "
                f"(row {rep.row_residual:.3g}, column {rep.col_residual:.3g}, tol {self.tol:.3g})"
            )
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "gamma", _frozen(G))

    @property
    def shape(self):
        return self.gamma.shape

    def report(self, tol=None):
        return validate_coupling(self.gamma, self.p, self.q, self.tol if tol is None else tol)


@dataclass(frozen=True)
class InvarianceBall:
    """Schatten ball ``{P : ||P||_p <= radius}`` of ``dim x dim`` matrices.

    When ``radius`` is omitted it defaults to the norm of the identity:
    1 for p = inf, sqrt(d) for p = 2, d for p = 1 and d**(1/p) in general.
    """

    order: float
    dim: int
    radius: float = None

    def __post_init__(self):
        p = parse_order(self.order)
        d = int(self.dim)
        if d < 1:
            raise InvalidInputError("ball dimension must be at least 1")
        k = self.radius
        if k is None:
            k = 1.0 if is_infinite_order(p) else float(d) ** (1.0 / p)
        k = float(k)
        if not (k > 0 and math.isfinite(k)):
            raise InvalidInputError(f"ball radius must be positive, got {k}")
        object.__setattr__(self, "order", p)
        object.__setattr__(self, "dim", d)
        object.__setattr__(self, "radius", k)

    @property
    def is_spectral(self):
        return is_infinite_order(self.order)

    def contains(self, M, slack=BALL_SLACK):
        M = np.asarray(M, dtype=float)
        if M.shape != (self.dim, self.dim):
            return False
        return schatten_norm(M, self.order) <= self.radius * (1 + slack)

    def label(self):
        return "inf" if self.is_spectral else f"{self.order:g}"


@dataclass(frozen=True)
class LinearMap:
    """A ``d x d`` matrix constrained to an :class:`InvarianceBall`."""

    matrix: np.ndarray
    ball: InvarianceBall

    def __post_init__(self):
        P = np.asarray(self.matrix, dtype=float)
        b = self.ball
        if P.shape != (b.dim, b.dim):
            raise InvalidInputError(f"map has shape {P.shape}, ball expects {(b.dim, b.dim)}")
        if not np.all(np.isfinite(P)):
            raise InvalidInputError("map contains non-finite entries")
        norm = schatten_norm(P, b.order)
        if norm > b.radius * (1 + BALL_SLACK):
            raise InvalidInputError(
                f"map has Schatten-{b.label()} norm {norm:.12g} > radius {b.radius:.12g}"
            )
        object.__setattr__(self, "matrix", _frozen(P))

    def __call__(self, Y):
        return self.matrix @ np.asarray(Y, dtype=float)


def barycentric_image(X, gamma):
    """Return ``X @ gamma``: each target column receives the Gamma-weighted
    sum of the source columns."""
    Xd = X.data if isinstance(X, PointSet) else np.asarray(X, dtype=float)
    G = gamma.gamma if isinstance(gamma, Coupling) else np.asarray(gamma, dtype=float)
    if Xd.ndim != 2 or G.ndim != 2 or Xd.shape[1] != G.shape[0]:
        raise InvalidInputError(
            f"cannot transport {Xd.shape} points with a coupling of shape {G.shape}"
        )
    return Xd @ G
