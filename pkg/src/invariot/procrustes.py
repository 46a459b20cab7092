"""
Linear maximization over Schatten balls.

``max <P, M>`` subject to ``||P||_p <= k`` is attained at
``U diag(s) V^T`` where ``M = U diag(sigma) V^T`` and ``s`` maximizes
``<s, sigma>`` over the vector l_p ball of radius k; the optimal value is
``k * ||sigma||_q`` with ``1/p + 1/q = 1``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    InvalidInputError,
    InvarianceBall,
    LinearMap,
    is_infinite_order,
    parse_order,
    vector_norm,
)

__all__ = [
    "SpectralSolution",
    "optimal_map_in_ball",
    "random_feasible_map",
    "random_feasible_maps",
    "dual_order",
    "dual_norm_value",
    "DominanceReport",
    "closed_form_suite",
]

# orders this close to 1 are treated as exactly 1 (q - 1 = 1/(p - 1) would blow up)
_P1_CUTOFF = 1e-6
_TIE_RTOL = 1e-12


def _effective_order(p):
    p = parse_order(p)
    if not is_infinite_order(p) and p < 1 + _P1_CUTOFF:
        return 1.0
    return p


def dual_order(p):
    """Conjugate exponent ``q = p / (p - 1)``; inf <-> 1 handled exactly."""
    p = _effective_order(p)
    if is_infinite_order(p):
        return 1.0
    if p == 1:
        return math.inf
    return p / (p - 1.0)


def dual_norm_value(sigma, p):
    """``||sigma||_q`` for the dual exponent ``q`` of ``p``."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise InvalidInputError("singular values must be nonnegative")
    return vector_norm(sigma, dual_order(p))


def _ball_spectrum(sigma, p, k):
    """Maximizer of ``<s, sigma>`` over ``||s||_p <= k`` (sigma descending)."""
    if is_infinite_order(p):
        return np.full_like(sigma, k)
    if p == 1:
        s = np.zeros_like(sigma)
        smax = sigma.max()
        # first index attaining the max (ties within relative 1e-12)
        i = int(np.flatnonzero(sigma >= smax * (1 - _TIE_RTOL))[0])
        s[i] = k
        return s
    q = p / (p - 1.0)
    w = (sigma / sigma.max()) ** (q - 1.0)
    return k * w / vector_norm(w, p)


@dataclass(frozen=True)
class SpectralSolution:
    P: LinearMap
    singular_values_M: np.ndarray
    chosen_spectrum: np.ndarray
    optimal_value: float
    degenerate: bool = False


def optimal_map_in_ball(M, ball):
    """Closed-form maximizer of ``<P, M>`` over an invariance ball.

    Parameters
    ----------
    M : array_like, shape (d, d)
    ball : InvarianceBall

    Returns
    -------
    SpectralSolution
        For p = inf the map is ``k U V^T`` (orthogonal Procrustes); for p = 1
        it is the rank-one ``k u_1 v_1^T``.  A zero ``M`` makes every feasible
        map optimal; the scaled identity is returned and ``degenerate`` set.
    """
    M = np.asarray(M, dtype=float)
    d = ball.dim
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {M.shape} (unbalanced maps are not supported)")
    if M.shape != (d, d):
        raise InvalidInputError(f"matrix shape {M.shape} does not match ball dimension {d}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("matrix contains non-finite entries")
    p = _effective_order(ball.order)
    k = ball.radius
    U, sigma, Vt = np.linalg.svd(M)
    if sigma[0] == 0:
        eye_norm = 1.0 if is_infinite_order(p) else float(d) ** (1.0 / p)
        P = (k / eye_norm) * np.eye(d)
        return SpectralSolution(LinearMap(P, ball), sigma, np.full(d, k / eye_norm), 0.0, True)
    s = _ball_spectrum(sigma, p, k)
    P = (U * s) @ Vt
    value = k * dual_norm_value(sigma, p)
    return SpectralSolution(LinearMap(P, ball), sigma, s, value)


def _boundary_maps(U, sigma, Vt, ball):
    """Rescale stacked SVD factors so every spectrum has ``||s||_p = k``."""
    p = ball.order
    if is_infinite_order(p):
        norms = sigma.max(axis=1)
    elif p == 1:
        norms = sigma.sum(axis=1)
    else:
        smax = sigma.max(axis=1, keepdims=True)
        norms = smax[:, 0] * np.sum((sigma / smax) ** p, axis=1) ** (1.0 / p)
    s = ball.radius * sigma / norms[:, None]
    return (U * s[:, None, :]) @ Vt


def random_feasible_maps(d, ball, size, rng):
    """``size`` random maps on the boundary of ``ball``, stacked as (size, d, d).

    Each is a standard Gaussian matrix whose spectrum is rescaled to
    ``k * sigma / ||sigma||_p``.
    """
    U, sigma, Vt = np.linalg.svd(rng.standard_normal((size, d, d)))
    return _boundary_maps(U, sigma, Vt, ball)


def random_feasible_map(d, ball, seed=0):
    """Seeded random map in ``ball`` (on its boundary); deterministic per seed."""
    if int(d) < 1:
        raise InvalidInputError("dimension must be >= 1")
    if ball.dim != d:
        raise InvalidInputError(f"ball dimension {ball.dim} != {d}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return LinearMap(random_feasible_maps(d, ball, 1, rng)[0], ball)


@dataclass(frozen=True)
class DominanceReport:
    trials: int
    max_value_error: float
    min_margin: float
    value_tol: float
    margin_tol: float

    @property
    def passed(self):
        return self.max_value_error <= self.value_tol and self.min_margin >= -self.margin_tol

    def as_dict(self):
        return {
            "trials": self.trials,
            "max_value_error": self.max_value_error,
            "min_margin": self.min_margin,
            "value_tol": self.value_tol,
            "margin_tol": self.margin_tol,
            "passed": self.passed,
        }


SUITE_DIMS = (2, 3, 5)
SUITE_ORDERS = (1.0, 1.5, 2.0, 4.0, math.inf)


def closed_form_suite(trials=200, samples=1000, seed=0, dims=SUITE_DIMS, orders=SUITE_ORDERS,
                      value_tol=1e-8, margin_tol=1e-9):
    """Randomized check of the closed form against sampled feasible maps.

    For each trial a Gaussian matrix ``M`` (dimension cycling through
    ``dims``) and a radius in [0.5, 2] are drawn; for every order the
    closed-form value must equal ``<P, M>`` and ``k ||sigma(M)||_q`` to
    ``value_tol`` (relative) and beat ``samples`` random boundary maps by at
    least ``-margin_tol`` (absolute).
    """
    rng = np.random.default_rng(seed)
    max_err, min_margin = 0.0, math.inf
    for t in range(int(trials)):
        d = dims[t % len(dims)]
        M = rng.standard_normal((d, d))
        k = float(rng.uniform(0.5, 2.0))
        factors = np.linalg.svd(rng.standard_normal((int(samples), d, d)))
        for p in orders:
            ball = InvarianceBall(p, d, k)
            sol = optimal_map_in_ball(M, ball)
            attained = float(np.vdot(sol.P.matrix, M))
            scale = max(abs(sol.optimal_value), 1e-300)
            max_err = max(max_err, abs(attained - sol.optimal_value) / scale)
            rand = _boundary_maps(*factors, ball)
            best_rand = float(np.max(np.einsum("sij,ij->s", rand, M)))
            min_margin = min(min_margin, attained - best_rand)
    return DominanceReport(int(trials), max_err, min_margin, value_tol, margin_tol)
