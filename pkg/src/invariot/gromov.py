"""
Gromov-Wasserstein objective under cosine similarity and squared loss, and
its relation to the Frobenius-invariant objective.

With unit columns and ``Cx = X^T X``, ``Cy = Y^T Y``, the only coupling
dependent part of the squared-loss GW objective is the cross term
``sum Cx_ik Cy_jl G_ij G_kl = <Cx G, G Cy> = ||X G Y^T||_F^2``.  This module
evaluates both sides; it is a verification instrument, not a solver.
"""

from dataclasses import dataclass

import numpy as np

from .core import Coupling, Histogram, InvalidInputError

__all__ = [
    "GwInstance",
    "EquivalenceReport",
    "cosine_similarity",
    "gw_objective",
    "gw_objective_naive",
    "gw_constant_terms",
    "gw_cross_term",
    "gw_cross_term_naive",
    "frobenius_objective",
    "frobenius_objective_naive",
    "gw_frobenius_equivalence",
    "UNIT_TOL",
    "EquivalenceSuiteReport",
    "equivalence_suite",
]

SYM_TOL = 1e-10
UNIT_TOL = 1e-8
# the quadruple loop is only for small instances
NAIVE_MAX_CELLS = 400


def _unit_columns(Z, name):
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise InvalidInputError(f"{name} must be a matrix, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    dev = np.max(np.abs(np.linalg.norm(Z, axis=0) - 1.0))
    if dev > UNIT_TOL:
        raise InvalidInputError(f"columns of {name} are not unit norm (max deviation {dev:.3g})")
    return Z


def cosine_similarity(Z):
    """``Z^T Z`` for a matrix with unit columns."""
    Z = _unit_columns(Z, "Z")
    C = Z.T @ Z
    return (C + C.T) / 2


def _check_similarity(C, name):
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    if np.max(np.abs(C - C.T), initial=0.0) > SYM_TOL:
        raise InvalidInputError(f"{name} is not symmetric")
    if np.max(np.abs(C), initial=0.0) > 1 + SYM_TOL:
        raise InvalidInputError(f"{name} has entries outside [-1, 1]")
    if np.max(np.abs(np.diag(C) - 1.0), initial=0.0) > SYM_TOL:
        raise InvalidInputError(f"{name} must have a unit diagonal")
    return C


@dataclass(frozen=True)
class GwInstance:
    """Two cosine-similarity matrices with their histograms."""

    Cx: np.ndarray
    Cy: np.ndarray
    p: Histogram
    q: Histogram

    def __post_init__(self):
        Cx = _check_similarity(self.Cx, "Cx")
        Cy = _check_similarity(self.Cy, "Cy")
        p = self.p if isinstance(self.p, Histogram) else Histogram(self.p)
        q = self.q if isinstance(self.q, Histogram) else Histogram(self.q)
        if len(p) != Cx.shape[0] or len(q) != Cy.shape[0]:
            raise InvalidInputError("histogram lengths do not match the similarity matrices")
        for name, val in (("Cx", Cx), ("Cy", Cy), ("p", p), ("q", q)):
            object.__setattr__(self, name, val)
        self.Cx.setflags(write=False)
        self.Cy.setflags(write=False)

    @classmethod
    def from_points(cls, X, Y, p=None, q=None):
        """Instance with ``Cx = X^T X`` and ``Cy = Y^T Y`` (unit columns required)."""
        X = _unit_columns(X, "X")
        Y = _unit_columns(Y, "Y")
        p = Histogram.uniform(X.shape[1]) if p is None else p
        q = Histogram.uniform(Y.shape[1]) if q is None else q
        return cls(cosine_similarity(X), cosine_similarity(Y), p, q)


def _gamma_for(inst, gamma):
    G = gamma.gamma if isinstance(gamma, Coupling) else np.asarray(gamma, dtype=float)
    if G.shape != (inst.Cx.shape[0], inst.Cy.shape[0]):
        raise InvalidInputError(
            f"coupling shape {G.shape} does not match instance ({inst.Cx.shape[0]}, {inst.Cy.shape[0]})"
        )
    return G


def gw_cross_term(inst, gamma):
    """``sum_{ijkl} Cx_ik Cy_jl G_ij G_kl = <Cx G, G Cy>``."""
    G = _gamma_for(inst, gamma)
    return float(np.vdot(inst.Cx @ G, G @ inst.Cy))


def gw_constant_terms(inst, gamma, half=True):
    """``c * (a^T (Cx o Cx) a + b^T (Cy o Cy) b)`` with ``a, b`` the marginals of G.

    ``c`` is 1/2 for the loss ``|a - b|^2 / 2`` and 1 for ``|a - b|^2``.  For
    a feasible coupling ``a = p`` and ``b = q``, so the value does not depend
    on the coupling.
    """
    G = _gamma_for(inst, gamma)
    a, b = G.sum(axis=1), G.sum(axis=0)
    const = a @ (inst.Cx**2) @ a + b @ (inst.Cy**2) @ b
    return float(0.5 * const if half else const)


def gw_objective(inst, gamma):
    """``sum_{ijkl} (Cx_ik - Cy_jl)^2 / 2 * G_ij G_kl`` in factored form.

    The constant part uses the actual marginals of ``gamma``, which makes the
    factorization exact for any nonnegative matrix, not only for couplings.
    """
    val = gw_constant_terms(inst, gamma, half=True) - gw_cross_term(inst, gamma)
    # the sum is of nonnegative terms; clamp cancellation error
    return max(val, 0.0)


def _naive_guard(n, m):
    if n * m > NAIVE_MAX_CELLS:
        raise InvalidInputError(f"naive evaluation limited to n*m <= {NAIVE_MAX_CELLS}, got {n * m}")


def gw_objective_naive(inst, gamma):
    """Quadruple loop over ``(i, j, k, l)``; reference for small instances."""
    G = _gamma_for(inst, gamma)
    n, m = G.shape
    _naive_guard(n, m)
    Cx, Cy = inst.Cx, inst.Cy
    total = 0.0
    for i in range(n):
        for j in range(m):
            for k in range(n):
                for l in range(m):
                    total += 0.5 * (Cx[i, k] - Cy[j, l]) ** 2 * G[i, j] * G[k, l]
    return total


def gw_cross_term_naive(inst, gamma):
    G = _gamma_for(inst, gamma)
    n, m = G.shape
    _naive_guard(n, m)
    Cx, Cy = inst.Cx, inst.Cy
    total = 0.0
    for i in range(n):
        for j in range(m):
            for k in range(n):
                for l in range(m):
                    total += Cx[i, k] * Cy[j, l] * G[i, j] * G[k, l]
    return total


def _gamma_xy(X, Y, gamma):
    G = gamma.gamma if isinstance(gamma, Coupling) else np.asarray(gamma, dtype=float)
    if X.shape[0] != Y.shape[0]:
        raise InvalidInputError(f"dimension mismatch: {X.shape[0]} vs {Y.shape[0]}")
    if G.shape != (X.shape[1], Y.shape[1]):
        raise InvalidInputError(f"coupling shape {G.shape} does not match ({X.shape[1]}, {Y.shape[1]})")
    return G


def frobenius_objective(X, Y, gamma):
    """``||X G Y^T||_F^2`` for unit-column ``X`` and ``Y``."""
    X = _unit_columns(X, "X")
    Y = _unit_columns(Y, "Y")
    G = _gamma_xy(X, Y, gamma)
    return float(np.sum((X @ G @ Y.T) ** 2))


def frobenius_objective_naive(X, Y, gamma):
    X = _unit_columns(X, "X")
    Y = _unit_columns(Y, "Y")
    G = _gamma_xy(X, Y, gamma)
    d = X.shape[0]
    total = 0.0
    for a in range(d):
        for b in range(d):
            entry = 0.0
            for i in range(X.shape[1]):
                for j in range(Y.shape[1]):
                    entry += X[a, i] * G[i, j] * Y[b, j]
            total += entry * entry
    return total


@dataclass(frozen=True)
class EquivalenceReport:
    gw_cross_term: float
    frobenius_value: float
    abs_diff: float
    gw_objective: float
    constant_half: float
    constant_full: float
    oracle_cross_term: float = None

    def holds(self, tol=1e-9):
        ok = self.abs_diff <= tol
        if self.oracle_cross_term is not None:
            ok = ok and abs(self.oracle_cross_term - self.gw_cross_term) <= tol
        return bool(ok)

    def as_dict(self):
        return {
            "gw_cross_term": self.gw_cross_term,
            "frobenius_value": self.frobenius_value,
            "abs_diff": self.abs_diff,
            "gw_objective": self.gw_objective,
            "constant_half": self.constant_half,
            "constant_full": self.constant_full,
            "oracle_cross_term": self.oracle_cross_term,
        }


def gw_frobenius_equivalence(X, Y, gamma, oracle=None):
    """Compare the GW cross term with ``||X G Y^T||_F^2``.

    Parameters
    ----------
    X, Y : ndarray
        Unit-column matrices of shapes (d, n) and (d, m).
    gamma : Coupling or ndarray
    oracle : bool, optional
        Also evaluate the cross term with the quadruple loop.  Defaults to
        doing so whenever ``n * m <= 400``.

    Returns
    -------
    EquivalenceReport
        Also carries the GW objective and its constant part under both loss
        conventions (``|a - b|^2 / 2`` and ``|a - b|^2``).
    """
    inst = GwInstance.from_points(X, Y, *_marginals(gamma))
    cross = gw_cross_term(inst, gamma)
    frob = frobenius_objective(X, Y, gamma)
    G = _gamma_for(inst, gamma)
    if oracle is None:
        oracle = G.size <= NAIVE_MAX_CELLS
    naive = gw_cross_term_naive(inst, gamma) if oracle else None
    return EquivalenceReport(
        gw_cross_term=cross,
        frobenius_value=frob,
        abs_diff=abs(cross - frob),
        gw_objective=gw_objective(inst, gamma),
        constant_half=gw_constant_terms(inst, gamma, half=True),
        constant_full=gw_constant_terms(inst, gamma, half=False),
        oracle_cross_term=naive,
    )


def _marginals(gamma):
    if isinstance(gamma, Coupling):
        return gamma.p, gamma.q
    G = np.asarray(gamma, dtype=float)
    if G.ndim != 2:
        raise InvalidInputError("coupling must be a matrix")
    a, b = G.sum(axis=1), G.sum(axis=0)
    return Histogram(a / a.sum()), Histogram(b / b.sum())


@dataclass(frozen=True)
class EquivalenceSuiteReport:
    trials: int
    max_abs_diff: float
    max_oracle_diff: float
    oracle_checked: int
    tol: float

    @property
    def passed(self):
        return self.max_abs_diff <= self.tol and self.max_oracle_diff <= self.tol

    def as_dict(self):
        return {
            "trials": self.trials,
            "max_abs_diff": self.max_abs_diff,
            "max_oracle_diff": self.max_oracle_diff,
            "oracle_checked": self.oracle_checked,
            "tol": self.tol,
            "passed": self.passed,
        }


def _unit_gaussian(rng, d, n):
    Z = rng.standard_normal((d, n))
    return Z / np.linalg.norm(Z, axis=0)


def equivalence_suite(trials=100, seed=0, max_dim=10, max_points=30, tol=1e-9, lam=0.1):
    """Randomized check that the GW cross term equals ``||X G Y^T||_F^2``.

    Each trial draws unit-column ``X`` (d x n) and ``Y`` (d x m) with
    ``d <= max_dim`` and ``n, m <= max_points``, random histograms and a
    coupling from Sinkhorn on a random cost.  Trials with ``n * m <= 400``
    are also checked against the quadruple loop.
    """
    from .sinkhorn import SinkhornSettings, sinkhorn_solve

    rng = np.random.default_rng(seed)
    max_diff = max_oracle = 0.0
    checked = 0
    for _ in range(int(trials)):
        d = int(rng.integers(1, max_dim + 1))
        n = int(rng.integers(1, max_points + 1))
        m = int(rng.integers(1, max_points + 1))
        X, Y = _unit_gaussian(rng, d, n), _unit_gaussian(rng, d, m)
        p = rng.uniform(0.1, 1.0, n)
        q = rng.uniform(0.1, 1.0, m)
        C = rng.uniform(0.0, 1.0, (n, m))
        G = sinkhorn_solve(C, p / p.sum(), q / q.sum(), SinkhornSettings(lam=lam))
        rep = gw_frobenius_equivalence(X, Y, G)
        max_diff = max(max_diff, rep.abs_diff)
        if rep.oracle_cross_term is not None:
            checked += 1
            max_oracle = max(max_oracle, abs(rep.oracle_cross_term - rep.gw_cross_term))
    return EquivalenceSuiteReport(int(trials), max_diff, max_oracle, checked, tol)
