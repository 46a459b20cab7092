"""
Entropic optimal transport: cost matrices, Sinkhorn-Knopp scaling with
automatic log-domain stabilization, and small exact solvers.

Regularization convention: the kernel is ``K = exp(-C / lam)`` and the
solver minimizes ``<G, C> - lam * H(G)`` with
``H(G) = -sum G * (log G - 1)``, so larger ``lam`` means a smoother plan.
"""

import enum
import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import (
    Coupling,
    Histogram,
    InvalidInputError,
    NumericalFailureError,
    MARGINAL_TOL,
)

__all__ = [
    "CostKind",
    "CostMatrix",
    "SinkhornSettings",
    "pairwise_sq_dist",
    "sinkhorn_solve",
    "entropy",
    "transport_cost",
    "regularized_ot_objective",
    "exact_ot_small",
    "exact_ot",
]

logger = logging.getLogger(__name__)

# exp(-x) for x above this underflows past 1e-300
_UNDERFLOW = -math.log(1e-300)
# absorb scalings into the potentials once they leave [1e-50, 1e50]
_ABSORB = 50 * math.log(10)
# Sinkhorn is declared stalled when the residual shrinks by less than this
# factor over a window of iterations
_STALL_RATIO = 0.5
_STALL_WINDOW = 50
# largest n + m for which the Newton system is formed densely
_DENSE_NEWTON = 2000


class CostKind(enum.Enum):
    SQUARED_EUCLIDEAN = "sqeuclidean"
    NEGATIVE_INNER = "neginner"


@dataclass(frozen=True)
class CostMatrix:
    cost: np.ndarray
    kind: CostKind = CostKind.SQUARED_EUCLIDEAN

    def __post_init__(self):
        C = np.array(self.cost, dtype=float)
        if C.ndim != 2:
            raise InvalidInputError(f"cost must be a matrix, got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise InvalidInputError("cost matrix has non-finite entries")
        kind = CostKind(self.kind)
        if kind is CostKind.SQUARED_EUCLIDEAN and C.size and C.min() < 0:
            raise InvalidInputError("squared-Euclidean cost has negative entries")
        C.setflags(write=False)
        object.__setattr__(self, "cost", C)
        object.__setattr__(self, "kind", kind)

    @property
    def shape(self):
        return self.cost.shape


@dataclass(frozen=True)
class SinkhornSettings:
    lam: float = 1.0
    max_inner_iters: int = 1000
    marginal_tol: float = MARGINAL_TOL

    def __post_init__(self):
        if not (self.lam > 0):
            raise InvalidInputError(f"lambda must be positive, got {self.lam}")
        if int(self.max_inner_iters) < 1:
            raise InvalidInputError("max_inner_iters must be >= 1")
        if not (self.marginal_tol > 0):
            raise InvalidInputError("marginal_tol must be positive")

    def with_lambda(self, lam):
        return SinkhornSettings(lam, self.max_inner_iters, self.marginal_tol)


def _as_cost(C):
    if isinstance(C, CostMatrix):
        return C.cost
    return CostMatrix(C, CostKind.NEGATIVE_INNER).cost


def _as_hist(h):
    return h if isinstance(h, Histogram) else Histogram(h)


def pairwise_sq_dist(X, Y):
    """Squared Euclidean distances between the columns of ``X`` and ``Y``.

    Uses the expansion ``|x|^2 + |y|^2 - 2<x, y>`` and clamps the small
    negative values it can produce to zero.
    """
    X = np.asarray(getattr(X, "data", X), dtype=float)
    Y = np.asarray(getattr(Y, "data", Y), dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise InvalidInputError(f"dimension mismatch: {X.shape} vs {Y.shape}")
    xx = np.einsum("ij,ij->j", X, X)
    yy = np.einsum("ij,ij->j", Y, Y)
    C = xx[:, None] + yy[None, :] - 2.0 * (X.T @ Y)
    np.maximum(C, 0.0, out=C)
    return CostMatrix(C, CostKind.SQUARED_EUCLIDEAN)


def entropy(gamma):
    """``H(G) = -sum_ij G_ij (log G_ij - 1)`` with ``0 log 0 = 0``."""
    G = np.asarray(getattr(gamma, "gamma", gamma), dtype=float)
    pos = G > 0
    g = G[pos]
    return float(-np.sum(g * (np.log(g) - 1.0)))


def transport_cost(gamma, C):
    """Frobenius inner product ``<G, C>``."""
    G = np.asarray(getattr(gamma, "gamma", gamma), dtype=float)
    Cm = np.asarray(getattr(C, "cost", C), dtype=float)
    if G.shape != Cm.shape:
        raise InvalidInputError(f"shape mismatch: coupling {G.shape} vs cost {Cm.shape}")
    return float(np.vdot(G, Cm))


def regularized_ot_objective(gamma, C, lam):
    """Primal entropic objective ``<G, C> - lam * H(G)``."""
    return transport_cost(gamma, C) - lam * entropy(gamma)


def _plain_scaling(K, p, q, settings, b0=None, callback=None):
    b = np.ones_like(q) if b0 is None else b0.copy()
    tol = settings.marginal_tol
    err = math.inf
    it = 0
    for it in range(1, settings.max_inner_iters + 1):
        Kb = K @ b
        if not np.all(Kb > 0):
            i = int(np.flatnonzero(~(Kb > 0))[0])
            raise NumericalFailureError(f"Sinkhorn kernel row {i} vanished")
        a = p / Kb
        Ka = K.T @ a
        if not np.all(Ka > 0):
            j = int(np.flatnonzero(~(Ka > 0))[0])
            raise NumericalFailureError(f"Sinkhorn kernel column {j} vanished")
        b = q / Ka
        # columns are exact after the b-update; rows carry the residual
        err = float(np.max(np.abs(a * (K @ b) - p)))
        if callback is not None:
            callback(a[:, None] * K * b[None, :])
        if not math.isfinite(err):
            raise NumericalFailureError("non-finite Sinkhorn scaling")
        if err <= tol:
            break
    G = a[:, None] * K * b[None, :]
    return G, err, it, (a, b)


def _log_stabilized(C, p, q, lam, settings, f0=None, g0=None, callback=None, stall_window=0):
    """Sinkhorn on a kernel stabilized by absorbed dual potentials.

    The plan is ``exp((f_i + g_j - C_ij) / lam)``.  Each absorption runs an
    exact log-domain half-sweep pair, then plain scaling continues on the
    rescaled kernel until the scalings drift outside a safe range.
    """
    n, m = C.shape
    logp = np.log(p)
    logq = np.log(q)
    f = np.zeros(n) if f0 is None else np.array(f0, dtype=float)
    g = np.zeros(m) if g0 is None else np.array(g0, dtype=float)
    tol = settings.marginal_tol
    err = math.inf
    it = 0
    checkpoint = math.inf
    stalled = False
    while it < settings.max_inner_iters and not stalled:
        # exact log-domain sweep: every row and column keeps a representable entry
        f = lam * (logp - logsumexp((g[None, :] - C) / lam, axis=1))
        g = lam * (logq - logsumexp((f[:, None] - C) / lam, axis=0))
        it += 1
        K = np.exp((f[:, None] + g[None, :] - C) / lam)
        a = np.ones(n)
        b = np.ones(m)
        err = float(np.max(np.abs(K.sum(axis=1) - p)))
        if callback is not None:
            callback(K)
        if err <= tol:
            break
        while it < settings.max_inner_iters:
            it += 1
            Kb = K @ b
            if not np.all(Kb > 0):
                break
            a = p / Kb
            Ka = K.T @ a
            if not np.all(Ka > 0):
                break
            b = q / Ka
            err = float(np.max(np.abs(a * (K @ b) - p)))
            if callback is not None:
                callback(a[:, None] * K * b[None, :])
            if err <= tol:
                break
            if max(np.max(np.abs(np.log(a))), np.max(np.abs(np.log(b)))) > _ABSORB:
                break
            if stall_window and it % stall_window == 0:
                if err > _STALL_RATIO * checkpoint:
                    stalled = True
                    break
                checkpoint = err
        with np.errstate(divide="ignore"):
            la = np.log(a)
            lb = np.log(b)
        if not (np.all(np.isfinite(la)) and np.all(np.isfinite(lb))):
            # a scaling hit zero; fall back to the last exact sweep
            continue
        f = f + lam * la
        g = g + lam * lb
        if err <= tol:
            break
    return _finish(C, p, q, lam, f, g) + (it,)


def _finish(C, p, q, lam, f, g):
    G = np.exp((f[:, None] + g[None, :] - C) / lam)
    bad_r = np.flatnonzero(~(G.sum(axis=1) > 0))
    if bad_r.size:
        raise NumericalFailureError(f"Sinkhorn plan row {int(bad_r[0])} vanished")
    bad_c = np.flatnonzero(~(G.sum(axis=0) > 0))
    if bad_c.size:
        raise NumericalFailureError(f"Sinkhorn plan column {int(bad_c[0])} vanished")
    err = float(max(np.max(np.abs(G.sum(axis=1) - p)), np.max(np.abs(G.sum(axis=0) - q))))
    return G, err, (f, g)


def _newton_direction(G, r, c, rhs):
    """Solve ``[[diag r, G], [G^T, diag c]] d = rhs``; None if both solvers fail."""
    from scipy.sparse.linalg import LinearOperator, cg

    n, m = G.shape
    if n + m <= _DENSE_NEWTON:
        H = np.block([[np.diag(r), G], [G.T, np.diag(c)]])
        try:
            return np.linalg.lstsq(H, rhs, rcond=1e-13)[0]
        except np.linalg.LinAlgError:
            logger.debug("dense Newton solve failed; trying conjugate gradients")

    def hess(v):
        return np.concatenate([r * v[:n] + G @ v[n:], G.T @ v[:n] + c * v[n:]])

    H = LinearOperator((n + m, n + m), matvec=hess, dtype=float)
    diag = np.maximum(np.concatenate([r, c]), 1e-300)
    M = LinearOperator((n + m, n + m), matvec=lambda v: v / diag, dtype=float)
    d, _ = cg(H, rhs, rtol=1e-10, maxiter=10 * (n + m), M=M)
    return d if np.all(np.isfinite(d)) else None


def _newton_polish(C, p, q, lam, f, g, tol, max_steps=60):
    """Newton ascent on the entropic dual, started from potentials ``(f, g)``.

    Sinkhorn slows to a crawl when the plan splits into blocks joined by
    tiny entries; Newton steps move mass across such links directly.  The
    Hessian system is solved directly for small problems and by
    Jacobi-preconditioned conjugate gradients otherwise.
    """
    n, m = C.shape

    def dual(f, g):
        z = (f[:, None] + g[None, :] - C) / lam
        # trial steps may overshoot; an infinite value is rejected by the line search
        with np.errstate(over="ignore"):
            return float(f @ p + g @ q - lam * np.exp(z).sum()), z

    val, z = dual(f, g)
    steps = 0
    for steps in range(1, max_steps + 1):
        G = np.exp(z)
        r = G.sum(axis=1)
        c = G.sum(axis=0)
        res = np.concatenate([r - p, c - q])
        if np.max(np.abs(res)) <= tol:
            break

        d = _newton_direction(G, r, c, -lam * res)
        if d is None:
            break
        t = 1.0
        slope = float(-res @ d)  # directional derivative of the dual
        while t > 1e-10:
            nf, ng = f + t * d[:n], g + t * d[n:]
            nval, nz = dual(nf, ng)
            if np.isfinite(nval) and nval >= val + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        f, g, val, z = nf, ng, nval, nz
    return f, g, steps


def _epsilon_scaling(C, p, q, lam, settings, factor=0.5):
    """Cold-start potentials for a small ``lam``.

    Solves loosely along ``lam_s = lam / factor**s`` from a regularization
    comparable to the cost range down to ``2 * lam``, warm-starting each
    stage from the previous one.
    """
    spread = float(np.ptp(C))
    lams = []
    cur = lam / factor
    while cur < spread:
        lams.append(cur)
        cur /= factor
    f = g = None
    total = 0
    budget = max(1, settings.max_inner_iters // 10)
    for stage_lam in reversed(lams):
        loose = SinkhornSettings(stage_lam, budget, max(settings.marginal_tol, 1e-4))
        _, _, (f, g), it = _log_stabilized(C, p, q, stage_lam, loose, f, g, stall_window=_STALL_WINDOW)
        total += it
    return f, g, total


def sinkhorn_solve(C, p, q, settings=None, init=None, callback=None):
    """Entropic OT plan ``diag(a) exp(-C / lam) diag(b)``.

    Parameters
    ----------
    C : CostMatrix or array_like, shape (n, m)
    p, q : Histogram or array_like
        Row and column marginals.
    settings : SinkhornSettings, optional
    init : tuple of arrays, optional
        Dual potentials ``(f, g)`` in cost units (as stored on a previous
        result's ``potentials``) used to warm-start the scaling.
    callback : callable, optional
        Called with each intermediate plan; used for diagnostics only.

    Returns
    -------
    Coupling
        ``converged`` is false when ``max_inner_iters`` was reached before
        the max-norm marginal residual fell below ``marginal_tol``.

    Notes
    -----
    Plain scaling is used while every kernel entry stays above 1e-300;
    otherwise the log-stabilized variant runs.
    """
    settings = settings or SinkhornSettings()
    Cm = _as_cost(C)
    p = _as_hist(p)
    q = _as_hist(q)
    n, m = Cm.shape
    if (n, m) != (len(p), len(q)):
        raise InvalidInputError(f"cost shape {Cm.shape} does not match marginals ({len(p)}, {len(q)})")
    lam = float(settings.lam)
    pm, qm = p.mass, q.mass
    if np.any(pm == 0) or np.any(qm == 0):
        # zero-mass points carry no plan; solve on the support and re-embed
        rows = np.flatnonzero(pm > 0)
        cols = np.flatnonzero(qm > 0)
        sub_init = None
        if init is not None:
            sub_init = (np.asarray(init[0])[rows], np.asarray(init[1])[cols])
        sub = sinkhorn_solve(
            Cm[np.ix_(rows, cols)], pm[rows] / pm[rows].sum(), qm[cols] / qm[cols].sum(),
            settings, init=sub_init,
        )
        G = np.zeros((n, m))
        G[np.ix_(rows, cols)] = sub.gamma
        f = np.zeros(n)
        g = np.zeros(m)
        f[rows], g[cols] = sub.potentials
        return Coupling(G, p, q, sub.converged, sub.n_iter, (f, g), settings.marginal_tol)

    shift = Cm.min(axis=1, keepdims=True)
    use_log = float(np.max(Cm - shift)) / lam > _UNDERFLOW
    if use_log:
        if init is not None:
            f0, g0 = init
            pre = 0
        else:
            f0, g0, pre = _epsilon_scaling(Cm, pm, qm, lam, settings)
        G, err, (f, g), it = _log_stabilized(
            Cm, pm, qm, lam, settings, f0, g0, callback, stall_window=_STALL_WINDOW
        )
        it += pre
    else:
        # row shifts only rescale a; the plan is unchanged
        K = np.exp(-(Cm - shift) / lam)
        b0 = None
        if init is not None:
            g0 = np.asarray(init[1], dtype=float)
            b0 = np.maximum(np.exp((g0 - g0.max()) / lam), 1e-300)
        G, err, it, (a, b) = _plain_scaling(K, pm, qm, settings, b0=b0, callback=callback)
        f = lam * np.log(a) + shift[:, 0]
        g = lam * np.log(b)
    if err > settings.marginal_tol:
        f, g, steps = _newton_polish(Cm, pm, qm, lam, f, g, settings.marginal_tol)
        G, err, _ = _finish(Cm, pm, qm, lam, f, g)
        it += steps
    converged = err <= settings.marginal_tol
    if not converged:
        logger.debug("Sinkhorn stopped after %d iterations with residual %.3g", it, err)
    return Coupling(G, p, q, converged, it, (f, g), settings.marginal_tol)


def exact_ot_small(C, p, q):
    """Exact (unregularized) OT for test-scale problems, ``n * m <= 64``.

    Square problems with uniform marginals are solved by enumerating all
    permutation plans (the extreme points of the Birkhoff polytope); other
    tiny problems go through a dense linear program.
    """
    Cm = _as_cost(C)
    p = _as_hist(p)
    q = _as_hist(q)
    n, m = Cm.shape
    if (n, m) != (len(p), len(q)):
        raise InvalidInputError("cost shape does not match marginals")
    if n * m > 64:
        raise InvalidInputError(f"instance too large for exact_ot_small ({n}x{m} > 64 cells)")
    uniform = n == m and np.allclose(p.mass, 1.0 / n, atol=1e-12) and np.allclose(q.mass, 1.0 / m, atol=1e-12)
    if uniform:
        best, best_perm = math.inf, None
        rows = np.arange(n)
        for perm in itertools.permutations(range(n)):
            c = Cm[rows, perm].sum()
            if c < best:
                best, best_perm = c, perm
        G = np.zeros((n, m))
        G[rows, best_perm] = 1.0 / n
        return Coupling(G, p, q)
    return _linprog_ot(Cm, p, q)


def _linprog_ot(Cm, p, q):
    from scipy.optimize import linprog

    n, m = Cm.shape
    A_rows = np.kron(np.eye(n), np.ones((1, m)))
    A_cols = np.kron(np.ones((1, n)), np.eye(m))
    A = np.vstack([A_rows, A_cols])
    b = np.concatenate([p.mass, q.mass])
    res = linprog(Cm.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        raise NumericalFailureError(f"linear program failed: {res.message}")
    G = np.maximum(res.x.reshape(n, m), 0.0)
    return Coupling(G, p, q, tol=1e-8)


def exact_ot(C, p, q):
    """Exact OT at benchmark scale.

    Uniform square problems reduce to a linear assignment; anything else is
    solved as a dense linear program (kept to ``n * m <= 40000``).
    """
    Cm = _as_cost(C)
    p = _as_hist(p)
    q = _as_hist(q)
    n, m = Cm.shape
    if n == m and np.allclose(p.mass, 1.0 / n) and np.allclose(q.mass, 1.0 / m):
        from scipy.optimize import linear_sum_assignment

        r, c = linear_sum_assignment(Cm)
        G = np.zeros((n, m))
        G[r, c] = 1.0 / n
        return Coupling(G, p, q)
    if n * m > 40000:
        raise InvalidInputError(f"exact_ot: {n}x{m} problem too large for the dense LP")
    return _linprog_ot(Cm, p, q)
