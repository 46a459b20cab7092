"""
Optimal transport with a latent global linear map.

The solver alternates between an entropic OT step for the coupling (cost
``|x_i - P y_j|^2``) and a closed-form update of ``P`` over a Schatten
ball, while the entropic regularization is annealed geometrically from
``lambda0`` down to ``lambda_min``.
"""

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .core import (
    Coupling,
    InvalidInputError,
    InvarianceBall,
    LinearMap,
    NumericalFailureError,
    PointSet,
    SingularInputError,
    schatten_norm,
)
from .procrustes import optimal_map_in_ball, random_feasible_map
from .sinkhorn import SinkhornSettings, entropy, pairwise_sq_dist, sinkhorn_solve, transport_cost

__all__ = [
    "Enforcement",
    "SolverConfig",
    "TraceRecord",
    "SolveTrace",
    "AlignmentResult",
    "solve",
    "whiteness_check",
    "whiten_pointset",
    "whitening_matrix",
    "regularized_objective",
    "nuclear_objective",
]

logger = logging.getLogger(__name__)

WHITENESS_TOL = 1e-8


class Enforcement(enum.Enum):
    """Which simplifying condition licenses the bilinear objective.

    ``ANGLE_PRESERVING``: every map in the ball preserves inner products,
    which holds for the unit spectral ball.  ``WHITENED``: the target point
    set satisfies ``Y diag(q)^2 Y^T = I``.
    """

    ANGLE_PRESERVING = "angle-preserving"
    WHITENED = "whitened"


@dataclass(frozen=True)
class SolverConfig:
    ball: InvarianceBall
    lambda0: float = 1.0
    decay: float = 0.95
    lambda_min: float = 1e-3
    outer_max_iters: int = 300
    outer_tol: float = 1e-6
    sinkhorn: SinkhornSettings = field(default_factory=SinkhornSettings)
    seed: int = 0
    enforcement: Optional[Enforcement] = None
    restarts: int = 1
    screen_iters: int = 20

    def __post_init__(self):
        if not (self.lambda0 > 0 and self.lambda_min > 0):
            raise InvalidInputError("lambda0 and lambda_min must be positive")
        if self.lambda_min > self.lambda0:
            raise InvalidInputError(f"lambda_min {self.lambda_min} exceeds lambda0 {self.lambda0}")
        if not (0 < self.decay < 1):
            raise InvalidInputError(f"decay must lie in (0, 1), got {self.decay}")
        if int(self.outer_max_iters) < 1 or int(self.restarts) < 1:
            raise InvalidInputError("outer_max_iters and restarts must be >= 1")
        if int(self.screen_iters) < 1:
            raise InvalidInputError("screen_iters must be >= 1")
        if not (self.outer_tol > 0):
            raise InvalidInputError("outer_tol must be positive")
        enf = self.enforcement
        if enf is None:
            enf = Enforcement.ANGLE_PRESERVING if self.ball.is_spectral else Enforcement.WHITENED
        object.__setattr__(self, "enforcement", Enforcement(enf))

    def lambda_schedule(self, n):
        """First ``n`` values of ``lam_{t+1} = max(lam_t * decay, lambda_min)``."""
        out = []
        lam = self.lambda0
        for _ in range(n):
            out.append(lam)
            lam = max(lam * self.decay, self.lambda_min)
        return out

    def as_dict(self):
        return {
            "p": self.ball.label(),
            "radius": self.ball.radius,
            "dim": self.ball.dim,
            "lambda0": self.lambda0,
            "decay": self.decay,
            "lambda_min": self.lambda_min,
            "outer_max_iters": self.outer_max_iters,
            "outer_tol": self.outer_tol,
            "sinkhorn_max_iters": self.sinkhorn.max_inner_iters,
            "marginal_tol": self.sinkhorn.marginal_tol,
            "seed": self.seed,
            "enforcement": self.enforcement.value,
            "restarts": self.restarts,
            "screen_iters": self.screen_iters,
        }


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    lam: float
    objective: float
    regularized_objective: float
    delta_P: float
    delta_Gamma: float
    sinkhorn_iters: int
    sinkhorn_converged: bool

    FIELDS = (
        "iteration", "lam", "objective", "regularized_objective",
        "delta_P", "delta_Gamma", "sinkhorn_iters", "sinkhorn_converged",
    )

    def as_row(self):
        return [getattr(self, k) for k in self.FIELDS]


@dataclass
class SolveTrace:
    """Append-only per-iteration history of a solve."""

    records: list = field(default_factory=list)

    def append(self, rec):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    @property
    def lambdas(self):
        return self.column("lam")

    @property
    def objectives(self):
        return self.column("objective")


@dataclass(frozen=True)
class AlignmentResult:
    gamma: Coupling
    map: LinearMap
    trace: SolveTrace
    converged: bool
    restart: int = 0


def whitening_matrix(Y):
    """``S^{-1/2}`` for ``S = Y diag(q)^2 Y^T``."""
    if not isinstance(Y, PointSet):
        Y = PointSet(Y)
    Yq = Y.data * Y.weights.mass[None, :]
    S = Yq @ Yq.T
    w, V = np.linalg.eigh(S)
    if w[-1] <= 0 or w[0] <= 1e-12 * w[-1]:
        raise SingularInputError(
            f"cannot whiten: eigenvalues of Y diag(q)^2 Y^T span [{w[0]:.3g}, {w[-1]:.3g}]"
        )
    return (V / np.sqrt(w)) @ V.T


def whiten_pointset(Y):
    """Return ``S^{-1/2} Y`` so that ``Y' diag(q)^2 Y'^T = I``."""
    if not isinstance(Y, PointSet):
        Y = PointSet(Y)
    W = whitening_matrix(Y)
    return PointSet(W @ Y.data, Y.weights)


def whiteness_check(Y, tol=WHITENESS_TOL):
    """Return ``(is_white, residual)`` with residual ``||Y diag(q)^2 Y^T - I||_F``."""
    if not isinstance(Y, PointSet):
        Y = PointSet(Y)
    Yq = Y.data * Y.weights.mass[None, :]
    res = float(np.linalg.norm(Yq @ Yq.T - np.eye(Y.dim)))
    return res <= tol, res


def _data(Z):
    return Z.data if isinstance(Z, PointSet) else np.asarray(Z, dtype=float)


def _gamma(G):
    return G.gamma if isinstance(G, Coupling) else np.asarray(G, dtype=float)


def _matrix(P):
    return P.matrix if isinstance(P, LinearMap) else np.asarray(P, dtype=float)


def regularized_objective(X, Y, gamma, P, lam):
    """``<G, X^T P Y> + lam * H(G)``."""
    Xd, Yd, G, Pm = _data(X), _data(Y), _gamma(gamma), _matrix(P)
    if G.shape != (Xd.shape[1], Yd.shape[1]):
        raise InvalidInputError("coupling shape does not match the point sets")
    return float(np.vdot(Xd @ G, Pm @ Yd)) + lam * entropy(G)


def nuclear_objective(X, Y, gamma):
    """Nuclear norm of ``X G Y^T``, the value of the p = inf inner problem."""
    Xd, Yd, G = _data(X), _data(Y), _gamma(gamma)
    return schatten_norm(Xd @ G @ Yd.T, 1)


def _check_inputs(X, Y, cfg):
    if X.dim != Y.dim:
        raise InvalidInputError(f"dimension mismatch: source d={X.dim}, target d={Y.dim}")
    if cfg.ball.dim != X.dim:
        raise InvalidInputError(f"ball dimension {cfg.ball.dim} != data dimension {X.dim}")
    if cfg.enforcement is Enforcement.WHITENED:
        ok, res = whiteness_check(Y, tol=max(WHITENESS_TOL, 1e-10 * Y.dim))
        if not ok:
            raise InvalidInputError(
                f"target is not whitened (residual {res:.3g}); call whiten_pointset first"
            )
    elif not (cfg.ball.is_spectral and abs(cfg.ball.radius - 1.0) <= 1e-12):
        raise InvalidInputError(
            "angle-preserving enforcement needs the unit spectral ball; "
            "use WHITENED with a whitened target for other balls"
        )


def solve(X, Y, cfg, init_map=None, callback: Optional[Callable] = None):
    """Jointly estimate a coupling and a linear map aligning ``Y`` to ``X``.

    Parameters
    ----------
    X, Y : PointSet
        Source (d x n) and target (d x m) point sets with their weights.
    cfg : SolverConfig
    init_map : array_like or LinearMap, optional
        Starting map; must lie in ``cfg.ball``.  A seeded random boundary
        map is drawn when omitted.
    callback : callable, optional
        Receives each :class:`TraceRecord` as it is produced.

    Returns
    -------
    AlignmentResult
        ``map`` sends target points into source space (``P @ Y ~ X``).

    Notes
    -----
    With ``cfg.restarts = R > 1``, start ``r`` uses the map drawn with seed
    ``cfg.seed + r`` (start 0 is ``init_map`` when given).  All starts are
    annealed together for the first ``cfg.screen_iters`` iterations; the one
    with the lowest transport cost is then annealed again from ``lambda0``
    with the full-precision inner solver, and only that run is traced.
    """
    if not isinstance(X, PointSet):
        X = PointSet(X)
    if not isinstance(Y, PointSet):
        Y = PointSet(Y)
    _check_inputs(X, Y, cfg)
    if init_map is not None:
        init_map = LinearMap(_matrix(init_map), cfg.ball).matrix
    R = int(cfg.restarts)
    if R == 1:
        P0 = init_map if init_map is not None else random_feasible_map(X.dim, cfg.ball, cfg.seed).matrix
        return _anneal(X, Y, cfg, P0, callback=callback)
    starts = [
        init_map if (r == 0 and init_map is not None)
        else random_feasible_map(X.dim, cfg.ball, cfg.seed + r).matrix
        for r in range(R)
    ]
    best = _screen(X, Y, cfg, np.stack(starts))
    logger.info("screening kept start %d of %d", best, R)
    return _anneal(X, Y, cfg, starts[best], callback=callback, restart=best)


# entries of the batched screening kernel processed at once
_SCREEN_BLOCK = 4_000_000
# screening only ranks starts, so its inner solves are cheaper than the real ones
_SCREEN_TOL = 1e-4
_SCREEN_INNER = 200
# re-absorb the scalings into the potentials once they leave [1e-50, 1e50]
_ABSORB = 50 * math.log(10)


def _screen(X, Y, cfg, starts):
    """Anneal a batch of starting maps for ``cfg.screen_iters`` iterations.

    Returns the index of the start with the lowest transport cost at the
    end of screening.
    """
    n, m = X.size, Y.size
    n_iters = min(int(cfg.screen_iters), int(cfg.outer_max_iters))
    lams = cfg.lambda_schedule(n_iters)
    x2 = np.sum(X.data**2, axis=0)
    chunk = max(1, _SCREEN_BLOCK // (n * m))
    costs = []
    for lo in range(0, starts.shape[0], chunk):
        costs.append(_screen_block(X.data, Y.data, x2, X.weights.mass, Y.weights.mass,
                                   cfg, starts[lo:lo + chunk], lams))
    return int(np.argmin(np.concatenate(costs)))


def _batched_sq_dist(Xd, x2, PY):
    C = x2[None, :, None] + np.sum(PY**2, axis=1)[:, None, :] - 2 * np.matmul(Xd.T[None], PY)
    return np.maximum(C, 0.0, out=C)


def _screen_block(Xd, Yd, x2, p, q, cfg, P, lams):
    """Transport cost of each start after annealing through ``lams``.

    Each inner solve starts with one exact log-domain sweep from the
    previous potentials, then runs plain scaling on the kernel with those
    potentials absorbed, so sharp kernels do not underflow.
    """
    ball = cfg.ball
    tol = max(cfg.sinkhorn.marginal_tol, _SCREEN_TOL)
    B = P.shape[0]
    n, m = Xd.shape[1], Yd.shape[1]
    logp, logq = np.log(p)[None, :, None], np.log(q)[None, None, :]
    g = np.zeros((B, 1, m))
    obj = np.zeros(B)
    for lam in lams:
        C = _batched_sq_dist(Xd, x2, P @ Yd)
        f = lam * (logp - logsumexp((g - C) / lam, axis=2, keepdims=True))
        g = lam * (logq - logsumexp((f - C) / lam, axis=1, keepdims=True))
        K = np.exp((f + g - C) / lam)
        a = np.ones((B, n, 1))
        b = np.ones((B, m, 1))
        for it in range(_SCREEN_INNER):
            a = p[None, :, None] / (K @ b)
            b = q[None, :, None] / (np.swapaxes(K, 1, 2) @ a)
            if it % 10 == 9:
                if np.max(np.abs(a * (K @ b) - p[None, :, None])) <= tol:
                    break
                if np.max(np.abs(np.log(a))) > _ABSORB or np.max(np.abs(np.log(b))) > _ABSORB:
                    f = f + lam * np.log(a)
                    g = g + lam * np.swapaxes(np.log(b), 1, 2)
                    K = np.exp((f + g - C) / lam)
                    a.fill(1.0)
                    b.fill(1.0)
        g = g + lam * np.swapaxes(np.log(b), 1, 2)
        G = a * K * np.swapaxes(b, 1, 2)
        Ms = Xd[None] @ G @ Yd.T[None]
        P = np.stack([optimal_map_in_ball(M, ball).P.matrix for M in Ms])
        obj = np.sum(G * _batched_sq_dist(Xd, x2, P @ Yd), axis=(1, 2))
    return obj


def _anneal(X, Y, cfg, P, callback=None, restart=0):
    """Run the annealed alternation from map ``P``."""
    ball = cfg.ball
    Xd, Yd = X.data, Y.data
    p, q = X.weights, Y.weights
    # floor for the relative-change test when the cost itself approaches 0
    scale = float(p.mass @ np.sum(Xd**2, axis=0) + q.mass @ np.sum(Yd**2, axis=0))
    floor = 1e-9 * max(scale, np.finfo(float).tiny)

    trace = SolveTrace()
    lam = cfg.lambda0
    prev_obj = prev_lam = None
    prev_G = None
    warm = None
    coupling = None
    converged = False
    for t in range(int(cfg.outer_max_iters)):
        C = pairwise_sq_dist(Xd, P @ Yd)
        try:
            coupling = sinkhorn_solve(C, p, q, cfg.sinkhorn.with_lambda(lam), init=warm)
        except NumericalFailureError as exc:
            raise NumericalFailureError(f"outer iteration {t} (lambda={lam:.4g}): {exc}") from exc
        warm = coupling.potentials
        G = coupling.gamma
        P_new = optimal_map_in_ball(Xd @ G @ Yd.T, ball).P.matrix
        PY = P_new @ Yd
        obj = transport_cost(G, pairwise_sq_dist(Xd, PY))
        reg = float(np.vdot(Xd @ G, PY)) + lam * entropy(G)
        dP = float(np.linalg.norm(P_new - P))
        dG = float(np.linalg.norm(G - prev_G)) if prev_G is not None else float(np.linalg.norm(G))
        rec = TraceRecord(t, lam, obj, reg, dP, dG, coupling.n_iter, coupling.converged)
        trace.append(rec)
        if callback is not None:
            callback(rec)
        P, prev_G = P_new, G
        if (
            prev_obj is not None
            and lam == cfg.lambda_min
            and prev_lam == cfg.lambda_min
            and abs(obj - prev_obj) <= cfg.outer_tol * max(abs(prev_obj), floor)
        ):
            converged = True
            break
        prev_obj, prev_lam = obj, lam
        lam = max(lam * cfg.decay, cfg.lambda_min)
    if not converged:
        logger.info("solve stopped at outer_max_iters=%d without converging", cfg.outer_max_iters)
    return AlignmentResult(coupling, LinearMap(P, ball), trace, converged and coupling.converged, restart)
