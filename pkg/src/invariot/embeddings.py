"""
Word-embedding alignment: text-format ingestion, two-stage solving, CSLS
retrieval and precision@k evaluation.

Embedding files are UTF-8 text with a header ``V d`` followed by rows
``token f1 ... fd`` in frequency order.  Dictionary files hold one
``source target`` pair per line; repeated source tokens accumulate
acceptable translations.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import InvalidInputError, InvarianceBall, PointSet
from .solver import SolverConfig, solve

__all__ = [
    "EmbeddingFormatError",
    "EmbeddingTable",
    "BilingualDictionary",
    "TwoStageConfig",
    "TwoStageResult",
    "load_embeddings",
    "load_dictionary",
    "unit_normalize",
    "align_embeddings",
    "two_stage_solve",
    "csls_neighbors",
    "cosine_neighbors",
    "translate",
    "evaluate_precision",
    "rotated_vocabulary",
]

logger = logging.getLogger(__name__)

CSLS_K = 10
# similarity rows computed per block in retrieval
_BLOCK = 1024


class EmbeddingFormatError(InvalidInputError):
    """Malformed embedding or dictionary file; the message names the line."""


@dataclass(frozen=True)
class EmbeddingTable:
    """Tokens in file (frequency) order and their vectors as columns of a d x V matrix."""

    tokens: tuple
    vectors: np.ndarray
    duplicates_skipped: int = field(default=0, compare=False)

    def __post_init__(self):
        toks = tuple(str(t) for t in self.tokens)
        V = np.array(self.vectors, dtype=float)
        if V.ndim != 2:
            raise InvalidInputError(f"vectors must be a d x V matrix, got shape {V.shape}")
        if V.shape[1] != len(toks):
            raise InvalidInputError(f"{len(toks)} tokens but {V.shape[1]} vectors")
        if len(set(toks)) != len(toks):
            raise InvalidInputError("duplicate tokens")
        if not np.all(np.isfinite(V)):
            bad = toks[int(np.flatnonzero(~np.all(np.isfinite(V), axis=0))[0])]
            raise InvalidInputError(f"non-finite vector for token {bad!r}")
        V.setflags(write=False)
        object.__setattr__(self, "tokens", toks)
        object.__setattr__(self, "vectors", V)

    @property
    def dim(self):
        return self.vectors.shape[0]

    @property
    def vocab_size(self):
        return self.vectors.shape[1]

    def head(self, k):
        """The ``k`` most frequent tokens."""
        k = int(k)
        return EmbeddingTable(self.tokens[:k], self.vectors[:, :k])

    def index(self):
        return {t: i for i, t in enumerate(self.tokens)}


def _decode(raw, path, lineno):
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EmbeddingFormatError(f"{path}:{lineno}: not valid UTF-8 ({exc.reason})") from None


def load_embeddings(path, max_vocab=None):
    """Read a text embedding file.

    Parameters
    ----------
    path : str or path-like
    max_vocab : int, optional
        Keep the first ``max_vocab`` distinct tokens (all when omitted).

    Returns
    -------
    EmbeddingTable
        Tokens repeated after their first occurrence are skipped; the count
        is stored in ``duplicates_skipped``.

    Raises
    ------
    EmbeddingFormatError
        Bad header, wrong number of values on a row, unparsable or
        non-finite numbers, or bytes that are not UTF-8.  The message carries
        the line number.
    """
    if max_vocab is not None and int(max_vocab) < 1:
        raise InvalidInputError("max_vocab must be positive")
    limit = math.inf if max_vocab is None else int(max_vocab)
    tokens, rows, seen = [], [], set()
    dups = 0
    with open(path, "rb") as fh:
        header = _decode(fh.readline(), path, 1).split()
        try:
            V, d = (int(x) for x in header)
        except ValueError:
            raise EmbeddingFormatError(f"{path}:1: header must be 'V d', got {' '.join(header)!r}") from None
        if V < 0 or d < 1:
            raise EmbeddingFormatError(f"{path}:1: invalid header sizes V={V}, d={d}")
        lineno = 1
        for lineno, raw in enumerate(fh, start=2):
            if len(tokens) >= limit:
                break
            line = _decode(raw, path, lineno)
            parts = line.split()
            if not parts:
                continue
            if len(parts) != d + 1:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected a token and {d} values, got {len(parts) - 1} values"
                )
            tok = parts[0]
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: unparsable number for token {tok!r}") from None
            if not np.all(np.isfinite(vec)):
                raise EmbeddingFormatError(f"{path}:{lineno}: non-finite value for token {tok!r}")
            if tok in seen:
                dups += 1
                continue
            seen.add(tok)
            tokens.append(tok)
            rows.append(vec)
    if not tokens:
        raise EmbeddingFormatError(f"{path}: no embedding rows")
    if dups:
        logger.warning("%s: skipped %d duplicate tokens", path, dups)
    return EmbeddingTable(tuple(tokens), np.array(rows).T, dups)


def unit_normalize(table):
    """Scale every vector to unit l2 norm; zero vectors are rejected by name."""
    norms = np.linalg.norm(table.vectors, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise InvalidInputError(f"zero vector for token {table.tokens[int(zero[0])]!r}")
    return EmbeddingTable(table.tokens, table.vectors / norms, table.duplicates_skipped)


@dataclass(frozen=True)
class BilingualDictionary:
    pairs: tuple
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pairs = tuple((str(s), str(t)) for s, t in self.pairs)
        idx = {}
        for s, t in pairs:
            idx.setdefault(s, set()).add(t)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "index", {s: frozenset(ts) for s, ts in idx.items()})

    @property
    def sources(self):
        """Distinct source tokens in first-appearance order."""
        return list(dict.fromkeys(s for s, _ in self.pairs))

    @classmethod
    def identity(cls, tokens):
        return cls(tuple((t, t) for t in tokens))


def load_dictionary(path):
    """Read ``source target`` pairs, one per line; blank lines are ignored."""
    pairs = []
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = _decode(raw, path, lineno).split()
            if not parts:
                continue
            if len(parts) != 2:
                raise EmbeddingFormatError(f"{path}:{lineno}: expected 'source target', got {len(parts)} fields")
            pairs.append((parts[0], parts[1]))
    if not pairs:
        raise EmbeddingFormatError(f"{path}: empty dictionary")
    return BilingualDictionary(tuple(pairs))


@dataclass(frozen=True)
class TwoStageConfig:
    """Sizes for the two-stage solve.

    Stage 1 anneals on the ``stage1_size`` most frequent words; stage 2
    starts from its map on the ``stage2_vocab`` most frequent words with the
    regularization held at ``base.lambda_min`` for at most
    ``stage2_max_iters`` iterations.
    """

    base: SolverConfig
    stage1_size: int = 5000
    stage2_max_iters: int = 50
    stage2_vocab: int = 20000

    def __post_init__(self):
        if int(self.stage1_size) < 1 or int(self.stage2_vocab) < 1 or int(self.stage2_max_iters) < 1:
            raise InvalidInputError("stage sizes and stage2_max_iters must be positive")
        if self.stage1_size > self.stage2_vocab:
            raise InvalidInputError(
                f"stage1_size {self.stage1_size} exceeds stage2_vocab {self.stage2_vocab}"
            )

    def as_dict(self):
        return {
            "stage1_size": self.stage1_size,
            "stage2_vocab": self.stage2_vocab,
            "stage2_max_iters": self.stage2_max_iters,
            **self.base.as_dict(),
        }


@dataclass(frozen=True)
class TwoStageResult:
    stage1: object
    stage2: object


def two_stage_solve(X, Y, cfg, callback=None):
    """Solve on the first ``stage1_size`` columns, then refine on ``stage2_vocab``.

    ``X`` and ``Y`` are d x V matrices with columns in frequency order.
    ``callback(stage, record)`` receives every trace record (stage 1 or 2).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[0] != Y.shape[0]:
        raise InvalidInputError(f"dimension mismatch: source d={X.shape[0]}, target d={Y.shape[0]}")
    V = min(X.shape[1], Y.shape[1])
    if cfg.stage2_vocab > V:
        raise InvalidInputError(f"stage2_vocab {cfg.stage2_vocab} exceeds the vocabulary size {V}")
    k, N = int(cfg.stage1_size), int(cfg.stage2_vocab)
    def staged(stage):
        return None if callback is None else (lambda rec: callback(stage, rec))

    first = solve(PointSet(X[:, :k]), PointSet(Y[:, :k]), cfg.base, callback=staged(1))
    logger.info("stage 1 (%d words): %d iterations, cost %.6g", k, len(first.trace), first.trace.records[-1].objective)
    if N == k:
        return TwoStageResult(first, first)
    stage2_cfg = replace(cfg.base, lambda0=cfg.base.lambda_min, outer_max_iters=cfg.stage2_max_iters, restarts=1)
    second = solve(PointSet(X[:, :N]), PointSet(Y[:, :N]), stage2_cfg, init_map=first.map, callback=staged(2))
    logger.info("stage 2 (%d words): %d iterations, cost %.6g", N, len(second.trace), second.trace.records[-1].objective)
    return TwoStageResult(first, second)


def align_embeddings(src, tgt, cfg):
    """Two-stage alignment of ``tgt`` onto ``src``.

    Returns the stage 2 :class:`AlignmentResult`; its map sends target
    vectors into the source space and applies to any target token,
    including those outside the solved vocabulary.
    """
    if src.dim != tgt.dim:
        raise InvalidInputError(f"dimension mismatch: source d={src.dim}, target d={tgt.dim}")
    if cfg.base.ball.dim != src.dim:
        raise InvalidInputError(f"ball dimension {cfg.base.ball.dim} != embedding dimension {src.dim}")
    return two_stage_solve(src.vectors, tgt.vectors, cfg).stage2


def _unit(Z, name):
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise InvalidInputError(f"{name} must be a d x k matrix")
    dev = np.max(np.abs(np.linalg.norm(Z, axis=0) - 1.0), initial=0.0)
    if dev > 1e-6:
        raise InvalidInputError(f"{name} columns must be unit norm (max deviation {dev:.3g})")
    return Z


def _mean_topk_sim(A, B, K):
    """For each column of ``A``, mean cosine to its ``K`` nearest columns of ``B``."""
    out = np.empty(A.shape[1])
    for lo in range(0, A.shape[1], _BLOCK):
        S = A[:, lo:lo + _BLOCK].T @ B
        top = np.partition(S, S.shape[1] - K, axis=1)[:, -K:]
        out[lo:lo + _BLOCK] = top.mean(axis=1)
    return out


def _ranked(S, topk):
    if topk >= S.shape[1]:
        return np.argsort(-S, axis=1, kind="stable")
    part = np.argpartition(-S, topk - 1, axis=1)[:, :topk]
    vals = np.take_along_axis(S, part, axis=1)
    order = np.lexsort((part, -vals), axis=1)
    return np.take_along_axis(part, order, axis=1)


def csls_neighbors(queries, keys, K=CSLS_K, topk=1, query_index=None):
    """Top ``topk`` keys per query under CSLS.

    ``score(x, y) = 2 cos(x, y) - r_keys(x) - r_queries(y)`` where
    ``r_keys(x)`` is the mean cosine of query ``x`` to its ``K`` nearest keys
    and ``r_queries(y)`` that of key ``y`` to its ``K`` nearest queries.

    Parameters
    ----------
    queries : ndarray, shape (d, a)
    keys : ndarray, shape (d, b)
        Both with unit columns.
    K, topk : int
    query_index : array_like of int, optional
        Only rank these queries (the neighbourhood terms still use all
        queries).

    Returns
    -------
    ndarray of int, shape (len(query_index) or a, topk)
        Key indices in descending score; ties go to the lower index.
    """
    Q = _unit(queries, "queries")
    Kt = _unit(keys, "keys")
    if Q.shape[0] != Kt.shape[0]:
        raise InvalidInputError("queries and keys differ in dimension")
    K = int(K)
    if K < 1:
        raise InvalidInputError("K must be >= 1")
    if K > Kt.shape[1] or K > Q.shape[1]:
        raise InvalidInputError(f"K={K} exceeds the number of keys ({Kt.shape[1]}) or queries ({Q.shape[1]})")
    topk = int(topk)
    if not 1 <= topk <= Kt.shape[1]:
        raise InvalidInputError(f"topk must lie in [1, {Kt.shape[1]}]")
    rows = np.arange(Q.shape[1]) if query_index is None else np.asarray(query_index, dtype=int)
    r_keys = _mean_topk_sim(Q[:, rows], Kt, K)
    r_queries = _mean_topk_sim(Kt, Q, K)
    out = np.empty((rows.size, topk), dtype=int)
    for lo in range(0, rows.size, _BLOCK):
        sel = rows[lo:lo + _BLOCK]
        S = 2 * (Q[:, sel].T @ Kt) - r_keys[lo:lo + _BLOCK, None] - r_queries[None, :]
        out[lo:lo + _BLOCK] = _ranked(S, topk)
    return out


def cosine_neighbors(queries, keys, topk=1, query_index=None):
    """Top ``topk`` keys per query by plain cosine similarity."""
    Q = _unit(queries, "queries")
    Kt = _unit(keys, "keys")
    rows = np.arange(Q.shape[1]) if query_index is None else np.asarray(query_index, dtype=int)
    out = np.empty((rows.size, int(topk)), dtype=int)
    for lo in range(0, rows.size, _BLOCK):
        out[lo:lo + _BLOCK] = _ranked(Q[:, rows[lo:lo + _BLOCK]].T @ Kt, int(topk))
    return out


def translate(src, tgt, P, query_tokens=None, K=CSLS_K, topk=10, method="csls"):
    """Retrieve target tokens for source tokens after mapping targets by ``P``.

    Mapped targets are renormalized before retrieval.  Returns
    ``(query_tokens, ranked)`` with ``ranked[i]`` the target indices for
    ``query_tokens[i]``; unknown query tokens are dropped.
    """
    Pm = getattr(P, "matrix", P)
    keys = Pm @ tgt.vectors
    keys = keys / np.linalg.norm(keys, axis=0)
    pos = src.index()
    if query_tokens is None:
        query_tokens = list(src.tokens)
    query_tokens = [t for t in query_tokens if t in pos]
    idx = np.array([pos[t] for t in query_tokens], dtype=int)
    if method == "csls":
        ranked = csls_neighbors(src.vectors, keys, K=K, topk=topk, query_index=idx)
    elif method == "cosine":
        ranked = cosine_neighbors(src.vectors, keys, topk=topk, query_index=idx)
    else:
        raise InvalidInputError(f"unknown retrieval method {method!r}")
    return query_tokens, ranked


def evaluate_precision(retrieved, dictionary, src_tokens, tgt_tokens, ks=(1, 5, 10)):
    """Precision@k over the dictionary's source tokens.

    Parameters
    ----------
    retrieved : array_like of int, shape (len(src_tokens), >= max(ks))
        Ranked target indices; row ``i`` belongs to ``src_tokens[i]``.
    dictionary : BilingualDictionary
    src_tokens, tgt_tokens : sequence of str
    ks : iterable of int

    Returns
    -------
    dict
        ``{"P@k": value, ..., "evaluated": n, "skipped": s}`` where skipped
        counts dictionary source tokens absent from ``src_tokens``.
    """
    retrieved = np.asarray(retrieved, dtype=int)
    ks = sorted({int(k) for k in ks})
    if not ks or ks[0] < 1:
        raise InvalidInputError("ks must be positive integers")
    if retrieved.ndim != 2 or retrieved.shape[0] != len(src_tokens):
        raise InvalidInputError("retrieved must have one row per source token")
    if retrieved.shape[1] < ks[-1]:
        raise InvalidInputError(f"need at least {ks[-1]} retrieved candidates, got {retrieved.shape[1]}")
    row_of = {t: i for i, t in enumerate(src_tokens)}
    hits = {k: 0 for k in ks}
    evaluated = skipped = 0
    for s in dictionary.sources:
        i = row_of.get(s)
        if i is None:
            skipped += 1
            continue
        evaluated += 1
        accept = dictionary.index[s]
        cands = [tgt_tokens[j] for j in retrieved[i, :ks[-1]]]
        first = next((r for r, c in enumerate(cands) if c in accept), None)
        for k in ks:
            if first is not None and first < k:
                hits[k] += 1
    out = {f"P@{k}": (hits[k] / evaluated if evaluated else 0.0) for k in ks}
    out["evaluated"] = evaluated
    out["skipped"] = skipped
    return out


def rotated_vocabulary(V=3000, d=50, extra=1000, seed=0):
    """Synthetic source/target tables related by a random orthogonal map.

    Source vectors have a decaying spectrum and skewed coordinates so the
    rotation is identifiable; the target holds the rotated vectors of the
    same tokens in the same order.  ``extra`` further tokens are appended
    to both (ranks ``V..V+extra``) for out-of-sample checks.  All vectors
    are unit norm.  Returns ``(src, tgt, Q)`` with ``tgt = Q @ src``.
    """
    rng = np.random.default_rng(seed)
    total = int(V) + int(extra)
    scales = np.geomspace(1.0, 0.2, d)
    Z = rng.standard_exponential((d, total)) - 1.0
    X = scales[:, None] * Z
    X /= np.linalg.norm(X, axis=0)
    U, _, Wt = np.linalg.svd(rng.standard_normal((d, d)))
    Q = U @ Wt
    tokens = tuple(f"w{i}" for i in range(total))
    return EmbeddingTable(tokens, X), EmbeddingTable(tokens, Q @ X), Q


def default_embedding_config(d, stage1_size=5000, stage2_vocab=20000, **solver_kw):
    """Two-stage configuration with the unit spectral ball in dimension ``d``."""
    base = SolverConfig(ball=InvarianceBall("inf", d), **solver_kw)
    return TwoStageConfig(base=base, stage1_size=stage1_size, stage2_vocab=stage2_vocab)
