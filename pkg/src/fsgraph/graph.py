"""Per-task similarity graphs and trainable feature propagation.

Each episode's vertex matrix V (support rows first, then query rows) is
turned into a dense cosine-similarity matrix, sparsified so only the
strongest m neighbors per vertex survive, and symmetrically normalized.
Features are then smoothed by gamma rounds of

    W <- alpha * W + E @ W

which applies (alpha*I + E)^gamma without ever materializing the matrix
power. alpha is a scalar learned jointly with the task classifier, so the
exact derivative of any loss with respect to it is needed as well; see
propagate_alpha_grad.

Everything here is plain dense float64. Episode graphs top out at a few
hundred vertices, where dense beats any sparse representation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVectorError

log = logging.getLogger(__name__)

DEGREE_FLOOR = 1e-12


@dataclass(frozen=True)
class PropagationConfig:
    """Propagation knobs: self-loop weight alpha and round count gamma."""

    alpha: float = 1.0
    gamma: int = 3

    def __post_init__(self) -> None:
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if not isinstance(self.gamma, (int, np.integer)) or self.gamma < 0:
            raise ValueError("gamma must be a non-negative integer")


@dataclass(frozen=True)
class TaskGraph:
    """A built episode graph: raw features plus derived matrices."""

    v: np.ndarray        # (n, d) vertex features
    s: np.ndarray        # (n, n) sparsified similarity
    e_norm: np.ndarray   # (n, n) normalized adjacency
    degrees: np.ndarray  # (n,) row sums of s, floored at DEGREE_FLOOR
    m: int


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between two vectors, clamped into [-1, 1].

    Raises:
        ValueError: shape mismatch.
        DegenerateVectorError: either vector has zero norm.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"shape mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine of a zero-norm vector is undefined")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def build_similarity(v: np.ndarray) -> np.ndarray:
    """Pairwise cosine matrix with zero diagonal and exact symmetry.

    Each unordered pair is computed once and mirrored, so the result is
    bitwise equal to its transpose.

    Raises:
        DegenerateVectorError: some row of v has zero norm (the message
            names the first offending row).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("expected a 2-D vertex matrix")
    norms = np.linalg.norm(v, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise DegenerateVectorError(f"vertex row {bad[0]} has zero norm")
    unit = v / norms[:, None]
    gram = unit @ unit.T
    np.clip(gram, -1.0, 1.0, out=gram)
    upper = np.triu(gram, 1)
    return upper + upper.T


def sparsify_top_m(s: np.ndarray, m: int, rule: str = "union") -> np.ndarray:
    """Keep each entry only if it ranks in the top m of its row or column.

    Ranking is per row by value, ties broken toward the lower column
    index. Exact zeros are never candidates: a zero edge is no edge, so
    letting it occupy a top-m slot could only displace a real entry. With
    s symmetric, column ranks equal row ranks of the transpose, and the
    default union rule keeps entry (i, j) when j is in row i's top m or i
    is in row j's top m. rule="intersection" demands both. Either way the
    output stays exactly symmetric, and reapplying the operation with the
    same m is a no-op.

    m >= n-1 cannot prune anything and returns a copy unchanged.
    """
    s = np.asarray(s, dtype=np.float64)
    _check_square_symmetric(s, "sparsify_top_m")
    if rule not in ("union", "intersection"):
        raise ValueError(f"unknown sparsify rule {rule!r}")
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ValueError("m must be a positive integer")
    n = s.shape[0]
    if m >= n - 1:
        log.debug("sparsify_top_m: m=%d >= n-1=%d, nothing to prune", m, n - 1)
        return s.copy()
    ranked = s.copy()
    np.fill_diagonal(ranked, -np.inf)
    ranked[s == 0.0] = -np.inf
    # Stable sort on the negated values: ties fall back to ascending
    # column index, the documented deterministic order.
    order = np.argsort(-ranked, axis=1, kind="stable")[:, :m]
    rows = np.repeat(np.arange(n), m)
    cols = order.ravel()
    keep = np.zeros((n, n), dtype=bool)
    keep[rows, cols] = ranked[rows, cols] > -np.inf
    keep = (keep | keep.T) if rule == "union" else (keep & keep.T)
    return np.where(keep, s, 0.0)


def normalize_adjacency(
    s: np.ndarray, allow_negative: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric degree normalization D^{-1/2} S D^{-1/2}.

    Degrees are row sums of s floored at DEGREE_FLOOR, so an isolated
    vertex yields a zero row instead of NaNs. Returns (e_norm, degrees)
    with e_norm bitwise symmetric and zero on the diagonal.

    By default a negative entry is a contract violation: similarities
    feeding normalization are expected non-negative, and silently
    clipping would hide an upstream bug. The task-graph pipeline keeps
    raw similarity values through sparsification, where top-m selection
    all but guarantees positive survivors; it passes allow_negative=True,
    under which small negative entries are tolerated and only a negative
    row sum (an actually meaningless degree) is an error.

    Raises:
        ValueError: s is not square/symmetric/zero-diagonal; or it has a
            negative entry (allow_negative=False); or a negative degree
            (allow_negative=True).
    """
    s = np.asarray(s, dtype=np.float64)
    _check_square_symmetric(s, "normalize_adjacency")
    if not allow_negative and np.any(s < 0.0):
        i, j = np.argwhere(s < 0.0)[0]
        raise ValueError(
            f"normalize_adjacency: negative entry s[{i},{j}]={s[i, j]!r}"
        )
    raw_degrees = s.sum(axis=1)
    if np.any(raw_degrees < 0.0):
        i = int(np.argmin(raw_degrees))
        raise ValueError(
            f"normalize_adjacency: negative degree {raw_degrees[i]!r} at vertex {i}"
        )
    degrees = np.maximum(raw_degrees, DEGREE_FLOOR)
    inv_sqrt = 1.0 / np.sqrt(degrees)
    # outer(d, d) is bitwise symmetric (IEEE multiplication commutes), so
    # the elementwise product with symmetric s stays bitwise symmetric.
    e_norm = s * np.outer(inv_sqrt, inv_sqrt)
    return e_norm, degrees


def build_task_graph(v: np.ndarray, m: int = 10, rule: str = "union") -> TaskGraph:
    """Similarity, sparsification, and normalization in one step.

    Similarity values are kept raw through sparsification (top-m selection
    favors large positives on its own); normalization tolerates small
    negative survivors and errors only if a row sum goes negative.
    """
    v = np.asarray(v, dtype=np.float64)
    s = sparsify_top_m(build_similarity(v), m, rule)
    e_norm, degrees = normalize_adjacency(s, allow_negative=True)
    return TaskGraph(v=v, s=s, e_norm=e_norm, degrees=degrees, m=m)


def propagate(v: np.ndarray, e_norm: np.ndarray, cfg: PropagationConfig) -> np.ndarray:
    """Apply (alpha*I + E)^gamma to the feature rows of v.

    Computed as gamma successive updates W <- alpha*W + E @ W; gamma=0
    returns a copy of v unchanged.
    """
    v = np.asarray(v, dtype=np.float64)
    e_norm = np.asarray(e_norm, dtype=np.float64)
    _check_propagate_shapes(v, e_norm)
    w = v.copy()
    for _ in range(cfg.gamma):
        w = cfg.alpha * w + e_norm @ w
    return w


def propagate_alpha_grad(
    v: np.ndarray,
    e_norm: np.ndarray,
    cfg: PropagationConfig,
    upstream: np.ndarray,
) -> float:
    """Derivative of <upstream, propagate(v)> with respect to alpha.

    d/d_alpha (alpha*I + E)^gamma = gamma * (alpha*I + E)^(gamma-1) because
    the factors commute, so the gradient is the Frobenius inner product of
    the upstream matrix with (alpha*I + E)^(gamma-1) V, scaled by gamma.
    gamma=0 makes propagation the identity and the gradient exactly 0.
    """
    v = np.asarray(v, dtype=np.float64)
    e_norm = np.asarray(e_norm, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    _check_propagate_shapes(v, e_norm)
    if upstream.shape != v.shape:
        raise ValueError(
            f"upstream shape {upstream.shape} must match v shape {v.shape}"
        )
    if cfg.gamma == 0:
        return 0.0
    w = v.copy()
    for _ in range(cfg.gamma - 1):
        w = cfg.alpha * w + e_norm @ w
    return float(cfg.gamma * np.sum(upstream * w))


def _check_square_symmetric(s: np.ndarray, who: str) -> None:
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"{who}: expected a square matrix, got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError(f"{who}: matrix entries must be finite")
    if not np.array_equal(s, s.T):
        raise ValueError(f"{who}: matrix must be exactly symmetric")
    if np.any(np.diagonal(s) != 0.0):
        raise ValueError(f"{who}: diagonal must be zero")


def _check_propagate_shapes(v: np.ndarray, e_norm: np.ndarray) -> None:
    if v.ndim != 2:
        raise ValueError("expected a 2-D vertex matrix")
    n = v.shape[0]
    if e_norm.shape != (n, n):
        raise ValueError(
            f"adjacency shape {e_norm.shape} does not match {n} vertex rows"
        )
