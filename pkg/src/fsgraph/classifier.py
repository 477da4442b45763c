"""Per-task linear classifier trained in two stages on propagated features.

Stage 1 trains weights, bias, and the propagation self-loop scalar alpha
jointly with full-batch Adam on mean cross-entropy over the aggregated
support rows plus their mixup copies. Augmented rows are stored as
(base index, partner index, lambda) triples and re-materialized from the
freshly propagated features every step, so their gradients flow into
alpha as well.

Stage 2 freezes alpha, recomputes the propagated features once,
re-initializes weights and bias from a derived seed, and retrains against
a convex combination of ground-truth cross-entropy and a KL pull toward
the stage-1 model's (constant) soft predictions.

Gradients are analytic everywhere; the finite-difference suite in the
tests checks every one of them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Episode
from .errors import NumericError
from .graph import PropagationConfig, TaskGraph, propagate, propagate_alpha_grad
from .rng import make_rng

_PROB_FLOOR = 1e-300
# Stage-2 re-initialization stream: the stage seed XOR this constant.
_STAGE2_SALT = 0xD157111A770C0DE5


@dataclass
class ClassifierParams:
    """Linear head over propagated features, plus the self-loop scalar."""

    weight: np.ndarray  # (feature_dim, n_way)
    bias: np.ndarray    # (n_way,)
    alpha: float


@dataclass(frozen=True)
class TaskTrainConfig:
    lambda_mix: float = 0.95
    copies: int = 120
    beta: float = 0.5
    stage1_epochs: int = 11
    stage2_epochs: int = 1000
    lr1: float = 1e-2
    lr2: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    kl_reverse: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.lambda_mix <= 1.0:
            raise ValueError("lambda_mix must lie in (0, 1]")
        if self.copies < 0:
            raise ValueError("copies must be non-negative")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.lr1 <= 0.0 or self.lr2 <= 0.0 or self.adam_eps <= 0.0:
            raise ValueError("learning rates and adam_eps must be positive")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("adam betas must lie in [0, 1)")


# --- mixup ---------------------------------------------------------------


def mixup_pairs(n_rows: int, copies: int, seed: int) -> np.ndarray:
    """Partner indices for each (base row, copy), uniform over [0, n_rows)."""
    rng = make_rng(seed)
    return rng.integers(0, n_rows, size=n_rows * copies, dtype=np.int64)


def mixup_augment(
    v_support: np.ndarray,
    labels: np.ndarray,
    lambda_mix: float,
    copies: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Convex mixes of support rows with random partners, keeping base labels.

    Row i contributes `copies` mixes lambda*v_i + (1-lambda)*v_j with j
    drawn uniformly from all support rows (j = i allowed), laid out base
    row-major: output row i*copies + c is the c-th copy of base row i.
    lambda_mix=1 reproduces the base rows bitwise.
    """
    if not 0.0 < lambda_mix <= 1.0:
        raise ValueError("lambda_mix must lie in (0, 1]")
    if copies < 0:
        raise ValueError("copies must be non-negative")
    v_support = np.asarray(v_support, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = v_support.shape[0]
    base = np.repeat(np.arange(n), copies)
    partner = mixup_pairs(n, copies, seed)
    mixed = _materialize_mix(v_support, base, partner, lambda_mix)
    return mixed, labels[base]


def _materialize_mix(
    v: np.ndarray, base: np.ndarray, partner: np.ndarray, lam: float
) -> np.ndarray:
    if lam == 1.0:
        return v[base].copy()
    return lam * v[base] + (1.0 - lam) * v[partner]


# --- forward and losses ---------------------------------------------------


def forward(params: ClassifierParams, v: np.ndarray) -> np.ndarray:
    """Softmax class probabilities for one feature row."""
    return _probs(params.weight, params.bias, np.asarray(v, dtype=np.float64)[None, :])[0]


def _probs(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    z = x @ w + b
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def ce_loss(probs: np.ndarray, label: int) -> float:
    """Cross entropy -log p[label], floored against log(0)."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[0]:
        raise ValueError(f"label {label} out of range for {probs.shape[0]} classes")
    return float(-np.log(max(probs[label], _PROB_FLOOR)))


def kl_div(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) with 0 * log 0 = 0 and q floored against division blowup."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    mask = p > 0.0
    pm = p[mask]
    qm = np.maximum(q[mask], _PROB_FLOOR)
    return float(np.sum(pm * (np.log(pm) - np.log(qm))))


def distill_loss(
    params: ClassifierParams,
    teacher: ClassifierParams,
    v_rows: np.ndarray,
    labels: np.ndarray,
    beta: float,
    kl_reverse: bool = False,
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Mean of beta * CE(student, truth) + (1-beta) * KL(student, teacher).

    The loss is assembled row by row from forward/ce_loss/kl_div, so
    beta=1 agrees bitwise with the plain mean cross entropy over the same
    rows. The default direction is KL(student || teacher); kl_reverse
    swaps the arguments. Returns (loss, (d_weight, d_bias)), gradients
    for the student only (the teacher is a constant).
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    v_rows = np.asarray(v_rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    per_row = []
    for v, y in zip(v_rows, labels):
        p = forward(params, v)
        t = forward(teacher, v)
        kl = kl_div(t, p) if kl_reverse else kl_div(p, t)
        per_row.append(beta * ce_loss(p, int(y)) + (1.0 - beta) * kl)
    loss = float(np.mean(per_row))
    t_probs = _probs(teacher.weight, teacher.bias, v_rows)
    _, gw, gb = _distill_value_and_grads(
        params.weight, params.bias, t_probs, v_rows, labels, beta, kl_reverse
    )
    return loss, (gw, gb)


def _distill_value_and_grads(
    w: np.ndarray,
    b: np.ndarray,
    t_probs: np.ndarray,
    x: np.ndarray,
    labels: np.ndarray,
    beta: float,
    kl_reverse: bool,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Vectorized distillation objective and analytic student gradients."""
    m, n_way = x.shape[0], w.shape[1]
    p = _probs(w, b, x)
    log_p = np.log(np.maximum(p, _PROB_FLOOR))
    log_t = np.log(np.maximum(t_probs, _PROB_FLOOR))
    ce_rows = -log_p[np.arange(m), labels]
    onehot = np.zeros((m, n_way))
    onehot[np.arange(m), labels] = 1.0
    if kl_reverse:
        # KL(t || p): rows sum t (log t - log p); d/d_logits = p - t.
        kl_rows = np.where(t_probs > 0.0, t_probs * (log_t - log_p), 0.0).sum(axis=1)
        g_kl = p - t_probs
    else:
        # KL(p || t): d/d_logits_k = p_k (log p_k - log t_k - KL).
        kl_rows = np.where(p > 0.0, p * (log_p - log_t), 0.0).sum(axis=1)
        g_kl = p * (log_p - log_t - kl_rows[:, None])
    loss = float(np.mean(beta * ce_rows + (1.0 - beta) * kl_rows))
    g_logits = (beta * (p - onehot) + (1.0 - beta) * g_kl) / m
    return loss, x.T @ g_logits, g_logits.sum(axis=0)


# --- training -------------------------------------------------------------


class _Adam:
    """Bias-corrected Adam over a list of arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float, b1: float, b2: float, eps: float):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m += (1.0 - self.b1) * (g - m)
            v += (1.0 - self.b2) * (g * g - v)
            m_hat = m / (1.0 - self.b1**self.t)
            v_hat = v / (1.0 - self.b2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _stage1_step(
    v: np.ndarray,
    e_norm: np.ndarray,
    gamma: int,
    alpha: float,
    w: np.ndarray,
    b: np.ndarray,
    labels: np.ndarray,
    base: np.ndarray,
    partner: np.ndarray,
    lam: float,
) -> tuple[float, np.ndarray, np.ndarray, float]:
    """Stage-1 objective at given parameters: loss and grads (w, b, alpha).

    The objective is mean cross entropy over the propagated support rows
    followed by their re-materialized mixup copies. Query rows sit in the
    graph but contribute no loss terms, so they only shape the propagation.
    """
    nk = labels.shape[0]
    prop_cfg = PropagationConfig(alpha=float(alpha), gamma=gamma)
    v_new = propagate(v, e_norm, prop_cfg)
    sup = v_new[:nk]
    if base.size:
        x = np.vstack([sup, _materialize_mix(sup, base, partner, lam)])
        y = np.concatenate([labels, labels[base]])
    else:
        x = sup
        y = labels
    m, n_way = x.shape[0], w.shape[1]
    p = _probs(w, b, x)
    loss = float(np.mean(-np.log(np.maximum(p[np.arange(m), y], _PROB_FLOOR))))
    onehot = np.zeros((m, n_way))
    onehot[np.arange(m), y] = 1.0
    g_logits = (p - onehot) / m
    gw = x.T @ g_logits
    gb = g_logits.sum(axis=0)
    if gamma == 0:
        return loss, gw, gb, 0.0
    g_rows = g_logits @ w.T  # d(loss)/d(classifier input rows)
    upstream = np.zeros_like(v_new)
    upstream[:nk] += g_rows[:nk]
    if base.size:
        np.add.at(upstream, base, lam * g_rows[nk:])
        np.add.at(upstream, partner, (1.0 - lam) * g_rows[nk:])
    g_alpha = propagate_alpha_grad(v, e_norm, prop_cfg, upstream)
    return loss, gw, gb, g_alpha


def train_stage1(
    graph: TaskGraph,
    episode: Episode,
    cfg: TaskTrainConfig,
    prop: PropagationConfig,
) -> tuple[ClassifierParams, list[float]]:
    """Joint full-batch Adam on (weight, bias, alpha).

    The seeded generator first draws the Glorot weight matrix, then the
    mixup partner indices, so the whole stage is a pure function of
    (graph, episode, cfg, prop). Returns the trained parameters and the
    per-step loss trace.
    """
    n_way = episode.spec.n_way
    nk = n_way * episode.spec.k_shot
    labels = episode.support_labels
    dim = graph.v.shape[1]
    rng = make_rng(cfg.seed)
    w = _glorot(rng, dim, n_way)
    b = np.zeros(n_way)
    base = np.repeat(np.arange(nk), cfg.copies)
    partner = rng.integers(0, nk, size=nk * cfg.copies, dtype=np.int64)
    alpha = np.array(prop.alpha, dtype=np.float64)

    adam = _Adam([w, b, alpha], cfg.lr1, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    trace: list[float] = []
    for step in range(cfg.stage1_epochs):
        loss, gw, gb, g_alpha = _stage1_step(
            graph.v, graph.e_norm, prop.gamma, float(alpha), w, b,
            labels, base, partner, cfg.lambda_mix,
        )
        if not np.isfinite(loss):
            raise NumericError(f"stage-1 loss became {loss} at step {step}")
        adam.step([gw, gb, np.array(g_alpha)])
        trace.append(loss)
    return ClassifierParams(weight=w, bias=b, alpha=float(alpha)), trace


def train_stage2(
    graph: TaskGraph,
    episode: Episode,
    theta0: ClassifierParams,
    cfg: TaskTrainConfig,
    prop: PropagationConfig,
) -> tuple[ClassifierParams, list[float]]:
    """Self-distillation stage: fresh head pulled toward theta0's outputs.

    alpha stays frozen at theta0's value and the propagated features are
    computed once. Weights and bias restart from the stage seed XOR a
    fixed constant; the teacher's soft targets are computed once and held
    constant. Returns the distilled parameters and the per-step loss
    trace (stage2_epochs=0 returns the fresh initialization).
    """
    n_way = episode.spec.n_way
    nk = n_way * episode.spec.k_shot
    labels = episode.support_labels
    frozen = PropagationConfig(alpha=theta0.alpha, gamma=prop.gamma)
    sup = propagate(graph.v, graph.e_norm, frozen)[:nk]
    t_probs = _probs(theta0.weight, theta0.bias, sup)

    rng = make_rng(cfg.seed ^ _STAGE2_SALT)
    w = _glorot(rng, graph.v.shape[1], n_way)
    b = np.zeros(n_way)
    adam = _Adam([w, b], cfg.lr2, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    trace: list[float] = []
    for step in range(cfg.stage2_epochs):
        loss, gw, gb = _distill_value_and_grads(
            w, b, t_probs, sup, labels, cfg.beta, cfg.kl_reverse
        )
        if not np.isfinite(loss):
            raise NumericError(f"stage-2 loss became {loss} at step {step}")
        adam.step([gw, gb])
        trace.append(loss)
    return ClassifierParams(weight=w, bias=b, alpha=theta0.alpha), trace


def predict(params: ClassifierParams, v_rows: np.ndarray) -> np.ndarray:
    """Most likely episode label per row; ties go to the lowest label."""
    v_rows = np.asarray(v_rows, dtype=np.float64)
    probs = _probs(params.weight, params.bias, v_rows)
    return np.argmax(probs, axis=1)
