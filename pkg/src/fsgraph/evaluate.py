"""Multi-task evaluation harness.

Runs T independent episodes and reports mean accuracy with a 95%
confidence interval. Task t samples its episode with seed
derive_seed(seed, 2t) and trains with seed derive_seed(seed, 2t+1), so
results are a pure function of (dataset, config, seed) and in particular
independent of how many worker processes the tasks are spread over.
Sweeps over k and the ablation grid reuse the same global seed, which
pairs the episodes across rows.

ci95 is 1.96 * sample standard deviation (ddof=1) / sqrt(T), with
ci95 = 0 for T = 1 by convention.

Report serialization is diff-stable: "key: value" header lines followed
by one "task_index<TAB>accuracy" line per task, floats printed with
roundtrip repr. Wall time is tracked in memory but never serialized,
so identical runs produce identical bytes.
"""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .classifier import TaskTrainConfig, predict, train_stage1, train_stage2
from .data import Episode, EpisodeSpec, FeatureDataset, sample_episode
from .errors import DataFormatError
from .graph import PropagationConfig, build_task_graph, propagate
from .rng import derive_seed, make_rng

ABLATIONS = ("full", "no_distill", "no_aug", "no_both")


@dataclass(frozen=True)
class GraphConfig:
    m: int = 10
    gamma: int = 3
    alpha_init: float = 1.0
    top_m_rule: str = "union"


@dataclass(frozen=True)
class EvalConfig:
    spec: EpisodeSpec
    tasks: int
    seed: int = 0
    ablation: str = "full"
    graph: GraphConfig = field(default_factory=GraphConfig)
    train: TaskTrainConfig = field(default_factory=TaskTrainConfig)

    def __post_init__(self) -> None:
        if self.tasks < 1:
            raise ValueError("tasks must be at least 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(
                f"ablation must be one of {ABLATIONS}, got {self.ablation!r}"
            )


@dataclass
class EvalReport:
    """Aggregate accuracy over one evaluation run.

    wall_time and episode_seeds are in-memory diagnostics only; the
    serialized form deliberately omits them to stay byte-stable across
    identical reruns.
    """

    mean_accuracy: float
    ci95: float
    per_task: list[float]
    config_echo: dict[str, str]
    wall_time: float = 0.0
    episode_seeds: list[int] = field(default_factory=list)


def solve_episode(
    features: FeatureDataset, episode: Episode, cfg: EvalConfig
) -> tuple[np.ndarray, float]:
    """Run the full per-task pipeline on one episode.

    Builds the similarity graph over support-then-query rows, trains
    stage 1 (and stage 2 unless ablated away), and classifies the query
    rows of the propagation at the frozen final alpha. Returns
    (predicted episode labels, accuracy).
    """
    v = episode.vertex_matrix(features)
    graph = build_task_graph(v, cfg.graph.m, cfg.graph.top_m_rule)
    prop = PropagationConfig(alpha=cfg.graph.alpha_init, gamma=cfg.graph.gamma)
    train_cfg = cfg.train
    if cfg.ablation in ("no_aug", "no_both"):
        train_cfg = replace(train_cfg, copies=0)
    theta0, _ = train_stage1(graph, episode, train_cfg, prop)
    if cfg.ablation in ("no_distill", "no_both"):
        theta1 = theta0
    else:
        theta1, _ = train_stage2(graph, episode, theta0, train_cfg, prop)
    frozen = PropagationConfig(alpha=theta1.alpha, gamma=cfg.graph.gamma)
    v_new = propagate(v, graph.e_norm, frozen)
    nk = episode.spec.n_way * episode.spec.k_shot
    preds = predict(theta1, v_new[nk:])
    return preds, float(np.mean(preds == episode.query_labels))


def run_episode(
    features: FeatureDataset, episode: Episode, cfg: EvalConfig
) -> float:
    """Accuracy of the pipeline on one already-sampled episode."""
    return solve_episode(features, episode, cfg)[1]


def _eval_task(args: tuple[FeatureDataset, EvalConfig, int]) -> float:
    features, cfg, index = args
    episode = sample_episode(features, cfg.spec, derive_seed(cfg.seed, 2 * index))
    task_cfg = replace(
        cfg, train=replace(cfg.train, seed=derive_seed(cfg.seed, 2 * index + 1))
    )
    return run_episode(features, episode, task_cfg)


def evaluate(
    features: FeatureDataset,
    cfg: EvalConfig,
    workers: int = 1,
    extra_echo: dict[str, str] | None = None,
) -> EvalReport:
    """Run cfg.tasks seeded episodes and aggregate their accuracies.

    workers > 1 fans tasks out to a process pool; because every task is a
    pure function of its derived seeds, the report is identical for any
    worker count.
    """
    if workers < 1:
        raise ValueError("workers must be at least 1")
    start = time.perf_counter()
    jobs = [(features, cfg, i) for i in range(cfg.tasks)]
    if workers == 1:
        accs = [_eval_task(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            accs = list(pool.map(_eval_task, jobs))
    mean = float(np.mean(accs))
    if cfg.tasks == 1:
        ci95 = 0.0
    else:
        ci95 = float(1.96 * np.std(accs, ddof=1) / np.sqrt(cfg.tasks))
    echo = _config_echo(cfg)
    if extra_echo:
        echo.update(extra_echo)
    return EvalReport(
        mean_accuracy=mean,
        ci95=ci95,
        per_task=[float(a) for a in accs],
        config_echo=echo,
        wall_time=time.perf_counter() - start,
        episode_seeds=[derive_seed(cfg.seed, 2 * i) for i in range(cfg.tasks)],
    )


def sweep_k(
    features: FeatureDataset,
    cfg: EvalConfig,
    k_list: list[int],
    workers: int = 1,
) -> list[EvalReport]:
    """One evaluation per shot count, sharing features, seed, and config."""
    if not k_list:
        raise ValueError("k_list must not be empty")
    reports = []
    for k in k_list:
        spec = replace(cfg.spec, k_shot=k)
        reports.append(evaluate(features, replace(cfg, spec=spec), workers))
    return reports


def ablation_grid(
    features: FeatureDataset, cfg: EvalConfig, workers: int = 1
) -> list[EvalReport]:
    """Evaluate all four ablation variants with paired episode seeds."""
    return [
        evaluate(features, replace(cfg, ablation=name), workers)
        for name in ABLATIONS
    ]


def _config_echo(cfg: EvalConfig) -> dict[str, str]:
    train = cfg.train
    return {
        "n_way": str(cfg.spec.n_way),
        "k_shot": str(cfg.spec.k_shot),
        "q_query": str(cfg.spec.q_query),
        "seed": str(cfg.seed),
        "ablation": cfg.ablation,
        "m": str(cfg.graph.m),
        "gamma": str(cfg.graph.gamma),
        "alpha_init": repr(cfg.graph.alpha_init),
        "top_m_rule": cfg.graph.top_m_rule,
        "lambda_mix": repr(train.lambda_mix),
        "copies": str(train.copies),
        "beta": repr(train.beta),
        "kl_direction": "reverse" if train.kl_reverse else "forward",
        "stage1_epochs": str(train.stage1_epochs),
        "stage2_epochs": str(train.stage2_epochs),
        "lr1": repr(train.lr1),
        "lr2": repr(train.lr2),
        "adam_beta1": repr(train.adam_beta1),
        "adam_beta2": repr(train.adam_beta2),
        "adam_eps": repr(train.adam_eps),
    }


# --- synthetic benchmark --------------------------------------------------


_NOISE_STD = 0.1


def clustered_features(
    n_classes: int = 5,
    per_class: int = 100,
    dim: int = 64,
    separation: float = 10.0,
    seed: int = 0,
) -> FeatureDataset:
    """Gaussian clusters whose difficulty is set by a scale-free ratio.

    Class c sits at (separation * _NOISE_STD) * e_c (scaled standard basis
    vector) with isotropic noise of std _NOISE_STD, so `separation` is the
    centroid-to-origin distance in noise-std units and pairwise centroid
    distances are sqrt(2) * separation noise-stds. The absolute scale is
    pinned at _NOISE_STD so full vectors stay near unit norm at desk
    dimensions; difficulty depends only on the ratio (the graph is
    cosine-based and scale-invariant). separation=0 degenerates to pure
    labeled noise, useful as a chance-level control.
    """
    if n_classes < 1 or per_class < 1 or dim < 1:
        raise ValueError("n_classes, per_class, and dim must be positive")
    if n_classes > dim:
        raise ValueError("centroid construction needs n_classes <= dim")
    if separation < 0.0:
        raise ValueError("separation must be non-negative")
    rng = make_rng(seed)
    blocks = []
    for c in range(n_classes):
        centroid = np.zeros(dim)
        centroid[c] = separation * _NOISE_STD
        noise = rng.standard_normal((per_class, dim)) * _NOISE_STD
        blocks.append(centroid + noise)
    return FeatureDataset(
        dim=dim,
        class_ids=np.repeat(np.arange(n_classes), per_class),
        vectors=np.vstack(blocks),
    )


# --- report serialization --------------------------------------------------


def serialize_report(report: EvalReport) -> str:
    """Render a report as diff-stable text; see the module docstring."""
    lines = [
        f"mean_accuracy: {report.mean_accuracy!r}",
        f"ci95: {report.ci95!r}",
        f"tasks: {len(report.per_task)}",
    ]
    lines.extend(f"{key}: {value}" for key, value in report.config_echo.items())
    lines.extend(f"{i}\t{acc!r}" for i, acc in enumerate(report.per_task))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> EvalReport:
    """Inverse of serialize_report (wall time and seeds are not stored)."""
    mean = ci95 = None
    tasks = None
    echo: dict[str, str] = {}
    per_task: list[float] = []
    for line in text.splitlines():
        if not line:
            continue
        if "\t" in line and line[0].isdigit():
            index_text, acc_text = line.split("\t")
            if int(index_text) != len(per_task):
                raise DataFormatError("task lines out of order")
            per_task.append(float(acc_text))
            continue
        key, sep, value = line.partition(": ")
        if not sep:
            raise DataFormatError(f"malformed report line {line!r}")
        if key == "mean_accuracy":
            mean = float(value)
        elif key == "ci95":
            ci95 = float(value)
        elif key == "tasks":
            tasks = int(value)
        else:
            echo[key] = value
    if mean is None or ci95 is None or tasks is None:
        raise DataFormatError("report header incomplete")
    if tasks != len(per_task):
        raise DataFormatError(
            f"report claims {tasks} tasks but lists {len(per_task)}"
        )
    return EvalReport(
        mean_accuracy=mean, ci95=ci95, per_task=per_task, config_echo=echo
    )
