"""Pretraining, the fine-tuning methods, and seeded experiment runs.

Methods:

``TL``          fine-tune the dense head, extractor frozen.
``F_SVD``       replace the head by its plain truncated-SVD factors, fine-tune both.
``OURS``        same, but factors come from the SVD weighted by the group-neutralized
                Fisher row importance of the pretrained head.
``RETRAIN_EO``  ``TL`` with an equalized-odds penalty in the objective.
``RETRAIN_DP``  ``TL`` with a demographic-parity penalty.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import fisher, lowrank
from .data import Dataset, SplitSpec, split, split_indices, standardize_like, synth_transfer
from .errors import ConfigError, GroupEmptyError
from .metrics import FairnessReport, evaluate
from .model import LossConfig, NeuralNet, init_net, train

log = logging.getLogger(__name__)

METHODS = ("TL", "F_SVD", "OURS", "RETRAIN_EO", "RETRAIN_DP")
FAIRNESS = ("none", "EO", "DP")
INTENSITY_GRID = (0.1, 0.5, 0.9)
PRETRAIN_SPLIT = (0.8, 0.1, 0.1)  # train / unused validation / held-out test


@dataclass(frozen=True)
class PretrainConfig:
    hidden: tuple = (32, 16)
    fairness: str = "none"
    intensity: float = 0.0
    lr: float = 0.05
    epochs: int = 30
    batch: int = 64

    def __post_init__(self):
        if self.fairness not in FAIRNESS:
            raise ConfigError(f"pretrain fairness must be one of {FAIRNESS}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ConfigError("pretrain intensity must lie in [0, 1]")
        if self.lr <= 0 or self.epochs < 0 or self.batch < 1:
            raise ConfigError("pretrain lr > 0, epochs >= 0, batch >= 1 required")


@dataclass(frozen=True)
class RunConfig:
    """One fine-tuning run. ``rank=None`` picks the rank by ``energy``."""

    method: str = "OURS"
    rank: int | None = None
    energy: float = lowrank.DEFAULT_ENERGY
    alpha: float = 0.5
    regularizer_intensity: float = 0.0
    lr: float = 0.01
    epochs: int = 30
    batch: int = 64
    seed: int = 0
    pretrain_fairness: str = "none"
    pretrain_intensity: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0.5 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in [0.5, 1), got {self.alpha}")
        for name in ("regularizer_intensity", "pretrain_intensity"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.pretrain_fairness not in FAIRNESS:
            raise ConfigError(f"pretrain_fairness must be one of {FAIRNESS}")
        if self.rank is not None and self.rank < 1:
            raise ConfigError("rank must be >= 1")
        if not 0.0 < self.energy <= 1.0:
            raise ConfigError("energy must lie in (0, 1]")
        if self.lr <= 0 or self.epochs < 0 or self.batch < 1:
            raise ConfigError("lr > 0, epochs >= 0, batch >= 1 required")

    @property
    def constraint(self) -> str:
        """Metric whose change is reported as ``bias_delta``."""
        if self.method == "RETRAIN_EO":
            return "EO"
        if self.method == "RETRAIN_DP":
            return "DP"
        if self.pretrain_fairness != "none":
            return self.pretrain_fairness
        return "DP"

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    config: RunConfig
    pretrain_report: FairnessReport
    finetune_report: FairnessReport
    trainable_params: int
    rank: int | None
    bias_metric: str
    bias_delta: float
    loss_history: list = field(default_factory=list)
    wall_time: float = 0.0
    floored_rows: int = 0

    def record(self) -> dict:
        """JSON-ready result without wall time (kept out so reruns are byte-identical)."""
        return {
            "config": self.config.as_dict(),
            "pretrain": self.pretrain_report.as_dict(),
            "finetune": self.finetune_report.as_dict(),
            "trainable_params": self.trainable_params,
            "rank": self.rank,
            "bias_metric": self.bias_metric,
            "bias_delta": self.bias_delta,
            "floored_rows": self.floored_rows,
            "final_loss": self.loss_history[-1] if self.loss_history else None,
        }


@dataclass(frozen=True)
class TaskData:
    """Pretraining train/test rows plus the new task's train/validation/test splits.

    ``pretrain_test`` is held out from pretraining and measures the
    pretrained model on its own distribution; ``test`` measures every model
    on the new task.
    """

    pretrain: Dataset
    pretrain_test: Dataset
    train: Dataset
    validation: Dataset
    test: Dataset


def bias_delta_report(pre: FairnessReport, post: FairnessReport, constraint: str) -> float:
    if constraint not in ("EO", "DP"):
        raise ConfigError(f"constraint must be EO or DP, got {constraint!r}")
    return post.bias(constraint) - pre.bias(constraint)


def pretrain(train_ds: Dataset, cfg: PretrainConfig = PretrainConfig(), seed: int = 0) -> NeuralNet:
    """Train a fresh MLP; a fairness penalty is added when ``cfg.fairness`` is set.

    Single-group data is accepted without a penalty (the per-group Fisher
    analysis trains one model per group).
    """
    for g in (1, 2) if cfg.fairness != "none" else ():
        if not np.any(train_ds.s == g):
            raise GroupEmptyError(f"pretraining data has no rows with s={g}")
    net = init_net([train_ds.n_features, *cfg.hidden, 2], seed=seed)
    loss_cfg = LossConfig(cfg.fairness, cfg.intensity if cfg.fairness != "none" else 0.0)
    net, _ = train(net, train_ds, loss_cfg, lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch, seed=seed)
    return net


def _check_width(pretrained: NeuralNet, ds: Dataset):
    if pretrained.in_dim != ds.n_features:
        raise ConfigError(f"model expects {pretrained.in_dim} features, task data has {ds.n_features}")


def _rank_for(w, imp, cfg: RunConfig) -> int:
    if cfg.rank is not None:
        return cfg.rank
    return lowrank.select_rank(w, imp, cfg.energy)


def neutralized_importance(pretrained: NeuralNet, task_train: Dataset, alpha: float = 0.5):
    """Blend of the two per-group row importances of the pretrained head."""
    i1, i2 = fisher.group_importances(pretrained, task_train)
    return fisher.neutralize(i1, i2) if alpha == 0.5 else fisher.blend(i1, i2, alpha)


def factorized_head(pretrained: NeuralNet, imp, cfg: RunConfig):
    """Frozen-extractor copy of ``pretrained`` with a two-layer low-rank head."""
    base = pretrained.freeze_extractor()
    last = base.layers[-1]
    r = _rank_for(last.weight, imp, cfg)
    head = lowrank.weighted_factorize(last.weight, last.bias, imp, r)
    net = NeuralNet(base.layers[:-1] + list(lowrank.build_replacement_layers(head)), head_size=2)
    return net, head


def _fit(net, task_train, cfg: RunConfig, loss_cfg=LossConfig()):
    return train(net, task_train, loss_cfg, lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch, seed=cfg.seed)


def finetune_tl(pretrained, task_train, cfg: RunConfig):
    _check_width(pretrained, task_train)
    net = pretrained.freeze_extractor()
    net, hist = _fit(net, task_train, cfg)
    return net, {"rank": None, "history": hist, "floored_rows": 0}


def finetune_retrain_fair(pretrained, task_train, cfg: RunConfig):
    _check_width(pretrained, task_train)
    kind = {"RETRAIN_EO": "EO", "RETRAIN_DP": "DP"}.get(cfg.method)
    if kind is None:
        raise ConfigError(f"finetune_retrain_fair needs RETRAIN_EO or RETRAIN_DP, got {cfg.method}")
    net = pretrained.freeze_extractor()
    net, hist = _fit(net, task_train, cfg, LossConfig(kind, cfg.regularizer_intensity))
    return net, {"rank": None, "history": hist, "floored_rows": 0}


def finetune_fsvd(pretrained, task_train, cfg: RunConfig):
    _check_width(pretrained, task_train)
    net, head = factorized_head(pretrained, None, cfg)
    net, hist = _fit(net, task_train, cfg)
    return net, {"rank": head.rank, "history": hist, "floored_rows": 0}


def finetune_ours(pretrained, task_train, cfg: RunConfig):
    _check_width(pretrained, task_train)
    imp = neutralized_importance(pretrained, task_train, cfg.alpha)
    net, head = factorized_head(pretrained, imp, cfg)
    net, hist = _fit(net, task_train, cfg)
    return net, {"rank": head.rank, "history": hist, "floored_rows": head.floored_rows}


FINETUNERS = {
    "TL": finetune_tl,
    "F_SVD": finetune_fsvd,
    "OURS": finetune_ours,
    "RETRAIN_EO": finetune_retrain_fair,
    "RETRAIN_DP": finetune_retrain_fair,
}


def run_method(pretrained: NeuralNet, task: TaskData, cfg: RunConfig, pretrain_report=None):
    """Fine-tune with ``cfg.method`` and report fairness before and after.

    The pretrained model is scored on ``task.pretrain_test`` unless a report
    is passed in; the fine-tuned model is scored on ``task.test``.
    """
    start = time.perf_counter()
    if pretrain_report is None:
        pretrain_report = evaluate(pretrained, task.pretrain_test)
    net, info = FINETUNERS[cfg.method](pretrained, task.train, cfg)
    report = evaluate(net, task.test)
    metric = cfg.constraint
    result = RunResult(
        config=cfg,
        pretrain_report=pretrain_report,
        finetune_report=report,
        trainable_params=net.trainable_params(),
        rank=info["rank"],
        bias_metric=metric,
        bias_delta=bias_delta_report(pretrain_report, report, metric),
        loss_history=info["history"],
        wall_time=time.perf_counter() - start,
        floored_rows=info["floored_rows"],
    )
    return net, result


# ---------------------------------------------------------------------------
# data preparation


@dataclass(frozen=True)
class SyntheticTask:
    """Synthetic pretraining partition plus a new task, both from one seed."""

    n: int = 5000
    d: int = 10
    bias_strength: float = 0.6
    task_fraction: float = 0.4
    shift: float = 0.0
    rotation: float = 0.0
    split: tuple = (0.6, 0.2, 0.2)
    pretrain_split: tuple = PRETRAIN_SPLIT

    def build(self, seed: int) -> TaskData:
        pre, task = synth_transfer(self.n, self.d, self.bias_strength, seed,
                                   self.task_fraction, self.shift, self.rotation)
        p_tr, _, p_te = split(pre, SplitSpec(*self.pretrain_split, seed=seed))
        tr, va, te = split(task, SplitSpec(*self.split, seed=seed))
        return TaskData(p_tr, p_te, tr, va, te)


def task_from_dataset(ds: Dataset, seed: int, pretrain_fraction=0.6, split_fractions=(0.6, 0.2, 0.2),
                      pretrain_split=PRETRAIN_SPLIT) -> TaskData:
    """Random stratified pretrain/task partition of a real dataset, then splits.

    Features are re-standardized with the pretraining train split's statistics.
    """
    pre_idx, task_idx = _two_way(ds, pretrain_fraction, seed)
    pre = ds.take(pre_idx, f"{ds.name}/pretrain")
    task = ds.take(task_idx, f"{ds.name}/task")
    p_tr, _, p_te = split(pre, SplitSpec(*pretrain_split, seed=seed))
    tr, va, te = split(task, SplitSpec(*split_fractions, seed=seed))
    return TaskData(*standardize_like(p_tr, p_te, tr, va, te))


def _two_way(ds: Dataset, fraction: float, seed: int):
    spec = SplitSpec(fraction, (1 - fraction) / 2, (1 - fraction) / 2, seed=seed)
    a, b, c = split_indices(ds.y, ds.s, spec)
    return a, np.sort(np.concatenate([b, c]))


# ---------------------------------------------------------------------------
# seeded grids


def pretrain_setting(cfg: RunConfig):
    """``(fairness, intensity)`` of the pretrained model a run starts from."""
    if cfg.pretrain_fairness == "none":
        return ("none", 0.0)
    return (cfg.pretrain_fairness, cfg.pretrain_intensity)


def _seed_runs(task_source, pretrain_cfg: PretrainConfig, configs, seed, load_pretrained=None):
    task = task_source(seed)
    cache = {}
    results = []
    for cfg in configs:
        key = pretrain_setting(cfg)
        if key not in cache:
            net = load_pretrained(seed, *key) if load_pretrained is not None else None
            if net is None:
                net = pretrain(task.pretrain, replace(pretrain_cfg, fairness=key[0], intensity=key[1]), seed)
            _check_width(net, task.train)
            cache[key] = (net, evaluate(net, task.pretrain_test))
        net, pre_report = cache[key]
        _, result = run_method(net, task, replace(cfg, seed=seed), pre_report)
        results.append(result)
    return results


def sort_key(result: RunResult):
    c = result.config
    return (METHODS.index(c.method), c.pretrain_fairness, c.pretrain_intensity,
            c.regularizer_intensity, c.alpha, -1 if c.rank is None else c.rank, c.energy, c.seed)


def run_grid(task_source, configs, seeds, pretrain_cfg: PretrainConfig = PretrainConfig(), jobs: int = 1,
             load_pretrained=None):
    """Run every config for every seed; results come back in a fixed order.

    ``task_source(seed) -> TaskData`` must be picklable when ``jobs > 1``.
    Each seed pretrains once per distinct pretraining setting and reuses
    that network across configs; the config's own ``seed`` is overridden.
    ``load_pretrained(seed, fairness, intensity)`` may supply a stored
    network instead (return ``None`` to train one).
    """
    configs = list(configs)
    seeds = list(seeds)
    if jobs > 1 and len(seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            n = len(seeds)
            chunks = list(pool.map(_seed_runs, [task_source] * n, [pretrain_cfg] * n, [configs] * n, seeds,
                                   [load_pretrained] * n))
    else:
        chunks = [_seed_runs(task_source, pretrain_cfg, configs, s, load_pretrained) for s in seeds]
    return sorted((r for chunk in chunks for r in chunk), key=sort_key)
