"""Experiment files: YAML (or JSON) parsed into a validated :class:`ExperimentSpec`.

Unknown keys are rejected, and every validation error names the line of
the offending key.
"""
from __future__ import annotations

import hashlib
import itertools
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .data import ADULT_SCHEMA, ColumnSchema, load_csv
from .errors import ConfigError, FileError
from .lowrank import DEFAULT_ENERGY
from .pipeline import PretrainConfig, RunConfig, SyntheticTask, task_from_dataset


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SchemaBlock(_Strict):
    preset: Optional[Literal["adult"]] = None
    label: Optional[str] = None
    sensitive: Optional[str] = None
    positive: list[str] = ["1"]
    negative: list[str] = ["0", "-1"]
    privileged: list[str] = ["1"]
    unprivileged: list[str] = ["2", "0"]
    categorical: list[str] = []
    numeric: Optional[list[str]] = None

    @model_validator(mode="after")
    def _roles(self):
        if self.preset is None and (self.label is None or self.sensitive is None):
            raise ValueError("schema needs 'label' and 'sensitive' unless a preset is given")
        return self

    def to_schema(self) -> ColumnSchema:
        if self.preset == "adult":
            return ADULT_SCHEMA
        return ColumnSchema(
            label=self.label, sensitive=self.sensitive, positive=tuple(self.positive),
            negative=tuple(self.negative), privileged=tuple(self.privileged),
            unprivileged=tuple(self.unprivileged), categorical=tuple(self.categorical),
            numeric=None if self.numeric is None else tuple(self.numeric),
        )


class SyntheticBlock(_Strict):
    kind: Literal["synthetic"]
    n: int = Field(5000, ge=40)
    d: int = Field(10, ge=2)
    bias_strength: float = Field(0.6, ge=0.0, le=1.0)
    task_fraction: float = Field(0.4, gt=0.0, lt=1.0)
    shift: float = Field(0.0, ge=0.0, le=1.0)
    rotation: float = 0.0


class CsvBlock(_Strict):
    kind: Literal["csv"]
    path: str
    schema_: SchemaBlock = Field(alias="schema")
    header: bool = True
    pretrain_fraction: float = Field(0.6, gt=0.0, lt=1.0)


class ArchitectureBlock(_Strict):
    hidden: list[int] = [32, 16]

    @field_validator("hidden")
    @classmethod
    def _positive(cls, v):
        if any(h < 1 for h in v):
            raise ValueError("hidden widths must be >= 1")
        return v


class TrainBlock(_Strict):
    lr: Optional[float] = Field(None, gt=0.0)
    epochs: Optional[int] = Field(None, ge=0)
    batch: Optional[int] = Field(None, ge=1)


Grid = Union[float, list[float]]


class RunBlock(_Strict):
    method: Literal["TL", "F_SVD", "OURS", "RETRAIN_EO", "RETRAIN_DP"]
    rank: Optional[int] = Field(None, ge=1)
    energy: Optional[float] = Field(None, gt=0.0, le=1.0)
    alpha: Grid = 0.5
    regularizer_intensity: Grid = 0.0
    pretrain_fairness: Literal["none", "EO", "DP"] = "none"
    pretrain_intensity: Grid = 0.0
    lr: Optional[float] = Field(None, gt=0.0)
    epochs: Optional[int] = Field(None, ge=0)
    batch: Optional[int] = Field(None, ge=1)


class AnalysisBlock(_Strict):
    fisher_protocol: Literal["shared", "per_group"] = "shared"
    pca_dims: int = Field(2, ge=1)


class ExperimentFile(_Strict):
    dataset: Union[SyntheticBlock, CsvBlock] = Field(discriminator="kind")
    split: list[float] = [0.6, 0.2, 0.2]
    architecture: ArchitectureBlock = ArchitectureBlock()
    pretrain: TrainBlock = TrainBlock()
    finetune: TrainBlock = TrainBlock()
    runs: list[RunBlock] = [RunBlock(method="TL"), RunBlock(method="F_SVD"), RunBlock(method="OURS")]
    seeds: list[int] = list(range(10))
    output: str = "results"
    analysis: AnalysisBlock = AnalysisBlock()

    @field_validator("split")
    @classmethod
    def _split(cls, v):
        if len(v) != 3 or min(v) <= 0 or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("split must be three positive fractions summing to 1")
        return v

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if not v or len(set(v)) != len(v):
            raise ValueError("seeds must be a non-empty list without repeats")
        return v


def _line_map(text):
    """Map key paths like ``('runs', 2, 'rank')`` to 1-based line numbers."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    lines = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                p = path + (key.value,)
                lines[p] = key.start_mark.line + 1
                walk(value, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                p = path + (i,)
                lines[p] = item.start_mark.line + 1
                walk(item, p)

    if root is not None:
        walk(root, ())
    return lines


def _locate(loc, lines):
    # pydantic inserts union-member tags (e.g. 'synthetic') into the path
    path = tuple(p for p in loc if not (isinstance(p, str) and p in ("synthetic", "csv", "float", "list[float]")))
    for cut in range(len(path), 0, -1):
        if path[:cut] in lines:
            return lines[path[:cut]]
    return None


class ExperimentSpec:
    """A validated experiment file plus the helpers that turn it into runs."""

    def __init__(self, model: ExperimentFile, text: str, source: str = "<string>"):
        self.model = model
        self.text = text
        self.source = source

    @classmethod
    def from_text(cls, text: str, source="<string>") -> "ExperimentSpec":
        lines = _line_map(text)
        raw = yaml.safe_load(text)
        if not isinstance(raw, dict):
            raise ConfigError(f"{source}: top level must be a mapping")
        try:
            model = ExperimentFile.model_validate(raw)
        except ValidationError as exc:
            msgs = []
            for err in exc.errors():
                line = _locate(err["loc"], lines)
                where = ".".join(str(p) for p in err["loc"])
                prefix = f"{source}:{line}" if line else source
                msgs.append(f"{prefix}: {where}: {err['msg']}")
            raise ConfigError("\n".join(msgs)) from None
        spec = cls(model, text, source)
        spec.run_configs()  # surfaces cross-field errors before any compute
        return spec

    @classmethod
    def from_file(cls, path) -> "ExperimentSpec":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise FileError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, str(path))

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    @property
    def seeds(self):
        return list(self.model.seeds)

    def pretrain_config(self) -> PretrainConfig:
        overrides = {k: v for k, v in self.model.pretrain.model_dump().items() if v is not None}
        return PretrainConfig(hidden=tuple(self.model.architecture.hidden), **overrides)

    def run_configs(self, rank=None, energy=None, alpha=None):
        """Expand every run block (list-valued fields form a grid) into :class:`RunConfig`."""
        defaults = {k: v for k, v in self.model.finetune.model_dump().items() if v is not None}
        out = []
        for i, block in enumerate(self.model.runs):
            grids = {
                "alpha": [alpha] if alpha is not None else _as_list(block.alpha),
                "regularizer_intensity": _as_list(block.regularizer_intensity),
                "pretrain_intensity": _as_list(block.pretrain_intensity),
            }
            for a, ri, pi in itertools.product(*grids.values()):
                fields = dict(defaults)
                fields.update({k: getattr(block, k) for k in ("lr", "epochs", "batch") if getattr(block, k) is not None})
                fields.update(
                    method=block.method,
                    rank=rank if rank is not None else block.rank,
                    energy=energy if energy is not None else (block.energy or DEFAULT_ENERGY),
                    alpha=a,
                    regularizer_intensity=ri,
                    pretrain_fairness=block.pretrain_fairness,
                    pretrain_intensity=pi,
                )
                try:
                    out.append(RunConfig(**fields))
                except ConfigError as exc:
                    raise ConfigError(f"{self.source}: runs.{i}: {exc}") from None
        return out

    def task_source(self):
        ds = self.model.dataset
        split = tuple(self.model.split)
        if ds.kind == "synthetic":
            return SyntheticTask(ds.n, ds.d, ds.bias_strength, ds.task_fraction, ds.shift, ds.rotation, split).build
        return CsvTask(ds.path, ds.schema_.to_schema(), ds.header, ds.pretrain_fraction, split)

    def header(self, seeds=None) -> dict:
        return {
            "config_sha256": self.sha256,
            "seeds": list(seeds if seeds is not None else self.seeds),
            "architecture": list(self.model.architecture.hidden),
        }


def _as_list(v):
    return list(v) if isinstance(v, list) else [v]


class CsvTask:
    """Picklable ``seed -> TaskData`` for a CSV dataset (loaded once per process)."""

    def __init__(self, path, schema, header, pretrain_fraction, split):
        self.path = path
        self.schema = schema
        self.header = header
        self.pretrain_fraction = pretrain_fraction
        self.split = split
        self._ds = None

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_ds"] = None
        return state

    def __call__(self, seed):
        if self._ds is None:
            self._ds = load_csv(self.path, self.schema, header=self.header)
        return task_from_dataset(self._ds, seed, self.pretrain_fraction, self.split)

