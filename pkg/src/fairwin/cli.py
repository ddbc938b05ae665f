"""``fairwin`` command line: pretrain, finetune, analyze, report.

Every text output starts with a ``# config_sha256=... seeds=... architecture=...``
comment line; checkpoints carry the same fields under ``meta``. Readers of
the JSON-lines and CSV files skip lines starting with ``#``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__, fisher, lowrank
from .config import ExperimentSpec
from .data import group_subset
from .errors import ConfigError, DataError, FileError, NumericalError
from .metrics import evaluate, pca_project, predict
from .model import load_checkpoint, representation, save_checkpoint
from .pipeline import pretrain, pretrain_setting, run_grid, sort_key

log = logging.getLogger("fairwin")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4, 5

SUMMARY_METRICS = (
    ("err", ("finetune", "err_percent")),
    ("f1", ("finetune", "f1_weighted")),
    ("dp", ("finetune", "delta_dp")),
    ("eo", ("finetune", "delta_eo")),
    ("tpr", ("finetune", "delta_tpr")),
    ("fpr", ("finetune", "delta_fpr")),
    ("pre_err", ("pretrain", "err_percent")),
    ("pre_dp", ("pretrain", "delta_dp")),
    ("pre_eo", ("pretrain", "delta_eo")),
    ("bias_delta", ("bias_delta",)),
    ("trainable_params", ("trainable_params",)),
)
GROUP_FIELDS = ("method", "pretrain_fairness", "pretrain_intensity", "regularizer_intensity",
                "alpha", "rank", "energy")


# ---------------------------------------------------------------------------
# small helpers


def parse_seed_list(text: str):
    """``"0,3,5-7"`` -> ``[0, 3, 5, 6, 7]`` (order kept, repeats rejected)."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        m = re.fullmatch(r"(\d+)(?:-(\d+))?", part)
        if not m:
            raise ConfigError(f"bad --seed-list entry {part!r}")
        lo = int(m.group(1))
        hi = int(m.group(2)) if m.group(2) else lo
        if hi < lo:
            raise ConfigError(f"bad --seed-list range {part!r}")
        seeds.extend(range(lo, hi + 1))
    if len(set(seeds)) != len(seeds):
        raise ConfigError("--seed-list repeats a seed")
    return seeds


def header_line(header: dict) -> str:
    seeds = ",".join(str(s) for s in header["seeds"])
    arch = "x".join(str(h) for h in header["architecture"])
    return f"# config_sha256={header['config_sha256']} seeds={seeds} architecture={arch}\n"


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise FileError(f"cannot write {path}: {exc}") from exc
    log.info("wrote %s", path)


def _jsonl(header, records) -> str:
    return header_line(header) + "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def read_jsonl(path):
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FileError(f"cannot read {path}: {exc}") from exc
    out = []
    for i, line in enumerate(lines, 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise FileError(f"{path}:{i}: not JSON: {exc}") from exc
    return out


def read_csv_rows(path):
    """Rows of a fairwin CSV as dicts, skipping ``#`` comment lines."""
    text = Path(path).read_text(encoding="utf-8")
    body = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(body))


def _csv(header, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(header_line(header))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def checkpoint_name(seed, fairness, intensity) -> str:
    return f"seed{seed}__{fairness}-{intensity:g}.json"


def _pretrain_settings(configs):
    return sorted({pretrain_setting(c) for c in configs})


class CheckpointSource:
    """Picklable ``(seed, fairness, intensity) -> NeuralNet`` for a file or directory."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            raise FileError(f"checkpoint {self.path} does not exist")

    def __call__(self, seed, fairness, intensity):
        if self.path.is_file():
            return load_checkpoint(self.path)
        target = self.path / checkpoint_name(seed, fairness, intensity)
        if not target.is_file():
            raise FileError(f"no checkpoint {target.name} in {self.path}")
        return load_checkpoint(target)


# ---------------------------------------------------------------------------
# summaries


def _dig(record, path):
    for key in path:
        record = record[key]
    return record


def summary_rows(records):
    """Mean and population std (``ddof=0``) per setting, in result order."""
    groups = {}
    for rec in records:
        cfg = rec["config"]
        key = tuple("auto" if f == "rank" and cfg[f] is None else cfg[f] for f in GROUP_FIELDS)
        groups.setdefault(key, []).append(rec)
    rows = []
    for key, recs in groups.items():
        row = list(key) + [len(recs)]
        for _, path in SUMMARY_METRICS:
            vals = np.array([_dig(r, path) for r in recs], dtype=np.float64)
            row += [float(vals.mean()), float(vals.std())]
        rows.append(row)
    return rows


def summary_columns():
    cols = list(GROUP_FIELDS) + ["n"]
    for name, _ in SUMMARY_METRICS:
        cols += [f"{name}_mean", f"{name}_std"]
    return cols


# ---------------------------------------------------------------------------
# subcommands


def _spec_and_seeds(args):
    spec = ExperimentSpec.from_file(args.config)
    seeds = parse_seed_list(args.seed_list) if args.seed_list else spec.seeds
    return spec, seeds


def _out_dir(args, spec) -> Path:
    return Path(args.out if args.out else spec.model.output)


def cmd_pretrain(args) -> int:
    spec, seeds = _spec_and_seeds(args)
    out = _out_dir(args, spec)
    header = spec.header(seeds)
    source = spec.task_source()
    base = spec.pretrain_config()
    settings = _pretrain_settings(spec.run_configs())
    reports = []
    for seed in seeds:
        task = source(seed)
        for fairness, intensity in settings:
            net = pretrain(task.pretrain, replace(base, fairness=fairness, intensity=intensity), seed)
            report = evaluate(net, task.pretrain_test)
            meta = dict(header, seed=seed, pretrain_fairness=fairness, pretrain_intensity=intensity,
                        fairwin_version=__version__)
            save_checkpoint(net, _mk(out / "checkpoints") / checkpoint_name(seed, fairness, intensity), meta)
            reports.append({"seed": seed, "pretrain_fairness": fairness, "pretrain_intensity": intensity,
                            "report": report.as_dict()})
    _write(out / "pretrain_reports.jsonl", _jsonl(header, reports))
    return EXIT_OK


def _mk(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FileError(f"cannot create {path}: {exc}") from exc
    return path


def cmd_finetune(args) -> int:
    spec, seeds = _spec_and_seeds(args)
    out = _out_dir(args, spec)
    header = spec.header(seeds)
    configs = spec.run_configs(rank=args.rank, energy=args.energy, alpha=args.alpha)
    loader = CheckpointSource(args.checkpoint) if args.checkpoint else None
    results = run_grid(spec.task_source(), configs, seeds, spec.pretrain_config(), jobs=args.jobs,
                       load_pretrained=loader)
    records = [r.record() for r in results]
    _write(out / "results.jsonl", _jsonl(header, records))
    _write(out / "summary.csv", _csv(header, summary_columns(), summary_rows(records)))
    timings = [{"method": r.config.method, "seed": r.config.seed, "wall_time": r.wall_time} for r in results]
    _write(out / "timings.jsonl", _jsonl(header, timings))
    return EXIT_OK


def _per_group_models(task, base, seed):
    nets = []
    for g in (1, 2):
        nets.append(pretrain(group_subset(task.pretrain, g), base, seed))
    return nets


def cmd_analyze(args) -> int:
    spec, seeds = _spec_and_seeds(args)
    out = _out_dir(args, spec)
    header = spec.header(seeds)
    source = spec.task_source()
    base = spec.pretrain_config()
    analysis = spec.model.analysis
    loader = CheckpointSource(args.checkpoint) if args.checkpoint else None
    alpha = args.alpha if args.alpha is not None else 0.5
    for seed in seeds:
        task = source(seed)
        seed_header = dict(header, seeds=[seed])
        net = loader(seed, "none", 0.0) if loader else pretrain(task.pretrain, base, seed)
        if net.in_dim != task.test.n_features:
            raise ConfigError(f"checkpoint expects {net.in_dim} features, data has {task.test.n_features}")

        # PCA of head inputs for samples predicted positive
        keep = predict(net, task.test) == 1
        rows = []
        if np.any(keep):
            h = representation(net, task.test.x[keep])
            dims = min(analysis.pca_dims, h.shape[1])
            proj, _ = pca_project(h, dims)
            rows = [[*map(float, p), int(s)] for p, s in zip(proj, task.test.s[keep])]
        else:
            dims = analysis.pca_dims
        cols = [f"pc{i + 1}" for i in range(dims)] + ["s"]
        _write(out / f"pca_seed{seed}.csv", _csv(seed_header, cols, rows))

        # Fisher heatmap
        g1, g2 = group_subset(task.train, 1), group_subset(task.train, 2)
        if analysis.fisher_protocol == "per_group":
            net1, net2 = _per_group_models(task, base, seed)
        else:
            net1, net2 = net, None
        hm = fisher.heatmap_rows(net1, g1, g2, net2)
        _write(out / f"fisher_heatmap_seed{seed}.csv",
               _csv(seed_header, ["index", "group1", "group2", "is_bias"], hm))

        # low-rank reconstruction under the neutralized importance
        imp = fisher.blend(*fisher.group_importances(net, task.train), alpha)
        report = lowrank.reconstruction_report(net.layers[-1].weight, imp)
        _write(out / f"reconstruction_seed{seed}.csv",
               _csv(seed_header, ["rank", "weighted_error", "unweighted_error", "energy"],
                    [[r.rank, r.weighted_error, r.unweighted_error, r.energy] for r in report]))
    return EXIT_OK


def cmd_report(args) -> int:
    spec, seeds = _spec_and_seeds(args)
    out = _out_dir(args, spec)
    src = Path(args.results) if args.results else out / "results.jsonl"
    records = read_jsonl(src)
    if not records:
        raise DataError(f"{src} holds no results")
    keep = set(seeds)
    records = [r for r in records if r["config"]["seed"] in keep]
    records.sort(key=lambda r: sort_key(_RecordView(r)))
    header = spec.header(seeds)
    _write(out / "summary.csv", _csv(header, summary_columns(), summary_rows(records)))
    return EXIT_OK


class _RecordView:
    """Adapter so :func:`sort_key` can order raw result records."""

    def __init__(self, record):
        self.config = SimpleNamespace(**record["config"])


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairwin", description="Fairness-aware low-rank fine-tuning experiments.")
    parser.add_argument("--version", action="version", version=f"fairwin {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--seed-list", help="seeds to run, e.g. 0-9 or 0,2,4 (default: from config)")
        p.add_argument("--out", help="output directory (default: config 'output')")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("pretrain", help="train and checkpoint the pretrained models"))
    ft = common(sub.add_parser("finetune", help="run the method grid and write results"))
    ft.add_argument("--jobs", type=int, default=1, help="worker processes (one seed per task)")
    ft.add_argument("--checkpoint", help="checkpoint file, or directory written by 'pretrain'")
    group = ft.add_mutually_exclusive_group()
    group.add_argument("--rank", type=int, help="fixed rank for the factorized head")
    group.add_argument("--energy", type=float, help="retained-energy threshold for automatic rank")
    ft.add_argument("--alpha", type=float, help="group blend weight in [0.5, 1)")

    an = common(sub.add_parser("analyze", help="PCA, Fisher heatmap and reconstruction exports"))
    an.add_argument("--checkpoint", help="checkpoint file, or directory written by 'pretrain'")
    an.add_argument("--alpha", type=float, help="group blend weight in [0.5, 1)")

    rp = common(sub.add_parser("report", help="rebuild summary.csv from results.jsonl"))
    rp.add_argument("--results", help="results file (default: OUT/results.jsonl)")
    return parser


COMMANDS = {"pretrain": cmd_pretrain, "finetune": cmd_finetune, "analyze": cmd_analyze, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("fairwin: config error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, NumericalError, FileError, OSError) as exc:
        kind, code = _classify(exc)
        print(f"fairwin: {kind} error: {exc}", file=sys.stderr)
        return code


def _classify(exc):
    for cls, kind, code in ((ConfigError, "config", EXIT_CONFIG), (DataError, "data", EXIT_DATA),
                            (NumericalError, "numerical", EXIT_NUMERICAL)):
        if isinstance(exc, cls):
            return kind, code
    return "I/O", EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
