"""Experiment harness: generate -> fit -> evaluate, with CSV artifacts.

A bench config (YAML or JSON) looks like::

    name: dd-budget
    dataset: {generator: dd, T: 10000, seed: 1}   # or {path: data.bin}
    K: 8
    seeds: 20              # int (0..n-1) or an explicit list
    budget: 200            # optional: every svi run must have L * M == budget
    holdout: 0.1           # final contiguous fraction used as test set
    folds: 1               # >1: contiguous held-out blocks, one per fold
    jobs: 1                # restarts run concurrently when > 1
    out_dir: results
    runs:
      - {algorithm: svi, L: 10, M: 20, kappa: 0.5, iters: 100, growbuf: false}
      - {algorithm: svi, half_width: 50, M: 2}
      - {algorithm: batch, max_iters: 200, tol: 1.0e-6}

Outputs: ``<out_dir>/results.csv`` (one row per restart, columns in
``RESULT_COLUMNS``) and ``<out_dir>/traces/<run_id>.csv``. Rows are
appended and flushed as each restart finishes, by the parent process only.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import yaml

from .batch import run_batch_vb
from .metrics import predictive_log_prob, transition_error
from .model import HmmParams, ValidationError, sample_hmm
from .svi import SviConfig, run_svihmm
from .synthetic import GENERATORS, read_dataset

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("run_id", "seed", "algorithm", "L", "M", "kappa", "epsilon", "growbuf", "iters",
                  "trans_error", "pred_logprob", "total_seconds", "per_iter_seconds")
PREDICTIVE = "plug-in posterior means"


@dataclass
class EvalReport:
    run_id: str
    seed: int
    algorithm: str
    L: Optional[int]
    M: Optional[int]
    kappa: Optional[float]
    epsilon: Optional[float]
    growbuf: Optional[bool]
    iters: int
    trans_error: float
    pred_logprob: float
    total_seconds: float
    per_iter_seconds: float
    predictive: str = PREDICTIVE
    config: dict = field(default_factory=dict)

    def row(self):
        d = asdict(self)
        return {k: d[k] for k in RESULT_COLUMNS}


@dataclass
class RunSpec:
    algorithm: str
    L: Optional[int] = None
    M: int = 1
    kappa: float = 0.5
    iters: int = 100
    epsilon: float = 1e-6
    growU: int = 8
    growbuf: bool = True
    max_iters: int = 200
    tol: float = 1e-6

    @classmethod
    def parse(cls, d):
        d = dict(d)
        alg = d.pop("algorithm", None)
        if alg not in ("batch", "svi"):
            raise ValidationError(f"run algorithm must be 'batch' or 'svi', got {alg!r}")
        if "half_width" in d:
            if "L" in d:
                raise ValidationError("give either L or half_width, not both")
            d["L"] = 2 * int(d.pop("half_width")) + 1
        if "grow_u" in d:
            d["growU"] = d.pop("grow_u")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown run keys: {sorted(unknown)}")
        spec = cls(alg, **d)
        if alg == "svi" and spec.L is None:
            raise ValidationError("svi runs need L or half_width")
        return spec

    def label(self):
        if self.algorithm == "batch":
            return "batch"
        return f"svi-L{self.L}-M{self.M}-k{self.kappa:g}-{'gb' if self.growbuf else 'nogb'}"


@dataclass
class ExperimentConfig:
    name: str
    runs: list
    K: int = 8
    dataset: dict = field(default_factory=lambda: {"generator": "dd", "T": 10_000, "seed": 1})
    seeds: list = field(default_factory=lambda: [0])
    budget: Optional[int] = None
    holdout: float = 0.1
    folds: int = 1
    jobs: int = 1
    out_dir: str = "results"

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(d.get("seeds"), int):
            d["seeds"] = list(range(d["seeds"]))
        d["runs"] = [r if isinstance(r, RunSpec) else RunSpec.parse(r) for r in d.get("runs", [])]
        cfg = cls(**d)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path):
        with open(path) as f:
            text = f.read()
        d = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        if not isinstance(d, dict):
            raise ValidationError(f"{path}: config must be a mapping")
        return cls.from_dict(d)

    def check(self):
        if not self.runs:
            raise ValidationError("config has no runs")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("seeds must be distinct")
        if not 0 < self.holdout < 1:
            raise ValidationError("holdout must lie in (0, 1)")
        if self.folds < 1 or self.folds * self.holdout > 1:
            raise ValidationError("folds * holdout must not exceed 1")
        if self.budget is not None:
            for r in self.runs:
                if r.algorithm == "svi" and r.L * r.M != self.budget:
                    raise ValidationError(f"run {r.label()} has L*M={r.L * r.M}, budget is {self.budget}")


def load_data(dataset: dict):
    """Return (y, truth) where truth is the generating HmmParams or None."""
    if "path" in dataset:
        ds = read_dataset(dataset["path"])
        gen = GENERATORS.get(dataset.get("generator", ds.generator))
        return ds.y, gen() if gen is not None else None
    name = dataset.get("generator", "dd")
    if name not in GENERATORS:
        raise ValidationError(f"unknown generator {name!r}")
    truth = GENERATORS[name]()
    _, y = sample_hmm(truth, int(dataset.get("T", 10_000)), int(dataset.get("seed", 0)))
    return y, truth


def split_holdout(y, holdout=0.1, fold=0, folds=1):
    """Train/test split with a contiguous test block.

    With one fold the test block is the final ``holdout`` fraction. With
    ``folds`` > 1, fold f holds out the block ending at (f + 1) T / folds;
    the last fold coincides with the single-fold split. The training
    pieces on either side are concatenated.
    """
    T = len(y)
    n_test = max(1, int(round(holdout * T)))
    end = T if fold == folds - 1 else int(round((fold + 1) * T / folds))
    start = end - n_test
    if start < 2:
        raise ValidationError("held-out block leaves fewer than two training observations")
    train = np.concatenate([y[:start], y[end:]]) if end < T else y[:start]
    return train, y[start:end]


def fit_one(spec: RunSpec, train, K, seed, validation=None):
    """Run one fit; returns (final w, trace rows, per-iteration seconds, total)."""
    if spec.algorithm == "batch":
        tr = run_batch_vb(train, K, seed=seed, max_iters=spec.max_iters, rel_tol=spec.tol)
        secs = tr.column("seconds")
    else:
        cfg = SviConfig(L=spec.L, M=spec.M, kappa=spec.kappa, iters=spec.iters, epsilon=spec.epsilon,
                        growU=spec.growU, useGrowBuf=spec.growbuf, seed=seed)
        tr = run_svihmm(train, K, config=cfg, validation=validation)
        secs = tr.column("wall_seconds")
    total = float(np.sum(secs))
    return tr, float(total / max(len(secs), 1)), total


def _run_restart(args):
    cfg, spec, seed, fold, y, truth = args
    train, test = split_holdout(y, cfg.holdout, fold, cfg.folds)
    tr, per_iter, total = fit_one(spec, train, cfg.K, seed)
    run_id = f"{cfg.name}-{spec.label()}-s{seed}" + (f"-f{fold}" if cfg.folds > 1 else "")
    iters = len(tr.rows) - 1 if spec.algorithm == "batch" else len(tr.rows)
    report = EvalReport(
        run_id=run_id, seed=seed, algorithm=spec.algorithm,
        L=spec.L if spec.algorithm == "svi" else None,
        M=spec.M if spec.algorithm == "svi" else None,
        kappa=spec.kappa if spec.algorithm == "svi" else None,
        epsilon=spec.epsilon if spec.algorithm == "svi" else None,
        growbuf=spec.growbuf if spec.algorithm == "svi" else None,
        iters=iters,
        trans_error=transition_error(tr.final, truth) if truth is not None else float("nan"),
        pred_logprob=predictive_log_prob(tr.final, test),
        total_seconds=total, per_iter_seconds=per_iter,
        config=asdict(spec),
    )
    return report, tr.rows


def write_trace(path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=list(rows[0]))
        wr.writeheader()
        wr.writerows(rows)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def run_experiment(cfg: ExperimentConfig | dict) -> list[EvalReport]:
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    y, truth = load_data(cfg.dataset)
    os.makedirs(os.path.join(cfg.out_dir, "traces"), exist_ok=True)
    jobs = [(cfg, spec, seed, fold, y, truth)
            for spec in cfg.runs for seed in cfg.seeds for fold in range(cfg.folds)]
    results_path = os.path.join(cfg.out_dir, "results.csv")
    reports = []
    with open(results_path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=RESULT_COLUMNS)
        wr.writeheader()
        f.flush()

        def record(report, rows):
            write_trace(os.path.join(cfg.out_dir, "traces", f"{report.run_id}.csv"), rows)
            wr.writerow({k: _fmt(v) for k, v in report.row().items()})
            f.flush()
            reports.append(report)
            log.info("%s: trans_error=%.4g pred_logprob=%.6g", report.run_id, report.trans_error,
                     report.pred_logprob)

        if cfg.jobs > 1:
            with ProcessPoolExecutor(cfg.jobs) as pool:
                for report, rows in pool.map(_run_restart, jobs):
                    record(report, rows)
        else:
            for job in jobs:
                record(*_run_restart(job))
    return reports


def summarize(reports, key=lambda r: r.run_id.rsplit("-s", 1)[0]):
    """Median transition error and predictive log-probability per configuration."""
    groups = {}
    for r in reports:
        groups.setdefault(key(r), []).append(r)
    return {k: {"n": len(v),
                "median_trans_error": float(np.median([r.trans_error for r in v])),
                "median_pred_logprob": float(np.median([r.pred_logprob for r in v])),
                "median_per_iter_seconds": float(np.median([r.per_iter_seconds for r in v]))}
            for k, v in groups.items()}
