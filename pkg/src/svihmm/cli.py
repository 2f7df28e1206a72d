"""Command-line interface: ``svihmm generate|fit-batch|fit-svi|evaluate|bench``.

Every subcommand prints one JSON object on stdout when it succeeds and exits
with status 0. Failures print a single JSON line ``{"error": <kind>,
"message": <text>}`` on stderr and exit nonzero (2 for usage errors, 1
otherwise).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .batch import run_batch_vb
from .checkpoint import load_checkpoint, save_checkpoint
from .harness import ExperimentConfig, run_experiment, split_holdout, summarize, write_trace
from .metrics import predictive_log_prob, transition_error
from .svi import SviConfig, run_svihmm
from .synthetic import GENERATORS, read_dataset, write_dataset


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


def cmd_generate(a):
    params = GENERATORS[a.dataset]()
    ds = write_dataset(a.out, params, a.T, a.seed, include_states=a.with_states, generator=a.dataset)
    _emit({"out": a.out, "T": ds.T, "p": ds.p, "generator": a.dataset, "seed": a.seed, "sha256": ds.checksum})


def _train(a):
    ds = read_dataset(a.data)
    train, _ = split_holdout(ds.y, a.holdout) if a.holdout > 0 else (ds.y, None)
    return train


def cmd_fit_batch(a):
    train = _train(a)
    tr = run_batch_vb(train, a.K, seed=a.seed, max_iters=a.max_iters, rel_tol=a.tol)
    save_checkpoint(a.out, tr.final)
    if a.trace:
        write_trace(a.trace, tr.rows)
    _emit({"out": a.out, "iters": len(tr.rows) - 1, "elbo": tr.rows[-1]["elbo"],
           "total_seconds": float(np.sum(tr.column("seconds")))})


def cmd_fit_svi(a):
    train = _train(a)
    L = a.L if a.L is not None else 2 * a.half_width + 1
    cfg = SviConfig(L=L, M=a.M, kappa=a.kappa, iters=a.iters, epsilon=a.epsilon, growU=a.grow_u,
                    useGrowBuf=not a.no_growbuf, seed=a.seed)
    tr = run_svihmm(train, a.K, config=cfg)
    save_checkpoint(a.out, tr.final)
    if a.trace:
        write_trace(a.trace, tr.rows)
    secs = tr.column("wall_seconds")
    _emit({"out": a.out, "L": L, "M": a.M, "iters": len(tr.rows), "total_seconds": float(np.sum(secs)),
           "per_iter_seconds": float(np.mean(secs)),
           "buffer_added_mean": float(np.sum(tr.column("buffer_added_total")) / (len(tr.rows) * a.M))})


def cmd_evaluate(a):
    w = load_checkpoint(a.model)
    ds = read_dataset(a.data)
    _, test = split_holdout(ds.y, a.holdout) if a.holdout > 0 else (None, ds.y)
    out = {"pred_logprob": predictive_log_prob(w, test), "n_test": len(test),
           "predictive": "plug-in posterior means"}
    truth = a.truth if a.truth is not None else ds.generator
    if truth in GENERATORS:
        params = GENERATORS[truth]()
        if w.K != params.K:
            raise ValueError(f"model has K={w.K} but truth {truth!r} has K={params.K}")
        out["trans_error"] = transition_error(w, params)
        out["truth"] = truth
    elif a.truth is not None:
        raise ValueError(f"unknown truth {a.truth!r}; expected one of {sorted(GENERATORS)}")
    _emit(out)


def cmd_bench(a):
    cfg = ExperimentConfig.load(a.config)
    if a.out_dir:
        cfg.out_dir = a.out_dir
    reports = run_experiment(cfg)
    _emit({"results": f"{cfg.out_dir}/results.csv", "runs": len(reports), "summary": summarize(reports)})


def build_parser():
    p = _Parser(prog="svihmm", description="Stochastic variational inference for Gaussian HMMs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="sample a synthetic dataset")
    g.add_argument("--dataset", choices=sorted(GENERATORS), default="dd", help="generator (default dd)")
    g.add_argument("--T", type=int, default=10_000, help="sequence length (default 10000)")
    g.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    g.add_argument("--out", required=True, help="output path (.csv for CSV, raw float64 otherwise)")
    g.add_argument("--with-states", action="store_true", help="also store the true state sequence")
    g.set_defaults(func=cmd_generate)

    def common(sp):
        sp.add_argument("--data", required=True, help="dataset path")
        sp.add_argument("--K", type=int, default=8, help="number of hidden states (default 8)")
        sp.add_argument("--seed", type=int, default=0, help="initialisation/sampling seed (default 0)")
        sp.add_argument("--holdout", type=float, default=0.1,
                        help="final fraction excluded from training (default 0.1; 0 uses all data)")
        sp.add_argument("--out", default="model.json", help="checkpoint path (default model.json)")
        sp.add_argument("--trace", default=None, help="optional per-iteration trace CSV")

    fb = sub.add_parser("fit-batch", help="batch coordinate-ascent VB")
    common(fb)
    fb.add_argument("--max-iters", type=int, default=200, help="maximum sweeps (default 200)")
    fb.add_argument("--tol", type=float, default=1e-6, help="relative ELBO tolerance (default 1e-6)")
    fb.set_defaults(func=cmd_fit_batch)

    fs = sub.add_parser("fit-svi", help="stochastic VI on subchains")
    common(fs)
    size = fs.add_mutually_exclusive_group()
    size.add_argument("--L", type=int, default=None, help="subchain length (default 21)")
    size.add_argument("--half-width", type=int, default=10, help="sets L = 2*half_width + 1 (default 10)")
    fs.add_argument("--M", type=int, default=1, help="subchains per minibatch (default 1)")
    fs.add_argument("--kappa", type=float, default=0.5, help="forgetting rate in [0.5, 1] (default 0.5)")
    fs.add_argument("--iters", type=int, default=100, help="minibatch updates (default 100)")
    fs.add_argument("--epsilon", type=float, default=1e-6, help="GrowBuf tolerance (default 1e-6)")
    fs.add_argument("--grow-u", type=int, default=8, help="GrowBuf growth step (default 8)")
    fs.add_argument("--no-growbuf", action="store_true", help="disable buffer growth")
    fs.set_defaults(func=cmd_fit_svi)

    ev = sub.add_parser("evaluate", help="held-out predictive log-probability and transition error")
    ev.add_argument("--model", required=True, help="checkpoint path")
    ev.add_argument("--data", required=True, help="dataset path")
    ev.add_argument("--truth", choices=sorted(GENERATORS), default=None,
                    help="true generator for transition error (default: dataset's generator, if known)")
    ev.add_argument("--holdout", type=float, default=0.1,
                    help="final fraction used as test set (default 0.1; 0 scores the whole file)")
    ev.set_defaults(func=cmd_evaluate)

    be = sub.add_parser("bench", help="run an experiment config (YAML or JSON)")
    be.add_argument("--config", required=True, help="config path")
    be.add_argument("--out-dir", default=None, help="override the config's out_dir")
    be.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    try:
        a = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, stream=sys.stderr)
        a.func(a)
        return 0
    except UsageError as e:
        print(json.dumps({"error": "usage", "message": str(e)}), file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every failure becomes one JSON line
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
