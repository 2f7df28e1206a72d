"""Synthetic benchmark models and the dataset file format.

Dataset layout for a path ``X``:

    X           observations as raw IEEE-754 float64, little-endian,
                row-major T x p (or CSV with header ``t,y1,...,yp`` when X
                ends in ``.csv``; ``t`` is 1-based, an optional trailing
                ``state`` column holds the true labels)
    X.meta      plain text, one ``key: value`` per line: format, version,
                T, p, generator, seed, sha256 (of T and p as two int64 LE
                followed by the float64 LE row-major observations, so the
                declared shape is covered too), params_sha256 (of the generating parameters,
                or ``none``), states (``X.states`` or ``none``)
    X.states    optional true labels, int32 little-endian, 0-based
"""
from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import HmmParams, sample_hmm, stationary_distribution

log = logging.getLogger(__name__)

FORMAT = "svihmm-dataset"
VERSION = 1


class DatasetError(ValueError):
    """Malformed, truncated or corrupted dataset file."""


DD_MEANS = [(0, 20), (20, 0), (-90, -30), (30, -30), (-20, 0), (0, -20), (30, 30), (-30, 30)]
RC_MEANS = [(-50, 0), (30, -30), (30, 30), (-100, -10), (40, -40), (-65, 0), (40, 40), (100, 10)]

# Row 2 is printed with a leading 9 in the source table, which makes the row
# sum to 10; the entry is read as 0 so the row closes the cycle 1 -> 2 -> 3.
RC_A = [
    [.01, .99, 0, 0, 0, 0, 0, 0],
    [0, .01, .99, 0, 0, 0, 0, 0],
    [.85, 0, 0, .15, 0, 0, 0, 0],
    [0, 0, 0, 0, 1, 0, 0, 0],
    [0, 0, 0, 0, .01, .99, 0, 0],
    [0, 0, 0, 0, 0, .01, .99, 0],
    [0, 0, 0, 0, .85, 0, 0, .15],
    [1, 0, 0, 0, 0, 0, 0, 0],
]


def make_dd_params() -> HmmParams:
    """Diagonally dominant model: sticky circulant chain, unit covariances."""
    K = 8
    A = 0.999 * np.eye(K) + 0.001 * np.roll(np.eye(K), 1, axis=1)
    covs = np.tile(np.eye(2), (K, 1, 1))
    return HmmParams(stationary_distribution(A), A, np.array(DD_MEANS, float), covs)


def make_rc_params() -> HmmParams:
    """Reversed-cycles model: two 3-cycles joined by two bridge states."""
    log.info("reversed-cycles matrix: reading printed row 2, column 1 entry '9' as 0")
    A = np.array(RC_A, dtype=float)
    covs = np.tile(20.0 * np.eye(2), (8, 1, 1))
    return HmmParams(stationary_distribution(A), A, np.array(RC_MEANS, float), covs)


GENERATORS = {"dd": make_dd_params, "rc": make_rc_params}


@dataclass
class DatasetFile:
    T: int
    p: int
    generator: str
    seed: Optional[int]
    checksum: str
    params_checksum: Optional[str]
    y: np.ndarray
    states: Optional[np.ndarray] = None


def payload_checksum(y):
    y = np.ascontiguousarray(np.atleast_2d(y), dtype="<f8")
    h = hashlib.sha256(np.array(y.shape, dtype="<i8").tobytes())
    h.update(y.tobytes())
    return h.hexdigest()


def params_checksum(params: HmmParams):
    h = hashlib.sha256()
    for a in (params.pi0, params.A, params.means, params.covs):
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def _is_csv(path):
    return str(path).lower().endswith(".csv")


def save_dataset(path, y, states=None, generator="custom", seed=None, params=None) -> DatasetFile:
    """Write observations (and optional labels) with their metadata sidecar."""
    path = str(path)
    y = np.ascontiguousarray(np.atleast_2d(y), dtype="<f8")
    T, p = y.shape
    if _is_csv(path):
        with open(path, "w") as f:
            head = ["t"] + [f"y{i + 1}" for i in range(p)] + (["state"] if states is not None else [])
            f.write(",".join(head) + "\n")
            for t in range(T):
                row = [str(t + 1)] + [repr(float(v)) for v in y[t]]
                if states is not None:
                    row.append(str(int(states[t])))
                f.write(",".join(row) + "\n")
    else:
        with open(path, "wb") as f:
            f.write(y.tobytes())
        if states is not None:
            with open(path + ".states", "wb") as f:
                f.write(np.ascontiguousarray(states, dtype="<i4").tobytes())
        elif os.path.exists(path + ".states"):
            os.remove(path + ".states")
    ds = DatasetFile(T, p, generator, seed, payload_checksum(y),
                     params_checksum(params) if params is not None else None, y,
                     None if states is None else np.asarray(states, dtype=np.int64))
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "T": T,
        "p": p,
        "generator": generator,
        "seed": "none" if seed is None else int(seed),
        "sha256": ds.checksum,
        "params_sha256": ds.params_checksum or "none",
        "states": ("inline" if _is_csv(path) else os.path.basename(path) + ".states")
        if states is not None else "none",
    }
    with open(path + ".meta", "w") as f:
        for k, v in meta.items():
            f.write(f"{k}: {v}\n")
    return ds


def write_dataset(path, params: HmmParams, T, seed, include_states=False, generator="custom") -> DatasetFile:
    if T < 2:
        raise DatasetError("T must be at least 2")
    states, y = sample_hmm(params, T, seed)
    return save_dataset(path, y, states if include_states else None, generator, seed, params)


def _read_meta(path):
    meta = {}
    try:
        with open(path + ".meta") as f:
            for line in f:
                line = line.strip()
                if line:
                    key, _, value = line.partition(":")
                    meta[key.strip()] = value.strip()
    except FileNotFoundError:
        raise DatasetError(f"missing metadata file {path}.meta") from None
    if meta.get("format") != FORMAT:
        raise DatasetError(f"{path}.meta is not a {FORMAT} file")
    if int(meta.get("version", -1)) != VERSION:
        raise DatasetError(f"unsupported dataset version {meta.get('version')}")
    return meta


def read_dataset(path) -> DatasetFile:
    path = str(path)
    meta = _read_meta(path)
    T, p = int(meta["T"]), int(meta["p"])
    states = None
    if _is_csv(path):
        with open(path) as f:
            header = f.readline().strip().split(",")
            rows = [line.strip().split(",") for line in f if line.strip()]
        if len(rows) != T:
            raise DatasetError(f"declared T={T} but found {len(rows)} rows")
        has_states = header[-1] == "state"
        if len(header) != 1 + p + has_states:
            raise DatasetError(f"declared p={p} but header has {len(header)} columns")
        y = np.array([[float(v) for v in r[1:1 + p]] for r in rows], dtype=float).reshape(T, p)
        if has_states:
            states = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    else:
        raw = np.fromfile(path, dtype="<f8")
        if raw.size < T * p:
            raise DatasetError(f"truncated payload: expected {T * p} values, found {raw.size}")
        if raw.size > T * p:
            raise DatasetError(f"payload has {raw.size} values, declared {T * p}")
        y = raw.reshape(T, p).astype(float)
        if meta.get("states", "none") != "none":
            st = np.fromfile(os.path.join(os.path.dirname(path), meta["states"]), dtype="<i4")
            if st.size != T:
                raise DatasetError(f"state file has {st.size} labels, declared {T}")
            states = st.astype(np.int64)
    if payload_checksum(y) != meta["sha256"]:
        raise DatasetError("checksum mismatch: observations differ from the recorded sha256")
    seed = None if meta.get("seed", "none") == "none" else int(meta["seed"])
    pc = meta.get("params_sha256", "none")
    return DatasetFile(T, p, meta.get("generator", "custom"), seed, meta["sha256"],
                       None if pc == "none" else pc, y, states)
