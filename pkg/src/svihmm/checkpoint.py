"""Text checkpoints of the variational state.

A checkpoint is a JSON document::

    {"format": "svihmm-checkpoint", "version": 1, "K": K, "p": p,
     "prior": {"uA": [...], "u1": [...], "u2": x, "u3": [[...]], "u4": x},
     "wA": [[...]], "w1": [[...]], "w2": [...], "w3": [[[...]]], "w4": [...]}

Floats are written with Python's shortest round-trip repr, so reading a
checkpoint back reproduces every natural parameter bit for bit.
"""
import json

import numpy as np

from .model import GlobalVariational, NiwNat, Prior

FORMAT = "svihmm-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_dict(w: GlobalVariational):
    ph = w.prior.phi
    return {
        "format": FORMAT,
        "version": VERSION,
        "K": w.K,
        "p": w.p,
        "prior": {"uA": w.prior.uA.tolist(), "u1": ph.u1.tolist(), "u2": ph.u2,
                  "u3": ph.u3.tolist(), "u4": ph.u4},
        "wA": w.wA.tolist(),
        "w1": w.w1.tolist(),
        "w2": w.w2.tolist(),
        "w3": w.w3.tolist(),
        "w4": w.w4.tolist(),
    }


def from_dict(d) -> GlobalVariational:
    if d.get("format") != FORMAT:
        raise CheckpointError("not an svihmm checkpoint")
    if d.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {d.get('version')}")
    pr = d["prior"]
    prior = Prior(np.array(pr["uA"]), NiwNat(pr["u1"], pr["u2"], pr["u3"], pr["u4"]))
    w = GlobalVariational(np.array(d["wA"], float), np.array(d["w1"], float), np.array(d["w2"], float),
                          np.array(d["w3"], float), np.array(d["w4"], float), prior)
    if w.K != d["K"] or w.p != d["p"]:
        raise CheckpointError("declared K/p do not match the stored arrays")
    return w.validate()


def save_checkpoint(path, w: GlobalVariational):
    with open(path, "w") as f:
        json.dump(to_dict(w), f, indent=1)
        f.write("\n")


def load_checkpoint(path) -> GlobalVariational:
    with open(path) as f:
        return from_dict(json.load(f))
