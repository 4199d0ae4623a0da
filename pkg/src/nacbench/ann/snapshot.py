"""JSON snapshots of networks (weights row-major, plus recurrent state)."""

import json
from pathlib import Path

from .drnn import DrnnModel
from .elman import ElmanModel
from .layers import DenseLayer, HebbianLayer, SomLayer

FORMAT_VERSION = 1

_KINDS = {
    "elman": ElmanModel,
    "drnn": DrnnModel,
    "dense": DenseLayer,
    "som": SomLayer,
    "hebbian": HebbianLayer,
}


def to_snapshot(model):
    doc = model.to_dict()
    doc["format_version"] = FORMAT_VERSION
    return doc


def from_snapshot(doc):
    kind = doc.get("kind")
    if kind not in _KINDS:
        raise ValueError(f"unknown snapshot kind {kind!r}")
    return _KINDS[kind].from_dict(doc)


def save_model(model, path, meta=None):
    doc = to_snapshot(model)
    if meta:
        doc["meta"] = meta
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_model(path):
    return from_snapshot(json.loads(Path(path).read_text()))
