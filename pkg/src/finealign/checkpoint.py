"""JSON checkpoints with base64 float64 parameter blobs."""

from __future__ import annotations

import base64
import hashlib
import json

import numpy as np

FORMAT_VERSION = "finealign-ckpt/1"


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).astype(np.float64)


def params_hash(state: dict) -> str:
    """SHA-256 over parameter names, shapes and raw bytes, in sorted name order."""
    h = hashlib.sha256()
    for name in sorted(state):
        a = np.ascontiguousarray(state[name], dtype="<f8")
        h.update(name.encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def save(path, kind: str, payload: dict, groups: dict):
    """Write ``payload`` plus parameter ``groups`` ({group: {name: array}})."""
    doc = {"version": FORMAT_VERSION, "kind": kind}
    doc.update(payload)
    doc["params"] = {g: {n: encode_array(a) for n, a in sorted(state.items())} for g, state in groups.items()}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load(path, kind: str | None = None) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    if kind is not None and doc.get("kind") != kind:
        raise ValueError(f"{path}: expected a {kind!r} checkpoint, found {doc.get('kind')!r}")
    doc["params"] = {g: {n: decode_array(o) for n, o in state.items()} for g, state in doc["params"].items()}
    return doc
