"""Sentence segments, triplet construction, and their JSONL files."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import labels as LB
from .jsonl import read_jsonl, write_jsonl
from .labeler import normalize_text, segment_report, stub_labeler
from .rng import derive

DEFAULT_CAP = 200
# No Finding has no abnormal pool to contrast; mining covers the 13 findings.
MINED_CLASSES = tuple(k for k in range(LB.N_CLASSES) if k != LB.NO_FINDING)


@dataclass(frozen=True)
class ReportSegment:
    id: str
    text: str
    labels: tuple

    def __post_init__(self):
        text = normalize_text(self.text)
        if not text:
            raise ValueError(f"segment {self.id!r} is empty after tokenization")
        object.__setattr__(self, "text", text)
        object.__setattr__(self, "labels", LB.validate(self.labels))

    def to_dict(self) -> dict:
        return {"id": self.id, "text": self.text, "labels": list(self.labels)}

    @classmethod
    def from_dict(cls, obj) -> "ReportSegment":
        return cls(str(obj["id"]), obj["text"], tuple(obj["labels"]))


@dataclass(frozen=True, order=True)
class Triplet:
    class_index: int
    anchor_id: str
    positive_id: str
    negative_id: str

    def to_dict(self) -> dict:
        return {"class": self.class_index, "anchor": self.anchor_id,
                "positive": self.positive_id, "negative": self.negative_id}

    @classmethod
    def from_dict(cls, obj) -> "Triplet":
        return cls(int(obj["class"]), str(obj["anchor"]), str(obj["positive"]), str(obj["negative"]))


def segments_from_reports(reports, table=None, id_prefix: str = "r") -> list:
    """Segment and label each report.  ``reports`` is a sequence of strings."""
    out = []
    for i, report in enumerate(reports):
        for j, text in enumerate(segment_report(report)):
            out.append(ReportSegment(f"{id_prefix}{i}.s{j}", text, stub_labeler(text, table)))
    return out


def mine_triplets(segments, per_class_cap: int = DEFAULT_CAP, seed: int = 0,
                  classes=MINED_CLASSES) -> list:
    """Enumerate (anchor, positive, negative) triples per class.

    Anchor and positive are distinct segments labelled positive for the class;
    the negative is labelled negative or blank.  Uncertain segments take no
    role for that class.  A class with more than ``per_class_cap`` triples is
    subsampled without replacement by a generator derived from ``seed`` and
    the class index.  Output is sorted by (class, anchor, positive, negative).
    """
    if per_class_cap < 0:
        raise ValueError("per_class_cap must be >= 0")
    segs = sorted(segments, key=lambda s: s.id)
    ids = [s.id for s in segs]
    if len(set(ids)) != len(ids):
        raise ValueError("segment ids must be unique")
    out = []
    for k in classes:
        pos = np.array([i for i, s in enumerate(segs) if s.labels[k] == LB.POSITIVE], dtype=np.int64)
        neg = np.array([i for i, s in enumerate(segs) if s.labels[k] in (LB.NEGATIVE, LB.BLANK)],
                       dtype=np.int64)
        combos = _kernels.pair_triplets(pos, neg)
        if len(combos) > per_class_cap:
            keep = derive(seed, "mine", k).choice(len(combos), size=per_class_cap, replace=False)
            combos = combos[np.sort(keep)]
        out.extend((k, ids[a], ids[p], ids[n]) for a, p, n in combos)
    out.sort()
    return [Triplet(*t) for t in out]


def write_segments(path, segments):
    write_jsonl(path, [s.to_dict() for s in segments])


def read_segments(path) -> list:
    return [ReportSegment.from_dict(o) for o in read_jsonl(path)]


def write_triplets(path, triplets):
    write_jsonl(path, [t.to_dict() for t in triplets])


def read_triplets(path) -> list:
    return [Triplet.from_dict(o) for o in read_jsonl(path)]
