"""Observation classes and the four-state label vocabulary."""

from __future__ import annotations

import numpy as np

CLASS_NAMES = (
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
    "No Finding",
)
N_CLASSES = len(CLASS_NAMES)
NO_FINDING = CLASS_NAMES.index("No Finding")

POSITIVE = "positive"
NEGATIVE = "negative"
UNCERTAIN = "uncertain"
BLANK = "blank"
STATES = (POSITIVE, NEGATIVE, UNCERTAIN, BLANK)


def class_index(name: str) -> int:
    try:
        return CLASS_NAMES.index(name)
    except ValueError:
        raise KeyError(f"unknown observation class {name!r}") from None


def validate(labels) -> tuple:
    """Return ``labels`` as a 14-tuple of lowercase states, or raise ValueError."""
    labels = tuple(str(x).lower() for x in labels)
    if len(labels) != N_CLASSES:
        raise ValueError(f"label vector needs {N_CLASSES} entries, got {len(labels)}")
    for x in labels:
        if x not in STATES:
            raise ValueError(f"unknown label state {x!r}")
    return labels


def blank_vector() -> tuple:
    return (BLANK,) * N_CLASSES


def binarize(label_vectors) -> np.ndarray:
    """N x 14 float array: 1 where the state is positive, 0 otherwise."""
    return np.array([[1.0 if x == POSITIVE else 0.0 for x in validate(v)] for v in label_vectors])


def merge(label_vectors) -> tuple:
    """Combine per-sentence labels into one report-level vector.

    Per class the strongest mention wins: positive > uncertain > negative > blank.
    """
    rank = {POSITIVE: 3, UNCERTAIN: 2, NEGATIVE: 1, BLANK: 0}
    out = list(blank_vector())
    for v in label_vectors:
        for k, x in enumerate(v):
            if rank[x] > rank[out[k]]:
                out[k] = x
    return tuple(out)
